//! Decoding of raw response-frame streams into scan cycles.

use crate::sensor::{decode_response, Reading, RESPONSE_LEN, RESPONSE_SYNC};

/// Readings of one scan pass, row-major; `None` where no valid frame came.
#[derive(Debug, Clone, PartialEq)]
pub struct Cycle {
    pub frequencies: Vec<Option<u32>>,
    pub valid: usize,
    pub malformed: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DecodedStream {
    pub cycles: Vec<Cycle>,
    /// Malformed frames over the whole stream.
    pub malformed: usize,
    /// Cycles discarded because most of their frames were malformed.
    pub dropped: usize,
}

struct Assembler {
    rows: usize,
    cols: usize,
    current: Option<Cycle>,
    last_index: Option<usize>,
    pending_malformed: usize,
    out: DecodedStream,
}

impl Assembler {
    fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            current: None,
            last_index: None,
            pending_malformed: 0,
            out: DecodedStream::default(),
        }
    }

    fn malformed(&mut self) {
        self.out.malformed += 1;
        match self.current.as_mut() {
            Some(c) => c.malformed += 1,
            None => self.pending_malformed += 1,
        }
    }

    fn reading(&mut self, r: Reading) {
        if r.row >= self.rows || r.col >= self.cols {
            self.malformed();
            return;
        }
        let index = r.row * self.cols + r.col;
        // Addresses run row-major within a pass, so any step back starts a new one.
        if self.last_index.is_some_and(|last| index <= last) {
            self.close();
        }
        let n = self.rows * self.cols;
        let pending = std::mem::take(&mut self.pending_malformed);
        let cycle = self.current.get_or_insert_with(|| Cycle {
            frequencies: vec![None; n],
            valid: 0,
            malformed: pending,
        });
        cycle.frequencies[index] = Some(r.frequency);
        cycle.valid += 1;
        self.last_index = Some(index);
    }

    fn close(&mut self) {
        self.last_index = None;
        if let Some(c) = self.current.take() {
            if 2 * c.malformed > c.valid + c.malformed {
                self.out.dropped += 1;
            } else {
                self.out.cycles.push(c);
            }
        }
    }

    fn finish(mut self) -> DecodedStream {
        self.close();
        self.out
    }
}

/// Splits a byte stream into frames, resynchronizing on the sync byte after
/// any damage, and groups the valid readings into scan cycles.
pub fn decode_stream(bytes: &[u8], rows: usize, cols: usize) -> DecodedStream {
    let mut asm = Assembler::new(rows, cols);
    let mut pos = 0;
    let mut in_junk = false;
    while pos < bytes.len() {
        if bytes[pos] != RESPONSE_SYNC {
            // A run of stray bytes counts once.
            if !in_junk {
                asm.malformed();
                in_junk = true;
            }
            pos += 1;
            continue;
        }
        in_junk = false;
        if pos + RESPONSE_LEN > bytes.len() {
            asm.malformed();
            break;
        }
        match decode_response(&bytes[pos..pos + RESPONSE_LEN]) {
            Ok(r) => {
                asm.reading(r);
                pos += RESPONSE_LEN;
            }
            Err(_) => {
                asm.malformed();
                // Skip the bad sync byte and everything up to the next one.
                pos += 1;
                while pos < bytes.len() && bytes[pos] != RESPONSE_SYNC {
                    pos += 1;
                }
            }
        }
    }
    asm.finish()
}

//! Frequency-output model of the thermal test die and the addressable
//! readout link.
//!
//! Wire format (bit-exact):
//!
//! ```text
//! request  = [0x02, addr, 0x02 ^ addr]
//! response = [0xAA, addr, f0, f1, f2, f3, crc8]
//! addr     = (row << 4) | col
//! f0..f3   = frequency in Hz, u32 little-endian
//! crc8     = CRC-8 over addr..f3, poly 0x07, init 0x00, no reflection, no xorout
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const REQUEST_SYNC: u8 = 0x02;
pub const RESPONSE_SYNC: u8 = 0xAA;
pub const REQUEST_LEN: usize = 3;
pub const RESPONSE_LEN: usize = 7;
/// Largest addressable row or column.
pub const MAX_INDEX: usize = 15;

/// Frequency-vs-temperature behaviour of one die, with its own noise stream.
#[derive(Debug, Clone)]
pub struct ChipModel {
    /// Hz at `reference_temperature`.
    pub base_frequency: f64,
    /// Hz/°C
    pub slope: f64,
    /// °C
    pub reference_temperature: f64,
    /// Standard deviation of the per-reading noise, Hz.
    pub noise_sigma: f64,
    pub dead: bool,
    seed: u64,
    rng: ChaCha8Rng,
}

impl PartialEq for ChipModel {
    fn eq(&self, other: &Self) -> bool {
        self.base_frequency == other.base_frequency
            && self.slope == other.slope
            && self.reference_temperature == other.reference_temperature
            && self.noise_sigma == other.noise_sigma
            && self.dead == other.dead
            && self.seed == other.seed
    }
}

impl Default for ChipModel {
    fn default() -> Self {
        Self::new(400_000.0, -2_500.0, 21.0, 50.0, 0).expect("default chip is valid")
    }
}

impl ChipModel {
    pub fn new(
        base_frequency: f64,
        slope: f64,
        reference_temperature: f64,
        noise_sigma: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(base_frequency.is_finite() && base_frequency > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "base frequency must be positive, got {base_frequency}"
            )));
        }
        if !(slope.is_finite() && slope != 0.0) {
            return Err(Error::InvalidParameter(format!(
                "slope must be non-zero, got {slope}"
            )));
        }
        if !reference_temperature.is_finite() {
            return Err(Error::InvalidParameter(
                "reference temperature is not finite".into(),
            ));
        }
        if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise sigma must be non-negative, got {noise_sigma}"
            )));
        }
        Ok(Self {
            base_frequency,
            slope,
            reference_temperature,
            noise_sigma,
            dead: false,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Same parameters, fresh noise stream from `seed`.
    pub fn reseeded(&self, seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ..self.clone()
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Noiseless output at a die temperature, Hz.
    pub fn ideal_frequency(&self, die_temperature: f64) -> f64 {
        self.base_frequency + self.slope * (die_temperature - self.reference_temperature)
    }

    /// Die temperature that produces `frequency` without noise.
    pub fn temperature_of(&self, frequency: f64) -> f64 {
        self.reference_temperature + (frequency - self.base_frequency) / self.slope
    }

    /// Output frequency at `die_temperature`, optionally with one noise draw.
    pub fn frequency_of(&mut self, die_temperature: f64, draw_noise: bool) -> Result<f64> {
        let mut f = self.ideal_frequency(die_temperature);
        if draw_noise && self.noise_sigma > 0.0 {
            let normal = Normal::new(0.0, self.noise_sigma)
                .map_err(|e| Error::InvalidParameter(e.to_string()))?;
            f += normal.sample(&mut self.rng);
        }
        if !(f.is_finite() && f > 0.0) {
            return Err(Error::Range(format!(
                "die at {die_temperature} °C would output {f} Hz"
            )));
        }
        Ok(f)
    }
}

/// CRC-8 with polynomial 0x07, init 0x00, no reflection, no final XOR.
pub fn crc8(bytes: &[u8]) -> u8 {
    static TABLE: std::sync::OnceLock<[u8; 256]> = std::sync::OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = [0u8; 256];
        for (i, slot) in t.iter_mut().enumerate() {
            let mut c = i as u8;
            for _ in 0..8 {
                c = if c & 0x80 != 0 {
                    (c << 1) ^ 0x07
                } else {
                    c << 1
                };
            }
            *slot = c;
        }
        t
    });
    bytes.iter().fold(0u8, |crc, &b| table[(crc ^ b) as usize])
}

pub fn address(row: usize, col: usize) -> Result<u8> {
    if row > MAX_INDEX || col > MAX_INDEX {
        return Err(Error::InvalidParameter(format!(
            "address ({row}, {col}) outside the 16x16 matrix"
        )));
    }
    Ok(((row as u8) << 4) | col as u8)
}

pub fn split_address(addr: u8) -> (usize, usize) {
    ((addr >> 4) as usize, (addr & 0x0F) as usize)
}

pub fn encode_request(row: usize, col: usize) -> Result<[u8; REQUEST_LEN]> {
    let addr = address(row, col)?;
    Ok([REQUEST_SYNC, addr, REQUEST_SYNC ^ addr])
}

pub fn decode_request(bytes: &[u8]) -> Result<(usize, usize)> {
    if bytes.len() != REQUEST_LEN {
        return Err(Error::Framing(format!(
            "request must be {REQUEST_LEN} bytes, got {}",
            bytes.len()
        )));
    }
    if bytes[0] != REQUEST_SYNC {
        return Err(Error::Framing(format!(
            "bad request sync byte 0x{:02X}",
            bytes[0]
        )));
    }
    if bytes[2] != REQUEST_SYNC ^ bytes[1] {
        return Err(Error::Integrity(format!(
            "request checksum 0x{:02X} does not match address 0x{:02X}",
            bytes[2], bytes[1]
        )));
    }
    Ok(split_address(bytes[1]))
}

/// A decoded readout response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reading {
    pub row: usize,
    pub col: usize,
    /// Hz
    pub frequency: u32,
}

pub fn encode_response(row: usize, col: usize, frequency: u32) -> Result<[u8; RESPONSE_LEN]> {
    let addr = address(row, col)?;
    let f = frequency.to_le_bytes();
    let mut frame = [RESPONSE_SYNC, addr, f[0], f[1], f[2], f[3], 0];
    frame[6] = crc8(&frame[1..6]);
    Ok(frame)
}

pub fn decode_response(bytes: &[u8]) -> Result<Reading> {
    if bytes.len() != RESPONSE_LEN {
        return Err(Error::Framing(format!(
            "response must be {RESPONSE_LEN} bytes, got {}",
            bytes.len()
        )));
    }
    if bytes[0] != RESPONSE_SYNC {
        return Err(Error::Framing(format!(
            "bad response sync byte 0x{:02X}",
            bytes[0]
        )));
    }
    let crc = crc8(&bytes[1..6]);
    if crc != bytes[6] {
        return Err(Error::Integrity(format!(
            "CRC 0x{:02X} does not match computed 0x{crc:02X}",
            bytes[6]
        )));
    }
    let (row, col) = split_address(bytes[1]);
    let frequency = u32::from_le_bytes([bytes[2], bytes[3], bytes[4], bytes[5]]);
    Ok(Reading {
        row,
        col,
        frequency,
    })
}

/// One response frame with the time it was polled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedFrame {
    /// s
    pub timestamp: f64,
    pub bytes: [u8; RESPONSE_LEN],
}

pub const DEFAULT_POLL_INTERVAL: f64 = 0.1;

/// Polls every pixel in row-major order and returns their response frames.
///
/// `die_temperatures` and `chips` are row-major over a `rows x cols` grid.
/// Dead chips do not answer, so their slot produces no frame; the poll
/// interval still elapses.
pub fn scan_cycle(
    rows: usize,
    cols: usize,
    die_temperatures: &[f64],
    chips: &mut [ChipModel],
    start_time: f64,
    poll_interval: f64,
    draw_noise: bool,
) -> Result<Vec<TimedFrame>> {
    let n = rows * cols;
    if die_temperatures.len() != n || chips.len() != n {
        return Err(Error::Precondition(format!(
            "scan needs one temperature and one chip per pixel ({n}), got {} and {}",
            die_temperatures.len(),
            chips.len()
        )));
    }
    let mut frames = Vec::with_capacity(n);
    for r in 0..rows {
        for c in 0..cols {
            let i = r * cols + c;
            let timestamp = start_time + i as f64 * poll_interval;
            let chip = &mut chips[i];
            if chip.dead {
                continue;
            }
            let f = chip.frequency_of(die_temperatures[i], draw_noise)?;
            if f >= u32::MAX as f64 {
                return Err(Error::Range(format!(
                    "{f} Hz does not fit the 32-bit field"
                )));
            }
            frames.push(TimedFrame {
                timestamp,
                bytes: encode_response(r, c, f.round() as u32)?,
            });
        }
    }
    Ok(frames)
}

/// Chips for a whole card, each with its own seed derived from `seed`.
pub fn chips_for_card(template: &ChipModel, pixels: usize, seed: u64) -> Vec<ChipModel> {
    (0..pixels)
        .map(|i| template.reseeded(seed.wrapping_mul(1_000_003).wrapping_add(i as u64)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Bit-at-a-time reference, independent of the table.
    fn crc8_bitwise(bytes: &[u8]) -> u8 {
        let mut crc = 0u8;
        for &b in bytes {
            crc ^= b;
            for _ in 0..8 {
                crc = if crc & 0x80 != 0 {
                    (crc << 1) ^ 0x07
                } else {
                    crc << 1
                };
            }
        }
        crc
    }

    #[test]
    fn crc_check_value() {
        assert_eq!(crc8_bitwise(b"123456789"), 0xF4);
        assert_eq!(crc8(b"123456789"), 0xF4);
        for i in 0..=255u8 {
            assert_eq!(
                crc8(&[i, i.wrapping_mul(7)]),
                crc8_bitwise(&[i, i.wrapping_mul(7)])
            );
        }
    }

    #[test]
    fn request_layout() {
        assert_eq!(encode_request(0, 2).unwrap(), [0x02, 0x02, 0x00]);
        assert_eq!(encode_request(0, 0).unwrap(), [0x02, 0x00, 0x02]);
        assert_eq!(decode_request(&[0x02, 0x31, 0x33]).unwrap(), (3, 1));
    }

    #[test]
    fn request_errors_are_classified() {
        assert!(matches!(
            decode_request(&[0x03, 0x00, 0x02]),
            Err(Error::Framing(_))
        ));
        assert!(matches!(
            decode_request(&[0x02, 0x00, 0x03]),
            Err(Error::Integrity(_))
        ));
        assert!(matches!(
            decode_request(&[0x02, 0x00]),
            Err(Error::Framing(_))
        ));
        assert!(encode_request(16, 0).is_err());
    }

    #[test]
    fn response_round_trip() {
        let frame = encode_response(1, 1, 347_500).unwrap();
        assert_eq!(frame[0], 0xAA);
        assert_eq!(frame[1], 0x11);
        assert_eq!(&frame[2..6], &347_500u32.to_le_bytes());
        assert_eq!(frame[6], crc8_bitwise(&frame[1..6]));
        assert_eq!(
            decode_response(&frame).unwrap(),
            Reading {
                row: 1,
                col: 1,
                frequency: 347_500
            }
        );
    }

    #[test]
    fn short_or_corrupt_response() {
        let mut frame = encode_response(2, 3, 400_000).unwrap();
        assert!(matches!(
            decode_response(&frame[..6]),
            Err(Error::Framing(_))
        ));
        frame[4] ^= 0x10;
        assert!(matches!(decode_response(&frame), Err(Error::Integrity(_))));
    }

    #[test]
    fn reference_temperature_gives_base_frequency() {
        let mut chip = ChipModel::default();
        assert_eq!(chip.frequency_of(21.0, false).unwrap(), 400_000.0);
    }

    #[test]
    fn forty_degrees_is_a_hundred_kilohertz() {
        let mut chip = ChipModel::default();
        let f0 = chip.frequency_of(21.0, false).unwrap();
        let f1 = chip.frequency_of(61.0, false).unwrap();
        assert!((f0 - f1 - 100_000.0).abs() < 1e-9);
    }

    #[test]
    fn absurd_parameters_are_a_range_error() {
        let mut chip = ChipModel::default();
        assert!(matches!(
            chip.frequency_of(500.0, false),
            Err(Error::Range(_))
        ));
        assert!(ChipModel::new(0.0, -1.0, 21.0, 0.0, 0).is_err());
        assert!(ChipModel::new(1.0, 0.0, 21.0, 0.0, 0).is_err());
        assert!(ChipModel::new(1.0, 1.0, 21.0, -1.0, 0).is_err());
    }

    #[test]
    fn seeded_noise_averages_out() {
        let mut chip = ChipModel::new(400_000.0, -2_500.0, 21.0, 50.0, 42).unwrap();
        let n = 10_000;
        let mean = (0..n)
            .map(|_| chip.frequency_of(30.0, true).unwrap())
            .sum::<f64>()
            / n as f64;
        let ideal = chip.ideal_frequency(30.0);
        assert!((mean - ideal).abs() < 2.0, "{mean} vs {ideal}");
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = ChipModel::default().reseeded(9);
        let mut b = ChipModel::default().reseeded(9);
        for _ in 0..10 {
            assert_eq!(
                a.frequency_of(25.0, true).unwrap(),
                b.frequency_of(25.0, true).unwrap()
            );
        }
    }

    #[test]
    fn scan_is_row_major() {
        let temps = vec![21.0; 16];
        let mut chips = chips_for_card(&ChipModel::default(), 16, 1);
        let frames =
            scan_cycle(4, 4, &temps, &mut chips, 0.0, DEFAULT_POLL_INTERVAL, false).unwrap();
        assert_eq!(frames.len(), 16);
        for (i, f) in frames.iter().enumerate() {
            let r = decode_response(&f.bytes).unwrap();
            assert_eq!((r.row, r.col), (i / 4, i % 4));
            assert_eq!(r.frequency, 400_000);
            assert!((f.timestamp - 0.1 * i as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn second_board_scan_has_eight_frames() {
        let temps = vec![30.0; 8];
        let mut chips = chips_for_card(&ChipModel::default(), 8, 1);
        let frames = scan_cycle(2, 4, &temps, &mut chips, 0.0, 0.1, true).unwrap();
        assert_eq!(frames.len(), 8);
    }

    #[test]
    fn dead_chip_is_silent() {
        let temps = vec![21.0; 4];
        let mut chips = chips_for_card(&ChipModel::default(), 4, 1);
        chips[2].dead = true;
        let frames = scan_cycle(2, 2, &temps, &mut chips, 0.0, 0.1, false).unwrap();
        assert_eq!(frames.len(), 3);
        assert!(frames.iter().all(|f| decode_response(&f.bytes).unwrap()
            != Reading {
                row: 1,
                col: 0,
                frequency: 400_000
            }));
    }
}

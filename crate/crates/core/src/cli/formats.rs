//! CSV tables and PGM/PPM heatmaps.

use std::fmt::Write as _;
use std::path::Path;

use super::CliError;
use crate::calibration::CalSample;
use crate::thermal::pixel_name;

pub const DEFAULT_CELL_SIZE: usize = 32;

/// Rectangular grid of values, row-major. NaN marks a missing pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), rows * cols, "grid size mismatch");
        Self { rows, cols, values }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    /// Finite minimum and maximum, if any value is finite.
    pub fn range(&self) -> Option<(f64, f64)> {
        let mut it = self.values.iter().copied().filter(|v| v.is_finite());
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }
}

pub(crate) fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.6}")
    }
}

/// Header `time_s,A1,A2,…` in row-major pixel order.
pub fn series_header(rows: usize, cols: usize) -> String {
    let mut h = String::from("time_s");
    for r in 0..rows {
        for c in 0..cols {
            h.push(',');
            h.push_str(&pixel_name(r, c));
        }
    }
    h
}

pub fn series_csv(rows: usize, cols: usize, times: &[f64], values: &[Vec<f64>]) -> String {
    let mut out = series_header(rows, cols);
    out.push('\n');
    for (t, row) in times.iter().zip(values) {
        write!(out, "{t:.3}").unwrap();
        for v in row {
            out.push(',');
            out.push_str(&fmt_value(*v));
        }
        out.push('\n');
    }
    out
}

/// One CSV line per card row, no header.
pub fn map_csv(grid: &Grid) -> String {
    let mut out = String::new();
    for r in 0..grid.rows {
        let line: Vec<String> = (0..grid.cols).map(|c| fmt_value(grid.get(r, c))).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_map_csv(text: &str, origin: &str) -> Result<Grid, CliError> {
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        match cols {
            None => cols = Some(fields.len()),
            Some(n) if n != fields.len() => {
                return Err(CliError::Format {
                    path: origin.to_string(),
                    message: format!(
                        "line {}: ragged row with {} fields, expected {n}",
                        i + 1,
                        fields.len()
                    ),
                })
            }
            _ => {}
        }
        for f in fields {
            let v: f64 = f.trim().parse().map_err(|_| CliError::Format {
                path: origin.to_string(),
                message: format!("line {}: not a number: {f:?}", i + 1),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| CliError::Format {
        path: origin.to_string(),
        message: "empty map".into(),
    })?;
    Ok(Grid::new(rows, cols, values))
}

pub const SAMPLES_HEADER: &str = "row,col,plate_temperature_c,distance_m,frequency_hz,timestamp_s";

pub fn samples_csv(samples: &[CalSample]) -> String {
    let mut out = format!("{SAMPLES_HEADER}\n");
    for s in samples {
        writeln!(
            out,
            "{},{},{:.6},{:.6},{:.0},{:.3}",
            s.row, s.col, s.plate_temperature, s.distance, s.frequency, s.timestamp
        )
        .unwrap();
    }
    out
}

pub fn parse_samples_csv(text: &str, origin: &str) -> Result<Vec<CalSample>, CliError> {
    let err = |line: usize, message: String| CliError::Format {
        path: origin.to_string(),
        message: format!("line {line}: {message}"),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == SAMPLES_HEADER => {}
        _ => return Err(err(1, format!("expected header {SAMPLES_HEADER:?}"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(err(i + 1, format!("expected 6 fields, got {}", f.len())));
        }
        let int = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| err(i + 1, format!("not an index: {s:?}")))
        };
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| err(i + 1, format!("not a number: {s:?}")))
        };
        out.push(CalSample {
            row: int(f[0])?,
            col: int(f[1])?,
            plate_temperature: num(f[2])?,
            distance: num(f[3])?,
            frequency: num(f[4])?,
            timestamp: num(f[5])?,
        });
    }
    Ok(out)
}

/// Level in [0, 1] of each cell; NaN stays NaN. A flat map maps to 0.
fn levels(grid: &Grid) -> Vec<f64> {
    let (lo, hi) = grid.range().unwrap_or((0.0, 0.0));
    let span = hi - lo;
    grid.values
        .iter()
        .map(|&v| {
            if !v.is_finite() {
                f64::NAN
            } else if span > 0.0 {
                (v - lo) / span
            } else {
                0.0
            }
        })
        .collect()
}

fn hot(t: f64) -> [u8; 3] {
    if t.is_nan() {
        return [0, 0, 0];
    }
    let ch = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    [ch(3.0 * t), ch(3.0 * t - 1.0), ch(3.0 * t - 2.0)]
}

fn gray(t: f64) -> u8 {
    if t.is_nan() {
        0
    } else {
        (t.clamp(0.0, 1.0) * 255.0).round() as u8
    }
}

/// Binary graymap, one `cell x cell` block per pixel.
pub fn render_pgm(grid: &Grid, cell: usize) -> Vec<u8> {
    let lv = levels(grid);
    let (w, h) = (grid.cols * cell, grid.rows * cell);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            out.push(gray(lv[(y / cell) * grid.cols + x / cell]));
        }
    }
    out
}

/// Plain-text pixmap with a black-red-yellow-white scale.
pub fn render_ppm(grid: &Grid, cell: usize) -> Vec<u8> {
    let lv = levels(grid);
    let (w, h) = (grid.cols * cell, grid.rows * cell);
    let mut out = format!("P3\n{w} {h}\n255\n");
    for y in 0..h {
        let row: Vec<String> = (0..w)
            .map(|x| {
                let [r, g, b] = hot(lv[(y / cell) * grid.cols + x / cell]);
                format!("{r} {g} {b}")
            })
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out.into_bytes()
}

/// Scale annotation written next to the images.
pub fn sidecar(grid: &Grid, cell: usize) -> String {
    let (lo, hi) = grid.range().unwrap_or((f64::NAN, f64::NAN));
    format!(
        "min={}\nmax={}\nrows={}\ncols={}\ncell_px={cell}\nscale=linear\n",
        fmt_value(lo),
        fmt_value(hi),
        grid.rows,
        grid.cols
    )
}

pub(crate) fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Writes `<stem>.csv`, `<stem>.pgm`, `<stem>.ppm` and `<stem>.txt` into `dir`.
pub fn write_map_bundle(dir: &Path, stem: &str, grid: &Grid, cell: usize) -> Result<(), CliError> {
    write_file(&dir.join(format!("{stem}.csv")), map_csv(grid))?;
    write_map_images(dir, stem, grid, cell)
}

pub fn write_map_images(dir: &Path, stem: &str, grid: &Grid, cell: usize) -> Result<(), CliError> {
    write_file(&dir.join(format!("{stem}.pgm")), render_pgm(grid, cell))?;
    write_file(&dir.join(format!("{stem}.ppm")), render_ppm(grid, cell))?;
    write_file(&dir.join(format!("{stem}.txt")), sidecar(grid, cell))
}

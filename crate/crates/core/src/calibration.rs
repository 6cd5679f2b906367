//! Black-body calibration of the pixels and the distance-compensation model.
//!
//! Each pixel gets an affine map from output frequency to the temperature
//! of a black plate that, at the reference distance, would produce that
//! frequency. Readings taken at other distances are referred back to the
//! reference distance with the view-factor ratio between a pixel and the
//! calibration plate.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radiation::{self, Patch};

pub const DEFAULT_REFERENCE_DISTANCE: f64 = 0.010;
pub const DEFAULT_PLATE_SIZE: f64 = 0.100;
pub const DEFAULT_PIXEL_SIZE: f64 = 0.010;
/// Largest distance accepted by [`compensate_distance`], m.
pub const MAX_COMPENSATION_DISTANCE: f64 = 0.5;
/// Readings outside this band are flagged as suspect, °C.
pub const PLAUSIBLE_RANGE: (f64, f64) = (0.0, 150.0);

const DISTANCE_EPS: f64 = 1e-9;

/// One recorded calibration reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalSample {
    pub row: usize,
    pub col: usize,
    /// °C
    pub plate_temperature: f64,
    /// m
    pub distance: f64,
    /// Hz
    pub frequency: f64,
    /// s
    pub timestamp: f64,
}

impl CalSample {
    fn validate(&self) -> Result<()> {
        if !(self.distance.is_finite() && self.distance > 0.0) {
            return Err(Error::Precondition(format!(
                "sample distance must be positive, got {}",
                self.distance
            )));
        }
        if !(self.frequency.is_finite() && self.frequency > 0.0) {
            return Err(Error::Precondition(format!(
                "sample frequency must be positive, got {}",
                self.frequency
            )));
        }
        if !self.plate_temperature.is_finite() || !self.timestamp.is_finite() {
            return Err(Error::Precondition("non-finite sample field".into()));
        }
        Ok(())
    }
}

/// Keeps the last reading of every (pixel, set-point, distance) group.
///
/// The card is only put back in front of the plate once the plate has
/// reached its set-point, so the final reading of each hold is the settled one.
pub fn settled(samples: &[CalSample]) -> Vec<CalSample> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| {
        (a.row, a.col)
            .cmp(&(b.row, b.col))
            .then(a.plate_temperature.total_cmp(&b.plate_temperature))
            .then(a.distance.total_cmp(&b.distance))
            .then(a.timestamp.total_cmp(&b.timestamp))
    });
    let mut out: Vec<CalSample> = Vec::new();
    for s in sorted {
        match out.last_mut() {
            Some(last)
                if (last.row, last.col) == (s.row, s.col)
                    && last.plate_temperature == s.plate_temperature
                    && last.distance == s.distance =>
            {
                *last = s;
            }
            _ => out.push(s),
        }
    }
    out
}

/// Affine frequency → temperature map of one pixel: `T = a + b·f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelCalibration {
    pub row: usize,
    pub col: usize,
    /// °C
    #[serde(rename = "a_c")]
    pub a: f64,
    /// °C/Hz
    #[serde(rename = "b_c_per_hz")]
    pub b: f64,
    /// Fit residual RMS, °C.
    #[serde(rename = "rms_c")]
    pub rms: f64,
}

impl PixelCalibration {
    pub fn temperature(&self, frequency: f64) -> f64 {
        self.a + self.b * frequency
    }

    pub fn frequency(&self, temperature: f64) -> f64 {
        (temperature - self.a) / self.b
    }
}

/// Ordinary least-squares fit of one pixel from samples at the reference
/// distance. Only settled samples take part.
pub fn fit_pixel(samples: &[CalSample], reference_distance: f64) -> Result<PixelCalibration> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Fit("no samples".into()))?;
    for s in samples {
        s.validate()?;
        if (s.row, s.col) != (first.row, first.col) {
            return Err(Error::Precondition(format!(
                "samples mix pixels ({},{}) and ({},{})",
                first.row, first.col, s.row, s.col
            )));
        }
        if (s.distance - reference_distance).abs() > DISTANCE_EPS {
            return Err(Error::Precondition(format!(
                "sample at {} m is not at the reference distance {reference_distance} m",
                s.distance
            )));
        }
    }
    let used = settled(samples);
    let n = used.len() as f64;
    let f_mean = used.iter().map(|s| s.frequency).sum::<f64>() / n;
    let t_mean = used.iter().map(|s| s.plate_temperature).sum::<f64>() / n;
    let (mut sff, mut sft, mut stt) = (0.0, 0.0, 0.0);
    for s in &used {
        let df = s.frequency - f_mean;
        let dt = s.plate_temperature - t_mean;
        sff += df * df;
        sft += df * dt;
        stt += dt * dt;
    }
    if used.len() < 2 || stt == 0.0 {
        return Err(Error::Fit(format!(
            "pixel ({},{}) needs at least two distinct plate temperatures",
            first.row, first.col
        )));
    }
    if sff == 0.0 {
        return Err(Error::Fit(format!(
            "pixel ({},{}) frequency does not vary with plate temperature",
            first.row, first.col
        )));
    }
    let b = sft / sff;
    let a = t_mean - b * f_mean;
    let ss = used
        .iter()
        .map(|s| {
            let e = s.plate_temperature - (a + b * s.frequency);
            e * e
        })
        .sum::<f64>();
    Ok(PixelCalibration {
        row: first.row,
        col: first.col,
        a,
        b,
        rms: (ss / n).sqrt(),
    })
}

/// Fits every pixel that has samples at the reference distance.
pub fn fit_pixels(samples: &[CalSample], reference_distance: f64) -> Result<Vec<PixelCalibration>> {
    let mut groups: BTreeMap<(usize, usize), Vec<CalSample>> = BTreeMap::new();
    for s in samples {
        if (s.distance - reference_distance).abs() <= DISTANCE_EPS {
            groups.entry((s.row, s.col)).or_default().push(*s);
        }
    }
    if groups.is_empty() {
        return Err(Error::Fit("no samples at the reference distance".into()));
    }
    groups
        .values()
        .map(|g| fit_pixel(g, reference_distance))
        .collect()
}

/// A temperature read through the calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApparentTemperature {
    /// °C, referred to the reference distance.
    pub temperature: f64,
    /// Outside the plausible instrument range.
    pub suspect: bool,
}

/// Per-pixel calibration of a whole card plus its distance model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    #[serde(rename = "reference_distance_m")]
    pub reference_distance: f64,
    #[serde(rename = "plate_size_m")]
    pub plate_size: f64,
    pub pixels: Vec<PixelCalibration>,
    pub distance_gain: f64,
}

impl Calibration {
    pub fn new(pixels: Vec<PixelCalibration>) -> Self {
        Self {
            reference_distance: DEFAULT_REFERENCE_DISTANCE,
            plate_size: DEFAULT_PLATE_SIZE,
            pixels,
            distance_gain: 1.0,
        }
    }

    pub fn pixel(&self, row: usize, col: usize) -> Result<&PixelCalibration> {
        self.pixels
            .iter()
            .find(|p| p.row == row && p.col == col)
            .ok_or(Error::Uncalibrated { row, col })
    }

    /// Grid size covered by the calibrated pixels.
    pub fn grid(&self) -> (usize, usize) {
        let rows = self.pixels.iter().map(|p| p.row + 1).max().unwrap_or(0);
        let cols = self.pixels.iter().map(|p| p.col + 1).max().unwrap_or(0);
        (rows, cols)
    }

    pub fn distance_model(&self) -> DistanceModel {
        DistanceModel {
            reference_distance: self.reference_distance,
            plate_size: self.plate_size,
            pixel_size: DEFAULT_PIXEL_SIZE,
            gain: self.distance_gain,
        }
    }
}

/// Apparent plate temperature for a raw frequency of one pixel.
pub fn temperature_from_frequency(
    cal: &Calibration,
    row: usize,
    col: usize,
    frequency: f64,
) -> Result<ApparentTemperature> {
    let t = cal.pixel(row, col)?.temperature(frequency);
    let suspect = !(PLAUSIBLE_RANGE.0..=PLAUSIBLE_RANGE.1).contains(&t);
    Ok(ApparentTemperature {
        temperature: t,
        suspect,
    })
}

/// Distance attenuation of the sensed rise, from the view-factor ratio of a
/// pixel centered on a square calibration plate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceModel {
    pub reference_distance: f64,
    pub plate_size: f64,
    pub pixel_size: f64,
    /// Sensed rise per unit plate rise at the reference distance.
    pub gain: f64,
}

impl Default for DistanceModel {
    fn default() -> Self {
        Self {
            reference_distance: DEFAULT_REFERENCE_DISTANCE,
            plate_size: DEFAULT_PLATE_SIZE,
            pixel_size: DEFAULT_PIXEL_SIZE,
            gain: 1.0,
        }
    }
}

impl DistanceModel {
    fn factor(&self, distance: f64) -> Result<f64> {
        let pixel = Patch::square(0.0, 0.0, self.pixel_size, 0.0);
        let plate = Patch::square(0.0, 0.0, self.plate_size, distance);
        radiation::view_factor(&pixel, &plate)
    }

    /// `r(d) = F(d) / F(d_ref)`.
    pub fn ratio(&self, distance: f64) -> Result<f64> {
        if (distance - self.reference_distance).abs() <= DISTANCE_EPS {
            return Ok(1.0);
        }
        Ok(self.factor(distance)? / self.factor(self.reference_distance)?)
    }

    /// Expected sensed rise at `distance` for a plate rise `plate_rise`.
    pub fn predicted_rise(&self, plate_rise: f64, distance: f64) -> Result<f64> {
        Ok(self.gain * plate_rise * self.ratio(distance)?)
    }
}

/// Result of the distance-sweep fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceFit {
    pub model: DistanceModel,
    /// °C
    pub rms: f64,
    /// Sensed rise increased with distance by more than the tolerance.
    pub non_monotone: bool,
}

/// Fits the gain `g` in `ΔT_sensed(d) = g · ΔT_plate · r(d)`.
///
/// Sensed rises are apparent temperatures from `cal` minus `ambient`; the
/// plate rise is the sample's plate temperature minus `ambient`.
/// `tolerance` is the allowed increase of the mean sensed rise between
/// consecutive distances before the sweep is flagged non-monotone.
pub fn fit_distance(
    samples: &[CalSample],
    cal: &Calibration,
    ambient: f64,
    tolerance: f64,
) -> Result<DistanceFit> {
    for s in samples {
        s.validate()?;
    }
    let used = settled(samples);
    let mut model = cal.distance_model();
    model.gain = 1.0;

    let mut distances: Vec<f64> = used.iter().map(|s| s.distance).collect();
    distances.sort_by(f64::total_cmp);
    distances.dedup_by(|a, b| (*a - *b).abs() <= DISTANCE_EPS);
    if distances.len() < 3 {
        return Err(Error::Fit(format!(
            "distance fit needs at least 3 distinct distances, got {}",
            distances.len()
        )));
    }

    let ratios = distances
        .iter()
        .map(|&d| model.ratio(d))
        .collect::<Result<Vec<_>>>()?;
    let ratio_of = |d: f64| -> f64 {
        let i = distances
            .iter()
            .position(|&x| (x - d).abs() <= DISTANCE_EPS)
            .expect("distance collected above");
        ratios[i]
    };

    let mut points = Vec::with_capacity(used.len());
    for s in &used {
        let sensed =
            temperature_from_frequency(cal, s.row, s.col, s.frequency)?.temperature - ambient;
        let x = (s.plate_temperature - ambient) * ratio_of(s.distance);
        points.push((s.distance, x, sensed));
    }
    let sxx: f64 = points.iter().map(|p| p.1 * p.1).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("plate rise is zero in every sample".into()));
    }
    let gain = points.iter().map(|p| p.1 * p.2).sum::<f64>() / sxx;
    let rms = (points
        .iter()
        .map(|p| (p.2 - gain * p.1).powi(2))
        .sum::<f64>()
        / points.len() as f64)
        .sqrt();

    let mut non_monotone = false;
    let mut previous: Option<f64> = None;
    for &d in &distances {
        let group: Vec<f64> = points
            .iter()
            .filter(|p| (p.0 - d).abs() <= DISTANCE_EPS)
            .map(|p| p.2)
            .collect();
        let mean = group.iter().sum::<f64>() / group.len() as f64;
        if let Some(prev) = previous {
            if mean > prev + tolerance {
                non_monotone = true;
            }
        }
        previous = Some(mean);
    }

    model.gain = gain;
    Ok(DistanceFit {
        model,
        rms,
        non_monotone,
    })
}

/// Refers a rise sensed at `distance` back to the reference distance.
pub fn compensate_distance(model: &DistanceModel, sensed_rise: f64, distance: f64) -> Result<f64> {
    if distance < model.reference_distance - DISTANCE_EPS || distance > MAX_COMPENSATION_DISTANCE {
        return Err(Error::Range(format!(
            "distance {distance} m outside [{}, {MAX_COMPENSATION_DISTANCE}] m",
            model.reference_distance
        )));
    }
    Ok(sensed_rise / model.ratio(distance)?)
}

/// Inverse of [`compensate_distance`]: the rise sensed at `distance`.
pub fn attenuate(model: &DistanceModel, rise_at_reference: f64, distance: f64) -> Result<f64> {
    Ok(rise_at_reference * model.ratio(distance)?)
}

//! Run configuration documents (JSON). Unknown keys are rejected; every
//! quantity carries its unit in the key name.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::calibration::{DEFAULT_PLATE_SIZE, DEFAULT_REFERENCE_DISTANCE};
use crate::radiation::Patch;
use crate::sensor::{ChipModel, DEFAULT_POLL_INTERVAL};
use crate::thermal::{CardSpec, HeatSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CardConfig {
    pub rows: usize,
    pub cols: usize,
    pub pixel_size_m: f64,
    pub pitch_m: f64,
    pub copper_thickness_m: f64,
    pub board_thickness_m: f64,
    pub attach_resistance_k_per_w: f64,
    pub plate_emissivity: f64,
    pub film_coefficient_w_per_m2k: f64,
    pub board_conductivity_w_per_mk: f64,
    pub die_capacitance_j_per_k: f64,
    pub die_size_m: f64,
}

impl Default for CardConfig {
    fn default() -> Self {
        Self::from(&CardSpec::default())
    }
}

impl From<&CardSpec> for CardConfig {
    fn from(c: &CardSpec) -> Self {
        Self {
            rows: c.rows,
            cols: c.cols,
            pixel_size_m: c.pixel_size,
            pitch_m: c.pitch,
            copper_thickness_m: c.copper_thickness,
            board_thickness_m: c.board_thickness,
            attach_resistance_k_per_w: c.attach_resistance,
            plate_emissivity: c.plate_emissivity,
            film_coefficient_w_per_m2k: c.film_coefficient,
            board_conductivity_w_per_mk: c.board_conductivity,
            die_capacitance_j_per_k: c.die_capacitance,
            die_size_m: c.die_size,
        }
    }
}

impl CardConfig {
    pub fn to_spec(&self) -> CardSpec {
        CardSpec {
            rows: self.rows,
            cols: self.cols,
            pixel_size: self.pixel_size_m,
            pitch: self.pitch_m,
            copper_thickness: self.copper_thickness_m,
            board_thickness: self.board_thickness_m,
            attach_resistance: self.attach_resistance_k_per_w,
            plate_emissivity: self.plate_emissivity,
            film_coefficient: self.film_coefficient_w_per_m2k,
            board_conductivity: self.board_conductivity_w_per_mk,
            die_capacitance: self.die_capacitance_j_per_k,
            die_size: self.die_size_m,
            ..CardSpec::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvironmentConfig {
    pub ambient_c: f64,
    pub gap_m: f64,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        Self {
            ambient_c: 21.0,
            gap_m: 0.010,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChipConfig {
    pub base_frequency_hz: f64,
    pub slope_hz_per_c: f64,
    pub reference_temperature_c: f64,
    pub noise_sigma_hz: f64,
}

impl Default for ChipConfig {
    fn default() -> Self {
        let chip = ChipModel::default();
        Self {
            base_frequency_hz: chip.base_frequency,
            slope_hz_per_c: chip.slope,
            reference_temperature_c: chip.reference_temperature,
            noise_sigma_hz: chip.noise_sigma,
        }
    }
}

impl ChipConfig {
    pub fn to_model(&self, seed: u64) -> crate::Result<ChipModel> {
        ChipModel::new(
            self.base_frequency_hz,
            self.slope_hz_per_c,
            self.reference_temperature_c,
            self.noise_sigma_hz,
            seed,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DriveConfig {
    Prescribed {
        temperature_c: f64,
    },
    Powered {
        power_w: f64,
        resistance_k_per_w: f64,
        capacitance_j_per_k: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub center_x_m: f64,
    pub center_y_m: f64,
    pub width_m: f64,
    pub height_m: f64,
    #[serde(default = "default_emissivity")]
    pub emissivity: f64,
    pub drive: DriveConfig,
}

fn default_emissivity() -> f64 {
    0.95
}

impl SourceConfig {
    pub fn to_source(&self, gap: f64) -> HeatSource {
        let patch = Patch::new(
            self.center_x_m,
            self.center_y_m,
            self.width_m,
            self.height_m,
            gap,
        )
        .with_emissivity(self.emissivity);
        match self.drive {
            DriveConfig::Prescribed { temperature_c } => {
                HeatSource::prescribed(patch, temperature_c)
            }
            DriveConfig::Powered {
                power_w,
                resistance_k_per_w,
                capacitance_j_per_k,
            } => HeatSource::powered(patch, power_w, resistance_k_per_w, capacitance_j_per_k),
        }
    }

    /// The black calibration plate, centered on the card.
    pub fn plate(size: f64, temperature_c: f64) -> Self {
        Self {
            center_x_m: 0.0,
            center_y_m: 0.0,
            width_m: size,
            height_m: size,
            emissivity: default_emissivity(),
            drive: DriveConfig::Prescribed { temperature_c },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingConfig {
    pub t_end_s: f64,
    pub dt_s: f64,
    pub record_every_s: f64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            t_end_s: 600.0,
            dt_s: 0.1,
            record_every_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub reference_distance_m: f64,
    pub plate_size_m: f64,
    /// Allowed rise between consecutive sweep distances before flagging, °C.
    pub monotone_tolerance_c: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            reference_distance_m: DEFAULT_REFERENCE_DISTANCE,
            plate_size_m: DEFAULT_PLATE_SIZE,
            monotone_tolerance_c: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalizationConfig {
    pub source_size_m: f64,
    pub noise_floor_c: f64,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        Self {
            source_size_m: 0.010,
            noise_floor_c: crate::localization::DEFAULT_NOISE_FLOOR,
        }
    }
}

/// Canned experiment protocols used by `replay`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ExperimentConfig {
    /// Black-body ramp: one hold per plate set-point at the reference distance.
    Ramp {
        set_points_c: Vec<f64>,
        hold_s: f64,
        read_every_s: f64,
    },
    /// Distance sweep with the plate at a fixed temperature.
    Sweep {
        plate_c: f64,
        distances_m: Vec<f64>,
        hold_s: f64,
        read_every_s: f64,
    },
    /// Power step on a single dissipating element.
    Hotspot { duration_s: f64, target_max_c: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub card: CardConfig,
    pub environment: EnvironmentConfig,
    pub chip: ChipConfig,
    pub sources: Vec<SourceConfig>,
    pub timing: TimingConfig,
    pub seed: u64,
    /// `[row, col]` pairs whose die does not answer.
    pub dead_pixels: Vec<[usize; 2]>,
    pub poll_interval_s: f64,
    pub calibration: CalibrationConfig,
    pub localization: LocalizationConfig,
    pub experiment: Option<ExperimentConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            card: CardConfig::default(),
            environment: EnvironmentConfig::default(),
            chip: ChipConfig::default(),
            sources: vec![SourceConfig::plate(DEFAULT_PLATE_SIZE, 60.0)],
            timing: TimingConfig::default(),
            seed: 1,
            dead_pixels: Vec::new(),
            poll_interval_s: DEFAULT_POLL_INTERVAL,
            calibration: CalibrationConfig::default(),
            localization: LocalizationConfig::default(),
            experiment: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str, origin: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config {
            path: origin.to_string(),
            message: format!("line {}, column {}: {e}", e.line(), e.column()),
        })?;
        cfg.validate(origin)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_json(&text, &path.display().to_string())
    }

    /// Semantic checks beyond the schema; errors name the offending key.
    pub fn validate(&self, origin: &str) -> Result<(), CliError> {
        let err = |key: &str, msg: String| CliError::Config {
            path: origin.to_string(),
            message: format!("{key}: {msg}"),
        };
        let card = self.card.to_spec();
        card.validate().map_err(|e| err("card", e.to_string()))?;
        if !(self.environment.gap_m.is_finite() && self.environment.gap_m > 0.0) {
            return Err(err(
                "environment.gap_m",
                format!("must be positive, got {}", self.environment.gap_m),
            ));
        }
        if !self.environment.ambient_c.is_finite() {
            return Err(err("environment.ambient_c", "must be finite".into()));
        }
        self.chip
            .to_model(0)
            .map_err(|e| err("chip", e.to_string()))?;
        for (i, s) in self.sources.iter().enumerate() {
            s.to_source(self.environment.gap_m)
                .validate(self.environment.ambient_c)
                .map_err(|e| err(&format!("sources[{i}]"), e.to_string()))?;
        }
        let t = &self.timing;
        if !(t.dt_s > 0.0 && t.t_end_s >= t.dt_s && t.record_every_s > 0.0) {
            return Err(err(
                "timing",
                "need t_end_s ≥ dt_s > 0 and record_every_s > 0".into(),
            ));
        }
        for (i, &[r, c]) in self.dead_pixels.iter().enumerate() {
            if r >= card.rows || c >= card.cols {
                return Err(err(
                    &format!("dead_pixels[{i}]"),
                    format!("({r}, {c}) is off the card"),
                ));
            }
        }
        if !(self.poll_interval_s.is_finite() && self.poll_interval_s > 0.0) {
            return Err(err("poll_interval_s", "must be positive".into()));
        }
        if self.localization.source_size_m.is_nan() || self.localization.source_size_m <= 0.0 {
            return Err(err("localization.source_size_m", "must be positive".into()));
        }
        if !(self.calibration.reference_distance_m > 0.0 && self.calibration.plate_size_m > 0.0) {
            return Err(err("calibration", "distances must be positive".into()));
        }
        Ok(())
    }

    pub fn card_spec(&self) -> CardSpec {
        self.card.to_spec()
    }

    pub fn heat_sources(&self) -> Vec<HeatSource> {
        self.sources
            .iter()
            .map(|s| s.to_source(self.environment.gap_m))
            .collect()
    }

    /// One seeded chip per pixel, with dead pixels flagged.
    pub fn chips(&self) -> crate::Result<Vec<ChipModel>> {
        let card = self.card_spec();
        let template = self.chip.to_model(0)?;
        let mut chips = crate::sensor::chips_for_card(&template, card.pixel_count(), self.seed);
        for &[r, c] in &self.dead_pixels {
            chips[r * card.cols + c].dead = true;
        }
        Ok(chips)
    }
}

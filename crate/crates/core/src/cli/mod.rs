//! Command-line front end. Every command is also callable as a function so
//! tests can drive it without spawning a process.

pub mod config;
pub mod formats;
pub mod ingest;
pub mod replay;
pub mod sim;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::calibration::{
    compensate_distance, fit_distance, fit_pixels, temperature_from_frequency, Calibration,
};
use crate::localization::{locate_argmax, Localizer, LocateOptions, RiseMap, SourceKind};
use crate::thermal::pixel_name;
use config::{DriveConfig, RunConfig};
use formats::{write_file, Grid};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Config { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("{context}: {source}")]
    Domain {
        context: String,
        #[source]
        source: crate::Error,
    },
    #[error("thresholds failed, report kept at {report}")]
    Threshold { report: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Run configuration (JSON). Built-in defaults are used when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for output files; created if missing.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Overrides the noise seed of the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Source-to-card distance in metres.
    #[arg(long, global = true)]
    pub distance: Option<f64>,
    /// Minimum rise counted as a detection, °C.
    #[arg(long, global = true)]
    pub noise_floor: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentArg {
    #[value(name = "A", alias = "a")]
    A,
    #[value(name = "B", alias = "b")]
    B,
    #[value(name = "C", alias = "c")]
    C,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a transient simulation and write time series and the final map.
    Simulate,
    /// Re-run one of the canned experiments and check its thresholds.
    Replay { experiment: ExperimentArg },
    /// Fit a calibration file from a samples CSV.
    CalibrateFit { samples: PathBuf },
    /// Decode a raw frame stream into calibrated maps.
    Ingest {
        stream: PathBuf,
        calibration: PathBuf,
    },
    /// Estimate the source position from a temperature map CSV.
    Locate { map: PathBuf },
    /// Render a map CSV as PGM and PPM heatmaps.
    Render {
        map: PathBuf,
        /// Side of one pixel cell in image pixels.
        #[arg(long, default_value_t = formats::DEFAULT_CELL_SIZE)]
        cell: usize,
    },
}

#[derive(Debug, Parser)]
#[command(
    name = "ircard",
    version,
    about = "Infrared sensor-pixel card simulator"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Messages go to stdout/stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let inv = match Cli::try_parse_from(args) {
        Ok(inv) => inv,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&inv.command, &inv.common) {
        Ok(summary) => {
            print!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io {
        path: path.display().to_string(),
        source: e,
    }
}

fn domain(context: &str) -> impl Fn(crate::Error) -> CliError + '_ {
    move |e| CliError::Domain {
        context: context.to_string(),
        source: e,
    }
}

fn load_config(common: &CommonArgs, fallback: RunConfig) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => fallback,
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(d) = common.distance {
        cfg.environment.gap_m = d;
    }
    if let Some(f) = common.noise_floor {
        cfg.localization.noise_floor_c = f;
    }
    let origin = common
        .config
        .as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_else(|| "command line".into());
    cfg.validate(&origin)?;
    Ok(cfg)
}

fn out_dir(common: &CommonArgs) -> Result<&Path, CliError> {
    std::fs::create_dir_all(&common.out_dir).map_err(io_err(&common.out_dir))?;
    Ok(&common.out_dir)
}

/// Runs one command; returns the summary printed on success.
pub fn execute(command: &Command, common: &CommonArgs) -> Result<String, CliError> {
    match command {
        Command::Simulate => simulate(common),
        Command::Replay { experiment } => replay_cmd(*experiment, common),
        Command::CalibrateFit { samples } => calibrate_fit(samples, common),
        Command::Ingest {
            stream,
            calibration,
        } => ingest_cmd(stream, calibration, common),
        Command::Locate { map } => locate_cmd(map, common),
        Command::Render { map, cell } => render_cmd(map, *cell, common),
    }
}

fn simulate(common: &CommonArgs) -> Result<String, CliError> {
    let cfg = load_config(common, RunConfig::default())?;
    let dir = out_dir(common)?;
    let out = sim::run_simulation(&cfg).map_err(domain("simulation"))?;
    replay::write_series(dir, &out.card, &out)?;
    let die = out.die();
    let last = die.last().expect("series holds t=0");
    let grid = Grid::new(out.card.rows, out.card.cols, last.clone());
    formats::write_map_bundle(dir, "map", &grid, formats::DEFAULT_CELL_SIZE)?;
    let (lo, hi) = grid.range().unwrap_or((f64::NAN, f64::NAN));
    Ok(format!(
        "simulated {} s, {} samples; final die temperatures {lo:.3}..{hi:.3} °C\n",
        cfg.timing.t_end_s,
        out.series.len()
    ))
}

fn replay_cmd(exp: ExperimentArg, common: &CommonArgs) -> Result<String, CliError> {
    let exp = match exp {
        ExperimentArg::A => replay::Experiment::A,
        ExperimentArg::B => replay::Experiment::B,
        ExperimentArg::C => replay::Experiment::C,
    };
    let cfg = load_config(common, exp.fixture())?;
    let dir = out_dir(common)?;
    let report = replay::run(exp, &cfg, dir)?;
    let text = report.text();
    if report.passed() {
        Ok(text)
    } else {
        print!("{text}");
        Err(CliError::Threshold {
            report: dir.join("report.txt").display().to_string(),
        })
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

pub fn load_calibration(path: &Path) -> Result<Calibration, CliError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Config {
        path: path.display().to_string(),
        message: format!("line {}, column {}: {e}", e.line(), e.column()),
    })
}

fn calibrate_fit(samples_path: &Path, common: &CommonArgs) -> Result<String, CliError> {
    let cfg = load_config(common, RunConfig::default())?;
    let samples = formats::parse_samples_csv(
        &read_text(samples_path)?,
        &samples_path.display().to_string(),
    )?;
    let reference = cfg.calibration.reference_distance_m;
    let at_reference: Vec<_> = samples
        .iter()
        .copied()
        .filter(|s| (s.distance - reference).abs() <= 1e-9)
        .collect();
    let pixels = fit_pixels(&at_reference, reference).map_err(domain("pixel fit"))?;
    let mut cal = Calibration {
        reference_distance: reference,
        plate_size: cfg.calibration.plate_size_m,
        pixels,
        distance_gain: 1.0,
    };
    let mut distances: Vec<f64> = samples.iter().map(|s| s.distance).collect();
    distances.sort_by(f64::total_cmp);
    distances.dedup();
    let mut note = String::new();
    if distances.len() >= 3 {
        let fit = fit_distance(
            &samples,
            &cal,
            cfg.environment.ambient_c,
            cfg.calibration.monotone_tolerance_c,
        )
        .map_err(domain("distance fit"))?;
        cal.distance_gain = fit.model.gain;
        note = format!(", distance gain {:.4}", fit.model.gain);
        if fit.non_monotone {
            eprintln!("warning: sensed rise increases with distance somewhere in the sweep");
        }
    }
    let dir = out_dir(common)?;
    let path = dir.join("calibration.json");
    replay::write_calibration(&path, &cal)?;
    Ok(format!(
        "fitted {} pixels{note}; wrote {}\n",
        cal.pixels.len(),
        path.display()
    ))
}

fn ingest_cmd(stream: &Path, cal_path: &Path, common: &CommonArgs) -> Result<String, CliError> {
    let cfg = load_config(common, RunConfig::default())?;
    let cal = load_calibration(cal_path)?;
    let bytes = std::fs::read(stream).map_err(io_err(stream))?;
    let (rows, cols) = cal.grid();
    if rows == 0 {
        return Err(CliError::Format {
            path: cal_path.display().to_string(),
            message: "calibration has no pixels".into(),
        });
    }
    let decoded = ingest::decode_stream(&bytes, rows, cols);
    let ambient = cfg.environment.ambient_c;
    let model = cal.distance_model();
    let dir = out_dir(common)?;

    let mut table = String::from("cycle");
    for r in 0..rows {
        for c in 0..cols {
            table.push(',');
            table.push_str(&pixel_name(r, c));
        }
    }
    table.push('\n');
    let mut suspect = 0usize;
    let mut last = None;
    for (k, cycle) in decoded.cycles.iter().enumerate() {
        let mut temps = vec![f64::NAN; rows * cols];
        for (i, f) in cycle.frequencies.iter().enumerate() {
            let Some(f) = f else { continue };
            let (r, c) = (i / cols, i % cols);
            let apparent = match temperature_from_frequency(&cal, r, c, f64::from(*f)) {
                Ok(a) => a,
                Err(_) => continue,
            };
            if apparent.suspect {
                suspect += 1;
            }
            temps[i] = match common.distance {
                Some(d) => {
                    let rise = compensate_distance(&model, apparent.temperature - ambient, d)
                        .map_err(domain("distance compensation"))?;
                    ambient + rise
                }
                None => apparent.temperature,
            };
        }
        table.push_str(&k.to_string());
        for t in &temps {
            table.push(',');
            table.push_str(&formats::fmt_value(*t));
        }
        table.push('\n');
        let grid = Grid::new(rows, cols, temps);
        write_file(
            &dir.join(format!("cycle_{k:04}.csv")),
            formats::map_csv(&grid),
        )?;
        last = Some(grid);
    }
    write_file(&dir.join("cycles.csv"), table)?;
    if let Some(grid) = &last {
        formats::write_map_bundle(dir, "map", grid, formats::DEFAULT_CELL_SIZE)?;
    }
    if decoded.dropped > 0 {
        eprintln!(
            "warning: dropped {} cycle(s) with mostly malformed frames",
            decoded.dropped
        );
    }
    if suspect > 0 {
        eprintln!("warning: {suspect} reading(s) outside the plausible range");
    }
    Ok(format!(
        "cycles={} dropped={} malformed={}\n",
        decoded.cycles.len(),
        decoded.dropped,
        decoded.malformed
    ))
}

fn locate_cmd(map_path: &Path, common: &CommonArgs) -> Result<String, CliError> {
    let cfg = load_config(common, RunConfig::default())?;
    let grid = formats::parse_map_csv(&read_text(map_path)?, &map_path.display().to_string())?;
    let card = cfg.card_spec();
    if (grid.rows, grid.cols) != (card.rows, card.cols) {
        return Err(CliError::Format {
            path: map_path.display().to_string(),
            message: format!(
                "map is {}x{} but the card is {}x{}",
                grid.rows, grid.cols, card.rows, card.cols
            ),
        });
    }
    let ambient = cfg.environment.ambient_c;
    let gap = cfg.environment.gap_m;
    let rises: Vec<f64> = grid
        .values
        .iter()
        .map(|t| if t.is_nan() { 0.0 } else { t - ambient })
        .collect();
    let mut map = RiseMap::new(grid.rows, grid.cols, rises, gap).map_err(domain("rise map"))?;
    for (i, t) in grid.values.iter().enumerate() {
        if t.is_nan() {
            map.mask_pixel(i / grid.cols, i % grid.cols);
        }
    }
    let floor = cfg.localization.noise_floor_c;
    let argmax = locate_argmax(&map, floor).map_err(domain("argmax"))?;
    let mut options = LocateOptions {
        ambient,
        noise_floor: floor,
        ..LocateOptions::default()
    };
    let mut size = cfg.localization.source_size_m;
    if let Some(s) = cfg.sources.first() {
        options.emissivity = s.emissivity;
        if let DriveConfig::Powered {
            resistance_k_per_w,
            capacitance_j_per_k,
            ..
        } = s.drive
        {
            options.kind = SourceKind::Power {
                resistance: resistance_k_per_w,
                capacitance: capacitance_j_per_k,
            };
            size = (s.width_m * s.height_m).sqrt();
        }
    }
    let est = Localizer::new(&card, gap, size, options)
        .and_then(|l| l.locate(&map))
        .map_err(domain("localization"))?;
    let strength_unit = match options.kind {
        SourceKind::Temperature => "strength_c",
        SourceKind::Power { .. } => "strength_w",
    };
    let json = serde_json::json!({
        "argmax": pixel_name(argmax.row, argmax.col),
        "tie": argmax.tie,
        "x_m": est.x,
        "y_m": est.y,
        strength_unit: est.strength,
        "residual_c": est.residual,
        "covariance_m2": est.covariance,
        "converged": est.converged,
        "iterations": est.iterations,
    });
    let text = serde_json::to_string_pretty(&json).expect("estimate serializes") + "\n";
    let dir = out_dir(common)?;
    write_file(&dir.join("estimate.json"), &text)?;
    Ok(text)
}

fn render_cmd(map_path: &Path, cell: usize, common: &CommonArgs) -> Result<String, CliError> {
    if cell == 0 {
        return Err(CliError::Config {
            path: "--cell".into(),
            message: "cell size must be at least 1".into(),
        });
    }
    let grid = formats::parse_map_csv(&read_text(map_path)?, &map_path.display().to_string())?;
    let dir = out_dir(common)?;
    let stem = map_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("map");
    formats::write_map_images(dir, stem, &grid, cell)?;
    Ok(format!(
        "rendered {}x{} map at {cell} px per cell into {}\n",
        grid.rows,
        grid.cols,
        dir.display()
    ))
}

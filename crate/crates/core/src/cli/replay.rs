//! Canned experiments: calibration ramp (A), distance sweep (B) and the
//! power-step hotspot (C).

use std::fmt::Write as _;
use std::path::Path;

use super::config::{ExperimentConfig, RunConfig, SourceConfig};
use super::formats::{self, write_file, Grid, DEFAULT_CELL_SIZE};
use super::sim::{final_die_temperatures, hold_and_read, run_simulation};
use super::CliError;
use crate::calibration::{
    fit_distance, fit_pixels, settled, temperature_from_frequency, CalSample, Calibration,
    DistanceFit,
};
use crate::localization::{
    locate_argmax, ArgMax, Localizer, LocateOptions, RiseMap, SourceEstimate, SourceKind,
};
use crate::thermal::{pixel_name, SourceDrive};

const FIXTURE_A: &str = include_str!("../../fixtures/replay_a.json");
const FIXTURE_B: &str = include_str!("../../fixtures/replay_b.json");
const FIXTURE_C: &str = include_str!("../../fixtures/replay_c.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    A,
    B,
    C,
}

impl Experiment {
    pub fn fixture(self) -> RunConfig {
        let (text, name) = match self {
            Experiment::A => (FIXTURE_A, "fixtures/replay_a.json"),
            Experiment::B => (FIXTURE_B, "fixtures/replay_b.json"),
            Experiment::C => (FIXTURE_C, "fixtures/replay_c.json"),
        };
        RunConfig::from_json(text, name).expect("shipped fixture is valid")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Human-readable summary plus the threshold checks of one replay.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub title: String,
    pub body: String,
    pub checks: Vec<Check>,
}

impl Report {
    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            detail,
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn text(&self) -> String {
        let mut out = format!("{}\n{}", self.title, self.body);
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(out, "{tag} {}: {}", c.name, c.detail).unwrap();
        }
        out
    }
}

fn experiment_error(exp: &str) -> CliError {
    CliError::Config {
        path: "experiment".into(),
        message: format!("config does not describe a {exp} experiment"),
    }
}

fn domain(context: &str) -> impl Fn(crate::Error) -> CliError + '_ {
    move |e| CliError::Domain {
        context: context.to_string(),
        source: e,
    }
}

#[derive(Debug, Clone)]
pub struct RampOutcome {
    pub samples: Vec<CalSample>,
    pub calibration: Calibration,
    /// Mean settled frequency difference between the lowest and highest
    /// set-point, Hz.
    pub span_hz: f64,
    /// Plate temperature range covered, °C.
    pub range_c: f64,
    /// Largest relative deviation of a fitted slope from `1 / chip slope`.
    pub worst_slope_error: f64,
    pub report: Report,
}

/// Replay A: hold the black plate at each set-point in turn and fit every pixel.
pub fn ramp(cfg: &RunConfig) -> Result<RampOutcome, CliError> {
    let Some(ExperimentConfig::Ramp {
        set_points_c,
        hold_s,
        read_every_s,
    }) = &cfg.experiment
    else {
        return Err(experiment_error("ramp"));
    };
    let reference = cfg.calibration.reference_distance_m;
    let plate = cfg.calibration.plate_size_m;
    let mut chips = cfg.chips().map_err(domain("chips"))?;
    let mut samples = Vec::new();
    for (k, &t) in set_points_c.iter().enumerate() {
        let source = SourceConfig::plate(plate, t).to_source(reference);
        let held = hold_and_read(
            cfg,
            &mut chips,
            source,
            *hold_s,
            *read_every_s,
            k as f64 * hold_s,
        )
        .map_err(domain("ramp hold"))?;
        samples.extend(held);
    }
    let pixels = fit_pixels(&samples, reference).map_err(domain("pixel fit"))?;
    let calibration = Calibration {
        reference_distance: reference,
        plate_size: plate,
        pixels,
        distance_gain: 1.0,
    };

    let last = settled(&samples);
    let lo = set_points_c.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = set_points_c
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut spans = Vec::new();
    for p in &calibration.pixels {
        let at = |t: f64| {
            last.iter()
                .find(|s| (s.row, s.col) == (p.row, p.col) && s.plate_temperature == t)
                .map(|s| s.frequency)
        };
        if let (Some(f_lo), Some(f_hi)) = (at(lo), at(hi)) {
            spans.push((f_lo - f_hi).abs());
        }
    }
    let span_hz = spans.iter().sum::<f64>() / spans.len().max(1) as f64;
    let expected_b = 1.0 / cfg.chip.slope_hz_per_c;
    let worst_slope_error = calibration
        .pixels
        .iter()
        .map(|p| ((p.b - expected_b) / expected_b).abs())
        .fold(0.0, f64::max);

    let mut report = Report {
        title: "replay A: black-body ramp".into(),
        ..Report::default()
    };
    let b = &mut report.body;
    writeln!(b, "set-points_c: {set_points_c:?}").unwrap();
    writeln!(b, "pixel,a_c,b_c_per_hz,hz_per_c,rms_c").unwrap();
    for p in &calibration.pixels {
        writeln!(
            b,
            "{},{:.4},{:.6e},{:.1},{:.4}",
            pixel_name(p.row, p.col),
            p.a,
            p.b,
            1.0 / p.b,
            p.rms
        )
        .unwrap();
    }
    writeln!(
        b,
        "frequency span over {:.1} °C: {:.0} Hz",
        hi - lo,
        span_hz
    )
    .unwrap();
    let target = (cfg.chip.slope_hz_per_c * 40.0).abs();
    let scaled_span = span_hz * 40.0 / (hi - lo);
    report.check(
        "span over 40 °C within 10% of chip span",
        (scaled_span - target).abs() <= 0.10 * target,
        format!("{scaled_span:.0} Hz vs {target:.0} Hz"),
    );
    report.check(
        "fitted slope within 2% of chip slope",
        worst_slope_error <= 0.02,
        format!("worst relative error {:.3}", worst_slope_error),
    );
    Ok(RampOutcome {
        samples,
        calibration,
        span_hz,
        range_c: hi - lo,
        worst_slope_error,
        report,
    })
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub samples: Vec<CalSample>,
    /// (distance m, mean settled sensed rise °C)
    pub curve: Vec<(f64, f64)>,
    pub fit: DistanceFit,
    pub calibration: Calibration,
    pub report: Report,
}

/// Replay B: calibrate with the shipped ramp, then back the plate away.
pub fn sweep(cfg: &RunConfig) -> Result<SweepOutcome, CliError> {
    let Some(ExperimentConfig::Sweep {
        plate_c,
        distances_m,
        hold_s,
        read_every_s,
    }) = &cfg.experiment
    else {
        return Err(experiment_error("sweep"));
    };
    let mut ramp_cfg = Experiment::A.fixture();
    ramp_cfg.seed = cfg.seed;
    let mut calibration = ramp(&ramp_cfg)?.calibration;

    let ambient = cfg.environment.ambient_c;
    let plate = cfg.calibration.plate_size_m;
    let mut chips = cfg.chips().map_err(domain("chips"))?;
    let mut samples = Vec::new();
    for (k, &d) in distances_m.iter().enumerate() {
        let source = SourceConfig::plate(plate, *plate_c).to_source(d);
        let held = hold_and_read(
            cfg,
            &mut chips,
            source,
            *hold_s,
            *read_every_s,
            k as f64 * hold_s,
        )
        .map_err(domain("sweep hold"))?;
        samples.extend(held);
    }
    let fit = fit_distance(
        &samples,
        &calibration,
        ambient,
        cfg.calibration.monotone_tolerance_c,
    )
    .map_err(domain("distance fit"))?;
    calibration.distance_gain = fit.model.gain;

    let last = settled(&samples);
    let mut curve = Vec::new();
    for &d in distances_m {
        let rises: Vec<f64> = last
            .iter()
            .filter(|s| s.distance == d)
            .map(|s| {
                temperature_from_frequency(&calibration, s.row, s.col, s.frequency)
                    .map(|t| t.temperature - ambient)
            })
            .collect::<crate::Result<_>>()
            .map_err(domain("apparent temperature"))?;
        curve.push((d, rises.iter().sum::<f64>() / rises.len().max(1) as f64));
    }

    let mut report = Report {
        title: "replay B: distance sweep".into(),
        ..Report::default()
    };
    let b = &mut report.body;
    writeln!(b, "plate {plate_c} °C, ambient {ambient} °C").unwrap();
    writeln!(b, "distance_m,sensed_rise_c,model_rise_c").unwrap();
    let plate_rise = plate_c - ambient;
    for &(d, rise) in &curve {
        let model = fit
            .model
            .predicted_rise(plate_rise, d)
            .map_err(domain("distance model"))?;
        writeln!(b, "{d:.3},{rise:.4},{model:.4}").unwrap();
    }
    writeln!(
        b,
        "fitted gain {:.4}, rms {:.4} °C",
        fit.model.gain, fit.rms
    )
    .unwrap();
    let decreasing = curve.windows(2).all(|w| w[1].1 < w[0].1);
    report.check(
        "sensed rise strictly decreasing with distance",
        decreasing,
        format!(
            "{:?}",
            curve
                .iter()
                .map(|c| (c.1 * 1e4).round() / 1e4)
                .collect::<Vec<_>>()
        ),
    );
    let near = curve.first().map(|c| c.1).unwrap_or(f64::NAN);
    let far = curve.last().map(|c| c.1).unwrap_or(f64::NAN);
    let ratio = far / near;
    report.check(
        "far/near rise ratio below 0.25",
        ratio < 0.25,
        format!("{ratio:.4}"),
    );
    Ok(SweepOutcome {
        samples,
        curve,
        fit,
        calibration,
        report,
    })
}

/// Scans averaged for the end-of-step map.
pub const AVERAGED_SCANS: usize = 30;

#[derive(Debug, Clone)]
pub struct HotspotOutcome {
    /// Die rises at the end of the nominal step, from the mean of the last
    /// few reported frequencies.
    pub rises: Grid,
    pub argmax: ArgMax,
    pub runner_up: (usize, usize),
    pub estimate: SourceEstimate,
    /// Distance from the estimate to the true source center, m.
    pub position_error: f64,
    /// Power that brings the hottest die to the target temperature, W.
    pub tuned_power: f64,
    /// Max−min die temperature at the tuned power, °C.
    pub spread: f64,
    pub report: Report,
}

/// Replay C: step the dissipating element, map the card, localize, and
/// check the spread with the power tuned to the target reading.
pub fn hotspot(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<HotspotOutcome, CliError> {
    let Some(ExperimentConfig::Hotspot {
        duration_s,
        target_max_c,
    }) = &cfg.experiment
    else {
        return Err(experiment_error("hotspot"));
    };
    let src_cfg = *cfg
        .sources
        .first()
        .ok_or_else(|| experiment_error("hotspot (no source)"))?;
    let SourceDrive::Powered {
        power,
        resistance,
        capacitance,
    } = src_cfg.to_source(cfg.environment.gap_m).drive
    else {
        return Err(experiment_error("hotspot (source must be powered)"));
    };
    let ambient = cfg.environment.ambient_c;
    let gap = cfg.environment.gap_m;

    let mut run_cfg = cfg.clone();
    run_cfg.timing.t_end_s = *duration_s;
    let sim = run_simulation(&run_cfg).map_err(domain("simulation"))?;
    let card = sim.card.clone();
    let n = card.pixel_count();

    let template = cfg.chip.to_model(0).map_err(domain("chip"))?;
    let tail = &sim.frequencies[sim.frequencies.len().saturating_sub(AVERAGED_SCANS)..];
    let measured: Vec<f64> = (0..n)
        .map(|i| {
            let mean = tail.iter().map(|row| row[i]).sum::<f64>() / tail.len() as f64;
            template.temperature_of(mean)
        })
        .collect();
    let rises_v: Vec<f64> = measured.iter().map(|t| t - ambient).collect();
    let rises = Grid::new(card.rows, card.cols, rises_v.clone());

    if let Some(dir) = out_dir {
        write_series(dir, &card, &sim)?;
        formats::write_map_bundle(
            dir,
            "map",
            &Grid::new(card.rows, card.cols, measured.clone()),
            DEFAULT_CELL_SIZE,
        )?;
    }

    let mut map = RiseMap::new(
        card.rows,
        card.cols,
        rises_v
            .iter()
            .map(|v| if v.is_nan() { 0.0 } else { *v })
            .collect(),
        gap,
    )
    .map_err(domain("rise map"))?;
    for (i, v) in rises_v.iter().enumerate() {
        if v.is_nan() {
            map.mask_pixel(i / card.cols, i % card.cols);
        }
    }
    let argmax = locate_argmax(&map, cfg.localization.noise_floor_c).map_err(domain("argmax"))?;
    let runner_up = (0..n)
        .filter(|&i| i != argmax.row * card.cols + argmax.col && !map.mask[i])
        .max_by(|&a, &b| map.rises[a].total_cmp(&map.rises[b]).then(b.cmp(&a)))
        .map(|i| (i / card.cols, i % card.cols))
        .unwrap_or((argmax.row, argmax.col));

    let options = LocateOptions {
        ambient,
        kind: SourceKind::Power {
            resistance,
            capacitance,
        },
        emissivity: src_cfg.emissivity,
        noise_floor: cfg.localization.noise_floor_c,
        ..LocateOptions::default()
    };
    let size = (src_cfg.width_m * src_cfg.height_m).sqrt();
    let estimate = Localizer::new(&card, gap, size, options)
        .and_then(|l| l.locate(&map))
        .map_err(domain("localization"))?;
    let position_error = (estimate.x - src_cfg.center_x_m).hypot(estimate.y - src_cfg.center_y_m);

    // Bisection on the power for the target reading of the hottest die.
    let hottest = |p: f64| -> Result<f64, CliError> {
        let mut s = src_cfg;
        if let super::config::DriveConfig::Powered { power_w, .. } = &mut s.drive {
            *power_w = p;
        }
        let die = final_die_temperatures(cfg, s.to_source(gap), *duration_s)
            .map_err(domain("power tuning"))?;
        Ok(die.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    };
    let (mut lo, mut hi) = (0.0, power.max(0.1));
    while hottest(hi)? < *target_max_c {
        lo = hi;
        hi *= 2.0;
        if hi > 1e3 {
            return Err(CliError::Domain {
                context: "power tuning".into(),
                source: crate::Error::NotConverged {
                    iterations: 0,
                    residual: *target_max_c,
                },
            });
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if hottest(mid)? < *target_max_c {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-6 * hi {
            break;
        }
    }
    let tuned_power = 0.5 * (lo + hi);
    let mut tuned = src_cfg;
    if let super::config::DriveConfig::Powered { power_w, .. } = &mut tuned.drive {
        *power_w = tuned_power;
    }
    let tuned_die = final_die_temperatures(cfg, tuned.to_source(gap), *duration_s)
        .map_err(domain("power tuning"))?;
    let t_max = tuned_die.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let t_min = tuned_die.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = t_max - t_min;

    let mut report = Report {
        title: "replay C: power step".into(),
        ..Report::default()
    };
    let b = &mut report.body;
    writeln!(
        b,
        "power {power} W for {duration_s} s, ambient {ambient} °C"
    )
    .unwrap();
    writeln!(b, "die rise map (°C, mean of last {AVERAGED_SCANS} scans):").unwrap();
    for r in 0..card.rows {
        let row: Vec<String> = (0..card.cols)
            .map(|c| format!("{:7.3}", rises.get(r, c)))
            .collect();
        writeln!(b, "  {}", row.join(" ")).unwrap();
    }
    let am = pixel_name(argmax.row, argmax.col);
    let ru = pixel_name(runner_up.0, runner_up.1);
    writeln!(
        b,
        "hottest {am}, next {ru}{}",
        if argmax.tie { " (tie)" } else { "" }
    )
    .unwrap();
    writeln!(
        b,
        "estimate x={:.4} m y={:.4} m power={:.4} W residual={:.4} °C iterations={} converged={}",
        estimate.x,
        estimate.y,
        estimate.strength,
        estimate.residual,
        estimate.iterations,
        estimate.converged
    )
    .unwrap();
    writeln!(
        b,
        "tuned power {tuned_power:.4} W: max {t_max:.3} °C, min {t_min:.3} °C"
    )
    .unwrap();

    let mut top = [am.clone(), ru.clone()];
    top.sort();
    report.check(
        "hottest pixels are A2 and B2",
        top == ["A2".to_string(), "B2".to_string()],
        format!("{am}, {ru}"),
    );
    let min_rise = rises_v
        .iter()
        .copied()
        .filter(|v| !v.is_nan())
        .fold(f64::INFINITY, f64::min);
    report.check(
        "every pixel rises",
        min_rise > 0.0,
        format!("smallest rise {min_rise:.4} °C"),
    );
    report.check(
        "spread at tuned power within [1.5, 7] °C",
        (1.5..=7.0).contains(&spread),
        format!("{spread:.3} °C"),
    );
    report.check(
        "localization within 5 mm of the source",
        position_error < 5e-3,
        format!("{:.2} mm", position_error * 1e3),
    );
    Ok(HotspotOutcome {
        rises,
        argmax,
        runner_up,
        estimate,
        position_error,
        tuned_power,
        spread,
        report,
    })
}

/// `plate.csv`, `die.csv`, `frequency.csv` and `frames.bin`.
pub fn write_series(
    dir: &Path,
    card: &crate::thermal::CardSpec,
    sim: &super::sim::SimOutput,
) -> Result<(), CliError> {
    let t = &sim.series.times;
    write_file(
        &dir.join("plate.csv"),
        formats::series_csv(card.rows, card.cols, t, &sim.plate()),
    )?;
    write_file(
        &dir.join("die.csv"),
        formats::series_csv(card.rows, card.cols, t, &sim.die()),
    )?;
    write_file(
        &dir.join("frequency.csv"),
        formats::series_csv(card.rows, card.cols, t, &sim.frequencies),
    )?;
    write_file(&dir.join("frames.bin"), &sim.stream)
}

/// Runs one experiment, writes its artifacts and report into `out_dir`.
pub fn run(exp: Experiment, cfg: &RunConfig, out_dir: &Path) -> Result<Report, CliError> {
    let report = match exp {
        Experiment::A => {
            let o = ramp(cfg)?;
            write_file(
                &out_dir.join("samples.csv"),
                formats::samples_csv(&o.samples),
            )?;
            write_calibration(&out_dir.join("calibration.json"), &o.calibration)?;
            o.report
        }
        Experiment::B => {
            let o = sweep(cfg)?;
            write_file(
                &out_dir.join("samples.csv"),
                formats::samples_csv(&o.samples),
            )?;
            write_calibration(&out_dir.join("calibration.json"), &o.calibration)?;
            let mut curve = String::from("distance_m,sensed_rise_c\n");
            for (d, r) in &o.curve {
                writeln!(curve, "{d:.6},{r:.6}").unwrap();
            }
            write_file(&out_dir.join("distance.csv"), curve)?;
            o.report
        }
        Experiment::C => hotspot(cfg, Some(out_dir))?.report,
    };
    write_file(&out_dir.join("report.txt"), report.text())?;
    Ok(report)
}

pub fn write_calibration(path: &Path, cal: &Calibration) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(cal).expect("calibration serializes");
    text.push('\n');
    write_file(path, text)
}

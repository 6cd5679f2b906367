//! Simulation pipelines shared by `simulate` and `replay`.

use crate::calibration::CalSample;
use crate::sensor::{decode_response, scan_cycle, ChipModel, TimedFrame};
use crate::thermal::{build_network, CardSpec, Exposure, HeatSource, TimeSeries, TransientSolver};
use crate::Result;

use super::config::RunConfig;

/// Everything a transient run produced.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub card: CardSpec,
    pub series: TimeSeries,
    /// Reported frequency per recorded sample, row-major; NaN for dead dies.
    pub frequencies: Vec<Vec<f64>>,
    /// Raw response frames of every scan, in poll order.
    pub stream: Vec<u8>,
}

impl SimOutput {
    pub fn plate(&self) -> Vec<Vec<f64>> {
        let n = self.card.pixel_count();
        self.series
            .nodes
            .iter()
            .map(|row| row[..n].to_vec())
            .collect()
    }

    pub fn die(&self) -> Vec<Vec<f64>> {
        let n = self.card.pixel_count();
        self.series
            .nodes
            .iter()
            .map(|row| row[n..2 * n].to_vec())
            .collect()
    }
}

/// Frequencies of one scan keyed by pixel index; NaN where no frame came.
fn frame_frequencies(frames: &[TimedFrame], cols: usize, n: usize) -> Result<Vec<f64>> {
    let mut out = vec![f64::NAN; n];
    for f in frames {
        let r = decode_response(&f.bytes)?;
        out[r.row * cols + r.col] = f64::from(r.frequency);
    }
    Ok(out)
}

/// Runs the configured scenario from ambient and scans the card at every
/// recorded sample.
pub fn run_simulation(cfg: &RunConfig) -> Result<SimOutput> {
    let card = cfg.card_spec();
    let ambient = cfg.environment.ambient_c;
    let mut net = build_network(&card, ambient)?;
    let mut exposure = Exposure::new(&net, cfg.heat_sources())?;
    let t = &cfg.timing;
    let series = crate::thermal::run_transient(
        &mut net,
        &mut exposure,
        t.t_end_s,
        t.dt_s,
        t.record_every_s,
    )?;

    let n = card.pixel_count();
    let mut chips = cfg.chips()?;
    let mut frequencies = Vec::with_capacity(series.len());
    let mut stream = Vec::new();
    for (time, nodes) in series.times.iter().zip(&series.nodes) {
        let frames = scan_cycle(
            card.rows,
            card.cols,
            &nodes[n..2 * n],
            &mut chips,
            *time,
            cfg.poll_interval_s,
            true,
        )?;
        frequencies.push(frame_frequencies(&frames, card.cols, n)?);
        for f in &frames {
            stream.extend_from_slice(&f.bytes);
        }
    }
    Ok(SimOutput {
        card,
        series,
        frequencies,
        stream,
    })
}

/// One calibration hold: the card starts at ambient, faces `source` for
/// `hold_s`, and is scanned every `read_every_s`. Returns one sample per
/// live pixel and reading, stamped from `t0`.
pub fn hold_and_read(
    cfg: &RunConfig,
    chips: &mut [ChipModel],
    source: HeatSource,
    hold_s: f64,
    read_every_s: f64,
    t0: f64,
) -> Result<Vec<CalSample>> {
    let card = cfg.card_spec();
    let plate_temperature = match source.drive {
        crate::thermal::SourceDrive::Prescribed { temperature } => temperature,
        crate::thermal::SourceDrive::Powered { .. } => {
            return Err(crate::Error::Precondition(
                "calibration holds need a prescribed plate".into(),
            ))
        }
    };
    let mut net = build_network(&card, cfg.environment.ambient_c)?;
    let mut exposure = Exposure::new(&net, vec![source])?;
    let series = crate::thermal::run_transient(
        &mut net,
        &mut exposure,
        hold_s,
        cfg.timing.dt_s,
        read_every_s,
    )?;
    let n = card.pixel_count();
    let mut samples = Vec::new();
    for (time, nodes) in series.times.iter().zip(&series.nodes).skip(1) {
        let frames = scan_cycle(
            card.rows,
            card.cols,
            &nodes[n..2 * n],
            chips,
            t0 + time,
            cfg.poll_interval_s,
            true,
        )?;
        for f in &frames {
            let r = decode_response(&f.bytes)?;
            samples.push(CalSample {
                row: r.row,
                col: r.col,
                plate_temperature,
                distance: source.patch.plane_gap,
                frequency: f64::from(r.frequency),
                timestamp: f.timestamp,
            });
        }
    }
    Ok(samples)
}

/// Die temperatures after driving `source` for `duration_s` from ambient,
/// without recording the trajectory.
pub fn final_die_temperatures(
    cfg: &RunConfig,
    source: HeatSource,
    duration_s: f64,
) -> Result<Vec<f64>> {
    let card = cfg.card_spec();
    let mut net = build_network(&card, cfg.environment.ambient_c)?;
    let mut exposure = Exposure::new(&net, vec![source])?;
    let dt = cfg.timing.dt_s;
    let steps = (duration_s / dt).round() as usize;
    let solver = TransientSolver::new(&net, &exposure, dt)?;
    for _ in 0..steps {
        solver.step(&mut net, &mut exposure)?;
    }
    let n = card.pixel_count();
    Ok(net.temperatures()[n..2 * n].to_vec())
}

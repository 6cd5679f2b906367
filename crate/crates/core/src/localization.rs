//! Hotspot localization from a sensed rise map.
//!
//! The forward model places a single square source in front of the card,
//! solves the steady card temperatures and returns the plate rises over
//! ambient. The inverse fits source position and strength to a measured
//! map: a coarse grid search at half-pitch resolution seeds a damped
//! Gauss–Newton refinement with a central-difference Jacobian.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::radiation::{Patch, ZERO_CELSIUS};
use crate::thermal::{build_network, solve_steady, CardSpec, Exposure, HeatSource, ThermalNetwork};

/// Smallest source-to-card gap the forward model accepts, m.
pub const MIN_GAP: f64 = 0.010;
pub const DEFAULT_NOISE_FLOOR: f64 = 0.2;

/// Per-pixel temperature rises over ambient, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RiseMap {
    pub rows: usize,
    pub cols: usize,
    /// °C
    pub rises: Vec<f64>,
    /// Source-to-card distance the map was taken at, m.
    pub gap: f64,
    /// `true` marks a dead pixel; masked pixels never enter a norm.
    pub mask: Vec<bool>,
}

impl RiseMap {
    pub fn new(rows: usize, cols: usize, rises: Vec<f64>, gap: f64) -> Result<Self> {
        if rises.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(Error::Precondition(format!(
                "map of {} values does not fit a {rows}x{cols} grid",
                rises.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            mask: vec![false; rises.len()],
            rises,
            gap,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.rises[row * self.cols + col]
    }

    pub fn is_masked(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.cols + col]
    }

    pub fn mask_pixel(&mut self, row: usize, col: usize) {
        self.mask[row * self.cols + col] = true;
    }

    /// Same map with columns reversed (mirror about the vertical axis).
    pub fn mirrored_cols(&self) -> Self {
        let mut out = self.clone();
        for r in 0..self.rows {
            for c in 0..self.cols {
                let src = r * self.cols + (self.cols - 1 - c);
                out.rises[r * self.cols + c] = self.rises[src];
                out.mask[r * self.cols + c] = self.mask[src];
            }
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.rises.iter_mut().for_each(|v| *v *= factor);
        out
    }

    fn check_card(&self, card: &CardSpec) -> Result<()> {
        if self.rows != card.rows || self.cols != card.cols {
            return Err(Error::Precondition(format!(
                "map is {}x{} but the card is {}x{}",
                self.rows, self.cols, card.rows, card.cols
            )));
        }
        Ok(())
    }
}

fn check_gap(gap: f64) -> Result<()> {
    if !(gap.is_finite() && gap >= MIN_GAP - 1e-12) {
        return Err(Error::Precondition(format!(
            "gap {gap} m is below the {MIN_GAP} m minimum"
        )));
    }
    Ok(())
}

/// Steady plate rises produced by `source` placed `gap` in front of the card.
pub fn forward_rise_map(
    source: &HeatSource,
    card: &CardSpec,
    gap: f64,
    ambient: f64,
) -> Result<RiseMap> {
    check_gap(gap)?;
    let net = build_network(card, ambient)?;
    rise_map_on(&net, card, source, gap)
}

fn rise_map_on(
    net: &ThermalNetwork,
    card: &CardSpec,
    source: &HeatSource,
    gap: f64,
) -> Result<RiseMap> {
    let mut source = *source;
    source.patch.plane_gap = gap;
    let exposure = Exposure::new(net, vec![source])?;
    let steady = solve_steady(net, &exposure)?;
    let rises = steady.temperatures[..card.pixel_count()]
        .iter()
        .map(|t| t - net.ambient)
        .collect();
    RiseMap::new(card.rows, card.cols, rises, gap)
}

/// Result of [`locate_argmax`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArgMax {
    pub row: usize,
    pub col: usize,
    /// Another unmasked pixel has exactly the same rise.
    pub tie: bool,
}

/// Hottest unmasked pixel; ties go to the lowest row-major index.
pub fn locate_argmax(map: &RiseMap, noise_floor: f64) -> Result<ArgMax> {
    let mut best: Option<(usize, f64)> = None;
    let mut tie = false;
    for (i, (&v, &masked)) in map.rises.iter().zip(&map.mask).enumerate() {
        if masked || !v.is_finite() {
            continue;
        }
        match best {
            None => best = Some((i, v)),
            Some((_, b)) if v > b => {
                best = Some((i, v));
                tie = false;
            }
            Some((_, b)) if v == b => tie = true,
            _ => {}
        }
    }
    match best {
        Some((i, v)) if v > noise_floor => Ok(ArgMax {
            row: i / map.cols,
            col: i % map.cols,
            tie,
        }),
        _ => Err(Error::NoDetection { noise_floor }),
    }
}

/// What the fitted strength means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceKind {
    /// Strength is the source surface temperature, °C.
    Temperature,
    /// Strength is the dissipated power, W.
    Power { resistance: f64, capacitance: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocateOptions {
    /// °C
    pub ambient: f64,
    pub kind: SourceKind,
    pub emissivity: f64,
    pub noise_floor: f64,
    pub max_iterations: usize,
    /// Position step below which the refinement stops, m.
    pub step_tolerance: f64,
    /// Central-difference step for the position, m.
    pub position_step: f64,
    /// Central-difference step for the strength, relative.
    pub strength_step: f64,
}

impl Default for LocateOptions {
    fn default() -> Self {
        Self {
            ambient: 21.0,
            kind: SourceKind::Temperature,
            emissivity: 0.95,
            noise_floor: DEFAULT_NOISE_FLOOR,
            max_iterations: 50,
            step_tolerance: 1e-4,
            position_step: 5e-4,
            strength_step: 0.01,
        }
    }
}

/// Fitted source parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceEstimate {
    /// m, card coordinates
    pub x: f64,
    pub y: f64,
    /// °C or W, see [`SourceKind`].
    pub strength: f64,
    /// RMS misfit over unmasked pixels, °C.
    pub residual: f64,
    /// Position covariance proxy `s²·(JᵀJ)⁻¹`, m².
    pub covariance: [[f64; 2]; 2],
    pub converged: bool,
    pub iterations: usize,
}

/// Single-source forward model bound to one card and gap.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    card: CardSpec,
    net: ThermalNetwork,
    gap: f64,
    source_size: f64,
    options: LocateOptions,
}

impl ForwardModel {
    pub fn new(
        card: &CardSpec,
        gap: f64,
        source_size: f64,
        options: LocateOptions,
    ) -> Result<Self> {
        check_gap(gap)?;
        if !(source_size.is_finite() && source_size > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "source size must be positive, got {source_size}"
            )));
        }
        Ok(Self {
            card: card.clone(),
            net: build_network(card, options.ambient)?,
            gap,
            source_size,
            options,
        })
    }

    pub fn source(&self, x: f64, y: f64, strength: f64) -> HeatSource {
        let patch = Patch::square(x, y, self.source_size, self.gap)
            .with_emissivity(self.options.emissivity);
        match self.options.kind {
            SourceKind::Temperature => HeatSource::prescribed(patch, strength),
            SourceKind::Power {
                resistance,
                capacitance,
            } => HeatSource::powered(patch, strength, resistance, capacitance),
        }
    }

    pub fn rises(&self, x: f64, y: f64, strength: f64) -> Result<Vec<f64>> {
        Ok(rise_map_on(
            &self.net,
            &self.card,
            &self.source(x, y, strength),
            self.gap,
        )?
        .rises)
    }

    fn reference_strength(&self) -> f64 {
        match self.options.kind {
            SourceKind::Temperature => self.options.ambient + 40.0,
            SourceKind::Power { .. } => 1.0,
        }
    }

    /// Strength whose map is roughly `alpha` times the reference map.
    fn scaled_strength(&self, alpha: f64) -> f64 {
        match self.options.kind {
            SourceKind::Temperature => {
                let ta = (self.options.ambient + ZERO_CELSIUS).powi(4);
                let tr = (self.reference_strength() + ZERO_CELSIUS).powi(4);
                (ta + alpha * (tr - ta)).max(ta).powf(0.25) - ZERO_CELSIUS
            }
            SourceKind::Power { .. } => alpha * self.reference_strength(),
        }
    }

    fn strength_step(&self, s: f64) -> f64 {
        match self.options.kind {
            SourceKind::Temperature => {
                self.options.strength_step * (s - self.options.ambient).abs().max(1.0)
            }
            SourceKind::Power { .. } => self.options.strength_step * s.abs().max(1e-3),
        }
    }

    fn clamp(&self, p: Vector3<f64>) -> Vector3<f64> {
        let (hx, hy) = self.card.half_extent();
        let lim_x = hx + self.card.pitch;
        let lim_y = hy + self.card.pitch;
        let s = match self.options.kind {
            SourceKind::Temperature => {
                p[2].clamp(self.options.ambient + 1e-3, self.options.ambient + 1000.0)
            }
            SourceKind::Power { .. } => p[2].max(0.0),
        };
        Vector3::new(p[0].clamp(-lim_x, lim_x), p[1].clamp(-lim_y, lim_y), s)
    }
}

struct Candidate {
    x: f64,
    y: f64,
    rises: Vec<f64>,
}

/// Forward model plus the precomputed grid-search library.
pub struct Localizer {
    model: ForwardModel,
    grid: Vec<Candidate>,
}

impl Localizer {
    pub fn new(
        card: &CardSpec,
        gap: f64,
        source_size: f64,
        options: LocateOptions,
    ) -> Result<Self> {
        let model = ForwardModel::new(card, gap, source_size, options)?;
        let (hx, hy) = card.half_extent();
        let step = 0.5 * card.pitch;
        let nx = (2.0 * hx / step).round() as usize;
        let ny = (2.0 * hy / step).round() as usize;
        let s_ref = model.reference_strength();
        let mut grid = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                let x = -hx + i as f64 * step;
                let y = -hy + j as f64 * step;
                grid.push(Candidate {
                    x,
                    y,
                    rises: model.rises(x, y, s_ref)?,
                });
            }
        }
        Ok(Self { model, grid })
    }

    pub fn model(&self) -> &ForwardModel {
        &self.model
    }

    /// Grid point with the best scaled fit, as a starting point.
    pub fn seed(&self, map: &RiseMap) -> Result<Vector3<f64>> {
        let mut best: Option<(f64, Vector3<f64>)> = None;
        for cand in &self.grid {
            let (mut fm, mut ff) = (0.0, 0.0);
            for (i, (&m, &f)) in map.rises.iter().zip(&cand.rises).enumerate() {
                if !map.mask[i] {
                    fm += f * m;
                    ff += f * f;
                }
            }
            if ff == 0.0 {
                continue;
            }
            let alpha = fm / ff;
            if alpha <= 0.0 {
                continue;
            }
            let cost: f64 = map
                .rises
                .iter()
                .zip(&cand.rises)
                .zip(&map.mask)
                .filter(|(_, &masked)| !masked)
                .map(|((&m, &f), _)| (m - alpha * f).powi(2))
                .sum();
            if best.as_ref().is_none_or(|(c, _)| cost < *c) {
                best = Some((
                    cost,
                    Vector3::new(cand.x, cand.y, self.model.scaled_strength(alpha)),
                ));
            }
        }
        best.map(|(_, p)| p).ok_or(Error::NoDetection {
            noise_floor: self.model.options.noise_floor,
        })
    }

    fn residuals(&self, map: &RiseMap, p: &Vector3<f64>) -> Result<Vec<f64>> {
        let f = self.model.rises(p[0], p[1], p[2])?;
        Ok(map
            .rises
            .iter()
            .zip(&f)
            .zip(&map.mask)
            .filter(|(_, &masked)| !masked)
            .map(|((&m, &f), _)| m - f)
            .collect())
    }

    /// Jacobian of the forward rises (unmasked rows) by central differences.
    fn jacobian(&self, map: &RiseMap, p: &Vector3<f64>) -> Result<Vec<[f64; 3]>> {
        let steps = [
            self.model.options.position_step,
            self.model.options.position_step,
            self.model.strength_step(p[2]),
        ];
        let rows = map.mask.iter().filter(|m| !**m).count();
        let mut jac = vec![[0.0; 3]; rows];
        for (k, &h) in steps.iter().enumerate() {
            let mut plus = *p;
            let mut minus = *p;
            plus[k] += h;
            minus[k] -= h;
            // residual = m - f, so df = r(minus) - r(plus)
            let rp = self.residuals(map, &plus)?;
            let rm = self.residuals(map, &minus)?;
            for (row, (a, b)) in jac.iter_mut().zip(rp.iter().zip(&rm)) {
                row[k] = (b - a) / (2.0 * h);
            }
        }
        Ok(jac)
    }

    /// Refines the grid seed by damped Gauss–Newton.
    pub fn locate(&self, map: &RiseMap) -> Result<SourceEstimate> {
        map.check_card(&self.model.card)?;
        if (map.gap - self.model.gap).abs() > 1e-12 {
            return Err(Error::Precondition(format!(
                "map taken at {} m, model built for {} m",
                map.gap, self.model.gap
            )));
        }
        locate_argmax(map, self.model.options.noise_floor)?;

        let opts = self.model.options;
        let mut p = self.seed(map)?;
        let mut r = self.residuals(map, &p)?;
        let mut cost: f64 = r.iter().map(|v| v * v).sum();
        let mut converged = false;
        let mut polish = 0usize;
        let mut iterations = 0usize;
        let mut last_jtj = Matrix3::zeros();

        while iterations < opts.max_iterations {
            iterations += 1;
            let jac = self.jacobian(map, &p)?;
            let mut jtj = Matrix3::zeros();
            let mut jtr = Vector3::zeros();
            for (row, &res) in jac.iter().zip(&r) {
                let j = Vector3::new(row[0], row[1], row[2]);
                jtj += j * j.transpose();
                jtr += j * res;
            }
            last_jtj = jtj;
            let delta = match jtj.lu().solve(&jtr) {
                Some(d) => d,
                None => {
                    let mut reg = jtj;
                    for i in 0..3 {
                        reg[(i, i)] += 1e-9 * jtj[(i, i)].max(1e-300);
                    }
                    match reg.lu().solve(&jtr) {
                        Some(d) => d,
                        None => break,
                    }
                }
            };

            let mut lambda = 1.0;
            let mut accepted = None;
            for _ in 0..12 {
                let trial = self.model.clamp(p + delta * lambda);
                let r_trial = self.residuals(map, &trial)?;
                let c_trial: f64 = r_trial.iter().map(|v| v * v).sum();
                if c_trial < cost {
                    accepted = Some((trial, r_trial, c_trial));
                    break;
                }
                lambda *= 0.5;
            }
            let Some((trial, r_trial, c_trial)) = accepted else {
                // No descent left: the current point is as good as this model gets.
                converged = true;
                break;
            };
            let step = ((trial[0] - p[0]).powi(2) + (trial[1] - p[1]).powi(2)).sqrt();
            let improvement = c_trial / cost;
            p = trial;
            r = r_trial;
            cost = c_trial;
            if converged {
                polish += 1;
                if improvement > 0.5 || polish >= 5 {
                    break;
                }
            } else if step < opts.step_tolerance {
                converged = true;
            }
        }

        let n = r.len();
        let dof = n.saturating_sub(3).max(1) as f64;
        let s2 = cost / dof;
        let covariance = match last_jtj.try_inverse() {
            Some(inv) => [
                [inv[(0, 0)] * s2, inv[(0, 1)] * s2],
                [inv[(1, 0)] * s2, inv[(1, 1)] * s2],
            ],
            None => [[f64::INFINITY, 0.0], [0.0, f64::INFINITY]],
        };
        Ok(SourceEstimate {
            x: p[0],
            y: p[1],
            strength: p[2],
            residual: (cost / n.max(1) as f64).sqrt(),
            covariance,
            converged,
            iterations,
        })
    }
}

/// One-shot localization with default options.
pub fn locate_refined(
    map: &RiseMap,
    card: &CardSpec,
    gap: f64,
    source_size: f64,
) -> Result<SourceEstimate> {
    Localizer::new(card, gap, source_size, LocateOptions::default())?.locate(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(values: &[f64]) -> RiseMap {
        RiseMap::new(4, 4, values.to_vec(), 0.010).unwrap()
    }

    #[test]
    fn argmax_finds_unique_maximum() {
        let mut v = vec![0.5; 16];
        v[5] = 3.0;
        let a = locate_argmax(&map(&v), 0.2).unwrap();
        assert_eq!((a.row, a.col, a.tie), (1, 1, false));
    }

    #[test]
    fn all_zero_map_is_no_detection() {
        assert!(matches!(
            locate_argmax(&map(&[0.0; 16]), 0.2),
            Err(Error::NoDetection { .. })
        ));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let mut v = vec![0.5; 16];
        v[1] = 2.0;
        v[5] = 2.0;
        let a = locate_argmax(&map(&v), 0.2).unwrap();
        assert_eq!((a.row, a.col, a.tie), (0, 1, true));
    }

    #[test]
    fn masked_pixels_are_ignored() {
        let mut v = vec![0.5; 16];
        v[3] = 9.0;
        let mut m = map(&v);
        m.mask_pixel(0, 3);
        let a = locate_argmax(&m, 0.2).unwrap();
        assert_eq!((a.row, a.col), (0, 0));
    }

    #[test]
    fn forward_rejects_close_gap() {
        let src = HeatSource::prescribed(Patch::square(0.0, 0.0, 0.01, 0.005), 60.0);
        assert!(matches!(
            forward_rise_map(&src, &CardSpec::default(), 0.005, 21.0),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn source_on_pixel_makes_it_the_argmax() {
        let card = CardSpec::default();
        let (x, y) = card.pixel_center(2, 1);
        let src = HeatSource::prescribed(Patch::square(x, y, 0.01, 0.01), 70.0);
        let m = forward_rise_map(&src, &card, 0.010, 21.0).unwrap();
        let a = locate_argmax(&m, 0.2).unwrap();
        assert_eq!((a.row, a.col, a.tie), (2, 1, false));
        assert!(m.rises.iter().all(|&r| r > 0.0));
    }
}

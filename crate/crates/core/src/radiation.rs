//! Diffuse view factors between parallel, axis-aligned rectangles and
//! two-surface gray-body exchange.
//!
//! All patches live in planes parallel to the card plane (z = 0). A patch's
//! `plane_gap` is the distance of its own plane from the card plane, so the
//! separation between two patches is `|a.plane_gap - b.plane_gap|`. The two
//! patches are assumed to face each other.
//!
//! The view factor is the four-dimensional integral
//!
//! ```text
//! F_ab = 1/A_a ∫_A_a ∫_A_b cosθ_a cosθ_b / (π s²) dA_b dA_a
//!      = 1/A_a ∫_A_a ∫_A_b h² / (π (Δx² + Δy² + h²)²) dA_b dA_a
//! ```
//!
//! evaluated with a tensor-product Gauss–Legendre rule on both surfaces.

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Stefan–Boltzmann constant, W·m⁻²·K⁻⁴.
pub const SIGMA: f64 = 5.670_374_419e-8;

/// Offset between degrees Celsius and kelvin.
pub const ZERO_CELSIUS: f64 = 273.15;

/// Smallest plane separation accepted by the view-factor kernel, meters.
pub const MIN_SEPARATION: f64 = 1e-3;

/// Default Gauss–Legendre points per axis and per surface.
pub const DEFAULT_ORDER: usize = 16;

/// Physical constants shared by the radiation formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    sigma: f64,
}

impl PhysicalConstants {
    pub const fn get() -> Self {
        Self { sigma: SIGMA }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// An axis-aligned radiating rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Patch {
    /// Center in the card-plane coordinates, meters.
    pub center_x: f64,
    pub center_y: f64,
    pub width: f64,
    pub height: f64,
    /// Distance of the patch plane from the card plane, meters.
    pub plane_gap: f64,
    pub emissivity: f64,
}

impl Patch {
    pub fn new(center_x: f64, center_y: f64, width: f64, height: f64, plane_gap: f64) -> Self {
        Self {
            center_x,
            center_y,
            width,
            height,
            plane_gap,
            emissivity: 0.95,
        }
    }

    pub fn square(center_x: f64, center_y: f64, size: f64, plane_gap: f64) -> Self {
        Self::new(center_x, center_y, size, size, plane_gap)
    }

    pub fn with_emissivity(mut self, emissivity: f64) -> Self {
        self.emissivity = emissivity;
        self
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.center_x,
            self.center_y,
            self.width,
            self.height,
            self.plane_gap,
            self.emissivity,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidGeometry("non-finite patch field".into()));
        }
        if self.width <= 0.0 || self.height <= 0.0 {
            return Err(Error::InvalidGeometry(format!(
                "patch dimensions must be positive, got {} x {}",
                self.width, self.height
            )));
        }
        if self.plane_gap < 0.0 {
            return Err(Error::InvalidGeometry(format!(
                "plane gap must be non-negative, got {}",
                self.plane_gap
            )));
        }
        if !(0.0..=1.0).contains(&self.emissivity) {
            return Err(Error::InvalidGeometry(format!(
                "emissivity must lie in [0, 1], got {}",
                self.emissivity
            )));
        }
        Ok(())
    }
}

/// Separation between the planes of two patches after validating both.
pub fn separation(a: &Patch, b: &Patch) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let h = (a.plane_gap - b.plane_gap).abs();
    if h < MIN_SEPARATION {
        return Err(Error::InvalidGeometry(format!(
            "plane separation {h} m is below the {MIN_SEPARATION} m minimum"
        )));
    }
    Ok(h)
}

/// Gauss–Legendre nodes and weights on [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds an `n`-point rule by Newton iteration on the Legendre
    /// polynomial roots.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "quadrature order must be at least 1");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nodes and weights mapped onto `[center - half, center + half]`.
    fn mapped(&self, center: f64, half: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&t, &w)| (center + half * t, half * w))
    }
}

/// Legendre polynomial P_n(x) and its derivative.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n = n as f64;
    let d = n * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn default_rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(DEFAULT_ORDER))
}

/// View factor with the default 16-point rule.
pub fn view_factor(a: &Patch, b: &Patch) -> Result<f64> {
    view_factor_with(a, b, default_rule())
}

/// View factor `F_ab` from `a` to `b` with an explicit quadrature rule.
pub fn view_factor_with(a: &Patch, b: &Patch, rule: &GaussLegendre) -> Result<f64> {
    let h = separation(a, b)?;
    Ok(coupling_integral(a, b, h, rule) / a.area())
}

/// `∫_A_a ∫_A_b kernel`, symmetric in its two patches.
fn coupling_integral(a: &Patch, b: &Patch, h: f64, rule: &GaussLegendre) -> f64 {
    let pairs = |ca: f64, ha: f64, cb: f64, hb: f64| -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(rule.order() * rule.order());
        for (xa, wa) in rule.mapped(ca, ha) {
            for (xb, wb) in rule.mapped(cb, hb) {
                let d = xa - xb;
                out.push((d * d, wa * wb));
            }
        }
        out
    };
    let xs = pairs(a.center_x, 0.5 * a.width, b.center_x, 0.5 * b.width);
    let ys = pairs(a.center_y, 0.5 * a.height, b.center_y, 0.5 * b.height);
    let h2 = h * h;

    let mut total = 0.0;
    for &(dy2, wy) in &ys {
        let base = dy2 + h2;
        let mut row = 0.0;
        for &(dx2, wx) in &xs {
            let s2 = dx2 + base;
            row += wx / (s2 * s2);
        }
        total += wy * row;
    }
    total * h2 / std::f64::consts::PI
}

fn kelvin_checked(t: f64, what: &str) -> Result<f64> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::Domain(format!(
            "{what} must be a positive absolute temperature, got {t} K"
        )));
    }
    Ok(t)
}

/// Net gray-body power from `a` to `b`, watts. Positive means a → b.
///
/// Temperatures are absolute (K). Inter-reflections are neglected.
pub fn exchange_power(a: &Patch, t_a: f64, b: &Patch, t_b: f64) -> Result<f64> {
    let f = view_factor(a, b)?;
    exchange_power_with_factor(a, t_a, b, t_b, f)
}

/// [`exchange_power`] with a precomputed view factor `F_ab`.
pub fn exchange_power_with_factor(
    a: &Patch,
    t_a: f64,
    b: &Patch,
    t_b: f64,
    factor: f64,
) -> Result<f64> {
    let t_a = kelvin_checked(t_a, "T_a")?;
    let t_b = kelvin_checked(t_b, "T_b")?;
    let sigma = PhysicalConstants::get().sigma();
    Ok(sigma * a.area() * factor * a.emissivity * b.emissivity * (t_a.powi(4) - t_b.powi(4)))
}

/// Linearized exchange conductance `4σ A_a F_ab ε_a ε_b T_mean³`, W/K.
pub fn radiation_conductance(a: &Patch, b: &Patch, t_mean: f64) -> Result<f64> {
    let f = view_factor(a, b)?;
    radiation_conductance_with_factor(a, b, t_mean, f)
}

pub fn radiation_conductance_with_factor(
    a: &Patch,
    b: &Patch,
    t_mean: f64,
    factor: f64,
) -> Result<f64> {
    let t = kelvin_checked(t_mean, "T_mean")?;
    Ok(4.0 * SIGMA * a.area() * factor * a.emissivity * b.emissivity * t.powi(3))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coaxial(size: f64, gap: f64) -> (Patch, Patch) {
        (
            Patch::square(0.0, 0.0, size, 0.0),
            Patch::square(0.0, 0.0, size, gap),
        )
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let rule = GaussLegendre::new(16);
        // degree 2n-1 = 31 is exact; check x^30 on [-1, 1] = 2/31.
        let s: f64 = rule
            .nodes()
            .iter()
            .zip(rule.weights())
            .map(|(x, w)| w * x.powi(30))
            .sum();
        assert!((s - 2.0 / 31.0).abs() < 1e-14);
        let wsum: f64 = rule.weights().iter().sum();
        assert!((wsum - 2.0).abs() < 1e-14);
    }

    #[test]
    fn odd_order_rule_has_center_node() {
        let rule = GaussLegendre::new(5);
        assert!(rule.nodes()[2].abs() < 1e-15);
        assert!((rule.weights()[2] - 128.0 / 225.0).abs() < 1e-14);
    }

    #[test]
    fn far_field_matches_point_patch_limit() {
        let (a, b) = coaxial(0.010, 1.0);
        let f = view_factor(&a, &b).unwrap();
        let limit = b.area() / (std::f64::consts::PI * 1.0);
        assert!(((f - limit) / limit).abs() < 0.02, "{f} vs {limit}");
        assert!((limit - 3.18e-5).abs() < 1e-7);
    }

    #[test]
    fn rejects_bad_geometry() {
        let (a, mut b) = coaxial(0.01, 0.01);
        b.width = 0.0;
        assert!(matches!(
            view_factor(&a, &b),
            Err(Error::InvalidGeometry(_))
        ));
        let (a, b) = coaxial(0.01, 0.0005);
        assert!(matches!(
            view_factor(&a, &b),
            Err(Error::InvalidGeometry(_))
        ));
        let (a, mut b) = coaxial(0.01, 0.01);
        b.emissivity = 1.5;
        assert!(matches!(
            view_factor(&a, &b),
            Err(Error::InvalidGeometry(_))
        ));
    }

    #[test]
    fn equal_temperatures_exchange_nothing() {
        let (a, b) = coaxial(0.01, 0.01);
        assert_eq!(exchange_power(&a, 320.0, &b, 320.0).unwrap(), 0.0);
    }

    #[test]
    fn black_unit_exchange_matches_stefan_boltzmann() {
        let a = Patch::square(0.0, 0.0, 1.0, 0.0).with_emissivity(1.0);
        let b = Patch::square(0.0, 0.0, 1.0, 0.5).with_emissivity(1.0);
        let q = exchange_power_with_factor(&a, 373.15, &b, 273.15, 1.0).unwrap();
        assert!(((q - 783.6) / 783.6).abs() < 1e-3, "{q}");
    }

    #[test]
    fn non_emitting_surface_exchanges_nothing() {
        let (a, b) = coaxial(0.01, 0.01);
        let a = a.with_emissivity(0.0);
        assert_eq!(exchange_power(&a, 400.0, &b, 300.0).unwrap(), 0.0);
    }

    #[test]
    fn non_physical_temperature_is_a_domain_error() {
        let (a, b) = coaxial(0.01, 0.01);
        assert!(matches!(
            exchange_power(&a, 0.0, &b, 300.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            radiation_conductance(&a, &b, -1.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn linearization_tracks_full_law() {
        let (a, b) = coaxial(0.01, 0.01);
        let t = 320.0;
        let g = radiation_conductance(&a, &b, t).unwrap();
        let q = exchange_power(&a, t + 1.0, &b, t - 1.0).unwrap();
        assert!(((g * 2.0 - q) / q).abs() < 0.01);
    }

    #[test]
    fn conductance_scales_cubically() {
        let (a, b) = coaxial(0.01, 0.01);
        let g1 = radiation_conductance(&a, &b, 300.0).unwrap();
        let g2 = radiation_conductance(&a, &b, 600.0).unwrap();
        assert!((g2 / g1 - 8.0).abs() < 1e-12);
        assert_eq!(
            radiation_conductance_with_factor(&a, &b, 300.0, 0.0).unwrap(),
            0.0
        );
    }

    #[test]
    fn view_factor_decreases_with_gap() {
        let mut last = f64::INFINITY;
        for i in 0..=60 {
            let gap = 0.005 * (100.0f64).powf(i as f64 / 60.0);
            let (a, b) = coaxial(0.01, gap);
            let f = view_factor(&a, &b).unwrap();
            assert!(f > 0.0 && f < 1.0);
            assert!(f < last, "not decreasing at gap {gap}");
            last = f;
        }
    }
}

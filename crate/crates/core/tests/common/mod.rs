//! Independent oracles shared by the integration tests. Nothing here calls
//! into the quadrature or solver code it is used to check.
#![allow(dead_code)]

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};

/// A facing rectangle in one of two parallel planes: (cx, cy, w, h, z).
#[derive(Debug, Clone, Copy)]
pub struct Rect {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub z: f64,
}

/// Monte Carlo ray-sampling estimate of the view factor from `a` to `b`.
///
/// Emission points are uniform on `a`, directions are cosine-weighted (Malley's method)
/// toward the plane of `b`; the estimate is the fraction of rays that land
/// inside `b`.
pub fn monte_carlo_view_factor(a: Rect, b: Rect, rays: u64, seed: u64) -> f64 {
    let mut rng = SmallRng::seed_from_u64(seed);
    let gap = (b.z - a.z).abs();
    let (bx0, bx1) = (b.cx - 0.5 * b.w, b.cx + 0.5 * b.w);
    let (by0, by1) = (b.cy - 0.5 * b.h, b.cy + 0.5 * b.h);
    let mut hits = 0u64;
    for _ in 0..rays {
        let px = a.cx + a.w * (rng.random::<f64>() - 0.5);
        let py = a.cy + a.h * (rng.random::<f64>() - 0.5);
        // Malley's method: uniform in the unit disk, lifted to the hemisphere.
        let (dx, dy) = loop {
            let dx = 2.0 * rng.random::<f64>() - 1.0;
            let dy = 2.0 * rng.random::<f64>() - 1.0;
            if dx * dx + dy * dy < 1.0 {
                break (dx, dy);
            }
        };
        let dz = (1.0 - dx * dx - dy * dy).sqrt();
        let t = gap / dz;
        let x = px + t * dx;
        let y = py + t * dy;
        if x >= bx0 && x <= bx1 && y >= by0 && y <= by1 {
            hits += 1;
        }
    }
    hits as f64 / rays as f64
}

/// Closed-form view factor between parallel, axis-aligned rectangles
/// (contour-integral result summed over the 16 corner combinations).
pub fn analytic_view_factor(a: Rect, b: Rect) -> f64 {
    let z = (b.z - a.z).abs();
    let g = |x: f64, y: f64| -> f64 {
        let z2 = z * z;
        let mut v = 0.0;
        let sx = (x * x + z2).sqrt();
        let sy = (y * y + z2).sqrt();
        if y != 0.0 {
            v += y * sx * (y / sx).atan();
        }
        if x != 0.0 {
            v += x * sy * (x / sy).atan();
        }
        v -= 0.5 * z2 * (x * x + y * y + z2).ln();
        v / (2.0 * std::f64::consts::PI)
    };
    let xa = [a.cx - 0.5 * a.w, a.cx + 0.5 * a.w];
    let ya = [a.cy - 0.5 * a.h, a.cy + 0.5 * a.h];
    let xb = [b.cx - 0.5 * b.w, b.cx + 0.5 * b.w];
    let yb = [b.cy - 0.5 * b.h, b.cy + 0.5 * b.h];
    let mut sum = 0.0;
    for (i, &x1) in xa.iter().enumerate() {
        for (j, &y1) in ya.iter().enumerate() {
            for (k, &x2) in xb.iter().enumerate() {
                for (l, &y2) in yb.iter().enumerate() {
                    let sign = if (i + j + k + l) % 2 == 0 { 1.0 } else { -1.0 };
                    sum += sign * g(x1 - x2, y1 - y2);
                }
            }
        }
    }
    sum / (a.w * a.h)
}

/// Analytic response of a single RC node driven by a constant power step.
pub fn rc_step(power: f64, conductance: f64, capacitance: f64, t: f64) -> f64 {
    let tau = capacitance / conductance;
    power / conductance * (1.0 - (-t / tau).exp())
}

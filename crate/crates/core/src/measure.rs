//! Haar-measure estimation: exact closed forms where the geometry admits
//! them, Monte Carlo with Wilson confidence intervals elsewhere, and the
//! bracket type shared by the cell machinery.

use rand::Rng;
use serde::Serialize;

use crate::group::{GroupDescriptor, GroupElement, GroupFamily};
use crate::subgroup::SubgroupDescriptor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MeasureMethod {
    Exact,
    CellBracket,
    MonteCarlo,
}

/// A two-sided estimate of a Haar measure. `certified` means the interval
/// is a hard bound (exact formula or sound cell bracket), not a confidence
/// interval.
#[derive(Debug, Clone, Serialize)]
pub struct MeasureEstimate {
    pub lower: f64,
    pub upper: f64,
    pub method: MeasureMethod,
    pub mc_stderr: Option<f64>,
    pub certified: bool,
}

impl MeasureEstimate {
    pub fn exact(v: f64) -> Self {
        MeasureEstimate {
            lower: v,
            upper: v,
            method: MeasureMethod::Exact,
            mc_stderr: None,
            certified: true,
        }
    }

    pub fn cell_bracket(lower: f64, upper: f64) -> Self {
        MeasureEstimate {
            lower,
            upper,
            method: MeasureMethod::CellBracket,
            mc_stderr: None,
            certified: true,
        }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

const Z95: f64 = 1.959964;

/// Monte Carlo measure of a predicate under Haar, reported as a Wilson 95%
/// interval.
pub fn mc_measure<R: Rng, F: Fn(&GroupElement) -> bool>(
    group: &GroupDescriptor,
    rng: &mut R,
    samples: usize,
    pred: F,
) -> MeasureEstimate {
    let mut hits = 0usize;
    for _ in 0..samples {
        let g = group.haar_sample_one(rng);
        if pred(&g) {
            hits += 1;
        }
    }
    wilson_interval(hits, samples)
}

/// Wilson score interval at 95% for `hits` successes out of `n`.
pub fn wilson_interval(hits: usize, n: usize) -> MeasureEstimate {
    let n_f = n as f64;
    let p = hits as f64 / n_f;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = Z95 * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    MeasureEstimate {
        lower: (center - half).max(0.0),
        upper: (center + half).min(1.0),
        method: MeasureMethod::MonteCarlo,
        mc_stderr: Some((p * (1.0 - p) / n_f).sqrt()),
        certified: false,
    }
}

/// Exact Haar measure of the metric ball B(e, r) (normalized radius), when
/// a closed form exists.
pub fn exact_ball_measure(group: &GroupDescriptor, r: f64) -> Option<f64> {
    if r <= 0.0 {
        return Some(0.0);
    }
    if r >= 1.0 {
        return Some(1.0);
    }
    match &group.family {
        GroupFamily::Su2 => {
            // S^3 geodesic cap: density (2/pi) sin^2 t on [0, pi]
            let t = r * std::f64::consts::PI;
            Some((t - t.sin() * t.cos()) / std::f64::consts::PI)
        }
        GroupFamily::So3 | GroupFamily::SOn(3) => {
            // rotation-angle density (1 - cos t)/pi on [0, pi]
            let t = r * std::f64::consts::PI;
            Some((t - t.sin()) / std::f64::consts::PI)
        }
        GroupFamily::Torus(d) => {
            let r_raw = r / group.metric_scale;
            if 2.0 * r_raw <= 1.0 {
                // ball injects into the fundamental domain: Euclidean volume
                Some(unit_ball_volume(*d) * r_raw.powi(*d as i32))
            } else if r_raw * r_raw >= 0.25 * (*d as f64) {
                Some(1.0)
            } else {
                None // wrap-around regime, no elementary closed form for d >= 2
            }
        }
        _ => None,
    }
}

/// Exact Haar measure of the tube {g : d(g, H) < delta}, when available.
pub fn exact_tube_measure(subgroup: &SubgroupDescriptor, delta: f64) -> Option<f64> {
    if delta <= 0.0 {
        return Some(0.0);
    }
    let g = &subgroup.ambient;
    match (&g.family, subgroup.name.split('@').next().unwrap()) {
        (GroupFamily::So3, "so2_z") => {
            // d(q, H) < delta  <=>  x^2 + y^2 < sin^2(delta*pi/2), and the sum
            // of two squared coordinates of a uniform point on S^3 is uniform
            let s = (delta * std::f64::consts::PI / 2.0).min(std::f64::consts::PI / 2.0);
            Some(s.sin().powi(2))
        }
        (GroupFamily::Su2, "u1") => {
            let s = (delta * std::f64::consts::PI).min(std::f64::consts::PI / 2.0);
            Some(s.sin().powi(2))
        }
        (GroupFamily::Torus(_), _) => {
            let d_raw = delta / g.metric_scale;
            Some((2.0 * d_raw).min(1.0)) // = delta * sqrt(d), capped
        }
        _ => None,
    }
}

/// Exact measure of the rectangle R(h, delta, rho) = {exp(n) h' : n normal,
/// |n| < delta, d_H(h', h) < rho}. The normal coordinates are distributed
/// independently of the foot point for these homogeneous pairs, so the
/// measure factors into tube x intrinsic ball.
pub fn exact_rect_measure(subgroup: &SubgroupDescriptor, delta: f64, rho: f64) -> Option<f64> {
    let tube = exact_tube_measure(subgroup, delta)?;
    match subgroup.ambient.family {
        GroupFamily::SOn(_) => None,
        _ => Some(tube * subgroup.ball_measure(rho)),
    }
}

fn unit_ball_volume(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI / 3.0,
        4 => std::f64::consts::PI * std::f64::consts::PI / 2.0,
        _ => unreachable!("torus dimension <= 4"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subgroup::builtin_subgroup;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Radial quadrature oracle: integrate the angle density numerically.
    fn ball_quadrature(density: impl Fn(f64) -> f64, t: f64) -> f64 {
        let n = 20_000;
        let h = t / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let s = (i as f64 + 0.5) * h;
            acc += density(s) * h;
        }
        acc
    }

    #[test]
    fn su2_ball_matches_quadrature() {
        for r in [0.1, 0.3, 0.55, 0.9] {
            let t = r * std::f64::consts::PI;
            let q = ball_quadrature(|s| 2.0 / std::f64::consts::PI * s.sin().powi(2), t);
            let e = exact_ball_measure(&GroupDescriptor::su2(), r).unwrap();
            assert!((q - e).abs() < 1e-7, "r={r}: quad {q} exact {e}");
        }
    }

    #[test]
    fn so3_ball_matches_quadrature() {
        for r in [0.1, 0.3, 0.55, 0.9] {
            let t = r * std::f64::consts::PI;
            let q = ball_quadrature(|s| (1.0 - s.cos()) / std::f64::consts::PI, t);
            let e = exact_ball_measure(&GroupDescriptor::so3(), r).unwrap();
            assert!((q - e).abs() < 1e-7, "r={r}: quad {q} exact {e}");
        }
    }

    #[test]
    fn ball_measures_agree_with_monte_carlo() {
        let mut r = rng(11);
        for (g, rad) in [
            (GroupDescriptor::su2(), 0.35),
            (GroupDescriptor::so3(), 0.35),
            (GroupDescriptor::torus(2), 0.2),
            (GroupDescriptor::torus(3), 0.25),
        ] {
            let e = exact_ball_measure(&g, rad).unwrap();
            let id = g.identity();
            let mc = mc_measure(&g, &mut r, 200_000, |x| g.distance(x, &id) < rad);
            assert!(
                mc.lower - 1e-3 <= e && e <= mc.upper + 1e-3,
                "{}: exact {e} mc [{}, {}]",
                g.name(),
                mc.lower,
                mc.upper
            );
        }
    }

    #[test]
    fn torus_wraparound_regime_returns_none() {
        let g = GroupDescriptor::torus(2);
        // r_raw between 1/2 and sqrt(2)/2
        assert!(exact_ball_measure(&g, 0.8).is_none());
        assert_eq!(exact_ball_measure(&g, 1.2), Some(1.0));
    }

    #[test]
    fn tube_measures_agree_with_monte_carlo() {
        let mut r = rng(12);
        for (g, name, delta) in [
            (GroupDescriptor::so3(), "so2_z", 0.12),
            (GroupDescriptor::su2(), "u1", 0.1),
            (GroupDescriptor::torus(3), "t2_xy", 0.15),
        ] {
            let h = builtin_subgroup(&g, name).unwrap();
            let e = exact_tube_measure(&h, delta).unwrap();
            let mc = mc_measure(&g, &mut r, 200_000, |x| h.distance_to(x) < delta);
            assert!(
                mc.lower - 1e-3 <= e && e <= mc.upper + 1e-3,
                "{name}: exact {e} mc [{}, {}]",
                mc.lower,
                mc.upper
            );
        }
    }

    #[test]
    fn rect_measure_agrees_with_monte_carlo() {
        let g = GroupDescriptor::so3();
        let h = builtin_subgroup(&g, "so2_z").unwrap();
        let (delta, rho) = (0.1, 0.3);
        let center = g.identity();
        let e = exact_rect_measure(&h, delta, rho).unwrap();
        let mut r = rng(13);
        let mc = mc_measure(&g, &mut r, 300_000, |x| {
            h.distance_to(x) < delta && g.distance(&h.project(x), &center) < rho
        });
        assert!(
            mc.lower - 1.5e-3 <= e && e <= mc.upper + 1.5e-3,
            "exact {e} mc [{}, {}]",
            mc.lower,
            mc.upper
        );
    }

    #[test]
    fn wilson_interval_basics() {
        let est = wilson_interval(500, 1000);
        assert!(est.contains(0.5));
        assert!(est.width() < 0.07);
        assert!(!est.certified);
        let zero = wilson_interval(0, 1000);
        assert!(zero.lower < 1e-12 && zero.upper < 0.01);
        let full = wilson_interval(1000, 1000);
        assert!(full.upper == 1.0 && full.lower > 0.99);
    }

    #[test]
    fn exact_estimate_helpers() {
        let e = MeasureEstimate::exact(0.25);
        assert_eq!(e.midpoint(), 0.25);
        assert_eq!(e.width(), 0.0);
        assert!(e.certified);
        let b = MeasureEstimate::cell_bracket(0.2, 0.3);
        assert!(b.contains(0.25) && !b.contains(0.35));
    }
}

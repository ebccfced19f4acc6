//! Shape diagnostics for near-minimal-doubling sets: tube fitting over
//! conjugator searches, slice evenness, ray profiles in the chart, the
//! approximate-subgroup scale spectrum, Ruzsa-style coverings, and the
//! commutator-shrinking probe.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;
use std::sync::Arc;

use crate::cellset::CellSet;
use crate::error::{Error, Result};
use crate::group::{AlgebraVector, GroupDescriptor, GroupElement};
use crate::region::SetRegion;
use crate::subgroup::{builtin_names, builtin_subgroup, SubgroupDescriptor};
use crate::transport::PointCloud;

/// Best tube neighborhood gH_{delta'}g^{-1} fitted to a cell set.
#[derive(Debug, Clone)]
pub struct TubeFit {
    pub subgroup: Arc<SubgroupDescriptor>,
    pub conjugator: GroupElement,
    pub delta_prime: f64,
    /// mu(H_{delta'} symdiff A) / mu(H_{delta'}) at cell resolution
    pub symdiff_ratio: f64,
    pub tube_measure: f64,
    /// (candidate index, best symdiff score) per coarse candidate
    pub search_trace: Vec<(usize, f64)>,
}

/// Score one conjugate: sweep delta' over the sorted cell distances and
/// return the minimum symdiff ratio. Cell membership in A is its outer flag,
/// so the score is the bracket-midpoint symdiff at net resolution.
fn score_conjugate(a: &CellSet, sub: &SubgroupDescriptor) -> (f64, f64) {
    let net = &a.net;
    let n = net.len();
    let mut order: Vec<(f64, usize)> = (0..n)
        .map(|i| (sub.distance_to(&net.centers[i]), i))
        .collect();
    order.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let a_mass: f64 = (0..n).filter(|&i| a.outer[i]).map(|i| net.weights[i]).sum();
    let mut tube_mass = 0.0;
    let mut overlap = 0.0;
    let mut best = (f64::INFINITY, 0.0);
    for (j, &(d, i)) in order.iter().enumerate() {
        tube_mass += net.weights[i];
        if a.outer[i] {
            overlap += net.weights[i];
        }
        if d <= 0.0 || d >= 0.5 {
            continue;
        }
        // only evaluate once per distinct threshold so ties stay atomic
        if j + 1 < n && order[j + 1].0 <= d + 1e-15 {
            continue;
        }
        if tube_mass <= 0.0 {
            continue;
        }
        let ratio = (tube_mass - overlap + a_mass - overlap) / tube_mass;
        if ratio < best.0 {
            best = (ratio, d);
        }
    }
    best
}

/// Fit a conjugated tube to A over every catalogued subgroup: a coarse Haar
/// grid of conjugators, then local refinement with shrinking steps.
/// Deterministic for a fixed seed; argmin ties break by candidate index.
pub fn fit_tube(a: &CellSet, n_candidates: usize, seed: u64) -> Result<TubeFit> {
    let group = &a.net.group;
    if a.measure().upper <= 0.0 {
        return Err(Error::NullMeasure("cannot fit a tube to an empty set".into()));
    }
    let names = builtin_names(group);
    if names.is_empty() {
        return Err(Error::UnknownSubgroup {
            name: "<any>".into(),
            group: group.name(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<TubeFit> = None;
    for name in names {
        let base = builtin_subgroup(group, &name)?;
        let mut candidates = vec![group.identity()];
        candidates.extend(group.haar_sample(&mut rng, n_candidates.saturating_sub(1)));
        let scored: Vec<(f64, f64)> = candidates
            .par_iter()
            .map(|k| score_conjugate(a, &base.conjugated(k)))
            .collect();
        let trace: Vec<(usize, f64)> = scored.iter().map(|(r, _)| *r).enumerate().collect();
        let mut best_idx = 0;
        for (i, s) in scored.iter().enumerate() {
            if s.0 < scored[best_idx].0 {
                best_idx = i;
            }
        }
        let mut k = candidates[best_idx].clone();
        let (mut ratio, mut delta) = scored[best_idx];
        // refinement: move toward random elements by shrinking fractions
        for step in [0.2, 0.07, 0.02, 0.007] {
            for _ in 0..40 {
                let u = group.haar_sample_one(&mut rng);
                let x = match group.log_map(&u) {
                    Ok(x) => x,
                    Err(_) => continue, // cut-locus sample, try another
                };
                let Ok(k_new) = group.multiply(&k, &group.exp_map(&x.scaled(step))) else {
                    continue;
                };
                let (r_new, d_new) = score_conjugate(a, &base.conjugated(&k_new));
                if r_new < ratio {
                    ratio = r_new;
                    delta = d_new;
                    k = k_new;
                }
            }
        }
        let sub = base.conjugated(&k);
        let tube_measure: f64 = {
            let net = &a.net;
            (0..net.len())
                .filter(|&i| sub.distance_to(&net.centers[i]) <= delta)
                .map(|i| net.weights[i])
                .sum()
        };
        let fit = TubeFit {
            subgroup: sub,
            conjugator: k,
            delta_prime: delta,
            symdiff_ratio: ratio,
            tube_measure,
            search_trace: trace,
        };
        if best.as_ref().map_or(true, |b| fit.symdiff_ratio < b.symdiff_ratio) {
            best = Some(fit);
        }
    }
    Ok(best.expect("nonempty catalog"))
}

#[derive(Debug, Clone, Serialize)]
pub struct SliceEntry {
    pub h_index: usize,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SliceProfile {
    pub entries: Vec<SliceEntry>,
    /// min_i lower(mu(A_{h_i,rho})) / max_i upper(mu(A_{h_i,rho}))
    pub evenness: f64,
}

impl SliceProfile {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "h_index,lower,upper")?;
        for e in &self.entries {
            writeln!(w, "{},{},{}", e.h_index, e.lower, e.upper)?;
        }
        Ok(())
    }
}

/// Measure brackets of the slices A_{h,rho} = A inter R(h, delta, rho) over
/// n_h Haar samples h of the subgroup, with the worst-case evenness ratio.
pub fn slice_profile(
    a: &CellSet,
    subgroup: &Arc<SubgroupDescriptor>,
    delta: f64,
    rho: f64,
    n_h: usize,
    seed: u64,
) -> Result<SliceProfile> {
    let net = &a.net;
    for i in 0..net.len() {
        if a.outer[i] && subgroup.distance_to(&net.centers[i]) > delta + net.cell_radius {
            return Err(Error::ContainmentViolated(format!(
                "outer cell {i} lies {:.4} from the subgroup, outside the {delta} tube",
                subgroup.distance_to(&net.centers[i])
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(n_h);
    let mut min_lower = f64::INFINITY;
    let mut max_upper = 0.0f64;
    for h_index in 0..n_h {
        let h = subgroup.haar_h_one(&mut rng);
        let rect = SetRegion::rect(subgroup.clone(), h, delta, rho);
        let m = a.slice(&rect)?.measure();
        min_lower = min_lower.min(m.lower);
        max_upper = max_upper.max(m.upper);
        entries.push(SliceEntry {
            h_index,
            lower: m.lower,
            upper: m.upper,
        });
    }
    let evenness = if max_upper > 0.0 {
        min_lower / max_upper
    } else {
        0.0
    };
    Ok(SliceProfile { entries, evenness })
}

#[derive(Debug, Clone, Serialize)]
pub struct RayEntry {
    pub direction: Vec<f64>,
    /// first and last hit along the ray
    pub t_min: f64,
    pub t_max: f64,
    /// covered fraction of the hull interval [0, t_max]
    pub density: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RayProfile {
    pub rays: Vec<RayEntry>,
    pub pass_fraction: f64,
}

impl RayProfile {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "ray,t_min,t_max,density,pass")?;
        for (i, r) in self.rays.iter().enumerate() {
            writeln!(w, "{i},{},{},{},{}", r.t_min, r.t_max, r.density, r.pass)?;
        }
        Ok(())
    }
}

/// Per-direction interval fits of a chart point cloud: directions are
/// sampled through cloud points; each ray gathers the points within `width`
/// of it, takes the hull interval from the origin, and reports the covered
/// density. A ray passes when it is long (>= rho_min) and dense (>= 1-eps).
pub fn ray_profile(
    cloud: &PointCloud,
    width: f64,
    rho_min: f64,
    eps: f64,
    n_dirs: usize,
    seed: u64,
) -> Result<RayProfile> {
    let usable: Vec<usize> = (0..cloud.len())
        .filter(|&i| cloud.points[i].norm() >= 0.3 * cloud.radius)
        .collect();
    if usable.is_empty() {
        return Err(Error::Invalid(
            "no points far enough from the origin to define rays".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs: Vec<AlgebraVector> = (0..n_dirs)
        .map(|_| {
            let p = &cloud.points[usable[rng.gen_range(0..usable.len())]];
            p.scaled(1.0 / p.norm())
        })
        .collect();
    let rays: Vec<RayEntry> = dirs
        .par_iter()
        .map(|a| {
            let mut ts: Vec<f64> = cloud
                .points
                .iter()
                .filter_map(|p| {
                    let t = p.dot(a);
                    if t < 0.0 {
                        return None;
                    }
                    let n2 = p.dot(p);
                    let perp2 = (n2 - t * t).max(0.0);
                    (perp2 <= width * width).then_some(t)
                })
                .collect();
            ts.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let t_min = *ts.first().expect("defining point hits its own ray");
            let t_max = *ts.last().unwrap();
            // union of [t-width, t+width] clipped to the hull [0, t_max]
            let mut covered = 0.0;
            let mut cur_lo = (ts[0] - width).max(0.0);
            let mut cur_hi = (ts[0] + width).min(t_max);
            for &t in &ts[1..] {
                let lo = (t - width).max(0.0);
                if lo <= cur_hi {
                    cur_hi = cur_hi.max((t + width).min(t_max));
                } else {
                    covered += cur_hi - cur_lo;
                    cur_lo = lo;
                    cur_hi = (t + width).min(t_max);
                }
            }
            covered += cur_hi - cur_lo;
            let density = if t_max > 0.0 { covered / t_max } else { 0.0 };
            let pass = t_max >= rho_min && density >= 1.0 - eps;
            RayEntry {
                direction: a.coords.clone(),
                t_min,
                t_max,
                density,
                pass,
            }
        })
        .collect();
    let pass_fraction = rays.iter().filter(|r| r.pass).count() as f64 / rays.len() as f64;
    Ok(RayProfile {
        rays,
        pass_fraction,
    })
}

#[derive(Debug, Clone)]
pub struct Covering {
    pub translates: Vec<GroupElement>,
    pub count: usize,
    /// upper(mu(AB)) / lower(mu(B)), the Ruzsa bound on |F|
    pub ratio_bound: f64,
    pub within_bound: bool,
}

/// Greedy Ruzsa covering: pick uncovered cells of A as translates f and
/// cover with f BB^{-1}; the selected translates have pairwise-disjoint fB,
/// so |F| <= mu(AB)/mu(B) up to cell resolution.
pub fn covering_number(a: &CellSet, b: &CellSet) -> Result<Covering> {
    let lower_b = b.measure().lower;
    if lower_b <= 0.0 {
        return Err(Error::NullMeasure(
            "covering needs a set B with positive certified measure".into(),
        ));
    }
    let bb = b.minkowski_product(&b.inverse())?;
    let net = &a.net;
    let mut covered = vec![false; net.len()];
    let mut translates = Vec::new();
    for i in 0..net.len() {
        if !a.outer[i] || covered[i] {
            continue;
        }
        let f = net.centers[i].clone();
        let t = bb.translate(&f, true);
        for (c, o) in covered.iter_mut().zip(&t.outer) {
            *c |= o;
        }
        debug_assert!(covered[i], "a translate must cover its own base cell");
        translates.push(f);
    }
    let ab = a.minkowski_product(b)?;
    let ratio_bound = ab.measure().upper / lower_b;
    let count = translates.len();
    Ok(Covering {
        within_bound: (count as f64) <= ratio_bound + 1e-9,
        translates,
        count,
        ratio_bound,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ScaleSpectrum {
    /// strictly decreasing distinct scales r_f (clustered at 2 r_net)
    pub radii: Vec<f64>,
    /// translates with r_f >= radii[i], cumulative as the radius decreases
    pub covering_numbers: Vec<usize>,
    pub k_budget: f64,
    pub translate_count: usize,
    pub within_budget: bool,
    /// cell-wise checks of B_{r_i} inter Lambda^m subset Lambda^2 B_{r_{i+1}}
    pub inclusion_pass: Vec<bool>,
}

/// Scale diagnostic for an approximate group Lambda: cover Lambda^m by right
/// translates Lambda f, record the scales r_f = min_{lambda} d(e, lambda f),
/// and verify the displayed inclusion between consecutive scales on net
/// cells. A diagnostic only; failures are reported, not fatal.
pub fn scale_spectrum(lambda: &CellSet, m: usize, k_budget: f64) -> Result<ScaleSpectrum> {
    if m < 2 {
        return Err(Error::Invalid("scale spectrum needs m >= 2".into()));
    }
    let net = &lambda.net;
    let lam = lambda.symmetrize();
    let e = net.group.identity();
    let (e_cell, _) = net.nearest(&e);
    if !lam.outer[e_cell] {
        return Err(Error::Invalid(
            "the identity cell must belong to the (symmetrized) set".into(),
        ));
    }
    let mut lam_m = lam.clone();
    for _ in 1..m {
        lam_m = lam_m.minkowski_product(&lam)?;
    }
    // greedy cover of Lambda^m by right translates Lambda f
    let mut covered = vec![false; net.len()];
    let mut translates = Vec::new();
    for i in 0..net.len() {
        if !lam_m.outer[i] || covered[i] {
            continue;
        }
        let f = net.centers[i].clone();
        let t = lam.translate(&f, false);
        for (c, o) in covered.iter_mut().zip(&t.outer) {
            *c |= o;
        }
        translates.push(f);
    }
    let lam_cells: Vec<usize> = (0..net.len()).filter(|&i| lam.outer[i]).collect();
    let r_fs: Vec<f64> = translates
        .par_iter()
        .map(|f| {
            lam_cells
                .iter()
                .map(|&i| {
                    let lf = net.group.multiply(&net.centers[i], f).expect("same group");
                    net.group.distance_to_identity(&lf)
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut sorted = r_fs.clone();
    sorted.sort_by(|x, y| y.partial_cmp(x).unwrap());
    let mut radii: Vec<f64> = Vec::new();
    for r in sorted {
        if radii.last().map_or(true, |&last| r < last - 2.0 * net.cell_radius) {
            radii.push(r);
        }
    }
    let covering_numbers: Vec<usize> = radii
        .iter()
        .map(|&r| r_fs.iter().filter(|&&x| x >= r - net.cell_radius).count())
        .collect();
    // inclusion checks between consecutive scales, with net slack
    let lam2 = lam.minkowski_product(&lam)?;
    let mut inclusion_pass = Vec::new();
    for w in radii.windows(2) {
        let (r_i, r_next) = (w[0], w[1]);
        let ball = SetRegion::ball(&net.group, e.clone(), r_next + 4.0 * net.cell_radius);
        let rhs = lam2.minkowski_product(&CellSet::discretize(&ball, net)?)?;
        let ok = (0..net.len()).all(|i| {
            !(lam_m.outer[i] && net.group.distance_to_identity(&net.centers[i]) <= r_i)
                || rhs.outer[i]
        });
        inclusion_pass.push(ok);
    }
    let budget = k_budget.powi(m as i32);
    Ok(ScaleSpectrum {
        radii,
        covering_numbers,
        k_budget,
        translate_count: translates.len(),
        within_budget: (translates.len() as f64) <= budget,
        inclusion_pass,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CommutatorReport {
    /// (ball radius r, max over samples of d(e,[g,h]) / d(e,g))
    pub grid: Vec<(f64, f64)>,
    /// largest grid radius with max ratio < 1/2 (0 when none qualifies)
    pub r0: f64,
    pub abelian: bool,
}

/// Sample pairs in metric balls B(e, r) and track the worst commutator
/// shrinking ratio per radius.
pub fn commutator_shrink(
    group: &GroupDescriptor,
    n_samples: usize,
    r_grid: &[f64],
    seed: u64,
) -> Result<CommutatorReport> {
    if r_grid.is_empty() {
        return Err(Error::Invalid("empty radius grid".into()));
    }
    let dim = group.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // chart scale: metric distance per unit of chart norm, probed once
    let probe = AlgebraVector::new((0..dim).map(|i| if i == 0 { 0.05 } else { 0.0 }).collect());
    let kappa = group.distance_to_identity(&group.exp_map(&probe)) / 0.05;
    let sample_in_metric_ball = |rng: &mut ChaCha8Rng, r: f64| -> GroupElement {
        loop {
            let y = AlgebraVector::sample_in_ball(rng, dim, 1.0);
            if y.norm() < 1e-9 {
                continue;
            }
            let t: f64 = rng.gen_range(0.0f64..1.0).powf(1.0 / dim as f64) * r;
            return group.exp_map(&y.scaled(t / (kappa * y.norm())));
        }
    };
    let mut grid = Vec::with_capacity(r_grid.len());
    for &r in r_grid {
        let mut worst = 0.0f64;
        for _ in 0..n_samples {
            let g = sample_in_metric_ball(&mut rng, r);
            let h = sample_in_metric_ball(&mut rng, r);
            let dg = group.distance_to_identity(&g);
            if dg < 1e-9 {
                continue;
            }
            let gh = group.multiply(&g, &h)?;
            let hg = group.multiply(&h, &g)?;
            let comm = group.multiply(&gh, &group.inverse(&hg))?;
            worst = worst.max(group.distance_to_identity(&comm) / dg);
        }
        grid.push((r, worst));
    }
    let abelian = grid.iter().all(|&(_, x)| x < 1e-9);
    let r0 = grid
        .iter()
        .filter(|&&(_, x)| x < 0.5)
        .map(|&(r, _)| r)
        .fold(0.0, f64::max);
    Ok(CommutatorReport { grid, r0, abelian })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{build_net, Net};
    use std::sync::OnceLock;

    fn so3_net() -> Arc<Net> {
        static NET: OnceLock<Arc<Net>> = OnceLock::new();
        NET.get_or_init(|| Arc::new(build_net(&GroupDescriptor::so3(), 20_000, 7).unwrap()))
            .clone()
    }

    fn t1_net() -> Arc<Net> {
        static NET: OnceLock<Arc<Net>> = OnceLock::new();
        NET.get_or_init(|| Arc::new(build_net(&GroupDescriptor::torus(1), 2000, 7).unwrap()))
            .clone()
    }

    fn t2_net() -> Arc<Net> {
        static NET: OnceLock<Arc<Net>> = OnceLock::new();
        NET.get_or_init(|| Arc::new(build_net(&GroupDescriptor::torus(2), 25_600, 7).unwrap()))
            .clone()
    }

    fn so2_tube(delta: f64, net: &Arc<Net>) -> CellSet {
        let sub = builtin_subgroup(&net.group, "so2_z").unwrap();
        CellSet::discretize(&SetRegion::tube(sub, delta), net).unwrap()
    }

    #[test]
    fn planted_identity_tube_is_recovered() {
        let net = so3_net();
        let a = so2_tube(0.05, &net);
        let fit = fit_tube(&a, 40, 11).unwrap();
        assert!(fit.symdiff_ratio <= 0.05, "ratio {}", fit.symdiff_ratio);
        assert!(fit.delta_prime > 0.0 && fit.delta_prime < 0.2);
    }

    #[test]
    fn planted_conjugated_tube_is_recovered() {
        let net = so3_net();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let g = net.group.haar_sample_one(&mut rng);
        let sub = builtin_subgroup(&net.group, "so2_z").unwrap().conjugated(&g);
        let a = CellSet::discretize(&SetRegion::tube(sub, 0.05), &net).unwrap();
        let fit = fit_tube(&a, 200, 12).unwrap();
        assert!(fit.symdiff_ratio <= 0.1, "ratio {}", fit.symdiff_ratio);
    }

    #[test]
    fn ball_is_not_tube_like() {
        let net = so3_net();
        let ball = SetRegion::ball(&net.group, net.group.identity(), 0.2);
        let a = CellSet::discretize(&ball, &net).unwrap();
        let fit = fit_tube(&a, 60, 13).unwrap();
        assert!(fit.symdiff_ratio > 0.5, "ratio {}", fit.symdiff_ratio);
    }

    #[test]
    fn slice_evenness_tube_vs_half_tube() {
        let net = t2_net();
        let sub = builtin_subgroup(&net.group, "t1_x").unwrap();
        let full = CellSet::discretize(&SetRegion::tube(sub.clone(), 0.1), &net).unwrap();
        let profile = slice_profile(&full, &sub, 0.1, 0.25, 12, 21).unwrap();
        assert!(profile.evenness >= 0.7, "full tube evenness {}", profile.evenness);

        // delete the half of the tube with h-coordinate in [0.5, 1)
        let mut half = full.clone();
        for i in 0..net.len() {
            if !half.outer[i] {
                continue;
            }
            if let GroupElement::Torus(angles) = &net.centers[i] {
                if angles[0] >= 0.5 {
                    half.outer[i] = false;
                    half.inner_depth[i] = 0.0;
                }
            }
        }
        let half_profile = slice_profile(&half, &sub, 0.1, 0.25, 12, 21).unwrap();
        assert!(
            half_profile.evenness <= profile.evenness / 5.0,
            "half tube evenness {} vs full {}",
            half_profile.evenness,
            profile.evenness
        );
    }

    #[test]
    fn slice_evenness_survives_random_deletion() {
        let net = t2_net();
        let sub = builtin_subgroup(&net.group, "t1_x").unwrap();
        let mut a = CellSet::discretize(&SetRegion::tube(sub.clone(), 0.1), &net).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for i in 0..net.len() {
            if a.outer[i] && rng.gen_range(0.0f64..1.0) < 0.1 {
                a.outer[i] = false;
                a.inner_depth[i] = 0.0;
            }
        }
        let profile = slice_profile(&a, &sub, 0.1, 0.25, 12, 32).unwrap();
        assert!(profile.evenness >= 0.7, "evenness {}", profile.evenness);
    }

    #[test]
    fn slice_profile_rejects_escaping_sets() {
        let net = t2_net();
        let sub = builtin_subgroup(&net.group, "t1_x").unwrap();
        let ball = SetRegion::ball(&net.group, net.group.identity(), 0.3);
        let a = CellSet::discretize(&ball, &net).unwrap();
        assert!(matches!(
            slice_profile(&a, &sub, 0.05, 0.2, 4, 33),
            Err(Error::ContainmentViolated(_))
        ));
    }

    fn chart_ball_cloud(n: usize, r: f64, seed: u64) -> Vec<AlgebraVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| AlgebraVector::sample_in_ball(&mut rng, 3, r))
            .collect()
    }

    #[test]
    fn ray_profile_ball_passes_everywhere() {
        let cloud = PointCloud::uniform(chart_ball_cloud(40_000, 0.1, 41)).unwrap();
        let profile = ray_profile(&cloud, 0.005, 0.05, 0.1, 100, 42).unwrap();
        assert_eq!(profile.pass_fraction, 1.0);
    }

    #[test]
    fn ray_profile_flags_slab_deletion_monotonically() {
        let base = chart_ball_cloud(40_000, 0.1, 41);
        let mut fractions = Vec::new();
        for slab in [0.016, 0.024, 0.04] {
            let pts: Vec<AlgebraVector> = base
                .iter()
                .filter(|p| p.coords[2].abs() >= slab / 2.0)
                .cloned()
                .collect();
            let cloud = PointCloud::uniform(pts).unwrap();
            let profile = ray_profile(&cloud, 0.005, 0.05, 0.1, 100, 42).unwrap();
            fractions.push(profile.pass_fraction);
        }
        assert!(fractions[0] < 1.0, "thin slab must flag rays: {fractions:?}");
        assert!(
            fractions[0] >= fractions[1] && fractions[1] >= fractions[2],
            "pass fraction must fall with the slab width: {fractions:?}"
        );
    }

    #[test]
    fn ray_profile_annulus_reports_origin_gap() {
        let pts: Vec<AlgebraVector> = chart_ball_cloud(60_000, 0.1, 43)
            .into_iter()
            .filter(|p| p.norm() >= 0.05)
            .collect();
        let cloud = PointCloud::uniform(pts).unwrap();
        let profile = ray_profile(&cloud, 0.004, 0.05, 0.1, 100, 44).unwrap();
        assert_eq!(profile.pass_fraction, 0.0);
        for ray in &profile.rays {
            assert!(ray.t_min >= 0.04, "t_min {}", ray.t_min);
            assert!(ray.density < 0.9, "density {}", ray.density);
        }
    }

    fn t1_arc(half_len: f64, center: f64, net: &Arc<Net>) -> CellSet {
        let c = GroupElement::Torus(vec![center]);
        CellSet::discretize(&SetRegion::ball(&net.group, c, half_len), net).unwrap()
    }

    #[test]
    fn covering_contained_set_needs_one_translate() {
        let net = t1_net();
        // torus metric scale: an arc of angular half-width w has radius 2w
        let a = t1_arc(0.05, 0.0, &net);
        let b = t1_arc(0.1, 0.0, &net);
        let cov = covering_number(&a, &b).unwrap();
        assert_eq!(cov.count, 1);
        assert!(cov.within_bound);
    }

    #[test]
    fn covering_long_arc_by_short_arc() {
        let net = t1_net();
        // arcs of length 0.4 and 0.1 (angular), i.e. metric radii 0.4, 0.1
        let a = t1_arc(0.4, 0.0, &net);
        let b = t1_arc(0.1, 0.0, &net);
        let cov = covering_number(&a, &b).unwrap();
        assert!(cov.count <= 5, "count {}", cov.count);
        assert!(cov.within_bound, "count {} bound {}", cov.count, cov.ratio_bound);
    }

    #[test]
    fn covering_two_far_balls_needs_two() {
        let net = t1_net();
        let a = t1_arc(0.06, 0.0, &net)
            .union(&t1_arc(0.06, 0.5, &net))
            .unwrap();
        let b = t1_arc(0.1, 0.0, &net);
        let cov = covering_number(&a, &b).unwrap();
        assert_eq!(cov.count, 2);
    }

    #[test]
    fn covering_rejects_null_b() {
        let net = t1_net();
        let a = t1_arc(0.1, 0.0, &net);
        let b = CellSet::empty(&net);
        assert!(matches!(covering_number(&a, &b), Err(Error::NullMeasure(_))));
    }

    #[test]
    fn scale_spectrum_of_an_arc() {
        let net = t1_net();
        let lam = t1_arc(0.1, 0.0, &net);
        let spec = scale_spectrum(&lam, 3, 4.0).unwrap();
        for w in spec.radii.windows(2) {
            assert!(w[0] > w[1], "radii must strictly decrease: {:?}", spec.radii);
        }
        for w in spec.covering_numbers.windows(2) {
            assert!(w[0] <= w[1], "counts nondecreasing: {:?}", spec.covering_numbers);
        }
        assert!(spec.within_budget, "{} translates", spec.translate_count);
        assert!(spec.inclusion_pass.iter().all(|&p| p), "{:?}", spec.inclusion_pass);
        // a ball has no scale beyond its own radius sequence
        assert!(spec.radii.iter().all(|&r| r <= 3.0 * 0.1 + 4.0 * net.cell_radius));
    }

    #[test]
    fn scale_spectrum_of_a_tube() {
        let net = t2_net();
        let sub = builtin_subgroup(&net.group, "t1_x").unwrap();
        let lam = CellSet::discretize(&SetRegion::tube(sub, 0.04), &net).unwrap();
        let spec = scale_spectrum(&lam, 3, 6.0).unwrap();
        for w in spec.radii.windows(2) {
            assert!(w[0] > w[1], "radii must strictly decrease: {:?}", spec.radii);
        }
        assert!(spec.inclusion_pass.iter().all(|&p| p), "{:?}", spec.inclusion_pass);
    }

    #[test]
    fn scale_spectrum_requires_identity() {
        let net = t1_net();
        let lam = t1_arc(0.05, 0.5, &net);
        // symmetrization keeps the far arc pair, still missing e
        assert!(scale_spectrum(&lam, 2, 4.0).is_err());
    }

    #[test]
    fn commutators_vanish_on_the_torus() {
        let g = GroupDescriptor::torus(2);
        let rep = commutator_shrink(&g, 200, &[0.05, 0.1, 0.2], 51).unwrap();
        assert!(rep.abelian);
        assert!((rep.r0 - 0.2).abs() < 1e-12);
    }

    #[test]
    fn commutators_shrink_on_so3() {
        let g = GroupDescriptor::so3();
        let rep = commutator_shrink(&g, 2000, &[0.02, 0.05, 0.1, 0.2, 0.3], 52).unwrap();
        assert!(!rep.abelian);
        assert!(rep.r0 > 0.0, "grid {:?}", rep.grid);
        // BCH scaling: the worst ratio decays roughly linearly in r
        let small = rep.grid[0].1;
        let large = rep.grid[4].1;
        assert!(small < 0.5, "ratio at r=0.02 is {small}");
        assert!(small < large, "{:?}", rep.grid);
    }
}

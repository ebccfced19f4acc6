//! Doubling and Brunn-Minkowski-type inequality checks with certified
//! brackets and fitted constants.
//!
//! Verdict semantics: `Verified` only when certified brackets force the
//! inequality (lower(lhs) >= upper(rhs)), `Violated` only when they force
//! its negation, otherwise `Inconclusive`. Checks whose constant the theory
//! leaves unspecified accept an optional explicit constant; without one they
//! certify the inequality at the fitted constant and report it.

use serde::Serialize;
use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use crate::cellset::CellSet;
use crate::error::{Error, Result};
use crate::group::{GroupDescriptor, GroupElement};
use crate::measure::{mc_measure, MeasureEstimate};
use crate::net::Net;
use crate::region::{SetRegion, Shape};
use crate::subgroup::{critical_exponent, SubgroupDescriptor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Verified,
    Violated,
    Inconclusive,
}

/// A two-sided bound on a derived quantity (ratio, root, deficit); unlike
/// `MeasureEstimate` it is not confined to [0,1].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Bracket {
    pub lower: f64,
    pub upper: f64,
    pub certified: bool,
}

impl Bracket {
    pub fn new(lower: f64, upper: f64, certified: bool) -> Self {
        Bracket {
            lower,
            upper,
            certified,
        }
    }

    pub fn from_measure(m: &MeasureEstimate) -> Self {
        Bracket::new(m.lower, m.upper, m.certified)
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

/// Decide a claim lhs >= rhs from two brackets.
pub fn verdict_ge(lhs: &Bracket, rhs: &Bracket) -> Verdict {
    let certified = lhs.certified && rhs.certified;
    if certified && lhs.lower >= rhs.upper - 1e-12 {
        Verdict::Verified
    } else if certified && lhs.upper < rhs.lower - 1e-12 {
        Verdict::Violated
    } else {
        Verdict::Inconclusive
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InequalityReport {
    pub name: String,
    pub inputs: BTreeMap<String, String>,
    pub lhs: Bracket,
    pub rhs: Bracket,
    pub verdict: Verdict,
    pub fitted_constants: BTreeMap<String, f64>,
    pub net_hash: Option<String>,
    pub seed: u64,
    pub runtime_ms: u64,
}

/// How measures are obtained: exact closed forms first, then certified cell
/// brackets on the shared net, then Monte Carlo (uncertified) as a last
/// resort.
#[derive(Clone)]
pub struct MeasureCtx {
    pub net: Option<Arc<Net>>,
    pub mc_samples: usize,
    pub seed: u64,
}

impl MeasureCtx {
    pub fn new(net: Option<Arc<Net>>, mc_samples: usize, seed: u64) -> Self {
        MeasureCtx {
            net,
            mc_samples,
            seed,
        }
    }

    pub fn net_hash(&self) -> Option<String> {
        self.net.as_ref().map(|n| n.hash.clone())
    }

    pub fn measure(&self, region: &SetRegion) -> Result<MeasureEstimate> {
        if let Some(v) = region.exact_measure() {
            return Ok(MeasureEstimate::exact(v));
        }
        if let Some(net) = &self.net {
            return Ok(CellSet::discretize(region, net)?.measure());
        }
        if self.mc_samples > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            return Ok(mc_measure(&region.group, &mut rng, self.mc_samples, |g| {
                region.contains(g)
            }));
        }
        Err(Error::Invalid(format!(
            "no way to bound the measure of `{}`: no closed form, no net, no MC budget",
            region.description
        )))
    }

    /// Bracket on the Minkowski product measure. Symbolic products (exact in
    /// the bi-invariant metric) are used when available; otherwise the cell
    /// product on the shared net.
    pub fn product_measure(&self, a: &SetRegion, b: &SetRegion) -> Result<MeasureEstimate> {
        if let Some(sp) = a.symbolic_product(b) {
            return self.measure(&sp);
        }
        let net = self.net.as_ref().ok_or_else(|| {
            Error::Invalid(format!(
                "product `{}`.`{}` has no symbolic form and no net is available",
                a.description, b.description
            ))
        })?;
        let ca = CellSet::discretize(a, net)?;
        let cb = CellSet::discretize(b, net)?;
        Ok(ca.minkowski_product(&cb)?.measure())
    }
}

fn finish(
    name: &str,
    inputs: BTreeMap<String, String>,
    lhs: Bracket,
    rhs: Bracket,
    verdict: Verdict,
    fitted: BTreeMap<String, f64>,
    ctx: &MeasureCtx,
    started: Instant,
) -> InequalityReport {
    InequalityReport {
        name: name.into(),
        inputs,
        lhs,
        rhs,
        verdict,
        fitted_constants: fitted,
        net_hash: ctx.net_hash(),
        seed: ctx.seed,
        runtime_ms: started.elapsed().as_millis() as u64,
    }
}

/// Bracket on mu(A^2)/mu(A). Errors on null-measure input.
pub fn doubling_ratio(a: &SetRegion, ctx: &MeasureCtx) -> Result<(Bracket, MeasureEstimate, MeasureEstimate)> {
    let ma = ctx.measure(a)?;
    if ma.lower <= 0.0 {
        return Err(Error::NullMeasure(format!(
            "doubling ratio of `{}`: measure lower bound is zero",
            a.description
        )));
    }
    let ma2 = ctx.product_measure(a, a)?;
    let br = Bracket::new(
        ma2.lower / ma.upper,
        ma2.upper / ma.lower,
        ma.certified && ma2.certified,
    );
    Ok((br, ma, ma2))
}

/// Evaluate f(mu) = min(1, (2^k - C mu^{2/k}) mu) over a measure bracket,
/// accounting for the interior critical point.
fn min_doubling_rhs(k: f64, c: f64, mu: &MeasureEstimate) -> Bracket {
    let f = |m: f64| -> f64 { ((2f64.powf(k) - c * m.powf(2.0 / k)) * m).min(1.0) };
    let mut vals = vec![f(mu.lower), f(mu.upper)];
    if c > 0.0 {
        let crit = (2f64.powf(k) / (c * (1.0 + 2.0 / k))).powf(k / 2.0);
        if crit > mu.lower && crit < mu.upper {
            vals.push(f(crit));
        }
    }
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min).max(0.0);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Bracket::new(lo, hi, mu.certified)
}

/// mu(A^2) >= (2^k - C mu(A)^{2/k}) mu(A) with k the critical exponent.
/// With `c_const = None` the check uses the fitted constant.
pub fn check_minimal_doubling(
    a: &SetRegion,
    c_const: Option<f64>,
    ctx: &MeasureCtx,
) -> Result<InequalityReport> {
    let started = Instant::now();
    let k = critical_exponent(&a.group)? as f64;
    let (ratio, ma, ma2) = doubling_ratio(a, ctx)?;
    let mu_mid = ma.midpoint();
    let c_emp = ((2f64.powf(k) - ratio.lower) / mu_mid.powf(2.0 / k)).max(0.0);
    let c_used = c_const.unwrap_or(c_emp);
    let lhs = Bracket::from_measure(&ma2);
    let rhs = min_doubling_rhs(k, c_used, &ma);
    let mut fitted = BTreeMap::new();
    fitted.insert("C_empirical".into(), c_emp);
    fitted.insert("C_used".into(), c_used);
    fitted.insert("k".into(), k);
    fitted.insert("ratio_lower".into(), ratio.lower);
    fitted.insert("ratio_upper".into(), ratio.upper);
    let mut inputs = BTreeMap::new();
    inputs.insert("A".into(), a.description.clone());
    inputs.insert("group".into(), a.group.name());
    Ok(finish(
        "minimal_doubling",
        inputs,
        lhs,
        rhs,
        verdict_ge(&lhs, &rhs),
        fitted,
        ctx,
        started,
    ))
}

/// mu(AB)^{1/k} >= (1 - alpha) min(mu(A)^{1/k} + mu(B)^{1/k}, 1).
pub fn check_brunn_minkowski(
    a: &SetRegion,
    b: &SetRegion,
    k: usize,
    alpha: Option<f64>,
    ctx: &MeasureCtx,
) -> Result<InequalityReport> {
    let started = Instant::now();
    if k < 1 {
        return Err(Error::Invalid("exponent k must be >= 1".into()));
    }
    let kf = k as f64;
    let ma = ctx.measure(a)?;
    let mb = ctx.measure(b)?;
    let mab = ctx.product_measure(a, b)?;
    let root = |x: f64| x.max(0.0).powf(1.0 / kf);
    let sum_lo = (root(ma.lower) + root(mb.lower)).min(1.0);
    let sum_hi = (root(ma.upper) + root(mb.upper)).min(1.0);
    let alpha_emp = (1.0 - root(mab.lower) / sum_hi.max(1e-300)).max(0.0);
    let alpha_used = alpha.unwrap_or(alpha_emp);
    let lhs = Bracket::new(root(mab.lower), root(mab.upper), mab.certified);
    let rhs = Bracket::new(
        (1.0 - alpha_used) * sum_lo,
        (1.0 - alpha_used) * sum_hi,
        ma.certified && mb.certified,
    );
    let mut fitted = BTreeMap::new();
    fitted.insert("alpha_empirical".into(), alpha_emp);
    fitted.insert("alpha_used".into(), alpha_used);
    fitted.insert("k".into(), kf);
    let mut inputs = BTreeMap::new();
    inputs.insert("A".into(), a.description.clone());
    inputs.insert("B".into(), b.description.clone());
    inputs.insert("group".into(), a.group.name());
    Ok(finish(
        "brunn_minkowski",
        inputs,
        lhs,
        rhs,
        verdict_ge(&lhs, &rhs),
        fitted,
        ctx,
        started,
    ))
}

/// Is the region certifiably contained in B(e, rho)?
fn region_in_ball(region: &SetRegion, rho: f64, ctx: &MeasureCtx) -> Result<()> {
    fn check(region: &SetRegion, rho: f64, ctx: &MeasureCtx) -> Result<bool> {
        let g = &region.group;
        match &region.shape {
            Shape::Empty => Ok(true),
            Shape::Ball { center, radius } => {
                Ok(g.distance(center, &g.identity()) + radius <= rho + 1e-9)
            }
            Shape::Union(a, b) => Ok(check(a, rho, ctx)? && check(b, rho, ctx)?),
            Shape::Inter(a, b) => Ok(check(a, rho, ctx)? || check(b, rho, ctx)?),
            _ => {
                // fall back to the net: every outer cell center within rho +
                // one covering radius
                let net = ctx.net.as_ref().ok_or_else(|| {
                    Error::Invalid("containment check needs a ball shape or a net".into())
                })?;
                let cells = CellSet::discretize(region, net)?;
                let id = g.identity();
                Ok((0..net.len())
                    .filter(|&i| cells.outer[i])
                    .all(|i| g.distance(&net.centers[i], &id) <= rho + net.cell_radius))
            }
        }
    }
    if check(region, rho, ctx)? {
        Ok(())
    } else {
        Err(Error::ContainmentViolated(format!(
            "`{}` is not contained in B(e, {rho})",
            region.description
        )))
    }
}

/// Local Brunn-Minkowski for A, B inside B(e, rho), exponent d_G.
pub fn check_local_bm(
    a: &SetRegion,
    b: &SetRegion,
    rho: f64,
    eps: Option<f64>,
    ctx: &MeasureCtx,
) -> Result<InequalityReport> {
    let started = Instant::now();
    if rho > 0.2 + 1e-12 {
        return Err(Error::Invalid("local BM chart radius must be <= 0.2".into()));
    }
    region_in_ball(a, rho, ctx)?;
    region_in_ball(b, rho, ctx)?;
    let d = a.group.dim as f64;
    let ma = ctx.measure(a)?;
    let mb = ctx.measure(b)?;
    let mab = ctx.product_measure(a, b)?;
    let root = |x: f64| x.max(0.0).powf(1.0 / d);
    let sum_lo = root(ma.lower) + root(mb.lower);
    let sum_hi = root(ma.upper) + root(mb.upper);
    let eps_emp = (1.0 - root(mab.lower) / sum_hi.max(1e-300)).max(0.0);
    let eps_used = eps.unwrap_or(eps_emp);
    let lhs = Bracket::new(root(mab.lower), root(mab.upper), mab.certified);
    let rhs = Bracket::new(
        (1.0 - eps_used) * sum_lo,
        (1.0 - eps_used) * sum_hi,
        ma.certified && mb.certified,
    );
    let mut fitted = BTreeMap::new();
    fitted.insert("eps_empirical".into(), eps_emp);
    fitted.insert("eps_used".into(), eps_used);
    fitted.insert("rho".into(), rho);
    // relative bracket slack on the fitted deficit, for sweep filtering
    let eps_slack = (root(mab.upper) - root(mab.lower) + (sum_hi - sum_lo)) / sum_hi.max(1e-300);
    fitted.insert("eps_slack".into(), eps_slack);
    let mut inputs = BTreeMap::new();
    inputs.insert("A".into(), a.description.clone());
    inputs.insert("B".into(), b.description.clone());
    inputs.insert("group".into(), a.group.name());
    Ok(finish(
        "local_bm",
        inputs,
        lhs,
        rhs,
        verdict_ge(&lhs, &rhs),
        fitted,
        ctx,
        started,
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalBmSweep {
    pub reports: Vec<InequalityReport>,
    /// exponent of the power-law fit eps ~ C rho^p
    pub p: f64,
    pub c: f64,
    /// which points survived the bracket-width filter
    pub used: Vec<bool>,
}

/// Dyadic sweep of check_local_bm with A = B = B(e, rho); fits eps ~ C rho^p
/// on points whose deficit is resolved by the brackets.
pub fn local_bm_sweep(
    group: &GroupDescriptor,
    rhos: &[f64],
    ctx: &MeasureCtx,
) -> Result<LocalBmSweep> {
    let mut reports = Vec::new();
    let mut used = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &rho in rhos {
        let ball = SetRegion::ball(group, group.identity(), rho);
        let rep = check_local_bm(&ball, &ball, rho, None, ctx)?;
        let eps = rep.fitted_constants["eps_empirical"];
        let slack = rep.fitted_constants["eps_slack"];
        // discretization-dominated points carry no exponent information
        let ok = eps > 1e-12 && slack < 0.5 * eps;
        if ok {
            xs.push(rho.ln());
            ys.push(eps.ln());
        }
        used.push(ok);
        reports.push(rep);
    }
    let (p, lnc) = linear_fit(&xs, &ys);
    Ok(LocalBmSweep {
        reports,
        p,
        c: lnc.exp(),
        used,
    })
}

/// Least-squares slope and intercept of y over x.
fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// mu(AB) >= min(mu(A) + mu(B), 1) on a connected compact group.
pub fn kemperman_check(a: &SetRegion, b: &SetRegion, ctx: &MeasureCtx) -> Result<InequalityReport> {
    let started = Instant::now();
    let ma = ctx.measure(a)?;
    let mb = ctx.measure(b)?;
    let mab = ctx.product_measure(a, b)?;
    let lhs = Bracket::from_measure(&mab);
    let rhs = Bracket::new(
        (ma.lower + mb.lower).min(1.0),
        (ma.upper + mb.upper).min(1.0),
        ma.certified && mb.certified,
    );
    let mut fitted = BTreeMap::new();
    fitted.insert("slack".into(), lhs.lower - rhs.upper);
    let mut inputs = BTreeMap::new();
    inputs.insert("A".into(), a.description.clone());
    inputs.insert("B".into(), b.description.clone());
    inputs.insert("group".into(), a.group.name());
    Ok(finish(
        "kemperman",
        inputs,
        lhs,
        rhs,
        verdict_ge(&lhs, &rhs),
        fitted,
        ctx,
        started,
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct BallCurvePoint {
    pub rho: f64,
    pub ratio: Bracket,
}

#[derive(Debug, Clone, Serialize)]
pub struct BallCurve {
    pub group: String,
    pub two_pow_d: f64,
    pub points: Vec<BallCurvePoint>,
    /// least-squares fit of ratio = 2^d (1 - S rho^2)
    pub s_fit: f64,
    /// hard band on S from the ratio brackets
    pub s_lower: f64,
    pub s_upper: f64,
}

/// Ratio curve mu(B_{2 rho})/mu(B_rho) over a list of radii, with the
/// quadratic-deficit coefficient S fitted and bracketed.
pub fn ball_doubling_curve(
    group: &GroupDescriptor,
    rhos: &[f64],
    ctx: &MeasureCtx,
) -> Result<BallCurve> {
    let d = group.dim as f64;
    let top = 2f64.powf(d);
    let mut points = Vec::new();
    let mut sx2 = 0.0;
    let mut sxy = 0.0;
    let mut sxy_lo = 0.0;
    let mut sxy_hi = 0.0;
    for &rho in rhos {
        if 2.0 * rho > 0.4 {
            return Err(Error::Invalid("ball curve radii must satisfy 2 rho <= 0.4".into()));
        }
        let id = group.identity();
        let small = ctx.measure(&SetRegion::ball(group, id.clone(), rho))?;
        let big = ctx.measure(&SetRegion::ball(group, id, 2.0 * rho))?;
        if small.lower <= 0.0 {
            return Err(Error::NullMeasure(format!("ball of radius {rho}")));
        }
        let ratio = Bracket::new(
            big.lower / small.upper,
            big.upper / small.lower,
            small.certified && big.certified,
        );
        // deficit y = 1 - ratio/2^d against x = rho^2
        let x = rho * rho;
        sx2 += x * x;
        sxy += x * (1.0 - ratio.midpoint() / top);
        sxy_lo += x * (1.0 - ratio.upper / top);
        sxy_hi += x * (1.0 - ratio.lower / top);
        points.push(BallCurvePoint { rho, ratio });
    }
    Ok(BallCurve {
        group: group.name(),
        two_pow_d: top,
        points,
        s_fit: sxy / sx2,
        s_lower: sxy_lo / sx2,
        s_upper: sxy_hi / sx2,
    })
}

/// Check X is certifiably inside the tube H_delta.
fn region_in_tube(
    region: &SetRegion,
    subgroup: &Arc<SubgroupDescriptor>,
    delta: f64,
    ctx: &MeasureCtx,
) -> Result<()> {
    fn check(
        region: &SetRegion,
        h: &Arc<SubgroupDescriptor>,
        delta: f64,
        ctx: &MeasureCtx,
    ) -> Result<bool> {
        match &region.shape {
            Shape::Empty => Ok(true),
            Shape::Tube { subgroup, delta: d } => {
                Ok(subgroup.name == h.name && *d <= delta + 1e-12)
            }
            Shape::Rect {
                subgroup, delta: d, ..
            } => Ok(subgroup.name == h.name && *d <= delta + 1e-12),
            Shape::Union(a, b) => Ok(check(a, h, delta, ctx)? && check(b, h, delta, ctx)?),
            Shape::Inter(a, b) => Ok(check(a, h, delta, ctx)? || check(b, h, delta, ctx)?),
            _ => {
                let net = ctx.net.as_ref().ok_or_else(|| {
                    Error::Invalid("tube containment check needs a net for this shape".into())
                })?;
                let cells = CellSet::discretize(region, net)?;
                Ok((0..net.len())
                    .filter(|&i| cells.outer[i])
                    .all(|i| h.distance_to(&net.centers[i]) <= delta + net.cell_radius))
            }
        }
    }
    if check(region, subgroup, delta, ctx)? {
        Ok(())
    } else {
        Err(Error::ContainmentViolated(format!(
            "`{}` is not contained in the {delta}-tube around {}",
            region.description, subgroup.name
        )))
    }
}

/// Double-counting identity: averaging slice measures mu(X n T_delta B_H(h, rho))
/// over Haar-random h in H equals mu(X) mu_H(B_H(e, rho)). MC quadrature with
/// a single shared sample stream.
pub struct DoubleCountingOutcome {
    pub report: InequalityReport,
    pub lhs_value: f64,
    pub lhs_stderr: f64,
    pub rhs: Bracket,
}

pub fn double_counting_check(
    x_region: &SetRegion,
    subgroup: &Arc<SubgroupDescriptor>,
    delta: f64,
    rho: f64,
    n_h: usize,
    ctx: &MeasureCtx,
) -> Result<DoubleCountingOutcome> {
    let started = Instant::now();
    region_in_tube(x_region, subgroup, delta, ctx)?;
    let g = &x_region.group;
    let mx = ctx.measure(x_region)?;
    let mh_ball = subgroup.ball_measure(rho);
    let rhs = Bracket::new(mx.lower * mh_ball, mx.upper * mh_ball, mx.certified);

    // one shared Haar stream on G: record the foot points of the samples in X
    let n = ctx.mc_samples.max(1000);
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut feet: Vec<GroupElement> = Vec::new();
    for _ in 0..n {
        let s = g.haar_sample_one(&mut rng);
        if x_region.contains(&s) {
            feet.push(subgroup.project(&s));
        }
    }
    // per-sample contribution Y = 1[in X] * (fraction of h-samples within rho)
    let hs: Vec<GroupElement> = (0..n_h).map(|_| subgroup.haar_h_one(&mut rng)).collect();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut count_h = vec![0u64; n_h];
    for foot in &feet {
        let mut close = 0usize;
        for (j, h) in hs.iter().enumerate() {
            if g.distance(foot, h) < rho {
                close += 1;
                count_h[j] += 1;
            }
        }
        let y = close as f64 / n_h as f64;
        sum += y;
        sum_sq += y * y;
    }
    let lhs_value = sum / n as f64;
    // two noise sources: the Haar stream on G and the quadrature nodes on H
    let var_feet = (sum_sq / n as f64 - lhs_value * lhs_value).max(0.0);
    let m_h: Vec<f64> = count_h.iter().map(|&c| c as f64 / n as f64).collect();
    let mean_h = m_h.iter().sum::<f64>() / n_h as f64;
    let var_h = m_h.iter().map(|m| (m - mean_h) * (m - mean_h)).sum::<f64>() / n_h as f64;
    let lhs_stderr = (var_feet / n as f64 + var_h / n_h as f64).sqrt();
    let lhs = Bracket::new(
        lhs_value - 3.0 * lhs_stderr,
        lhs_value + 3.0 * lhs_stderr,
        false,
    );

    let tolerance = 3.0 * lhs_stderr + rhs.width();
    let diff = (lhs_value - rhs.midpoint()).abs();
    let verdict = if diff <= tolerance {
        Verdict::Verified
    } else {
        Verdict::Inconclusive
    };
    let mut fitted = BTreeMap::new();
    fitted.insert("lhs".into(), lhs_value);
    fitted.insert("lhs_stderr".into(), lhs_stderr);
    fitted.insert("abs_diff".into(), diff);
    fitted.insert("tolerance".into(), tolerance);
    let mut inputs = BTreeMap::new();
    inputs.insert("X".into(), x_region.description.clone());
    inputs.insert("H".into(), subgroup.name.clone());
    inputs.insert("delta".into(), format!("{delta}"));
    inputs.insert("rho".into(), format!("{rho}"));
    inputs.insert("n_h".into(), format!("{n_h}"));
    let report = finish(
        "double_counting",
        inputs,
        lhs,
        rhs,
        verdict,
        fitted,
        ctx,
        started,
    );
    Ok(DoubleCountingOutcome {
        report,
        lhs_value,
        lhs_stderr,
        rhs,
    })
}

/// Expansion and BM lower bounds for A, B inside a tube H_delta, including
/// the slicing-ratio comparison: the equalizing ratio c = (mu(B)/mu(A))^{1/k}
/// never does worse than c = 1.
pub fn near_subgroup_expansion_check(
    a: &SetRegion,
    b: &SetRegion,
    subgroup: &Arc<SubgroupDescriptor>,
    delta: f64,
    eps: Option<f64>,
    ctx: &MeasureCtx,
) -> Result<InequalityReport> {
    let started = Instant::now();
    region_in_tube(a, subgroup, delta, ctx)?;
    region_in_tube(b, subgroup, delta, ctx)?;
    if let Some(ab) = a.symbolic_product(b) {
        region_in_tube(&ab, subgroup, delta, ctx)?;
    }
    let k = (a.group.dim - subgroup.dim_h) as f64;
    let ma = ctx.measure(a)?;
    let mb = ctx.measure(b)?;
    let mab = ctx.product_measure(a, b)?;
    if ma.lower <= 0.0 || mb.lower <= 0.0 {
        return Err(Error::NullMeasure("expansion check inputs".into()));
    }
    let min_lo = ma.lower.min(mb.lower);
    let min_hi = ma.upper.min(mb.upper);
    let eps_emp = (2f64.powf(k) - mab.lower / min_hi).max(0.0);
    let eps_used = eps.unwrap_or(eps_emp);
    let lhs = Bracket::from_measure(&mab);
    let factor = 2f64.powf(k) - eps_used;
    let rhs = Bracket::new(
        (factor * min_lo).min(1.0).max(0.0),
        (factor * min_hi).min(1.0).max(0.0),
        ma.certified && mb.certified,
    );
    // slicing-ratio comparison at bracket midpoints
    let (mua, mub) = (ma.midpoint(), mb.midpoint());
    let value = |c: f64| (1.0 + c).powf(k) * mua.min(mub / c.powf(k));
    let c_opt = (mub / mua).powf(1.0 / k);
    let v_opt = value(c_opt);
    let v_one = value(1.0);
    let mut fitted = BTreeMap::new();
    fitted.insert("eps_empirical".into(), eps_emp);
    fitted.insert("eps_used".into(), eps_used);
    fitted.insert("k".into(), k);
    fitted.insert("c_opt".into(), c_opt);
    fitted.insert("bound_at_c_opt".into(), v_opt);
    fitted.insert("bound_at_c_one".into(), v_one);
    let alpha_emp = {
        let root = |x: f64| x.max(0.0).powf(1.0 / k);
        (1.0 - root(mab.lower) / (root(ma.upper) + root(mb.upper))).max(0.0)
    };
    fitted.insert("alpha_empirical".into(), alpha_emp);
    let mut inputs = BTreeMap::new();
    inputs.insert("A".into(), a.description.clone());
    inputs.insert("B".into(), b.description.clone());
    inputs.insert("H".into(), subgroup.name.clone());
    inputs.insert("delta".into(), format!("{delta}"));
    let mut report = finish(
        "near_subgroup_expansion",
        inputs,
        lhs,
        rhs,
        verdict_ge(&lhs, &rhs),
        fitted,
        ctx,
        started,
    );
    if v_opt < v_one - 1e-9 {
        // the equalizing ratio must dominate; numerical contradiction
        report.verdict = Verdict::Inconclusive;
    }
    Ok(report)
}

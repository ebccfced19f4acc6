//! Discrete optimal transport in the Lie algebra: exact solvers with dual
//! certificates, cyclical-monotonicity and Monge-Ampere diagnostics, the
//! group-multiplication map built from a plan, and the determinant AM-GM
//! bound used by the local Brunn-Minkowski mechanism.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::group::{AlgebraVector, GroupDescriptor};

/// A weighted point cloud in the algebra, with its containment radius.
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub points: Vec<AlgebraVector>,
    pub weights: Vec<f64>,
    pub radius: f64,
}

impl PointCloud {
    pub fn uniform(points: Vec<AlgebraVector>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Invalid("point cloud must be nonempty".into()));
        }
        let n = points.len();
        let radius = points.iter().map(|p| p.norm()).fold(0.0, f64::max);
        Ok(PointCloud {
            points,
            weights: vec![1.0 / n as f64; n],
            radius,
        })
    }

    pub fn weighted(points: Vec<AlgebraVector>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() || points.is_empty() {
            return Err(Error::InfeasibleWeights(
                "weights must match the nonempty point list".into(),
            ));
        }
        if weights.iter().any(|w| *w < 0.0) {
            return Err(Error::InfeasibleWeights("negative weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-8 {
            return Err(Error::InfeasibleWeights(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        let radius = points.iter().map(|p| p.norm()).fold(0.0, f64::max);
        Ok(PointCloud {
            points,
            weights,
            radius,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    /// CSV: a `# dim=<d> radius=<r>` header, then one point per row with the
    /// weight in the last column.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "# dim={} radius={}", self.dim(), self.radius)?;
        for (p, wt) in self.points.iter().zip(&self.weights) {
            let row: Vec<String> = p.coords.iter().map(|c| format!("{c}")).collect();
            writeln!(w, "{},{wt}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: &mut R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Invalid("empty point cloud file".into()))??;
        let dim: usize = header
            .split("dim=")
            .nth(1)
            .and_then(|s| s.split_whitespace().next())
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Invalid("missing `# dim=<d> radius=<r>` header".into()))?;
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Invalid(format!("row {}: {e}", lineno + 2)))?;
            if vals.len() == dim {
                points.push(AlgebraVector::new(vals));
                weights.push(f64::NAN); // filled uniformly below
            } else if vals.len() == dim + 1 {
                points.push(AlgebraVector::new(vals[..dim].to_vec()));
                weights.push(vals[dim]);
            } else {
                return Err(Error::Invalid(format!(
                    "row {}: expected {dim} or {} columns, got {}",
                    lineno + 2,
                    dim + 1,
                    vals.len()
                )));
            }
        }
        if weights.iter().any(|w| w.is_nan()) {
            PointCloud::uniform(points)
        } else {
            PointCloud::weighted(points, weights)
        }
    }
}

fn sq_dist(a: &AlgebraVector, b: &AlgebraVector) -> f64 {
    a.coords
        .iter()
        .zip(&b.coords)
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveMode {
    /// successive shortest paths, exact for any weights
    Exact,
    /// auction with epsilon scaling, exact to the reported gap (uniform
    /// equal-size instances)
    Auction,
    /// entropic regularization, approximate
    Entropic,
}

/// A coupling with marginals matching the cloud weights, its cost, and dual
/// potentials certifying (near-)optimality.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub source: PointCloud,
    pub target: PointCloud,
    /// sparse triplets (source index, target index, mass)
    pub coupling: Vec<(u32, u32, f64)>,
    pub cost: f64,
    pub dual_source: Vec<f64>,
    pub dual_target: Vec<f64>,
    /// max positive violation of u_i + v_j <= c_ij over all pairs
    pub max_dual_violation: f64,
    pub mode: SolveMode,
}

impl TransportPlan {
    /// Dual objective; cost - dual_objective is the duality gap.
    pub fn dual_objective(&self) -> f64 {
        let s: f64 = self
            .dual_source
            .iter()
            .zip(&self.source.weights)
            .map(|(u, w)| u * w)
            .sum();
        let t: f64 = self
            .dual_target
            .iter()
            .zip(&self.target.weights)
            .map(|(v, w)| v * w)
            .sum();
        s + t
    }

    pub fn duality_gap(&self) -> f64 {
        self.cost - self.dual_objective()
    }

    /// Barycentric image of each source atom under the coupling.
    pub fn map(&self) -> Vec<AlgebraVector> {
        let d = self.source.dim();
        let mut sums = vec![AlgebraVector::zeros(d); self.source.len()];
        let mut mass = vec![0.0; self.source.len()];
        for &(i, j, f) in &self.coupling {
            sums[i as usize] = sums[i as usize].add(&self.target.points[j as usize].scaled(f));
            mass[i as usize] += f;
        }
        sums.into_iter()
            .zip(mass)
            .map(|(s, m)| if m > 0.0 { s.scaled(1.0 / m) } else { s })
            .collect()
    }

    pub fn marginal_error(&self) -> f64 {
        let mut row = vec![0.0; self.source.len()];
        let mut col = vec![0.0; self.target.len()];
        for &(i, j, f) in &self.coupling {
            row[i as usize] += f;
            col[j as usize] += f;
        }
        let r = row
            .iter()
            .zip(&self.source.weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let c = col
            .iter()
            .zip(&self.target.weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        r.max(c)
    }

    /// Pairs with positive mass, as (source point, target point) indices.
    pub fn support(&self) -> Vec<(usize, usize)> {
        self.coupling
            .iter()
            .filter(|(_, _, f)| *f > 1e-12)
            .map(|&(i, j, _)| (i as usize, j as usize))
            .collect()
    }

    fn fill_certificate(&mut self) {
        let mut worst = 0.0f64;
        for (i, x) in self.source.points.iter().enumerate() {
            for (j, y) in self.target.points.iter().enumerate() {
                let v = self.dual_source[i] + self.dual_target[j] - sq_dist(x, y);
                worst = worst.max(v);
            }
        }
        self.max_dual_violation = worst;
    }
}

/// Solve for the squared-distance cost. Exact below 2000 points per side
/// (auction for uniform equal-size instances, successive shortest paths
/// otherwise), entropic above.
pub fn solve_ot(source: &PointCloud, target: &PointCloud) -> Result<TransportPlan> {
    if source.dim() != target.dim() {
        return Err(Error::Invalid("cloud dimensions differ".into()));
    }
    let (n, m) = (source.len(), target.len());
    let uniform_equal = n == m
        && source.weights.iter().all(|w| (w - 1.0 / n as f64).abs() < 1e-12)
        && target.weights.iter().all(|w| (w - 1.0 / n as f64).abs() < 1e-12);
    if n.max(m) > 2000 {
        solve_entropic(source, target)
    } else if uniform_equal && n > 400 {
        solve_auction(source, target)
    } else {
        solve_ssp(source, target)
    }
}

pub fn solve_with_mode(
    source: &PointCloud,
    target: &PointCloud,
    mode: SolveMode,
) -> Result<TransportPlan> {
    match mode {
        SolveMode::Exact => solve_ssp(source, target),
        SolveMode::Auction => solve_auction(source, target),
        SolveMode::Entropic => solve_entropic(source, target),
    }
}

/// Successive shortest paths with node potentials on the dense bipartite
/// transportation graph. Exact for arbitrary weights.
fn solve_ssp(source: &PointCloud, target: &PointCloud) -> Result<TransportPlan> {
    let (n, m) = (source.len(), target.len());
    let cost: Vec<Vec<f64>> = source
        .points
        .iter()
        .map(|x| target.points.iter().map(|y| sq_dist(x, y)).collect())
        .collect();
    let mut flow = vec![vec![0.0f64; m]; n];
    let mut supply = source.weights.clone();
    let mut demand = target.weights.clone();
    // potentials: phi[0..n] sources, phi[n..n+m] sinks
    let mut phi = vec![0.0f64; n + m];
    let inf = f64::INFINITY;
    loop {
        let active: Vec<usize> = (0..n).filter(|&i| supply[i] > 1e-15).collect();
        if active.is_empty() {
            break;
        }
        // dense Dijkstra over reduced costs
        let mut dist = vec![inf; n + m];
        let mut prev = vec![usize::MAX; n + m];
        let mut done = vec![false; n + m];
        for &i in &active {
            dist[i] = 0.0;
        }
        let mut reached_sink = usize::MAX;
        loop {
            let mut u = usize::MAX;
            let mut best = inf;
            for v in 0..n + m {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u >= n && demand[u - n] > 1e-15 {
                reached_sink = u;
                break;
            }
            if u < n {
                // forward arcs i -> sinks
                for j in 0..m {
                    let rc = cost[u][j] + phi[u] - phi[n + j];
                    let nd = dist[u] + rc.max(0.0);
                    if nd < dist[n + j] - 1e-15 {
                        dist[n + j] = nd;
                        prev[n + j] = u;
                    }
                }
            } else {
                // backward arcs j -> sources with positive flow
                let j = u - n;
                for i in 0..n {
                    if flow[i][j] > 1e-15 {
                        let rc = -cost[i][j] + phi[u] - phi[i];
                        let nd = dist[u] + rc.max(0.0);
                        if nd < dist[i] - 1e-15 {
                            dist[i] = nd;
                            prev[i] = u;
                        }
                    }
                }
            }
        }
        if reached_sink == usize::MAX {
            return Err(Error::InfeasibleWeights(
                "no augmenting path; weights do not balance".into(),
            ));
        }
        // update potentials for reached nodes
        let d_t = dist[reached_sink];
        for v in 0..n + m {
            if dist[v] < inf {
                phi[v] += dist[v].min(d_t);
            } else {
                phi[v] += d_t;
            }
        }
        // bottleneck along the path
        let mut bottleneck = demand[reached_sink - n];
        let mut v = reached_sink;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if v >= n {
                // nothing to cap on an uncapacitated forward arc
            } else {
                bottleneck = bottleneck.min(flow[v][u - n]);
            }
            v = u;
        }
        bottleneck = bottleneck.min(supply[v]);
        // apply
        let mut w = reached_sink;
        while prev[w] != usize::MAX {
            let u = prev[w];
            if w >= n {
                flow[u][w - n] += bottleneck;
            } else {
                flow[w][u - n] -= bottleneck;
            }
            w = u;
        }
        supply[w] -= bottleneck;
        demand[reached_sink - n] -= bottleneck;
    }
    let mut coupling = Vec::new();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..m {
            if flow[i][j] > 1e-15 {
                coupling.push((i as u32, j as u32, flow[i][j]));
                total += flow[i][j] * cost[i][j];
            }
        }
    }
    let dual_source: Vec<f64> = (0..n).map(|i| -phi[i]).collect();
    let dual_target: Vec<f64> = (0..m).map(|j| phi[n + j]).collect();
    let mut plan = TransportPlan {
        source: source.clone(),
        target: target.clone(),
        coupling,
        cost: total,
        dual_source,
        dual_target,
        max_dual_violation: 0.0,
        mode: SolveMode::Exact,
    };
    plan.fill_certificate();
    Ok(plan)
}

/// Bertsekas auction with epsilon scaling for uniform equal-size instances.
fn solve_auction(source: &PointCloud, target: &PointCloud) -> Result<TransportPlan> {
    let n = source.len();
    if n != target.len() {
        return Err(Error::InfeasibleWeights(
            "auction mode needs equal cloud sizes".into(),
        ));
    }
    let cost: Vec<Vec<f64>> = source
        .points
        .iter()
        .map(|x| target.points.iter().map(|y| sq_dist(x, y)).collect())
        .collect();
    let c_max = cost
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |a, &b| a.max(b))
        .max(1e-12);
    let mut prices = vec![0.0f64; n];
    let mut owner = vec![usize::MAX; n]; // target -> source
    let mut assigned = vec![usize::MAX; n]; // source -> target
    let mut eps = c_max / 4.0;
    let eps_final = 1e-10 * c_max;
    loop {
        for a in assigned.iter_mut() {
            *a = usize::MAX;
        }
        for o in owner.iter_mut() {
            *o = usize::MAX;
        }
        let mut queue: Vec<usize> = (0..n).collect();
        while let Some(i) = queue.pop() {
            // best and second-best target by value = -cost - price
            let (mut best_j, mut best_v, mut second_v) = (usize::MAX, -f64::INFINITY, -f64::INFINITY);
            for j in 0..n {
                let v = -cost[i][j] - prices[j];
                if v > best_v {
                    second_v = best_v;
                    best_v = v;
                    best_j = j;
                } else if v > second_v {
                    second_v = v;
                }
            }
            let bid = best_v - second_v + eps;
            prices[best_j] += bid;
            if owner[best_j] != usize::MAX {
                let evicted = owner[best_j];
                assigned[evicted] = usize::MAX;
                queue.push(evicted);
            }
            owner[best_j] = i;
            assigned[i] = best_j;
        }
        if eps <= eps_final {
            break;
        }
        eps = (eps / 8.0).max(eps_final);
    }
    let w = 1.0 / n as f64;
    let mut total = 0.0;
    let mut coupling = Vec::with_capacity(n);
    for (i, &j) in assigned.iter().enumerate() {
        coupling.push((i as u32, j as u32, w));
        total += w * cost[i][j];
    }
    // duals: v_j = -price_j, u_i = min_j (c_ij - v_j) is feasible by
    // construction; support pairs are eps-complementary
    let dual_target: Vec<f64> = prices.iter().map(|p| -p).collect();
    let dual_source: Vec<f64> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| cost[i][j] - dual_target[j])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut plan = TransportPlan {
        source: source.clone(),
        target: target.clone(),
        coupling,
        cost: total,
        dual_source,
        dual_target,
        max_dual_violation: 0.0,
        mode: SolveMode::Auction,
    };
    plan.fill_certificate();
    Ok(plan)
}

/// Sinkhorn iterations in the log domain; approximate, marginal error
/// reported through `marginal_error`.
fn solve_entropic(source: &PointCloud, target: &PointCloud) -> Result<TransportPlan> {
    let (n, m) = (source.len(), target.len());
    let cost: Vec<Vec<f64>> = source
        .points
        .iter()
        .map(|x| target.points.iter().map(|y| sq_dist(x, y)).collect())
        .collect();
    let mean_c = cost.iter().flat_map(|r| r.iter()).sum::<f64>() / (n * m) as f64;
    let eps = 0.01 * mean_c.max(1e-12);
    let mut f = vec![0.0f64; n];
    let mut g = vec![0.0f64; m];
    let log_a: Vec<f64> = source.weights.iter().map(|w| w.max(1e-300).ln()).collect();
    let log_b: Vec<f64> = target.weights.iter().map(|w| w.max(1e-300).ln()).collect();
    let logsumexp = |vals: &mut dyn Iterator<Item = f64>| -> f64 {
        let v: Vec<f64> = vals.collect();
        let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
    };
    for _ in 0..2000 {
        for (i, fi) in f.iter_mut().enumerate() {
            let s = logsumexp(&mut (0..m).map(|j| (g[j] - cost[i][j]) / eps));
            *fi = eps * (log_a[i] - s);
        }
        for (j, gj) in g.iter_mut().enumerate() {
            let s = logsumexp(&mut (0..n).map(|i| (f[i] - cost[i][j]) / eps));
            *gj = eps * (log_b[j] - s);
        }
    }
    let mut coupling = Vec::new();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..m {
            let p = ((f[i] + g[j] - cost[i][j]) / eps).exp();
            if p > 1e-14 {
                coupling.push((i as u32, j as u32, p));
                total += p * cost[i][j];
            }
        }
    }
    let mut plan = TransportPlan {
        source: source.clone(),
        target: target.clone(),
        coupling,
        cost: total,
        dual_source: f,
        dual_target: g,
        max_dual_violation: 0.0,
        mode: SolveMode::Entropic,
    };
    plan.fill_certificate();
    Ok(plan)
}

/// Exhaustive minimum over permutations; uniform equal-size clouds, n <= 8.
pub fn brute_force_cost(source: &PointCloud, target: &PointCloud) -> Result<f64> {
    let n = source.len();
    if n != target.len() || n > 8 {
        return Err(Error::Invalid(
            "brute force needs equal clouds of at most 8 points".into(),
        ));
    }
    let cost: Vec<Vec<f64>> = source
        .points
        .iter()
        .map(|x| target.points.iter().map(|y| sq_dist(x, y)).collect())
        .collect();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    // Heap's algorithm
    fn heaps(k: usize, perm: &mut Vec<usize>, cost: &[Vec<f64>], best: &mut f64) {
        if k == 1 {
            let c: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
            if c < *best {
                *best = c;
            }
            return;
        }
        for i in 0..k {
            heaps(k - 1, perm, cost, best);
            if k % 2 == 0 {
                perm.swap(i, k - 1);
            } else {
                perm.swap(0, k - 1);
            }
        }
    }
    heaps(n, &mut perm, &cost, &mut best);
    Ok(best / n as f64)
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityReport {
    pub cycles_checked: usize,
    pub worst_violation: f64,
    pub pass: bool,
}

/// Sampled cyclical monotonicity of the support: for cycles of coupled pairs
/// (x_i, y_i), the assigned cost never exceeds the cyclically shifted cost.
pub fn check_cyclical_monotonicity(
    plan: &TransportPlan,
    cycle_len: usize,
    n_cycles: usize,
    seed: u64,
) -> Result<MonotonicityReport> {
    if !(2..=3).contains(&cycle_len) {
        return Err(Error::Invalid("cycle length must be 2 or 3".into()));
    }
    let support = plan.support();
    if support.len() < cycle_len {
        return Err(Error::Invalid("support too small for the cycle length".into()));
    }
    let scale = plan
        .support()
        .iter()
        .map(|&(i, j)| sq_dist(&plan.source.points[i], &plan.target.points[j]))
        .fold(1e-12, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n_cycles {
        let mut picks = Vec::with_capacity(cycle_len);
        while picks.len() < cycle_len {
            let k = rng.gen_range(0..support.len());
            if !picks.contains(&k) {
                picks.push(k);
            }
        }
        let mut assigned = 0.0;
        let mut shifted = 0.0;
        for t in 0..cycle_len {
            let (i, j) = support[picks[t]];
            let (_, j_next) = support[picks[(t + 1) % cycle_len]];
            assigned += sq_dist(&plan.source.points[i], &plan.target.points[j]);
            shifted += sq_dist(&plan.source.points[i], &plan.target.points[j_next]);
        }
        worst = worst.max(assigned - shifted);
    }
    Ok(MonotonicityReport {
        cycles_checked: n_cycles,
        worst_violation: worst,
        pass: worst <= 1e-8 * scale.max(1.0),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MongeAmpereReport {
    pub median_ratio: f64,
    pub k_nn: usize,
    pub points_used: usize,
}

/// Local Jacobian proxy: ratio of k-NN ball volumes at T(x) in the target
/// cloud versus at x in the source cloud; for uniform clouds the median
/// estimates lambda(B)/lambda(A).
pub fn monge_ampere_ratio_check(plan: &TransportPlan, k_nn: usize) -> Result<MongeAmpereReport> {
    let n = plan.source.len();
    if k_nn + 1 > n || k_nn + 1 > plan.target.len() {
        return Err(Error::Invalid("k_nn exceeds cloud size".into()));
    }
    let d = plan.source.dim() as f64;
    let mapped = plan.map();
    let kth = |p: &AlgebraVector, cloud: &[AlgebraVector], skip_self: bool| -> f64 {
        let mut d2: Vec<f64> = cloud.iter().map(|q| sq_dist(p, q)).collect();
        d2.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let idx = if skip_self { k_nn } else { k_nn - 1 };
        d2[idx]
    };
    let mut ratios = Vec::with_capacity(n);
    for (x, tx) in plan.source.points.iter().zip(&mapped) {
        let r_src = kth(x, &plan.source.points, true);
        let r_tgt = kth(tx, &plan.target.points, false);
        if r_src <= 0.0 {
            return Err(Error::Invalid("duplicated source points break k-NN".into()));
        }
        ratios.push((r_tgt / r_src).powf(d / 2.0));
    }
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(MongeAmpereReport {
        median_ratio: ratios[ratios.len() / 2],
        k_nn,
        points_used: n,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupBmReport {
    /// fitted contraction: worst pairwise 1 - |F(x)-F(y)|/|x-y|
    pub c_expansion: f64,
    pub pairs_checked: usize,
    /// Haar-weighted volume of the thickened image of F
    pub thickened_measure: f64,
    /// (lambda(A)^{1/d} + lambda(B)^{1/d})^d
    pub bm_rhs: f64,
    /// fitted deficit coefficient: (1 - thickened/bm_rhs) / rho^2, clamped
    pub c_prime: f64,
    pub thickening_radius: f64,
}

/// The group-multiplication map F(x) = log(exp(x) exp(T(x))): expansion
/// lower bound on sampled pairs and the Brunn-Minkowski-type volume bound
/// for the thickened image, weighted by the Haar density.
pub fn group_bm_map(
    plan: &TransportPlan,
    group: &GroupDescriptor,
    lambda_a: f64,
    lambda_b: f64,
    seed: u64,
) -> Result<GroupBmReport> {
    let n = plan.source.len();
    if n < 2 || lambda_a <= 0.0 || lambda_b <= 0.0 {
        return Err(Error::Invalid(
            "degenerate input: need at least 2 points and positive volumes".into(),
        ));
    }
    let rho = plan.source.radius.max(plan.target.radius);
    if rho > 0.15 {
        return Err(Error::ChartViolation(format!(
            "cloud radius {rho} exceeds the 0.15 chart budget"
        )));
    }
    let mapped = plan.map();
    let mut f_img = Vec::with_capacity(n);
    for (x, tx) in plan.source.points.iter().zip(&mapped) {
        let p = group
            .multiply(&group.exp_map(x), &group.exp_map(tx))
            .map_err(|e| Error::ChartViolation(e.to_string()))?;
        f_img.push(
            group
                .log_map(&p)
                .map_err(|e| Error::ChartViolation(e.to_string()))?,
        );
    }
    // expansion on sampled pairs
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = (4 * n).min(20_000);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n);
        if i == j {
            j = (j + 1) % n;
        }
        let dx = plan.source.points[i].sub(&plan.source.points[j]).norm();
        if dx < 1e-12 {
            continue;
        }
        let df = f_img[i].sub(&f_img[j]).norm();
        worst = worst.max(1.0 - df / dx);
    }
    // thickened image volume, Haar-density weighted, grid-accelerated MC
    let d = group.dim;
    let mut r0 = 0.0f64;
    for (i, p) in f_img.iter().enumerate() {
        let nn = f_img
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, q)| sq_dist(p, q))
            .fold(f64::INFINITY, f64::min)
            .sqrt();
        r0 = r0.max(nn);
    }
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in &f_img {
        for (a, c) in lo.iter_mut().zip(&p.coords) {
            *a = a.min(*c);
        }
        for (a, c) in hi.iter_mut().zip(&p.coords) {
            *a = a.max(*c);
        }
    }
    for a in lo.iter_mut() {
        *a -= r0;
    }
    for a in hi.iter_mut() {
        *a += r0;
    }
    let box_vol: f64 = lo.iter().zip(&hi).map(|(l, h)| h - l).product();
    // hash grid with cell size r0 for neighbor queries
    use std::collections::HashMap;
    let key = |p: &[f64]| -> Vec<i64> {
        p.iter()
            .zip(&lo)
            .map(|(c, l)| ((c - l) / r0).floor() as i64)
            .collect()
    };
    let mut grid: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    for (i, p) in f_img.iter().enumerate() {
        grid.entry(key(&p.coords)).or_default().push(i);
    }
    let trials = 200_000usize;
    let mut acc = 0.0;
    for _ in 0..trials {
        let sample: Vec<f64> = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| rng.gen_range(*l..*h))
            .collect();
        let base = key(&sample);
        let mut inside = false;
        'search: for offset in 0..3usize.pow(d as u32) {
            let mut k = base.clone();
            let mut rem = offset;
            for slot in k.iter_mut() {
                *slot += (rem % 3) as i64 - 1;
                rem /= 3;
            }
            if let Some(ids) = grid.get(&k) {
                for &i in ids {
                    let d2: f64 = f_img[i]
                        .coords
                        .iter()
                        .zip(&sample)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    if d2 <= r0 * r0 {
                        inside = true;
                        break 'search;
                    }
                }
            }
        }
        if inside {
            acc += group.haar_density(&AlgebraVector::new(sample));
        }
    }
    let thickened = box_vol * acc / trials as f64;
    let df = d as f64;
    let bm_rhs = (lambda_a.powf(1.0 / df) + lambda_b.powf(1.0 / df)).powf(df);
    let c_prime = if rho > 0.0 {
        ((1.0 - thickened / bm_rhs) / (rho * rho)).max(0.0)
    } else {
        0.0
    };
    Ok(GroupBmReport {
        c_expansion: worst.max(0.0),
        pairs_checked: pairs,
        thickened_measure: thickened,
        bm_rhs,
        c_prime,
        thickening_radius: r0,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AmGmReport {
    pub trials: usize,
    pub violations_at_fitted: usize,
    /// worst deficit coefficient (1 - det/rhs)/rho^2 observed
    pub c_fitted: f64,
    /// violations of the pure inequality det(I+M) >= (1+det M^{1/d})^d over
    /// the S = E = 0 subset (must be zero)
    pub pure_violations: usize,
}

/// det(I + M + S + E) >= (1 - c rho^2)(1 + det(M)^{1/d})^d for random
/// positive-definite M, skew S with norm <= rho, and perturbations E of size
/// rho^2. With rho = 0 this is the exact AM-GM determinant inequality.
pub fn jacobian_amgm_check(d: usize, n_trials: usize, rho: f64, seed: u64) -> Result<AmGmReport> {
    if d > 6 || d == 0 {
        return Err(Error::Invalid("dimension must be in 1..=6".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let df = d as f64;
    let mut c_fitted = 0.0f64;
    let mut pure_violations = 0usize;
    let mut deficits = Vec::with_capacity(n_trials);
    for _ in 0..n_trials {
        // random positive definite M = Q diag Q^T
        let gauss = DMatrix::<f64>::from_fn(d, d, |_, _| {
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        });
        let q = gauss.qr().q();
        let diag = DMatrix::<f64>::from_fn(d, d, |i, j| {
            if i == j {
                rng.gen_range(0.1..10.0)
            } else {
                0.0
            }
        });
        let m_mat = &q * diag * q.transpose();
        let det_m = m_mat.determinant();
        let mut total = DMatrix::<f64>::identity(d, d) + &m_mat;
        if rho > 0.0 {
            let mut s = DMatrix::<f64>::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
            s = (&s - s.transpose()) * 0.5;
            let norm = s.norm().max(1e-12);
            s *= rng.gen_range(0.0..rho) / norm;
            let e = DMatrix::<f64>::from_fn(d, d, |_, _| rng.gen_range(-(rho * rho)..(rho * rho)));
            total += s + e;
        }
        let det = total.determinant();
        let rhs0 = (1.0 + det_m.powf(1.0 / df)).powf(df);
        let deficit = 1.0 - det / rhs0;
        deficits.push(deficit);
        if rho == 0.0 {
            if deficit > 1e-10 {
                pure_violations += 1;
            }
        } else {
            c_fitted = c_fitted.max(deficit / (rho * rho));
        }
    }
    let violations_at_fitted = if rho > 0.0 {
        deficits
            .iter()
            .filter(|&&x| x > c_fitted * rho * rho + 1e-10)
            .count()
    } else {
        pure_violations
    };
    Ok(AmGmReport {
        trials: n_trials,
        violations_at_fitted,
        c_fitted,
        pure_violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_cloud(n: usize, d: usize, radius: f64, seed: u64) -> PointCloud {
        let mut r = rng(seed);
        let points = (0..n)
            .map(|_| AlgebraVector::sample_in_ball(&mut r, d, radius))
            .collect();
        PointCloud::uniform(points).unwrap()
    }

    #[test]
    fn identity_plan_costs_zero() {
        let a = random_cloud(30, 3, 0.1, 1);
        let plan = solve_ot(&a, &a).unwrap();
        assert!(plan.cost.abs() < 1e-12);
        assert!(plan.duality_gap().abs() < 1e-9);
    }

    #[test]
    fn translation_plan_costs_shift_squared() {
        let a = random_cloud(40, 3, 0.1, 2);
        let v = AlgebraVector::new(vec![0.03, -0.02, 0.01]);
        let shifted = PointCloud::uniform(a.points.iter().map(|p| p.add(&v)).collect()).unwrap();
        let plan = solve_ot(&a, &shifted).unwrap();
        let expect = v.norm() * v.norm();
        assert!((plan.cost - expect).abs() < 1e-10, "{} vs {expect}", plan.cost);
    }

    #[test]
    fn exact_mode_matches_brute_force() {
        for seed in 0..10 {
            let a = random_cloud(6, 3, 0.1, 100 + seed);
            let b = random_cloud(6, 3, 0.1, 200 + seed);
            let plan = solve_ot(&a, &b).unwrap();
            let brute = brute_force_cost(&a, &b).unwrap();
            assert!(
                (plan.cost - brute).abs() < 1e-10,
                "seed {seed}: {} vs {brute}",
                plan.cost
            );
            assert!(plan.duality_gap().abs() <= 1e-6 * plan.cost.max(1e-9));
            assert!(plan.max_dual_violation < 1e-9);
        }
    }

    #[test]
    fn ssp_handles_unbalanced_supports() {
        // 3 source atoms with uneven weights onto 2 targets
        let a = PointCloud::weighted(
            vec![
                AlgebraVector::new(vec![0.0, 0.0]),
                AlgebraVector::new(vec![0.1, 0.0]),
                AlgebraVector::new(vec![0.0, 0.1]),
            ],
            vec![0.5, 0.25, 0.25],
        )
        .unwrap();
        let b = PointCloud::weighted(
            vec![
                AlgebraVector::new(vec![0.05, 0.0]),
                AlgebraVector::new(vec![0.0, 0.05]),
            ],
            vec![0.6, 0.4],
        )
        .unwrap();
        let plan = solve_ot(&a, &b).unwrap();
        assert!(plan.marginal_error() < 1e-9);
        assert!(plan.duality_gap().abs() <= 1e-9);
    }

    #[test]
    fn auction_agrees_with_exact_solver() {
        let a = random_cloud(120, 3, 0.1, 5);
        let b = random_cloud(120, 3, 0.1, 6);
        let exact = solve_with_mode(&a, &b, SolveMode::Exact).unwrap();
        let auction = solve_with_mode(&a, &b, SolveMode::Auction).unwrap();
        assert!(
            (auction.cost - exact.cost).abs() <= 1e-6 * exact.cost,
            "auction {} exact {}",
            auction.cost,
            exact.cost
        );
        assert!(auction.duality_gap().abs() <= 1e-6 * exact.cost);
    }

    #[test]
    fn entropic_mode_matches_marginals() {
        let a = random_cloud(50, 2, 0.1, 7);
        let b = random_cloud(60, 2, 0.1, 8);
        let plan = solve_with_mode(&a, &b, SolveMode::Entropic).unwrap();
        assert!(plan.marginal_error() < 1e-6, "{}", plan.marginal_error());
        let exact = solve_with_mode(&a, &b, SolveMode::Exact).unwrap();
        assert!(plan.cost >= exact.cost - 1e-9);
        assert!(plan.cost <= 1.3 * exact.cost + 1e-6);
    }

    #[test]
    fn infeasible_weights_are_rejected() {
        let pts = vec![AlgebraVector::new(vec![0.0]), AlgebraVector::new(vec![0.1])];
        assert!(matches!(
            PointCloud::weighted(pts.clone(), vec![0.7, 0.7]),
            Err(Error::InfeasibleWeights(_))
        ));
        assert!(matches!(
            PointCloud::weighted(pts, vec![1.5, -0.5]),
            Err(Error::InfeasibleWeights(_))
        ));
    }

    #[test]
    fn monotonicity_passes_on_optimal_and_fails_on_swapped() {
        let a = random_cloud(25, 3, 0.1, 9);
        let b = random_cloud(25, 3, 0.1, 10);
        let plan = solve_ot(&a, &b).unwrap();
        for len in [2, 3] {
            let rep = check_cyclical_monotonicity(&plan, len, 500, 11).unwrap();
            assert!(rep.pass, "cycle length {len}: worst {}", rep.worst_violation);
        }
        // swap two assignments of a non-degenerate optimal plan
        let mut bad = plan.clone();
        let (i0, j0, f0) = bad.coupling[0];
        let (i1, j1, f1) = bad.coupling[1];
        bad.coupling[0] = (i0, j1, f0);
        bad.coupling[1] = (i1, j0, f1);
        let rep = check_cyclical_monotonicity(&bad, 2, 2000, 12).unwrap();
        assert!(!rep.pass, "transposed plan must violate monotonicity");
    }

    #[test]
    fn monge_ampere_identity_and_scaling() {
        let a = random_cloud(1200, 3, 0.1, 13);
        let plan = solve_ot(&a, &a).unwrap();
        let rep = monge_ampere_ratio_check(&plan, 20).unwrap();
        assert!((rep.median_ratio - 1.0).abs() < 0.05, "{}", rep.median_ratio);

        // cube -> scaled cube: uniform grids with jitter, s^3 volume ratio
        let s = 1.5f64;
        let mut r = rng(14);
        let cube: Vec<AlgebraVector> = (0..1500)
            .map(|_| AlgebraVector::new((0..3).map(|_| r.gen_range(-0.05..0.05)).collect()))
            .collect();
        let scaled: Vec<AlgebraVector> = (0..1500)
            .map(|_| AlgebraVector::new((0..3).map(|_| r.gen_range(-0.05 * s..0.05 * s)).collect()))
            .collect();
        let a = PointCloud::uniform(cube).unwrap();
        let b = PointCloud::uniform(scaled).unwrap();
        let plan = solve_ot(&a, &b).unwrap();
        let rep = monge_ampere_ratio_check(&plan, 20).unwrap();
        let expect = s.powi(3);
        assert!(
            (rep.median_ratio - expect).abs() <= 0.25 * expect,
            "median {} vs {expect}",
            rep.median_ratio
        );
    }

    #[test]
    fn amgm_pure_inequality_never_violates() {
        for d in [2usize, 3, 4] {
            let rep = jacobian_amgm_check(d, 2000, 0.0, 15).unwrap();
            assert_eq!(rep.pure_violations, 0, "d={d}");
        }
    }

    #[test]
    fn amgm_identity_matrix_is_equality() {
        // det(I + I) = 2^d = (1 + 1)^d: deficit exactly zero
        let d = 3;
        let m = DMatrix::<f64>::identity(d, d);
        let det = (DMatrix::<f64>::identity(d, d) + &m).determinant();
        let rhs = (1.0 + m.determinant().powf(1.0 / d as f64)).powf(d as f64);
        assert!((det - rhs).abs() < 1e-12);
    }

    #[test]
    fn amgm_perturbed_constant_is_dimensional() {
        let rep = jacobian_amgm_check(3, 10_000, 0.1, 16).unwrap();
        assert!(rep.c_fitted <= 5.0, "fitted c {}", rep.c_fitted);
        assert_eq!(rep.violations_at_fitted, 0);
    }

    #[test]
    fn group_map_is_isometric_on_torus() {
        let g = GroupDescriptor::torus(3);
        let a = random_cloud(200, 3, 0.05, 17);
        let b = random_cloud(200, 3, 0.05, 18);
        let plan = solve_ot(&a, &b).unwrap();
        let vol = |r: f64| 4.0 / 3.0 * std::f64::consts::PI * r.powi(3);
        let rep = group_bm_map(&plan, &g, vol(0.05), vol(0.05), 19).unwrap();
        assert!(rep.c_expansion < 1e-9, "abelian map contracts: {}", rep.c_expansion);
    }

    #[test]
    fn group_map_expansion_bounded_on_so3() {
        let g = GroupDescriptor::so3();
        for rho in [0.05, 0.1, 0.15] {
            let a = random_cloud(400, 3, rho, 20);
            let b = random_cloud(400, 3, rho, 21);
            let plan = solve_ot(&a, &b).unwrap();
            let vol = 4.0 / 3.0 * std::f64::consts::PI * rho.powi(3);
            let rep = group_bm_map(&plan, &g, vol, vol, 22).unwrap();
            assert!(
                rep.c_expansion <= 0.5 * rho,
                "rho={rho}: fitted c {}",
                rep.c_expansion
            );
            // the thickened image satisfies the volume lower bound at cloud
            // resolution: deficit coefficient stays dimensional
            assert!(rep.thickened_measure > 0.0);
        }
    }

    #[test]
    fn group_map_rejects_degenerate_clouds() {
        let g = GroupDescriptor::so3();
        let single = PointCloud::uniform(vec![AlgebraVector::zeros(3)]).unwrap();
        let plan = solve_ot(&single, &single).unwrap();
        assert!(group_bm_map(&plan, &g, 0.0, 0.0, 23).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let a = random_cloud(15, 3, 0.1, 24);
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let back = PointCloud::read_csv(&mut buf.as_slice()).unwrap();
        assert_eq!(back.len(), a.len());
        for (p, q) in a.points.iter().zip(&back.points) {
            assert!(p.sub(q).norm() < 1e-12);
        }
        assert!((back.radius - a.radius).abs() < 1e-9);
    }
}

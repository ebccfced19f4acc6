//! Quasi-uniform nets on a group: cell centers, a certified covering radius,
//! Voronoi Monte Carlo weights, and range/nearest queries.
//!
//! Tori get exact coordinate grids (covering radius and weights analytic).
//! Other carriers thin a seeded Haar stream to an s-separated family, then
//! certify the covering radius with a 10x validation stream. Spatial queries
//! go through a hash grid over a random orthogonal projection of a chordal
//! embedding; the embedding is metrically dominated by the geodesic distance
//! (chord <= raw geodesic), so range searches are complete after filtering
//! with the true metric.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::group::{GroupDescriptor, GroupElement, GroupFamily};
use crate::measure::{exact_ball_measure, mc_measure};

/// Chordal embedding with euclid(embed a, embed b) <= raw geodesic distance.
fn embed(group: &GroupDescriptor, g: &GroupElement, out: &mut Vec<f64>) {
    match (&group.family, g) {
        (GroupFamily::Su2, GroupElement::Quaternion(q))
        | (GroupFamily::So3, GroupElement::Quaternion(q)) => {
            // su2 chord |a-b| = 2 sin(phi/2) <= phi; so3 handled by sign probes
            let s = if matches!(group.family, GroupFamily::So3) {
                2.0
            } else {
                1.0
            };
            out.extend(q.iter().map(|x| s * x));
        }
        (GroupFamily::Torus(_), GroupElement::Torus(v)) => {
            for t in v {
                let a = 2.0 * std::f64::consts::PI * t;
                out.push(a.cos() / (2.0 * std::f64::consts::PI));
                out.push(a.sin() / (2.0 * std::f64::consts::PI));
            }
        }
        (GroupFamily::SOn(_), GroupElement::Matrix(m)) => {
            out.extend(m.iter());
        }
        (GroupFamily::Product(fs), GroupElement::Product(gs)) => {
            for (f, part) in fs.iter().zip(gs) {
                embed(&GroupDescriptor::new(f.clone()), part, out);
            }
        }
        _ => panic!("element does not match group"),
    }
}

/// Number of sign-ambiguous quaternion slots (so3 factors): each doubles the
/// probe set for queries.
fn sign_slots(family: &GroupFamily, offset: &mut usize, slots: &mut Vec<usize>) {
    match family {
        GroupFamily::Su2 => *offset += 4,
        GroupFamily::So3 => {
            slots.push(*offset);
            *offset += 4;
        }
        GroupFamily::Torus(d) => *offset += 2 * d,
        GroupFamily::SOn(n) => *offset += n * n,
        GroupFamily::Product(fs) => {
            for f in fs {
                sign_slots(f, offset, slots);
            }
        }
    }
}

const PROJ_DIM: usize = 4;

/// Cheap multiply-xor hasher for the grid keys (the default SipHash shows up
/// hot in net construction).
#[derive(Default, Clone)]
struct KeyHasher(u64);

impl std::hash::Hasher for KeyHasher {
    fn finish(&self) -> u64 {
        self.0
    }
    fn write(&mut self, bytes: &[u8]) {
        for chunk in bytes.chunks(8) {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            let v = u64::from_le_bytes(buf);
            self.0 = (self.0 ^ v).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            self.0 ^= self.0 >> 29;
        }
    }
}

type KeyBuild = std::hash::BuildHasherDefault<KeyHasher>;

struct SpatialIndex {
    /// orthonormal projection rows (up to PROJ_DIM) x emb_dim
    proj: Vec<Vec<f64>>,
    cell: f64,
    map: HashMap<[i64; PROJ_DIM], Vec<u32>, KeyBuild>,
    points: Vec<[f64; PROJ_DIM]>,
    sign_offsets: Vec<usize>,
}

impl SpatialIndex {
    fn new(group: &GroupDescriptor, cell: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut probe = Vec::new();
        embed(group, &group.identity(), &mut probe);
        let emb_dim = probe.len();
        let k = emb_dim.min(4);
        // random orthonormal rows via Gram-Schmidt on Gaussian vectors
        let mut proj: Vec<Vec<f64>> = Vec::new();
        while proj.len() < k {
            let mut v: Vec<f64> = (0..emb_dim)
                .map(|_| {
                    let u1: f64 = rng.gen_range(1e-12..1.0);
                    let u2: f64 = rng.gen_range(0.0..1.0);
                    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                })
                .collect();
            for p in &proj {
                let d: f64 = v.iter().zip(p).map(|(a, b)| a * b).sum();
                for (x, y) in v.iter_mut().zip(p) {
                    *x -= d * y;
                }
            }
            let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-6 {
                for x in &mut v {
                    *x /= n;
                }
                proj.push(v);
            }
        }
        let mut sign_offsets = Vec::new();
        let mut off = 0;
        sign_slots(&group.family, &mut off, &mut sign_offsets);
        let _ = emb_dim;
        SpatialIndex {
            proj,
            cell,
            map: HashMap::default(),
            points: Vec::new(),
            sign_offsets,
        }
    }

    fn project(&self, emb: &[f64]) -> [f64; PROJ_DIM] {
        let mut p = [0.0; PROJ_DIM];
        for (slot, row) in p.iter_mut().zip(&self.proj) {
            *slot = row.iter().zip(emb).map(|(a, b)| a * b).sum();
        }
        p
    }

    fn key(&self, p: &[f64; PROJ_DIM]) -> [i64; PROJ_DIM] {
        let mut k = [0i64; PROJ_DIM];
        for (slot, x) in k.iter_mut().zip(p) {
            *slot = (x / self.cell).floor() as i64;
        }
        k
    }

    fn insert(&mut self, idx: usize, emb: &[f64]) {
        let p = self.project(emb);
        let k = self.key(&p);
        self.map.entry(k).or_default().push(idx as u32);
        debug_assert_eq!(idx, self.points.len());
        self.points.push(p);
    }

    /// Projected points of all probes of a query element (sign flips for
    /// so3 slots flip the projection of the affected coordinates).
    fn probe_projections(&self, emb: &[f64]) -> ([[f64; PROJ_DIM]; 4], usize) {
        let mut out = [[0.0; PROJ_DIM]; 4];
        let mut len = 1usize;
        out[0] = self.project(emb);
        for &off in &self.sign_offsets {
            // delta = -2 * projection of the slot's coordinates
            let mut delta = [0.0; PROJ_DIM];
            for (slot, row) in delta.iter_mut().zip(&self.proj) {
                *slot = -2.0
                    * row[off..off + 4]
                        .iter()
                        .zip(&emb[off..off + 4])
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
            }
            for i in 0..len {
                let mut q = out[i];
                for (x, d) in q.iter_mut().zip(&delta) {
                    *x += d;
                }
                out[len + i] = q;
            }
            len *= 2;
        }
        (out, len)
    }

    /// Candidate indices whose projected point lies within `r_raw` of some
    /// probe of `emb` (superset of true geodesic neighbors).
    fn candidates(&self, emb: &[f64], r_raw: f64, out: &mut Vec<u32>) {
        out.clear();
        let reach = (r_raw / self.cell).ceil() as i64;
        let r2 = r_raw * r_raw * (1.0 + 1e-9);
        let dims = self.proj.len();
        let (probes, n_probes) = self.probe_projections(emb);
        for p in &probes[..n_probes] {
            let base = self.key(p);
            let mut offsets = [0i64; PROJ_DIM];
            for o in offsets.iter_mut().take(dims) {
                *o = -reach;
            }
            'outer: loop {
                // prune grid cells whose nearest corner is outside the ball
                let mut lb2 = 0.0;
                for d in 0..dims {
                    let cell_lo = (base[d] + offsets[d]) as f64 * self.cell;
                    let gap = if p[d] < cell_lo {
                        cell_lo - p[d]
                    } else if p[d] > cell_lo + self.cell {
                        p[d] - cell_lo - self.cell
                    } else {
                        0.0
                    };
                    lb2 += gap * gap;
                }
                let mut key = base;
                for (k, o) in key.iter_mut().zip(&offsets) {
                    *k += o;
                }
                if lb2 <= r2 {
                    if let Some(v) = self.map.get(&key) {
                        for &i in v {
                            let q = &self.points[i as usize];
                            let mut d2 = 0.0;
                            for (a, b) in q.iter().zip(p) {
                                d2 += (a - b) * (a - b);
                            }
                            if d2 <= r2 {
                                out.push(i);
                            }
                        }
                    }
                }
                for d in 0..dims {
                    offsets[d] += 1;
                    if offsets[d] <= reach {
                        continue 'outer;
                    }
                    offsets[d] = -reach;
                }
                break;
            }
        }
        if n_probes > 1 {
            out.sort_unstable();
            out.dedup();
        }
    }
}

enum NetIndex {
    /// exact coordinate grid on a torus, k cells per axis
    Grid { k: usize },
    Thinned(SpatialIndex),
}

/// An immutable quasi-uniform net. `cell_radius` is a certified covering
/// radius in the normalized metric: every group point lies within it of some
/// center (validated on a 10x stream, inflated 1.2x; analytic for grids).
pub struct Net {
    pub group: GroupDescriptor,
    pub centers: Vec<GroupElement>,
    pub cell_radius: f64,
    pub weights: Vec<f64>,
    pub hash: String,
    pub seed: u64,
    index: NetIndex,
}

impl std::fmt::Debug for Net {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Net")
            .field("group", &self.group.name())
            .field("cells", &self.centers.len())
            .field("cell_radius", &self.cell_radius)
            .field("hash", &self.hash)
            .finish()
    }
}

/// Build a net with roughly `target_cells` cells, deterministically from the
/// seed.
pub fn build_net(group: &GroupDescriptor, target_cells: usize, seed: u64) -> Result<Net> {
    if target_cells < 1000 {
        return Err(Error::Invalid("target_cells must be >= 1000".into()));
    }
    match &group.family {
        GroupFamily::Torus(d) => build_torus_grid(group, *d, target_cells, seed),
        _ => build_thinned(group, target_cells, seed),
    }
}

fn build_torus_grid(
    group: &GroupDescriptor,
    d: usize,
    target_cells: usize,
    seed: u64,
) -> Result<Net> {
    let k = (target_cells as f64).powf(1.0 / d as f64).round() as usize;
    let k = k.max(2);
    let total = k.pow(d as u32);
    let mut centers = Vec::with_capacity(total);
    for idx in 0..total {
        let mut rem = idx;
        let mut v = Vec::with_capacity(d);
        for _ in 0..d {
            v.push((rem % k) as f64 / k as f64);
            rem /= k;
        }
        centers.push(GroupElement::Torus(v));
    }
    // grid covering radius: half-diagonal of one cell
    let cell_radius = (d as f64).sqrt() / (2.0 * k as f64) * group.metric_scale;
    let weights = vec![1.0 / total as f64; total];
    let hash = net_hash(group, &centers, cell_radius, seed);
    Ok(Net {
        group: group.clone(),
        centers,
        cell_radius,
        weights,
        hash,
        seed,
        index: NetIndex::Grid { k },
    })
}

fn build_thinned(group: &GroupDescriptor, target_cells: usize, seed: u64) -> Result<Net> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // separation s from the packing heuristic mu(B(s/2)) ~ 1/target
    let mut s = separation_guess(group, target_cells, &mut rng);
    let mut centers: Vec<GroupElement> = Vec::new();
    for round in 0..4 {
        centers.clear();
        let mut index = SpatialIndex::new(group, s / group.metric_scale, &mut rng);
        let mut embs: Vec<Vec<f64>> = Vec::new();
        let stream = 30 * target_cells;
        let mut cand = Vec::new();
        for _ in 0..stream {
            let g = group.haar_sample_one(&mut rng);
            let mut e = Vec::new();
            embed(group, &g, &mut e);
            index.candidates(&e, s / group.metric_scale, &mut cand);
            let mut ok = true;
            for &i in &cand {
                if group.distance(&g, &centers[i as usize]) < s {
                    ok = false;
                    break;
                }
            }
            if ok {
                index.insert(centers.len(), &e);
                centers.push(g);
                embs.push(e);
                if centers.len() >= target_cells {
                    break;
                }
            }
        }
        if centers.len() >= (target_cells * 9) / 10 || round == 3 {
            let (cell_radius, weights) =
                certify_and_weigh(group, &centers, &index, s, seed, target_cells);
            let hash = net_hash(group, &centers, cell_radius, seed);
            return Ok(Net {
                group: group.clone(),
                centers,
                cell_radius,
                weights,
                hash,
                seed,
                index: NetIndex::Thinned(index),
            });
        }
        // undershoot: tighten the separation and retry
        let ratio = (centers.len() as f64 / target_cells as f64).max(0.05);
        s *= ratio.powf(1.0 / group.dim as f64) * 0.95;
    }
    unreachable!()
}

fn separation_guess(group: &GroupDescriptor, target: usize, rng: &mut ChaCha8Rng) -> f64 {
    let want = 1.0 / target as f64;
    let measure_at = |r: f64, rng: &mut ChaCha8Rng| -> f64 {
        if let Some(v) = exact_ball_measure(group, r) {
            v
        } else {
            let id = group.identity();
            mc_measure(group, rng, 100_000, |g| group.distance(g, &id) < r).midpoint()
        }
    };
    let (mut lo, mut hi) = (1e-5, 0.8);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if measure_at(mid, rng) > want {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // s/2 is the packing radius
    lo + hi
}

fn certify_and_weigh(
    group: &GroupDescriptor,
    centers: &[GroupElement],
    index: &SpatialIndex,
    s: f64,
    seed: u64,
    target_cells: usize,
) -> (f64, Vec<f64>) {
    let validation = 10 * target_cells;
    let chunks: Vec<u64> = (0..64).collect();
    let per_chunk = validation / 64 + 1;
    let results: Vec<(f64, Vec<u64>)> = chunks
        .par_iter()
        .map(|&c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e3779b97f4a7c15u64.wrapping_mul(c + 1)));
            let mut counts = vec![0u64; centers.len()];
            let mut max_nn = 0.0f64;
            let mut cand = Vec::new();
            for _ in 0..per_chunk {
                let g = group.haar_sample_one(&mut rng);
                let mut e = Vec::new();
                embed(group, &g, &mut e);
                // expanding-radius nearest search
                let mut r = s;
                let (mut best, mut best_d) = (usize::MAX, f64::INFINITY);
                loop {
                    index.candidates(&e, r / group.metric_scale, &mut cand);
                    for &i in &cand {
                        let d = group.distance(&g, &centers[i as usize]);
                        if d < best_d {
                            best_d = d;
                            best = i as usize;
                        }
                    }
                    if best_d <= r {
                        break;
                    }
                    r *= 2.0;
                }
                counts[best] += 1;
                max_nn = max_nn.max(best_d);
            }
            (max_nn, counts)
        })
        .collect();
    let mut max_nn = 0.0f64;
    let mut counts = vec![0u64; centers.len()];
    for (m, c) in results {
        max_nn = max_nn.max(m);
        for (acc, v) in counts.iter_mut().zip(c) {
            *acc += v;
        }
    }
    let total: u64 = counts.iter().sum();
    let weights: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    (max_nn * 1.2, weights)
}

fn net_hash(
    group: &GroupDescriptor,
    centers: &[GroupElement],
    cell_radius: f64,
    seed: u64,
) -> String {
    let mut h = Sha256::new();
    h.update(group.name().as_bytes());
    h.update(seed.to_le_bytes());
    h.update(cell_radius.to_le_bytes());
    h.update((centers.len() as u64).to_le_bytes());
    let mut e = Vec::new();
    for c in centers {
        e.clear();
        embed(group, c, &mut e);
        for x in &e {
            h.update(x.to_le_bytes());
        }
    }
    let digest = h.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl Net {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Index and normalized distance of the nearest center.
    pub fn nearest(&self, g: &GroupElement) -> (usize, f64) {
        match &self.index {
            NetIndex::Grid { k } => {
                if let GroupElement::Torus(v) = g {
                    let kf = *k as f64;
                    let mut idx = 0usize;
                    let mut stride = 1usize;
                    for t in v {
                        let i = ((t * kf).round() as i64).rem_euclid(*k as i64) as usize;
                        idx += i * stride;
                        stride *= k;
                    }
                    (idx, self.group.distance(g, &self.centers[idx]))
                } else {
                    panic!("grid net expects torus elements")
                }
            }
            NetIndex::Thinned(index) => {
                let mut e = Vec::new();
                embed(&self.group, g, &mut e);
                let mut cand = Vec::new();
                let mut r = self.cell_radius;
                let (mut best, mut best_d) = (usize::MAX, f64::INFINITY);
                loop {
                    index.candidates(&e, r / self.group.metric_scale, &mut cand);
                    for &i in &cand {
                        let d = self.group.distance(g, &self.centers[i as usize]);
                        if d < best_d {
                            best_d = d;
                            best = i as usize;
                        }
                    }
                    if best_d <= r {
                        return (best, best_d);
                    }
                    r *= 2.0;
                }
            }
        }
    }

    /// All centers within normalized distance `radius` of g.
    pub fn within(&self, g: &GroupElement, radius: f64) -> Vec<usize> {
        match &self.index {
            NetIndex::Grid { k } => {
                if let GroupElement::Torus(v) = g {
                    let kf = *k as f64;
                    let d = v.len();
                    let reach_raw = radius / self.group.metric_scale;
                    let reach = (reach_raw * kf).ceil() as i64;
                    let base: Vec<i64> = v.iter().map(|t| (t * kf).round() as i64).collect();
                    let mut out = Vec::new();
                    let mut offsets = vec![-reach; d];
                    'outer: loop {
                        let mut idx = 0usize;
                        let mut stride = 1usize;
                        for (b, o) in base.iter().zip(&offsets) {
                            let i = (b + o).rem_euclid(*k as i64) as usize;
                            idx += i * stride;
                            stride *= k;
                        }
                        if self.group.distance(g, &self.centers[idx]) <= radius {
                            out.push(idx);
                        }
                        for dd in 0..d {
                            offsets[dd] += 1;
                            if offsets[dd] <= reach {
                                continue 'outer;
                            }
                            offsets[dd] = -reach;
                        }
                        break;
                    }
                    out.sort_unstable();
                    out.dedup();
                    out
                } else {
                    panic!("grid net expects torus elements")
                }
            }
            NetIndex::Thinned(index) => {
                let mut e = Vec::new();
                embed(&self.group, g, &mut e);
                let mut cand = Vec::new();
                index.candidates(&e, radius / self.group.metric_scale, &mut cand);
                cand.retain(|&i| self.group.distance(g, &self.centers[i as usize]) <= radius);
                cand.into_iter().map(|i| i as usize).collect()
            }
        }
    }
}

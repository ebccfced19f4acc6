//! Exact arithmetic, metric geometry and exponential-chart calculus for the
//! supported compact groups: SU(2), SO(3), tori T^d (d <= 4), SO(n) for
//! n <= 5, and direct products.
//!
//! All distances and algebra coordinates are expressed in the *normalized*
//! bi-invariant metric, rescaled so the geodesic diameter of the group is
//! exactly 1. Raw (unscaled) quantities appear only inside this module.
//!
//! Parameterizations:
//! - SU(2): unit quaternion `[w, x, y, z]`, `exp(v) = (cos|v|, sin|v| v/|v|)`
//!   for raw `v` in R^3.
//! - SO(3): unit quaternion with `q ~ -q` canonicalized (first coordinate of
//!   magnitude > 1e-9 made positive); `exp(v)` is the rotation by angle `|v|`
//!   about `v`.
//! - Torus(d): angle vector mod 1, flat metric.
//! - SO(n): n x n orthogonal matrix, algebra in the orthonormal basis
//!   `E_ij - E_ji` (i < j) of skew matrices w.r.t. `<X,Y> = tr(X^T Y)/2`.
//! - Product: tuple of factor elements, L2 product metric on raw factors.

pub mod son;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Value};

use crate::error::{Error, Result};

pub const QUAT_NORM_TOL: f64 = 1e-12;
pub const ORTHO_DEFECT_TOL: f64 = 1e-10;
/// log_map refuses elements beyond this fraction of the injectivity radius.
pub const LOG_CHART_FRACTION: f64 = 0.999;

#[derive(Debug, Clone, PartialEq)]
pub enum GroupFamily {
    Su2,
    So3,
    Torus(usize),
    SOn(usize),
    Product(Vec<GroupFamily>),
}

impl GroupFamily {
    pub fn dim(&self) -> usize {
        match self {
            GroupFamily::Su2 | GroupFamily::So3 => 3,
            GroupFamily::Torus(d) => *d,
            GroupFamily::SOn(n) => n * (n - 1) / 2,
            GroupFamily::Product(fs) => fs.iter().map(|f| f.dim()).sum(),
        }
    }

    fn diameter_raw(&self) -> f64 {
        match self {
            GroupFamily::Su2 | GroupFamily::So3 => std::f64::consts::PI,
            GroupFamily::Torus(d) => (*d as f64).sqrt() / 2.0,
            GroupFamily::SOn(n) => std::f64::consts::PI * ((n / 2) as f64).sqrt(),
            GroupFamily::Product(fs) => fs
                .iter()
                .map(|f| f.diameter_raw().powi(2))
                .sum::<f64>()
                .sqrt(),
        }
    }

    fn injectivity_raw(&self) -> f64 {
        match self {
            GroupFamily::Su2 | GroupFamily::So3 | GroupFamily::SOn(_) => std::f64::consts::PI,
            GroupFamily::Torus(_) => 0.5,
            GroupFamily::Product(fs) => fs
                .iter()
                .map(|f| f.injectivity_raw())
                .fold(f64::INFINITY, f64::min),
        }
    }

    pub fn name(&self) -> String {
        match self {
            GroupFamily::Su2 => "su2".into(),
            GroupFamily::So3 => "so3".into(),
            GroupFamily::Torus(d) => format!("t{d}"),
            GroupFamily::SOn(n) => format!("so{n}"),
            GroupFamily::Product(fs) => fs
                .iter()
                .map(|f| f.name())
                .collect::<Vec<_>>()
                .join("x"),
        }
    }
}

/// A compact group together with its diameter-1 metric normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupDescriptor {
    pub family: GroupFamily,
    pub dim: usize,
    pub diameter_raw: f64,
    pub metric_scale: f64,
}

/// A group element in its native parameterization.
#[derive(Debug, Clone, PartialEq)]
pub enum GroupElement {
    Quaternion([f64; 4]),
    Torus(Vec<f64>),
    Matrix(DMatrix<f64>),
    Product(Vec<GroupElement>),
}

/// A tangent vector at the identity, coordinates in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraVector {
    pub coords: Vec<f64>,
}

impl AlgebraVector {
    pub fn new(coords: Vec<f64>) -> Self {
        AlgebraVector { coords }
    }

    pub fn zeros(dim: usize) -> Self {
        AlgebraVector {
            coords: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn norm(&self) -> f64 {
        self.coords.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        AlgebraVector::new(self.coords.iter().map(|c| c * s).collect())
    }

    pub fn add(&self, other: &Self) -> Self {
        AlgebraVector::new(
            self.coords
                .iter()
                .zip(&other.coords)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn sub(&self, other: &Self) -> Self {
        AlgebraVector::new(
            self.coords
                .iter()
                .zip(&other.coords)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Uniform sample in the Euclidean ball of the given radius.
    pub fn sample_in_ball<R: Rng>(rng: &mut R, dim: usize, radius: f64) -> Self {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n2: f64 = v.iter().map(|c| c * c).sum();
            if n2 <= 1.0 {
                return AlgebraVector::new(v.into_iter().map(|c| c * radius).collect());
            }
        }
    }
}

fn clamp1(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

fn quat_mul(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

/// (|a - b|, |a + b|) for unit quaternions.
fn quat_chords(a: &[f64; 4], b: &[f64; 4]) -> (f64, f64) {
    let mut dm = 0.0;
    let mut dp = 0.0;
    for k in 0..4 {
        dm += (a[k] - b[k]) * (a[k] - b[k]);
        dp += (a[k] + b[k]) * (a[k] + b[k]);
    }
    (dm.sqrt(), dp.sqrt())
}

fn quat_conj(q: &[f64; 4]) -> [f64; 4] {
    [q[0], -q[1], -q[2], -q[3]]
}

fn quat_normalize(q: &mut [f64; 4]) {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    for c in q.iter_mut() {
        *c /= n;
    }
}

/// q ~ -q representative: first coordinate of magnitude > 1e-9 made positive.
fn quat_canonical_sign(q: &mut [f64; 4]) {
    for c in q.iter() {
        if c.abs() > 1e-9 {
            if *c < 0.0 {
                for x in q.iter_mut() {
                    *x = -*x;
                }
            }
            return;
        }
    }
}

/// Rotation matrix action of a unit quaternion on R^3.
fn quat_rotate(q: &[f64; 4], v: &[f64]) -> Vec<f64> {
    let p = [0.0, v[0], v[1], v[2]];
    let r = quat_mul(&quat_mul(q, &p), &quat_conj(q));
    vec![r[1], r[2], r[3]]
}

fn wrap_unit(x: f64) -> f64 {
    // to [0, 1)
    let y = x - x.floor();
    if y >= 1.0 {
        0.0
    } else {
        y
    }
}

fn wrap_signed(x: f64) -> f64 {
    // to [-0.5, 0.5)
    let y = wrap_unit(x);
    if y >= 0.5 {
        y - 1.0
    } else {
        y
    }
}

fn skew_from_coords(n: usize, coords: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::<f64>::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            m[(i, j)] = coords[k];
            m[(j, i)] = -coords[k];
            k += 1;
        }
    }
    m
}

fn coords_from_skew(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            out.push(0.5 * (m[(i, j)] - m[(j, i)]));
        }
    }
    out
}

impl GroupDescriptor {
    pub fn new(family: GroupFamily) -> Self {
        let dim = family.dim();
        let diameter_raw = family.diameter_raw();
        GroupDescriptor {
            family,
            dim,
            diameter_raw,
            metric_scale: 1.0 / diameter_raw,
        }
    }

    pub fn su2() -> Self {
        Self::new(GroupFamily::Su2)
    }
    pub fn so3() -> Self {
        Self::new(GroupFamily::So3)
    }
    pub fn torus(d: usize) -> Self {
        assert!(d >= 1 && d <= 4, "torus dimension must be in 1..=4");
        Self::new(GroupFamily::Torus(d))
    }
    pub fn son(n: usize) -> Self {
        assert!(n >= 3 && n <= 5, "SO(n) supported for n in 3..=5");
        Self::new(GroupFamily::SOn(n))
    }
    pub fn product(factors: Vec<GroupDescriptor>) -> Self {
        Self::new(GroupFamily::Product(
            factors.into_iter().map(|g| g.family).collect(),
        ))
    }

    /// Parse carrier names like `so3`, `su2`, `t2`, `so4`, or products
    /// joined with `x` (`so3xt1`).
    pub fn from_name(name: &str) -> Result<Self> {
        let parts: Vec<&str> = name.split('x').collect();
        let parse_one = |s: &str| -> Result<GroupFamily> {
            match s {
                "su2" => Ok(GroupFamily::Su2),
                "so3" => Ok(GroupFamily::So3),
                "so4" => Ok(GroupFamily::SOn(4)),
                "so5" => Ok(GroupFamily::SOn(5)),
                "t1" => Ok(GroupFamily::Torus(1)),
                "t2" => Ok(GroupFamily::Torus(2)),
                "t3" => Ok(GroupFamily::Torus(3)),
                "t4" => Ok(GroupFamily::Torus(4)),
                other => Err(Error::UnsupportedFamily(other.to_string())),
            }
        };
        if parts.len() == 1 {
            Ok(Self::new(parse_one(parts[0])?))
        } else {
            let fams = parts
                .iter()
                .map(|p| parse_one(p))
                .collect::<Result<Vec<_>>>()?;
            Ok(Self::new(GroupFamily::Product(fams)))
        }
    }

    pub fn name(&self) -> String {
        self.family.name()
    }

    /// Injectivity radius in normalized units.
    pub fn injectivity_radius(&self) -> f64 {
        self.family.injectivity_raw() * self.metric_scale
    }

    pub fn identity(&self) -> GroupElement {
        Self::identity_of(&self.family)
    }

    fn identity_of(family: &GroupFamily) -> GroupElement {
        match family {
            GroupFamily::Su2 | GroupFamily::So3 => GroupElement::Quaternion([1.0, 0.0, 0.0, 0.0]),
            GroupFamily::Torus(d) => GroupElement::Torus(vec![0.0; *d]),
            GroupFamily::SOn(n) => GroupElement::Matrix(DMatrix::identity(*n, *n)),
            GroupFamily::Product(fs) => {
                GroupElement::Product(fs.iter().map(Self::identity_of).collect())
            }
        }
    }

    fn check_element(&self, g: &GroupElement) -> Result<()> {
        fn ok(f: &GroupFamily, g: &GroupElement) -> bool {
            match (f, g) {
                (GroupFamily::Su2, GroupElement::Quaternion(_)) => true,
                (GroupFamily::So3, GroupElement::Quaternion(_)) => true,
                (GroupFamily::Torus(d), GroupElement::Torus(v)) => v.len() == *d,
                (GroupFamily::SOn(n), GroupElement::Matrix(m)) => m.nrows() == *n,
                (GroupFamily::Product(fs), GroupElement::Product(gs)) => {
                    fs.len() == gs.len() && fs.iter().zip(gs).all(|(f, g)| ok(f, g))
                }
                _ => false,
            }
        }
        if ok(&self.family, g) {
            Ok(())
        } else {
            Err(Error::GroupMismatch(format!(
                "element does not belong to {}",
                self.name()
            )))
        }
    }

    /// Re-establish representation invariants (quaternion norm, orthogonality).
    pub fn canonicalize(&self, g: &GroupElement) -> GroupElement {
        Self::canonicalize_of(&self.family, g)
    }

    fn canonicalize_of(family: &GroupFamily, g: &GroupElement) -> GroupElement {
        match (family, g) {
            (GroupFamily::Su2, GroupElement::Quaternion(q)) => {
                let mut q = *q;
                quat_normalize(&mut q);
                GroupElement::Quaternion(q)
            }
            (GroupFamily::So3, GroupElement::Quaternion(q)) => {
                let mut q = *q;
                quat_normalize(&mut q);
                quat_canonical_sign(&mut q);
                GroupElement::Quaternion(q)
            }
            (GroupFamily::Torus(_), GroupElement::Torus(v)) => {
                GroupElement::Torus(v.iter().map(|x| wrap_unit(*x)).collect())
            }
            (GroupFamily::SOn(_), GroupElement::Matrix(m)) => {
                if son::orthogonality_defect(m) > 1e-14 {
                    GroupElement::Matrix(son::polar_project(m))
                } else {
                    GroupElement::Matrix(m.clone())
                }
            }
            (GroupFamily::Product(fs), GroupElement::Product(gs)) => GroupElement::Product(
                fs.iter()
                    .zip(gs)
                    .map(|(f, g)| Self::canonicalize_of(f, g))
                    .collect(),
            ),
            _ => g.clone(),
        }
    }

    pub fn multiply(&self, g: &GroupElement, h: &GroupElement) -> Result<GroupElement> {
        self.check_element(g)?;
        self.check_element(h)?;
        Ok(self.canonicalize(&Self::multiply_of(&self.family, g, h)))
    }

    fn multiply_of(family: &GroupFamily, g: &GroupElement, h: &GroupElement) -> GroupElement {
        match (family, g, h) {
            (_, GroupElement::Quaternion(a), GroupElement::Quaternion(b)) => {
                GroupElement::Quaternion(quat_mul(a, b))
            }
            (_, GroupElement::Torus(a), GroupElement::Torus(b)) => GroupElement::Torus(
                a.iter()
                    .zip(b)
                    .map(|(x, y)| wrap_unit(x + y))
                    .collect(),
            ),
            (_, GroupElement::Matrix(a), GroupElement::Matrix(b)) => GroupElement::Matrix(a * b),
            (GroupFamily::Product(fs), GroupElement::Product(a), GroupElement::Product(b)) => {
                GroupElement::Product(
                    fs.iter()
                        .zip(a.iter().zip(b))
                        .map(|(f, (x, y))| Self::multiply_of(f, x, y))
                        .collect(),
                )
            }
            _ => unreachable!("checked by check_element"),
        }
    }

    pub fn inverse(&self, g: &GroupElement) -> GroupElement {
        match g {
            GroupElement::Quaternion(q) => {
                self.canonicalize(&GroupElement::Quaternion(quat_conj(q)))
            }
            GroupElement::Torus(v) => {
                GroupElement::Torus(v.iter().map(|x| wrap_unit(-x)).collect())
            }
            GroupElement::Matrix(m) => GroupElement::Matrix(m.transpose()),
            GroupElement::Product(gs) => {
                GroupElement::Product(gs.iter().map(|x| self.inverse_of(x)).collect())
            }
        }
    }

    fn inverse_of(&self, g: &GroupElement) -> GroupElement {
        match g {
            GroupElement::Quaternion(q) => GroupElement::Quaternion(quat_conj(q)),
            GroupElement::Torus(v) => {
                GroupElement::Torus(v.iter().map(|x| wrap_unit(-x)).collect())
            }
            GroupElement::Matrix(m) => GroupElement::Matrix(m.transpose()),
            GroupElement::Product(gs) => {
                GroupElement::Product(gs.iter().map(|x| self.inverse_of(x)).collect())
            }
        }
    }

    /// Normalized bi-invariant distance, in [0, 1].
    pub fn distance(&self, g: &GroupElement, h: &GroupElement) -> f64 {
        Self::distance_raw_of(&self.family, g, h) * self.metric_scale
    }

    pub fn distance_to_identity(&self, g: &GroupElement) -> f64 {
        let e = self.identity();
        self.distance(&e, g)
    }

    fn distance_raw_of(family: &GroupFamily, g: &GroupElement, h: &GroupElement) -> f64 {
        match (family, g, h) {
            (GroupFamily::Su2, GroupElement::Quaternion(a), GroupElement::Quaternion(b)) => {
                // angle = 2 atan2(|a-b|, |a+b|): accurate near 0 and pi
                let (dm, dp) = quat_chords(a, b);
                2.0 * dm.atan2(dp)
            }
            (GroupFamily::So3, GroupElement::Quaternion(a), GroupElement::Quaternion(b)) => {
                let (dm, dp) = quat_chords(a, b);
                let (lo, hi) = if dm < dp { (dm, dp) } else { (dp, dm) };
                4.0 * lo.atan2(hi)
            }
            (GroupFamily::Torus(_), GroupElement::Torus(a), GroupElement::Torus(b)) => a
                .iter()
                .zip(b)
                .map(|(x, y)| wrap_signed(x - y).powi(2))
                .sum::<f64>()
                .sqrt(),
            (GroupFamily::SOn(_), GroupElement::Matrix(a), GroupElement::Matrix(b)) => {
                let r = a.transpose() * b;
                son::rotation_angles(&r)
                    .iter()
                    .map(|t| t * t)
                    .sum::<f64>()
                    .sqrt()
            }
            (GroupFamily::Product(fs), GroupElement::Product(a), GroupElement::Product(b)) => fs
                .iter()
                .zip(a.iter().zip(b))
                .map(|(f, (x, y))| Self::distance_raw_of(f, x, y).powi(2))
                .sum::<f64>()
                .sqrt(),
            _ => panic!("group/element mismatch in distance"),
        }
    }

    /// Exponential map; input coordinates in normalized units.
    pub fn exp_map(&self, x: &AlgebraVector) -> GroupElement {
        let raw: Vec<f64> = x.coords.iter().map(|c| c / self.metric_scale).collect();
        self.canonicalize(&Self::exp_raw_of(&self.family, &raw))
    }

    fn exp_raw_of(family: &GroupFamily, raw: &[f64]) -> GroupElement {
        match family {
            GroupFamily::Su2 => {
                let t = (raw[0] * raw[0] + raw[1] * raw[1] + raw[2] * raw[2]).sqrt();
                let s = if t < 1e-12 { 1.0 } else { t.sin() / t };
                GroupElement::Quaternion([t.cos(), s * raw[0], s * raw[1], s * raw[2]])
            }
            GroupFamily::So3 => {
                let t = (raw[0] * raw[0] + raw[1] * raw[1] + raw[2] * raw[2]).sqrt();
                let h = t / 2.0;
                let s = if t < 1e-12 { 0.5 } else { h.sin() / t };
                GroupElement::Quaternion([h.cos(), s * raw[0], s * raw[1], s * raw[2]])
            }
            GroupFamily::Torus(_) => {
                GroupElement::Torus(raw.iter().map(|x| wrap_unit(*x)).collect())
            }
            GroupFamily::SOn(n) => {
                GroupElement::Matrix(son::exp_skew(&skew_from_coords(*n, raw)))
            }
            GroupFamily::Product(fs) => {
                let mut out = Vec::with_capacity(fs.len());
                let mut off = 0;
                for f in fs {
                    let d = f.dim();
                    out.push(Self::exp_raw_of(f, &raw[off..off + d]));
                    off += d;
                }
                GroupElement::Product(out)
            }
        }
    }

    /// Inverse of `exp_map`; errors at or numerically near the cut locus.
    pub fn log_map(&self, g: &GroupElement) -> Result<AlgebraVector> {
        self.check_element(g)?;
        let dist = self.distance_to_identity(g);
        let limit = LOG_CHART_FRACTION * self.injectivity_radius();
        if dist > limit {
            return Err(Error::CutLocus { dist, limit });
        }
        let raw = Self::log_raw_of(&self.family, g)?;
        Ok(AlgebraVector::new(
            raw.into_iter().map(|c| c * self.metric_scale).collect(),
        ))
    }

    fn log_raw_of(family: &GroupFamily, g: &GroupElement) -> Result<Vec<f64>> {
        match (family, g) {
            (GroupFamily::Su2, GroupElement::Quaternion(q)) => {
                let t = clamp1(q[0]).acos();
                let s = t.sin();
                let f = if s < 1e-9 { 1.0 + t * t / 6.0 } else { t / s };
                Ok(vec![f * q[1], f * q[2], f * q[3]])
            }
            (GroupFamily::So3, GroupElement::Quaternion(q)) => {
                let mut q = *q;
                if q[0] < 0.0 {
                    for c in q.iter_mut() {
                        *c = -*c;
                    }
                }
                let h = clamp1(q[0]).acos();
                let s = h.sin();
                let f = if s < 1e-9 {
                    2.0 * (1.0 + h * h / 6.0)
                } else {
                    2.0 * h / s
                };
                Ok(vec![f * q[1], f * q[2], f * q[3]])
            }
            (GroupFamily::Torus(_), GroupElement::Torus(v)) => {
                Ok(v.iter().map(|x| wrap_signed(*x)).collect())
            }
            (GroupFamily::SOn(_), GroupElement::Matrix(m)) => {
                Ok(coords_from_skew(&son::log_rotation(m)?))
            }
            (GroupFamily::Product(fs), GroupElement::Product(gs)) => {
                let mut out = Vec::new();
                for (f, g) in fs.iter().zip(gs) {
                    out.extend(Self::log_raw_of(f, g)?);
                }
                Ok(out)
            }
            _ => Err(Error::GroupMismatch("log_map".into())),
        }
    }

    /// Lie bracket in normalized coordinates.
    pub fn bracket(&self, x: &AlgebraVector, y: &AlgebraVector) -> AlgebraVector {
        // [X, Y]_norm = scale * [X_raw, Y_raw]_raw with X_raw = X / scale
        let raw = Self::bracket_raw_of(
            &self.family,
            &x.coords.iter().map(|c| c / self.metric_scale).collect::<Vec<_>>(),
            &y.coords.iter().map(|c| c / self.metric_scale).collect::<Vec<_>>(),
        );
        AlgebraVector::new(raw.into_iter().map(|c| c * self.metric_scale).collect())
    }

    fn bracket_raw_of(family: &GroupFamily, x: &[f64], y: &[f64]) -> Vec<f64> {
        match family {
            GroupFamily::Su2 => vec![
                2.0 * (x[1] * y[2] - x[2] * y[1]),
                2.0 * (x[2] * y[0] - x[0] * y[2]),
                2.0 * (x[0] * y[1] - x[1] * y[0]),
            ],
            GroupFamily::So3 => vec![
                x[1] * y[2] - x[2] * y[1],
                x[2] * y[0] - x[0] * y[2],
                x[0] * y[1] - x[1] * y[0],
            ],
            GroupFamily::Torus(d) => vec![0.0; *d],
            GroupFamily::SOn(n) => {
                let a = skew_from_coords(*n, x);
                let b = skew_from_coords(*n, y);
                coords_from_skew(&(&a * &b - &b * &a))
            }
            GroupFamily::Product(fs) => {
                let mut out = Vec::new();
                let mut off = 0;
                for f in fs {
                    let d = f.dim();
                    out.extend(Self::bracket_raw_of(f, &x[off..off + d], &y[off..off + d]));
                    off += d;
                }
                out
            }
        }
    }

    /// Matrix of ad(X) acting on raw orthonormal coordinates. Skew-symmetric
    /// for every bi-invariant inner product.
    pub fn ad_matrix_raw(&self, x: &AlgebraVector) -> DMatrix<f64> {
        let raw: Vec<f64> = x.coords.iter().map(|c| c / self.metric_scale).collect();
        let d = self.dim;
        let mut m = DMatrix::<f64>::zeros(d, d);
        for j in 0..d {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            let col = Self::bracket_raw_of(&self.family, &raw, &e);
            for i in 0..d {
                m[(i, j)] = col[i];
            }
        }
        m
    }

    /// Truncated Baker-Campbell-Hausdorff series, orders 1..=4.
    pub fn bch_truncated(&self, x: &AlgebraVector, y: &AlgebraVector, order: usize) -> AlgebraVector {
        let order = order.clamp(1, 4);
        let mut z = x.add(y);
        if order >= 2 {
            z = z.add(&self.bracket(x, y).scaled(0.5));
        }
        if order >= 3 {
            let xxy = self.bracket(x, &self.bracket(x, y));
            let yyx = self.bracket(y, &self.bracket(y, x));
            z = z.add(&xxy.scaled(1.0 / 12.0)).add(&yyx.scaled(1.0 / 12.0));
        }
        if order >= 4 {
            let yxxy = self.bracket(y, &self.bracket(x, &self.bracket(x, y)));
            z = z.add(&yxxy.scaled(-1.0 / 24.0));
        }
        z
    }

    /// Adjoint action Ad(g) on algebra vectors; norm-preserving.
    pub fn adjoint(&self, g: &GroupElement, x: &AlgebraVector) -> AlgebraVector {
        AlgebraVector::new(Self::adjoint_of(&self.family, g, &x.coords))
    }

    fn adjoint_of(family: &GroupFamily, g: &GroupElement, coords: &[f64]) -> Vec<f64> {
        match (family, g) {
            (GroupFamily::Su2, GroupElement::Quaternion(q))
            | (GroupFamily::So3, GroupElement::Quaternion(q)) => quat_rotate(q, coords),
            (GroupFamily::Torus(_), _) => coords.to_vec(),
            (GroupFamily::SOn(n), GroupElement::Matrix(m)) => {
                let a = skew_from_coords(*n, coords);
                coords_from_skew(&(m * a * m.transpose()))
            }
            (GroupFamily::Product(fs), GroupElement::Product(gs)) => {
                let mut out = Vec::new();
                let mut off = 0;
                for (f, g) in fs.iter().zip(gs) {
                    let d = f.dim();
                    out.extend(Self::adjoint_of(f, g, &coords[off..off + d]));
                    off += d;
                }
                out
            }
            _ => panic!("group/element mismatch in adjoint"),
        }
    }

    /// Density of the Haar measure in exponential coordinates, normalized so
    /// the density at 0 is 1. Computed spectrally from ad(X):
    /// |det sinh(ad/2) / (ad/2)| = prod over angle pairs of (sin(t/2)/(t/2))^2.
    pub fn haar_density(&self, x: &AlgebraVector) -> f64 {
        let a = self.ad_matrix_raw(x);
        let m = -(&a * &a); // symmetric PSD, eigenvalues theta_j^2
        let eig = m.symmetric_eigen();
        let mut h = 1.0;
        for mu in eig.eigenvalues.iter() {
            let theta = mu.max(0.0).sqrt();
            let half = theta / 2.0;
            let f = if half < 1e-8 { 1.0 } else { half.sin() / half };
            h *= f.abs();
        }
        h
    }

    /// i.i.d. Haar-uniform samples, deterministic given the RNG stream.
    pub fn haar_sample<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<GroupElement> {
        (0..n).map(|_| self.haar_sample_one(rng)).collect()
    }

    pub fn haar_sample_one<R: Rng>(&self, rng: &mut R) -> GroupElement {
        Self::haar_one_of(&self.family, rng)
    }

    fn haar_one_of<R: Rng>(family: &GroupFamily, rng: &mut R) -> GroupElement {
        match family {
            GroupFamily::Su2 | GroupFamily::So3 => {
                let mut q = [0.0f64; 4];
                loop {
                    for c in q.iter_mut() {
                        *c = rng.sample(StandardNormal);
                    }
                    let n2: f64 = q.iter().map(|c| c * c).sum();
                    if n2 > 1e-12 {
                        break;
                    }
                }
                quat_normalize(&mut q);
                if matches!(family, GroupFamily::So3) {
                    quat_canonical_sign(&mut q);
                }
                GroupElement::Quaternion(q)
            }
            GroupFamily::Torus(d) => {
                GroupElement::Torus((0..*d).map(|_| rng.gen_range(0.0..1.0)).collect())
            }
            GroupFamily::SOn(n) => {
                let m = DMatrix::<f64>::from_fn(*n, *n, |_, _| rng.sample(StandardNormal));
                let qr = m.qr();
                let mut q = qr.q();
                let r = qr.r();
                for j in 0..*n {
                    if r[(j, j)] < 0.0 {
                        for i in 0..*n {
                            q[(i, j)] = -q[(i, j)];
                        }
                    }
                }
                if q.determinant() < 0.0 {
                    // fixed reflection maps Haar on O(n)^- to Haar on SO(n)
                    for i in 0..*n {
                        q[(i, 0)] = -q[(i, 0)];
                    }
                }
                GroupElement::Matrix(q)
            }
            GroupFamily::Product(fs) => {
                GroupElement::Product(fs.iter().map(|f| Self::haar_one_of(f, rng)).collect())
            }
        }
    }

    /// Serialize to a JSON array of the native parameterization.
    /// Quaternion: [w,x,y,z]; torus: angles; SO(n): row-major entries;
    /// product: array of factor arrays.
    pub fn element_to_json(&self, g: &GroupElement) -> Value {
        match g {
            GroupElement::Quaternion(q) => json!(q.to_vec()),
            GroupElement::Torus(v) => json!(v),
            GroupElement::Matrix(m) => {
                let rows: Vec<f64> = (0..m.nrows())
                    .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
                    .map(|(i, j)| m[(i, j)])
                    .collect();
                json!(rows)
            }
            GroupElement::Product(gs) => {
                json!(gs.iter().map(|x| self.element_to_json(x)).collect::<Vec<_>>())
            }
        }
    }

    pub fn element_from_json(&self, v: &Value) -> Result<GroupElement> {
        Self::element_from_json_of(&self.family, v)
            .ok_or_else(|| Error::Invalid("malformed element JSON".into()))
            .map(|g| self.canonicalize(&g))
    }

    fn element_from_json_of(family: &GroupFamily, v: &Value) -> Option<GroupElement> {
        let arr = v.as_array()?;
        match family {
            GroupFamily::Su2 | GroupFamily::So3 => {
                if arr.len() != 4 {
                    return None;
                }
                let mut q = [0.0; 4];
                for (i, x) in arr.iter().enumerate() {
                    q[i] = x.as_f64()?;
                }
                Some(GroupElement::Quaternion(q))
            }
            GroupFamily::Torus(d) => {
                if arr.len() != *d {
                    return None;
                }
                Some(GroupElement::Torus(
                    arr.iter().map(|x| x.as_f64().unwrap_or(f64::NAN)).collect(),
                ))
            }
            GroupFamily::SOn(n) => {
                if arr.len() != n * n {
                    return None;
                }
                let vals: Vec<f64> = arr.iter().filter_map(|x| x.as_f64()).collect();
                Some(GroupElement::Matrix(DMatrix::from_row_slice(*n, *n, &vals)))
            }
            GroupFamily::Product(fs) => {
                if arr.len() != fs.len() {
                    return None;
                }
                let gs: Option<Vec<_>> = fs
                    .iter()
                    .zip(arr)
                    .map(|(f, a)| Self::element_from_json_of(f, a))
                    .collect();
                Some(GroupElement::Product(gs?))
            }
        }
    }
}

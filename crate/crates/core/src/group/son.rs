//! Matrix exponential and logarithm on SO(n), n <= 5.
//!
//! Exponentials of skew-symmetric matrices use scaling-and-squaring with a
//! Taylor series and a final polar projection. Logarithms and rotation
//! angles avoid the real Schur form (whose QR iteration can stall on
//! rotations with repeated eigenvalues) and instead read the invariant
//! planes off the symmetric part (R + R^T)/2: its eigenspaces cluster by
//! cos(theta), and the skew part restricted to a cluster has Frobenius norm
//! sin(theta) * sqrt(2 * planes).

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// exp(A) for skew-symmetric A.
pub fn exp_skew(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.norm();
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let b = a / 2f64.powi(s as i32);
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = DMatrix::<f64>::identity(n, n);
    for k in 1..=18 {
        term = (&term * &b) / k as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    polar_project(&sum)
}

/// A cluster of the symmetric-part spectrum: one or more invariant planes
/// sharing cos(theta), possibly with fixed axes mixed in at cos = 1.
struct PlaneCluster {
    /// orthonormal basis of the eigenspace, n x k
    basis: DMatrix<f64>,
    cos: f64,
    sin: f64,
    planes: usize,
}

fn plane_clusters(r: &DMatrix<f64>) -> Vec<PlaneCluster> {
    let n = r.nrows();
    let sym = (r + r.transpose()) * 0.5;
    let skew = (r - r.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    // sort eigenpairs ascending by eigenvalue
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut clusters = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && (eig.eigenvalues[order[j]] - eig.eigenvalues[order[i]]).abs() < 1e-8 {
            j += 1;
        }
        let k = j - i;
        let mut basis = DMatrix::<f64>::zeros(n, k);
        let mut cos = 0.0;
        for (col, &idx) in order[i..j].iter().enumerate() {
            basis.set_column(col, &eig.eigenvectors.column(idx));
            cos += eig.eigenvalues[idx];
        }
        cos = (cos / k as f64).clamp(-1.0, 1.0);
        // skew restricted to the eigenspace: sin(theta) times a complex
        // structure on the planes, zero on fixed axes
        let m = basis.transpose() * &skew * &basis;
        let planes = k / 2;
        let sin = if planes > 0 {
            (m.norm_squared() / (2.0 * planes as f64)).sqrt()
        } else {
            0.0
        };
        clusters.push(PlaneCluster {
            basis,
            cos,
            sin,
            planes,
        });
        i = j;
    }
    clusters
}

/// Principal logarithm of a rotation matrix. Errors at the cut locus
/// (an eigenvalue pair at -1).
pub fn log_rotation(r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = r.nrows();
    let skew = (r - r.transpose()) * 0.5;
    let mut log = DMatrix::<f64>::zeros(n, n);
    for c in plane_clusters(r) {
        if c.planes == 0 {
            continue;
        }
        let theta = c.sin.atan2(c.cos);
        if theta > std::f64::consts::PI - 1e-7 {
            return Err(Error::CutLocus {
                dist: theta,
                limit: std::f64::consts::PI,
            });
        }
        // theta / sin(theta), stable for small angles
        let factor = if c.sin < 1e-5 {
            1.0 + theta * theta / 6.0
        } else {
            theta / c.sin
        };
        let m = c.basis.transpose() * &skew * &c.basis;
        log += &c.basis * (m * factor) * c.basis.transpose();
    }
    Ok((&log - log.transpose()) * 0.5)
}

/// Rotation angles (one per invariant plane) of a rotation matrix, in
/// [0, pi]. Well defined at the cut locus, unlike the principal log.
pub fn rotation_angles(r: &DMatrix<f64>) -> Vec<f64> {
    let mut angles = Vec::new();
    for c in plane_clusters(r) {
        let theta = c.sin.atan2(c.cos);
        for _ in 0..c.planes {
            angles.push(theta);
        }
    }
    angles.retain(|t| *t > 0.0);
    angles
}

/// Nearest special orthogonal matrix (polar factor). Near-orthogonal inputs
/// take a Newton iteration X <- (X + X^{-T})/2; anything else falls back to
/// the SVD with a determinant sign fix.
pub fn polar_project(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if m.determinant() > 0.1 && orthogonality_defect(m) < 0.3 {
        let mut x = m.clone();
        for _ in 0..12 {
            let inv_t = match x.clone().try_inverse() {
                Some(inv) => inv.transpose(),
                None => break,
            };
            let next = (&x + inv_t) * 0.5;
            let delta = (&next - &x).norm();
            x = next;
            if delta < 1e-15 {
                break;
            }
        }
        return x;
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut p = &u * &vt;
    if p.determinant() < 0.0 {
        // flip the least-significant singular direction
        let mut u2 = u;
        for i in 0..n {
            u2[(i, n - 1)] = -u2[(i, n - 1)];
        }
        p = &u2 * &vt;
    }
    p
}

/// max-norm orthogonality defect ||M^T M - I||_max.
pub fn orthogonality_defect(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let d = m.transpose() * m - DMatrix::<f64>::identity(n, n);
    d.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn skew3(x: f64, y: f64, z: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[0.0, -z, y, z, 0.0, -x, -y, x, 0.0])
    }

    #[test]
    fn exp_log_roundtrip_so3() {
        let a = skew3(0.3, -0.2, 0.5);
        let r = exp_skew(&a);
        let b = log_rotation(&r).unwrap();
        assert!((a - b).norm() < 1e-10);
    }

    #[test]
    fn exp_log_roundtrip_so5() {
        let mut a = DMatrix::<f64>::zeros(5, 5);
        let vals = [0.21, -0.4, 0.13, 0.07, -0.33, 0.5, 0.11, -0.09, 0.25, 0.02];
        let mut k = 0;
        for i in 0..5 {
            for j in (i + 1)..5 {
                a[(i, j)] = vals[k];
                a[(j, i)] = -vals[k];
                k += 1;
            }
        }
        let r = exp_skew(&a);
        assert!(orthogonality_defect(&r) < 1e-12);
        let b = log_rotation(&r).unwrap();
        assert!((a - b).norm() < 1e-9);
    }

    #[test]
    fn log_rejects_cut_locus() {
        // rotation by pi in a plane
        let a = skew3(std::f64::consts::PI, 0.0, 0.0);
        let r = exp_skew(&a);
        assert!(log_rotation(&r).is_err());
    }

    #[test]
    fn angles_of_identity_and_degenerate_rotations() {
        let id = DMatrix::<f64>::identity(4, 4);
        assert!(rotation_angles(&id).is_empty());
        // single plane rotating inside SO(4): repeated +1 eigenvalue
        let mut a = DMatrix::<f64>::zeros(4, 4);
        a[(0, 1)] = -0.7;
        a[(1, 0)] = 0.7;
        let r = exp_skew(&a);
        let angles = rotation_angles(&r);
        assert_eq!(angles.len(), 1);
        assert!((angles[0] - 0.7).abs() < 1e-10);
        // equal angles in both planes: four-fold degenerate symmetric part
        let mut b = DMatrix::<f64>::zeros(4, 4);
        b[(0, 1)] = -0.4;
        b[(1, 0)] = 0.4;
        b[(2, 3)] = -0.4;
        b[(3, 2)] = 0.4;
        let r2 = exp_skew(&b);
        let angles2 = rotation_angles(&r2);
        assert_eq!(angles2.len(), 2);
        for t in angles2 {
            assert!((t - 0.4).abs() < 1e-10);
        }
        let back = log_rotation(&r2).unwrap();
        assert!((back - b).norm() < 1e-10);
    }

    #[test]
    fn angles_at_pi_pair() {
        let mut a = DMatrix::<f64>::zeros(4, 4);
        a[(0, 1)] = -std::f64::consts::PI;
        a[(1, 0)] = std::f64::consts::PI;
        let r = exp_skew(&a);
        let angles = rotation_angles(&r);
        assert_eq!(angles.len(), 1);
        assert!((angles[0] - std::f64::consts::PI).abs() < 1e-7);
    }

    #[test]
    fn polar_project_fixes_reflections() {
        let mut m = DMatrix::<f64>::identity(3, 3);
        m[(2, 2)] = -1.0; // reflection
        let p = polar_project(&m);
        assert!(p.determinant() > 0.0);
        assert!(orthogonality_defect(&p) < 1e-12);
    }
}

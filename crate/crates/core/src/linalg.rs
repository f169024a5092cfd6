//! Small dense matrix helpers for d×d and 2d×2d blocks.

use nalgebra::DMatrix;

use crate::error::{HomError, Result};

pub type Mat = DMatrix<f64>;

pub fn identity(n: usize) -> Mat {
    Mat::identity(n, n)
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(HomError::invalid("ragged or empty matrix"));
    }
    Ok(Mat::from_fn(n, rows[0].len(), |i, j| rows[i][j]))
}

pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Row-major slice view as a square matrix.
pub fn from_slice(d: usize, data: &[f64]) -> Mat {
    Mat::from_row_slice(d, d, &data[..d * d])
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn asymmetry(m: &Mat) -> f64 {
    (m - m.transpose()).abs().max()
}

/// Eigenvalues of a symmetric matrix in ascending order.
///
/// Sizes 1 to 3 use closed forms; larger blocks fall back to Jacobi sweeps.
pub fn sym_eigenvalues(m: &Mat) -> Vec<f64> {
    let n = m.nrows();
    let mut ev = match n {
        1 => vec![m[(0, 0)]],
        2 => {
            let (a, b, d) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
            let mid = 0.5 * (a + d);
            let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
            vec![mid - rad, mid + rad]
        }
        3 => sym3_eigenvalues(&symmetrize(m)),
        _ => nalgebra::SymmetricEigen::new(symmetrize(m))
            .eigenvalues
            .iter()
            .copied()
            .collect(),
    };
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    ev
}

fn sym3_eigenvalues(a: &Mat) -> Vec<f64> {
    let p1 = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
    if p1 == 0.0 {
        return vec![a[(0, 0)], a[(1, 1)], a[(2, 2)]];
    }
    let q = a.trace() / 3.0;
    let p2 = (a[(0, 0)] - q).powi(2) + (a[(1, 1)] - q).powi(2) + (a[(2, 2)] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let b = (a - identity(3) * q) / p;
    let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    vec![e1, 3.0 * q - e1 - e3, e3]
}

/// Smallest eigenvalue of the symmetric part, computed iteratively for robustness
/// near degenerate spectra.
pub fn min_eigenvalue(m: &Mat) -> f64 {
    let s = symmetrize(m);
    if s.nrows() == 1 {
        return s[(0, 0)];
    }
    nalgebra::SymmetricEigen::new(s)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Spectral norm. Symmetric input uses the closed-form eigenvalues.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.nrows() == m.ncols() && asymmetry(m) <= 1e-14 * (1.0 + m.abs().max()) {
        sym_eigenvalues(m).iter().fold(0.0_f64, |acc, e| acc.max(e.abs()))
    } else {
        let g = m.transpose() * m;
        sym_eigenvalues(&g).last().copied().unwrap_or(0.0).max(0.0).sqrt()
    }
}

/// `min_eig(upper - lower)`: nonnegative iff `lower ≼ upper`.
pub fn loewner_slack(lower: &Mat, upper: &Mat) -> f64 {
    min_eigenvalue(&(upper - lower))
}

pub fn inverse(m: &Mat) -> Result<Mat> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| HomError::Factorization("singular small matrix".into()))
}

/// Inverse of a symmetric positive definite matrix, with a condition guard.
pub fn spd_inverse(m: &Mat, max_cond: f64) -> Result<Mat> {
    let ev = sym_eigenvalues(m);
    let (lo, hi) = (ev[0], *ev.last().unwrap());
    if !(lo > 0.0) || hi / lo > max_cond {
        return Err(HomError::Factorization(format!(
            "matrix not safely invertible (eigenvalues {lo:e}..{hi:e})"
        )));
    }
    let s = symmetrize(m);
    let inv = s
        .cholesky()
        .ok_or_else(|| HomError::Factorization("cholesky failed".into()))?
        .inverse();
    Ok(symmetrize(&inv))
}

/// Skew-symmetric d×d matrix from its independent components.
///
/// d = 2 uses one scalar κ in position (0,1); d = 3 uses (k01, k02, k12).
pub fn skew_from_components(d: usize, comps: &[f64]) -> Mat {
    let mut k = Mat::zeros(d, d);
    let mut c = 0;
    for i in 0..d {
        for j in (i + 1)..d {
            k[(i, j)] = comps[c];
            k[(j, i)] = -comps[c];
            c += 1;
        }
    }
    k
}

/// Block matrix [[a, b], [c, d]].
pub fn block2(a: &Mat, b: &Mat, c: &Mat, d: &Mat) -> Mat {
    let n = a.nrows();
    let mut out = Mat::zeros(2 * n, 2 * n);
    out.view_mut((0, 0), (n, n)).copy_from(a);
    out.view_mut((0, n), (n, n)).copy_from(b);
    out.view_mut((n, 0), (n, n)).copy_from(c);
    out.view_mut((n, n), (n, n)).copy_from(d);
    out
}

/// Splits a 2d×2d matrix into its four d×d blocks.
pub fn blocks(m: &Mat) -> (Mat, Mat, Mat, Mat) {
    let n = m.nrows() / 2;
    (
        m.view((0, 0), (n, n)).into_owned(),
        m.view((0, n), (n, n)).into_owned(),
        m.view((n, 0), (n, n)).into_owned(),
        m.view((n, n), (n, n)).into_owned(),
    )
}

/// Pointwise double-variable matrix of a constant coefficient a = s + k:
/// [[s + kᵀs⁻¹k, −kᵀs⁻¹], [−s⁻¹k, s⁻¹]].
pub fn pointwise_double_matrix(s: &Mat, k: &Mat) -> Result<Mat> {
    let sinv = spd_inverse(s, 1e14)?;
    let b = s + k.transpose() * &sinv * k;
    let a12 = -(k.transpose() * &sinv);
    let a21 = -(&sinv * k);
    Ok(symmetrize(&block2(&b, &a12, &a21, &sinv)))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

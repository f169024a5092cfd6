//! Coarse-grained matrices s(U), s*(U), k(U), b(U) and the double-variable
//! matrix A(U), obtained from J(U,p,q) by polarization.
//!
//! With ξ = (−p, q), the quantity Q(ξ) = J(U,p,q) + p·q is the quadratic form
//! ½ ξ·A(U)ξ, so the 2d(2d+1)/2 values Q(e_i) and Q(e_i + e_j) determine A(U).

pub mod cache;
pub mod verify;

use serde::{Deserialize, Serialize};

use crate::error::{HomError, Result};
use crate::fields::CoefficientField;
use crate::linalg::{self, Mat};
use crate::solver::{assemble, AssembledOperator, JSolution, KktSystem};
use crate::triadic::TriadicCube;

pub use cache::{hierarchy_sweep, HierarchyCache, SweepReport, SweepResult};
pub use verify::{
    loewner_chain, verify_adjoint, verify_centering, verify_cg_inequalities, verify_maximizer_averages,
    verify_polarization, verify_quadratic_response, AdjointReport, AveragesReport, CenteringReport, ChainReport,
    HarmonicSampler, InequalityReport, PolarizationReport, ResponseReport,
};

/// Relative threshold below which A₂₂ counts as singular.
pub const DEGENERATE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoarseGrainOptions {
    /// Q1 elements per unit cell per axis.
    pub resolution: usize,
    /// Allowed negative eigenvalue of A(U), relative to its trace.
    pub psd_tol: f64,
    /// Use the closed form on single unit cells, where the coefficient is constant.
    pub unit_cell_shortcut: bool,
}

impl Default for CoarseGrainOptions {
    fn default() -> Self {
        Self { resolution: 1, psd_tol: 1e-10, unit_cell_shortcut: true }
    }
}

pub(crate) mod mat_rows {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::linalg::{self, Mat};

    pub fn serialize<S: Serializer>(m: &Mat, ser: S) -> Result<S::Ok, S::Error> {
        linalg::to_rows(m).serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Mat, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(de)?;
        linalg::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// All coarse-grained quantities of one cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseGrainedMatrices {
    pub cube: TriadicCube,
    #[serde(with = "mat_rows")]
    pub s: Mat,
    #[serde(with = "mat_rows")]
    pub s_star: Mat,
    #[serde(with = "mat_rows")]
    pub k: Mat,
    #[serde(with = "mat_rows")]
    pub b: Mat,
    /// The 2d×2d double-variable matrix.
    #[serde(with = "mat_rows")]
    pub a: Mat,
}

impl CoarseGrainedMatrices {
    /// Extracts the blocks of a symmetric double-variable matrix.
    ///
    /// s* = A₂₂⁻¹, k = −A₂₂⁻¹A₂₁, b = A₁₁ and s = A₁₁ − A₁₂A₂₂⁻¹A₂₁.
    pub fn from_double_matrix(cube: TriadicCube, a: Mat) -> Result<Self> {
        let d = a.nrows() / 2;
        if a.nrows() != 2 * d || a.ncols() != 2 * d || d == 0 {
            return Err(HomError::invalid("double-variable matrix must be 2d×2d"));
        }
        let (a11, a12, a21, a22) = linalg::blocks(&a);
        let trace = a22.trace();
        let min_eig = linalg::min_eigenvalue(&a22);
        if !(min_eig > DEGENERATE_TOL * trace.abs()) {
            return Err(HomError::DegenerateLowerBlock { min_eig, trace });
        }
        let s_star = linalg::symmetrize(&linalg::inverse(&a22)?);
        let k = -(&s_star * &a21);
        let s = linalg::symmetrize(&(&a11 - &a12 * &s_star * &a21));
        Ok(Self { cube, s, s_star, k, b: a11, a })
    }

    pub fn dim(&self) -> usize {
        self.s.nrows()
    }

    /// Q(ξ) = ½ ξ·A ξ.
    pub fn quadratic(&self, xi: &[f64]) -> f64 {
        let x = nalgebra::DVector::from_column_slice(xi);
        0.5 * x.dot(&(&self.a * &x))
    }

    /// J(U,p,q) = ½(−p,q)·A(−p,q) − p·q.
    pub fn j(&self, p: &[f64], q: &[f64]) -> f64 {
        let xi: Vec<f64> = p.iter().map(|v| -v).chain(q.iter().copied()).collect();
        self.quadratic(&xi) - linalg::dot(p, q)
    }

    /// J*(U,p,q′) = ½(p,q′)·A(p,q′) − p·q′.
    pub fn j_star(&self, p: &[f64], q: &[f64]) -> f64 {
        let xi: Vec<f64> = p.iter().chain(q).copied().collect();
        self.quadratic(&xi) - linalg::dot(p, q)
    }

    /// The double-variable matrix of the adjoint field, diag(−I, I)·A·diag(−I, I).
    pub fn adjoint_double(&self) -> Mat {
        let d = self.dim();
        Mat::from_fn(2 * d, 2 * d, |i, j| {
            let sign = if (i < d) == (j < d) { 1.0 } else { -1.0 };
            sign * self.a[(i, j)]
        })
    }

    /// Predicted ⨍∇v = −p + s*⁻¹(q + kp).
    pub fn predicted_gradient(&self, p: &[f64], q: &[f64]) -> Result<Vec<f64>> {
        let pv = nalgebra::DVector::from_column_slice(p);
        let qv = nalgebra::DVector::from_column_slice(q);
        let sinv = linalg::inverse(&self.s_star)?;
        Ok((-&pv + sinv * (qv + &self.k * &pv)).iter().copied().collect())
    }

    /// Predicted ⨍a∇v = (I − kᵀs*⁻¹)q − bp.
    pub fn predicted_flux(&self, p: &[f64], q: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        let pv = nalgebra::DVector::from_column_slice(p);
        let qv = nalgebra::DVector::from_column_slice(q);
        let sinv = linalg::inverse(&self.s_star)?;
        let m = linalg::identity(d) - self.k.transpose() * sinv;
        Ok((m * qv - &self.b * pv).iter().copied().collect())
    }
}

/// Canonical polarization pairs (p, q) for ξ = e_i and ξ = e_i + e_j, i < j.
fn polarization_pairs(d: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let to_pq = |xi: &[f64]| -> (Vec<f64>, Vec<f64>) {
        (xi[..d].iter().map(|v| -v).collect(), xi[d..].to_vec())
    };
    let mut out = Vec::with_capacity(d * (2 * d + 1));
    for i in 0..2 * d {
        let mut xi = vec![0.0; 2 * d];
        xi[i] = 1.0;
        out.push(to_pq(&xi));
    }
    for i in 0..2 * d {
        for j in (i + 1)..2 * d {
            let mut xi = vec![0.0; 2 * d];
            xi[i] = 1.0;
            xi[j] = 1.0;
            out.push(to_pq(&xi));
        }
    }
    out
}

/// A factored cube: operator, saddle-point factorization and its matrices.
pub struct CubeSolution {
    pub op: AssembledOperator,
    pub kkt: KktSystem,
    pub matrices: CoarseGrainedMatrices,
}

impl CubeSolution {
    /// Maximizers of J for each (p, q), sharing the factorization.
    pub fn solve(&self, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<Vec<JSolution>> {
        self.kkt.solve(&self.op, pairs)
    }

    pub fn maximizer(&self, p: &[f64], q: &[f64]) -> Result<JSolution> {
        Ok(self.solve(&[(p.to_vec(), q.to_vec())])?.remove(0))
    }
}

fn polarize(op: &AssembledOperator, kkt: &KktSystem, opts: &CoarseGrainOptions) -> Result<Mat> {
    let d = op.dim;
    let n2 = 2 * d;
    let pairs = polarization_pairs(d);
    let sols = kkt.solve(op, &pairs)?;
    let qv: Vec<f64> = sols.iter().map(|s| s.j + linalg::dot(&s.p, &s.q)).collect();
    let mut a = Mat::zeros(n2, n2);
    for i in 0..n2 {
        a[(i, i)] = 2.0 * qv[i];
    }
    let mut c = n2;
    for i in 0..n2 {
        for j in (i + 1)..n2 {
            let v = qv[c] - qv[i] - qv[j];
            a[(i, j)] = v;
            a[(j, i)] = v;
            c += 1;
        }
    }
    let trace = a.trace().abs().max(f64::MIN_POSITIVE);
    let min_eig = linalg::min_eigenvalue(&a);
    if min_eig < -opts.psd_tol * trace {
        return Err(HomError::check(format!(
            "double-variable matrix on {} is not positive semidefinite (min eigenvalue {min_eig:e})",
            op.cube
        )));
    }
    Ok(a)
}

/// Assembles and factors `cube`, and extracts its coarse-grained matrices.
pub fn solve_cube(field: &CoefficientField, cube: &TriadicCube, opts: &CoarseGrainOptions) -> Result<CubeSolution> {
    let op = assemble(field, cube, opts.resolution)?;
    let kkt = KktSystem::new(&op)?;
    let a = polarize(&op, &kkt, opts)?;
    let matrices = CoarseGrainedMatrices::from_double_matrix(cube.clone(), a)?;
    Ok(CubeSolution { op, kkt, matrices })
}

/// Coarse-grained matrices of `field` on `cube`.
pub fn coarse_grain_cube(
    field: &CoefficientField,
    cube: &TriadicCube,
    opts: &CoarseGrainOptions,
) -> Result<CoarseGrainedMatrices> {
    if cube.dim() != field.dim() {
        return Err(HomError::invalid("cube and field dimensions differ"));
    }
    if cube.level == 0 && opts.unit_cell_shortcut {
        field.require_cover(cube)?;
        let idx = field.index(&cube.offset).expect("cover checked");
        return CoarseGrainedMatrices::from_double_matrix(cube.clone(), field.pointwise_double(idx)?);
    }
    Ok(solve_cube(field, cube, opts)?.matrices)
}

/// Coarse-grained matrices of the adjoint field aᵀ on `cube`.
pub fn coarse_grain_adjoint(
    field: &CoefficientField,
    cube: &TriadicCube,
    opts: &CoarseGrainOptions,
) -> Result<CoarseGrainedMatrices> {
    coarse_grain_cube(&field.adjoint(), cube, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{FieldKind, FieldSpec};

    fn no_shortcut() -> CoarseGrainOptions {
        CoarseGrainOptions { unit_cell_shortcut: false, ..Default::default() }
    }

    fn constant(d: usize, level: u32, m: Vec<Vec<f64>>) -> CoefficientField {
        FieldSpec::new(d, level, 0, FieldKind::Constant { matrix: m }).generate().unwrap()
    }

    #[test]
    fn constant_scalar_field_gives_diagonal_double_matrix() {
        for c in [1.0, 2.5] {
            let f = constant(2, 2, vec![vec![c, 0.0], vec![0.0, c]]);
            let m = coarse_grain_cube(&f, &f.domain(), &no_shortcut()).unwrap();
            let mut expect = Mat::zeros(4, 4);
            for i in 0..2 {
                expect[(i, i)] = c;
                expect[(i + 2, i + 2)] = 1.0 / c;
            }
            assert!((&m.a - expect).abs().max() < 1e-10, "{}", m.a);
            assert!(m.k.abs().max() < 1e-10);
        }
    }

    #[test]
    fn anisotropic_constant_field() {
        let f = constant(2, 1, vec![vec![1.0, 0.0], vec![0.0, 4.0]]);
        let m = coarse_grain_cube(&f, &f.domain(), &no_shortcut()).unwrap();
        let diag = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 4.0]));
        assert!((&m.s - &diag).abs().max() < 1e-10);
        assert!((&m.s_star - &diag).abs().max() < 1e-10);
        assert!(m.k.abs().max() < 1e-10);
    }

    #[test]
    fn constant_skew_field_has_k_block() {
        let f = constant(2, 1, vec![vec![1.0, 0.5], vec![-0.5, 1.0]]);
        let m = coarse_grain_cube(&f, &f.domain(), &no_shortcut()).unwrap();
        let pw = f.pointwise_double(0).unwrap();
        assert!((&m.a - pw).abs().max() < 1e-10);
        assert!((m.k[(0, 1)] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn unit_cell_shortcut_matches_solve() {
        let spec = FieldSpec::new(2, 1, 4, FieldKind::SkewLognormal { sigma: 0.6, skew: 0.8 });
        let f = spec.generate().unwrap();
        for cube in f.domain().subcubes(0, crate::triadic::Lattice::Partition).unwrap() {
            let fast = coarse_grain_cube(&f, &cube, &CoarseGrainOptions::default()).unwrap();
            let slow = coarse_grain_cube(&f, &cube, &no_shortcut()).unwrap();
            assert!((&fast.a - &slow.a).abs().max() < 1e-10 * fast.a.abs().max());
        }
    }

    #[test]
    fn polarized_matrix_reproduces_direct_j() {
        let spec = FieldSpec::new(2, 2, 9, FieldKind::SkewLognormal { sigma: 0.5, skew: 0.6 });
        let f = spec.generate().unwrap();
        let sol = solve_cube(&f, &f.domain(), &no_shortcut()).unwrap();
        let pairs = vec![(vec![0.3, -1.2], vec![0.7, 0.4]), (vec![1.0, 0.0], vec![0.0, 0.0])];
        for s in sol.solve(&pairs).unwrap() {
            let from_a = sol.matrices.j(&s.p, &s.q);
            assert!((from_a - s.j).abs() < 1e-9 * (1.0 + s.j.abs()));
        }
    }

    #[test]
    fn j_vanishes_at_origin() {
        let f = constant(2, 1, vec![vec![2.0, 0.0], vec![0.0, 2.0]]);
        let m = coarse_grain_cube(&f, &f.domain(), &no_shortcut()).unwrap();
        assert_eq!(m.j(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn degenerate_lower_block_is_rejected() {
        let mut a = Mat::identity(4, 4);
        a[(3, 3)] = 0.0;
        let err = CoarseGrainedMatrices::from_double_matrix(TriadicCube::domain(2, 0), a).unwrap_err();
        assert!(matches!(err, HomError::DegenerateLowerBlock { .. }));
    }

    #[test]
    fn extraction_round_trips_pointwise_blocks() {
        let s = Mat::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let k = linalg::skew_from_components(2, &[0.7]);
        let a = linalg::pointwise_double_matrix(&s, &k).unwrap();
        let m = CoarseGrainedMatrices::from_double_matrix(TriadicCube::domain(2, 0), a).unwrap();
        assert!((&m.s - &s).abs().max() < 1e-12);
        assert!((&m.s_star - &s).abs().max() < 1e-12);
        assert!((&m.k - &k).abs().max() < 1e-12);
    }

    #[test]
    fn serde_round_trip() {
        let f = constant(2, 1, vec![vec![1.5, 0.0], vec![0.0, 1.5]]);
        let m = coarse_grain_cube(&f, &f.domain(), &no_shortcut()).unwrap();
        let back: CoarseGrainedMatrices = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(m, back);
    }
}

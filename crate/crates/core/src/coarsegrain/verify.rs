//! Numerical checks of the identities and inequalities satisfied by the
//! coarse-grained matrices of a single cube.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fields::CoefficientField;
use crate::linalg::{self, Mat};
use crate::solver::linear::interior_system;
use crate::solver::{column, mat_from_columns, AssembledOperator, Factorized};
use crate::triadic::TriadicCube;

use super::{coarse_grain_cube, solve_cube, CoarseGrainOptions, CoarseGrainedMatrices, CubeSolution};

/// Tolerance of the exact identities, relative to the size of the compared quantities.
pub const IDENTITY_TOL: f64 = 1e-8;
/// Tolerance of Loewner comparisons, relative to the norm of the larger matrix.
pub const LOEWNER_TOL: f64 = 1e-8;
/// Tolerance of scalar inequalities, relative to the energy of the test function.
pub const INEQUALITY_TOL: f64 = 1e-9;

fn rel_diff(a: &[f64], b: &[f64], scale: f64) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    diff / scale.max(f64::MIN_POSITIVE)
}

fn mat_rel_diff(a: &Mat, b: &Mat) -> f64 {
    (a - b).abs().max() / a.abs().max().max(b.abs().max()).max(1.0)
}

/// Draws a-harmonic functions with i.i.d. standard normal boundary values.
pub struct HarmonicSampler {
    factor: Option<Factorized>,
}

impl HarmonicSampler {
    pub fn new(op: &AssembledOperator) -> Result<Self> {
        if op.interior.is_empty() {
            return Ok(Self { factor: None });
        }
        let (_, trips) = interior_system(op);
        Ok(Self { factor: Some(Factorized::new(op.interior.len(), &trips)?) })
    }

    /// Harmonic extension of random boundary data, shifted to mass-weighted mean zero.
    pub fn sample<R: Rng + ?Sized>(&self, op: &AssembledOperator, rng: &mut R) -> Vec<f64> {
        let mut u = vec![0.0; op.node_count()];
        for &b in &op.boundary {
            u[b] = rng.sample(StandardNormal);
        }
        if let Some(f) = &self.factor {
            let ku = op.apply_stiffness(&u);
            let rhs: Vec<f64> = op.interior.iter().map(|&i| -ku[i]).collect();
            let x = f.solve(&mat_from_columns(rhs.len(), &[rhs]), 2);
            for (&i, v) in op.interior.iter().zip(column(&x, 0)) {
                u[i] = v;
            }
        }
        let total: f64 = op.mass.iter().sum();
        let mean = linalg::dot(&op.mass, &u) / total;
        u.iter_mut().for_each(|x| *x -= mean);
        u
    }
}

/// Averages ⨍∇w, ⨍a∇w and the energy ⨍∇w·s∇w of a discrete function.
fn averages(op: &AssembledOperator, w: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let g: Vec<f64> = op.grad_integral(w).iter().map(|x| x / op.volume).collect();
    let f: Vec<f64> = op.flux_integral(w).iter().map(|x| x / op.volume).collect();
    (g, f, op.energy(w) / op.volume)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragesReport {
    pub grad_average: Vec<f64>,
    pub flux_average: Vec<f64>,
    pub predicted_grad: Vec<f64>,
    pub predicted_flux: Vec<f64>,
    pub grad_error: f64,
    pub flux_error: f64,
    pub passed: bool,
}

/// Compares the averages of the maximizer with their closed forms in terms of the matrices.
pub fn verify_maximizer_averages(sol: &CubeSolution, p: &[f64], q: &[f64]) -> Result<AveragesReport> {
    let v = sol.maximizer(p, q)?.v;
    let (g, f, _) = averages(&sol.op, &v);
    let m = &sol.matrices;
    let pg = m.predicted_gradient(p, q)?;
    let pf = m.predicted_flux(p, q)?;
    let data = linalg::norm2(p) + linalg::norm2(q);
    let grad_error = rel_diff(&g, &pg, linalg::norm2(&pg).max(data));
    let flux_error = rel_diff(&f, &pf, linalg::norm2(&pf).max(data));
    Ok(AveragesReport {
        grad_average: g,
        flux_average: f,
        predicted_grad: pg,
        predicted_flux: pf,
        grad_error,
        flux_error,
        passed: grad_error <= IDENTITY_TOL && flux_error <= IDENTITY_TOL,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseReport {
    pub trials: usize,
    /// Largest relative defect over the random comparisons.
    pub max_defect: f64,
    /// Defect of the comparison w = 0, where the identity reduces to J = ½⨍∇v·s∇v.
    pub zero_defect: f64,
    /// Defect of the comparison w = v, where both sides vanish.
    pub self_defect: f64,
    pub passed: bool,
}

/// Checks J − ⨍(−½∇w·s∇w − p·a∇w + q·∇w) = ½⨍(∇v−∇w)·s(∇v−∇w) for random a-harmonic w.
pub fn verify_quadratic_response<R: Rng + ?Sized>(
    sol: &CubeSolution,
    sampler: &HarmonicSampler,
    p: &[f64],
    q: &[f64],
    trials: usize,
    rng: &mut R,
) -> Result<ResponseReport> {
    let op = &sol.op;
    let js = sol.maximizer(p, q)?;
    let defect = |w: &[f64]| {
        let (g, f, e) = averages(op, w);
        let lhs = js.j - (-0.5 * e - linalg::dot(p, &f) + linalg::dot(q, &g));
        let diff: Vec<f64> = js.v.iter().zip(w).map(|(a, b)| a - b).collect();
        let rhs = 0.5 * op.energy(&diff) / op.volume;
        (lhs - rhs).abs() / (js.j.abs() + e + rhs).max(f64::MIN_POSITIVE)
    };
    let zero_defect = defect(&vec![0.0; op.node_count()]);
    let self_defect = defect(&js.v);
    let mut max_defect = zero_defect.max(self_defect);
    for _ in 0..trials {
        let w = sampler.sample(op, rng);
        max_defect = max_defect.max(defect(&w));
    }
    Ok(ResponseReport { trials, max_defect, zero_defect, self_defect, passed: max_defect <= IDENTITY_TOL })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub trials: usize,
    /// min over w of (⨍∇w·s∇w − (⨍∇w)·s*(⨍∇w)) / ⨍∇w·s∇w.
    pub min_slack_s_star: f64,
    /// min over w of (⨍∇w·s∇w − (⨍a∇w)·b⁻¹(⨍a∇w)) / ⨍∇w·s∇w.
    pub min_slack_b: f64,
    /// min over w and (p, q) of the normalized slack in |⨍(p·a∇w − q·∇w)| ≤ (2J)^½(⨍∇w·s∇w)^½.
    pub min_slack_difference: f64,
    /// Relative gap between both sides of the last inequality at w = v.
    pub saturation_defect: f64,
    pub violations: usize,
    pub passed: bool,
}

/// Checks the coarse-graining inequalities on random a-harmonic functions and random (p, q).
pub fn verify_cg_inequalities<R: Rng + ?Sized>(
    sol: &CubeSolution,
    sampler: &HarmonicSampler,
    trials: usize,
    rng: &mut R,
) -> Result<InequalityReport> {
    let op = &sol.op;
    let m = &sol.matrices;
    let d = op.dim;
    let b_inv = linalg::spd_inverse(&m.b, 1e14)?;
    let quad = |a: &Mat, x: &[f64]| {
        let v = nalgebra::DVector::from_column_slice(x);
        v.dot(&(a * &v))
    };
    let normal = |rng: &mut R| -> Vec<f64> { (0..d).map(|_| rng.sample(StandardNormal)).collect() };

    let (mut s1, mut s2, mut s3) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut violations = 0;
    for _ in 0..trials {
        let w = sampler.sample(op, rng);
        let (g, f, e) = averages(op, &w);
        if !(e > 0.0) {
            continue;
        }
        let a = (e - quad(&m.s_star, &g)) / e;
        let b = (e - quad(&b_inv, &f)) / e;
        let p = normal(rng);
        let q = normal(rng);
        let j = m.j(&p, &q).max(0.0);
        let lhs = (linalg::dot(&p, &f) - linalg::dot(&q, &g)).abs();
        let rhs = (2.0 * j).sqrt() * e.sqrt();
        let c = (rhs - lhs) / (rhs + lhs).max(f64::MIN_POSITIVE);
        if a < -INEQUALITY_TOL || b < -INEQUALITY_TOL || c < -INEQUALITY_TOL {
            violations += 1;
        }
        s1 = s1.min(a);
        s2 = s2.min(b);
        s3 = s3.min(c);
    }

    let p = normal(rng);
    let q = normal(rng);
    let js = sol.maximizer(&p, &q)?;
    let (g, f, e) = averages(op, &js.v);
    let lhs = (linalg::dot(&p, &f) - linalg::dot(&q, &g)).abs();
    let rhs = (2.0 * js.j.max(0.0)).sqrt() * e.sqrt();
    let saturation_defect = (lhs - rhs).abs() / rhs.max(f64::MIN_POSITIVE);

    Ok(InequalityReport {
        trials,
        min_slack_s_star: s1,
        min_slack_b: s2,
        min_slack_difference: s3,
        saturation_defect,
        violations,
        passed: violations == 0 && saturation_defect <= IDENTITY_TOL,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarizationReport {
    pub pairs: usize,
    pub max_defect: f64,
    pub passed: bool,
}

/// Compares J from the assembled matrix with direct saddle-point values.
pub fn verify_polarization(sol: &CubeSolution, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<PolarizationReport> {
    let mut max_defect = 0.0f64;
    for s in sol.solve(pairs)? {
        let scale = 1.0 + s.j.abs() + linalg::dot(&s.p, &s.p) + linalg::dot(&s.q, &s.q);
        max_defect = max_defect.max((sol.matrices.j(&s.p, &s.q) - s.j).abs() / scale);
    }
    Ok(PolarizationReport { pairs: pairs.len(), max_defect, passed: max_defect <= IDENTITY_TOL })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjointReport {
    pub s_defect: f64,
    pub s_star_defect: f64,
    /// Defect of k(aᵀ) = −k(a).
    pub k_defect: f64,
    /// Defect of A(aᵀ) = diag(−I, I)·A(a)·diag(−I, I).
    pub double_defect: f64,
    /// Largest defect between J* evaluated from A(a) and from the adjoint solve.
    pub j_star_defect: f64,
    pub passed: bool,
}

/// Compares the primal and adjoint coarse-grained matrices on `cube`.
pub fn verify_adjoint(
    field: &CoefficientField,
    cube: &TriadicCube,
    opts: &CoarseGrainOptions,
    pairs: &[(Vec<f64>, Vec<f64>)],
) -> Result<AdjointReport> {
    let primal = coarse_grain_cube(field, cube, opts)?;
    let adj = solve_cube(&field.adjoint(), cube, opts)?;
    let am = &adj.matrices;
    let s_defect = mat_rel_diff(&primal.s, &am.s);
    let s_star_defect = mat_rel_diff(&primal.s_star, &am.s_star);
    let k_defect = mat_rel_diff(&primal.k, &(-&am.k));
    let double_defect = mat_rel_diff(&primal.adjoint_double(), &am.a);
    let mut j_star_defect = 0.0f64;
    for s in adj.solve(pairs)? {
        let scale = 1.0 + s.j.abs() + linalg::dot(&s.p, &s.p) + linalg::dot(&s.q, &s.q);
        j_star_defect = j_star_defect.max((primal.j_star(&s.p, &s.q) - s.j).abs() / scale);
    }
    let worst = s_defect.max(s_star_defect).max(k_defect).max(double_defect).max(j_star_defect);
    Ok(AdjointReport {
        s_defect,
        s_star_defect,
        k_defect,
        double_defect,
        j_star_defect,
        passed: worst <= IDENTITY_TOL,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenteringReport {
    pub s_defect: f64,
    pub s_star_defect: f64,
    /// Defect of k(U; a − h) = k(U; a) − h.
    pub k_defect: f64,
    pub passed: bool,
}

/// Coarse-grains a and a − h on `cube` and compares the blocks.
pub fn verify_centering(
    field: &CoefficientField,
    h: &Mat,
    cube: &TriadicCube,
    opts: &CoarseGrainOptions,
) -> Result<CenteringReport> {
    let centered = field.center_skew(h)?;
    let before = coarse_grain_cube(field, cube, opts)?;
    let after = coarse_grain_cube(&centered, cube, opts)?;
    let s_defect = mat_rel_diff(&before.s, &after.s);
    let s_star_defect = mat_rel_diff(&before.s_star, &after.s_star);
    let k_defect = mat_rel_diff(&(&before.k - h), &after.k);
    Ok(CenteringReport {
        s_defect,
        s_star_defect,
        k_defect,
        passed: s_defect.max(s_star_defect).max(k_defect) <= IDENTITY_TOL,
    })
}

/// Minimum eigenvalues of the consecutive differences in
/// (⨍s⁻¹)⁻¹ ≼ s* ≼ s ≼ b ≼ ⨍(s + kᵀs⁻¹k), each relative to the larger matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub harmonic_to_s_star: f64,
    pub s_star_to_s: f64,
    pub s_to_b: f64,
    pub b_to_mean_b: f64,
    pub min_slack: f64,
    pub passed: bool,
}

fn cube_mean(field: &CoefficientField, cube: &TriadicCube, f: impl Fn(&Mat, &Mat) -> Mat) -> Mat {
    let d = field.dim();
    let mut acc = Mat::zeros(d, d);
    for cell in cube.cells() {
        let idx = field.index(&cell).expect("cube inside window");
        acc += f(&field.s_matrix(idx), &field.k_matrix(idx));
    }
    acc / cube.volume()
}

fn relative_slack(lower: &Mat, upper: &Mat) -> f64 {
    let scale = linalg::spectral_norm(upper).max(linalg::spectral_norm(lower)).max(f64::MIN_POSITIVE);
    linalg::loewner_slack(lower, upper) / scale
}

/// Ordering chain of the coarse-grained matrices on one cube.
pub fn loewner_chain(field: &CoefficientField, m: &CoarseGrainedMatrices) -> Result<ChainReport> {
    field.require_cover(&m.cube)?;
    let inv = |s: &Mat| s.clone().try_inverse().expect("validated SPD");
    let mean_sinv = cube_mean(field, &m.cube, |s, _| inv(s));
    let harmonic = linalg::spd_inverse(&mean_sinv, 1e14)?;
    let mean_b = cube_mean(field, &m.cube, |s, k| s + k.transpose() * inv(s) * k);
    let harmonic_to_s_star = relative_slack(&harmonic, &m.s_star);
    let s_star_to_s = relative_slack(&m.s_star, &m.s);
    let s_to_b = relative_slack(&m.s, &m.b);
    let b_to_mean_b = relative_slack(&m.b, &mean_b);
    let min_slack = harmonic_to_s_star.min(s_star_to_s).min(s_to_b).min(b_to_mean_b);
    Ok(ChainReport {
        harmonic_to_s_star,
        s_star_to_s,
        s_to_b,
        b_to_mean_b,
        min_slack,
        passed: min_slack >= -LOEWNER_TOL,
    })
}

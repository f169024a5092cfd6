//! J(U,p,q) by a saddle-point solve.
//!
//! maximize −½ vᵀSv + ℓᵀv subject to K_{I,:} v = 0 and v_0 = 0, with
//! ℓ = −Bᵀp + Gᵀq. The system
//!
//! ```text
//! [ S    K_Iᵀ  e_0 ] [v]   [ℓ]
//! [ K_I  0     0   ] [λ] = [0]
//! [ e_0ᵀ 0     0   ] [μ]   [0]
//! ```
//!
//! is factored once and reused for every (p, q). S, ℓ and K_I all vanish on
//! constants, so pinning one node only fixes the additive constant; the
//! maximizer is shifted to mean zero afterwards.

use faer::sparse::Triplet;

use crate::error::{HomError, Result};
use crate::linalg;

use super::assemble::AssembledOperator;
use super::{column, mat_from_columns, Factorized};

/// Maximizer and value for one (p, q).
#[derive(Debug, Clone)]
pub struct JSolution {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// (1/|U|)(−½ vᵀSv + ℓᵀv).
    pub j: f64,
    /// (1/2|U|) vᵀSv.
    pub half_energy: f64,
    /// Relative mismatch between `j` and `half_energy`.
    pub energy_defect: f64,
    pub v: Vec<f64>,
    pub residual: f64,
}

pub struct KktSystem {
    factor: Factorized,
    nodes: usize,
    /// Refinement rounds per solve.
    pub refinement_steps: usize,
}

/// Relative tolerance of the energy identity checked on every solve.
pub const ENERGY_TOL: f64 = 1e-8;

impl KktSystem {
    pub fn new(op: &AssembledOperator) -> Result<Self> {
        let n = op.node_count();
        let ni = op.interior.len();
        let dim = n + ni + 1;
        let srp = op.sym_stiffness.symbolic().row_ptr();
        let sci = op.sym_stiffness.symbolic().col_idx();
        let sval = op.sym_stiffness.val();
        let krp = op.stiffness.symbolic().row_ptr();
        let kci = op.stiffness.symbolic().col_idx();
        let kval = op.stiffness.val();
        let mut trips = Vec::with_capacity(sval.len() + 2 * kval.len() + 2 * n);
        for i in 0..n {
            for p in srp[i]..srp[i + 1] {
                trips.push(Triplet::new(i, sci[p], sval[p]));
            }
        }
        trips.push(Triplet::new(0, n + ni, 1.0));
        trips.push(Triplet::new(n + ni, 0, 1.0));
        for (r, &g) in op.interior.iter().enumerate() {
            for p in krp[g]..krp[g + 1] {
                trips.push(Triplet::new(n + r, kci[p], kval[p]));
                trips.push(Triplet::new(kci[p], n + r, kval[p]));
            }
        }
        Ok(Self { factor: Factorized::new(dim, &trips)?, nodes: n, refinement_steps: 2 })
    }

    pub fn factorization_id(&self) -> u64 {
        self.factor.id
    }

    /// Linear functional ℓ = −Bᵀp + Gᵀq.
    pub fn functional(op: &AssembledOperator, p: &[f64], q: &[f64]) -> Vec<f64> {
        let mut l = vec![0.0; op.node_count()];
        for a in 0..op.dim {
            for (li, (b, g)) in l.iter_mut().zip(op.flux_rows[a].iter().zip(&op.grad_rows[a])) {
                *li += -p[a] * b + q[a] * g;
            }
        }
        l
    }

    /// J and maximizers for every (p, q), sharing the factorization.
    pub fn solve(&self, op: &AssembledOperator, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<Vec<JSolution>> {
        let d = op.dim;
        if pairs.iter().any(|(p, q)| p.len() != d || q.len() != d) {
            return Err(HomError::invalid("p and q must have d components"));
        }
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let dim = self.factor.dim();
        let ells: Vec<Vec<f64>> = pairs.iter().map(|(p, q)| Self::functional(op, p, q)).collect();
        let cols: Vec<Vec<f64>> = ells
            .iter()
            .map(|l| {
                let mut c = l.clone();
                c.resize(dim, 0.0);
                c
            })
            .collect();
        let b = mat_from_columns(dim, &cols);
        let x = self.factor.solve(&b, self.refinement_steps);
        let residual = self.factor.residual(&b, &x, op.coef_scale);
        let mut out = Vec::with_capacity(pairs.len());
        for (c, ((p, q), l)) in pairs.iter().zip(&ells).enumerate() {
            let mut v = column(&x, c);
            v.truncate(self.nodes);
            let shift = linalg::dot(&op.mass, &v) / op.volume;
            v.iter_mut().for_each(|x| *x -= shift);
            let svs = op.energy(&v);
            let lv = linalg::dot(l, &v);
            let j = (-0.5 * svs + lv) / op.volume;
            let half_energy = 0.5 * svs / op.volume;
            let energy_defect = if half_energy > 0.0 {
                (j - half_energy).abs() / half_energy
            } else {
                (j - half_energy).abs()
            };
            let xi2 = linalg::dot(p, p) + linalg::dot(q, q);
            if j < -1e-10 * op.coef_scale * xi2.max(1.0) {
                return Err(HomError::check(format!("negative J = {j:e} on {}", op.cube)));
            }
            if energy_defect > ENERGY_TOL && half_energy > 1e-14 * op.coef_scale * xi2 {
                return Err(HomError::check(format!(
                    "energy identity violated on {}: J = {j:e}, ½⨍∇v·s∇v = {half_energy:e}",
                    op.cube
                )));
            }
            out.push(JSolution {
                p: p.clone(),
                q: q.clone(),
                j,
                half_energy,
                energy_defect,
                v,
                residual,
            });
        }
        Ok(out)
    }
}

/// Factors the saddle-point system of `op` and evaluates J for every pair.
pub fn maximize_j(op: &AssembledOperator, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<Vec<JSolution>> {
    KktSystem::new(op)?.solve(op, pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{CoefficientField, FieldKind, FieldSpec};
    use crate::linalg::Mat;
    use crate::solver::assemble::{assemble, to_dense};

    fn constant(c: f64, level: u32) -> CoefficientField {
        FieldSpec::new(2, level, 0, FieldKind::Constant { matrix: vec![vec![c, 0.0], vec![0.0, c]] })
            .generate()
            .unwrap()
    }

    #[test]
    fn identity_coefficient_gives_half_squared_difference() {
        for r in 1..=3 {
            let f = constant(1.0, 1);
            let op = assemble(&f, &f.domain(), r).unwrap();
            let sol = maximize_j(&op, &[(vec![1.0, 0.0], vec![0.0, 1.0])]).unwrap();
            assert!((sol[0].j - 1.0).abs() < 1e-10, "r={r}: {}", sol[0].j);
        }
    }

    #[test]
    fn scaled_identity_formula() {
        let f = constant(2.0, 1);
        let op = assemble(&f, &f.domain(), 1).unwrap();
        let sol = maximize_j(&op, &[(vec![1.0, 0.0], vec![1.0, 0.0]), (vec![0.0; 2], vec![0.0; 2])]).unwrap();
        assert!((sol[0].j - 0.25).abs() < 1e-10, "{}", sol[0].j);
        assert_eq!(sol[1].j, 0.0);
    }

    #[test]
    fn maximizer_is_linear_in_data() {
        let spec = FieldSpec::new(2, 1, 6, FieldKind::SkewLognormal { sigma: 0.7, skew: 0.5 });
        let f = spec.generate().unwrap();
        let op = assemble(&f, &f.domain(), 2).unwrap();
        let pairs = vec![
            (vec![0.3, -1.0], vec![0.2, 0.5]),
            (vec![1.1, 0.4], vec![-0.7, 0.0]),
            (vec![1.4, -0.6], vec![-0.5, 0.5]),
        ];
        let sol = maximize_j(&op, &pairs).unwrap();
        for i in 0..op.node_count() {
            assert!((sol[0].v[i] + sol[1].v[i] - sol[2].v[i]).abs() < 1e-10);
        }
    }

    /// Dense oracle: maximize over an explicit basis of the discrete
    /// a-harmonic, mean-zero subspace.
    fn dense_oracle(op: &AssembledOperator, p: &[f64], q: &[f64]) -> f64 {
        let k = to_dense(&op.stiffness);
        let s = to_dense(&op.sym_stiffness);
        let n = op.node_count();
        let ni = op.interior.len();
        let mut c = Mat::zeros(ni + 1, n);
        for (r, &g) in op.interior.iter().enumerate() {
            for j in 0..n {
                c[(r, j)] = k[(g, j)];
            }
        }
        for j in 0..n {
            c[(ni, j)] = op.mass[j];
        }
        let mut padded = Mat::zeros(n, n);
        padded.view_mut((0, 0), (ni + 1, n)).copy_from(&c);
        let full = padded.svd(false, true);
        let vt_full = full.v_t.unwrap();
        let null: Vec<usize> = (0..n).filter(|&i| full.singular_values[i] < 1e-10).collect();
        let z = Mat::from_fn(n, null.len(), |i, j| vt_full[(null[j], i)]);
        let l = nalgebra::DVector::from_vec(KktSystem::functional(op, p, q));
        let h = z.transpose() * &s * &z;
        let g = z.transpose() * &l;
        let y = h.cholesky().unwrap().solve(&g);
        let v = &z * y;
        let val = -0.5 * (v.transpose() * &s * &v)[(0, 0)] + (l.transpose() * &v)[(0, 0)];
        val / op.volume
    }

    #[test]
    fn kkt_matches_dense_nullspace_oracle() {
        for seed in 0..5 {
            let spec = FieldSpec::new(
                2,
                1,
                seed,
                FieldKind::Checkerboard { low: 1.0, high: 5.0, prob: 0.5, periodic: false },
            );
            let f = spec.generate().unwrap().center_skew(&crate::linalg::skew_from_components(2, &[0.4])).unwrap();
            let op = assemble(&f, &f.domain(), 1).unwrap();
            let p = vec![0.4, -1.0];
            let q = vec![1.2, 0.3];
            let sol = maximize_j(&op, &[(p.clone(), q.clone())]).unwrap();
            let oracle = dense_oracle(&op, &p, &q);
            assert!((sol[0].j - oracle).abs() < 1e-9 * (1.0 + oracle.abs()), "{} vs {oracle}", sol[0].j);
        }
    }
}

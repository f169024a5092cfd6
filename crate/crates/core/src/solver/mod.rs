//! Sparse elliptic solves on the uniform grid: assembly, Dirichlet and
//! Neumann problems, and the constrained maximization behind J.

pub mod assemble;
pub mod kkt;
pub mod linear;

use std::sync::atomic::{AtomicU64, Ordering};

use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use faer::prelude::Solve;
use serde::{Deserialize, Serialize};

use crate::error::{HomError, Result};

pub use assemble::{assemble, AssembledOperator, ReferenceElement};
pub use kkt::{maximize_j, JSolution, KktSystem};
pub use linear::{bicgstab, solve_dirichlet, solve_dirichlet_load, solve_neumann};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    /// Sparse LU with iterative refinement.
    Direct,
    /// Sparse Cholesky; only valid for symmetric systems.
    Cholesky,
    /// Jacobi-preconditioned BiCGSTAB.
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub method: SolveMethod,
    pub residual_tol: f64,
    pub max_iter: usize,
    pub refinement_steps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { method: SolveMethod::Direct, residual_tol: 1e-10, max_iter: 20_000, refinement_steps: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSolveReport {
    /// ‖Ax − b‖_∞ / (‖b‖_∞ + scale·‖x‖_∞).
    pub residual_norm: f64,
    pub factorization_id: u64,
    pub iterations: usize,
    pub status: SolveStatus,
}

static NEXT_FACTORIZATION: AtomicU64 = AtomicU64::new(1);

/// A sparse LU factorization kept together with its matrix for refinement.
pub struct Factorized {
    matrix: SparseColMat<usize, f64>,
    lu: Lu<usize, f64>,
    pub id: u64,
}

impl Factorized {
    pub fn new(n: usize, triplets: &[Triplet<usize, usize, f64>]) -> Result<Self> {
        let matrix = SparseColMat::try_new_from_triplets(n, n, triplets)
            .map_err(|e| HomError::Factorization(format!("{e:?}")))?;
        let lu = matrix
            .sp_lu()
            .map_err(|e| HomError::Factorization(format!("sparse LU: {e:?}")))?;
        Ok(Self { matrix, lu, id: NEXT_FACTORIZATION.fetch_add(1, Ordering::Relaxed) })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Solves for every column of `rhs`, followed by `steps` rounds of refinement.
    pub fn solve(&self, rhs: &faer::Mat<f64>, steps: usize) -> faer::Mat<f64> {
        let mut x = self.lu.solve(rhs);
        for _ in 0..steps {
            let r = rhs - &self.matrix * &x;
            let dx = self.lu.solve(&r);
            x += dx;
        }
        x
    }

    /// Relative residual of column `col`.
    pub fn residual(&self, rhs: &faer::Mat<f64>, x: &faer::Mat<f64>, scale: f64) -> f64 {
        let r = rhs - &self.matrix * x;
        let mut worst = 0.0f64;
        for c in 0..x.ncols() {
            let rn = r.col(c).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let bn = rhs.col(c).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let xn = x.col(c).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let denom = bn + scale * xn;
            if denom > 0.0 {
                worst = worst.max(rn / denom);
            }
        }
        worst
    }
}

pub(crate) fn mat_from_columns(n: usize, cols: &[Vec<f64>]) -> faer::Mat<f64> {
    faer::Mat::from_fn(n, cols.len(), |i, j| cols[j][i])
}

pub(crate) fn column(m: &faer::Mat<f64>, j: usize) -> Vec<f64> {
    m.col(j).iter().copied().collect()
}

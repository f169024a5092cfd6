//! Dirichlet and Neumann problems for −∇·a∇u = ∇·f.

use faer::sparse::{SparseRowMat, Triplet};
use faer::prelude::Solve;

use crate::error::{HomError, Result};
use crate::triadic::CellArray;

use super::assemble::{spmv, AssembledOperator};
use super::{column, mat_from_columns, Factorized, LinearSolveReport, SolveMethod, SolveStatus, SolverOptions};

pub(crate) fn interior_system(op: &AssembledOperator) -> (Vec<usize>, Vec<Triplet<usize, usize, f64>>) {
    let n = op.node_count();
    let mut local = vec![usize::MAX; n];
    for (l, &g) in op.interior.iter().enumerate() {
        local[g] = l;
    }
    let rp = op.stiffness.symbolic().row_ptr();
    let ci = op.stiffness.symbolic().col_idx();
    let val = op.stiffness.val();
    let mut trips = Vec::new();
    for &g in &op.interior {
        for p in rp[g]..rp[g + 1] {
            let c = local[ci[p]];
            if c != usize::MAX {
                trips.push(Triplet::new(local[g], c, val[p]));
            }
        }
    }
    (local, trips)
}

/// Dirichlet solve with a nodal load: K_{I,:} u = load_I, u = g on the boundary.
///
/// `boundary_values` follows the order of `op.boundary`.
pub fn solve_dirichlet_load(
    op: &AssembledOperator,
    boundary_values: &[f64],
    load: &[f64],
    opts: &SolverOptions,
) -> Result<(Vec<f64>, LinearSolveReport)> {
    if boundary_values.len() != op.boundary.len() || load.len() != op.node_count() {
        return Err(HomError::invalid("boundary values or load have the wrong length"));
    }
    let mut u = vec![0.0; op.node_count()];
    for (&b, &v) in op.boundary.iter().zip(boundary_values) {
        u[b] = v;
    }
    if op.interior.is_empty() {
        let report = LinearSolveReport {
            residual_norm: 0.0,
            factorization_id: 0,
            iterations: 0,
            status: SolveStatus::Converged,
        };
        return Ok((u, report));
    }
    let ku = op.apply_stiffness(&u);
    let rhs: Vec<f64> = op.interior.iter().map(|&i| load[i] - ku[i]).collect();
    let (_, trips) = interior_system(op);
    let ni = op.interior.len();
    let (x, report) = match opts.method {
        SolveMethod::Direct => {
            let f = Factorized::new(ni, &trips)?;
            let b = mat_from_columns(ni, &[rhs]);
            let x = f.solve(&b, opts.refinement_steps);
            let res = f.residual(&b, &x, op.coef_scale);
            (
                column(&x, 0),
                LinearSolveReport {
                    residual_norm: res,
                    factorization_id: f.id,
                    iterations: 0,
                    status: SolveStatus::Converged,
                },
            )
        }
        SolveMethod::Cholesky => {
            let m = faer::sparse::SparseColMat::try_new_from_triplets(ni, ni, &trips)
                .map_err(|e| HomError::Factorization(format!("{e:?}")))?;
            let llt = m
                .sp_cholesky(faer::Side::Lower)
                .map_err(|e| HomError::Factorization(format!("sparse Cholesky: {e:?}")))?;
            let b = mat_from_columns(ni, &[rhs]);
            let x = llt.solve(&b);
            let r = &b - &m * &x;
            let rn = r.col(0).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let bn = b.col(0).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let xn = x.col(0).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            (
                column(&x, 0),
                LinearSolveReport {
                    residual_norm: rn / (bn + op.coef_scale * xn).max(f64::MIN_POSITIVE),
                    factorization_id: 0,
                    iterations: 0,
                    status: SolveStatus::Converged,
                },
            )
        }
        SolveMethod::Iterative => {
            let m = SparseRowMat::try_new_from_triplets(ni, ni, &trips)
                .map_err(|e| HomError::Factorization(format!("{e:?}")))?;
            let (x, iters, res) = bicgstab(&m, &rhs, opts.residual_tol, opts.max_iter)?;
            (
                x,
                LinearSolveReport {
                    residual_norm: res,
                    factorization_id: 0,
                    iterations: iters,
                    status: SolveStatus::Converged,
                },
            )
        }
    };
    if !(report.residual_norm <= opts.residual_tol) {
        return Err(HomError::NoConvergence { residual: report.residual_norm, iterations: report.iterations });
    }
    for (&i, v) in op.interior.iter().zip(x) {
        u[i] = v;
    }
    Ok((u, report))
}

/// Dirichlet problem −∇·a∇u = ∇·f with u = g on the boundary, f per-cell constant.
pub fn solve_dirichlet(
    op: &AssembledOperator,
    boundary_values: &[f64],
    rhs_flux: Option<&CellArray>,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, LinearSolveReport)> {
    let load = match rhs_flux {
        Some(f) => op.divergence_load(f)?.iter().map(|v| -v).collect(),
        None => vec![0.0; op.node_count()],
    };
    solve_dirichlet_load(op, boundary_values, &load, opts)
}

/// Neumann problem ∇·a∇u = ∇·f, n̂·(a∇u − f) = 0, normalized to mean zero.
///
/// The constant in f is fixed first so that (f)_U = 0 = (a∇u)_U.
pub fn solve_neumann(
    op: &AssembledOperator,
    rhs_flux: &CellArray,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, LinearSolveReport)> {
    let d = op.dim;
    let mut f = rhs_flux.clone();
    let mean = f.cell_average(&crate::triadic::TriadicCube::domain(d, op.cube.level))?;
    for cell in 0..f.cell_count() {
        for a in 0..d {
            f.data[cell * d + a] -= mean[a];
        }
    }
    let load = op.divergence_load(&f)?;
    let n = op.node_count();
    let rp = op.stiffness.symbolic().row_ptr();
    let ci = op.stiffness.symbolic().col_idx();
    let val = op.stiffness.val();
    let mut trips = Vec::with_capacity(val.len() + 2 * n);
    for i in 0..n {
        for p in rp[i]..rp[i + 1] {
            trips.push(Triplet::new(i, ci[p], val[p]));
        }
    }
    trips.push(Triplet::new(0, n, 1.0));
    trips.push(Triplet::new(n, 0, 1.0));
    let fac = Factorized::new(n + 1, &trips)?;
    let mut rhs = load;
    rhs.push(0.0);
    let b = mat_from_columns(n + 1, &[rhs]);
    let x = fac.solve(&b, opts.refinement_steps);
    let res = fac.residual(&b, &x, op.coef_scale);
    if !(res <= opts.residual_tol) {
        return Err(HomError::NoConvergence { residual: res, iterations: 0 });
    }
    let mut u = column(&x, 0);
    u.truncate(n);
    let shift = crate::linalg::dot(&op.mass, &u) / op.volume;
    u.iter_mut().for_each(|x| *x -= shift);
    Ok((
        u,
        LinearSolveReport { residual_norm: res, factorization_id: fac.id, iterations: 0, status: SolveStatus::Converged },
    ))
}

/// Jacobi-preconditioned BiCGSTAB for a general sparse system.
///
/// Returns the solution, the iteration count and the final relative residual.
pub fn bicgstab(a: &SparseRowMat<usize, f64>, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize, f64)> {
    let n = b.len();
    let rp = a.symbolic().row_ptr();
    let ci = a.symbolic().col_idx();
    let val = a.val();
    let mut diag = vec![1.0; n];
    for i in 0..n {
        for p in rp[i]..rp[i + 1] {
            if ci[p] == i && val[p] != 0.0 {
                diag[i] = val[p];
            }
        }
    }
    let precond = |v: &[f64]| -> Vec<f64> { v.iter().zip(&diag).map(|(x, d)| x / d).collect() };
    let dot = |x: &[f64], y: &[f64]| -> f64 { x.iter().zip(y).map(|(a, b)| a * b).sum() };
    let norm = |x: &[f64]| dot(x, x).sqrt();
    let bnorm = norm(b).max(f64::MIN_POSITIVE);
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut rel = norm(&r) / bnorm;
    if rel <= tol {
        return Ok((x, 0, rel));
    }
    for it in 1..=max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 || omega == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let phat = precond(&p);
        v = spmv(a, &phat);
        alpha = rho / dot(&r0, &v);
        let s: Vec<f64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
        let shat = precond(&s);
        let t = spmv(a, &shat);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * phat[i] + omega * shat[i];
            r[i] = s[i] - omega * t[i];
        }
        rel = norm(&r) / bnorm;
        if rel <= tol {
            let true_r: Vec<f64> = b.iter().zip(spmv(a, &x)).map(|(bi, ax)| bi - ax).collect();
            return Ok((x, it, norm(&true_r) / bnorm));
        }
    }
    Err(HomError::NoConvergence { residual: rel, iterations: max_iter })
}

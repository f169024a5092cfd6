//! The homogenization experiment: Dirichlet problems with oscillating
//! coefficients against ā-driven data, ring-norm errors, and the quantities
//! 𝓔_s, 𝓖 and 𝓗 that control them.
//!
//! Everything runs on □_n with unit cells. A target h on the unit cube becomes
//! H(y) = 3^n h(3^{−n} y), so ∇H(y) = ∇h(3^{−n} y) and gradients need no rescaling.

use serde::{Deserialize, Serialize};

use crate::coarsegrain::{
    coarse_grain_cube, hierarchy_sweep, mat_rows, CoarseGrainOptions, CoarseGrainedMatrices, HierarchyCache,
};
use crate::error::{HomError, Result};
use crate::fields::{CoefficientField, FieldSpec};
use crate::linalg::{self, Mat};
use crate::norms::{self, check_exponent, lower_block, weighted_max_sum, TailMode};
use crate::solver::{assemble, solve_dirichlet, solve_dirichlet_load, solve_neumann, AssembledOperator, SolverOptions};
use crate::stats;
use crate::triadic::{grid_points, pow3, CellArray, Lattice, TriadicCube};

const GAUSS_X: [f64; 3] = [0.112_701_665_379_258_3, 0.5, 0.887_298_334_620_741_7];
const GAUSS_W: [f64; 3] = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];

/// Boundary data and target on the unit cube, with its exact gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TargetFunction {
    /// h(x) = c + p·x.
    Affine {
        p: Vec<f64>,
        #[serde(default)]
        c: f64,
    },
    /// h(x) = ½ x·Mx + p·x with M symmetric.
    Quadratic { m: Vec<Vec<f64>>, p: Vec<f64> },
    /// h(x) = amplitude · sin(2π ω·x).
    Trig { amplitude: f64, omega: Vec<f64> },
}

impl TargetFunction {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let ok = match self {
            TargetFunction::Affine { p, .. } => p.len() == dim,
            TargetFunction::Quadratic { m, p } => {
                p.len() == dim
                    && m.len() == dim
                    && m.iter().all(|r| r.len() == dim)
                    && (0..dim).all(|i| (0..dim).all(|j| m[i][j] == m[j][i]))
            }
            TargetFunction::Trig { omega, amplitude } => omega.len() == dim && amplitude.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(HomError::invalid(format!("target function does not fit dimension {dim}: {self:?}")))
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            TargetFunction::Affine { p, c } => c + linalg::dot(p, x),
            TargetFunction::Quadratic { m, p } => {
                let quad: f64 = m.iter().zip(x).map(|(r, xi)| xi * linalg::dot(r, x)).sum();
                0.5 * quad + linalg::dot(p, x)
            }
            TargetFunction::Trig { amplitude, omega } => {
                amplitude * (2.0 * std::f64::consts::PI * linalg::dot(omega, x)).sin()
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            TargetFunction::Affine { p, .. } => p.clone(),
            TargetFunction::Quadratic { m, p } => m.iter().zip(p).map(|(r, pi)| linalg::dot(r, x) + pi).collect(),
            TargetFunction::Trig { amplitude, omega } => {
                let tau = 2.0 * std::f64::consts::PI;
                let c = amplitude * tau * (tau * linalg::dot(omega, x)).cos();
                omega.iter().map(|w| c * w).collect()
            }
        }
    }

    /// H(y) = 3^n h(3^{−n} y).
    pub fn scaled_value(&self, n: u32, y: &[f64]) -> f64 {
        let eps = 1.0 / pow3(n) as f64;
        let x: Vec<f64> = y.iter().map(|v| v * eps).collect();
        self.value(&x) / eps
    }

    /// ∇H(y) = ∇h(3^{−n} y).
    pub fn scaled_gradient(&self, n: u32, y: &[f64]) -> Vec<f64> {
        let eps = 1.0 / pow3(n) as f64;
        let x: Vec<f64> = y.iter().map(|v| v * eps).collect();
        self.gradient(&x)
    }
}

/// Classical laminate value for layers normal to the first axis.
pub fn laminate_a_bar(dim: usize, a1: f64, a2: f64) -> Mat {
    let mut m = Mat::identity(dim, dim) * (0.5 * (a1 + a2));
    m[(0, 0)] = 2.0 * a1 * a2 / (a1 + a2);
    m
}

/// Double-variable matrix of a constant coefficient ā: s̄ = s̄* = sym(ā), k̄ = skew(ā).
pub fn double_from_a_bar(a_bar: &Mat) -> Result<Mat> {
    let s = linalg::symmetrize(a_bar);
    let k = (a_bar - a_bar.transpose()) * 0.5;
    linalg::pointwise_double_matrix(&s, &k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomExperiment {
    pub spec: FieldSpec,
    #[serde(with = "mat_rows")]
    pub a_bar: Mat,
    /// Reference Ā in 𝓔_α, 𝓖 and 𝓗.
    #[serde(with = "mat_rows")]
    pub a_double: Mat,
    pub h: TargetFunction,
    pub alpha: f64,
    pub n_min: u32,
    pub n_max: u32,
    /// Number of top scales in 𝓖 and 𝓗.
    pub l: u32,
    pub resolution: usize,
    pub solver: SolverOptions,
}

impl HomExperiment {
    pub fn new(spec: FieldSpec, a_bar: Mat, h: TargetFunction, alpha: f64, n_min: u32, n_max: u32) -> Result<Self> {
        let a_double = double_from_a_bar(&a_bar)?;
        let exp = Self { spec, a_bar, a_double, h, alpha, n_min, n_max, l: 2, resolution: 1, solver: SolverOptions::default() };
        exp.validate()?;
        Ok(exp)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let d = self.spec.dim;
        self.h.validate(d)?;
        check_exponent("alpha", self.alpha)?;
        if self.a_bar.shape() != (d, d) || self.a_double.shape() != (2 * d, 2 * d) {
            return Err(HomError::invalid("ā or Ā has the wrong shape"));
        }
        if linalg::min_eigenvalue(&linalg::symmetrize(&self.a_bar)) <= 0.0 {
            return Err(HomError::invalid("the symmetric part of ā must be positive definite"));
        }
        if self.n_min > self.n_max || self.l == 0 || self.resolution == 0 {
            return Err(HomError::invalid("need n_min ≤ n_max, l ≥ 1 and resolution ≥ 1"));
        }
        Ok(())
    }

    fn coarse_grain_options(&self) -> CoarseGrainOptions {
        CoarseGrainOptions { resolution: self.resolution, ..Default::default() }
    }
}

/// One (scale, seed) cell of the experiment. Failed cells carry NaN values and a message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub n: u32,
    pub seed: u64,
    /// Ring H^{−α} norm of ∇u^ε − ∇h on the unit cube.
    pub grad_err: f64,
    /// Ring H^{−α} norm of a^ε∇u^ε − ā∇h on the unit cube.
    pub flux_err: f64,
    /// ‖s^{1/2}∇u^ε‖ in normalized L².
    pub energy: f64,
    pub e_alpha: f64,
    pub g: f64,
    pub h: f64,
    /// |scaled □_n ring norm − unit-cube ring norm| on the gradient error.
    pub rescale_defect: f64,
    pub failure: Option<String>,
}

impl ErrorRecord {
    fn failed(n: u32, seed: u64, err: &HomError) -> Self {
        Self {
            n,
            seed,
            grad_err: f64::NAN,
            flux_err: f64::NAN,
            energy: f64::NAN,
            e_alpha: f64::NAN,
            g: f64::NAN,
            h: f64::NAN,
            rescale_defect: f64::NAN,
            failure: Some(err.to_string()),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.failure.is_none()
    }
}

/// Q1 basis value of corner `local` at reference point ξ ∈ [0, 1]^d, and its reference gradient.
fn basis(local: usize, xi: &[f64]) -> (f64, Vec<f64>) {
    let d = xi.len();
    let factor = |a: usize| if (local >> a) & 1 == 1 { xi[a] } else { 1.0 - xi[a] };
    let value = (0..d).map(factor).product();
    let grad = (0..d)
        .map(|a| {
            let sign = if (local >> a) & 1 == 1 { 1.0 } else { -1.0 };
            sign * (0..d).filter(|&b| b != a).map(factor).product::<f64>()
        })
        .collect();
    (value, grad)
}

/// F_i = ∫ ∇φ_i · ā G, by 3-point Gauss quadrature per element and axis.
pub fn flux_load(op: &AssembledOperator, a_bar: &Mat, g: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let d = op.dim;
    let hh = op.reference.h;
    let mut load = vec![0.0; op.node_count()];
    let locals: Vec<usize> = (0..1usize << d).collect();
    for e in grid_points(d, op.elements_per_axis()) {
        let nodes = op.element_nodes(&e);
        for q in grid_points(d, 3) {
            let xi: Vec<f64> = q.iter().map(|&i| GAUSS_X[i]).collect();
            let w: f64 = q.iter().map(|&i| GAUSS_W[i]).product::<f64>() * hh.powi(d as i32);
            let y: Vec<f64> = (0..d).map(|a| op.cube.offset[a] as f64 + (e[a] as f64 + xi[a]) * hh).collect();
            let gv = nalgebra::DVector::from_vec(g(&y));
            let flux = a_bar * gv;
            for (&local, &node) in locals.iter().zip(&nodes) {
                let (_, grad) = basis(local, &xi);
                load[node] += w * (0..d).map(|a| grad[a] / hh * flux[a]).sum::<f64>();
            }
        }
    }
    load
}

/// Unit-cell averages of a vector function over `cube`, by Gauss quadrature.
pub fn cell_averages(cube: &TriadicCube, ncomp: usize, g: impl Fn(&[f64]) -> Vec<f64>) -> CellArray {
    let d = cube.dim();
    CellArray::from_fn(d, cube.side() as usize, ncomp, |idx| {
        let mut acc = vec![0.0; ncomp];
        for q in grid_points(d, 3) {
            let w: f64 = q.iter().map(|&i| GAUSS_W[i]).product();
            let y: Vec<f64> = (0..d).map(|a| (cube.offset[a] + idx[a] as i64) as f64 + GAUSS_X[q[a]]).collect();
            for (s, v) in acc.iter_mut().zip(g(&y)) {
                *s += w * v;
            }
        }
        acc
    })
}

/// Ring norm evaluated directly on the unit cube, whose cells have side 3^{−n}:
/// (Σ_{j=floor−n}^{0} 3^{2sj} avg_{z∈3^{j−1}ℤ^d} |(f)_{z+[0,3^j)^d}|²)^{1/2}.
pub fn unit_ring_norm(values: &CellArray, s: f64, n: u32, floor: i32) -> Result<f64> {
    check_exponent("s", s)?;
    if floor > 0 {
        return Err(HomError::invalid("the lowest scale must be at most 0"));
    }
    let d = values.dim;
    let cells = pow3(n) as usize;
    if values.side != cells {
        return Err(HomError::invalid("values must cover □_n"));
    }
    let eps = 1.0 / cells as f64;
    let mut total = 0.0;
    for k in floor..=n as i32 {
        let j = k - n as i32;
        let side = 3f64.powi(j);
        let step = side / 3.0;
        let count = ((1.0 - side) / step).round() as usize + 1;
        let overlaps: Vec<Vec<(usize, f64)>> = (0..count)
            .map(|i| {
                let lo = i as f64 * step;
                let hi = lo + side;
                let first = ((lo / eps).floor() as usize).min(cells - 1);
                let last = ((hi / eps).ceil() as usize).min(cells);
                (first..last)
                    .filter_map(|c| {
                        let len = hi.min((c + 1) as f64 * eps) - lo.max(c as f64 * eps);
                        (len > 1e-9 * eps).then_some((c, len / side))
                    })
                    .collect()
            })
            .collect();
        let mut acc = 0.0;
        for corner in grid_points(d, count) {
            let lists: Vec<&Vec<(usize, f64)>> = corner.iter().map(|&i| &overlaps[i]).collect();
            let shape: Vec<usize> = lists.iter().map(|l| l.len()).collect();
            let mut avg = vec![0.0; values.ncomp];
            let mut local = vec![0usize; d];
            'outer: loop {
                let mut w = 1.0;
                let mut flat = 0;
                for a in (0..d).rev() {
                    let (c, wa) = lists[a][local[a]];
                    w *= wa;
                    flat = flat * cells + c;
                }
                for (x, v) in avg.iter_mut().zip(values.value(flat)) {
                    *x += w * v;
                }
                for a in 0..d {
                    local[a] += 1;
                    if local[a] < shape[a] {
                        continue 'outer;
                    }
                    local[a] = 0;
                }
                break;
            }
            acc += linalg::dot(&avg, &avg);
        }
        total += 3f64.powf(2.0 * s * j as f64) * acc / count.pow(d as u32) as f64;
    }
    Ok(total.sqrt())
}

/// Ring norm on □_n rescaled to the unit cube: 3^{−sn}·‖f‖ with the □_n weights.
pub fn unit_scaled_ring_norm(values: &CellArray, s: f64, domain: &TriadicCube, floor: i32) -> Result<f64> {
    Ok(3f64.powf(-s * domain.level as f64) * norms::ring_dual_norm_from(values, s, domain, floor)?)
}

/// 𝓔_s(□_n) = Σ_{k≤n} 3^{2s(k−n)} max_z |A(z+□_k) − Ā| from the partition cache.
pub fn compute_e_s(cache: &HierarchyCache, a_bar: &Mat, s: f64, tail: TailMode) -> Result<f64> {
    check_exponent("s", s)?;
    if a_bar.shape() != (2 * cache.dim, 2 * cache.dim) {
        return Err(HomError::invalid("Ā must be 2d×2d"));
    }
    weighted_max_sum(cache, s, tail, |m| linalg::spectral_norm(&(&m.a - a_bar)))
}

/// 𝓔_s(□_n) by fresh coarse-graining of every partition cube, without a cache.
pub fn recompute_e_s(
    field: &CoefficientField,
    domain: &TriadicCube,
    a_bar: &Mat,
    s: f64,
    tail: TailMode,
    opts: &CoarseGrainOptions,
) -> Result<f64> {
    check_exponent("s", s)?;
    let n = domain.level;
    let mut total = 0.0;
    for k in 0..=n {
        let mut worst = 0.0f64;
        for cube in domain.subcubes(k, Lattice::Partition)? {
            let m = coarse_grain_cube(field, &cube, opts)?;
            worst = worst.max(linalg::spectral_norm(&(&m.a - a_bar)));
        }
        total += 3f64.powf(2.0 * s * (k as f64 - n as f64)) * worst;
    }
    if tail == TailMode::TailCorrected {
        let mut worst = 0.0f64;
        for cell in domain.cells() {
            let idx = field.index(&cell).ok_or_else(|| HomError::OutOfBounds(format!("{domain}")))?;
            worst = worst.max(linalg::spectral_norm(&(field.pointwise_double(idx)? - a_bar)));
        }
        let r = 3f64.powf(-2.0 * s);
        total += worst * 3f64.powf(-2.0 * s * n as f64) * r / (1.0 - r);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GhReport {
    pub g: f64,
    pub h: f64,
    /// (k, |avg_z A(z+□_k) − A(□_n)|, avg_z |A(z+□_k) − Ā|²) on the half-lattice.
    pub per_scale: Vec<(u32, f64, f64)>,
    /// min over k of min_eig(avg over the partition at scale k − A(□_n)).
    pub subadditivity_slack: f64,
}

/// 𝓖_{s,l}(□_n) and 𝓗_{s,l}(□_n). Half-lattice cubes missing from the cache are coarse-grained.
pub fn compute_gh(
    field: &CoefficientField,
    cache: &HierarchyCache,
    a_bar: &Mat,
    s: f64,
    l: u32,
    opts: &CoarseGrainOptions,
) -> Result<GhReport> {
    check_exponent("s", s)?;
    let domain = &cache.domain;
    let n = domain.level;
    if l == 0 || l > n {
        return Err(HomError::invalid(format!("need 1 ≤ l ≤ n, got l = {l}, n = {n}")));
    }
    let reference = CoarseGrainedMatrices::from_double_matrix(domain.clone(), a_bar.clone())?;
    let factor = linalg::spectral_norm(&(&reference.s_star - &reference.k)).powi(2);
    let top = cache.top()?.a.clone();
    let dim2 = top.nrows();
    let mut g = 0.0;
    let mut h = 0.0;
    let mut per_scale = Vec::with_capacity(l as usize);
    let mut subadditivity_slack = f64::INFINITY;
    for k in (n + 1 - l)..=n {
        let cubes = domain.subcubes(k, Lattice::HalfOverlap)?;
        let mut avg = Mat::zeros(dim2, dim2);
        let mut fluct = 0.0;
        for cube in &cubes {
            let a = match cache.get(cube) {
                Ok(m) => m.a.clone(),
                Err(_) => coarse_grain_cube(field, cube, opts)?.a,
            };
            fluct += linalg::spectral_norm(&(&a - a_bar)).powi(2);
            avg += a;
        }
        let count = cubes.len() as f64;
        avg /= count;
        fluct /= count;
        let defect = linalg::spectral_norm(&(&avg - &top));
        let w = 3f64.powf(2.0 * s * (k as f64 - n as f64));
        g += w * defect;
        h += w * fluct;
        per_scale.push((k, defect, fluct));
        let part = cache.scale(k)?;
        let mut pavg = Mat::zeros(dim2, dim2);
        for m in &part {
            pavg += &m.a;
        }
        pavg /= part.len() as f64;
        subadditivity_slack = subadditivity_slack.min(linalg::loewner_slack(&top, &pavg));
    }
    Ok(GhReport { g: factor * g, h: factor * h, per_scale, subadditivity_slack })
}

fn run_scale(exp: &HomExperiment, n: u32, seed: u64) -> Result<ErrorRecord> {
    let spec = FieldSpec { level: n, seed, ..exp.spec.clone() };
    let field = spec.generate()?;
    let domain = TriadicCube::domain(spec.dim, n);
    let op = assemble(&field, &domain, exp.resolution)?;
    let boundary: Vec<f64> = op.boundary.iter().map(|&b| exp.h.scaled_value(n, &op.node_coords(b))).collect();
    let load = flux_load(&op, &exp.a_bar, |y| exp.h.scaled_gradient(n, y));
    let (u, _) = solve_dirichlet_load(&op, &boundary, &load, &exp.solver)?;

    let d = spec.dim;
    let grads = op.cell_gradients(&u);
    let fluxes = op.cell_fluxes(&u);
    let target = cell_averages(&domain, d, |y| exp.h.scaled_gradient(n, y));
    let mut grad_err = grads.clone();
    let mut flux_err = fluxes.clone();
    for cell in 0..grads.cell_count() {
        let t = nalgebra::DVector::from_column_slice(target.value(cell));
        let at = &exp.a_bar * &t;
        for a in 0..d {
            grad_err.data[cell * d + a] -= t[a];
            flux_err.data[cell * d + a] -= at[a];
        }
    }
    let scale = 3f64.powf(-exp.alpha * n as f64);
    let grad_norm = scale * norms::ring_dual_norm(&grad_err, exp.alpha, &domain, TailMode::TailCorrected)?;
    let flux_norm = scale * norms::ring_dual_norm(&flux_err, exp.alpha, &domain, TailMode::TailCorrected)?;
    let rescale_defect = (unit_scaled_ring_norm(&grad_err, exp.alpha, &domain, 0)?
        - unit_ring_norm(&grad_err, exp.alpha, n, 0)?)
    .abs();
    let energy = (op.energy(&u) / domain.volume()).max(0.0).sqrt();

    let cg = exp.coarse_grain_options();
    let sweep = hierarchy_sweep(&field, &domain, 0, &cg)?;
    let e_alpha = compute_e_s(&sweep.cache, &exp.a_double, exp.alpha, TailMode::TailCorrected)?;
    let (g, h) = if n >= exp.l {
        let gh = compute_gh(&field, &sweep.cache, &exp.a_double, exp.alpha, exp.l, &cg)?;
        (gh.g, gh.h)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(ErrorRecord {
        n,
        seed,
        grad_err: grad_norm,
        flux_err: flux_norm,
        energy,
        e_alpha,
        g,
        h,
        rescale_defect,
        failure: None,
    })
}

/// Runs every scale n_min..=n_max for one seed. A failing scale yields a failed record.
pub fn run_dirichlet_experiment(exp: &HomExperiment, seed: u64) -> Result<Vec<ErrorRecord>> {
    exp.validate()?;
    Ok((exp.n_min..=exp.n_max)
        .map(|n| run_scale(exp, n, seed).unwrap_or_else(|e| ErrorRecord::failed(n, seed, &e)))
        .collect())
}

/// Medians over seeds per scale and their trend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSummary {
    pub family: String,
    pub scales: Vec<u32>,
    pub median_grad: Vec<f64>,
    pub median_flux: Vec<f64>,
    pub median_e_alpha: Vec<f64>,
    /// Mann–Kendall S statistic of the medians; negative means decreasing.
    pub mk_grad: i64,
    pub mk_flux: i64,
    /// Final median over initial median.
    pub grad_ratio: f64,
    pub flux_ratio: f64,
    pub failures: usize,
    pub passed: bool,
}

/// Trend statistics of `records` grouped by scale. Passing needs both errors to have a
/// negative trend and a final median below half the initial one.
pub fn trend_summary(family: &str, records: &[ErrorRecord]) -> TrendSummary {
    let mut scales: Vec<u32> = records.iter().map(|r| r.n).collect();
    scales.sort_unstable();
    scales.dedup();
    let med = |n: u32, f: fn(&ErrorRecord) -> f64| {
        let v: Vec<f64> = records.iter().filter(|r| r.n == n && r.is_ok()).map(f).collect();
        if v.is_empty() {
            f64::NAN
        } else {
            stats::median(&v)
        }
    };
    let median_grad: Vec<f64> = scales.iter().map(|&n| med(n, |r| r.grad_err)).collect();
    let median_flux: Vec<f64> = scales.iter().map(|&n| med(n, |r| r.flux_err)).collect();
    let median_e_alpha: Vec<f64> = scales.iter().map(|&n| med(n, |r| r.e_alpha)).collect();
    let ratio = |v: &[f64]| v.last().copied().unwrap_or(f64::NAN) / v.first().copied().unwrap_or(f64::NAN);
    let mk_grad = stats::mann_kendall(&median_grad);
    let mk_flux = stats::mann_kendall(&median_flux);
    let grad_ratio = ratio(&median_grad);
    let flux_ratio = ratio(&median_flux);
    let failures = records.iter().filter(|r| !r.is_ok()).count();
    let passed = failures == 0 && mk_grad < 0 && mk_flux < 0 && grad_ratio < 0.5 && flux_ratio < 0.5;
    TrendSummary {
        family: family.to_string(),
        scales,
        median_grad,
        median_flux,
        median_e_alpha,
        mk_grad,
        mk_flux,
        grad_ratio,
        flux_ratio,
        failures,
        passed,
    }
}

/// Data of the energy-estimate diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub enum EnergyProblem {
    /// −∇·a∇u = ∇·f in U, u = H on ∂U.
    Dirichlet { h: TargetFunction, f: Option<CellArray> },
    /// ∇·a∇u = ∇·f in U, n̂·(a∇u − f) = 0 on ∂U.
    Neumann { f: CellArray },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub problem: String,
    /// ‖s^{1/2}∇u‖ in normalized L².
    pub lhs: f64,
    /// Structural right-hand side without the unknown constant.
    pub rhs: f64,
    pub ratio: f64,
    pub grad_h_norm: f64,
    pub f_norm: f64,
    pub lambda_s: f64,
    pub upper_lambda_s: f64,
    pub b_norm: f64,
    pub s_star_inv_norm: f64,
}

/// ‖g‖_{H̲^s} on □_n expressed on the unit cube.
fn unit_hs_norm(values: &CellArray, s: f64, domain: &TriadicCube) -> Result<f64> {
    Ok(3f64.powf(s * domain.level as f64) * norms::hs_norm(values, s, domain)?)
}

/// Measured energy against (|b(U)|^{1/2} + Λ_s^{1/2})‖∇h‖_{H̲^s} + λ_s^{−1/2}‖f‖_{H̲^s} for
/// Dirichlet data and (|s*⁻¹(U)|^{1/2} + λ_s^{−1/2})‖f‖_{H̲^s} for Neumann data.
pub fn energy_estimate_diagnostic(
    field: &CoefficientField,
    cache: &HierarchyCache,
    problem: &EnergyProblem,
    s: f64,
    resolution: usize,
    solver: &SolverOptions,
) -> Result<EnergyReport> {
    check_exponent("s", s)?;
    let domain = &cache.domain;
    let n = domain.level;
    let d = field.dim();
    let lambda_s = 1.0 / norms::lambda_inverse(cache, s, TailMode::TailCorrected, true)?;
    let upper = norms::upper_lambda(cache, s, TailMode::TailCorrected, true)?;
    let top = cache.top()?;
    let b_norm = linalg::spectral_norm(&top.b);
    let s_star_inv_norm = linalg::spectral_norm(&lower_block(&top.a));
    let op = assemble(field, domain, resolution)?;
    let (name, u, grad_h_norm, f_norm, rhs) = match problem {
        EnergyProblem::Dirichlet { h, f } => {
            h.validate(d)?;
            let bv: Vec<f64> = op.boundary.iter().map(|&b| h.scaled_value(n, &op.node_coords(b))).collect();
            let (u, _) = solve_dirichlet(&op, &bv, f.as_ref(), solver)?;
            let gh = unit_hs_norm(&cell_averages(domain, d, |y| h.scaled_gradient(n, y)), s, domain)?;
            let fnorm = match f {
                Some(f) => unit_hs_norm(f, s, domain)?,
                None => 0.0,
            };
            let rhs = (b_norm.sqrt() + upper.sqrt()) * gh + fnorm / lambda_s.sqrt();
            ("dirichlet", u, gh, fnorm, rhs)
        }
        EnergyProblem::Neumann { f } => {
            let (u, _) = solve_neumann(&op, f, solver)?;
            let fnorm = unit_hs_norm(f, s, domain)?;
            let rhs = (s_star_inv_norm.sqrt() + 1.0 / lambda_s.sqrt()) * fnorm;
            ("neumann", u, 0.0, fnorm, rhs)
        }
    };
    let lhs = (op.energy(&u) / domain.volume()).max(0.0).sqrt();
    Ok(EnergyReport {
        problem: name.to_string(),
        lhs,
        rhs,
        ratio: if rhs > 0.0 { lhs / rhs } else { f64::NAN },
        grad_h_norm,
        f_norm,
        lambda_s,
        upper_lambda_s: upper,
        b_norm,
        s_star_inv_norm,
    })
}

/// max/median of the finite ratios of an ensemble.
pub fn ratio_spread(reports: &[EnergyReport]) -> f64 {
    let r: Vec<f64> = reports.iter().map(|r| r.ratio).filter(|x| x.is_finite()).collect();
    if r.is_empty() {
        return f64::NAN;
    }
    r.iter().copied().fold(f64::MIN, f64::max) / stats::median(&r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::FieldKind;
    use rand::{Rng, SeedableRng};

    fn iso(d: usize, c: f64) -> Mat {
        Mat::identity(d, d) * c
    }

    fn constant_spec(c: f64) -> FieldSpec {
        FieldSpec::new(2, 1, 0, FieldKind::Constant { matrix: vec![vec![c, 0.0], vec![0.0, c]] })
    }

    #[test]
    fn target_gradients_match_finite_differences() {
        let fs = [
            TargetFunction::Affine { p: vec![1.0, -2.0], c: 0.3 },
            TargetFunction::Quadratic { m: vec![vec![1.0, 0.5], vec![0.5, -2.0]], p: vec![0.1, 0.2] },
            TargetFunction::Trig { amplitude: 0.4, omega: vec![1.0, 2.0] },
        ];
        let x = [0.31, 0.77];
        for f in &fs {
            let g = f.gradient(&x);
            for a in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[a] += 1e-6;
                xm[a] -= 1e-6;
                let fd = (f.value(&xp) - f.value(&xm)) / 2e-6;
                assert!((fd - g[a]).abs() < 1e-6, "{f:?}");
            }
        }
    }

    #[test]
    fn affine_load_matches_stiffness_on_constant_field() {
        let field = constant_spec(2.0).generate().unwrap();
        let op = assemble(&field, &TriadicCube::domain(2, 1), 2).unwrap();
        let h = TargetFunction::Affine { p: vec![0.7, -0.4], c: 0.0 };
        let hv = op.interpolate(|y| h.scaled_value(1, y));
        let ku = op.apply_stiffness(&hv);
        let load = flux_load(&op, &iso(2, 2.0), |y| h.scaled_gradient(1, y));
        for (a, b) in ku.iter().zip(&load) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_cell_averages_are_exact() {
        let h = TargetFunction::Quadratic { m: vec![vec![2.0, 1.0], vec![1.0, 0.0]], p: vec![0.0, 0.0] };
        let cube = TriadicCube::domain(2, 0);
        let avg = cell_averages(&cube, 2, |y| h.gradient(y));
        assert!((avg.value(0)[0] - 1.5).abs() < 1e-14);
        assert!((avg.value(0)[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn zero_oscillation_gives_zero_error() {
        let exp = HomExperiment::new(
            constant_spec(1.5),
            iso(2, 1.5),
            TargetFunction::Affine { p: vec![1.0, 0.5], c: 0.2 },
            0.5,
            1,
            2,
        )
        .unwrap();
        for r in run_dirichlet_experiment(&exp, 7).unwrap() {
            assert!(r.is_ok(), "{:?}", r.failure);
            assert!(r.grad_err <= 1e-10 && r.flux_err <= 1e-10, "{r:?}");
            assert!(r.e_alpha <= 1e-10);
            assert!(r.rescale_defect <= 1e-12);
        }
    }

    #[test]
    fn failed_scale_is_recorded() {
        let mut exp = HomExperiment::new(
            constant_spec(1.0),
            iso(2, 1.0),
            TargetFunction::Affine { p: vec![1.0, 0.0], c: 0.0 },
            0.5,
            1,
            1,
        )
        .unwrap();
        exp.solver.residual_tol = -1.0;
        let recs = run_dirichlet_experiment(&exp, 0).unwrap();
        assert_eq!(recs.len(), 1);
        assert!(!recs[0].is_ok());
        assert!(recs[0].grad_err.is_nan());
    }

    #[test]
    fn unit_and_scaled_ring_norms_agree() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for n in 1..=2 {
            let side = pow3(n) as usize;
            let v = CellArray::from_fn(2, side, 2, |_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
            let dom = TriadicCube::domain(2, n);
            for floor in [0, -1, -2] {
                let a = unit_scaled_ring_norm(&v, 0.4, &dom, floor).unwrap();
                let b = unit_ring_norm(&v, 0.4, n, floor).unwrap();
                assert!((a - b).abs() < 1e-12 * a.max(1.0), "n={n} floor={floor}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn e_s_cache_matches_recomputation() {
        let spec = FieldSpec::new(2, 2, 4, FieldKind::Checkerboard { low: 1.0, high: 4.0, prob: 0.5, periodic: false });
        let field = spec.generate().unwrap();
        let dom = field.domain();
        let opts = CoarseGrainOptions::default();
        let cache = hierarchy_sweep(&field, &dom, 0, &opts).unwrap().cache;
        let abar = double_from_a_bar(&iso(2, 2.0)).unwrap();
        for tail in [TailMode::Truncated, TailMode::TailCorrected] {
            let a = compute_e_s(&cache, &abar, 0.5, tail).unwrap();
            let b = recompute_e_s(&field, &dom, &abar, 0.5, tail, &opts).unwrap();
            assert!((a - b).abs() < 1e-12 * a.max(1.0));
        }
    }

    #[test]
    fn constant_field_has_zero_e_g_h() {
        let field = FieldSpec { level: 2, ..constant_spec(3.0) }.generate().unwrap();
        let dom = field.domain();
        let opts = CoarseGrainOptions::default();
        let cache = hierarchy_sweep(&field, &dom, 0, &opts).unwrap().cache;
        let abar = double_from_a_bar(&iso(2, 3.0)).unwrap();
        assert!(compute_e_s(&cache, &abar, 0.5, TailMode::TailCorrected).unwrap() < 1e-10);
        let gh = compute_gh(&field, &cache, &abar, 0.5, 2, &opts).unwrap();
        assert!(gh.g < 1e-10 && gh.h < 1e-10);
        assert!(compute_gh(&field, &cache, &abar, 0.5, 3, &opts).is_err());
    }

    #[test]
    fn g_uses_49_half_lattice_cubes_at_the_middle_scale() {
        let dom = TriadicCube::domain(2, 4);
        assert_eq!(dom.subcubes(3, Lattice::HalfOverlap).unwrap().len(), 49);
    }

    #[test]
    fn subadditivity_slack_is_nonnegative() {
        let spec = FieldSpec::new(2, 2, 9, FieldKind::LognormalIso { sigma: 0.8 });
        let field = spec.generate().unwrap();
        let opts = CoarseGrainOptions::default();
        let cache = hierarchy_sweep(&field, &field.domain(), 0, &opts).unwrap().cache;
        let abar = double_from_a_bar(&iso(2, 1.0)).unwrap();
        let gh = compute_gh(&field, &cache, &abar, 0.5, 2, &opts).unwrap();
        assert!(gh.subadditivity_slack >= -1e-10);
        assert!(gh.g >= 0.0 && gh.h >= 0.0);
    }

    #[test]
    fn constant_field_energy_ratio_is_one_half() {
        let field = FieldSpec { level: 2, ..constant_spec(2.0) }.generate().unwrap();
        let cache = hierarchy_sweep(&field, &field.domain(), 0, &CoarseGrainOptions::default()).unwrap().cache;
        let problem = EnergyProblem::Dirichlet { h: TargetFunction::Affine { p: vec![0.6, 0.8], c: 0.0 }, f: None };
        let r = energy_estimate_diagnostic(&field, &cache, &problem, 0.3, 1, &SolverOptions::default()).unwrap();
        assert!((r.lhs - 2f64.sqrt()).abs() < 1e-10);
        assert!((r.ratio - 0.5).abs() < 1e-10, "{r:?}");
    }

    #[test]
    fn laminate_formula() {
        let a = laminate_a_bar(2, 1.0, 4.0);
        assert!((a[(0, 0)] - 1.6).abs() < 1e-15 && (a[(1, 1)] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn trend_summary_detects_decrease() {
        let rec = |n, v: f64| ErrorRecord {
            n,
            seed: 0,
            grad_err: v,
            flux_err: v,
            energy: 1.0,
            e_alpha: v,
            g: 0.0,
            h: 0.0,
            rescale_defect: 0.0,
            failure: None,
        };
        let recs: Vec<ErrorRecord> = (1..=4).map(|n| rec(n, 1.0 / (n * n) as f64)).collect();
        let s = trend_summary("x", &recs);
        assert!(s.passed && s.mk_grad < 0);
        let flat: Vec<ErrorRecord> = (1..=4).map(|n| rec(n, 1.0)).collect();
        assert!(!trend_summary("x", &flat).passed);
    }
}

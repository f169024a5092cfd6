//! Triadic negative-regularity norms, coarse-grained ellipticity constants
//! and the L^p embedding bounds.
//!
//! Cube averages are taken over unit cells, so every scale k ≥ 0 is exact.
//! Scales below the unit cell see a constant value inside each cell; the
//! contribution of all k < 0 is then an explicit series, added in
//! [`TailMode::TailCorrected`] and omitted in [`TailMode::Truncated`].

use serde::{Deserialize, Serialize};

use crate::coarsegrain::HierarchyCache;
use crate::error::{HomError, Result};
use crate::fields::CoefficientField;
use crate::linalg::{self, Mat};
use crate::triadic::{grid_points, pow3, CellArray, TriadicCube};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TailMode {
    /// Sum over k = 0..=n only.
    Truncated,
    /// Add the exact contribution of all scales k < 0.
    #[default]
    TailCorrected,
}

pub(crate) fn check_exponent(name: &str, s: f64) -> Result<()> {
    if s > 0.0 && s < 1.0 {
        Ok(())
    } else {
        Err(HomError::invalid(format!("{name} must lie in (0, 1), got {s}")))
    }
}

/// Size of one cell value: spectral norm for d×d matrices, Euclidean norm otherwise.
pub fn magnitude(dim: usize, v: &[f64]) -> f64 {
    if v.len() == dim * dim && dim > 1 {
        linalg::spectral_norm(&linalg::from_slice(dim, v))
    } else {
        linalg::norm2(v)
    }
}

/// Σ_{k<0} 3^{2t(k−n)} = 3^{−2tn}·3^{−2t}/(1−3^{−2t}).
fn negative_scale_series(t: f64, n: u32) -> f64 {
    let r = 3f64.powf(-2.0 * t);
    3f64.powf(-2.0 * t * n as f64) * r / (1.0 - r)
}

/// Σ_{k=k_min}^{n} 3^{2t(k−n)} max_z |(f)_{z+□_k}| over the partition lattice,
/// plus the k < 0 tail in tail-corrected mode.
pub fn bnorm(values: &CellArray, t: f64, domain: &TriadicCube, mode: TailMode) -> Result<f64> {
    check_exponent("t", t)?;
    let pyr = values.pyramid(domain)?;
    let n = domain.level;
    let d = values.dim;
    let mut total = 0.0;
    let mut max0 = 0.0;
    for k in 0..=n {
        let m = pyr.averages(k).map(|v| magnitude(d, v)).fold(0.0f64, f64::max);
        if k == 0 {
            max0 = m;
        }
        total += 3f64.powf(2.0 * t * (k as f64 - n as f64)) * m;
    }
    if mode == TailMode::TailCorrected {
        total += max0 * negative_scale_series(t, n);
    }
    Ok(total)
}

/// (⨍_{□_n} |f|^p)^{1/p}, with |·| as in [`magnitude`].
pub fn lp_norm(values: &CellArray, p: f64, domain: &TriadicCube) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(HomError::invalid(format!("p must be at least 1, got {p}")));
    }
    let mut acc = 0.0;
    let d = values.dim;
    for cell in domain.cells() {
        let i = values
            .index(&cell)
            .ok_or_else(|| HomError::OutOfBounds(format!("{domain} outside the value window")))?;
        acc += magnitude(d, values.value(i)).powf(p);
    }
    Ok((acc / domain.volume()).powf(1.0 / p))
}

/// Box sums over a cell window via a d-dimensional summed-area table.
pub(crate) struct BoxSums {
    dim: usize,
    ncomp: usize,
    stride: usize,
    table: Vec<f64>,
}

impl BoxSums {
    /// Table of `values` restricted to `domain`, coordinates relative to its corner.
    pub(crate) fn new(values: &CellArray, domain: &TriadicCube, square: bool) -> Result<Self> {
        let d = values.dim;
        let nc = if square { 1 } else { values.ncomp };
        let side = domain.side() as usize;
        let stride = side + 1;
        let mut table = vec![0.0; stride.pow(d as u32) * nc];
        for idx in grid_points(d, side) {
            let cell: Vec<i64> = idx.iter().zip(&domain.offset).map(|(i, o)| *i as i64 + o).collect();
            let src = values
                .index(&cell)
                .ok_or_else(|| HomError::OutOfBounds(format!("{domain} outside the value window")))?;
            let v = values.value(src);
            let flat = idx.iter().rev().fold(0, |acc, i| acc * stride + i + 1);
            if square {
                table[flat] = linalg::dot(v, v);
            } else {
                table[flat * nc..(flat + 1) * nc].copy_from_slice(v);
            }
        }
        for axis in 0..d {
            let step = stride.pow(axis as u32);
            for flat in 0..stride.pow(d as u32) {
                if (flat / step) % stride != 0 {
                    for c in 0..nc {
                        table[flat * nc + c] += table[(flat - step) * nc + c];
                    }
                }
            }
        }
        Ok(Self { dim: d, ncomp: nc, stride, table })
    }

    /// Sum over the cells [corner, corner + len)^d.
    pub(crate) fn sum(&self, corner: &[usize], len: usize) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; self.ncomp];
        for mask in 0..(1usize << d) {
            let mut sign = 1.0;
            let mut flat = 0;
            for axis in (0..d).rev() {
                let hi = mask & (1 << axis) != 0;
                let c = if hi { corner[axis] + len } else {
                    sign = -sign;
                    corner[axis]
                };
                flat = flat * self.stride + c;
            }
            for (o, v) in out.iter_mut().zip(&self.table[flat * self.ncomp..(flat + 1) * self.ncomp]) {
                *o += sign * v;
            }
        }
        out
    }
}

/// Mean over the half-lattice cubes z + □_k ⊆ domain, z ∈ 3^{k−1}ℤ^d, of `f(average)`, k ≥ 1.
fn half_lattice_mean(sums: &BoxSums, n: u32, k: u32, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let step = pow3(k - 1) as usize;
    let len = pow3(k) as usize;
    let per_axis = (pow3(n) as usize - len) / step + 1;
    let vol = (len as f64).powi(sums.dim as i32);
    let mut acc = 0.0;
    let mut count = 0usize;
    for idx in grid_points(sums.dim, per_axis) {
        let corner: Vec<usize> = idx.iter().map(|i| i * step).collect();
        let avg: Vec<f64> = sums.sum(&corner, len).iter().map(|x| x / vol).collect();
        acc += f(&avg);
        count += 1;
    }
    acc / count as f64
}

/// Sub-cell decomposition of the half-lattice sum at scales k ≤ 0.
///
/// Along one axis of L cells a cube of side 3^k with corner on 3^{k−1}ℤ either
/// sits inside a cell (3^{1−k} − 2 positions per cell) or straddles an interior
/// cell boundary with weights (1/3, 2/3) or (2/3, 1/3). `by_straddles[j]` sums
/// |average|² over the configurations with exactly j straddling axes, counting
/// each inside-cell configuration once.
struct SubCellSums {
    dim: usize,
    cells_per_axis: usize,
    by_straddles: Vec<f64>,
}

impl SubCellSums {
    fn new(values: &CellArray, domain: &TriadicCube) -> Result<Self> {
        let d = values.dim;
        let l = domain.side() as usize;
        let nc = values.ncomp;
        let mut cells = Vec::with_capacity(l.pow(d as u32));
        for cell in domain.cells() {
            let i = values
                .index(&cell)
                .ok_or_else(|| HomError::OutOfBounds(format!("{domain} outside the value window")))?;
            cells.push(values.value(i).to_vec());
        }
        let at = |idx: &[usize]| -> &[f64] {
            let flat = idx.iter().rev().fold(0, |acc, i| acc * l + i);
            &cells[flat]
        };
        // Per-axis options: (first cell, weights). Inside: (c, [1]); straddle: (b−1, [w, 1−w]).
        let mut options: Vec<(usize, Vec<f64>, bool)> = (0..l).map(|c| (c, vec![1.0], false)).collect();
        for b in 1..l {
            options.push((b - 1, vec![1.0 / 3.0, 2.0 / 3.0], true));
            options.push((b - 1, vec![2.0 / 3.0, 1.0 / 3.0], true));
        }
        let mut by_straddles = vec![0.0; d + 1];
        for choice in grid_points(d, options.len()) {
            let opts: Vec<&(usize, Vec<f64>, bool)> = choice.iter().map(|&c| &options[c]).collect();
            let straddles = opts.iter().filter(|o| o.2).count();
            let mut avg = vec![0.0; nc];
            let shape: Vec<usize> = opts.iter().map(|o| o.1.len()).collect();
            let mut local = vec![0usize; d];
            loop {
                let mut w = 1.0;
                let idx: Vec<usize> = (0..d)
                    .map(|a| {
                        w *= opts[a].1[local[a]];
                        opts[a].0 + local[a]
                    })
                    .collect();
                for (x, v) in avg.iter_mut().zip(at(&idx)) {
                    *x += w * v;
                }
                let mut a = 0;
                while a < d {
                    local[a] += 1;
                    if local[a] < shape[a] {
                        break;
                    }
                    local[a] = 0;
                    a += 1;
                }
                if a == d {
                    break;
                }
            }
            by_straddles[straddles] += linalg::dot(&avg, &avg);
        }
        Ok(Self { dim: d, cells_per_axis: l, by_straddles })
    }

    /// avg_z |(f)_{z+□_k}|² over the half-lattice at scale k ≤ 0.
    fn mean_square(&self, k: i32) -> f64 {
        let m = 3f64.powi(1 - k);
        let inside = m - 2.0;
        let count = self.cells_per_axis as f64 * m - 2.0;
        let d = self.dim as i32;
        self.by_straddles
            .iter()
            .enumerate()
            .map(|(j, c)| c * (inside / count).powi(d - j as i32) / count.powi(j as i32))
            .sum()
    }
}

/// Lowest scale summed explicitly before the remaining geometric tail is negligible.
fn tail_floor(s: f64) -> i32 {
    let k = (40.0 / (2.0 * s * 3f64.ln())).ceil() as i32;
    -k.clamp(1, 100_000)
}

/// (Σ_k 3^{2sk} avg_{z∈3^{k−1}ℤ^d} |(f)_{z+□_k}|²)^{1/2} for a per-cell vector field.
///
/// Sums k = 0..=n in truncated mode and all k ≤ n in tail-corrected mode.
pub fn ring_dual_norm(values: &CellArray, s: f64, domain: &TriadicCube, mode: TailMode) -> Result<f64> {
    let floor = match mode {
        TailMode::Truncated => 0,
        TailMode::TailCorrected => tail_floor(s),
    };
    ring_dual_norm_from(values, s, domain, floor)
}

/// Ring norm summed over scales `floor..=n` (`floor ≤ 0`).
pub fn ring_dual_norm_from(values: &CellArray, s: f64, domain: &TriadicCube, floor: i32) -> Result<f64> {
    check_exponent("s", s)?;
    if floor > 0 {
        return Err(HomError::invalid("the lowest scale must be at most 0"));
    }
    let n = domain.level;
    let sums = BoxSums::new(values, domain, false)?;
    let mut total = 0.0;
    for k in 1..=n {
        let ms = half_lattice_mean(&sums, n, k, |a| linalg::dot(a, a));
        total += 3f64.powf(2.0 * s * k as f64) * ms;
    }
    let sub = SubCellSums::new(values, domain)?;
    for k in floor..=0 {
        total += 3f64.powf(2.0 * s * k as f64) * sub.mean_square(k);
    }
    Ok(total.sqrt())
}

/// 3^{−sn}‖g‖_{L̲²} + (Σ_{k=1}^{n} 3^{−2sk} avg_z ⨍_{z+□_k} |g − (g)_{z+□_k}|²)^{1/2},
/// half-lattice cubes, for per-cell vector fields. Oscillation below the unit cell is zero.
pub fn hs_norm(values: &CellArray, s: f64, domain: &TriadicCube) -> Result<f64> {
    check_exponent("s", s)?;
    let n = domain.level;
    let sums = BoxSums::new(values, domain, false)?;
    let squares = BoxSums::new(values, domain, true)?;
    let vol = domain.volume();
    let corner = vec![0usize; values.dim];
    let l2 = (squares.sum(&corner, domain.side() as usize)[0] / vol).max(0.0).sqrt();
    let mut semi = 0.0;
    for k in 1..=n {
        let step = pow3(k - 1) as usize;
        let len = pow3(k) as usize;
        let per_axis = (pow3(n) as usize - len) / step + 1;
        let cv = (len as f64).powi(values.dim as i32);
        let mut acc = 0.0;
        let mut count = 0usize;
        for idx in grid_points(values.dim, per_axis) {
            let c: Vec<usize> = idx.iter().map(|i| i * step).collect();
            let mean: Vec<f64> = sums.sum(&c, len).iter().map(|x| x / cv).collect();
            let sq = squares.sum(&c, len)[0] / cv;
            let var = sq - linalg::dot(&mean, &mean);
            if var > 1e-13 * sq {
                acc += var;
            }
            count += 1;
        }
        semi += 3f64.powf(-2.0 * s * k as f64) * acc / count as f64;
    }
    Ok(3f64.powf(-s * n as f64) * l2 + semi.sqrt())
}

/// Exponents and options for [`ellipticity_constants`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipticityParams {
    pub s: f64,
    pub t: f64,
    /// Integrability exponent reported for b.
    pub p: f64,
    /// Integrability exponent reported for s⁻¹.
    pub q: f64,
    pub tail: TailMode,
    /// Keep the (1 − 3^{−2s}) and (1 − 3^{−2t}) normalizing factors.
    pub normalized: bool,
}

impl Default for EllipticityParams {
    fn default() -> Self {
        Self { s: 0.3, t: 0.3, p: 4.0, q: 4.0, tail: TailMode::TailCorrected, normalized: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticityReport {
    pub n: u32,
    pub s: f64,
    pub t: f64,
    pub lambda_s: f64,
    #[serde(rename = "Lambda_t")]
    pub upper_lambda_t: f64,
    pub besov_b: f64,
    pub besov_sinv: f64,
    pub lp_b: f64,
    pub lq_sinv: f64,
}

/// Σ_k 3^{2e(k−n)} max_z f(z+□_k) over the cached partition hierarchy, plus the k < 0 tail
/// built from the unit-scale entries.
pub(crate) fn weighted_max_sum(
    cache: &HierarchyCache,
    e: f64,
    tail: TailMode,
    f: impl Fn(&crate::coarsegrain::CoarseGrainedMatrices) -> f64,
) -> Result<f64> {
    let n = cache.domain.level;
    if tail == TailMode::TailCorrected && cache.k_min > 0 {
        return Err(HomError::MissingCube(format!(
            "tail correction needs unit-scale cubes, cache starts at scale {}",
            cache.k_min
        )));
    }
    let mut total = 0.0;
    let mut max0 = 0.0;
    for k in cache.k_min..=n {
        let m = cache.scale(k)?.into_iter().map(&f).fold(0.0f64, f64::max);
        if k == 0 {
            max0 = m;
        }
        total += 3f64.powf(2.0 * e * (k as f64 - n as f64)) * m;
    }
    if tail == TailMode::TailCorrected {
        total += max0 * negative_scale_series(e, n);
    }
    Ok(total)
}

pub(crate) fn lower_block(a: &Mat) -> Mat {
    let d = a.nrows() / 2;
    a.view((d, d), (d, d)).into_owned()
}

/// λ_s(□_n)⁻¹ = (1−3^{−2s}) Σ_k 3^{2s(k−n)} max_z |s*⁻¹(z+□_k)|.
pub fn lambda_inverse(cache: &HierarchyCache, s: f64, tail: TailMode, normalized: bool) -> Result<f64> {
    check_exponent("s", s)?;
    let c = if normalized { 1.0 - 3f64.powf(-2.0 * s) } else { 1.0 };
    Ok(c * weighted_max_sum(cache, s, tail, |m| linalg::spectral_norm(&lower_block(&m.a)))?)
}

/// Λ_t(□_n) = (1−3^{−2t}) Σ_k 3^{2t(k−n)} max_z |b(z+□_k)|.
pub fn upper_lambda(cache: &HierarchyCache, t: f64, tail: TailMode, normalized: bool) -> Result<f64> {
    check_exponent("t", t)?;
    let c = if normalized { 1.0 - 3f64.powf(-2.0 * t) } else { 1.0 };
    Ok(c * weighted_max_sum(cache, t, tail, |m| linalg::spectral_norm(&m.b))?)
}

/// Coarse-grained ellipticity constants of one field from its hierarchy cache.
pub fn ellipticity_constants(
    cache: &HierarchyCache,
    field: &CoefficientField,
    params: &EllipticityParams,
) -> Result<EllipticityReport> {
    if !cache.is_complete() {
        return Err(HomError::MissingCube("hierarchy cache is incomplete".into()));
    }
    let domain = &cache.domain;
    let b = field.b_cells();
    let sinv = field.sinv_cells();
    Ok(EllipticityReport {
        n: domain.level,
        s: params.s,
        t: params.t,
        lambda_s: 1.0 / lambda_inverse(cache, params.s, params.tail, params.normalized)?,
        upper_lambda_t: upper_lambda(cache, params.t, params.tail, params.normalized)?,
        besov_b: bnorm(&b, params.t, domain, params.tail)?,
        besov_sinv: bnorm(&sinv, params.s, domain, params.tail)?,
        lp_b: lp_norm(&b, params.p, domain)?,
        lq_sinv: lp_norm(&sinv, params.q, domain)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingReport {
    #[serde(rename = "Lambda_t")]
    pub upper_lambda_t: f64,
    #[serde(rename = "Lambda_t_bound")]
    pub upper_bound: f64,
    pub lambda_s_inverse: f64,
    pub lambda_s_inverse_bound: f64,
    /// bound − value for Λ_t, relative to the bound.
    pub upper_margin: f64,
    /// bound − value for λ_s⁻¹, relative to the bound.
    pub lower_margin: f64,
    pub passed: bool,
}

/// Checks Λ_t ≤ (1−3^{−2t})/(1−3^{d/p−2t})·‖b‖_{L̲^p} and
/// λ_s⁻¹ ≤ (1−3^{−2s})/(1−3^{d/q−2s})·‖s⁻¹‖_{L̲^q}.
pub fn embedding_check(
    cache: &HierarchyCache,
    field: &CoefficientField,
    p: f64,
    q: f64,
    s: f64,
    t: f64,
) -> Result<EmbeddingReport> {
    check_exponent("s", s)?;
    check_exponent("t", t)?;
    let d = field.dim() as f64;
    if !(p > d / (2.0 * t)) || !(q > d / (2.0 * s)) {
        return Err(HomError::invalid(format!(
            "exponents require p > d/(2t) = {} and q > d/(2s) = {}",
            d / (2.0 * t),
            d / (2.0 * s)
        )));
    }
    let domain = &cache.domain;
    let tail = TailMode::TailCorrected;
    let upper = upper_lambda(cache, t, tail, true)?;
    let linv = lambda_inverse(cache, s, tail, true)?;
    let upper_bound = (1.0 - 3f64.powf(-2.0 * t)) / (1.0 - 3f64.powf(d / p - 2.0 * t))
        * lp_norm(&field.b_cells(), p, domain)?;
    let lower_bound = (1.0 - 3f64.powf(-2.0 * s)) / (1.0 - 3f64.powf(d / q - 2.0 * s))
        * lp_norm(&field.sinv_cells(), q, domain)?;
    let upper_margin = (upper_bound - upper) / upper_bound;
    let lower_margin = (lower_bound - linv) / lower_bound;
    Ok(EmbeddingReport {
        upper_lambda_t: upper,
        upper_bound,
        lambda_s_inverse: linv,
        lambda_s_inverse_bound: lower_bound,
        upper_margin,
        lower_margin,
        passed: upper_margin >= -1e-12 && lower_margin >= -1e-12,
    })
}

//! Random coefficient fields a = s + k, one constant matrix per unit cell.

pub mod cascade;
pub mod io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HomError, Result};
use crate::linalg::{self, Mat};
use crate::triadic::{grid_points, pow3, CellArray, GridSpec, TriadicCube};

pub use cascade::{CascadeLayer, CascadeSpec};

/// Largest condition number accepted for a cell's symmetric part.
pub const MAX_CELL_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldKind {
    /// a ≡ matrix (symmetric and skew parts are split off).
    Constant { matrix: Vec<Vec<f64>> },
    /// s = low·I or high·I per cell; i.i.d. with P(high) = prob, or the parity pattern.
    Checkerboard {
        low: f64,
        high: f64,
        #[serde(default = "default_prob")]
        prob: f64,
        #[serde(default)]
        periodic: bool,
    },
    /// s = a1·I on even columns along the first axis and a2·I on odd ones.
    Laminate {
        a1: f64,
        a2: f64,
        #[serde(default)]
        random_phase: bool,
    },
    /// s = exp(sigma·g)·I with g standard normal per cell.
    LognormalIso { sigma: f64 },
    /// s = (1 + f)·I with f the multiplicative cascade.
    CascadeIso {
        sigma: f64,
        #[serde(default)]
        m_max: Option<u32>,
        #[serde(default)]
        cap: Option<f64>,
    },
    /// Lognormal s plus a skew part with entries skew·s·ξ, ξ ~ U(−1, 1).
    SkewLognormal { sigma: f64, skew: f64 },
}

fn default_prob() -> f64 {
    0.5
}

impl FieldKind {
    pub fn code(&self) -> u32 {
        match self {
            FieldKind::Constant { .. } => 1,
            FieldKind::Checkerboard { .. } => 2,
            FieldKind::Laminate { .. } => 3,
            FieldKind::LognormalIso { .. } => 4,
            FieldKind::CascadeIso { .. } => 5,
            FieldKind::SkewLognormal { .. } => 6,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(
            self,
            FieldKind::Constant { .. }
                | FieldKind::Checkerboard { periodic: true, .. }
                | FieldKind::Laminate { random_phase: false, .. }
        )
    }

    fn validate(&self, dim: usize) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(HomError::invalid(format!("{name} must be positive and finite, got {v}")))
            }
        };
        match self {
            FieldKind::Constant { matrix } => {
                let a = linalg::from_rows(matrix)?;
                if a.nrows() != dim || a.ncols() != dim {
                    return Err(HomError::invalid(format!("constant matrix must be {dim}×{dim}")));
                }
                let s = linalg::symmetrize(&a);
                linalg::spd_inverse(&s, MAX_CELL_CONDITION)
                    .map_err(|_| HomError::invalid("constant matrix has non-SPD symmetric part"))?;
                Ok(())
            }
            FieldKind::Checkerboard { low, high, prob, .. } => {
                positive("low", *low)?;
                positive("high", *high)?;
                if !(0.0..=1.0).contains(prob) {
                    return Err(HomError::invalid("prob must lie in [0, 1]"));
                }
                Ok(())
            }
            FieldKind::Laminate { a1, a2, .. } => {
                positive("a1", *a1)?;
                positive("a2", *a2)
            }
            FieldKind::LognormalIso { sigma } => positive("sigma", *sigma + f64::MIN_POSITIVE),
            FieldKind::CascadeIso { sigma, m_max, cap } => {
                positive("sigma", *sigma + f64::MIN_POSITIVE)?;
                if *m_max == Some(0) {
                    return Err(HomError::invalid("m_max must be at least 1"));
                }
                if let Some(c) = cap {
                    positive("cap", *c)?;
                }
                Ok(())
            }
            FieldKind::SkewLognormal { sigma, skew } => {
                positive("sigma", *sigma + f64::MIN_POSITIVE)?;
                if !skew.is_finite() {
                    return Err(HomError::invalid("skew must be finite"));
                }
                Ok(())
            }
        }
    }
}

/// Everything needed to regenerate a field bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub dim: usize,
    /// The field covers □_level = [0, 3^level)^d.
    pub level: u32,
    /// Extra cells generated on every side of □_level, available to shifts.
    #[serde(default)]
    pub margin: u32,
    pub seed: u64,
    pub kind: FieldKind,
}

impl FieldSpec {
    pub fn new(dim: usize, level: u32, seed: u64, kind: FieldKind) -> Self {
        Self { dim, level, margin: 0, seed, kind }
    }

    pub fn with_margin(mut self, margin: u32) -> Self {
        self.margin = margin;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.dim) {
            return Err(HomError::invalid(format!("dimension must be 2 or 3, got {}", self.dim)));
        }
        self.kind.validate(self.dim)
    }

    pub fn generate(&self) -> Result<CoefficientField> {
        self.generate_sample(0)
    }

    /// Sample `index` uses the independent ChaCha stream `(seed, index)`.
    pub fn generate_sample(&self, index: u64) -> Result<CoefficientField> {
        self.validate()?;
        let mut rng = sample_rng(self.seed, index);
        let d = self.dim;
        let m = self.margin as i64;
        let side = pow3(self.level) as usize + 2 * self.margin as usize;
        let origin = vec![-m; d];
        let ncell = side.pow(d as u32);
        let mut s = vec![0.0; ncell * d * d];
        let mut k = vec![0.0; ncell * d * d];
        let coords = |idx: &[usize]| -> Vec<i64> { idx.iter().map(|&i| i as i64 - m).collect() };
        let set_iso = |s: &mut [f64], cell: usize, v: f64| {
            for a in 0..d {
                s[cell * d * d + a * d + a] = v;
            }
        };
        match &self.kind {
            FieldKind::Constant { matrix } => {
                let a = linalg::from_rows(matrix)?;
                let sym = linalg::symmetrize(&a);
                let skew = (&a - a.transpose()) * 0.5;
                for cell in 0..ncell {
                    for i in 0..d {
                        for j in 0..d {
                            s[cell * d * d + i * d + j] = sym[(i, j)];
                            k[cell * d * d + i * d + j] = skew[(i, j)];
                        }
                    }
                }
            }
            FieldKind::Checkerboard { low, high, prob, periodic } => {
                for (cell, idx) in grid_points(d, side).enumerate() {
                    let hi = if *periodic {
                        coords(&idx).iter().sum::<i64>().rem_euclid(2) == 1
                    } else {
                        rng.random::<f64>() < *prob
                    };
                    set_iso(&mut s, cell, if hi { *high } else { *low });
                }
            }
            FieldKind::Laminate { a1, a2, random_phase } => {
                let phase = if *random_phase { rng.random_range(0..2i64) } else { 0 };
                for (cell, idx) in grid_points(d, side).enumerate() {
                    let odd = (coords(&idx)[0] + phase).rem_euclid(2) == 1;
                    set_iso(&mut s, cell, if odd { *a2 } else { *a1 });
                }
            }
            FieldKind::LognormalIso { sigma } => {
                for cell in 0..ncell {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    set_iso(&mut s, cell, (sigma * g).exp());
                }
            }
            FieldKind::CascadeIso { sigma, m_max, cap } => {
                let spec = CascadeSpec {
                    sigma: *sigma,
                    m_max: m_max.unwrap_or(2 * self.level + 4),
                    level: self.level,
                    seed: self.seed,
                    cap: cap.unwrap_or(cascade::DEFAULT_CAP),
                };
                let f = cascade::cascade_values(d, &origin, side, &spec, &mut rng)?;
                for (cell, v) in f.iter().enumerate() {
                    set_iso(&mut s, cell, 1.0 + v);
                }
            }
            FieldKind::SkewLognormal { sigma, skew } => {
                let ncomp = d * (d - 1) / 2;
                for cell in 0..ncell {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    let v = (sigma * g).exp();
                    set_iso(&mut s, cell, v);
                    let comps: Vec<f64> = (0..ncomp)
                        .map(|_| skew * v * rng.random_range(-1.0..1.0))
                        .collect();
                    let km = linalg::skew_from_components(d, &comps);
                    for i in 0..d {
                        for j in 0..d {
                            k[cell * d * d + i * d + j] = km[(i, j)];
                        }
                    }
                }
            }
        }
        let field = CoefficientField {
            dim: d,
            level: self.level,
            origin,
            side,
            s,
            k,
            spec: Some(self.clone()),
            sample: index,
        };
        field.validate()?;
        Ok(field)
    }
}

/// Independent stream for sample `index` of a run seeded with `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Per-cell coefficients on a window of side `side` whose first cell sits at `origin`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    dim: usize,
    level: u32,
    origin: Vec<i64>,
    side: usize,
    s: Vec<f64>,
    k: Vec<f64>,
    pub spec: Option<FieldSpec>,
    pub sample: u64,
}

impl CoefficientField {
    /// Builds a field on □_level from explicit row-major per-cell matrices.
    pub fn from_cells(dim: usize, level: u32, s: Vec<f64>, k: Vec<f64>) -> Result<Self> {
        let side = pow3(level) as usize;
        let n = side.pow(dim as u32) * dim * dim;
        if s.len() != n || k.len() != n {
            return Err(HomError::invalid(format!(
                "expected {n} values for s and k, got {} and {}",
                s.len(),
                k.len()
            )));
        }
        let f = Self { dim, level, origin: vec![0; dim], side, s, k, spec: None, sample: 0 };
        f.validate()?;
        Ok(f)
    }

    /// Scalar isotropic field s = values[cell]·I, k = 0.
    pub fn from_scalar(dim: usize, level: u32, values: &[f64]) -> Result<Self> {
        let mut s = vec![0.0; values.len() * dim * dim];
        for (c, v) in values.iter().enumerate() {
            for a in 0..dim {
                s[c * dim * dim + a * dim + a] = *v;
            }
        }
        let k = vec![0.0; s.len()];
        Self::from_cells(dim, level, s, k)
    }

    pub(crate) fn from_parts(
        dim: usize,
        level: u32,
        origin: Vec<i64>,
        side: usize,
        s: Vec<f64>,
        k: Vec<f64>,
        spec: Option<FieldSpec>,
        sample: u64,
    ) -> Result<Self> {
        let f = Self { dim, level, origin, side, s, k, spec, sample };
        f.validate()?;
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn origin(&self) -> &[i64] {
        &self.origin
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn cell_count(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    pub fn domain(&self) -> TriadicCube {
        TriadicCube::domain(self.dim, self.level)
    }

    pub fn grid(&self, resolution: usize) -> Result<GridSpec> {
        GridSpec::new(self.dim, self.level, resolution)
    }

    pub fn raw_s(&self) -> &[f64] {
        &self.s
    }

    pub fn raw_k(&self) -> &[f64] {
        &self.k
    }

    /// Storage index of the cell with global coordinates `x`.
    pub fn index(&self, x: &[i64]) -> Option<usize> {
        let mut flat = 0usize;
        for a in (0..self.dim).rev() {
            let c = x[a] - self.origin[a];
            if c < 0 || c as usize >= self.side {
                return None;
            }
            flat = flat * self.side + c as usize;
        }
        Some(flat)
    }

    pub fn covers(&self, cube: &TriadicCube) -> bool {
        cube.dim() == self.dim
            && cube.offset.iter().zip(&self.origin).all(|(o, w)| {
                *o >= *w && o + cube.side() <= w + self.side as i64
            })
    }

    pub fn require_cover(&self, cube: &TriadicCube) -> Result<()> {
        if self.covers(cube) {
            Ok(())
        } else {
            Err(HomError::OutOfBounds(format!("field window does not cover {cube}")))
        }
    }

    pub fn s_slice(&self, idx: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        &self.s[idx * dd..(idx + 1) * dd]
    }

    pub fn k_slice(&self, idx: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        &self.k[idx * dd..(idx + 1) * dd]
    }

    pub fn s_matrix(&self, idx: usize) -> Mat {
        linalg::from_slice(self.dim, self.s_slice(idx))
    }

    pub fn k_matrix(&self, idx: usize) -> Mat {
        linalg::from_slice(self.dim, self.k_slice(idx))
    }

    /// a = s + k on cell `idx`, row-major.
    pub fn a_cell(&self, idx: usize) -> Vec<f64> {
        self.s_slice(idx).iter().zip(self.k_slice(idx)).map(|(s, k)| s + k).collect()
    }

    /// Pointwise double-variable matrix of cell `idx`.
    pub fn pointwise_double(&self, idx: usize) -> Result<Mat> {
        linalg::pointwise_double_matrix(&self.s_matrix(idx), &self.k_matrix(idx))
    }

    /// Checks that every s is SPD with bounded condition and every k is exactly skew.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim;
        for cell in 0..self.cell_count() {
            let s = self.s_slice(cell);
            let k = self.k_slice(cell);
            for i in 0..d {
                for j in 0..d {
                    if s[i * d + j] != s[j * d + i] {
                        return Err(HomError::NotSpd { cell, reason: "not symmetric".into() });
                    }
                    if k[i * d + j] != -k[j * d + i] {
                        return Err(HomError::NotSkew { cell });
                    }
                }
            }
            if s.iter().chain(k).any(|v| !v.is_finite()) {
                return Err(HomError::NotSpd { cell, reason: "non-finite entry".into() });
            }
            let ev = linalg::sym_eigenvalues(&self.s_matrix(cell));
            let (lo, hi) = (ev[0], ev[d - 1]);
            if !(lo > 0.0) {
                return Err(HomError::NotSpd { cell, reason: format!("eigenvalue {lo:e}") });
            }
            if hi / lo > MAX_CELL_CONDITION {
                return Err(HomError::NotSpd {
                    cell,
                    reason: format!("condition number {:e} above {MAX_CELL_CONDITION:e}", hi / lo),
                });
            }
            if self.s_matrix(cell).cholesky().is_none() {
                return Err(HomError::NotSpd { cell, reason: "cholesky failed".into() });
            }
        }
        Ok(())
    }

    /// The translated field x ↦ a(x + z), restricted to the stored window.
    pub fn shift(&self, z: &[i64]) -> Result<Self> {
        if z.len() != self.dim {
            return Err(HomError::invalid("shift vector has wrong dimension"));
        }
        let origin: Vec<i64> = self.origin.iter().zip(z).map(|(o, s)| o - s).collect();
        let shifted = Self { origin, ..self.clone() };
        if !shifted.covers(&shifted.domain()) {
            return Err(HomError::OutOfBounds(format!(
                "shift {z:?} leaves the generated window (margin exhausted)"
            )));
        }
        Ok(shifted)
    }

    /// The field a − h for a constant skew matrix h.
    pub fn center_skew(&self, h: &Mat) -> Result<Self> {
        let d = self.dim;
        if h.nrows() != d || h.ncols() != d || (h + h.transpose()).abs().max() > 0.0 {
            return Err(HomError::invalid("centering matrix must be an exactly skew d×d matrix"));
        }
        let mut k = self.k.clone();
        for chunk in k.chunks_mut(d * d) {
            for i in 0..d {
                for j in 0..d {
                    chunk[i * d + j] -= h[(i, j)];
                }
            }
        }
        Ok(Self { k, spec: None, ..self.clone() })
    }

    /// The adjoint field aᵀ = s − k.
    pub fn adjoint(&self) -> Self {
        let k = self.k.iter().map(|v| -v).collect();
        Self { k, spec: None, ..self.clone() }
    }

    /// The field c·a for c > 0.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(HomError::invalid("scale factor must be positive"));
        }
        let s = self.s.iter().map(|v| c * v).collect();
        let k = self.k.iter().map(|v| c * v).collect();
        Ok(Self { s, k, spec: None, ..self.clone() })
    }

    /// Per-cell matrices over □_level produced by `f`, as a CellArray with d² components.
    pub fn cell_matrices(&self, mut f: impl FnMut(&Mat, &Mat) -> Mat) -> CellArray {
        let d = self.dim;
        let dom = self.domain();
        let mut out = CellArray::zeros(d, dom.side() as usize, d * d);
        for (i, cell) in dom.cells().enumerate() {
            let idx = self.index(&cell).expect("window covers domain");
            let m = f(&self.s_matrix(idx), &self.k_matrix(idx));
            for r in 0..d {
                for c in 0..d {
                    out.data[i * d * d + r * d + c] = m[(r, c)];
                }
            }
        }
        out
    }

    /// b = s + kᵀs⁻¹k on every cell of □_level.
    pub fn b_cells(&self) -> CellArray {
        self.cell_matrices(|s, k| {
            let sinv = s.clone().try_inverse().expect("validated SPD");
            s + k.transpose() * sinv * k
        })
    }

    /// s⁻¹ on every cell of □_level.
    pub fn sinv_cells(&self) -> CellArray {
        self.cell_matrices(|s, _| s.clone().try_inverse().expect("validated SPD"))
    }

    pub fn s_cells(&self) -> CellArray {
        self.cell_matrices(|s, _| s.clone())
    }

    /// SHA-256 over geometry and payload.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        h.update((self.level as u64).to_le_bytes());
        h.update((self.side as u64).to_le_bytes());
        for o in &self.origin {
            h.update(o.to_le_bytes());
        }
        for v in self.s.iter().chain(&self.k) {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    fn checker(level: u32, seed: u64) -> FieldSpec {
        FieldSpec::new(
            2,
            level,
            seed,
            FieldKind::Checkerboard { low: 1.0, high: 9.0, prob: 0.5, periodic: false },
        )
    }

    #[test]
    fn constant_identity_field() {
        let spec = FieldSpec::new(
            2,
            1,
            0,
            FieldKind::Constant { matrix: vec![vec![1.0, 0.0], vec![0.0, 1.0]] },
        );
        let f = spec.generate().unwrap();
        for c in 0..f.cell_count() {
            assert_eq!(f.s_slice(c), &[1.0, 0.0, 0.0, 1.0]);
            assert_eq!(f.k_slice(c), &[0.0; 4]);
        }
    }

    #[test]
    fn constant_splits_symmetric_and_skew() {
        let spec = FieldSpec::new(
            2,
            0,
            0,
            FieldKind::Constant { matrix: vec![vec![2.0, 1.0], vec![0.0, 3.0]] },
        );
        let f = spec.generate().unwrap();
        assert_eq!(f.s_slice(0), &[2.0, 0.5, 0.5, 3.0]);
        assert_eq!(f.k_slice(0), &[0.0, 0.5, -0.5, 0.0]);
    }

    #[test]
    fn laminate_has_two_values_alternating_in_first_axis() {
        let spec = FieldSpec::new(2, 2, 0, FieldKind::Laminate { a1: 1.0, a2: 4.0, random_phase: false });
        let f = spec.generate().unwrap();
        let mut seen: Vec<f64> = (0..f.cell_count()).map(|c| f.s_slice(c)[0]).collect();
        seen.sort_by(|a, b| a.total_cmp(b));
        seen.dedup();
        assert_eq!(seen, vec![1.0, 4.0]);
        for cell in f.domain().cells() {
            let v = f.s_slice(f.index(&cell).unwrap())[0];
            assert_eq!(v, if cell[0] % 2 == 0 { 1.0 } else { 4.0 });
        }
    }

    #[test]
    fn checkerboard_histogram_is_balanced() {
        let f = checker(4, 11).generate().unwrap();
        let n = f.cell_count() as f64;
        let high = (0..f.cell_count()).filter(|&c| f.s_slice(c)[0] == 9.0).count() as f64;
        let p = high / n;
        let se = (0.25 / n).sqrt();
        assert!((p - 0.5).abs() < 4.0 * se, "fraction {p}");
    }

    #[test]
    fn non_spd_parameters_rejected() {
        let bad = FieldSpec::new(
            2,
            1,
            0,
            FieldKind::Checkerboard { low: -1.0, high: 2.0, prob: 0.5, periodic: false },
        );
        assert!(bad.generate().is_err());
        let bad = FieldSpec::new(
            2,
            1,
            0,
            FieldKind::Constant { matrix: vec![vec![1.0, 0.0], vec![0.0, -1.0]] },
        );
        assert!(bad.generate().is_err());
    }

    #[test]
    fn seed_determinism_and_stream_independence() {
        let a = checker(2, 5).generate_sample(3).unwrap();
        let b = checker(2, 5).generate_sample(3).unwrap();
        let c = checker(2, 5).generate_sample(4).unwrap();
        assert_eq!(a.raw_s(), b.raw_s());
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.raw_s(), c.raw_s());
    }

    #[test]
    fn skew_lognormal_keeps_normalized_skew_bounded() {
        let spec = FieldSpec::new(3, 1, 2, FieldKind::SkewLognormal { sigma: 0.5, skew: 0.8 });
        let f = spec.generate().unwrap();
        for c in 0..f.cell_count() {
            let s = f.s_slice(c)[0];
            assert!(f.k_slice(c).iter().all(|v| v.abs() <= 0.8 * s));
            let k = f.k_matrix(c);
            assert_eq!(&k + k.transpose(), Mat::zeros(3, 3));
        }
    }

    #[test]
    fn shift_identity_and_inverse() {
        let f = checker(1, 1).with_margin(2).generate().unwrap();
        assert_eq!(f.shift(&[0, 0]).unwrap(), f);
        let back = f.shift(&[1, -2]).unwrap().shift(&[-1, 2]).unwrap();
        assert_eq!(back, f);
        assert!(f.shift(&[3, 0]).is_err());
        let g = checker(1, 1).generate().unwrap();
        assert!(g.shift(&[1, 0]).is_err());
    }

    #[test]
    fn shift_translates_values() {
        let f = checker(1, 9).with_margin(1).generate().unwrap();
        let g = f.shift(&[1, 0]).unwrap();
        for cell in g.domain().cells() {
            let moved = vec![cell[0] + 1, cell[1]];
            assert_eq!(
                g.s_slice(g.index(&cell).unwrap()),
                f.s_slice(f.index(&moved).unwrap())
            );
        }
    }

    #[test]
    fn shift_preserves_block_average_distribution() {
        let spec = checker(1, 77).with_margin(1);
        let dom = TriadicCube::domain(2, 1);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for i in 0..10_000 {
            let f = spec.generate_sample(i).unwrap();
            a.push(f.s_cells().cell_average(&dom).unwrap()[0]);
            let g = spec.generate_sample(i + 10_000).unwrap().shift(&[1, 0]).unwrap();
            b.push(g.s_cells().cell_average(&dom).unwrap()[0]);
        }
        let ks = stats::ks_statistic(&a, &b);
        assert!(ks < stats::ks_critical(a.len(), b.len(), 1.95), "KS {ks}");
    }

    #[test]
    fn center_skew_and_adjoint() {
        let spec = FieldSpec::new(2, 1, 3, FieldKind::SkewLognormal { sigma: 0.3, skew: 0.5 });
        let f = spec.generate().unwrap();
        let h = linalg::skew_from_components(2, &[0.7]);
        let g = f.center_skew(&h).unwrap();
        for c in 0..f.cell_count() {
            assert!((g.k_slice(c)[1] - (f.k_slice(c)[1] - 0.7)).abs() < 1e-15);
            assert_eq!(g.s_slice(c), f.s_slice(c));
        }
        assert!(f.center_skew(&linalg::identity(2)).is_err());
        assert_eq!(f.adjoint().adjoint().raw_k(), f.raw_k());
    }
}

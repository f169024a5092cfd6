//! Multiplicative cascade f = Σ_m m^{−3} ∏_{j≤m} W_j with lognormal layers
//! W_j = exp(g − σ²/2), g ~ N(0, σ²), constant on the cubes 3^j ℤ^d.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{HomError, Result};
use crate::triadic::{grid_points, pow3, CellArray};

use super::sample_rng;

/// Products above this value abort generation.
pub const DEFAULT_CAP: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeSpec {
    pub sigma: f64,
    pub m_max: u32,
    /// Window □_level.
    pub level: u32,
    pub seed: u64,
    #[serde(default = "default_cap")]
    pub cap: f64,
}

fn default_cap() -> f64 {
    DEFAULT_CAP
}

impl CascadeSpec {
    pub fn new(sigma: f64, level: u32, seed: u64) -> Self {
        Self { sigma, m_max: 2 * level + 4, level, seed, cap: DEFAULT_CAP }
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(HomError::invalid("cascade sigma must be finite and nonnegative"));
        }
        if self.m_max == 0 {
            return Err(HomError::invalid("m_max must be at least 1"));
        }
        if self.m_max > 38 {
            return Err(HomError::invalid("m_max above 38 overflows the cube lattice"));
        }
        Ok(())
    }
}

/// One layer W_j, stored once per 3^j-cube meeting the window.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeLayer {
    pub level: u32,
    /// Lattice index of the first cube on every axis.
    pub first: Vec<i64>,
    pub per_axis: Vec<usize>,
    pub values: Vec<f64>,
}

impl CascadeLayer {
    pub fn value_at(&self, x: &[i64]) -> f64 {
        let step = pow3(self.level);
        let mut flat = 0usize;
        for a in (0..x.len()).rev() {
            let c = (x[a].div_euclid(step) - self.first[a]) as usize;
            flat = flat * self.per_axis[a] + c;
        }
        self.values[flat]
    }
}

/// Draws W_j on every 3^j-cube (anchored at the lattice origin) meeting the
/// window [origin, origin + side)^d.
pub fn gen_cascade_layer<R: Rng + ?Sized>(
    j: u32,
    origin: &[i64],
    side: usize,
    sigma: f64,
    rng: &mut R,
) -> Result<CascadeLayer> {
    if j == 0 {
        return Err(HomError::invalid("cascade layers start at j = 1"));
    }
    if !(sigma >= 0.0) {
        return Err(HomError::invalid("sigma must be nonnegative"));
    }
    let step = pow3(j);
    let first: Vec<i64> = origin.iter().map(|o| o.div_euclid(step)).collect();
    let per_axis: Vec<usize> = origin
        .iter()
        .zip(&first)
        .map(|(o, f)| ((o + side as i64 - 1).div_euclid(step) - f + 1) as usize)
        .collect();
    let total: usize = per_axis.iter().product();
    let normal = Normal::new(0.0, sigma).map_err(|e| HomError::invalid(e.to_string()))?;
    let shift = 0.5 * sigma * sigma;
    let values = (0..total).map(|_| (normal.sample(rng) - shift).exp()).collect();
    Ok(CascadeLayer { level: j, first, per_axis, values })
}

/// Runs the cascade on a window, calling `visit(m, products)` with ∏_{j≤m} W_j
/// on every cell after layer m.
pub fn cascade_products<R: Rng + ?Sized>(
    dim: usize,
    origin: &[i64],
    side: usize,
    spec: &CascadeSpec,
    rng: &mut R,
    mut visit: impl FnMut(u32, &[f64]),
) -> Result<()> {
    spec.validate()?;
    let cells: Vec<Vec<i64>> = grid_points(dim, side)
        .map(|idx| idx.iter().zip(origin).map(|(i, o)| *i as i64 + o).collect())
        .collect();
    let mut prod = vec![1.0; cells.len()];
    for m in 1..=spec.m_max {
        let layer = gen_cascade_layer(m, origin, side, spec.sigma, rng)?;
        for (p, x) in prod.iter_mut().zip(&cells) {
            *p *= layer.value_at(x);
        }
        if let Some(bad) = prod.iter().find(|p| !(**p <= spec.cap)) {
            return Err(HomError::Overflow(format!(
                "layer {m}: product {bad:e} exceeds cap {:e}",
                spec.cap
            )));
        }
        visit(m, &prod);
    }
    Ok(())
}

pub(crate) fn cascade_values<R: Rng + ?Sized>(
    dim: usize,
    origin: &[i64],
    side: usize,
    spec: &CascadeSpec,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut f = vec![0.0; side.pow(dim as u32)];
    cascade_products(dim, origin, side, spec, rng, |m, prod| {
        let w = 1.0 / (m as f64).powi(3);
        for (fi, p) in f.iter_mut().zip(prod) {
            *fi += w * p;
        }
    })?;
    Ok(f)
}

/// The cascade f on □_level for sample `index` of the spec's seed.
pub fn gen_cascade_field(dim: usize, spec: &CascadeSpec, index: u64) -> Result<CellArray> {
    let side = pow3(spec.level) as usize;
    let mut rng = sample_rng(spec.seed, index);
    let f = cascade_values(dim, &vec![0; dim], side, spec, &mut rng)?;
    Ok(CellArray { dim, side, ncomp: 1, data: f })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    #[test]
    fn zero_sigma_gives_unit_layers_and_zeta_partial_sum() {
        let mut rng = sample_rng(1, 0);
        let layer = gen_cascade_layer(1, &[0, 0], 9, 0.0, &mut rng).unwrap();
        assert!(layer.values.iter().all(|&v| v == 1.0));
        let spec = CascadeSpec { sigma: 0.0, m_max: 3, level: 1, seed: 0, cap: DEFAULT_CAP };
        let f = gen_cascade_field(2, &spec, 0).unwrap();
        let expected = 1.0 + 1.0 / 8.0 + 1.0 / 27.0;
        assert!(f.data.iter().all(|v| (v - expected).abs() < 1e-15));
        assert!((expected - 1.16204).abs() < 1e-5);
    }

    #[test]
    fn layer_is_constant_on_its_cubes() {
        let mut rng = sample_rng(2, 0);
        let layer = gen_cascade_layer(1, &[-1, -1], 11, 0.4, &mut rng).unwrap();
        assert_eq!(layer.per_axis, vec![5, 5]);
        assert_eq!(layer.value_at(&[0, 0]), layer.value_at(&[2, 2]));
        assert_eq!(layer.value_at(&[-1, 0]), layer.value_at(&[-3, 1]));
        assert!(layer.values.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn layer_mean_is_one() {
        let mut rng = sample_rng(3, 0);
        let mut vals = Vec::new();
        while vals.len() < 100_000 {
            let layer = gen_cascade_layer(1, &[0, 0], 243, 0.5, &mut rng).unwrap();
            vals.extend(layer.values);
        }
        let (m, se) = stats::mean_se(&vals);
        assert!((m - 1.0).abs() < 4.0 * se, "mean {m} se {se}");
        let sq: Vec<f64> = vals.iter().map(|v| v * v).collect();
        let (m2, se2) = stats::mean_se(&sq);
        assert!((m2 - 0.25f64.exp()).abs() < 4.0 * se2, "second moment {m2}");
    }

    #[test]
    fn overflow_guard_fires() {
        let spec = CascadeSpec { sigma: 1.0, m_max: 30, level: 2, seed: 0, cap: 1.2 };
        assert!(matches!(gen_cascade_field(2, &spec, 0), Err(HomError::Overflow(_))));
    }

    #[test]
    fn cascade_field_is_positive_and_deterministic() {
        let spec = CascadeSpec::new(0.3, 2, 8);
        let a = gen_cascade_field(2, &spec, 1).unwrap();
        let b = gen_cascade_field(2, &spec, 1).unwrap();
        assert_eq!(a, b);
        assert!(a.data.iter().all(|&v| v > 0.0));
    }
}

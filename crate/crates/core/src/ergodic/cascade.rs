//! Statistical checks of the multiplicative cascade: layer moments, growth of
//! the L^p norms of the partial products, and the B-norm of f across scales.

use serde::{Deserialize, Serialize};

use crate::error::{HomError, Result};
use crate::fields::cascade::{cascade_products, gen_cascade_field, gen_cascade_layer, CascadeSpec};
use crate::fields::sample_rng;
use crate::norms::{bnorm, TailMode};
use crate::stats;
use crate::triadic::{pow3, TriadicCube};

/// Gate for the moment and trend checks, in standard errors.
pub const MOMENT_GATE: f64 = 4.0;

/// E[W^p] = exp(p(p−1)σ²/2).
pub fn lognormal_moment(sigma: f64, p: f64) -> f64 {
    (0.5 * p * (p - 1.0) * sigma * sigma).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub sigma: f64,
    pub p: f64,
    pub count: usize,
    pub mean: f64,
    pub se: f64,
    pub expected: f64,
    /// |mean − expected| / se.
    pub z: f64,
    pub passed: bool,
}

/// Empirical E[W_1^p] over at least `count` independent layer cubes.
pub fn layer_moment(sigma: f64, p: f64, count: usize, seed: u64) -> Result<MomentCheck> {
    if count < 2 {
        return Err(HomError::invalid("need at least two layer values"));
    }
    let mut rng = sample_rng(seed, 0);
    let mut values = Vec::with_capacity(count);
    // One layer-1 cube per 3 cells along each axis of a 729-cell window.
    while values.len() < count {
        let layer = gen_cascade_layer(1, &[0, 0], 729, sigma, &mut rng)?;
        values.extend(layer.values.iter().map(|w| w.powf(p)));
    }
    values.truncate(count);
    let (mean, se) = stats::mean_se(&values);
    let expected = lognormal_moment(sigma, p);
    let z = if se > 0.0 { (mean - expected).abs() / se } else if mean == expected { 0.0 } else { f64::INFINITY };
    Ok(MomentCheck { sigma, p, count, mean, se, expected, z, passed: z <= MOMENT_GATE })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeCheck {
    pub sigma: f64,
    pub p: f64,
    pub samples: usize,
    pub m: Vec<u32>,
    /// log of the sample mean of ⨍|f_m|^p.
    pub log_moment: Vec<f64>,
    pub slope: f64,
    pub expected_slope: f64,
    pub relative_error: f64,
    pub passed: bool,
}

/// Regression of log E[‖f_m‖^p_{L̲^p}] on m = 1..=m_max; the slope should be p(p−1)σ²/2.
pub fn lp_growth(sigma: f64, p: f64, dim: usize, level: u32, m_max: u32, samples: usize, seed: u64) -> Result<SlopeCheck> {
    if samples < 2 || m_max < 2 {
        return Err(HomError::invalid("need at least two samples and two layers"));
    }
    let spec = CascadeSpec { sigma, m_max, level, seed, cap: f64::MAX };
    let side = pow3(level) as usize;
    let mut sums = vec![stats::CompensatedSum::default(); m_max as usize];
    for i in 0..samples {
        let mut rng = sample_rng(seed, i as u64);
        cascade_products(dim, &vec![0; dim], side, &spec, &mut rng, |m, prod| {
            let avg = prod.iter().map(|v| v.powf(p)).sum::<f64>() / prod.len() as f64;
            sums[m as usize - 1].add(avg);
        })?;
    }
    let m: Vec<u32> = (1..=m_max).collect();
    let log_moment: Vec<f64> = sums.iter().map(|s| (s.value() / samples as f64).ln()).collect();
    let xs: Vec<f64> = m.iter().map(|&v| v as f64).collect();
    let slope = stats::ols(&xs, &log_moment).slope;
    let expected_slope = 0.5 * p * (p - 1.0) * sigma * sigma;
    let relative_error = if expected_slope == 0.0 {
        slope.abs()
    } else {
        (slope - expected_slope).abs() / expected_slope.abs()
    };
    Ok(SlopeCheck {
        sigma,
        p,
        samples,
        m,
        log_moment,
        slope,
        expected_slope,
        relative_error,
        passed: relative_error <= 0.1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnormTrend {
    pub sigma: f64,
    pub t: f64,
    pub levels: Vec<u32>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub mann_kendall: i64,
    /// Mann–Kendall S positive and the last mean above the first by more than the gate.
    pub increasing: bool,
    /// Whether (σ, t) satisfies σ < √(2/d)·t.
    pub regular: bool,
}

/// Mean B-norm of the cascade f on □_n for each n in `levels`.
pub fn bnorm_trend(sigma: f64, t: f64, dim: usize, levels: &[u32], samples: usize, seed: u64) -> Result<BnormTrend> {
    if levels.len() < 2 || samples < 2 {
        return Err(HomError::invalid("need at least two levels and two samples"));
    }
    let mut mean = Vec::with_capacity(levels.len());
    let mut se = Vec::with_capacity(levels.len());
    for &n in levels {
        let spec = CascadeSpec { cap: f64::MAX, ..CascadeSpec::new(sigma, n, seed) };
        let domain = TriadicCube::domain(dim, n);
        let mut values = Vec::with_capacity(samples);
        for i in 0..samples {
            let f = gen_cascade_field(dim, &spec, i as u64)?;
            values.push(bnorm(&f, t, &domain, TailMode::TailCorrected)?);
        }
        let (m, s) = stats::mean_se(&values);
        mean.push(m);
        se.push(s);
    }
    let mann_kendall = stats::mann_kendall(&mean);
    let last = mean.len() - 1;
    let combined = (se[0] * se[0] + se[last] * se[last]).sqrt();
    let increasing = mann_kendall > 0 && mean[last] - mean[0] > MOMENT_GATE * combined;
    Ok(BnormTrend {
        sigma,
        t,
        levels: levels.to_vec(),
        mean,
        se,
        mann_kendall,
        increasing,
        regular: sigma < (2.0 / dim as f64).sqrt() * t,
    })
}

//! Monte Carlo estimates of Ā(□_n) = E[A(□_n)], the derived homogenized
//! blocks, their bounds and the vanishing of the gap s̄ − s̄*.

pub mod cascade;

use serde::{Deserialize, Serialize};

use crate::coarsegrain::{coarse_grain_cube, mat_rows, CoarseGrainOptions, CoarseGrainedMatrices};
use crate::error::{HomError, Result};
use crate::fields::FieldSpec;
use crate::linalg::{self, Mat};
use crate::stats::{self, VectorAccumulator};
use crate::triadic::{Lattice, TriadicCube};

/// Number of standard errors allowed in the statistical gates.
pub const SE_GATE: f64 = 3.0;
/// Absolute slack added to every statistical gate to absorb round-off on noiseless inputs.
const FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ErgodicOptions {
    pub coarse_grain: CoarseGrainOptions,
    /// When set, each sample is a field on □_level and A(□_n) is averaged over
    /// its 3^{d(level−n)} disjoint translates of □_n.
    pub spatial_level: Option<u32>,
}

/// Per-sample record: the 4d² entries of A(□_n), then ⨍s⁻¹ and ⨍b (d² each).
#[derive(Debug, Clone, PartialEq)]
struct SampleRecord(Vec<f64>);

fn record_len(d: usize) -> usize {
    4 * d * d + 2 * d * d
}

/// Blocks derived from a mean record.
struct Derived {
    a: Mat,
    m: CoarseGrainedMatrices,
    harmonic: Mat,
    mean_b: Mat,
}

fn derive(d: usize, mean: &[f64]) -> Result<Derived> {
    let n2 = 2 * d;
    let a = linalg::symmetrize(&Mat::from_row_slice(n2, n2, &mean[..n2 * n2]));
    let off = n2 * n2;
    let mean_sinv = linalg::symmetrize(&Mat::from_row_slice(d, d, &mean[off..off + d * d]));
    let mean_b = linalg::symmetrize(&Mat::from_row_slice(d, d, &mean[off + d * d..off + 2 * d * d]));
    let harmonic = linalg::spd_inverse(&mean_sinv, 1e14)?;
    let m = CoarseGrainedMatrices::from_double_matrix(TriadicCube::domain(d, 0), a.clone())?;
    Ok(Derived { a, m, harmonic, mean_b })
}

/// Leave-one-out standard error of a smooth statistic of the sample mean.
fn jackknife_se(records: &[Vec<f64>], stat: impl Fn(&[f64]) -> Result<f64>) -> Result<f64> {
    let n = records.len();
    if n < 2 {
        return Ok(0.0);
    }
    let len = records[0].len();
    let mut total = vec![0.0; len];
    for r in records {
        for (t, v) in total.iter_mut().zip(r) {
            *t += v;
        }
    }
    let mut values = Vec::with_capacity(n);
    for r in records {
        let loo: Vec<f64> = total.iter().zip(r).map(|(t, v)| (t - v) / (n - 1) as f64).collect();
        values.push(stat(&loo)?);
    }
    let m = stats::mean(&values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    Ok(((n - 1) as f64 / n as f64 * ss).sqrt())
}

/// A Loewner comparison with its jackknife standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatedSlack {
    /// min_eig(upper − lower) at the sample mean.
    pub slack: f64,
    pub se: f64,
    pub passed: bool,
}

impl GatedSlack {
    fn new(slack: f64, se: f64) -> Self {
        Self { slack, se, passed: slack >= -(SE_GATE * se + FLOOR) }
    }
}

/// The ordering E[⨍s⁻¹]⁻¹ ≼ s̄* ≼ s̄ ≼ s̄ + k̄ᵀs̄*⁻¹k̄ ≼ E[⨍(s + kᵀs⁻¹k)].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub harmonic_to_s_star: GatedSlack,
    pub s_star_to_s: GatedSlack,
    pub s_to_b: GatedSlack,
    pub b_to_arithmetic: GatedSlack,
    /// −(s̄ − s̄*) ≼ ½(k̄ + k̄ᵀ).
    pub sym_k_lower: GatedSlack,
    /// ½(k̄ + k̄ᵀ) ≼ s̄ − s̄*.
    pub sym_k_upper: GatedSlack,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicEstimate {
    pub n: u32,
    pub samples: usize,
    pub spec: FieldSpec,
    #[serde(with = "mat_rows")]
    pub a_bar: Mat,
    /// Per-entry standard errors of `a_bar`.
    #[serde(with = "mat_rows")]
    pub a_se: Mat,
    #[serde(with = "mat_rows")]
    pub s_bar: Mat,
    #[serde(with = "mat_rows")]
    pub s_star_bar: Mat,
    #[serde(with = "mat_rows")]
    pub k_bar: Mat,
    /// s̄ − s̄*.
    #[serde(with = "mat_rows")]
    pub gap: Mat,
    pub gap_trace: f64,
    pub gap_trace_se: f64,
    /// ½(k̄ + k̄ᵀ).
    #[serde(with = "mat_rows")]
    pub sym_k: Mat,
    /// E[⨍s⁻¹]⁻¹.
    #[serde(with = "mat_rows")]
    pub harmonic_bound: Mat,
    /// E[⨍(s + kᵀs⁻¹k)].
    #[serde(with = "mat_rows")]
    pub arithmetic_bound: Mat,
    pub bounds: BoundsReport,
    /// Per-sample entries of A(□_n), row-major.
    #[serde(skip)]
    pub per_sample: Vec<Vec<f64>>,
    #[serde(skip)]
    records: Vec<Vec<f64>>,
}

fn sample_record(spec: &FieldSpec, n: u32, index: usize, opts: &ErgodicOptions) -> Result<SampleRecord> {
    let d = spec.dim;
    let level = opts.spatial_level.unwrap_or(n);
    if level < n {
        return Err(HomError::invalid(format!("spatial level {level} below scale {n}")));
    }
    let spec = FieldSpec { level, ..spec.clone() };
    let field = spec.generate_sample(index as u64)?;
    let domain = field.domain();
    let cubes = domain.subcubes(n, Lattice::Partition)?;
    let mut rec = vec![0.0; record_len(d)];
    for cube in &cubes {
        let m = coarse_grain_cube(&field, cube, &opts.coarse_grain)?;
        for (r, v) in rec.iter_mut().zip(m.a.transpose().iter()) {
            *r += v;
        }
    }
    let w = 1.0 / cubes.len() as f64;
    rec.iter_mut().take(4 * d * d).for_each(|x| *x *= w);
    let off = 4 * d * d;
    let vol = domain.volume();
    for cell in domain.cells() {
        let idx = field.index(&cell).expect("window covers domain");
        let s = field.s_matrix(idx);
        let k = field.k_matrix(idx);
        let sinv = s.clone().try_inverse().ok_or_else(|| HomError::NotSpd { cell: idx, reason: "singular".into() })?;
        let b = &s + k.transpose() * &sinv * &k;
        for (i, (x, y)) in sinv.transpose().iter().zip(b.transpose().iter()).enumerate() {
            rec[off + i] += x / vol;
            rec[off + d * d + i] += y / vol;
        }
    }
    Ok(SampleRecord(rec))
}

fn bounds_from(d: usize, records: &[Vec<f64>], mean: &[f64]) -> Result<BoundsReport> {
    type Stat = fn(&Derived) -> f64;
    let stats_list: [Stat; 6] = [
        |x| linalg::loewner_slack(&x.harmonic, &x.m.s_star),
        |x| linalg::loewner_slack(&x.m.s_star, &x.m.s),
        |x| linalg::loewner_slack(&x.m.s, &x.m.b),
        |x| linalg::loewner_slack(&x.m.b, &x.mean_b),
        |x| linalg::min_eigenvalue(&(linalg::symmetrize(&x.m.k) + (&x.m.s - &x.m.s_star))),
        |x| linalg::min_eigenvalue(&((&x.m.s - &x.m.s_star) - linalg::symmetrize(&x.m.k))),
    ];
    let at_mean = derive(d, mean)?;
    let mut gated = Vec::with_capacity(6);
    for f in stats_list {
        let se = jackknife_se(records, |r| Ok(f(&derive(d, r)?)))?;
        gated.push(GatedSlack::new(f(&at_mean), se));
    }
    let passed = gated.iter().all(|g| g.passed);
    Ok(BoundsReport {
        harmonic_to_s_star: gated[0],
        s_star_to_s: gated[1],
        s_to_b: gated[2],
        b_to_arithmetic: gated[3],
        sym_k_lower: gated[4],
        sym_k_upper: gated[5],
        passed,
    })
}

/// Estimates E[A(□_n)] from `samples` independent realizations of `spec`.
pub fn estimate_abar(spec: &FieldSpec, n: u32, samples: usize, opts: &ErgodicOptions) -> Result<ErgodicEstimate> {
    if samples < 2 {
        return Err(HomError::invalid("at least two samples are required"));
    }
    spec.validate()?;
    let d = spec.dim;
    let n2 = 2 * d;
    let mut acc = VectorAccumulator::new(record_len(d));
    let mut records = Vec::with_capacity(samples);
    for i in 0..samples {
        let rec = sample_record(spec, n, i, opts).map_err(|e| HomError::Sample { index: i, source: Box::new(e) })?;
        acc.push(&rec.0);
        records.push(rec.0);
    }
    let mean = acc.mean();
    let se = acc.standard_error();
    let x = derive(d, &mean)?;
    let gap = &x.m.s - &x.m.s_star;
    let gap_trace_se = jackknife_se(&records, |r| {
        let y = derive(d, r)?;
        Ok((&y.m.s - &y.m.s_star).trace())
    })?;
    let bounds = bounds_from(d, &records, &mean)?;
    Ok(ErgodicEstimate {
        n,
        samples,
        spec: FieldSpec { level: opts.spatial_level.unwrap_or(n), ..spec.clone() },
        a_se: Mat::from_row_slice(n2, n2, &se[..n2 * n2]),
        s_bar: x.m.s.clone(),
        s_star_bar: x.m.s_star.clone(),
        k_bar: x.m.k.clone(),
        gap_trace: gap.trace(),
        gap,
        gap_trace_se,
        sym_k: linalg::symmetrize(&x.m.k),
        harmonic_bound: x.harmonic,
        arithmetic_bound: x.mean_b,
        bounds,
        per_sample: records.iter().map(|r| r[..n2 * n2].to_vec()).collect(),
        a_bar: x.a,
        records,
    })
}

impl ErgodicEstimate {
    pub fn dim(&self) -> usize {
        self.s_bar.nrows()
    }

    /// [[s̄ + k̄ᵀs̄*⁻¹k̄, −k̄ᵀs̄*⁻¹], [−s̄*⁻¹k̄, s̄*⁻¹]] rebuilt from the derived blocks.
    pub fn reconstruct(&self) -> Result<Mat> {
        let sinv = linalg::inverse(&self.s_star_bar)?;
        let kt = self.k_bar.transpose();
        let b = &self.s_bar + &kt * &sinv * &self.k_bar;
        Ok(linalg::block2(&b, &(-(&kt * &sinv)), &(-(&sinv * &self.k_bar)), &sinv))
    }

    /// Matrices of the mean as a coarse-grained record.
    pub fn matrices(&self) -> Result<CoarseGrainedMatrices> {
        CoarseGrainedMatrices::from_double_matrix(TriadicCube::domain(self.dim(), self.n), self.a_bar.clone())
    }

    /// E[J(□_n, p, (s̄*−k̄)p)] + E[J*(□_n, p, (s̄*+k̄)p)] and p·(s̄ − s̄*)p for p = e_i.
    pub fn gap_identity(&self) -> Result<Vec<(f64, f64)>> {
        let d = self.dim();
        let m = self.matrices()?;
        let mut out = Vec::with_capacity(d);
        for i in 0..d {
            let mut p = nalgebra::DVector::zeros(d);
            p[i] = 1.0;
            let q: Vec<f64> = ((&self.s_star_bar - &self.k_bar) * &p).iter().copied().collect();
            let qs: Vec<f64> = ((&self.s_star_bar + &self.k_bar) * &p).iter().copied().collect();
            let pv: Vec<f64> = p.iter().copied().collect();
            let lhs = m.j(&pv, &q) + m.j_star(&pv, &qs);
            out.push((lhs, self.gap[(i, i)]));
        }
        Ok(out)
    }

    /// Largest |mean₁ − mean₂| / √(se₁² + se₂²) over the upper triangle of A when the
    /// samples are split into two halves.
    pub fn split_half_z(&self) -> f64 {
        let n2 = 2 * self.dim();
        let half = self.per_sample.len() / 2;
        let (a, b) = self.per_sample.split_at(half);
        let summarize = |rows: &[Vec<f64>]| {
            let mut acc = VectorAccumulator::new(n2 * n2);
            rows.iter().for_each(|r| acc.push(r));
            (acc.mean(), acc.standard_error())
        };
        let (ma, sa) = summarize(a);
        let (mb, sb) = summarize(b);
        let mut worst = 0.0f64;
        for i in 0..n2 {
            for j in i..n2 {
                let e = i * n2 + j;
                let diff = (ma[e] - mb[e]).abs();
                let se = (sa[e] * sa[e] + sb[e] * sb[e]).sqrt();
                let z = if se > 0.0 { diff / se } else if diff <= FLOOR { 0.0 } else { f64::INFINITY };
                worst = worst.max(z);
            }
        }
        worst
    }

    /// Jackknife standard error of min_eig(A_self − A_other) using both sample sets.
    fn min_eig_se(&self) -> Result<f64> {
        let n2 = 2 * self.dim();
        jackknife_se(&self.records, |r| Ok(linalg::min_eigenvalue(&Mat::from_row_slice(n2, n2, &r[..n2 * n2]))))
    }
}

/// Loewner monotonicity of consecutive estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    /// (n, n+1, min_eig(Ā_n − Ā_{n+1}), combined se).
    pub steps: Vec<(u32, u32, f64, f64)>,
    pub passed: bool,
}

/// Checks E[A(□_n)] ≽ E[A(□_{n+1})] within the statistical gate.
pub fn monotonicity(estimates: &[ErgodicEstimate]) -> Result<MonotonicityReport> {
    let mut steps = Vec::new();
    let mut passed = true;
    for w in estimates.windows(2) {
        let slack = linalg::loewner_slack(&w[1].a_bar, &w[0].a_bar);
        let se = (w[0].min_eig_se()?.powi(2) + w[1].min_eig_se()?.powi(2)).sqrt();
        passed &= slack >= -(SE_GATE * se + FLOOR);
        steps.push((w[0].n, w[1].n, slack, se));
    }
    Ok(MonotonicityReport { steps, passed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub scales: Vec<u32>,
    pub gap_traces: Vec<f64>,
    pub gap_trace_se: Vec<f64>,
    /// Spearman correlation between n and the gap trace.
    pub spearman: f64,
    /// Each consecutive gap trace is smaller than the previous one.
    pub strictly_decreasing: bool,
    /// The final trace is below the initial one by more than the combined gate.
    pub final_below_initial: bool,
    /// Largest |E[J] + E[J*] − p·(s̄ − s̄*)p| over scales and basis vectors.
    pub identity_defect: f64,
    /// Symmetric-part sandwich −(s̄ − s̄*) ≼ ½(k̄ + k̄ᵀ) ≼ s̄ − s̄* at every scale.
    pub sym_k_sandwich: bool,
    pub passed: bool,
}

/// Trend of s̄(□_n) − s̄*(□_n) over increasing n.
pub fn gap_diagnostic(estimates: &[ErgodicEstimate]) -> Result<GapReport> {
    if estimates.len() < 3 {
        return Err(HomError::invalid("the gap diagnostic needs at least three scales"));
    }
    let scales: Vec<u32> = estimates.iter().map(|e| e.n).collect();
    let traces: Vec<f64> = estimates.iter().map(|e| e.gap_trace).collect();
    let ses: Vec<f64> = estimates.iter().map(|e| e.gap_trace_se).collect();
    let xs: Vec<f64> = scales.iter().map(|&n| n as f64).collect();
    let constant = traces.iter().all(|t| t.abs() <= FLOOR);
    let spearman = if constant { 0.0 } else { stats::spearman(&xs, &traces) };
    let strictly_decreasing = traces.windows(2).all(|w| w[1] < w[0]);
    let last = traces.len() - 1;
    let combined = (ses[0] * ses[0] + ses[last] * ses[last]).sqrt();
    let final_below_initial = traces[0] - traces[last] > SE_GATE * combined;
    let mut identity_defect = 0.0f64;
    for e in estimates {
        for (lhs, rhs) in e.gap_identity()? {
            identity_defect = identity_defect.max((lhs - rhs).abs() / (1.0 + rhs.abs()));
        }
    }
    let sym_k_sandwich = estimates.iter().all(|e| e.bounds.sym_k_lower.passed && e.bounds.sym_k_upper.passed);
    let trend = if constant { true } else { strictly_decreasing && final_below_initial && spearman < 0.0 };
    Ok(GapReport {
        scales,
        gap_traces: traces,
        gap_trace_se: ses,
        spearman,
        strictly_decreasing,
        final_below_initial,
        identity_defect,
        sym_k_sandwich,
        passed: trend && identity_defect < 1e-10 && sym_k_sandwich,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogenizedMatrix {
    /// ā = s̄ + k̄.
    #[serde(with = "mat_rows")]
    pub a_bar: Mat,
    #[serde(with = "mat_rows")]
    pub s_bar: Mat,
    #[serde(with = "mat_rows")]
    pub k_bar: Mat,
    pub spec: FieldSpec,
    pub n: u32,
    pub samples: usize,
    pub seed: u64,
}

/// ā from the largest-scale estimate, after checking its bounds.
pub fn homogenized_matrix(estimates: &[ErgodicEstimate]) -> Result<HomogenizedMatrix> {
    let e = estimates
        .iter()
        .max_by_key(|e| e.n)
        .ok_or_else(|| HomError::invalid("no estimates supplied"))?;
    if !e.bounds.passed {
        return Err(HomError::check(format!("homogenized bounds violated at n = {}: {:?}", e.n, e.bounds)));
    }
    Ok(HomogenizedMatrix {
        a_bar: &e.s_bar + &e.k_bar,
        s_bar: e.s_bar.clone(),
        k_bar: e.k_bar.clone(),
        spec: e.spec.clone(),
        n: e.n,
        samples: e.samples,
        seed: e.spec.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::FieldKind;

    fn constant_spec(c: f64) -> FieldSpec {
        FieldSpec::new(2, 1, 0, FieldKind::Constant { matrix: vec![vec![c, 0.0], vec![0.0, c]] })
    }

    fn checkerboard(seed: u64) -> FieldSpec {
        FieldSpec::new(2, 1, seed, FieldKind::Checkerboard { low: 1.0, high: 4.0, prob: 0.5, periodic: false })
    }

    #[test]
    fn constant_field_is_deterministic() {
        let e = estimate_abar(&constant_spec(2.0), 1, 3, &ErgodicOptions::default()).unwrap();
        let mut want = Mat::zeros(4, 4);
        for i in 0..2 {
            want[(i, i)] = 2.0;
            want[(i + 2, i + 2)] = 0.5;
        }
        assert!((&e.a_bar - want).abs().max() < 1e-10);
        assert!(e.a_se.abs().max() < 1e-10);
        assert!(e.gap_trace.abs() < 1e-10);
        assert!(e.bounds.passed);
        let h = homogenized_matrix(&[e]).unwrap();
        assert!((h.a_bar - Mat::identity(2, 2) * 2.0).abs().max() < 1e-10);
    }

    #[test]
    fn mean_equals_average_of_samples() {
        let e = estimate_abar(&checkerboard(1), 1, 12, &ErgodicOptions::default()).unwrap();
        let mut naive = vec![0.0; 16];
        for r in &e.per_sample {
            for (a, v) in naive.iter_mut().zip(r) {
                *a += v / 12.0;
            }
        }
        let got: Vec<f64> = e.a_bar.transpose().iter().copied().collect();
        for (g, w) in got.iter().zip(&naive) {
            assert!((g - w).abs() < 1e-14);
        }
    }

    #[test]
    fn reconstruction_is_exact() {
        let spec = FieldSpec::new(2, 1, 5, FieldKind::SkewLognormal { sigma: 0.5, skew: 0.7 });
        let e = estimate_abar(&spec, 1, 10, &ErgodicOptions::default()).unwrap();
        assert!((e.reconstruct().unwrap() - &e.a_bar).abs().max() < 1e-12);
        for (lhs, rhs) in e.gap_identity().unwrap() {
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn checkerboard_bounds_hold() {
        let e = estimate_abar(&checkerboard(2), 2, 20, &ErgodicOptions::default()).unwrap();
        assert!(e.bounds.passed, "{:?}", e.bounds);
        let ev = linalg::sym_eigenvalues(&e.s_bar);
        assert!(ev[0] > 1.6 - 0.05 && ev[1] < 2.5 + 0.05);
    }

    #[test]
    fn spatial_mode_averages_translates() {
        let opts = ErgodicOptions { spatial_level: Some(2), ..Default::default() };
        let e = estimate_abar(&checkerboard(3), 1, 2, &opts).unwrap();
        let field = FieldSpec { level: 2, ..checkerboard(3) }.generate_sample(0).unwrap();
        let mut avg = Mat::zeros(4, 4);
        for cube in field.domain().subcubes(1, Lattice::Partition).unwrap() {
            avg += coarse_grain_cube(&field, &cube, &CoarseGrainOptions::default()).unwrap().a / 9.0;
        }
        let first = Mat::from_row_slice(4, 4, &e.per_sample[0]);
        assert!((first - avg).abs().max() < 1e-12);
    }

    #[test]
    fn gap_diagnostic_requires_three_scales() {
        let e = estimate_abar(&constant_spec(1.0), 1, 2, &ErgodicOptions::default()).unwrap();
        assert!(gap_diagnostic(&[e.clone(), e]).is_err());
    }

    #[test]
    fn jackknife_of_mean_is_standard_error() {
        let recs: Vec<Vec<f64>> = (0..10).map(|i| vec![(i * i) as f64]).collect();
        let se = jackknife_se(&recs, |r| Ok(r[0])).unwrap();
        let (_, want) = stats::mean_se(&recs.iter().map(|r| r[0]).collect::<Vec<_>>());
        assert!((se - want).abs() < 1e-12);
    }
}

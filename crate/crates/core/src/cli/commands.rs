use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use super::config::{CachePolicy, ExperimentConfig, Expectation};
use super::{Command, Common, FieldInput, Outcome};
use crate::coarsegrain::{self, hierarchy_sweep, CoarseGrainOptions, HierarchyCache};
use crate::error::{HomError, Result};
use crate::ergodic::{self, cascade, ErgodicEstimate, ErgodicOptions};
use crate::fields::io::{read_field, write_field_tagged};
use crate::fields::{CoefficientField, FieldKind, FieldSpec};
use crate::homexp::{self, EnergyProblem, ErrorRecord, HomExperiment, TargetFunction};
use crate::linalg::{self, Mat};
use crate::norms::{self, EllipticityParams};
use crate::solver::SolverOptions;
use crate::triadic::CellArray;

/// Errors at or below this level count as an exact reproduction of the homogenized solution.
const EXACT_TOL: f64 = 1e-10;

pub(super) fn dispatch(command: Command) -> Result<Outcome> {
    match command {
        Command::GenField(c) => gen_field(&Run::new(&c, false)?),
        Command::Coarsegrain { common, input } => coarsegrain(&Run::new(&common, false)?, &input),
        Command::Ellipticity { common, input } => ellipticity(&Run::new(&common, false)?, &input),
        Command::Ergodic(c) => ergodic(&Run::new(&c, false)?),
        Command::Homogenize(c) => homogenize(&Run::new(&c, true)?),
        Command::CascadeVerify(c) => cascade_verify(&Run::new(&c, false)?),
        Command::Selftest { output_dir } => selftest(output_dir.unwrap_or_else(|| PathBuf::from("."))),
    }
}

/// A validated configuration plus its output location.
struct Run {
    cfg: ExperimentConfig,
    fingerprint: String,
    dir: PathBuf,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'a str,
    config_fingerprint: &'a str,
    config: &'a ExperimentConfig,
    report: &'a T,
}

#[derive(Serialize)]
struct Metadata<'a> {
    command: &'a str,
    config_fingerprint: &'a str,
    created_unix: u64,
    version: &'a str,
}

impl Run {
    fn new(common: &Common, homexp: bool) -> Result<Self> {
        let mut cfg = ExperimentConfig::load(&common.config, &common.overrides)?;
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        if let Some(dir) = &common.output_dir {
            cfg.output_dir = dir.clone();
        }
        cfg.validate(homexp)?;
        let dir = cfg.output_dir.clone();
        fs::create_dir_all(&dir)?;
        Ok(Self { fingerprint: cfg.fingerprint(), cfg, dir })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes `<name>.json` with the config echo and `<name>.meta.json` with the timestamp.
    fn write_json<T: Serialize>(&self, name: &str, command: &str, report: &T) -> Result<()> {
        let env = Envelope { command, config_fingerprint: &self.fingerprint, config: &self.cfg, report };
        write_json_file(&self.path(&format!("{name}.json")), &env)?;
        let created_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let meta = Metadata {
            command,
            config_fingerprint: &self.fingerprint,
            created_unix,
            version: env!("CARGO_PKG_VERSION"),
        };
        write_json_file(&self.path(&format!("{name}.meta.json")), &meta)
    }

    /// Writes `<name>.csv`; every row is prefixed with the config fingerprint.
    fn write_csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.path(&format!("{name}.csv")))?;
        let mut head = vec!["config_fingerprint"];
        head.extend_from_slice(header);
        w.write_record(&head)?;
        for row in rows {
            w.write_record(std::iter::once(self.fingerprint.as_str()).chain(row.iter().map(String::as_str)))?;
        }
        w.flush()?;
        Ok(())
    }

    fn options(&self) -> CoarseGrainOptions {
        self.cfg.coarse_grain_options()
    }

    fn load_field(&self, input: &FieldInput) -> Result<CoefficientField> {
        match &input.field {
            Some(path) => {
                let (field, _) = read_field(path)?;
                if field.dim() != self.cfg.dimension {
                    return Err(HomError::Config(format!(
                        "field file has dimension {}, configuration says {}",
                        field.dim(),
                        self.cfg.dimension
                    )));
                }
                Ok(field)
            }
            None => self.cfg.field_spec().generate(),
        }
    }

    /// Coarse-grains the field, honouring the cache policy.
    fn hierarchy(&self, field: &CoefficientField) -> Result<(HierarchyCache, Option<coarsegrain::SweepReport>)> {
        let opts = self.options();
        let path = self.path("cache.bin");
        let k_min = self.cfg.coarsegrain.k_min;
        if self.cfg.coarsegrain.cache == CachePolicy::Reuse {
            if let Ok(Some(cache)) = HierarchyCache::load_matching(&path, field, &opts) {
                if cache.k_min == k_min && cache.domain == field.domain() {
                    return Ok((cache, None));
                }
            }
        }
        let sweep = hierarchy_sweep(field, &field.domain(), k_min, &opts)?;
        if self.cfg.coarsegrain.cache != CachePolicy::Off {
            sweep.cache.save_tagged(&path, Some(&self.fingerprint))?;
        }
        Ok((sweep.cache, Some(sweep.report)))
    }
}

fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

fn outcome(passed: bool) -> Outcome {
    if passed {
        Outcome::Passed
    } else {
        Outcome::GateFailed
    }
}

fn matrix_rows(out: &mut Vec<Vec<String>>, prefix: &[String], name: &str, m: &Mat) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let mut row = prefix.to_vec();
            row.extend([name.to_string(), i.to_string(), j.to_string(), num(m[(i, j)])]);
            out.push(row);
        }
    }
}

fn gen_field(run: &Run) -> Result<Outcome> {
    let field = run.cfg.field_spec().generate()?;
    let path = run.path("field.bin");
    write_field_tagged(&path, &field, run.cfg.coarsegrain.resolution, Some(&run.fingerprint))?;
    println!("wrote {} ({} cells)", path.display(), field.cell_count());
    Ok(Outcome::Passed)
}

#[derive(Serialize)]
struct CoarsegrainReport {
    field_fingerprint: String,
    cache_reused: bool,
    cubes: usize,
    sweep: Option<coarsegrain::SweepReport>,
    top: coarsegrain::CoarseGrainedMatrices,
}

fn coarsegrain(run: &Run, input: &FieldInput) -> Result<Outcome> {
    let field = run.load_field(input)?;
    let (cache, sweep) = run.hierarchy(&field)?;
    let mut rows = Vec::new();
    for m in cache.iter() {
        let offset = m.cube.offset.iter().map(|o| o.to_string()).collect::<Vec<_>>().join(";");
        let prefix = [m.cube.level.to_string(), offset];
        for (name, mat) in [("s", &m.s), ("s_star", &m.s_star), ("k", &m.k), ("b", &m.b)] {
            matrix_rows(&mut rows, &prefix, name, mat);
        }
    }
    run.write_csv("coarsegrain", &["level", "offset", "block", "i", "j", "value"], &rows)?;
    let passed = sweep.as_ref().is_none_or(|s| s.passed);
    let report = CoarsegrainReport {
        field_fingerprint: field.fingerprint(),
        cache_reused: sweep.is_none(),
        cubes: cache.len(),
        sweep,
        top: cache.top()?.clone(),
    };
    run.write_json("coarsegrain", "coarsegrain", &report)?;
    Ok(outcome(passed))
}

#[derive(Serialize)]
struct EllipticityOutput {
    constants: norms::EllipticityReport,
    embedding: Option<norms::EmbeddingReport>,
}

fn ellipticity(run: &Run, input: &FieldInput) -> Result<Outcome> {
    let field = run.load_field(input)?;
    let (cache, _) = run.hierarchy(&field)?;
    let params: EllipticityParams = run.cfg.ellipticity_params();
    let constants = norms::ellipticity_constants(&cache, &field, &params)?;
    let d = field.dim() as f64;
    let embedding = if params.p > d / (2.0 * params.t) && params.q > d / (2.0 * params.s) {
        Some(norms::embedding_check(&cache, &field, params.p, params.q, params.s, params.t)?)
    } else {
        None
    };
    let c = &constants;
    let row = vec![
        c.n.to_string(),
        num(c.s),
        num(c.t),
        num(c.lambda_s),
        num(c.upper_lambda_t),
        num(c.besov_b),
        num(c.besov_sinv),
        num(c.lp_b),
        num(c.lq_sinv),
    ];
    run.write_csv(
        "ellipticity",
        &["n", "s", "t", "lambda_s", "Lambda_t", "besov_b", "besov_sinv", "lp_b", "lq_sinv"],
        &[row],
    )?;
    let passed = embedding.as_ref().is_none_or(|e| e.passed);
    run.write_json("ellipticity", "ellipticity", &EllipticityOutput { constants, embedding })?;
    Ok(outcome(passed))
}

#[derive(Serialize)]
struct ErgodicOutput {
    estimates: Vec<ErgodicEstimate>,
    monotonicity: ergodic::MonotonicityReport,
    gap: Option<ergodic::GapReport>,
    homogenized: Option<ergodic::HomogenizedMatrix>,
    homogenized_error: Option<String>,
    passed: bool,
}

fn ergodic_estimates(cfg: &ExperimentConfig) -> Result<Vec<ErgodicEstimate>> {
    let spec = FieldSpec { level: 0, ..cfg.field_spec() };
    let opts = ErgodicOptions { coarse_grain: cfg.coarse_grain_options(), spatial_level: cfg.ergodic.spatial_level };
    cfg.ergodic.scales.iter().map(|&n| ergodic::estimate_abar(&spec, n, cfg.ergodic.samples, &opts)).collect()
}

fn ergodic(run: &Run) -> Result<Outcome> {
    let estimates = ergodic_estimates(&run.cfg)?;
    let mut rows = Vec::new();
    for e in &estimates {
        let prefix = [e.n.to_string(), e.samples.to_string()];
        for (name, m) in [
            ("a_bar", &e.a_bar),
            ("a_se", &e.a_se),
            ("s_bar", &e.s_bar),
            ("s_star_bar", &e.s_star_bar),
            ("k_bar", &e.k_bar),
        ] {
            matrix_rows(&mut rows, &prefix, name, m);
        }
    }
    run.write_csv("ergodic", &["n", "samples", "quantity", "i", "j", "value"], &rows)?;
    let monotonicity = ergodic::monotonicity(&estimates)?;
    let gap = if estimates.len() >= 3 { Some(ergodic::gap_diagnostic(&estimates)?) } else { None };
    let (homogenized, homogenized_error) = match ergodic::homogenized_matrix(&estimates) {
        Ok(h) => (Some(h), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let passed = monotonicity.passed
        && gap.as_ref().is_none_or(|g| g.passed)
        && homogenized.is_some()
        && estimates.iter().all(|e| e.bounds.passed);
    let out = ErgodicOutput { estimates, monotonicity, gap, homogenized, homogenized_error, passed };
    run.write_json("ergodic", "ergodic", &out)?;
    Ok(outcome(passed))
}

#[derive(Serialize)]
struct HomogenizeOutput {
    #[serde(with = "crate::coarsegrain::mat_rows")]
    a_bar: Mat,
    a_bar_source: &'static str,
    trend: homexp::TrendSummary,
    energy: Option<EnergyOutput>,
    passed: bool,
}

#[derive(Serialize)]
struct EnergyOutput {
    dirichlet: Vec<homexp::EnergyReport>,
    neumann: Vec<homexp::EnergyReport>,
    dirichlet_spread: f64,
    neumann_spread: f64,
}

fn homogenize(run: &Run) -> Result<Outcome> {
    let cfg = &run.cfg;
    let h = &cfg.homexp;
    let (a_bar, source) = match &h.a_bar {
        Some(rows) => (linalg::from_rows(rows).map_err(|e| HomError::Config(format!("homexp.a_bar: {e}")))?, "config"),
        None => (ergodic::homogenized_matrix(&ergodic_estimates(cfg)?)?.a_bar, "ergodic"),
    };
    let mut exp = HomExperiment::new(cfg.field_spec(), a_bar.clone(), h.target.clone(), h.alpha, h.n_min, h.n_max)
        .map_err(|e| HomError::Config(e.to_string()))?;
    exp.l = h.l;
    exp.resolution = cfg.coarsegrain.resolution;
    exp.solver = cfg.solver_options();
    let seeds: Vec<u64> = (0..h.seeds).map(|i| cfg.seed.wrapping_add(i)).collect();
    let mut records = run_seeds(&exp, &seeds, cfg.workers)?;
    records.sort_by_key(|r| (r.n, r.seed));
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                r.seed.to_string(),
                num(r.grad_err),
                num(r.flux_err),
                num(r.energy),
                num(r.e_alpha),
                num(r.g),
                num(r.h),
                num(r.rescale_defect),
                r.failure.clone().unwrap_or_default(),
            ]
        })
        .collect();
    run.write_csv(
        "homogenize",
        &["n", "seed", "grad_err", "flux_err", "energy", "e_alpha", "g", "h", "rescale_defect", "failure"],
        &rows,
    )?;
    let trend = homexp::trend_summary(&h.family, &records);
    let energy = if h.energy_samples > 0 { Some(energy_ensemble(cfg, &exp)?) } else { None };
    let exact = records.iter().all(|r| r.is_ok() && r.grad_err <= EXACT_TOL && r.flux_err <= EXACT_TOL);
    let passed = trend.passed || exact;
    let out = HomogenizeOutput { a_bar, a_bar_source: source, trend, energy, passed };
    run.write_json("homogenize", "homogenize", &out)?;
    Ok(outcome(passed))
}

/// Runs the seeds on `workers` threads; each thread takes every `workers`-th seed.
fn run_seeds(exp: &HomExperiment, seeds: &[u64], workers: usize) -> Result<Vec<ErrorRecord>> {
    let workers = workers.clamp(1, seeds.len().max(1));
    let results: Vec<Result<Vec<ErrorRecord>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    let mut out = Vec::new();
                    for &seed in seeds.iter().skip(w).step_by(workers) {
                        out.extend(homexp::run_dirichlet_experiment(exp, seed)?);
                    }
                    Ok(out)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut all = Vec::new();
    for r in results {
        all.extend(r?);
    }
    Ok(all)
}

fn energy_ensemble(cfg: &ExperimentConfig, exp: &HomExperiment) -> Result<EnergyOutput> {
    let n = exp.n_min;
    let s = cfg.norms.s;
    let opts = cfg.coarse_grain_options();
    let mut dirichlet = Vec::new();
    let mut neumann = Vec::new();
    for i in 0..cfg.homexp.energy_samples as u64 {
        let spec = FieldSpec { level: n, ..cfg.field_spec() };
        let field = spec.generate_sample(i)?;
        let domain = field.domain();
        let cache = hierarchy_sweep(&field, &domain, 0, &opts)?.cache;
        let f = coefficient_flux(&field, 0);
        let problem = EnergyProblem::Dirichlet { h: exp.h.clone(), f: None };
        dirichlet.push(homexp::energy_estimate_diagnostic(&field, &cache, &problem, s, exp.resolution, &exp.solver)?);
        let problem = EnergyProblem::Neumann { f };
        neumann.push(homexp::energy_estimate_diagnostic(&field, &cache, &problem, s, exp.resolution, &exp.solver)?);
    }
    Ok(EnergyOutput {
        dirichlet_spread: homexp::ratio_spread(&dirichlet),
        neumann_spread: homexp::ratio_spread(&neumann),
        dirichlet,
        neumann,
    })
}

/// The cell fluxes a·e_axis, an oscillating Neumann datum.
fn coefficient_flux(field: &CoefficientField, axis: usize) -> CellArray {
    let d = field.dim();
    CellArray::from_fn(d, field.side(), d, |idx| {
        let x: Vec<i64> = idx.iter().zip(field.origin()).map(|(&i, o)| i as i64 + o).collect();
        let a = field.a_cell(field.index(&x).expect("cell inside field"));
        (0..d).map(|r| a[r * d + axis]).collect()
    })
}

#[derive(Serialize)]
struct CascadeOutput {
    moments: Vec<cascade::MomentCheck>,
    slope: cascade::SlopeCheck,
    bnorm: Vec<BnormOutcome>,
    passed: bool,
}

#[derive(Serialize)]
struct BnormOutcome {
    expect: Expectation,
    trend: cascade::BnormTrend,
    passed: bool,
}

fn cascade_verify(run: &Run) -> Result<Outcome> {
    let c = &run.cfg.cascade;
    let seed = run.cfg.seed;
    let d = run.cfg.dimension;
    let mut moments = Vec::new();
    for (i, &sigma) in c.sigmas.iter().enumerate() {
        for (j, &p) in c.moments.iter().enumerate() {
            let stream = seed.wrapping_add((i * c.moments.len() + j) as u64);
            moments.push(cascade::layer_moment(sigma, p, c.moment_count, stream)?);
        }
    }
    let slope = cascade::lp_growth(c.slope_sigma, c.slope_p, d, c.slope_level, c.slope_m_max, c.slope_samples, seed)?;
    let mut bnorm = Vec::new();
    for case in &c.bnorm_cases {
        let trend = cascade::bnorm_trend(case.sigma, case.t, d, &c.bnorm_levels, c.bnorm_samples, seed)?;
        let passed = match case.expect {
            Expectation::Bounded => !trend.increasing,
            Expectation::Growing => trend.increasing,
        };
        bnorm.push(BnormOutcome { expect: case.expect, trend, passed });
    }
    let mut rows = Vec::new();
    for m in &moments {
        rows.push(vec!["moment".into(), num(m.sigma), num(m.p), num(m.mean), num(m.se), num(m.expected), m.passed.to_string()]);
    }
    rows.push(vec![
        "slope".into(),
        num(slope.sigma),
        num(slope.p),
        num(slope.slope),
        num(slope.relative_error),
        num(slope.expected_slope),
        slope.passed.to_string(),
    ]);
    run.write_csv("cascade", &["check", "sigma", "p", "value", "spread", "expected", "passed"], &rows)?;
    let passed = moments.iter().all(|m| m.passed) && slope.passed && bnorm.iter().all(|b| b.passed);
    run.write_json("cascade", "cascade-verify", &CascadeOutput { moments, slope, bnorm, passed })?;
    Ok(outcome(passed))
}

#[derive(Debug, Serialize)]
struct SelftestCheck {
    name: &'static str,
    value: f64,
    tolerance: f64,
    passed: bool,
}

impl SelftestCheck {
    fn new(name: &'static str, value: f64, tolerance: f64) -> Self {
        Self { name, value, tolerance, passed: value <= tolerance }
    }
}

#[derive(Serialize)]
struct SelftestOutput {
    checks: Vec<SelftestCheck>,
    passed: bool,
}

/// Exact constant-field identities and a zero-oscillation homogenization run.
fn selftest(dir: PathBuf) -> Result<Outcome> {
    let c = 2.0;
    let kind = FieldKind::Constant { matrix: vec![vec![c, 0.0], vec![0.0, c]] };
    let spec = FieldSpec::new(2, 2, 0, kind);
    let field = spec.generate()?;
    let opts = CoarseGrainOptions { unit_cell_shortcut: false, ..Default::default() };
    let sweep = hierarchy_sweep(&field, &field.domain(), 0, &opts)?;
    let top = sweep.cache.top()?;
    let expected = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![c, c, 1.0 / c, 1.0 / c]));
    let mut checks = vec![SelftestCheck::new("constant_field_double_matrix", (&top.a - &expected).amax(), 1e-10)];
    let p = [0.3, -1.2];
    let q = [0.7, 0.4];
    let j = c / 2.0 * (p[0] * p[0] + p[1] * p[1]) + (q[0] * q[0] + q[1] * q[1]) / (2.0 * c) - (p[0] * q[0] + p[1] * q[1]);
    checks.push(SelftestCheck::new("constant_field_j", (top.j(&p, &q) - j).abs(), 1e-10));
    let params = EllipticityParams::default();
    let ell = norms::ellipticity_constants(&sweep.cache, &field, &params)?;
    checks.push(SelftestCheck::new("constant_field_lambda_s", (ell.lambda_s - c).abs(), 1e-10));
    checks.push(SelftestCheck::new("constant_field_Lambda_t", (ell.upper_lambda_t - c).abs(), 1e-10));
    checks.push(SelftestCheck::new("hierarchy_inequalities", if sweep.report.passed { 0.0 } else { 1.0 }, 0.0));
    let a_bar = Mat::identity(2, 2) * c;
    let h = TargetFunction::Affine { p: vec![1.0, 0.5], c: 0.0 };
    let mut exp = HomExperiment::new(FieldSpec { level: 0, ..spec }, a_bar, h, 0.5, 1, 2)?;
    exp.solver = SolverOptions::default();
    let worst = homexp::run_dirichlet_experiment(&exp, 0)?
        .iter()
        .map(|r| if r.is_ok() { r.grad_err.max(r.flux_err) } else { f64::INFINITY })
        .fold(0.0, f64::max);
    checks.push(SelftestCheck::new("zero_oscillation_errors", worst, 1e-10));
    for ch in &checks {
        println!("{} {:<32} {:.3e} (tol {:.0e})", if ch.passed { "PASS" } else { "FAIL" }, ch.name, ch.value, ch.tolerance);
    }
    let passed = checks.iter().all(|c| c.passed);
    fs::create_dir_all(&dir)?;
    write_json_file(&dir.join("selftest.json"), &SelftestOutput { checks, passed })?;
    Ok(outcome(passed))
}

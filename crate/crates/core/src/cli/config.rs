//! The TOML experiment configuration.
//!
//! ```toml
//! dimension = 2
//! seed = 7
//! output_dir = "out"
//! workers = 1
//!
//! [field]
//! kind = "checkerboard"   # constant | checkerboard | laminate | lognormal_iso | cascade_iso | skew_lognormal
//! level = 2
//! low = 1.0
//! high = 4.0
//!
//! [coarsegrain]
//! resolution = 1
//! k_min = 0
//! cache = "reuse"         # reuse | rebuild | off
//!
//! [norms]
//! s = 0.3
//! t = 0.3
//!
//! [ergodic]
//! scales = [1, 2, 3]
//! samples = 20
//!
//! [homexp]
//! alpha = 0.5
//! n_min = 1
//! n_max = 3
//! seeds = 5
//! target = { family = "affine", p = [1.0, 0.0] }
//!
//! [cascade]
//! sigmas = [0.25, 0.5]
//! ```
//!
//! Every section and key except `[field]` has a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coarsegrain::CoarseGrainOptions;
use crate::error::{HomError, Result};
use crate::fields::{FieldKind, FieldSpec};
use crate::homexp::TargetFunction;
use crate::norms::{EllipticityParams, TailMode};
use crate::solver::SolverOptions;

/// Overrides the configured output directory; command-line flags still win.
pub const OUTPUT_DIR_ENV: &str = "HOMLAB_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub field: FieldSection,
    #[serde(default)]
    pub coarsegrain: CoarseGrainSection,
    #[serde(default)]
    pub norms: NormsSection,
    #[serde(default)]
    pub ergodic: ErgodicSection,
    #[serde(default)]
    pub homexp: HomexpSection,
    #[serde(default)]
    pub cascade: CascadeSection,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn default_dimension() -> usize {
    2
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("homlab-out")
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSection {
    pub level: u32,
    #[serde(default)]
    pub margin: u32,
    #[serde(flatten)]
    pub kind: FieldKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CachePolicy {
    /// Load a cache whose fingerprints match, otherwise rebuild and save.
    #[default]
    Reuse,
    /// Always rebuild and overwrite.
    Rebuild,
    /// Never read or write a cache file.
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoarseGrainSection {
    pub resolution: usize,
    pub k_min: u32,
    pub cache: CachePolicy,
    pub unit_cell_shortcut: bool,
}

impl Default for CoarseGrainSection {
    fn default() -> Self {
        Self { resolution: 1, k_min: 0, cache: CachePolicy::Reuse, unit_cell_shortcut: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormsSection {
    pub s: f64,
    pub t: f64,
    pub p: f64,
    pub q: f64,
    pub tail: TailMode,
    pub normalized: bool,
}

impl Default for NormsSection {
    fn default() -> Self {
        let d = EllipticityParams::default();
        Self { s: d.s, t: d.t, p: d.p, q: d.q, tail: d.tail, normalized: d.normalized }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErgodicSection {
    pub scales: Vec<u32>,
    pub samples: usize,
    pub spatial_level: Option<u32>,
}

impl Default for ErgodicSection {
    fn default() -> Self {
        Self { scales: vec![1, 2, 3], samples: 20, spatial_level: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HomexpSection {
    pub family: String,
    pub alpha: f64,
    pub n_min: u32,
    pub n_max: u32,
    pub seeds: u64,
    pub l: u32,
    pub target: TargetFunction,
    /// Analytic ā; when absent it is estimated with the `[ergodic]` settings.
    pub a_bar: Option<Vec<Vec<f64>>>,
    /// Samples of the energy-estimate diagnostic at scale `n_min`; 0 disables it.
    pub energy_samples: usize,
}

impl Default for HomexpSection {
    fn default() -> Self {
        Self {
            family: "experiment".into(),
            alpha: 0.5,
            n_min: 1,
            n_max: 3,
            seeds: 5,
            l: 2,
            target: TargetFunction::Affine { p: vec![1.0, 0.0], c: 0.0 },
            a_bar: None,
            energy_samples: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    Bounded,
    Growing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BnormCase {
    pub sigma: f64,
    pub t: f64,
    pub expect: Expectation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CascadeSection {
    pub sigmas: Vec<f64>,
    pub moments: Vec<f64>,
    pub moment_count: usize,
    pub slope_sigma: f64,
    pub slope_p: f64,
    pub slope_level: u32,
    pub slope_m_max: u32,
    pub slope_samples: usize,
    pub bnorm_cases: Vec<BnormCase>,
    pub bnorm_levels: Vec<u32>,
    pub bnorm_samples: usize,
}

impl Default for CascadeSection {
    fn default() -> Self {
        Self {
            sigmas: vec![0.25, 0.5],
            moments: vec![1.0, 2.0, 3.0],
            moment_count: 100_000,
            slope_sigma: 0.25,
            slope_p: 2.0,
            slope_level: 2,
            slope_m_max: 8,
            slope_samples: 4000,
            bnorm_cases: vec![
                BnormCase { sigma: 0.3, t: 0.9, expect: Expectation::Bounded },
                BnormCase { sigma: 0.9, t: 0.2, expect: Expectation::Growing },
            ],
            bnorm_levels: vec![2, 3, 4, 5],
            bnorm_samples: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub residual: f64,
    pub psd: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { residual: 1e-10, psd: 1e-10 }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| HomError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads `path`, then applies `OUTPUT_DIR_ENV` and the `key=value` overrides in order.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HomError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_with(&text, overrides)
    }

    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| HomError::Config(e.to_string()))?;
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            table.insert("output_dir".into(), toml::Value::String(dir));
        }
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| HomError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn field_spec(&self) -> FieldSpec {
        FieldSpec::new(self.dimension, self.field.level, self.seed, self.field.kind.clone())
            .with_margin(self.field.margin)
    }

    pub fn coarse_grain_options(&self) -> CoarseGrainOptions {
        CoarseGrainOptions {
            resolution: self.coarsegrain.resolution,
            psd_tol: self.tolerances.psd,
            unit_cell_shortcut: self.coarsegrain.unit_cell_shortcut,
        }
    }

    pub fn ellipticity_params(&self) -> EllipticityParams {
        let n = &self.norms;
        EllipticityParams { s: n.s, t: n.t, p: n.p, q: n.q, tail: n.tail, normalized: n.normalized }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions { residual_tol: self.tolerances.residual, ..Default::default() }
    }

    /// Checks the generic constraints; `homexp` adds α ∈ (max{s,t}, 1).
    pub fn validate(&self, homexp: bool) -> Result<()> {
        let bad = |m: String| Err(HomError::Config(m));
        if !(2..=3).contains(&self.dimension) {
            return bad(format!("dimension must be 2 or 3, got {}", self.dimension));
        }
        self.field_spec().validate().map_err(|e| HomError::Config(e.to_string()))?;
        let (s, t) = (self.norms.s, self.norms.t);
        if !(s > 0.0 && t > 0.0 && s + t < 1.0) {
            return bad(format!("need s, t > 0 and s + t < 1, got s = {s}, t = {t}"));
        }
        if self.coarsegrain.resolution == 0 || self.workers == 0 {
            return bad("resolution and workers must be at least 1".into());
        }
        if self.coarsegrain.k_min > self.field.level {
            return bad("coarsegrain.k_min exceeds the field level".into());
        }
        if self.ergodic.samples < 2 || self.ergodic.scales.is_empty() {
            return bad("ergodic needs at least two samples and one scale".into());
        }
        if homexp {
            let h = &self.homexp;
            if !(h.alpha > s.max(t) && h.alpha < 1.0) {
                return bad(format!("alpha must lie in (max(s, t), 1), got {}", h.alpha));
            }
            if h.n_min > h.n_max || h.seeds == 0 || h.l == 0 {
                return bad("homexp needs n_min ≤ n_max, seeds ≥ 1 and l ≥ 1".into());
            }
            h.target.validate(self.dimension).map_err(|e| HomError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON of every setting that affects results.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.workers = 1;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| HomError::Config(format!("override `{spec}` is not key=value")))?;
    let value: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        cur = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| HomError::Config(format!("`{part}` in `{key}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

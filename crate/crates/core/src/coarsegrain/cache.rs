//! Coarse-grained matrices over the whole partition hierarchy of a domain,
//! with subadditivity and sandwich checks and an on-disk format.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HomError, Result};
use crate::fields::CoefficientField;
use crate::linalg::{self, Mat};
use crate::triadic::{CellArray, Lattice, TriadicCube};

use super::verify::{loewner_chain, LOEWNER_TOL};
use super::{coarse_grain_cube, CoarseGrainOptions, CoarseGrainedMatrices};

const MAGIC: &[u8; 4] = b"HLCG";
const VERSION: u32 = 1;

/// Coarse-grained matrices of every partition cube of a domain at scales k_min..=n.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyCache {
    pub dim: usize,
    pub domain: TriadicCube,
    pub k_min: u32,
    pub options: CoarseGrainOptions,
    pub field_fingerprint: String,
    entries: BTreeMap<TriadicCube, CoarseGrainedMatrices>,
}

/// JSON manifest stored next to the binary cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub version: u32,
    pub dim: usize,
    pub domain: TriadicCube,
    pub k_min: u32,
    pub options: CoarseGrainOptions,
    pub field_fingerprint: String,
    pub config_fingerprint: String,
    pub entries: usize,
    pub payload_sha256: String,
    /// Fingerprint of the experiment configuration that produced the file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_fingerprint: Option<String>,
}

impl HierarchyCache {
    pub fn new(domain: TriadicCube, k_min: u32, options: CoarseGrainOptions, field_fingerprint: String) -> Self {
        Self { dim: domain.dim(), domain, k_min, options, field_fingerprint, entries: BTreeMap::new() }
    }

    /// SHA-256 of the options that determine the cached values.
    pub fn config_fingerprint(&self) -> String {
        let json = serde_json::to_string(&self.options).expect("options serialize");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn insert(&mut self, m: CoarseGrainedMatrices) {
        self.entries.insert(m.cube.clone(), m);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, cube: &TriadicCube) -> Result<&CoarseGrainedMatrices> {
        self.entries.get(cube).ok_or_else(|| HomError::MissingCube(cube.to_string()))
    }

    /// Matrices of the partition cubes at scale `k`, in partition order.
    pub fn scale(&self, k: u32) -> Result<Vec<&CoarseGrainedMatrices>> {
        if k < self.k_min || k > self.domain.level {
            return Err(HomError::MissingCube(format!("scale {k} outside {}..={}", self.k_min, self.domain.level)));
        }
        self.domain.subcubes(k, Lattice::Partition)?.iter().map(|c| self.get(c)).collect()
    }

    /// The top cube's matrices.
    pub fn top(&self) -> Result<&CoarseGrainedMatrices> {
        self.get(&self.domain)
    }

    pub fn iter(&self) -> impl Iterator<Item = &CoarseGrainedMatrices> {
        self.entries.values()
    }

    /// True when every partition cube at every scale is present.
    pub fn is_complete(&self) -> bool {
        (self.k_min..=self.domain.level).all(|k| self.scale(k).is_ok())
    }

    fn encode(&self) -> Vec<u8> {
        let d = self.dim;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for m in self.entries.values() {
            out.extend_from_slice(&m.cube.level.to_le_bytes());
            for z in &m.cube.offset {
                out.extend_from_slice(&z.to_le_bytes());
            }
            for mat in [&m.s, &m.s_star, &m.k, &m.b, &m.a] {
                for row in linalg::to_rows(mat) {
                    for v in row {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    fn decode(bytes: &[u8], manifest: &CacheManifest) -> Result<BTreeMap<TriadicCube, CoarseGrainedMatrices>> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(HomError::Format("not a coarse-grain cache file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(HomError::Format(format!("unsupported cache version {version}")));
        }
        let d = r.u32()? as usize;
        let count = r.u64()? as usize;
        if d != manifest.dim || count != manifest.entries {
            return Err(HomError::Format("cache header disagrees with manifest".into()));
        }
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let level = r.u32()?;
            let offset = (0..d).map(|_| r.i64()).collect::<Result<Vec<_>>>()?;
            let cube = TriadicCube::new(level, offset)?;
            let mut mat = |n: usize| -> Result<Mat> {
                let vals = (0..n * n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                Ok(Mat::from_row_slice(n, n, &vals))
            };
            let s = mat(d)?;
            let s_star = mat(d)?;
            let k = mat(d)?;
            let b = mat(d)?;
            let a = mat(2 * d)?;
            entries.insert(cube.clone(), CoarseGrainedMatrices { cube, s, s_star, k, b, a });
        }
        if r.pos != bytes.len() {
            return Err(HomError::Format("trailing bytes in cache file".into()));
        }
        Ok(entries)
    }

    pub fn manifest_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    /// Writes the binary cache to `path` and its manifest to `path.json`.
    pub fn save(&self, path: &Path) -> Result<CacheManifest> {
        self.save_tagged(path, None)
    }

    /// [`Self::save`] with the experiment configuration fingerprint recorded in the manifest.
    pub fn save_tagged(&self, path: &Path, run_fingerprint: Option<&str>) -> Result<CacheManifest> {
        let payload = self.encode();
        let manifest = CacheManifest {
            version: VERSION,
            dim: self.dim,
            domain: self.domain.clone(),
            k_min: self.k_min,
            options: self.options,
            field_fingerprint: self.field_fingerprint.clone(),
            config_fingerprint: self.config_fingerprint(),
            entries: self.entries.len(),
            payload_sha256: hex::encode(Sha256::digest(&payload)),
            run_fingerprint: run_fingerprint.map(str::to_string),
        };
        fs::write(path, &payload)?;
        fs::write(Self::manifest_path(path), serde_json::to_string_pretty(&manifest)?)?;
        Ok(manifest)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let manifest: CacheManifest = serde_json::from_str(&fs::read_to_string(Self::manifest_path(path))?)?;
        let payload = fs::read(path)?;
        if hex::encode(Sha256::digest(&payload)) != manifest.payload_sha256 {
            return Err(HomError::Format("cache payload checksum mismatch".into()));
        }
        let entries = Self::decode(&payload, &manifest)?;
        let cache = Self {
            dim: manifest.dim,
            domain: manifest.domain.clone(),
            k_min: manifest.k_min,
            options: manifest.options,
            field_fingerprint: manifest.field_fingerprint.clone(),
            entries,
        };
        if cache.config_fingerprint() != manifest.config_fingerprint {
            return Err(HomError::Format("cache config fingerprint mismatch".into()));
        }
        Ok(cache)
    }

    /// Loads `path` if it exists and matches `field` and `options`.
    pub fn load_matching(path: &Path, field: &CoefficientField, options: &CoarseGrainOptions) -> Result<Option<Self>> {
        if !path.exists() {
            return Ok(None);
        }
        let cache = Self::load(path)?;
        if cache.field_fingerprint == field.fingerprint() && cache.options == *options && cache.is_complete() {
            Ok(Some(cache))
        } else {
            Ok(None)
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(HomError::Format("truncated cache file".into()));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Aggregated outcome of the checks run during a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    /// Number of cubes per scale, index = scale.
    pub cubes_per_scale: Vec<usize>,
    /// min over parents of min_eig(avg A(children) − A(parent)), relative.
    pub subadditivity_min_slack: f64,
    /// min over cubes of min_eig(A(U) − (⨍A⁻¹)⁻¹), relative.
    pub sandwich_lower_min_slack: f64,
    /// min over cubes of min_eig(⨍A − A(U)), relative.
    pub sandwich_upper_min_slack: f64,
    /// min over cubes of the ordering chain slack.
    pub chain_min_slack: f64,
    pub failures: Vec<String>,
    pub passed: bool,
}

pub struct SweepResult {
    pub cache: HierarchyCache,
    pub report: SweepReport,
}

fn relative_slack(lower: &Mat, upper: &Mat) -> f64 {
    let scale = linalg::spectral_norm(upper).max(linalg::spectral_norm(lower)).max(f64::MIN_POSITIVE);
    linalg::loewner_slack(lower, upper) / scale
}

fn pyramid_matrix(levels: &[Vec<f64>], k: u32, i: usize, n: usize) -> Mat {
    Mat::from_row_slice(n, n, &levels[k as usize][i * n * n..(i + 1) * n * n])
}

/// Coarse-grains every partition cube of `domain` at scales k_min..=n and checks
/// subadditivity, the two-sided sandwich and the ordering chain on each.
///
/// Failed checks and failed solves are collected in the report; the sweep continues.
pub fn hierarchy_sweep(
    field: &CoefficientField,
    domain: &TriadicCube,
    k_min: u32,
    opts: &CoarseGrainOptions,
) -> Result<SweepResult> {
    field.require_cover(domain)?;
    if k_min > domain.level {
        return Err(HomError::invalid(format!("k_min {k_min} exceeds domain level {}", domain.level)));
    }
    let d = field.dim();
    let n2 = 2 * d;
    let mut cache = HierarchyCache::new(domain.clone(), k_min, *opts, field.fingerprint());
    let mut failures = Vec::new();

    let mut pw = CellArray::zeros(d, domain.side() as usize, n2 * n2);
    let mut pw_inv = pw.clone();
    for (i, cell) in domain.cells().enumerate() {
        let idx = field.index(&cell).expect("cover checked");
        let a = field.pointwise_double(idx)?;
        let ainv = linalg::symmetrize(&linalg::inverse(&a)?);
        for (dst, m) in [(&mut pw, &a), (&mut pw_inv, &ainv)] {
            for r in 0..n2 {
                for c in 0..n2 {
                    dst.data[i * n2 * n2 + r * n2 + c] = m[(r, c)];
                }
            }
        }
    }
    let local = TriadicCube::domain(d, domain.level);
    let mean_a = pw.pyramid(&local)?;
    let mean_inv = pw_inv.pyramid(&local)?;

    let mut cubes_per_scale = vec![0; domain.level as usize + 1];
    let (mut sub, mut lo, mut hi, mut chain) = (f64::INFINITY, f64::INFINITY, f64::INFINITY, f64::INFINITY);
    for k in k_min..=domain.level {
        let cubes = domain.subcubes(k, Lattice::Partition)?;
        cubes_per_scale[k as usize] = cubes.len();
        for (i, cube) in cubes.iter().enumerate() {
            let m = match coarse_grain_cube(field, cube, opts) {
                Ok(m) => m,
                Err(e) => {
                    failures.push(format!("{cube}: {e}"));
                    continue;
                }
            };
            let upper = pyramid_matrix(&mean_a.levels, k, i, n2);
            let lower = linalg::inverse(&pyramid_matrix(&mean_inv.levels, k, i, n2))?;
            let l = relative_slack(&lower, &m.a);
            let h = relative_slack(&m.a, &upper);
            if l < -LOEWNER_TOL || h < -LOEWNER_TOL {
                failures.push(format!("{cube}: sandwich slack {l:e} / {h:e}"));
            }
            lo = lo.min(l);
            hi = hi.min(h);
            match loewner_chain(field, &m) {
                Ok(r) => {
                    if !r.passed {
                        failures.push(format!("{cube}: ordering chain slack {:e}", r.min_slack));
                    }
                    chain = chain.min(r.min_slack);
                }
                Err(e) => failures.push(format!("{cube}: {e}")),
            }
            if k > k_min {
                let children = cube.children()?;
                let found: Vec<_> = children.iter().filter_map(|c| cache.get(c).ok()).collect();
                if found.len() == children.len() {
                    let avg = found.iter().fold(Mat::zeros(n2, n2), |acc, c| acc + &c.a) / found.len() as f64;
                    let s = relative_slack(&m.a, &avg);
                    if s < -LOEWNER_TOL {
                        failures.push(format!("{cube}: subadditivity slack {s:e}"));
                    }
                    sub = sub.min(s);
                }
            }
            cache.insert(m);
        }
    }
    let report = SweepReport {
        cubes_per_scale,
        subadditivity_min_slack: sub,
        sandwich_lower_min_slack: lo,
        sandwich_upper_min_slack: hi,
        chain_min_slack: chain,
        passed: failures.is_empty(),
        failures,
    };
    Ok(SweepResult { cache, report })
}

//! Flat binary field files with a JSON sidecar.
//!
//! Layout (little-endian): magic `HLFD`, u32 version, u32 d, u32 level,
//! u32 resolution, u32 kind code, u64 seed, u64 sample, u64 side, d × i64
//! origin, then per cell the d×d row-major s followed by the d×d k as f64.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HomError, Result};

use super::{CoefficientField, FieldSpec};

const MAGIC: &[u8; 4] = b"HLFD";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSidecar {
    pub format_version: u32,
    pub dim: usize,
    pub level: u32,
    pub resolution: usize,
    pub side: usize,
    pub origin: Vec<i64>,
    pub kind_code: u32,
    pub seed: u64,
    pub sample: u64,
    pub fingerprint: String,
    pub spec: Option<FieldSpec>,
    /// Fingerprint of the experiment configuration that produced the file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_fingerprint: Option<String>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

pub fn encode(field: &CoefficientField, resolution: usize) -> Vec<u8> {
    let d = field.dim();
    let mut buf = Vec::with_capacity(64 + field.raw_s().len() * 16);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    buf.extend_from_slice(&field.level().to_le_bytes());
    buf.extend_from_slice(&(resolution as u32).to_le_bytes());
    let code = field.spec.as_ref().map_or(0, |s| s.kind.code());
    buf.extend_from_slice(&code.to_le_bytes());
    let seed = field.spec.as_ref().map_or(0, |s| s.seed);
    buf.extend_from_slice(&seed.to_le_bytes());
    buf.extend_from_slice(&field.sample.to_le_bytes());
    buf.extend_from_slice(&(field.side() as u64).to_le_bytes());
    for o in field.origin() {
        buf.extend_from_slice(&o.to_le_bytes());
    }
    for c in 0..field.cell_count() {
        for v in field.s_slice(c).iter().chain(field.k_slice(c)) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let bytes = self
            .data
            .get(self.pos..end)
            .ok_or_else(|| HomError::Format("truncated field file".into()))?;
        self.pos = end;
        Ok(bytes.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

/// Decodes a field; returns it with the stored resolution.
pub fn decode(data: &[u8], spec: Option<FieldSpec>) -> Result<(CoefficientField, usize)> {
    let mut cur = Cursor { data, pos: 0 };
    if &cur.take::<4>()? != MAGIC {
        return Err(HomError::Format("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != FORMAT_VERSION {
        return Err(HomError::Format(format!("unsupported field format version {version}")));
    }
    let d = cur.u32()? as usize;
    if !(2..=3).contains(&d) {
        return Err(HomError::Format(format!("bad dimension {d}")));
    }
    let level = cur.u32()?;
    let resolution = cur.u32()? as usize;
    let _kind = cur.u32()?;
    let _seed = cur.u64()?;
    let sample = cur.u64()?;
    let side = cur.u64()? as usize;
    let origin = (0..d).map(|_| cur.i64()).collect::<Result<Vec<_>>>()?;
    let ncell = side
        .checked_pow(d as u32)
        .ok_or_else(|| HomError::Format("side overflow".into()))?;
    let dd = d * d;
    if data.len() != cur.pos + ncell * dd * 16 {
        return Err(HomError::Format("payload length does not match header".into()));
    }
    let mut s = Vec::with_capacity(ncell * dd);
    let mut k = Vec::with_capacity(ncell * dd);
    for _ in 0..ncell {
        for _ in 0..dd {
            s.push(cur.f64()?);
        }
        for _ in 0..dd {
            k.push(cur.f64()?);
        }
    }
    let field = CoefficientField::from_parts(d, level, origin, side, s, k, spec, sample)?;
    Ok((field, resolution))
}

/// Writes `path` and its `.json` sidecar.
pub fn write_field(path: &Path, field: &CoefficientField, resolution: usize) -> Result<()> {
    write_field_tagged(path, field, resolution, None)
}

/// [`write_field`] with the configuration fingerprint recorded in the sidecar.
pub fn write_field_tagged(
    path: &Path,
    field: &CoefficientField,
    resolution: usize,
    config_fingerprint: Option<&str>,
) -> Result<()> {
    let bytes = encode(field, resolution);
    fs::File::create(path)?.write_all(&bytes)?;
    let sidecar = FieldSidecar {
        format_version: FORMAT_VERSION,
        dim: field.dim(),
        level: field.level(),
        resolution,
        side: field.side(),
        origin: field.origin().to_vec(),
        kind_code: field.spec.as_ref().map_or(0, |s| s.kind.code()),
        seed: field.spec.as_ref().map_or(0, |s| s.seed),
        sample: field.sample,
        fingerprint: field.fingerprint(),
        spec: field.spec.clone(),
        config_fingerprint: config_fingerprint.map(str::to_string),
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)? + "\n")?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<(CoefficientField, usize)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let side = sidecar_path(path);
    let spec = if side.exists() {
        let sc: FieldSidecar = serde_json::from_str(&fs::read_to_string(side)?)?;
        sc.spec
    } else {
        None
    };
    let (field, r) = decode(&bytes, spec)?;
    Ok((field, r))
}

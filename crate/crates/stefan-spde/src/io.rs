//! On-disk formats: snapshot CSV, increment binary, hashes and the run manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::basis::Basis;
use crate::config::Config;
use crate::enthalpy::ValidationReport;
use crate::noise::{Ip1Report, Ip2Ip3Report};
use crate::sde::{is_snapshot, BlowUp, Trajectory};

pub const DW_MAGIC: [u8; 4] = *b"SSDW";
pub const DW_VERSION: u32 = 1;
const DW_HEADER: usize = 4 + 4 + 8 + 8;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
}

pub fn read(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(|source| IoError::File { path: path.into(), source })
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    std::fs::write(path, bytes).map_err(|source| IoError::File { path: path.into(), source })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Rows `time,k1[,k2],coefficient`, one per snapshot and mode.
pub fn snapshots_csv(basis: &Basis, traj: &Trajectory) -> String {
    let two = basis.dim() == 2;
    let mut s = String::from(if two { "time,mode_index_1,mode_index_2,coefficient\n" } else { "time,mode_index_1,coefficient\n" });
    for (t, x) in traj.times.iter().zip(&traj.states) {
        for (k, c) in basis.modes().iter().zip(x) {
            if two {
                let _ = writeln!(s, "{t},{},{},{c}", k[0], k[1]);
            } else {
                let _ = writeln!(s, "{t},{},{c}", k[0]);
            }
        }
    }
    s
}

/// Inverse of [`snapshots_csv`]: times and coefficient vectors.
pub fn parse_snapshots_csv(text: &str, basis: &Basis) -> Result<(Vec<f64>, Vec<Vec<f64>>), String> {
    let dim = basis.dim();
    let n = basis.len();
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, h)| h).unwrap_or("");
    if header.split(',').count() != dim + 2 {
        return Err(format!("header `{header}` does not match dimension {dim}"));
    }
    let (mut times, mut states) = (Vec::new(), Vec::new());
    let mut current: Vec<f64> = Vec::with_capacity(n);
    for (i, line) in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != dim + 2 {
            return Err(format!("line {}: expected {} fields", i + 1, dim + 2));
        }
        let parse = |v: &str| v.parse::<f64>().map_err(|e| format!("line {}: `{v}`: {e}", i + 1));
        let k = |v: &str| v.parse::<usize>().map_err(|e| format!("line {}: `{v}`: {e}", i + 1));
        let mode = if dim == 2 { [k(f[1])?, k(f[2])?] } else { [k(f[1])?, 0] };
        let j = current.len();
        if basis.modes()[j] != mode {
            return Err(format!("line {}: mode {mode:?} out of order", i + 1));
        }
        if j == 0 {
            times.push(parse(f[0])?);
        }
        current.push(parse(f[dim + 1])?);
        if current.len() == n {
            states.push(std::mem::replace(&mut current, Vec::with_capacity(n)));
        }
    }
    if !current.is_empty() {
        return Err("truncated final snapshot".into());
    }
    Ok((times, states))
}

/// Header (magic, version, K, steps) then `steps × K` little-endian f64.
pub fn encode_dw(noise_modes: usize, steps: u64, dw: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(DW_HEADER + 8 * dw.len());
    out.extend_from_slice(&DW_MAGIC);
    out.extend_from_slice(&DW_VERSION.to_le_bytes());
    out.extend_from_slice(&(noise_modes as u64).to_le_bytes());
    out.extend_from_slice(&steps.to_le_bytes());
    for v in dw {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Returns (K, steps, increments).
pub fn decode_dw(bytes: &[u8]) -> Result<(usize, u64, Vec<f64>), String> {
    if bytes.len() < DW_HEADER || bytes[..4] != DW_MAGIC {
        return Err("not an increment file".into());
    }
    let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != DW_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let k = u64_at(8) as usize;
    let steps = u64_at(16);
    let body = &bytes[DW_HEADER..];
    let expected = k.checked_mul(steps as usize).and_then(|c| c.checked_mul(8));
    if expected != Some(body.len()) {
        return Err(format!("payload of {} bytes does not hold {steps} × {k} increments", body.len()));
    }
    let dw = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((k, steps, dw))
}

/// Snapshot steps written by an integration of `steps` steps.
pub fn snapshot_steps(steps: u64, save_every: usize, blow_up: Option<&BlowUp>) -> Vec<u64> {
    let last = blow_up.map_or(steps, |b| b.last_finite_step);
    let mut out: Vec<u64> = (0..=last).filter(|&s| s == 0 || is_snapshot(s, save_every, steps)).collect();
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

impl FileEntry {
    pub fn new(name: &str, bytes: &[u8]) -> Self {
        Self { name: name.into(), bytes: bytes.len() as u64, sha256: sha256_hex(bytes) }
    }
}

/// Writes `bytes` under `dir` and records the file.
pub fn emit(dir: &Path, name: &str, bytes: &[u8], files: &mut Vec<FileEntry>) -> Result<(), IoError> {
    write(&dir.join(name), bytes)?;
    files.push(FileEntry::new(name, bytes));
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub path: u64,
    pub snapshots: String,
    pub increments: String,
    pub blow_up: Option<BlowUp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validators {
    pub enthalpy: ValidationReport,
    pub ip1: Ip1Report,
    pub ip2_ip3: Ip2Ip3Report,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub config: Config,
    pub seed: u64,
    pub dt: f64,
    pub dt_auto: bool,
    pub stable_dt: f64,
    pub steps: u64,
    pub lambda_max: f64,
    pub gamma: f64,
    pub energy_slack: f64,
    pub validators: Validators,
    pub wall_time_s: f64,
    pub paths: Vec<PathRecord>,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self, IoError> {
        let path = dir.join(MANIFEST);
        let bytes = read(&path)?;
        serde_json::from_slice(&bytes).map_err(|e| IoError::Format { path, message: e.to_string() })
    }

    pub fn file(&self, name: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.name == name)
    }

    /// Reads a listed file and checks its hash.
    pub fn read_checked(&self, dir: &Path, name: &str) -> Result<Vec<u8>, IoError> {
        let path = dir.join(name);
        let entry = self
            .file(name)
            .ok_or_else(|| IoError::Format { path: path.clone(), message: "not listed in the manifest".into() })?;
        let bytes = read(&path)?;
        let got = sha256_hex(&bytes);
        if got != entry.sha256 {
            return Err(IoError::Format { path, message: format!("hash mismatch: manifest {}, file {got}", entry.sha256) });
        }
        Ok(bytes)
    }
}

//! Command workflows: simulate, verify, converge and qreport.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::Basis;
use crate::config::{Config, ConfigError};
use crate::enthalpy::{EnthalpyModel, ValidationReport};
use crate::io::{
    decode_dw, emit, encode_dw, parse_snapshots_csv, snapshot_steps, snapshots_csv, FileEntry, IoError, PathRecord, RunManifest,
    Validators, MANIFEST,
};
use crate::noise::{Ip1Report, Ip2Ip3Report, NoiseModel};
use crate::sde::{Ip1Policy, Run, SimError, TimeStep, Trajectory};
use crate::verification::{
    audit_entries, galerkin_convergence, increment_moment_scaling, CheckEntry, ConvergenceStudy, PathAudit, VerificationReport, Verifier,
    ENERGY_SLACK,
};

pub const THREADS_ENV: &str = "STEFAN_SPDE_THREADS";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("configuration rejected: {0}")]
    Rejected(SimError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("replay data absent: {0}")]
    ReplayAbsent(String),
    #[error("{0}")]
    Runtime(String),
}

impl RunError {
    /// 1 configuration, 2 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Rejected(_) => 1,
            RunError::Io(_) | RunError::ReplayAbsent(_) | RunError::Runtime(_) => 2,
        }
    }
}

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_VERIFICATION: i32 = 3;

/// Thread count from the flag, then the environment; `None` means all cores.
pub fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>, String> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => {
            v.trim().parse::<usize>().map(Some).map_err(|e| format!("{THREADS_ENV}=`{v}`: {e}"))
        }
        _ => Ok(None),
    }
}

/// Runs `f` on a dedicated pool of `threads` workers.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, RunError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    let pool = b.build().map_err(|e| RunError::Runtime(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn create_dir(dir: &Path) -> Result<(), RunError> {
    std::fs::create_dir_all(dir).map_err(|source| IoError::File { path: dir.into(), source }.into())
}

fn reject(e: SimError) -> RunError {
    match e {
        SimError::BlowUp { .. } => RunError::Runtime(e.to_string()),
        e => RunError::Rejected(e),
    }
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(v).expect("serializable");
    bytes.push(b'\n');
    bytes
}

pub fn path_stem(path: u64) -> String {
    format!("path_{path:04}")
}

fn validators(validation: &ValidationReport, noise: &NoiseModel, policy: Ip1Policy) -> Validators {
    let mut notes: Vec<String> = noise.diagnostics().to_vec();
    let ip1 = noise.ip1();
    if !ip1.passed && policy == Ip1Policy::Warn {
        notes.push(format!(
            "(Ip1) series not converged (K→2K increment ratio {:.3e} ≥ {:.0e}); continuing under ip1_policy = warn",
            ip1.increment_ratio, ip1.threshold
        ));
    }
    Validators { enthalpy: validation.clone(), ip1: ip1.clone(), ip2_ip3: noise.ip2_ip3().clone(), notes }
}

/// Simulates the ensemble and writes snapshots, increments and the manifest.
pub fn run_simulate(config: &Config, out: &Path) -> Result<RunManifest, RunError> {
    let start = Instant::now();
    create_dir(out)?;
    let run = Run::new(config.sim.clone()).map_err(reject)?;
    let ensemble = run.simulate_ensemble();
    let basis = run.system.basis();
    let mut files = Vec::new();
    let mut paths = Vec::new();
    for t in &ensemble {
        let stem = path_stem(t.path);
        let (csv, dw) = (format!("{stem}.csv"), format!("{stem}.dw"));
        emit(out, &csv, snapshots_csv(basis, t).as_bytes(), &mut files)?;
        emit(out, &dw, &encode_dw(t.noise_modes, t.steps, &t.dw), &mut files)?;
        paths.push(PathRecord { path: t.path, snapshots: csv, increments: dw, blow_up: t.blow_up.clone() });
    }
    let manifest = RunManifest {
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        seed: config.sim.seed,
        dt: run.dt,
        dt_auto: config.sim.dt == TimeStep::Auto,
        stable_dt: run.system.stable_dt(),
        steps: run.steps,
        lambda_max: basis.lambda_max(),
        gamma: run.system.noise().gamma(),
        energy_slack: ENERGY_SLACK,
        validators: validators(&run.validation, run.system.noise(), config.sim.ip1_policy),
        wall_time_s: start.elapsed().as_secs_f64(),
        paths,
        files,
    };
    crate::io::write(&out.join(MANIFEST), &json(&manifest))?;
    Ok(manifest)
}

/// Loads a run directory back into trajectories, checking every hash.
pub fn load_run(dir: &Path) -> Result<(RunManifest, Run, Vec<Trajectory>), RunError> {
    if !dir.join(MANIFEST).exists() {
        return Err(RunError::ReplayAbsent(format!("no {MANIFEST} in {}", dir.display())));
    }
    let manifest = RunManifest::load(dir)?;
    if let Some(r) = manifest.paths.iter().find(|r| !dir.join(&r.increments).exists()) {
        return Err(RunError::ReplayAbsent(format!("{} missing for path {}", r.increments, r.path)));
    }
    let run = Run::new(manifest.config.sim.clone()).map_err(reject)?;
    if run.dt.to_bits() != manifest.dt.to_bits() || run.steps != manifest.steps {
        return Err(RunError::Runtime(format!(
            "rebuilt time step {} ({} steps) differs from manifest {} ({} steps)",
            run.dt, run.steps, manifest.dt, manifest.steps
        )));
    }
    let basis = run.system.basis();
    let k = run.system.noise_modes();
    let save_every = manifest.config.sim.save_every;
    let ensemble = manifest
        .paths
        .iter()
        .map(|r| {
            let dw_bytes = manifest.read_checked(dir, &r.increments)?;
            let csv = manifest.read_checked(dir, &r.snapshots)?;
            let bad = |name: &str, message: String| RunError::Io(IoError::Format { path: dir.join(name), message });
            let (kk, steps, dw) = decode_dw(&dw_bytes).map_err(|m| bad(&r.increments, m))?;
            if kk != k || steps != manifest.steps {
                return Err(bad(&r.increments, format!("header K = {kk}, steps = {steps}; expected {k}, {}", manifest.steps)));
            }
            let text = String::from_utf8(csv).map_err(|e| bad(&r.snapshots, e.to_string()))?;
            let (times, states) = parse_snapshots_csv(&text, basis).map_err(|m| bad(&r.snapshots, m))?;
            let steps_list = snapshot_steps(steps, save_every, r.blow_up.as_ref());
            if steps_list.len() != states.len() {
                return Err(bad(&r.snapshots, format!("{} snapshots, expected {}", states.len(), steps_list.len())));
            }
            Ok(Trajectory {
                path: r.path,
                seed: manifest.seed,
                dt: manifest.dt,
                steps,
                save_every,
                noise_modes: k,
                snapshot_steps: steps_list,
                times,
                states,
                dw,
                blow_up: r.blow_up.clone(),
            })
        })
        .collect::<Result<Vec<_>, RunError>>()?;
    Ok((manifest, run, ensemble))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOutput {
    pub report: VerificationReport,
    pub files: Vec<FileEntry>,
}

/// Audits a run directory; writes the report, table and energy ledgers into it.
pub fn run_verify(config: &Config, dir: &Path) -> Result<VerificationReport, RunError> {
    let (_, run, ensemble) = load_run(dir)?;
    let options = &config.verify;
    let verifier = Verifier::new(&run.system, options.clone());
    let audits: Vec<PathAudit> = ensemble
        .par_iter()
        .enumerate()
        .map(|(i, t)| verifier.audit(t, i < options.weak_form_paths))
        .collect::<Result<_, _>>()
        .map_err(|e| RunError::Runtime(format!("audit: {e}")))?;
    let mut report = VerificationReport::new();
    report.entries.extend(audit_entries(&verifier, &ensemble, &audits));
    report.entries.extend(increment_moment_scaling(run.system.basis(), &ensemble, &options.moments));
    let mut files = Vec::new();
    for a in &audits {
        emit(dir, &format!("ledger_{}.csv", path_stem(a.path)), a.ledger.to_csv().as_bytes(), &mut files)?;
    }
    emit(dir, "report.txt", report.table().as_bytes(), &mut files)?;
    let out = VerifyOutput { report, files };
    crate::io::write(&dir.join("report.json"), &json(&out))?;
    Ok(out.report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergeOutput {
    pub study: ConvergenceStudy,
    pub entry: CheckEntry,
    pub files: Vec<FileEntry>,
}

/// Runs the m / 2m sweep of `converge_modes` and writes D(n).
pub fn run_converge(config: &Config, out: &Path) -> Result<ConvergeOutput, RunError> {
    create_dir(out)?;
    let study = galerkin_convergence(&config.sim, &config.converge_modes, config.converge_path).map_err(reject)?;
    let label = if config.sim.noise.alpha0 > 0.0 && config.sim.basis.dim == 2 { "noisy" } else { "deterministic" };
    let entry = study.entry(label);
    let mut files = Vec::new();
    emit(out, "converge.csv", study.to_csv().as_bytes(), &mut files)?;
    let output = ConvergeOutput { study, entry, files };
    crate::io::write(&out.join("converge.json"), &json(&output))?;
    Ok(output)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QReport {
    pub gamma: f64,
    pub lambda_max: f64,
    pub ip1_policy: Ip1Policy,
    pub enthalpy: ValidationReport,
    pub ip1: Ip1Report,
    pub ip2_ip3: Ip2Ip3Report,
    pub notes: Vec<String>,
    /// Every assumption the policy requires holds.
    pub passed: bool,
    pub rejection: Option<String>,
    pub files: Vec<FileEntry>,
}

/// Q on the collocation grid: `x[,y],q11,q12,q22,min_eigenvalue`.
pub fn q_grid_csv(basis: &Basis, noise: &NoiseModel) -> String {
    let x = basis.nodes();
    let [q11, q12, q22] = noise.q();
    let lmin = noise.min_eigenvalue_field();
    let two = basis.dim() == 2;
    let mut s = String::from(if two { "x,y,q11,q12,q22,min_eigenvalue\n" } else { "x,q11,q12,q22,min_eigenvalue\n" });
    for ((i, j), v) in q11.indexed_iter() {
        if two {
            let _ = write!(s, "{},{},", x[i], x[j]);
        } else {
            let _ = write!(s, "{},", x[i]);
        }
        let _ = writeln!(s, "{v},{},{},{}", q12[[i, j]], q22[[i, j]], lmin[[i, j]]);
    }
    s
}

/// Writes the correction matrix field and the validator summaries.
pub fn run_qreport(config: &Config, out: &Path) -> Result<QReport, RunError> {
    create_dir(out)?;
    let sim = &config.sim;
    let model = EnthalpyModel::new(sim.physics).map_err(|e| RunError::Rejected(e.into()))?;
    let enthalpy = model.validate();
    let basis = Basis::new(sim.basis).map_err(|e| RunError::Rejected(e.into()))?;
    let noise = NoiseModel::new(&basis, sim.noise).map_err(|e| RunError::Rejected(e.into()))?;
    let rejection = noise.require_assumptions(sim.ip1_policy == Ip1Policy::Reject).err().map(|e| e.to_string());
    let v = validators(&enthalpy, &noise, sim.ip1_policy);
    let mut files = Vec::new();
    emit(out, "q_grid.csv", q_grid_csv(&basis, &noise).as_bytes(), &mut files)?;
    let report = QReport {
        gamma: noise.gamma(),
        lambda_max: basis.lambda_max(),
        ip1_policy: sim.ip1_policy,
        passed: rejection.is_none() && enthalpy.passed(),
        enthalpy: v.enthalpy,
        ip1: v.ip1,
        ip2_ip3: v.ip2_ip3,
        notes: v.notes,
        rejection,
        files,
    };
    crate::io::write(&out.join("q_summary.json"), &json(&report))?;
    Ok(report)
}

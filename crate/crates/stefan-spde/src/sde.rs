//! Finite-dimensional Galerkin SDE and its Euler–Maruyama integration.
//!
//! dX = ΔP_nΨ(X)dt + P_n div[P_n(Q∇g(γ̃⁻¹X))]dt + P_nF dt − Σ_k P_n(α_kσ_k·∇η(γ̃⁻¹X))dβ_k
//!
//! The composites Ψ(X), g(γ̃⁻¹X) and η(γ̃⁻¹X) are evaluated on the collocation
//! grid and replaced by their sine interpolants. Products with σ_k and ∇ are
//! then projected with exact trig integrals, so the discrete operators keep
//! the integration-by-parts identities of the continuous ones.

use std::collections::BTreeMap;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{sine_node, Basis, BasisError, BasisSpec, Mode};
use crate::enthalpy::{EnthalpyModel, ModelError, PhysicalParams, ValidationReport};
use crate::linalg::{matmul, matmul_bt_dot};
use crate::noise::{NoiseError, NoiseModel, NoiseSpec};
use crate::rng::NoiseStream;
use crate::smooth::step;
use crate::trig::{weighted_table, Factor};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("blow-up at step {step} (t = {time}): non-finite {what}")]
    BlowUp { step: u64, time: f64, what: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TimeStep {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialCondition {
    /// Amplitude on one multi-index.
    Mode { mode: Mode, amplitude: f64 },
    /// θ₀ = −θ_s on the left, θ_l on the right, smoothstep over `width`,
    /// mapped through γ̃ and tapered by sin(πξ₁)sin(πξ₂).
    Slab { theta_solid: f64, theta_liquid: f64, width: f64 },
    /// Explicit coefficients by multi-index.
    Coefficients(Vec<(Mode, f64)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Source {
    Zero,
    Coefficients(Vec<(Mode, f64)>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ip1Policy {
    Reject,
    Warn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub basis: BasisSpec,
    pub physics: PhysicalParams,
    pub noise: NoiseSpec,
    pub final_time: f64,
    pub dt: TimeStep,
    pub initial: InitialCondition,
    pub source: Source,
    pub seed: u64,
    pub paths: usize,
    pub save_every: usize,
    pub ip1_policy: Ip1Policy,
}

impl SimConfig {
    /// Builds and validates the system; rejects violated hypotheses.
    pub fn build(&self) -> Result<(GalerkinSystem, ValidationReport), SimError> {
        if !(self.final_time.is_finite() && self.final_time > 0.0) {
            return Err(SimError::Config(format!("T must be > 0, got {}", self.final_time)));
        }
        if self.paths == 0 {
            return Err(SimError::Config("paths must be ≥ 1".into()));
        }
        if self.save_every == 0 {
            return Err(SimError::Config("save_every must be ≥ 1".into()));
        }
        if let TimeStep::Fixed(dt) = self.dt {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(SimError::Config(format!("dt must be > 0, got {dt}")));
            }
        }
        let model = EnthalpyModel::new(self.physics)?;
        let report = model.validate();
        if !report.passed() {
            return Err(ModelError::HypothesisViolated(report.violations()).into());
        }
        let basis = Basis::new(self.basis)?;
        let noise = NoiseModel::new(&basis, self.noise)?;
        noise.require_assumptions(self.ip1_policy == Ip1Policy::Reject)?;
        let forcing = match &self.source {
            Source::Zero => vec![0.0; basis.len()],
            Source::Coefficients(list) => coefficients(&basis, list)?,
        };
        let system = GalerkinSystem::new(basis, model, noise, forcing);
        Ok((system, report))
    }

    pub fn steps(&self, dt: f64) -> u64 {
        ((self.final_time / dt) - 1e-9).ceil().max(1.0) as u64
    }

    pub fn resolve_dt(&self, system: &GalerkinSystem) -> f64 {
        match self.dt {
            TimeStep::Auto => system.stable_dt(),
            TimeStep::Fixed(dt) => dt,
        }
    }
}

fn coefficients(basis: &Basis, list: &[(Mode, f64)]) -> Result<Vec<f64>, SimError> {
    let mut c = vec![0.0; basis.len()];
    for &(k, v) in list {
        let j = basis
            .index_of(k)
            .ok_or_else(|| SimError::Config(format!("mode {k:?} is not a retained mode")))?;
        c[j] += v;
    }
    Ok(c)
}

/// Resolution of the fixed projection used for slab initial data.
pub const SLAB_RESOLUTION: usize = 512;

/// Initial coefficients P_n x.
pub fn initial_coefficients(basis: &Basis, model: &EnthalpyModel, ic: &InitialCondition) -> Result<Vec<f64>, SimError> {
    match ic {
        InitialCondition::Mode { mode, amplitude } => coefficients(basis, &[(*mode, *amplitude)]),
        InitialCondition::Coefficients(list) => coefficients(basis, list),
        InitialCondition::Slab { theta_solid, theta_liquid, width } => {
            if !(*width > 0.0) {
                return Err(SimError::Config(format!("slab width must be > 0, got {width}")));
            }
            let n = SLAB_RESOLUTION;
            let profile: Vec<f64> = (1..n)
                .map(|i| {
                    let x = i as f64 / n as f64;
                    let theta = -theta_solid + (theta_solid + theta_liquid) * step((x - 0.5) / width + 0.5);
                    model.gamma_tilde(theta) * (std::f64::consts::PI * x).sin()
                })
                .collect();
            let along = |a: usize| {
                let terms: Vec<f64> = (1..n).map(|i| profile[i - 1] * sine_node(a, i, n)).collect();
                crate::linalg::pairwise_sum(&terms) / n as f64
            };
            let across = if basis.dim() == 2 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
            Ok(basis
                .modes()
                .iter()
                .map(|k| if basis.dim() == 1 || k[1] == 1 { along(k[0]) * across } else { 0.0 })
                .collect())
        }
    }
}

/// Exact projection tables for one 1D factor of σ_k.
#[derive(Debug, Clone)]
struct FactorTables {
    noise: [Array2<f64>; 2],
    corr: [Array2<f64>; 4],
}

#[derive(Debug, Clone)]
struct Assembly {
    along_x: Vec<FactorTables>,
    along_y: Vec<[Array2<f64>; 2]>,
    /// Σ α_k² of the y-side correction tables over modes sharing an x-factor.
    corr_y: Vec<[Array2<f64>; 4]>,
    /// (row into `along_x`, row into `along_y`) per noise mode.
    index: Vec<(usize, usize)>,
}

impl Assembly {
    fn new(noise: &NoiseModel, m: usize, p: usize) -> Self {
        use Factor::{Slope, Value};
        let mut xs: BTreeMap<usize, usize> = BTreeMap::new();
        let mut ys: BTreeMap<usize, usize> = BTreeMap::new();
        let mut along_x = Vec::new();
        let mut along_y = Vec::new();
        let mut corr_y: Vec<[Array2<f64>; 4]> = Vec::new();
        let mut index = Vec::new();
        for ((k, f), a) in noise.modes().iter().zip(noise.factors()).zip(noise.alphas()) {
            let ix = *xs.entry(k[0]).or_insert_with(|| {
                let (f1, f2) = (&f.f1, &f.f2);
                along_x.push(FactorTables {
                    noise: [weighted_table(f1, Value, m, Slope, p), weighted_table(f2, Value, m, Value, p)],
                    corr: [
                        weighted_table(&f1.mul(f1), Slope, m, Slope, p),
                        weighted_table(&f1.mul(f2), Value, m, Slope, p),
                        weighted_table(&f1.mul(f2), Slope, m, Value, p),
                        weighted_table(&f2.mul(f2), Value, m, Value, p),
                    ],
                });
                corr_y.push(std::array::from_fn(|_| Array2::zeros((m, p))));
                along_x.len() - 1
            });
            let iy = *ys.entry(k[1]).or_insert_with(|| {
                along_y.push([weighted_table(&f.g1, Value, m, Value, p), weighted_table(&f.g2, Value, m, Slope, p)]);
                along_y.len() - 1
            });
            let (g1, g2) = (&f.g1, &f.g2);
            let ty = [
                weighted_table(&g1.mul(g1), Value, m, Value, p),
                weighted_table(&g1.mul(g2), Slope, m, Value, p),
                weighted_table(&g1.mul(g2), Value, m, Slope, p),
                weighted_table(&g2.mul(g2), Slope, m, Slope, p),
            ];
            for (acc, t) in corr_y[ix].iter_mut().zip(&ty) {
                acc.scaled_add(a * a, t);
            }
            index.push((ix, iy));
        }
        Self { along_x, along_y, corr_y, index }
    }
}

/// Pointwise composites of one state on the collocation grid.
#[derive(Debug, Clone)]
pub struct Composites {
    pub state: Array2<f64>,
    pub psi: Array2<f64>,
    pub g: Array2<f64>,
    pub eta: Array2<f64>,
}

/// Drift split by term, plus the K diffusion vectors.
#[derive(Debug, Clone)]
pub struct Rates {
    pub laplacian: Vec<f64>,
    pub correction: Vec<f64>,
    pub forcing: Vec<f64>,
    pub diffusion: Vec<Vec<f64>>,
}

impl Rates {
    pub fn drift(&self) -> Vec<f64> {
        self.laplacian
            .iter()
            .zip(&self.correction)
            .zip(&self.forcing)
            .map(|((a, b), c)| a + b + c)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct GalerkinSystem {
    basis: Basis,
    model: EnthalpyModel,
    noise: NoiseModel,
    forcing: Vec<f64>,
    assembly: Option<Assembly>,
}

impl GalerkinSystem {
    pub fn new(basis: Basis, model: EnthalpyModel, noise: NoiseModel, forcing: Vec<f64>) -> Self {
        assert_eq!(forcing.len(), basis.len(), "forcing length");
        let assembly = (!noise.is_empty()).then(|| Assembly::new(&noise, basis.spec().modes, basis.points()));
        Self { basis, model, noise, forcing, assembly }
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn model(&self) -> &EnthalpyModel {
        &self.model
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn forcing(&self) -> &[f64] {
        &self.forcing
    }

    pub fn noise_modes(&self) -> usize {
        self.noise.len()
    }

    /// 0.5 / (Ψ′_max·λ_max + γ·L²·λ_max + 1).
    pub fn stable_dt(&self) -> f64 {
        let p = self.model.params();
        let lmax = self.basis.lambda_max();
        let l2 = if self.noise.is_empty() { 0.0 } else { p.eta_lipschitz * p.eta_lipschitz };
        0.5 / (p.psi_prime_max() * lmax + self.noise.gamma() * l2 * lmax + 1.0)
    }

    /// Ψ(X), g(γ̃⁻¹X), η(γ̃⁻¹X) on the grid.
    pub fn composites(&self, x: &[f64]) -> Result<Composites, SimError> {
        let state = self.basis.synthesize(x);
        let shape = state.dim();
        let psi = state.mapv(|v| self.model.psi(v));
        let mut g = Array2::zeros(shape);
        let mut eta = Array2::zeros(shape);
        if self.assembly.is_some() {
            for ((&v, gv), ev) in state.iter().zip(g.iter_mut()).zip(eta.iter_mut()) {
                let theta = self.model.gamma_tilde_inv(v)?;
                *gv = self.model.g_of(theta);
                *ev = self.model.eta(theta);
            }
        }
        Ok(Composites { state, psi, g, eta })
    }

    pub fn rates(&self, x: &[f64]) -> Result<Rates, SimError> {
        let c = self.composites(x)?;
        self.rates_from(&c)
    }

    pub fn rates_from(&self, c: &Composites) -> Result<Rates, SimError> {
        let b = &self.basis;
        let psi = b.project(&c.psi)?;
        let laplacian: Vec<f64> = psi.iter().zip(b.lambdas()).map(|(p, l)| -l * p).collect();
        let n = b.len();
        let (correction, diffusion) = match &self.assembly {
            None => (vec![0.0; n], Vec::new()),
            Some(asm) => {
                let gc = b.interpolate(&c.g)?;
                let hc = b.interpolate(&c.eta)?;
                self.assemble(asm, &gc, &hc)
            }
        };
        Ok(Rates { laplacian, correction, forcing: self.forcing.clone(), diffusion })
    }

    fn assemble(&self, asm: &Assembly, gc: &Array2<f64>, hc: &Array2<f64>) -> (Vec<f64>, Vec<Vec<f64>>) {
        let m = self.basis.spec().modes;
        let mut corr = Array2::<f64>::zeros((m, m));
        let mut noise_x = Vec::with_capacity(asm.along_x.len());
        for (tx, ty) in asm.along_x.iter().zip(&asm.corr_y) {
            for (t, y) in tx.corr.iter().zip(ty) {
                let u = matmul(t.view(), gc.view());
                corr -= &matmul_bt_dot(u.view(), y.view());
            }
            noise_x.push([matmul(tx.noise[0].view(), hc.view()), matmul(tx.noise[1].view(), hc.view())]);
        }
        let diffusion = asm
            .index
            .iter()
            .zip(self.noise.alphas())
            .map(|(&(ix, iy), &a)| {
                let (u, ty) = (&noise_x[ix], &asm.along_y[iy]);
                let mut d = matmul_bt_dot(u[0].view(), ty[0].view());
                d += &matmul_bt_dot(u[1].view(), ty[1].view());
                d.mapv_inplace(|v| -a * v);
                self.basis.from_matrix(&d)
            })
            .collect();
        (self.basis.from_matrix(&corr), diffusion)
    }

    pub fn drift(&self, x: &[f64]) -> Result<Vec<f64>, SimError> {
        Ok(self.rates(x)?.drift())
    }

    pub fn diffusion(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, SimError> {
        Ok(self.rates(x)?.diffusion)
    }

    /// X + drift·dt + Σ diffusion_k·dW_k.
    pub fn step_em(&self, x: &[f64], dt: f64, dw: &[f64]) -> Result<Vec<f64>, SimError> {
        let r = self.rates(x)?;
        Ok(apply_step(x, &r, dt, dw))
    }
}

pub fn apply_step(x: &[f64], r: &Rates, dt: f64, dw: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = (0..x.len())
        .map(|j| x[j] + (r.laplacian[j] + r.correction[j] + r.forcing[j]) * dt)
        .collect();
    for (d, w) in r.diffusion.iter().zip(dw) {
        for (o, v) in out.iter_mut().zip(d) {
            *o += v * w;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowUp {
    pub step: u64,
    pub time: f64,
    /// Step of the last finite state, which is kept as the final snapshot.
    pub last_finite_step: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub path: u64,
    pub seed: u64,
    pub dt: f64,
    pub steps: u64,
    pub save_every: usize,
    pub noise_modes: usize,
    pub snapshot_steps: Vec<u64>,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Increments, `steps × noise_modes`, row-major by step.
    pub dw: Vec<f64>,
    pub blow_up: Option<BlowUp>,
}

impl Trajectory {
    pub fn dw_at(&self, step: u64) -> &[f64] {
        let k = self.noise_modes;
        let s = step as usize;
        &self.dw[s * k..(s + 1) * k]
    }

    pub fn initial(&self) -> &[f64] {
        &self.states[0]
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory has an initial state")
    }

    /// Steps that start from a finite state and end in one.
    pub fn audited_steps(&self) -> u64 {
        self.blow_up.as_ref().map_or(self.steps, |b| b.last_finite_step)
    }
}

pub fn is_snapshot(step: u64, save_every: usize, steps: u64) -> bool {
    step % save_every as u64 == 0 || step == steps
}

/// Integrates one path with keyed increments.
pub fn simulate_path(system: &GalerkinSystem, x0: &[f64], dt: f64, steps: u64, save_every: usize, seed: u64, path: u64) -> Trajectory {
    let k = system.noise_modes();
    let mut stream = NoiseStream::new(seed, path);
    let mut dw = vec![0.0; steps as usize * k];
    for s in 0..steps {
        let row = &mut dw[s as usize * k..(s as usize + 1) * k];
        stream.increments(s, k, dt, row);
    }
    let mut t = integrate(system, x0, dt, steps, save_every, &dw);
    t.path = path;
    t.seed = seed;
    t
}

/// Deterministic integration driven by stored increments.
pub fn integrate(system: &GalerkinSystem, x0: &[f64], dt: f64, steps: u64, save_every: usize, dw: &[f64]) -> Trajectory {
    let k = system.noise_modes();
    let mut traj = Trajectory {
        path: 0,
        seed: 0,
        dt,
        steps,
        save_every,
        noise_modes: k,
        snapshot_steps: vec![0],
        times: vec![0.0],
        states: vec![x0.to_vec()],
        dw: dw.to_vec(),
        blow_up: None,
    };
    let mut x = x0.to_vec();
    for s in 0..steps {
        let next = system
            .rates(&x)
            .map(|r| apply_step(&x, &r, dt, &dw[s as usize * k..(s as usize + 1) * k]));
        let next = match next {
            Ok(v) if v.iter().all(|c| c.is_finite()) => v,
            Ok(_) => {
                let (step, time) = (s + 1, (s + 1) as f64 * dt);
                traj.blow_up = Some(BlowUp { step, time, last_finite_step: s, message: "non-finite coefficients".into() });
                break;
            }
            Err(e) => {
                traj.blow_up = Some(BlowUp { step: s, time: s as f64 * dt, last_finite_step: s, message: e.to_string() });
                break;
            }
        };
        x = next;
        if is_snapshot(s + 1, save_every, steps) {
            traj.snapshot_steps.push(s + 1);
            traj.times.push((s + 1) as f64 * dt);
            traj.states.push(x.clone());
        }
    }
    if let Some(b) = &traj.blow_up {
        let last = b.last_finite_step;
        if *traj.snapshot_steps.last().expect("initial snapshot") < last {
            traj.snapshot_steps.push(last);
            traj.times.push(last as f64 * dt);
            traj.states.push(x);
        }
    }
    traj
}

/// Every state of a trajectory replayed from its increments.
pub fn replay_states(system: &GalerkinSystem, traj: &Trajectory, mut visit: impl FnMut(u64, &[f64], &Rates)) -> Result<Vec<f64>, SimError> {
    let k = traj.noise_modes;
    let mut x = traj.initial().to_vec();
    for s in 0..traj.audited_steps() {
        let r = system.rates(&x)?;
        visit(s, &x, &r);
        x = apply_step(&x, &r, traj.dt, &traj.dw[s as usize * k..(s as usize + 1) * k]);
    }
    Ok(x)
}

/// A validated run: system, initial data and time step.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: SimConfig,
    pub system: GalerkinSystem,
    pub validation: ValidationReport,
    pub initial: Vec<f64>,
    pub dt: f64,
    pub steps: u64,
}

impl Run {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        let (system, validation) = config.build()?;
        let initial = initial_coefficients(system.basis(), system.model(), &config.initial)?;
        let dt = config.resolve_dt(&system);
        let steps = config.steps(dt);
        Ok(Self { config, system, validation, initial, dt, steps })
    }

    pub fn simulate(&self, path: u64) -> Trajectory {
        simulate_path(&self.system, &self.initial, self.dt, self.steps, self.config.save_every, self.config.seed, path)
    }

    /// All paths, in index order, on the current rayon pool.
    pub fn simulate_ensemble(&self) -> Vec<Trajectory> {
        (0..self.config.paths as u64).into_par_iter().map(|p| self.simulate(p)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heat(dim: usize, m: usize) -> GalerkinSystem {
        let basis = Basis::new(BasisSpec::new(dim, m)).unwrap();
        let model = EnthalpyModel::new(PhysicalParams::heat_reduction()).unwrap();
        let noise = NoiseModel::new(&basis, NoiseSpec::silent()).unwrap();
        let n = basis.len();
        GalerkinSystem::new(basis, model, noise, vec![0.0; n])
    }

    #[test]
    fn heat_drift_is_diagonal() {
        let s = heat(2, 6);
        for j in [0, 3, 17] {
            let mut c = vec![0.0; s.basis().len()];
            c[j] = 0.7;
            let d = s.drift(&c).unwrap();
            for (i, v) in d.iter().enumerate() {
                let e = if i == j { -s.basis().lambdas()[j] * 0.7 } else { 0.0 };
                assert!((v - e).abs() < 1e-10 * s.basis().lambdas()[j], "{i} {v} {e}");
            }
        }
    }

    #[test]
    fn zero_state_has_zero_drift() {
        let basis = Basis::new(BasisSpec::new(2, 6)).unwrap();
        let model = EnthalpyModel::new(PhysicalParams::default()).unwrap();
        let noise = NoiseModel::new(&basis, NoiseSpec { modes: 8, ..NoiseSpec::default() }).unwrap();
        let n = basis.len();
        let s = GalerkinSystem::new(basis, model, noise, vec![0.0; n]);
        let r = s.rates(&vec![0.0; n]).unwrap();
        assert!(r.drift().iter().all(|&v| v == 0.0));
        assert!(r.diffusion.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn stable_dt_formula() {
        let s = heat(1, 16);
        let l = 256.0 * std::f64::consts::PI.powi(2);
        assert!((s.stable_dt() - 0.5 / (l + 1.0)).abs() < 1e-18);
    }

    #[test]
    fn one_step_heat() {
        let s = heat(2, 4);
        let mut c = vec![0.0; s.basis().len()];
        c[0] = 1.0;
        let dt = 1e-4;
        let next = s.step_em(&c, dt, &[]).unwrap();
        assert!((next[0] - (1.0 - s.basis().lambdas()[0] * dt)).abs() < 1e-13);
    }

    #[test]
    fn slab_is_consistent_across_resolutions() {
        let model = EnthalpyModel::new(PhysicalParams::default()).unwrap();
        let ic = InitialCondition::Slab { theta_solid: 0.5, theta_liquid: 1.0, width: 0.1 };
        let b8 = Basis::new(BasisSpec::new(2, 8)).unwrap();
        let b16 = Basis::new(BasisSpec::new(2, 16)).unwrap();
        let c8 = initial_coefficients(&b8, &model, &ic).unwrap();
        let c16 = initial_coefficients(&b16, &model, &ic).unwrap();
        for (j, k) in b8.modes().iter().enumerate() {
            assert_eq!(c8[j], c16[b16.index_of(*k).unwrap()]);
        }
    }
}

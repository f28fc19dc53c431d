//! Executable checks on simulated trajectories: the energy inequality and its
//! sup-norm corollary, domination of the Itô term by the correction, martingale
//! cancellation, increment moment scaling, the weak-form identity and Galerkin
//! convergence.
//!
//! Spatial integrals are evaluated here by quadrature on closed-form fields,
//! independently of the trig tables the integrator uses.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};
use std::fmt::Write as _;

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{Basis, BasisSpec, Mode};
use crate::enthalpy::PhysicalParams;
use crate::linalg::{matmul, matmul_bt, pairwise_map, pairwise_sum};
use crate::quadrature::gauss_legendre_unit;
use crate::rng::NoiseStream;
use crate::sde::{apply_step, GalerkinSystem, Run, SimConfig, SimError, TimeStep, Trajectory};

/// c_E in tol_disc = c_E·dt·λ_max.
pub const ENERGY_SLACK: f64 = 0.5129605575064339;
pub const DOMINATION_SLACK: f64 = 1e-10;
pub const MARTINGALE_TOL: f64 = 1e-8;
pub const WEAK_FORM_TOL: f64 = 1e-8;
pub const CLOSURE_TOL: f64 = 1e-6;
pub const HEAT_KERNEL_TOL: f64 = 1e-3;
pub const GAUSSIAN_SLOPE_TOL: f64 = 0.1;

/// Worst-mode relative excess of the explicit Euler energy ledger, per dt·λ_max.
pub fn energy_slack_for(lambdas: &[f64], dt: f64) -> f64 {
    let lmax = lambdas.iter().copied().fold(0.0, f64::max);
    lambdas
        .iter()
        .map(|l| {
            let a = l * dt;
            a / (2.0 - a)
        })
        .fold(0.0, f64::max)
        / (dt * lmax)
}

/// c_E on the calibration case: heat reduction, 2D, m = 16, dt = 1e-5.
pub fn calibrate_energy_slack() -> f64 {
    let basis = Basis::new(BasisSpec::new(2, 16)).expect("calibration basis");
    energy_slack_for(basis.lambdas(), 1e-5)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Inconclusive,
}

impl Status {
    pub fn label(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Inconclusive => "INCONCLUSIVE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckEntry {
    pub name: String,
    pub claim: String,
    pub measured: Option<f64>,
    pub bound: f64,
    pub tolerance: f64,
    pub status: Status,
    pub detail: String,
}

impl CheckEntry {
    /// Passes iff `measured ≤ bound`.
    pub fn judged(name: &str, claim: &str, measured: f64, bound: f64, tolerance: f64, detail: String) -> Self {
        let status = if measured <= bound { Status::Pass } else { Status::Fail };
        Self { name: name.into(), claim: claim.into(), measured: Some(measured), bound, tolerance, status, detail }
    }

    /// Passes iff `measured ≥ bound`.
    pub fn at_least(name: &str, claim: &str, measured: f64, bound: f64, tolerance: f64, detail: String) -> Self {
        let status = if measured >= bound { Status::Pass } else { Status::Fail };
        Self { name: name.into(), claim: claim.into(), measured: Some(measured), bound, tolerance, status, detail }
    }

    pub fn inconclusive(name: &str, claim: &str, bound: f64, detail: String) -> Self {
        Self { name: name.into(), claim: claim.into(), measured: None, bound, tolerance: 0.0, status: Status::Inconclusive, detail }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub energy_slack: f64,
    pub entries: Vec<CheckEntry>,
}

impl VerificationReport {
    pub fn new() -> Self {
        Self { energy_slack: ENERGY_SLACK, entries: Vec::new() }
    }

    pub fn push(&mut self, e: CheckEntry) {
        self.entries.push(e);
    }

    pub fn get(&self, name: &str) -> Option<&CheckEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// No entry failed; inconclusive entries do not count.
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.status != Status::Fail)
    }

    pub fn failures(&self) -> Vec<&CheckEntry> {
        self.entries.iter().filter(|e| e.status == Status::Fail).collect()
    }

    pub fn table(&self) -> String {
        let w = self.entries.iter().map(|e| e.name.chars().count()).max().unwrap_or(5).max(5);
        let mut s = format!("{:<w$}  {:<12}  {:>12}  {:>12}  detail\n", "check", "status", "measured", "bound");
        for e in &self.entries {
            let m = e.measured.map_or("-".to_string(), |v| format!("{v:.4e}"));
            let _ = writeln!(s, "{:<w$}  {:<12}  {:>12}  {:>12.4e}  {}", e.name, e.status.label(), m, e.bound, e.detail);
        }
        s
    }
}

fn sine_table(x: &[f64], width: usize, derivative: bool) -> Array2<f64> {
    Array2::from_shape_fn((x.len(), width), |(i, p)| {
        let w = (p + 1) as f64 * PI;
        if derivative {
            SQRT_2 * w * (w * x[i]).cos()
        } else {
            SQRT_2 * (w * x[i]).sin()
        }
    })
}

/// Gauss–Legendre tensor rule with sine tables wide enough for full interpolants.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    x: Vec<f64>,
    y: Vec<f64>,
    weights: Array2<f64>,
    sx: Array2<f64>,
    cx: Array2<f64>,
    sy: Array2<f64>,
    cy: Array2<f64>,
}

impl QuadratureGrid {
    pub fn new(basis: &Basis, nodes: usize) -> Self {
        let width = basis.spec().grid - 1;
        let (x, wx) = gauss_legendre_unit(nodes);
        let sx = sine_table(&x, width, false);
        let cx = sine_table(&x, width, true);
        let (y, wy, sy, cy) = if basis.dim() == 2 {
            (x.clone(), wx.clone(), sx.clone(), cx.clone())
        } else {
            (vec![0.5], vec![1.0], Array2::ones((1, 1)), Array2::zeros((1, 1)))
        };
        let weights = Array2::from_shape_fn((x.len(), y.len()), |(i, j)| wx[i] * wy[j]);
        Self { x, y, weights, sx, cx, sy, cy }
    }

    /// Node count resolving products of X, full interpolants and Q.
    pub fn default_nodes(basis: &Basis, noise_modes: &[Mode]) -> usize {
        let kmax = noise_modes.iter().map(|k| k[0].max(k[1])).max().unwrap_or(0);
        let freq = basis.spec().grid - 1 + basis.spec().modes + 4 * kmax + 4;
        (0.8 * freq as f64).ceil() as usize + 16
    }

    pub fn shape(&self) -> (usize, usize) {
        self.weights.dim()
    }

    /// Closed-form field at the nodes.
    pub fn tabulate(&self, f: impl Fn(f64, f64) -> f64) -> Array2<f64> {
        Array2::from_shape_fn(self.shape(), |(i, j)| f(self.x[i], self.y[j]))
    }

    /// Sine series with coefficient matrix `a` (indexed by (p−1, q−1)) at the nodes.
    pub fn values(&self, a: &Array2<f64>) -> Array2<f64> {
        let (p, q) = a.dim();
        let t = matmul(self.sx.slice(s![.., ..p]), a.view());
        matmul_bt(t.view(), self.sy.slice(s![.., ..q]))
    }

    pub fn gradient(&self, a: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let (p, q) = a.dim();
        let t = matmul(self.cx.slice(s![.., ..p]), a.view());
        let gx = matmul_bt(t.view(), self.sy.slice(s![.., ..q]));
        let t = matmul(self.sx.slice(s![.., ..p]), a.view());
        let gy = matmul_bt(t.view(), self.cy.slice(s![.., ..q]));
        (gx, gy)
    }

    pub fn integrate(&self, f: &Array2<f64>) -> f64 {
        let v: Vec<f64> = self.weights.iter().zip(f.iter()).map(|(w, f)| w * f).collect();
        pairwise_sum(&v)
    }

    pub fn inner(&self, f: &Array2<f64>, g: &Array2<f64>) -> f64 {
        let v: Vec<f64> = self.weights.iter().zip(f.iter().zip(g.iter())).map(|(w, (f, g))| w * f * g).collect();
        pairwise_sum(&v)
    }
}

/// σ_k and its Jacobian J[l][i] = ∂_iσ_l.
pub fn sigma_jet(k: Mode, x: f64, y: f64) -> ([f64; 2], [[f64; 2]; 2]) {
    let (wa, wb) = (k[0] as f64 * PI, k[1] as f64 * PI);
    let (sa, ca, sb, cb) = ((wa * x).sin(), (wa * x).cos(), (wb * y).sin(), (wb * y).cos());
    let s = [4.0 * wb * sa * sa * sb * cb, -4.0 * wa * sa * ca * sb * sb];
    let mixed = 8.0 * wa * wb * sa * ca * sb * cb;
    let j = [
        [mixed, 4.0 * wb * wb * sa * sa * (cb * cb - sb * sb)],
        [-4.0 * wa * wa * (ca * ca - sa * sa) * sb * sb, -mixed],
    ];
    (s, j)
}

/// e_k, ∇e_k and the Hessian of e_k at a point.
pub fn mode_jet(dim: usize, k: Mode, x: f64, y: f64) -> (f64, [f64; 2], [[f64; 2]; 2]) {
    let wa = k[0] as f64 * PI;
    let (sa, ca) = ((wa * x).sin(), (wa * x).cos());
    if dim == 1 {
        return (SQRT_2 * sa, [SQRT_2 * wa * ca, 0.0], [[-SQRT_2 * wa * wa * sa, 0.0], [0.0, 0.0]]);
    }
    let wb = k[1] as f64 * PI;
    let (sb, cb) = ((wb * y).sin(), (wb * y).cos());
    let e = 2.0 * sa * sb;
    let g = [2.0 * wa * ca * sb, 2.0 * wb * sa * cb];
    let xy = 2.0 * wa * wb * ca * cb;
    (e, g, [[-wa * wa * e, xy], [xy, -wb * wb * e]])
}

/// div[Q∇e_k] at a point for Q = Σ α²σσᵀ.
pub fn div_q_grad(dim: usize, noise: &[(Mode, f64)], k: Mode, x: f64, y: f64) -> f64 {
    let (_, g, h) = mode_jet(dim, k, x, y);
    let mut acc = 0.0;
    for &(m, a) in noise {
        let (s, j) = sigma_jet(m, x, y);
        let mut v = 0.0;
        for i in 0..2 {
            for l in 0..2 {
                v += s[i] * j[l][i] * g[l] + s[i] * s[l] * h[i][l];
            }
        }
        acc += a * a * v;
    }
    acc
}

/// Uniform interior grid for the martingale integrals, trapezoid weights.
#[derive(Debug, Clone)]
struct FineGrid {
    points: usize,
    weight: f64,
    s: Array2<f64>,
    c: Array2<f64>,
    /// Closed-form 1D factors of σ_k: (f1, f2) along ξ₁ per distinct k₁, (g1, g2) along ξ₂ per distinct k₂.
    fx: BTreeMap<usize, (Vec<f64>, Vec<f64>)>,
    gy: Vec<usize>,
    g1: Array2<f64>,
    g2: Array2<f64>,
}

impl FineGrid {
    fn new(m: usize, grid: usize, noise: &[Mode]) -> Self {
        let x: Vec<f64> = (1..grid).map(|i| i as f64 / grid as f64).collect();
        let n = x.len();
        let s = sine_table(&x, m, false);
        let c = sine_table(&x, m, true);
        let mut fx = BTreeMap::new();
        let mut gy: Vec<usize> = noise.iter().map(|k| k[1]).collect();
        gy.sort_unstable();
        gy.dedup();
        for k in noise {
            fx.entry(k[0]).or_insert_with(|| {
                let wa = k[0] as f64 * PI;
                let f1 = x.iter().map(|&v| (wa * v).sin().powi(2)).collect();
                let f2 = x.iter().map(|&v| -4.0 * wa * (wa * v).sin() * (wa * v).cos()).collect();
                (f1, f2)
            });
        }
        let g1 = Array2::from_shape_fn((n, gy.len()), |(i, b)| {
            let wb = gy[b] as f64 * PI;
            4.0 * wb * (wb * x[i]).sin() * (wb * x[i]).cos()
        });
        let g2 = Array2::from_shape_fn((n, gy.len()), |(i, b)| (gy[b] as f64 * PI * x[i]).sin().powi(2));
        let h = 1.0 / grid as f64;
        Self { points: n, weight: h * h, s, c, fx, gy, g1, g2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentOptions {
    pub r: u32,
    pub beta: f64,
    pub origins: usize,
    pub min_paths: usize,
    pub min_decades: f64,
    /// Smallest lag in steps.
    pub min_lag_steps: u64,
    pub slope_tolerance: f64,
    /// Leading modes for the per-mode variant.
    pub modes: usize,
}

impl Default for MomentOptions {
    fn default() -> Self {
        Self { r: 4, beta: 5.0, origins: 16, min_paths: 200, min_decades: 2.0, min_lag_steps: 10, slope_tolerance: 0.15, modes: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    /// Gauss–Legendre nodes per axis; derived from the resolution when absent.
    pub quadrature_nodes: Option<usize>,
    /// Intervals per axis of the martingale quadrature grid.
    pub martingale_grid: usize,
    pub weak_form_modes: usize,
    /// Leading paths whose weak-form identity is reconstructed.
    pub weak_form_paths: usize,
    pub moments: MomentOptions,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { quadrature_nodes: None, martingale_grid: 1024, weak_form_modes: 8, weak_form_paths: 4, moments: MomentOptions::default() }
    }
}

/// Per-step energy terms of one path.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    /// ‖X_s‖² for s = 0..=steps.
    pub norm2: Vec<f64>,
    /// 2dt∫Ψ′(X)|∇X|².
    pub dissipation: Vec<f64>,
    /// 2dt∫∇𝒫·∇X, 𝒫 the grid interpolant of Ψ(X): the dissipation the scheme applies.
    pub scheme_dissipation: Vec<f64>,
    /// 2dt∫∇𝒢ᵀQ∇X.
    pub correction: Vec<f64>,
    /// dt·Σ_k‖P_n(α_kσ_k·∇η)‖².
    pub ito: Vec<f64>,
    /// 2Σ_k α_k(ℋ, σ_k·∇X)dW_k.
    pub martingale: Vec<f64>,
    /// 2dt(X, F).
    pub forcing: Vec<f64>,
    /// |2(X, ΔX) − (−scheme dissipation − correction + forcing + martingale)| / ‖X‖².
    pub closure: Vec<f64>,
}

impl EnergyLedger {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,norm2,dissipation,scheme_dissipation,correction,ito,martingale,forcing,closure\n");
        for i in 0..self.dissipation.len() {
            let _ = writeln!(
                s,
                "{i},{},{},{},{},{},{},{},{}",
                self.norm2[i],
                self.dissipation[i],
                self.scheme_dissipation[i],
                self.correction[i],
                self.ito[i],
                self.martingale[i],
                self.forcing[i],
                self.closure[i]
            );
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathAudit {
    pub path: u64,
    pub ledger: EnergyLedger,
    /// Largest |stored − replayed| over snapshot coefficients.
    pub replay_mismatch: f64,
    pub replay_exact: bool,
    /// max_k |(η(γ̃⁻¹X), σ_k·∇X)| / (1 + ‖X‖_{H¹}) per snapshot.
    pub martingale: Vec<f64>,
    /// max_j |LHS − RHS| / (1 + |LHS|) per snapshot after the initial one.
    pub weak_form: Option<Vec<f64>>,
    pub blown_up: bool,
}

/// Reusable tables for auditing trajectories of one system.
pub struct Verifier<'a> {
    system: &'a GalerkinSystem,
    options: VerifyOptions,
    quad: QuadratureGrid,
    sigma: Vec<[Array2<f64>; 2]>,
    q: [Array2<f64>; 3],
    tests: Vec<usize>,
    test_values: Vec<Array2<f64>>,
    div_q: Vec<Array2<f64>>,
    /// σ_k·∇e_j at the nodes, indexed [k][test].
    sigma_grad_test: Vec<Vec<Array2<f64>>>,
    forcing: Array2<f64>,
    fine: Option<FineGrid>,
}

impl<'a> Verifier<'a> {
    pub fn new(system: &'a GalerkinSystem, options: VerifyOptions) -> Self {
        let basis = system.basis();
        let dim = basis.dim();
        let noise = system.noise();
        let nodes = options.quadrature_nodes.unwrap_or_else(|| QuadratureGrid::default_nodes(basis, noise.modes()));
        let quad = QuadratureGrid::new(basis, nodes);
        let pairs: Vec<(Mode, f64)> = noise.modes().iter().copied().zip(noise.alphas().iter().copied()).collect();
        let sigma: Vec<[Array2<f64>; 2]> = pairs
            .iter()
            .map(|&(k, _)| [quad.tabulate(|x, y| sigma_jet(k, x, y).0[0]), quad.tabulate(|x, y| sigma_jet(k, x, y).0[1])])
            .collect();
        let shape = quad.shape();
        let mut q = [Array2::zeros(shape), Array2::zeros(shape), Array2::zeros(shape)];
        for (s, &(_, a)) in sigma.iter().zip(&pairs) {
            let a2 = a * a;
            q[0].zip_mut_with(&(&s[0] * &s[0]), |v, w| *v += a2 * w);
            q[1].zip_mut_with(&(&s[0] * &s[1]), |v, w| *v += a2 * w);
            q[2].zip_mut_with(&(&s[1] * &s[1]), |v, w| *v += a2 * w);
        }
        let tests: Vec<usize> = (0..options.weak_form_modes.min(basis.len())).collect();
        let test_values = tests.iter().map(|&j| quad.tabulate(|x, y| basis.mode_value_at(j, x, y))).collect();
        let div_q = tests
            .iter()
            .map(|&j| {
                let k = basis.modes()[j];
                quad.tabulate(|x, y| div_q_grad(dim, &pairs, k, x, y))
            })
            .collect();
        let sigma_grad_test = pairs
            .iter()
            .map(|&(m, _)| {
                tests
                    .iter()
                    .map(|&j| {
                        quad.tabulate(|x, y| {
                            let (s, _) = sigma_jet(m, x, y);
                            let (gx, gy) = basis.mode_gradient_at(j, x, y);
                            s[0] * gx + s[1] * gy
                        })
                    })
                    .collect()
            })
            .collect();
        let forcing = quad.values(&basis.to_matrix(system.forcing()));
        let fine = (!noise.is_empty()).then(|| FineGrid::new(basis.spec().modes, options.martingale_grid, noise.modes()));
        Self { system, options, quad, sigma, q, tests, test_values, div_q, sigma_grad_test, forcing, fine }
    }

    pub fn quadrature(&self) -> &QuadratureGrid {
        &self.quad
    }

    pub fn test_modes(&self) -> &[usize] {
        &self.tests
    }

    /// ∫∇AᵀQ∇B at the nodes.
    pub fn q_form(&self, a: &(Array2<f64>, Array2<f64>), b: &(Array2<f64>, Array2<f64>)) -> f64 {
        let q = &self.q;
        let f = Array2::from_shape_fn(self.quad.shape(), |ij| {
            q[0][ij] * a.0[ij] * b.0[ij] + q[1][ij] * (a.0[ij] * b.1[ij] + a.1[ij] * b.0[ij]) + q[2][ij] * a.1[ij] * b.1[ij]
        });
        self.quad.integrate(&f)
    }

    /// ‖div[Q∇e_j]‖₂ for the test modes.
    pub fn div_q_norms(&self) -> Vec<f64> {
        self.div_q.iter().map(|d| self.quad.inner(d, d).sqrt()).collect()
    }

    /// (η(γ̃⁻¹X), σ_k·∇X)₂ for every noise mode.
    pub fn martingale_integrals(&self, x: &[f64]) -> Result<Vec<f64>, SimError> {
        let model = self.system.model();
        self.martingale_integrals_with(x, &|v| Ok(model.eta(model.gamma_tilde_inv(v)?)))
    }

    /// (φ(X), σ_k·∇X)₂ for a pointwise map φ.
    pub fn martingale_integrals_with(&self, x: &[f64], map: &(dyn Fn(f64) -> Result<f64, SimError> + Sync)) -> Result<Vec<f64>, SimError> {
        let Some(fine) = &self.fine else { return Ok(Vec::new()) };
        let xm = self.system.basis().to_matrix(x);
        let synth = |tx: &Array2<f64>, ty: &Array2<f64>| {
            let t = matmul(tx.view(), xm.view());
            matmul_bt(t.view(), ty.view())
        };
        let mut h = synth(&fine.s, &fine.s);
        for v in h.iter_mut() {
            *v = map(*v)?;
        }
        let mut a1 = synth(&fine.c, &fine.s);
        a1.zip_mut_with(&h, |a, h| *a *= h);
        let mut a2 = synth(&fine.s, &fine.c);
        a2.zip_mut_with(&h, |a, h| *a *= h);
        drop(h);
        let b1 = matmul(a1.view(), fine.g1.view());
        let b2 = matmul(a2.view(), fine.g2.view());
        let n = fine.points;
        Ok(self
            .system
            .noise()
            .modes()
            .iter()
            .map(|k| {
                let (f1, f2) = &fine.fx[&k[0]];
                let ib = fine.gy.binary_search(&k[1]).expect("tabulated factor");
                fine.weight * pairwise_map(n, |i| f1[i] * b1[[i, ib]] + f2[i] * b2[[i, ib]])
            })
            .collect())
    }

    /// Replays one trajectory from its increments and records every audited quantity.
    pub fn audit(&self, traj: &Trajectory, weak_form: bool) -> Result<PathAudit, SimError> {
        let sys = self.system;
        let basis = sys.basis();
        let model = sys.model();
        let quad = &self.quad;
        let dt = traj.dt;
        let noisy = !sys.noise().is_empty();
        let alphas = sys.noise().alphas();
        let nt = self.tests.len();
        let x0: Vec<f64> = self.tests.iter().map(|&j| traj.initial()[j]).collect();
        let mut acc = vec![0.0; nt];
        let mut weak = weak_form.then(Vec::new);
        let mut ledger = EnergyLedger::default();
        let mut mismatch = 0.0f64;
        let mut exact = true;
        let mut snap = 1;
        let mut x = traj.initial().to_vec();
        ledger.norm2.push(norm2(&x));
        for s in 0..traj.audited_steps() {
            let c = sys.composites(&x)?;
            let r = sys.rates_from(&c)?;
            let dw = traj.dw_at(s);
            let xm = basis.to_matrix(&x);
            let grad_x = quad.gradient(&xm);
            let xv = quad.values(&xm);
            let diss_f = Array2::from_shape_fn(quad.shape(), |ij| {
                model.psi_prime(xv[ij]) * (grad_x.0[ij] * grad_x.0[ij] + grad_x.1[ij] * grad_x.1[ij])
            });
            let dissipation = 2.0 * dt * quad.integrate(&diss_f);
            let pc = basis.interpolate(&c.psi)?;
            let grad_p = quad.gradient(&pc);
            let scheme_dissipation = 2.0 * dt * (quad.inner(&grad_p.0, &grad_x.0) + quad.inner(&grad_p.1, &grad_x.1));
            let (mut correction, mut martingale) = (0.0, 0.0);
            let mut gv = None;
            let mut hv = None;
            if noisy {
                let gc = basis.interpolate(&c.g)?;
                correction = 2.0 * dt * self.q_form(&quad.gradient(&gc), &grad_x);
                let h = quad.values(&basis.interpolate(&c.eta)?);
                let mut u = [Array2::zeros(quad.shape()), Array2::zeros(quad.shape())];
                for ((sg, a), w) in self.sigma.iter().zip(alphas).zip(dw) {
                    u[0].scaled_add(a * w, &sg[0]);
                    u[1].scaled_add(a * w, &sg[1]);
                }
                let f = Array2::from_shape_fn(quad.shape(), |ij| h[ij] * (u[0][ij] * grad_x.0[ij] + u[1][ij] * grad_x.1[ij]));
                martingale = 2.0 * quad.integrate(&f);
                if weak.is_some() {
                    gv = Some(quad.values(&gc));
                }
                hv = Some(h);
            }
            let ito_terms: Vec<f64> = r.diffusion.iter().map(|d| pairwise_map(d.len(), |i| d[i] * d[i])).collect();
            let ito = dt * pairwise_sum(&ito_terms);
            let forcing = 2.0 * dt * pairwise_map(x.len(), |i| x[i] * sys.forcing()[i]);
            let next = apply_step(&x, &r, dt, dw);
            let inner = 2.0 * pairwise_map(x.len(), |i| x[i] * (next[i] - x[i]));
            let n2 = norm2(&x);
            let closure = (inner - (-scheme_dissipation - correction + forcing + martingale)).abs() / n2.max(f64::MIN_POSITIVE);

            if weak.is_some() {
                let pv = quad.values(&pc);
                for (t, &j) in self.tests.iter().enumerate() {
                    let lam = basis.lambdas()[j];
                    let e = &self.test_values[t];
                    let mut drift = -lam * quad.inner(&pv, e) + quad.inner(&self.forcing, e);
                    if let Some(g) = &gv {
                        drift += quad.inner(g, &self.div_q[t]);
                    }
                    let mut noise = 0.0;
                    if let Some(h) = &hv {
                        let terms: Vec<f64> =
                            (0..alphas.len()).map(|k| alphas[k] * dw[k] * quad.inner(h, &self.sigma_grad_test[k][t])).collect();
                        noise = pairwise_sum(&terms);
                    }
                    acc[t] += dt * drift + noise;
                }
            }

            ledger.dissipation.push(dissipation);
            ledger.scheme_dissipation.push(scheme_dissipation);
            ledger.correction.push(correction);
            ledger.ito.push(ito);
            ledger.martingale.push(martingale);
            ledger.forcing.push(forcing);
            ledger.closure.push(closure);
            x = next;
            ledger.norm2.push(norm2(&x));

            if snap < traj.snapshot_steps.len() && traj.snapshot_steps[snap] == s + 1 {
                let stored = &traj.states[snap];
                for (a, b) in stored.iter().zip(&x) {
                    exact &= a.to_bits() == b.to_bits();
                    mismatch = mismatch.max((a - b).abs());
                }
                if let Some(w) = weak.as_mut() {
                    let worst = (0..nt)
                        .map(|t| {
                            let lhs = stored[self.tests[t]];
                            (lhs - (x0[t] + acc[t])).abs() / (1.0 + lhs.abs())
                        })
                        .fold(0.0, f64::max);
                    w.push(worst);
                }
                snap += 1;
            }
        }
        let mut martingale = Vec::new();
        if noisy {
            for st in &traj.states {
                let v = self.martingale_integrals(st)?;
                let scale = 1.0 + basis.norm_h1(st);
                martingale.push(v.iter().fold(0.0f64, |m, v| m.max(v.abs())) / scale);
            }
        }
        Ok(PathAudit {
            path: traj.path,
            ledger,
            replay_mismatch: mismatch,
            replay_exact: exact,
            martingale,
            weak_form: weak,
            blown_up: traj.blow_up.is_some(),
        })
    }
}

fn norm2(x: &[f64]) -> f64 {
    pairwise_map(x.len(), |i| x[i] * x[i])
}

fn max_of(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// (‖X(t)‖² + cumulative dissipation) / ‖X(0)‖² at each snapshot.
fn energy_profile(traj: &Trajectory, ledger: &EnergyLedger) -> Vec<f64> {
    let x0 = ledger.norm2[0].max(f64::MIN_POSITIVE);
    let mut cum = vec![0.0; ledger.dissipation.len() + 1];
    for (i, d) in ledger.dissipation.iter().enumerate() {
        cum[i + 1] = cum[i] + d;
    }
    traj.snapshot_steps
        .iter()
        .filter(|&&s| (s as usize) < ledger.norm2.len())
        .map(|&s| (ledger.norm2[s as usize] + cum[s as usize]) / x0)
        .collect()
}

/// Whether the system is the linear heat reduction without noise or forcing.
pub fn is_exact_heat(system: &GalerkinSystem) -> bool {
    *system.model().params() == PhysicalParams::heat_reduction()
        && system.noise().is_empty()
        && system.forcing().iter().all(|&f| f == 0.0)
}

/// max over snapshots of ‖X(t) − e^{tΔ}X(0)‖₂ / ‖e^{tΔ}X(0)‖₂.
pub fn heat_kernel_error(basis: &Basis, traj: &Trajectory) -> f64 {
    let x0 = traj.initial();
    traj.times
        .iter()
        .zip(&traj.states)
        .map(|(&t, x)| {
            let exact: Vec<f64> = x0.iter().zip(basis.lambdas()).map(|(c, l)| c * (-l * t).exp()).collect();
            let err = pairwise_map(x.len(), |i| (x[i] - exact[i]).powi(2)).sqrt();
            err / norm2(&exact).sqrt().max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max)
}

/// Runs every trajectory check on an ensemble.
pub fn verify_ensemble(system: &GalerkinSystem, ensemble: &[Trajectory], options: &VerifyOptions) -> Result<VerificationReport, SimError> {
    let verifier = Verifier::new(system, options.clone());
    let audits: Vec<PathAudit> = ensemble
        .par_iter()
        .enumerate()
        .map(|(i, t)| verifier.audit(t, i < options.weak_form_paths))
        .collect::<Result<_, _>>()?;
    let mut report = VerificationReport::new();
    for e in audit_entries(&verifier, ensemble, &audits) {
        report.push(e);
    }
    report.entries.extend(increment_moment_scaling(system.basis(), ensemble, &options.moments));
    Ok(report)
}

/// Report entries derived from path audits.
pub fn audit_entries(verifier: &Verifier, ensemble: &[Trajectory], audits: &[PathAudit]) -> Vec<CheckEntry> {
    let system = verifier.system;
    let basis = system.basis();
    let n = audits.len();
    let dt = ensemble.first().map_or(0.0, |t| t.dt);
    let tol = ENERGY_SLACK * dt * basis.lambda_max();
    let mut out = Vec::new();

    let blown = audits.iter().filter(|a| a.blown_up).count();
    out.push(CheckEntry::judged(
        "finite trajectories",
        "paths stay finite on [0, T]",
        blown as f64,
        0.0,
        0.0,
        format!("{blown}/{n} paths blew up"),
    ));

    let exact = audits.iter().filter(|a| a.replay_exact).count();
    let mut e = CheckEntry::judged(
        "replay",
        "stored increments reproduce every snapshot bit-exactly",
        max_of(audits.iter().map(|a| a.replay_mismatch)).max(0.0),
        0.0,
        0.0,
        format!("{exact}/{n} paths bit-identical"),
    );
    if exact < n {
        e.status = Status::Fail;
    }
    out.push(e);

    let forced = system.forcing().iter().any(|&f| f != 0.0);
    let energy_claim = "sup_t ‖X(t)‖² + 2∫∫Ψ′(X)|∇X|² ≤ ‖X(0)‖² on every path";
    let profiles: Vec<Vec<f64>> = ensemble.iter().zip(audits).map(|(t, a)| energy_profile(t, &a.ledger)).collect();
    if forced {
        out.push(CheckEntry::inconclusive("energy inequality", energy_claim, tol, "requires F = 0".into()));
        out.push(CheckEntry::inconclusive("energy inequality (mean)", energy_claim, tol, "requires F = 0".into()));
    } else {
        let excess: Vec<f64> = profiles.iter().map(|p| max_of(p.iter().copied()) - 1.0).collect();
        let ok = excess.iter().filter(|&&e| e <= tol).count();
        out.push(CheckEntry::judged(
            "energy inequality",
            energy_claim,
            max_of(excess.iter().copied()),
            tol,
            tol,
            format!("{ok}/{n} paths within tol_disc = c_E·dt·λ_max, c_E = {ENERGY_SLACK:.6}"),
        ));
        let clean: Vec<&Vec<f64>> = profiles.iter().zip(audits).filter(|(_, a)| !a.blown_up).map(|(p, _)| p).collect();
        let len = clean.iter().map(|p| p.len()).min().unwrap_or(0);
        if clean.len() < 2 || len == 0 {
            out.push(CheckEntry::inconclusive("energy inequality (mean)", energy_claim, tol, "needs ≥ 2 finite paths".into()));
        } else {
            let c = clean.len() as f64;
            let worst = (0..len)
                .map(|s| {
                    let v: Vec<f64> = clean.iter().map(|p| p[s]).collect();
                    let mean = pairwise_sum(&v) / c;
                    let var = pairwise_map(v.len(), |i| (v[i] - mean).powi(2)) / (c - 1.0);
                    mean - 1.96 * (var / c).sqrt() - 1.0
                })
                .fold(f64::NEG_INFINITY, f64::max);
            out.push(CheckEntry::judged(
                "energy inequality (mean)",
                energy_claim,
                worst,
                tol,
                tol,
                format!("ensemble mean minus 95% half-width over {} paths", clean.len()),
            ));
        }
    }

    let sup: Vec<f64> = audits
        .iter()
        .zip(ensemble)
        .map(|(a, t)| {
            let x0 = a.ledger.norm2[0].max(f64::MIN_POSITIVE);
            max_of(t.states.iter().map(|x| norm2(x) / x0)) - 1.0
        })
        .collect();
    let ok = sup.iter().filter(|&&e| e <= tol).count();
    out.push(CheckEntry::judged(
        "sup bound",
        "sup_t ‖X(t)‖² ≤ ‖X(0)‖²",
        max_of(sup.iter().copied()),
        tol,
        tol,
        format!("{ok}/{n} paths within tol_disc"),
    ));

    let dom = max_of(audits.iter().flat_map(|a| a.ledger.ito.iter().zip(&a.ledger.correction).map(|(i, c)| i - c)));
    let steps: usize = audits.iter().map(|a| a.ledger.ito.len()).sum();
    out.push(CheckEntry::judged(
        "domination",
        "dt·Σ_k‖P_n(α_kσ_k·∇η(γ̃⁻¹X))‖² ≤ 2dt∫∇(g∘γ̃⁻¹)(X)ᵀQ∇X",
        if steps == 0 { 0.0 } else { dom },
        DOMINATION_SLACK,
        DOMINATION_SLACK,
        format!("max over {steps} steps of Itô − correction increment"),
    ));

    let closure = max_of(audits.iter().flat_map(|a| a.ledger.closure.iter().copied()));
    let aliasing = max_of(audits.iter().flat_map(|a| {
        let l = &a.ledger;
        l.dissipation.iter().zip(&l.scheme_dissipation).zip(&l.norm2).map(|((d, s), n)| (d - s).abs() / n.max(f64::MIN_POSITIVE))
    }));
    out.push(CheckEntry::judged(
        "energy ledger closure",
        "2(X, ΔX) = −dissipation − correction + forcing + martingale increments",
        if steps == 0 { 0.0 } else { closure },
        CLOSURE_TOL,
        CLOSURE_TOL,
        format!(
            "max per-step disagreement / ‖X‖²; collocation aliasing of Ψ(X) in the dissipation: {:.3e}",
            if steps == 0 { 0.0 } else { aliasing }
        ),
    ));

    let mart_claim = "(η(γ̃⁻¹X), σ_k·∇X)₂ = 0 since div σ_k = 0";
    if system.noise().is_empty() {
        out.push(CheckEntry::judged("martingale cancellation", mart_claim, 0.0, MARTINGALE_TOL, MARTINGALE_TOL, "no noise modes".into()));
    } else {
        let worst = max_of(audits.iter().flat_map(|a| a.martingale.iter().copied()));
        let snaps: usize = audits.iter().map(|a| a.martingale.len()).sum();
        out.push(CheckEntry::judged(
            "martingale cancellation",
            mart_claim,
            worst,
            MARTINGALE_TOL,
            MARTINGALE_TOL,
            format!("max_k |·|/(1+‖X‖_H¹) over {snaps} snapshots, grid {}", verifier.options.martingale_grid),
        ));
    }

    let weak: Vec<f64> = audits.iter().filter_map(|a| a.weak_form.as_ref()).flatten().copied().collect();
    let weak_paths = audits.iter().filter(|a| a.weak_form.is_some()).count();
    let weak_claim = "(X(t), e_j) = (x, e_j) + ∫(F, e_j) + ∫(Ψ(X), Δe_j) + ∫(g(γ̃⁻¹X), div[Q∇e_j]) + Σ∫α_k(η(γ̃⁻¹X), σ_k·∇e_j)dβ_k";
    if weak.is_empty() {
        out.push(CheckEntry::inconclusive("weak form", weak_claim, WEAK_FORM_TOL, "no snapshots replayed".into()));
    } else {
        out.push(CheckEntry::judged(
            "weak form",
            weak_claim,
            max_of(weak.iter().copied()),
            WEAK_FORM_TOL,
            WEAK_FORM_TOL,
            format!("j ≤ {}, {} snapshots on {weak_paths} paths", verifier.tests.len(), weak.len()),
        ));
    }

    let gamma = system.noise().gamma();
    let norms = verifier.div_q_norms();
    let ratio = verifier
        .tests
        .iter()
        .zip(&norms)
        .map(|(&j, d)| {
            let l = basis.lambdas()[j];
            let rhs = gamma * (l + l * l);
            if rhs > 0.0 {
                d * d / rhs
            } else if *d == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max);
    out.push(CheckEntry::judged(
        "div[Q∇e_j] bound",
        "‖div[Q∇e_j]‖₂² ≤ γ(‖e_j‖²_H¹ + ‖e_j‖²_H²)",
        ratio,
        1.0,
        0.0,
        format!("max ratio over j ≤ {}, ‖div[Q∇e_1]‖₂ = {:.4e}", verifier.tests.len(), norms.first().copied().unwrap_or(0.0)),
    ));

    let heat_claim = "heat reduction: X(t) = e^{tΔ}X(0)";
    if is_exact_heat(system) {
        let err = max_of(ensemble.iter().map(|t| heat_kernel_error(basis, t)));
        out.push(CheckEntry::judged("heat kernel", heat_claim, err, HEAT_KERNEL_TOL, HEAT_KERNEL_TOL, "max relative L² error over snapshots".into()));
    } else {
        out.push(CheckEntry::inconclusive("heat kernel", heat_claim, HEAT_KERNEL_TOL, "not the noiseless, unforced heat reduction".into()));
    }
    out
}

/// Log-log regression of an increment moment against the lag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCurve {
    /// Lags in time units.
    pub lags: Vec<f64>,
    pub moments: Vec<f64>,
    pub samples: usize,
    pub slope: f64,
    pub intercept: f64,
}

/// Least-squares slope and intercept of y against x.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = pairwise_sum(x) / n;
    let my = pairwise_sum(y) / n;
    let sxy = pairwise_map(x.len(), |i| (x[i] - mx) * (y[i] - my));
    let sxx = pairwise_map(x.len(), |i| (x[i] - mx) * (x[i] - mx));
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Dyadic lags (in steps) from the smallest snapshot multiple ≥ `min_lag` up to steps/4.
pub fn dyadic_lags(steps: u64, save_every: usize, min_lag: u64) -> Vec<u64> {
    let se = save_every as u64;
    let mut lag = min_lag.div_ceil(se).max(1) * se;
    let mut out = Vec::new();
    while 4 * lag <= steps {
        out.push(lag);
        lag *= 2;
    }
    out
}

/// Mean of `stat(X_{s+ℓ}, X_s)` over paths and stratified origins s, per lag ℓ.
pub fn moment_curve(
    ensemble: &[Trajectory],
    lags: &[u64],
    origins: usize,
    stat: impl Fn(&[f64], &[f64]) -> f64 + Sync,
) -> MomentCurve {
    let per_path: Vec<Vec<Vec<f64>>> = ensemble
        .par_iter()
        .map(|t| {
            let se = t.save_every as u64;
            let grid = t.steps / se;
            let mut rng = ChaCha8Rng::seed_from_u64(t.seed ^ 0x6d6f_6d65_6e74_7321);
            rng.set_stream(t.path);
            lags.iter()
                .map(|&lag| {
                    let l = lag / se;
                    let count = grid + 1 - l;
                    let o = (origins as u64).min(count);
                    (0..o)
                        .map(|i| {
                            let (lo, hi) = (i * count / o, (i + 1) * count / o);
                            let s = rng.random_range(lo..hi) as usize;
                            stat(&t.states[s + l as usize], &t.states[s])
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let dt = ensemble.first().map_or(0.0, |t| t.dt);
    let mut moments = Vec::with_capacity(lags.len());
    let mut samples = 0;
    for li in 0..lags.len() {
        let v: Vec<f64> = per_path.iter().flat_map(|p| p[li].iter().copied()).collect();
        samples += v.len();
        moments.push(pairwise_sum(&v) / v.len() as f64);
    }
    let lx: Vec<f64> = lags.iter().map(|&l| (l as f64 * dt).ln()).collect();
    let ly: Vec<f64> = moments.iter().map(|m| m.ln()).collect();
    let (slope, intercept) = fit_line(&lx, &ly);
    MomentCurve { lags: lags.iter().map(|&l| l as f64 * dt).collect(), moments, samples, slope, intercept }
}

/// Trajectories of a single Brownian coefficient: unit diffusion, zero drift.
pub fn brownian_signal(paths: usize, steps: u64, dt: f64, save_every: usize, seed: u64) -> Vec<Trajectory> {
    (0..paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut stream = NoiseStream::new(seed, p);
            let mut dw = vec![0.0; steps as usize];
            let mut w = 0.0;
            let mut t = Trajectory {
                path: p,
                seed,
                dt,
                steps,
                save_every,
                noise_modes: 1,
                snapshot_steps: vec![0],
                times: vec![0.0],
                states: vec![vec![0.0]],
                dw: Vec::new(),
                blow_up: None,
            };
            for s in 0..steps {
                stream.increments(s, 1, dt, &mut dw[s as usize..s as usize + 1]);
                w += dw[s as usize];
                if (s + 1) % save_every as u64 == 0 || s + 1 == steps {
                    t.snapshot_steps.push(s + 1);
                    t.times.push((s + 1) as f64 * dt);
                    t.states.push(vec![w]);
                }
            }
            t.dw = dw;
            t
        })
        .collect()
}

const MOMENT_CLAIM: &str = "E‖X_t − X_s‖^r_{H^{−β}} ≤ C|t−s|^{r/2}";

/// H^{−β} and per-mode increment moment slopes against the lag.
pub fn increment_moment_scaling(basis: &Basis, ensemble: &[Trajectory], opts: &MomentOptions) -> Vec<CheckEntry> {
    let r = opts.r as i32;
    let threshold = 0.5 * opts.r as f64 * (1.0 - opts.slope_tolerance);
    let name = format!("increment moments (r = {}, β = {})", opts.r, opts.beta);
    let Some(first) = ensemble.first() else {
        return vec![CheckEntry::inconclusive(&name, MOMENT_CLAIM, threshold, "empty ensemble".into())];
    };
    let lags = dyadic_lags(first.steps, first.save_every, opts.min_lag_steps);
    let decades = match (lags.first(), lags.last()) {
        (Some(a), Some(b)) => (*b as f64 / *a as f64).log10(),
        _ => 0.0,
    };
    let mut why = Vec::new();
    if ensemble.len() < opts.min_paths {
        why.push(format!("{} < {} paths", ensemble.len(), opts.min_paths));
    }
    if lags.len() < 2 || decades < opts.min_decades {
        why.push(format!("lags span {decades:.2} < {} decades", opts.min_decades));
    }
    if ensemble.iter().any(|t| t.blow_up.is_some()) {
        why.push("blow-up in ensemble".into());
    }
    if ensemble.iter().any(|t| t.steps != first.steps || t.save_every != first.save_every) {
        why.push("paths differ in length or snapshot spacing".into());
    }
    let modes = opts.modes.min(basis.len());
    if !why.is_empty() {
        let detail = why.join("; ");
        let mut out = vec![CheckEntry::inconclusive(&name, MOMENT_CLAIM, threshold, detail.clone())];
        for j in 0..modes {
            out.push(CheckEntry::inconclusive(&format!("increment moments, mode {}", j + 1), MOMENT_CLAIM, threshold, detail.clone()));
        }
        return out;
    }
    let weights: Vec<f64> = basis.lambdas().iter().map(|l| l.powf(-opts.beta)).collect();
    let curve = moment_curve(ensemble, &lags, opts.origins, |a, b| {
        pairwise_map(a.len(), |i| weights[i] * (a[i] - b[i]).powi(2)).powf(0.5 * opts.r as f64)
    });
    let detail = |c: &MomentCurve| format!("slope {:.3} over {} lags, {:.2} decades, {} samples", c.slope, lags.len(), decades, c.samples);
    let mut out = vec![CheckEntry::at_least(&name, MOMENT_CLAIM, curve.slope, threshold, opts.slope_tolerance, detail(&curve))];
    for j in 0..modes {
        let c = moment_curve(ensemble, &lags, opts.origins, |a, b| (a[j] - b[j]).abs().powi(r));
        out.push(CheckEntry::at_least(
            &format!("increment moments, mode {}", j + 1),
            "E|(X_t − X_s, e_j)|^r ≤ C|t−s|^{r/2}",
            c.slope,
            threshold,
            opts.slope_tolerance,
            detail(&c),
        ));
    }
    out
}

/// Slope of E|ΔW|^4 against the lag for a pure Brownian signal; exact value 2.
pub fn gaussian_moment_check(paths: usize, steps: u64, dt: f64, save_every: usize, seed: u64, opts: &MomentOptions) -> (CheckEntry, MomentCurve) {
    let ensemble = brownian_signal(paths, steps, dt, save_every, seed);
    let lags = dyadic_lags(steps, save_every, opts.min_lag_steps);
    let curve = moment_curve(&ensemble, &lags, opts.origins, |a, b| (a[0] - b[0]).powi(4));
    let dev = curve
        .lags
        .iter()
        .zip(&curve.moments)
        .map(|(l, m)| (m / (3.0 * l * l) - 1.0).abs())
        .fold(0.0, f64::max);
    let entry = CheckEntry::judged(
        "gaussian moment oracle",
        "E|W_t − W_s|⁴ = 3|t−s|²",
        (curve.slope - 2.0).abs(),
        GAUSSIAN_SLOPE_TOL,
        GAUSSIAN_SLOPE_TOL,
        format!("slope {:.4}, max relative deviation from 3|t−s|² {:.3}", curve.slope, dev),
    );
    (entry, curve)
}

/// ‖a − b‖_{H⁻¹} with b zero-padded from a coarser basis.
pub fn h_minus_distance(fine: &Basis, a: &[f64], coarse: &Basis, b: &[f64]) -> f64 {
    let mut pad = vec![0.0; fine.len()];
    for (j, k) in coarse.modes().iter().enumerate() {
        if let Some(i) = fine.index_of(*k) {
            pad[i] = b[j];
        }
    }
    fine.norm_h_minus(&a.iter().zip(&pad).map(|(x, y)| x - y).collect::<Vec<_>>(), 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    /// Modes per axis of the coarse runs.
    pub modes: Vec<usize>,
    /// Basis sizes n of the coarse runs.
    pub sizes: Vec<usize>,
    pub dt: f64,
    pub steps: u64,
    /// D(n) = max over snapshots of ‖X^(4n) − X^(n)‖_{H⁻¹}.
    pub distances: Vec<f64>,
    /// ‖X^(4n)(T) − X^(n)(T)‖_{H⁻¹}.
    pub final_distances: Vec<f64>,
    pub blow_up: bool,
}

impl ConvergenceStudy {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("m,n,D,D_T\n");
        for (((m, n), d), f) in self.modes.iter().zip(&self.sizes).zip(&self.distances).zip(&self.final_distances) {
            let _ = writeln!(s, "{m},{n},{d},{f}");
        }
        s
    }

    pub fn entry(&self, label: &str) -> CheckEntry {
        let name = format!("Galerkin convergence ({label})");
        let claim = "X^(n) Cauchy in C([0,T]; H⁻¹): D(n) decreasing in n";
        if self.blow_up {
            return CheckEntry::inconclusive(&name, claim, 1.0, "blow-up in a run".into());
        }
        if self.distances.len() < 2 {
            return CheckEntry::inconclusive(&name, claim, 1.0, "needs ≥ 2 resolutions".into());
        }
        let ratio = self.distances.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
        let mut e = CheckEntry::judged(
            &name,
            claim,
            ratio,
            1.0,
            0.0,
            format!(
                "D = [{}], D(T) = [{}] at n = {:?}, dt = {:.4e}",
                fmt_list(&self.distances),
                fmt_list(&self.final_distances),
                self.sizes,
                self.dt
            ),
        );
        if !(ratio < 1.0) {
            e.status = Status::Fail;
        }
        e
    }
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|d| format!("{d:.3e}")).collect::<Vec<_>>().join(", ")
}

/// Runs `base` at each m and 2m with a shared time step and driving noise.
pub fn galerkin_convergence(base: &SimConfig, modes: &[usize], path: u64) -> Result<ConvergenceStudy, SimError> {
    let mut all: Vec<usize> = modes.iter().flat_map(|&m| [m, 2 * m]).collect();
    all.sort_unstable();
    all.dedup();
    let configs: Vec<SimConfig> = all
        .iter()
        .map(|&m| {
            let mut c = base.clone();
            c.basis = BasisSpec::new(base.basis.dim, m);
            c
        })
        .collect();
    let runs: Vec<Run> = configs.iter().cloned().map(Run::new).collect::<Result<_, _>>()?;
    let dt = match base.dt {
        TimeStep::Fixed(dt) => dt,
        TimeStep::Auto => runs.iter().map(|r| r.system.stable_dt()).fold(f64::INFINITY, f64::min),
    };
    let trajs: Vec<Trajectory> = runs
        .par_iter()
        .map(|r| {
            let mut r = r.clone();
            r.dt = dt;
            r.steps = base.steps(dt);
            r.simulate(path)
        })
        .collect();
    let blow_up = trajs.iter().any(|t| t.blow_up.is_some());
    let per_snapshot: Vec<Vec<f64>> = modes
        .iter()
        .map(|&m| {
            let i = all.binary_search(&m).expect("coarse run");
            let f = all.binary_search(&(2 * m)).expect("fine run");
            let (bc, bf) = (runs[i].system.basis(), runs[f].system.basis());
            trajs[i].states.iter().zip(&trajs[f].states).map(|(c, x)| h_minus_distance(bf, x, bc, c)).collect()
        })
        .collect();
    let distances = per_snapshot.iter().map(|d| d.iter().copied().fold(0.0, f64::max)).collect();
    let final_distances = per_snapshot.iter().map(|d| *d.last().expect("initial snapshot")).collect();
    let sizes = modes.iter().map(|&m| BasisSpec::new(base.basis.dim, m).len()).collect();
    Ok(ConvergenceStudy { modes: modes.to_vec(), sizes, dt, steps: base.steps(dt), distances, final_distances, blow_up })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enthalpy::EnthalpyModel;
    use crate::noise::{NoiseModel, NoiseSpec};

    fn system(m: usize, noise: NoiseSpec) -> GalerkinSystem {
        let basis = Basis::new(BasisSpec::new(2, m)).unwrap();
        let model = EnthalpyModel::new(PhysicalParams::default()).unwrap();
        let noise = NoiseModel::new(&basis, noise).unwrap();
        let n = basis.len();
        GalerkinSystem::new(basis, model, noise, vec![0.0; n])
    }

    #[test]
    fn slack_constant_matches_calibration() {
        assert!((calibrate_energy_slack() - ENERGY_SLACK).abs() < 1e-15);
    }

    #[test]
    fn sigma_jet_is_divergence_free() {
        for k in [[1, 1], [2, 3], [5, 1]] {
            for (x, y) in [(0.13, 0.71), (0.5, 0.25), (0.9, 0.05)] {
                let (s, j) = sigma_jet(k, x, y);
                assert!((j[0][0] + j[1][1]).abs() < 1e-12);
                let (t, _) = sigma_jet(k, x + 1e-6, y);
                assert!(((t[1] - s[1]) / 1e-6 - j[1][0]).abs() < 1e-3 * (1.0 + j[1][0].abs()));
                let (t, _) = sigma_jet(k, x, y + 1e-6);
                assert!(((t[0] - s[0]) / 1e-6 - j[0][1]).abs() < 1e-3 * (1.0 + j[0][1].abs()));
            }
        }
    }

    #[test]
    fn quadrature_matches_coefficient_norms() {
        let b = Basis::new(BasisSpec::new(2, 6)).unwrap();
        let q = QuadratureGrid::new(&b, 40);
        let c: Vec<f64> = (0..b.len()).map(|j| ((j * 7 % 11) as f64 - 5.0) / (1.0 + j as f64)).collect();
        let xm = b.to_matrix(&c);
        let v = q.values(&xm);
        assert!((q.inner(&v, &v) - norm2(&c)).abs() < 1e-12);
        let g = q.gradient(&xm);
        let h1 = q.inner(&g.0, &g.0) + q.inner(&g.1, &g.1);
        assert!((h1 - b.norm_h1(&c).powi(2)).abs() < 1e-9 * h1);
    }

    #[test]
    fn correction_matches_quadrature_form() {
        let s = system(8, NoiseSpec { modes: 8, ..NoiseSpec::default() });
        let v = Verifier::new(&s, VerifyOptions::default());
        let model = EnthalpyModel::new(PhysicalParams::default()).unwrap();
        let x = crate::sde::initial_coefficients(
            s.basis(),
            &model,
            &crate::sde::InitialCondition::Slab { theta_solid: 0.5, theta_liquid: 1.0, width: 0.1 },
        )
        .unwrap();
        let c = s.composites(&x).unwrap();
        let r = s.rates_from(&c).unwrap();
        let gc = s.basis().interpolate(&c.g).unwrap();
        let xm = s.basis().to_matrix(&x);
        let quad = v.quadrature();
        let form = v.q_form(&quad.gradient(&gc), &quad.gradient(&xm));
        let scheme = -pairwise_map(x.len(), |i| x[i] * r.correction[i]);
        assert!(form > 0.0);
        assert!((form - scheme).abs() < 1e-10 * form, "{form} {scheme}");
    }

    #[test]
    fn quadrature_order_is_converged() {
        let s = system(8, NoiseSpec { modes: 8, ..NoiseSpec::default() });
        let model = EnthalpyModel::new(PhysicalParams::default()).unwrap();
        let x = crate::sde::initial_coefficients(
            s.basis(),
            &model,
            &crate::sde::InitialCondition::Slab { theta_solid: 0.5, theta_liquid: 1.0, width: 0.1 },
        )
        .unwrap();
        let c = s.composites(&x).unwrap();
        let gc = s.basis().interpolate(&c.g).unwrap();
        let xm = s.basis().to_matrix(&x);
        let form = |nodes: usize| {
            let v = Verifier::new(&s, VerifyOptions { quadrature_nodes: Some(nodes), ..VerifyOptions::default() });
            let q = v.quadrature();
            v.q_form(&q.gradient(&gc), &q.gradient(&xm))
        };
        let n = QuadratureGrid::default_nodes(s.basis(), s.noise().modes());
        let (a, b) = (form(n), form(2 * n));
        assert!((a - b).abs() < 1e-13 * b.abs(), "{a} {b}");
    }

    #[test]
    fn martingale_integrals_vanish_for_identity_map() {
        let s = system(6, NoiseSpec { modes: 6, ..NoiseSpec::default() });
        let v = Verifier::new(&s, VerifyOptions { martingale_grid: 256, ..VerifyOptions::default() });
        let mut x = vec![0.0; s.basis().len()];
        x[0] = 1.0;
        for m in v.martingale_integrals_with(&x, &|u| Ok(u)).unwrap() {
            assert!(m.abs() < 1e-8, "{m}");
        }
        assert!(v.martingale_integrals(&vec![0.0; x.len()]).unwrap().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn dyadic_lag_grid() {
        assert_eq!(dyadic_lags(5120, 10, 10), vec![10, 20, 40, 80, 160, 320, 640, 1280]);
        assert_eq!(dyadic_lags(100, 3, 10), vec![12, 24]);
        assert!(dyadic_lags(30, 10, 10).is_empty());
    }

    #[test]
    fn line_fit_recovers_power_law() {
        let x: Vec<f64> = (1..6).map(|i| (i as f64).ln()).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.5 * v - 1.0).collect();
        let (s, c) = fit_line(&x, &y);
        assert!((s - 2.5).abs() < 1e-12 && (c + 1.0).abs() < 1e-12);
    }

    #[test]
    fn small_ensembles_are_inconclusive() {
        let b = Basis::new(BasisSpec::new(2, 4)).unwrap();
        let e = increment_moment_scaling(&b, &brownian_signal(3, 64, 1e-3, 1, 1), &MomentOptions { modes: 1, ..MomentOptions::default() });
        assert!(e.iter().all(|e| e.status == Status::Inconclusive));
    }

    #[test]
    fn h_minus_distance_pads_coarse_modes() {
        let a = Basis::new(BasisSpec::new(2, 2)).unwrap();
        let b = Basis::new(BasisSpec::new(2, 4)).unwrap();
        let ca = vec![1.0, 0.5, -0.25, 2.0];
        let mut cb = vec![0.0; b.len()];
        for (j, k) in a.modes().iter().enumerate() {
            cb[b.index_of(*k).unwrap()] = ca[j];
        }
        assert_eq!(h_minus_distance(&b, &cb, &a, &ca), 0.0);
        cb[b.len() - 1] = 1.0;
        let l = b.lambdas()[b.len() - 1];
        assert!((h_minus_distance(&b, &cb, &a, &ca) - l.powf(-0.5)).abs() < 1e-15);
    }
}

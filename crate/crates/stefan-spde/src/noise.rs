//! Transport noise: divergence-free fields σ_k = μ_k e_k, the correction
//! matrix Q = Σ α_k² σ_k ⊗ σ_k and the summability validators.
//!
//! With e_k = φ_a(ξ₁)φ_b(ξ₂), φ_c = √2 sin(cπ·), the field is separable:
//! σ_k = (φ_a² · φ_bφ_b′, −φ_aφ_a′ · φ_b²).

use std::f64::consts::PI;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{leading_modes, mode_eigenvalue, Basis, Mode};
use crate::enthalpy::EnthalpyModel;
use crate::trig::TrigPoly;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("transport noise is unavailable in 1D (divergence-free fields vanishing on the boundary are zero)")]
    OneDimensional,
    #[error("invalid noise parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("noise mode {index} out of range for {len} modes")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("noise mode {mode:?} is not resolved by {modes} modes per axis")]
    Unresolved { mode: Mode, modes: usize },
    #[error("grid shape {got:?} does not match expected {expected:?}")]
    ShapeMismatch { got: (usize, usize), expected: (usize, usize) },
    #[error("assumption rejected: {0}")]
    Rejected(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub modes: usize,
    pub alpha0: f64,
    pub decay: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { modes: 32, alpha0: 0.5, decay: 2.0 }
    }
}

impl NoiseSpec {
    pub fn silent() -> Self {
        Self { modes: 0, alpha0: 0.0, decay: 2.0 }
    }

    pub fn alpha_for(&self, lambda: f64) -> f64 {
        self.alpha0 * (1.0 + lambda).powf(-self.decay)
    }

    fn check(&self) -> Result<(), NoiseError> {
        if !(self.alpha0.is_finite() && self.alpha0 >= 0.0) {
            return Err(NoiseError::InvalidParameter { name: "alpha0", reason: format!("must be ≥ 0, got {}", self.alpha0) });
        }
        if !(self.decay.is_finite() && self.decay > 0.0) {
            return Err(NoiseError::InvalidParameter { name: "decay", reason: format!("must be > 0, got {}", self.decay) });
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.modes > 0 && self.alpha0 > 0.0
    }
}

/// 1D factors of σ_k: σ₁ = f1(ξ₁)·g1(ξ₂), σ₂ = f2(ξ₁)·g2(ξ₂).
#[derive(Debug, Clone)]
pub struct SigmaFactors {
    pub f1: TrigPoly,
    pub f2: TrigPoly,
    pub g1: TrigPoly,
    pub g2: TrigPoly,
}

impl SigmaFactors {
    pub fn new(k: Mode) -> Self {
        let (a, b) = (k[0] as u32, k[1] as u32);
        let pa = TrigPoly::sine_mode(a);
        let pb = TrigPoly::sine_mode(b);
        Self {
            f1: pa.mul(&pa),
            f2: pa.mul(&TrigPoly::sine_mode_prime(a)).scale(-1.0),
            g1: pb.mul(&TrigPoly::sine_mode_prime(b)),
            g2: pb.mul(&pb),
        }
    }

    pub fn at(&self, x: f64, y: f64) -> (f64, f64) {
        (self.f1.eval(x) * self.g1.eval(y), self.f2.eval(x) * self.g2.eval(y))
    }
}

/// σ_k at a point, closed form.
pub fn sigma_at(k: Mode, x: f64, y: f64) -> (f64, f64) {
    let (wa, wb) = (k[0] as f64 * PI, k[1] as f64 * PI);
    let (sa, ca, sb, cb) = ((wa * x).sin(), (wa * x).cos(), (wb * y).sin(), (wb * y).cos());
    (4.0 * wb * sa * sa * sb * cb, -4.0 * wa * sa * ca * sb * sb)
}

/// |μ_k|_∞ = 2π·max(k₁, k₂) on the unit square.
pub fn mu_sup(k: Mode) -> f64 {
    2.0 * PI * k[0].max(k[1]) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ip1Report {
    pub modes: usize,
    pub partial_sum: f64,
    pub extended_sum: f64,
    pub increment_ratio: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ip2Ip3Report {
    pub sup_series_sum: f64,
    pub sup_series_increment_ratio: f64,
    pub trace_tail_ratio: f64,
    pub tail_threshold: f64,
    pub ip2_passed: bool,
    pub min_eigenvalue: f64,
    pub gamma: f64,
    pub ip3_passed: bool,
}

pub const IP1_THRESHOLD: f64 = 1e-3;
pub const TAIL_THRESHOLD: f64 = 0.01;
pub const PSD_TOLERANCE: f64 = -1e-12;

fn increment_ratio(partial: f64, extended: f64) -> f64 {
    if extended > 0.0 {
        (extended - partial) / extended
    } else {
        0.0
    }
}

/// Partial sums of Σ α_k² λ_k² |μ_k|²_∞ over K and 2K modes.
pub fn check_ip1(spec: &NoiseSpec) -> Ip1Report {
    let k = if spec.alpha0 > 0.0 { spec.modes } else { 0 };
    let modes = leading_modes(2, 2 * k);
    let term = |m: &Mode| {
        let l = mode_eigenvalue(*m);
        let a = spec.alpha_for(l);
        a * a * l * l * mu_sup(*m).powi(2)
    };
    let partial: f64 = modes.iter().take(k).map(term).sum();
    let extended: f64 = partial + modes.iter().skip(k).map(term).sum::<f64>();
    let ratio = increment_ratio(partial, extended);
    Ip1Report {
        modes: k,
        partial_sum: partial,
        extended_sum: extended,
        increment_ratio: ratio,
        threshold: IP1_THRESHOLD,
        passed: ratio < IP1_THRESHOLD,
    }
}

#[derive(Debug, Clone)]
pub struct NoiseModel {
    spec: NoiseSpec,
    modes: Vec<Mode>,
    alphas: Vec<f64>,
    factors: Vec<SigmaFactors>,
    sigma: Vec<(Array2<f64>, Array2<f64>)>,
    q: [Array2<f64>; 3],
    min_eig: Array2<f64>,
    gamma: f64,
    ip1: Ip1Report,
    ip23: Ip2Ip3Report,
    diagnostics: Vec<String>,
}

impl NoiseModel {
    /// Assembles σ_k, Q and the validator reports on the basis grid.
    pub fn new(basis: &Basis, spec: NoiseSpec) -> Result<Self, NoiseError> {
        spec.check()?;
        let mut spec = spec;
        let mut diagnostics = Vec::new();
        if basis.dim() == 1 {
            if spec.is_active() {
                diagnostics.push("transport noise unavailable in 1D: alpha0 forced to 0".to_string());
            }
            spec.alpha0 = 0.0;
            spec.modes = 0;
        }
        if spec.modes > basis.len() {
            return Err(NoiseError::InvalidParameter {
                name: "noise_modes",
                reason: format!("K = {} exceeds n = {}", spec.modes, basis.len()),
            });
        }
        let modes = if basis.dim() == 2 { leading_modes(2, spec.modes) } else { Vec::new() };
        let m = basis.spec().modes;
        if let Some(&k) = modes.iter().find(|k| k[0] > m || k[1] > m) {
            return Err(NoiseError::Unresolved { mode: k, modes: m });
        }
        let alphas: Vec<f64> = modes.iter().map(|&k| spec.alpha_for(mode_eigenvalue(k))).collect();
        let factors: Vec<SigmaFactors> = modes.iter().map(|&k| SigmaFactors::new(k)).collect();

        let shape = basis.grid_shape();
        let x = basis.nodes();
        let mut sigma = Vec::with_capacity(modes.len());
        let mut q: [Array2<f64>; 3] = [Array2::zeros(shape), Array2::zeros(shape), Array2::zeros(shape)];
        let mut dq = [Array2::<f64>::zeros(shape), Array2::zeros(shape), Array2::zeros(shape), Array2::zeros(shape)];
        for (f, &a) in factors.iter().zip(&alphas) {
            let tab = |p: &TrigPoly| x.iter().map(|&v| p.eval(v)).collect::<Vec<f64>>();
            let (f1, f2, g1, g2) = (tab(&f.f1), tab(&f.f2), tab(&f.g1), tab(&f.g2));
            let (df1, df2) = (tab(&f.f1.derivative()), tab(&f.f2.derivative()));
            let (dg1, dg2) = (tab(&f.g1.derivative()), tab(&f.g2.derivative()));
            let s1 = Array2::from_shape_fn(shape, |(i, j)| f1[i] * g1[j]);
            let s2 = Array2::from_shape_fn(shape, |(i, j)| f2[i] * g2[j]);
            let a2 = a * a;
            for ((i, j), v) in q[0].indexed_iter_mut() {
                *v += a2 * s1[[i, j]] * s1[[i, j]];
            }
            for ((i, j), v) in q[1].indexed_iter_mut() {
                *v += a2 * s1[[i, j]] * s2[[i, j]];
            }
            for ((i, j), v) in q[2].indexed_iter_mut() {
                *v += a2 * s2[[i, j]] * s2[[i, j]];
            }
            for i in 0..shape.0 {
                for j in 0..shape.1 {
                    let (u1, u2) = (s1[[i, j]], s2[[i, j]]);
                    let (d1u1, d1u2) = (df1[i] * g1[j], df2[i] * g2[j]);
                    let (d2u1, d2u2) = (f1[i] * dg1[j], f2[i] * dg2[j]);
                    dq[0][[i, j]] += a2 * 2.0 * u1 * d1u1;
                    dq[1][[i, j]] += a2 * (d1u1 * u2 + u1 * d1u2);
                    dq[2][[i, j]] += a2 * (d2u1 * u2 + u1 * d2u2);
                    dq[3][[i, j]] += a2 * 2.0 * u2 * d2u2;
                }
            }
            sigma.push((s1, s2));
        }
        let min_eig = Array2::from_shape_fn(shape, |(i, j)| {
            let (a, b, c) = (q[0][[i, j]], q[1][[i, j]], q[2][[i, j]]);
            0.5 * (a + c - ((a - c) * (a - c) + 4.0 * b * b).sqrt())
        });
        let sup = |a: &Array2<f64>| a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let gamma = [
            sup(&q[0]) + sup(&dq[0]),
            sup(&q[1]) + sup(&dq[1]),
            sup(&q[1]) + sup(&dq[2]),
            sup(&q[2]) + sup(&dq[3]),
        ]
        .into_iter()
        .fold(0.0, f64::max);

        let ip1 = check_ip1(&spec);
        let ip23 = assess_ip2_ip3(&spec, &factors, &alphas, &min_eig, gamma);
        Ok(Self { spec, modes, alphas, factors, sigma, q, min_eig, gamma, ip1, ip23, diagnostics })
    }

    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha(&self, k: usize) -> Result<f64, NoiseError> {
        self.alphas.get(k).copied().ok_or(NoiseError::IndexOutOfRange { index: k, len: self.len() })
    }

    pub fn factors(&self) -> &[SigmaFactors] {
        &self.factors
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn ip1(&self) -> &Ip1Report {
        &self.ip1
    }

    pub fn ip2_ip3(&self) -> &Ip2Ip3Report {
        &self.ip23
    }

    pub fn diagnostics(&self) -> &[String] {
        &self.diagnostics
    }

    /// (q₁₁, q₁₂, q₂₂) on the grid.
    pub fn q(&self) -> &[Array2<f64>; 3] {
        &self.q
    }

    pub fn min_eigenvalue_field(&self) -> &Array2<f64> {
        &self.min_eig
    }

    pub fn build_sigma(&self, k: usize) -> Result<&(Array2<f64>, Array2<f64>), NoiseError> {
        if self.spec.modes == 0 && self.diagnostics.iter().any(|d| d.contains("1D")) {
            return Err(NoiseError::OneDimensional);
        }
        self.sigma.get(k).ok_or(NoiseError::IndexOutOfRange { index: k, len: self.len() })
    }

    /// Rejects the model when (Ip2) or (Ip3) fails; (Ip1) only when `strict`.
    pub fn require_assumptions(&self, strict_ip1: bool) -> Result<(), NoiseError> {
        let mut failed = Vec::new();
        if strict_ip1 && !self.ip1.passed {
            failed.push(format!(
                "(Ip1) Σα_k²λ_k²|μ_k|²_∞ not converged: K→2K increment ratio {:.3e} ≥ {:.0e}",
                self.ip1.increment_ratio, IP1_THRESHOLD
            ));
        }
        if !self.ip23.ip2_passed {
            failed.push(format!(
                "(Ip2) Q series not converged: trace tail ratio {:.3e} ≥ {:.0e}",
                self.ip23.trace_tail_ratio, TAIL_THRESHOLD
            ));
        }
        if !self.ip23.ip3_passed {
            failed.push(format!(
                "(Ip3) Q not positive semidefinite or γ infinite: min eigenvalue {:.3e}, γ = {}",
                self.ip23.min_eigenvalue, self.ip23.gamma
            ));
        }
        if failed.is_empty() {
            Ok(())
        } else {
            Err(NoiseError::Rejected(failed.join("; ")))
        }
    }

    /// B(θ): the K fields α_k σ_k·∇η(θ), gradient by spectral differentiation.
    pub fn apply_b(&self, basis: &Basis, model: &EnthalpyModel, theta: &Array2<f64>) -> Result<Vec<Array2<f64>>, NoiseError> {
        if theta.dim() != basis.grid_shape() {
            return Err(NoiseError::ShapeMismatch { got: theta.dim(), expected: basis.grid_shape() });
        }
        let eta = theta.mapv(|t| model.eta(t));
        let coef = basis.interpolate(&eta).expect("shape checked");
        let (gx, gy) = basis.gradient_full(&coef);
        Ok(self
            .sigma
            .iter()
            .zip(&self.alphas)
            .map(|((s1, s2), &a)| {
                let mut out = Array2::zeros(theta.dim());
                ndarray::Zip::from(&mut out).and(s1).and(s2).and(&gx).and(&gy).for_each(|o, &u1, &u2, &dx, &dy| {
                    *o = a * (u1 * dx + u2 * dy);
                });
                out
            })
            .collect())
    }

    /// Q diagnostics as CSV: grid point, q₁₁, q₁₂, q₂₂, min eigenvalue.
    pub fn q_csv(&self, basis: &Basis) -> String {
        use std::fmt::Write as _;
        let x = basis.nodes();
        let mut s = String::from("x,y,q11,q12,q22,min_eigenvalue\n");
        let (nx, ny) = basis.grid_shape();
        for i in 0..nx {
            for j in 0..ny {
                let y = if basis.dim() == 2 { x[j] } else { 0.0 };
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    x[i], y, self.q[0][[i, j]], self.q[1][[i, j]], self.q[2][[i, j]], self.min_eig[[i, j]]
                );
            }
        }
        s
    }
}

fn assess_ip2_ip3(spec: &NoiseSpec, factors: &[SigmaFactors], alphas: &[f64], min_eig: &Array2<f64>, gamma: f64) -> Ip2Ip3Report {
    let k = factors.len();
    let sup_term = |m: &Mode| {
        let a = spec.alpha_for(mode_eigenvalue(*m));
        let s = 2.0 * mu_sup(*m);
        a * a * s * s
    };
    let ext = leading_modes(2, 2 * k);
    let partial: f64 = ext.iter().take(k).map(sup_term).sum();
    let extended = partial + ext.iter().skip(k).map(sup_term).sum::<f64>();
    let ratio = increment_ratio(partial, extended);

    let traces: Vec<f64> = factors
        .iter()
        .zip(alphas)
        .map(|(f, a)| {
            let l2 = |p: &TrigPoly| p.mul(p).integral();
            a * a * (l2(&f.f1) * l2(&f.g1) + l2(&f.f2) * l2(&f.g2))
        })
        .collect();
    let total: f64 = traces.iter().sum();
    let decile = k.div_ceil(10);
    let tail: f64 = traces.iter().skip(k - decile).sum();
    let tail_ratio = if total > 0.0 { tail / total } else { 0.0 };
    let min_eigenvalue = min_eig.iter().copied().fold(f64::INFINITY, f64::min);
    let min_eigenvalue = if min_eigenvalue.is_finite() { min_eigenvalue } else { 0.0 };
    Ip2Ip3Report {
        sup_series_sum: extended,
        sup_series_increment_ratio: ratio,
        trace_tail_ratio: tail_ratio,
        tail_threshold: TAIL_THRESHOLD,
        ip2_passed: tail_ratio < TAIL_THRESHOLD,
        min_eigenvalue,
        gamma,
        ip3_passed: min_eigenvalue >= PSD_TOLERANCE && gamma.is_finite(),
    }
}

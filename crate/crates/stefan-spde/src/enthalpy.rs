//! Constitutive functions of the smoothed enthalpy formulation.
//!
//! Temperature θ maps to enthalpy X = γ̃(θ). The flux potential Ψ acts on X,
//! the cutoff η and the correction integrand g act on θ.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::smooth::{step, step_integral, step_prime, step_square_integral, STEP_SQUARE_MEAN};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("hypothesis violated: {}", .0.join("; "))]
    HypothesisViolated(Vec<String>),
    #[error("enthalpy inversion did not converge at x = {x}")]
    InversionFailed { x: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub c1: f64,
    pub c2: f64,
    pub k1: f64,
    pub k2: f64,
    pub latent_heat: f64,
    pub eta_cutoff: f64,
    pub eta_lipschitz: f64,
    pub mush_width: f64,
    pub psi_floor: f64,
    pub blend_width: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self {
            c1: 1.0,
            c2: 1.0,
            k1: 1.0,
            k2: 1.0,
            latent_heat: 1.0,
            eta_cutoff: 0.05,
            eta_lipschitz: 1.0,
            mush_width: 0.05,
            psi_floor: 0.05,
            blend_width: 0.1,
        }
    }
}

impl PhysicalParams {
    /// Unit heat capacity and conductivity, no latent heat: γ̃ = id, Ψ = id.
    pub fn heat_reduction() -> Self {
        Self {
            c1: 1.0,
            c2: 1.0,
            k1: 1.0,
            k2: 1.0,
            latent_heat: 0.0,
            psi_floor: 1.0,
            ..Self::default()
        }
    }

    pub fn solid_slope(&self) -> f64 {
        self.k1 / self.c1
    }

    pub fn liquid_slope(&self) -> f64 {
        self.k2 / self.c2
    }

    pub fn psi_prime_max(&self) -> f64 {
        self.solid_slope().max(self.liquid_slope())
    }

    fn check(&self) -> Result<(), ModelError> {
        let fields: [(&'static str, f64); 10] = [
            ("c1", self.c1),
            ("c2", self.c2),
            ("k1", self.k1),
            ("k2", self.k2),
            ("latent_heat", self.latent_heat),
            ("eta_cutoff", self.eta_cutoff),
            ("eta_lipschitz", self.eta_lipschitz),
            ("mush_width", self.mush_width),
            ("psi_floor", self.psi_floor),
            ("blend_width", self.blend_width),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(invalid(name, format!("must be finite, got {v}")));
            }
        }
        for (name, v) in [("c1", self.c1), ("c2", self.c2), ("k1", self.k1), ("k2", self.k2)] {
            if v <= 0.0 {
                return Err(invalid(name, format!("must be > 0, got {v}")));
            }
        }
        if self.latent_heat < 0.0 {
            return Err(invalid("latent_heat", format!("must be ≥ 0, got {}", self.latent_heat)));
        }
        for (name, v) in [
            ("eta_cutoff", self.eta_cutoff),
            ("eta_lipschitz", self.eta_lipschitz),
            ("mush_width", self.mush_width),
            ("psi_floor", self.psi_floor),
            ("blend_width", self.blend_width),
        ] {
            if v <= 0.0 {
                return Err(invalid(name, format!("must be > 0, got {v}")));
            }
        }
        let slope_min = self.solid_slope().min(self.liquid_slope());
        if self.psi_floor > slope_min {
            return Err(invalid(
                "psi_floor",
                format!("must be ≤ min(k1/c1, k2/c2) = {slope_min}, got {}", self.psi_floor),
            ));
        }
        if self.latent_heat > 0.0 && self.blend_width >= 0.5 * self.latent_heat {
            return Err(invalid(
                "blend_width",
                format!("must be < latent_heat/2 = {}, got {}", 0.5 * self.latent_heat, self.blend_width),
            ));
        }
        Ok(())
    }
}

fn invalid(name: &'static str, reason: String) -> ModelError {
    ModelError::InvalidParameter { name, reason }
}

/// Shape of the turbulence cutoff η.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum EtaProfile {
    /// Zero below ε, smoothstep rise on [ε, 2ε], slope L beyond.
    #[default]
    Cutoff,
    /// η(θ) = Lθ. Test variant for the Itô-form identity.
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnthalpyModel {
    params: PhysicalParams,
    eta_profile: EtaProfile,
    liquid_start: f64,
}

const INVERSION_CAP: usize = 200;

impl EnthalpyModel {
    pub fn new(params: PhysicalParams) -> Result<Self, ModelError> {
        params.check()?;
        let liquid_start = params.c2 * params.mush_width + params.latent_heat;
        Ok(Self { params, eta_profile: EtaProfile::Cutoff, liquid_start })
    }

    pub fn with_eta_profile(mut self, profile: EtaProfile) -> Self {
        self.eta_profile = profile;
        self
    }

    pub fn params(&self) -> &PhysicalParams {
        &self.params
    }

    pub fn eta_profile(&self) -> EtaProfile {
        self.eta_profile
    }

    fn ramp(&self, r: f64) -> f64 {
        let em = self.params.mush_width;
        (r + em) / (2.0 * em)
    }

    pub fn gamma_tilde(&self, r: f64) -> f64 {
        let p = &self.params;
        let u = self.ramp(r);
        p.c1 * r + (p.c2 - p.c1) * 2.0 * p.mush_width * step_integral(u) + p.latent_heat * step(u)
    }

    pub fn gamma_tilde_prime(&self, r: f64) -> f64 {
        let p = &self.params;
        let u = self.ramp(r);
        p.c1 + (p.c2 - p.c1) * step(u) + p.latent_heat * step_prime(u) / (2.0 * p.mush_width)
    }

    /// Inverse enthalpy. Exact on the affine branches, safeguarded Newton in the mush.
    pub fn gamma_tilde_inv(&self, x: f64) -> Result<f64, ModelError> {
        let p = &self.params;
        if !x.is_finite() {
            return Err(ModelError::InversionFailed { x });
        }
        let solid_end = -p.c1 * p.mush_width;
        if x <= solid_end {
            return Ok(x / p.c1);
        }
        if x >= self.liquid_start {
            return Ok((x - p.latent_heat) / p.c2);
        }
        let tol = 1e-12 * x.abs().max(1.0);
        let (mut lo, mut hi) = (-p.mush_width, p.mush_width);
        let mut r = lo + (hi - lo) * (x - solid_end) / (self.liquid_start - solid_end);
        for _ in 0..INVERSION_CAP {
            let f = self.gamma_tilde(r) - x;
            if f.abs() <= tol {
                return Ok(r);
            }
            if f > 0.0 {
                hi = r;
            } else {
                lo = r;
            }
            let newton = r - f / self.gamma_tilde_prime(r);
            r = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if hi - lo <= f64::EPSILON * r.abs().max(1e-300) {
                return Ok(r);
            }
        }
        Err(ModelError::InversionFailed { x })
    }

    /// (γ̃⁻¹)′(x) = 1/γ̃′(γ̃⁻¹(x)).
    pub fn gamma_tilde_inv_prime(&self, x: f64) -> Result<f64, ModelError> {
        Ok(1.0 / self.gamma_tilde_prime(self.gamma_tilde_inv(x)?))
    }

    pub fn psi(&self, x: f64) -> f64 {
        let p = &self.params;
        let (a1, a2, f, d, l) = (p.solid_slope(), p.liquid_slope(), p.psi_floor, p.blend_width, p.latent_heat);
        f * x - (a1 - f) * d * step_integral(-x / d)
            + (a2 - f) * d * (step_integral((x - l) / d) - step_integral(-l / d))
    }

    pub fn psi_prime(&self, x: f64) -> f64 {
        let p = &self.params;
        let (a1, a2, f, d, l) = (p.solid_slope(), p.liquid_slope(), p.psi_floor, p.blend_width, p.latent_heat);
        f + (a1 - f) * step(-x / d) + (a2 - f) * step((x - l) / d)
    }

    pub fn eta(&self, theta: f64) -> f64 {
        let p = &self.params;
        match self.eta_profile {
            EtaProfile::Cutoff => {
                let e = p.eta_cutoff;
                p.eta_lipschitz * e * step_integral((theta - e) / e)
            }
            EtaProfile::Linear => p.eta_lipschitz * theta,
        }
    }

    pub fn eta_prime(&self, theta: f64) -> f64 {
        let p = &self.params;
        match self.eta_profile {
            EtaProfile::Cutoff => p.eta_lipschitz * step((theta - p.eta_cutoff) / p.eta_cutoff),
            EtaProfile::Linear => p.eta_lipschitz,
        }
    }

    /// g(θ) = ½∫₀^θ (η′)².
    pub fn g_of(&self, theta: f64) -> f64 {
        let p = &self.params;
        let l2 = p.eta_lipschitz * p.eta_lipschitz;
        match self.eta_profile {
            EtaProfile::Cutoff => {
                let e = p.eta_cutoff;
                0.5 * l2 * e * step_square_integral((theta - e) / e)
            }
            EtaProfile::Linear => 0.5 * l2 * theta,
        }
    }

    pub fn g_prime(&self, theta: f64) -> f64 {
        let d = self.eta_prime(theta);
        0.5 * d * d
    }

    /// g(2ε) from the cached closed form.
    pub fn g_ramp_top(&self) -> f64 {
        let p = &self.params;
        0.5 * p.eta_lipschitz * p.eta_lipschitz * p.eta_cutoff * STEP_SQUARE_MEAN
    }

    /// θ-range sampled by the validator.
    pub fn validation_range(&self) -> (f64, f64) {
        let p = &self.params;
        let span = 2.0f64.max(4.0 * (p.mush_width + 2.0 * p.eta_cutoff + p.blend_width + p.latent_heat));
        (-span, span)
    }

    /// Certifies the regularity hypotheses on a 10⁴-point grid.
    pub fn validate(&self) -> ValidationReport {
        const N: usize = 10_000;
        let p = &self.params;
        let (lo, hi) = self.validation_range();
        let thetas: Vec<f64> = (0..N).map(|i| lo + (hi - lo) * i as f64 / (N - 1) as f64).collect();
        let (xlo, xhi) = (self.gamma_tilde(lo), self.gamma_tilde(hi));
        let xs: Vec<f64> = (0..N).map(|i| xlo + (xhi - xlo) * i as f64 / (N - 1) as f64).collect();

        let min_gp = thetas.iter().map(|&t| self.gamma_tilde_prime(t)).fold(f64::INFINITY, f64::min);
        let mut inv_min = f64::INFINITY;
        let mut inv_max = f64::NEG_INFINITY;
        let mut inverse_ok = true;
        let mut prev = f64::NEG_INFINITY;
        for &x in &xs {
            match (self.gamma_tilde_inv(x), self.gamma_tilde_inv_prime(x)) {
                (Ok(r), Ok(d)) => {
                    if r < prev {
                        inverse_ok = false;
                    }
                    prev = r;
                    inv_min = inv_min.min(d);
                    inv_max = inv_max.max(d);
                }
                _ => inverse_ok = false,
            }
        }
        let min_psi = xs.iter().map(|&x| self.psi_prime(x)).fold(f64::INFINITY, f64::min);
        let max_eta = thetas.iter().map(|&t| self.eta_prime(t).abs()).fold(0.0, f64::max);

        let checks = vec![
            HypothesisCheck::new("γ̃′ ≥ 1", min_gp, 1.0 - 1e-9, min_gp >= 1.0 - 1e-9),
            HypothesisCheck::new(
                "0 ≤ (γ̃⁻¹)′ ≤ 1",
                inv_max,
                1.0 + 1e-9,
                inverse_ok && inv_min >= 0.0 && inv_max <= 1.0 + 1e-9,
            ),
            HypothesisCheck::new("Ψ′ ≥ ψ₀", min_psi, p.psi_floor - 1e-12, min_psi >= p.psi_floor - 1e-12),
            HypothesisCheck::new(
                "|η′| ≤ L",
                max_eta,
                p.eta_lipschitz + 1e-12,
                max_eta <= p.eta_lipschitz + 1e-12,
            ),
        ];
        ValidationReport { checks }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisCheck {
    pub hypothesis: String,
    pub measured: f64,
    pub bound: f64,
    pub passed: bool,
}

impl HypothesisCheck {
    pub fn new(hypothesis: &str, measured: f64, bound: f64, passed: bool) -> Self {
        Self { hypothesis: hypothesis.to_string(), measured, bound, passed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<HypothesisCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn violations(&self) -> Vec<String> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.hypothesis.clone()).collect()
    }
}

/// Builds and validates a model, rejecting any violated hypothesis.
pub fn validate_model(params: PhysicalParams) -> Result<(EnthalpyModel, ValidationReport), ModelError> {
    let model = EnthalpyModel::new(params)?;
    let report = model.validate();
    if report.passed() {
        Ok((model, report))
    } else {
        Err(ModelError::HypothesisViolated(report.violations()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(f: impl FnOnce(&mut PhysicalParams)) -> EnthalpyModel {
        let mut p = PhysicalParams::default();
        f(&mut p);
        EnthalpyModel::new(p).unwrap()
    }

    #[test]
    fn gamma_examples() {
        let id = EnthalpyModel::new(PhysicalParams::heat_reduction()).unwrap();
        assert_eq!(id.gamma_tilde(2.5), 2.5);
        assert_eq!(id.gamma_tilde_inv(-3.7).unwrap(), -3.7);

        let m = model(|p| p.mush_width = 0.1);
        assert!((m.gamma_tilde(-0.1) + 0.1).abs() < 1e-15);
        assert!((m.gamma_tilde(0.1) - 1.1).abs() < 1e-15);
        assert!((m.gamma_tilde_inv(1.1).unwrap() - 0.1).abs() < 1e-15);

        let m = model(|p| {
            p.c1 = 2.0;
            p.k1 = 2.0;
        });
        assert_eq!(m.gamma_tilde(-1.0), -2.0);
        assert!((m.gamma_tilde_inv(m.gamma_tilde(0.3)).unwrap() - 0.3).abs() < 1e-10);
    }

    #[test]
    fn inverse_against_bisection() {
        let m = model(|p| {
            p.c1 = 2.0;
            p.k1 = 2.0;
        });
        for i in 0..200 {
            let r = -0.06 + 0.12 * i as f64 / 199.0;
            let x = m.gamma_tilde(r);
            let (mut lo, mut hi) = (-1.0, 1.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if m.gamma_tilde(mid) < x {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            assert!((m.gamma_tilde_inv(x).unwrap() - 0.5 * (lo + hi)).abs() < 1e-10);
        }
    }

    #[test]
    fn psi_examples() {
        let m = model(|p| {
            p.k1 = 2.0;
            p.k2 = 2.0;
            p.psi_floor = 0.01;
        });
        assert!((m.psi(-2.0) + 4.0).abs() <= 2.0 * 0.1);
        assert_eq!(m.psi(0.0), 0.0);
        assert!((m.psi(0.5) - 0.01 * 0.5).abs() < 1e-15);
        assert_eq!(m.psi_prime(-10.0), 2.0);
        assert_eq!(m.psi_prime(0.5), 0.01);
        let h = 1e-5;
        let fd = (m.psi(0.37 + h) - m.psi(0.37 - h)) / (2.0 * h);
        assert!((fd - m.psi_prime(0.37)).abs() <= 1e-6 * m.psi_prime(0.37));
    }

    #[test]
    fn eta_and_g_examples() {
        let m = model(|_| {});
        let e = m.params().eta_cutoff;
        assert_eq!(m.eta(-5.0), 0.0);
        assert_eq!(m.eta(e / 2.0), 0.0);
        assert_eq!(m.eta_prime(3.0 * e), 1.0);
        assert!((m.eta(2.0 * e) - e / 2.0).abs() < 1e-15);
        assert_eq!(m.g_of(0.0), 0.0);
        assert_eq!(m.g_of(e), 0.0);
        let top = m.g_of(2.0 * e);
        assert!((top - m.g_ramp_top()).abs() < 1e-15);
        assert!((m.g_of(0.7) - (top + 0.5 * (0.7 - 2.0 * e))).abs() < 1e-14);
    }

    #[test]
    fn default_validates() {
        let (_, report) = validate_model(PhysicalParams::default()).unwrap();
        assert!(report.passed());
        assert_eq!(report.checks.len(), 4);
    }

    #[test]
    fn low_liquid_capacity_rejected() {
        let mut p = PhysicalParams::default();
        p.c2 = 0.5;
        p.psi_floor = 0.05;
        let err = validate_model(p).unwrap_err().to_string();
        assert!(err.contains("γ̃′ ≥ 1"), "{err}");
        assert!(err.contains("0 ≤ (γ̃⁻¹)′ ≤ 1"), "{err}");
    }

    #[test]
    fn floor_above_slopes_rejected() {
        let mut p = PhysicalParams::default();
        p.psi_floor = 2.0;
        assert!(matches!(
            EnthalpyModel::new(p),
            Err(ModelError::InvalidParameter { name: "psi_floor", .. })
        ));
    }

    #[test]
    fn heat_reduction_is_identity() {
        let m = EnthalpyModel::new(PhysicalParams::heat_reduction()).unwrap();
        for i in 0..50 {
            let x = -3.0 + 0.13 * i as f64;
            assert!((m.psi(x) - x).abs() < 1e-14);
            assert!((m.gamma_tilde(x) - x).abs() < 1e-14);
            assert_eq!(m.psi_prime(x), 1.0);
        }
    }
}

use ndarray::Array2;
use proptest::prelude::*;

use stefan_spde::basis::{Basis, BasisSpec};
use stefan_spde::config::{parse_str, Config};
use stefan_spde::enthalpy::{EnthalpyModel, EtaProfile, PhysicalParams};
use stefan_spde::io::{decode_dw, encode_dw, parse_snapshots_csv, snapshots_csv};
use stefan_spde::linalg::pairwise_map;
use stefan_spde::noise::{check_ip1, NoiseModel, NoiseSpec};
use stefan_spde::runner::with_threads;
use stefan_spde::sde::{GalerkinSystem, Ip1Policy, Run};
use stefan_spde::verification::{Verifier, VerifyOptions};

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig { cases: n, failure_persistence: None, ..ProptestConfig::default() }
}

fn physics() -> impl Strategy<Value = PhysicalParams> {
    (1.0..3.0f64, 1.0..3.0f64, 0.5..3.0f64, 0.5..3.0f64, 0.61..2.0f64, 0.02..0.2f64, 0.2..2.0f64, 0.02..0.2f64, 0.05..0.3f64)
        .prop_map(|(c1, c2, k1, k2, latent_heat, eta_cutoff, eta_lipschitz, mush_width, blend_width)| PhysicalParams {
            c1,
            c2,
            k1,
            k2,
            latent_heat,
            eta_cutoff,
            eta_lipschitz,
            mush_width,
            psi_floor: 0.5 * (k1 / c1).min(k2 / c2).min(1.0),
            blend_width,
        })
}

fn coefficients(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, n)
}

/// Coefficients with decay (1 + j)^-1 so grid values stay moderate.
fn smooth_state(basis: &Basis, raw: &[f64], scale: f64) -> Vec<f64> {
    raw.iter().enumerate().take(basis.len()).map(|(j, v)| scale * v / (1.0 + j as f64)).collect()
}

fn noisy_system(m: usize, k: usize, physics: PhysicalParams, profile: EtaProfile, forcing: Vec<f64>) -> GalerkinSystem {
    let basis = Basis::new(BasisSpec::new(2, m)).unwrap();
    let model = EnthalpyModel::new(physics).unwrap().with_eta_profile(profile);
    let noise = NoiseModel::new(&basis, NoiseSpec { modes: k, alpha0: 0.5, decay: 1.0 }).unwrap();
    GalerkinSystem::new(basis, model, noise, forcing)
}

proptest! {
    #![proptest_config(cases(48))]

    #[test]
    fn flux_potential_is_strongly_monotone(p in physics(), x in -6.0..6.0f64, y in -6.0..6.0f64) {
        let m = EnthalpyModel::new(p).unwrap();
        let lhs = (m.psi(x) - m.psi(y)) * (x - y);
        prop_assert!(lhs >= p.psi_floor * (x - y).powi(2) - 1e-10, "{lhs}");
    }

    #[test]
    fn enthalpy_inverse_round_trips(p in physics(), r in prop::collection::vec(-8.0..8.0f64, 64)) {
        let m = EnthalpyModel::new(p).unwrap();
        for &v in &r {
            let back = m.gamma_tilde_inv(m.gamma_tilde(v)).unwrap();
            prop_assert!((back - v).abs() <= 1e-10, "{v} -> {back}");
        }
    }

    #[test]
    fn enthalpy_is_increasing(p in physics(), a in -8.0..8.0f64, b in -8.0..8.0f64) {
        let m = EnthalpyModel::new(p).unwrap();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(m.gamma_tilde(hi) - m.gamma_tilde(lo) >= (hi - lo) * (1.0 - 1e-12));
    }

    #[test]
    fn correction_integrand_chain_rule(p in physics(), theta in -3.0..3.0f64) {
        let m = EnthalpyModel::new(p).unwrap();
        let h = 1e-5;
        let fd = (m.g_of(theta + h) - m.g_of(theta - h)) / (2.0 * h);
        let exact = 0.5 * m.eta_prime(theta).powi(2);
        prop_assert!((fd - exact).abs() <= 1e-6, "{fd} vs {exact}");
        prop_assert!((m.g_prime(theta) - exact).abs() <= 1e-12);
    }

    #[test]
    fn transforms_round_trip(dim in 1usize..=2, m in 2usize..=12, raw in coefficients(144)) {
        let basis = Basis::new(BasisSpec::new(dim, m)).unwrap();
        let c: Vec<f64> = raw.into_iter().take(basis.len()).collect();
        let back = basis.project(&basis.synthesize(&c)).unwrap();
        for (a, b) in c.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        let g = basis.synthesize(&c);
        let l2 = basis.integrate(&g.mapv(|v| v * v)).sqrt();
        prop_assert!((l2 - basis.norm_l2(&c)).abs() <= 1e-12 * (1.0 + l2));
    }

    #[test]
    fn negative_norms_are_ordered(m in 2usize..=10, beta in 1.0..6.0f64, raw in coefficients(100)) {
        let basis = Basis::new(BasisSpec::new(2, m)).unwrap();
        let c: Vec<f64> = raw.into_iter().take(basis.len()).collect();
        let l1 = basis.lambdas()[0];
        let hb = basis.norm_h_minus(&c, beta);
        let h1 = basis.norm_h_minus(&c, 1.0);
        prop_assert!(hb <= l1.powf((1.0 - beta) / 2.0) * h1 * (1.0 + 1e-12));
        prop_assert!(h1 <= basis.norm_l2(&c) / l1.sqrt() * (1.0 + 1e-12));
    }

    #[test]
    fn correction_partial_sums_are_psd_monotone(k1 in 1usize..16, extra in 1usize..16) {
        let basis = Basis::new(BasisSpec::new(2, 8)).unwrap();
        let q = |k: usize| NoiseModel::new(&basis, NoiseSpec { modes: k, ..NoiseSpec::default() }).unwrap().q().clone();
        let (a, b) = (q(k1), q(k1 + extra));
        for ((i, j), _) in a[0].indexed_iter() {
            let (d11, d12, d22) = (b[0][[i, j]] - a[0][[i, j]], b[1][[i, j]] - a[1][[i, j]], b[2][[i, j]] - a[2][[i, j]]);
            let scale = b[0][[i, j]] + b[2][[i, j]];
            let lmin = 0.5 * (d11 + d22 - ((d11 - d22).powi(2) + 4.0 * d12 * d12).sqrt());
            prop_assert!(lmin >= -1e-14 * (1.0 + scale), "{lmin}");
        }
    }
}

proptest! {
    #![proptest_config(cases(12))]

    #[test]
    fn hilbert_schmidt_bound(raw in coefficients(64), scale in 0.1..3.0f64) {
        let m = 8;
        let basis = Basis::new(BasisSpec::new(2, m)).unwrap();
        let spec = NoiseSpec { modes: 16, ..NoiseSpec::default() };
        let noise = NoiseModel::new(&basis, spec).unwrap();
        let model = EnthalpyModel::new(PhysicalParams::default()).unwrap();
        let c = smooth_state(&basis, &raw, scale);
        let theta = basis.synthesize(&c);
        let hs: f64 = noise.apply_b(&basis, &model, &theta).unwrap().iter().map(|v| basis.integrate(&v.mapv(|x| x * x))).sum();
        let l = model.params().eta_lipschitz;
        let cst = basis.sup_norm_constant();
        let bound = l * l * cst * cst * check_ip1(&spec).partial_sum * basis.norm_h1(&c).powi(2);
        prop_assert!(hs <= bound, "{hs} > {bound}");
    }

    #[test]
    fn linear_cutoff_correction_is_stratonovich_term(raw in coefficients(64), scale in 0.1..2.0f64) {
        let s = noisy_system(8, 12, PhysicalParams::heat_reduction(), EtaProfile::Linear, vec![0.0; 64]);
        let x = smooth_state(s.basis(), &raw, scale);
        let r = s.rates(&x).unwrap();
        let v = Verifier::new(&s, VerifyOptions::default());
        let quad = v.quadrature();
        let gx = quad.gradient(&s.basis().to_matrix(&x));
        let l2 = s.model().params().eta_lipschitz.powi(2);
        let strat: Vec<f64> = (0..s.basis().len())
            .map(|j| {
                let mut e = vec![0.0; s.basis().len()];
                e[j] = 1.0;
                -0.5 * l2 * v.q_form(&quad.gradient(&s.basis().to_matrix(&e)), &gx)
            })
            .collect();
        let scale = strat.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = strat.iter().zip(&r.correction).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        prop_assert!(scale > 0.0);
        prop_assert!(err <= 1e-10 * scale, "{err} vs scale {scale}");
    }

    #[test]
    fn drift_and_diffusion_lie_in_the_span(raw in coefficients(64), scale in 0.1..2.0f64) {
        let s = noisy_system(8, 12, PhysicalParams::default(), EtaProfile::Cutoff, vec![0.0; 64]);
        let x = smooth_state(s.basis(), &raw, scale);
        let b = s.basis();
        let again = |v: &[f64]| b.project(&b.synthesize(v)).unwrap();
        let d = s.drift(&x).unwrap();
        for (a, c) in d.iter().zip(again(&d)) {
            prop_assert!((a - c).abs() <= 1e-10 * (1.0 + a.abs()));
        }
        for col in s.diffusion(&x).unwrap() {
            for (a, c) in col.iter().zip(again(&col)) {
                prop_assert!((a - c).abs() <= 1e-10 * (1.0 + a.abs()));
            }
        }
    }

    #[test]
    fn drift_is_affine_in_forcing(raw in coefficients(64), f1 in coefficients(64), f2 in coefficients(64)) {
        let sum: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| a + b).collect();
        let a = noisy_system(8, 8, PhysicalParams::default(), EtaProfile::Cutoff, sum);
        let b = noisy_system(8, 8, PhysicalParams::default(), EtaProfile::Cutoff, f1.clone());
        let x = smooth_state(a.basis(), &raw, 1.0);
        let (da, db) = (a.drift(&x).unwrap(), b.drift(&x).unwrap());
        for j in 0..da.len() {
            prop_assert!((da[j] - db[j] - f2[j]).abs() <= 1e-12 * (1.0 + da[j].abs()));
        }
    }

    #[test]
    fn increments_round_trip(k in 0usize..6, steps in 0u64..12, seed in any::<u64>()) {
        let dw: Vec<f64> = (0..k * steps as usize).map(|i| f64::from_bits(seed.rotate_left(i as u32) ^ i as u64)).collect();
        let (kk, ss, back) = decode_dw(&encode_dw(k, steps, &dw)).unwrap();
        prop_assert_eq!((kk, ss), (k, steps));
        prop_assert_eq!(back.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), dw.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn config_echo_round_trips(modes in 2usize..20, seed in any::<u64>(), t in 1e-4..1.0f64, alpha in 0.0..1.0f64, decay in 1.0..4.0f64) {
        let text = format!("modes = {modes}\nseed = {seed}\nT = {t}\nalpha0 = {alpha}\ndecay = {decay}\nip1_policy = warn\n");
        let c = parse_str(&text, std::path::Path::new(".")).unwrap();
        prop_assert_eq!(c.sim.basis.modes, modes);
        prop_assert_eq!(c.sim.seed, seed);
        prop_assert_eq!(c.sim.final_time.to_bits(), t.to_bits());
        prop_assert_eq!(c.sim.noise.alpha0.to_bits(), alpha.to_bits());
        prop_assert_eq!(c.sim.ip1_policy, Ip1Policy::Warn);
        let back: Config = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        prop_assert_eq!(back, c);
    }
}

proptest! {
    #![proptest_config(cases(4))]

    #[test]
    fn trajectories_do_not_depend_on_thread_count(seed in any::<u64>()) {
        let mut c = parse_str("preset = stefan2d\nmodes = 6\nnoise_modes = 8\nT = 0.004\npaths = 6\nsave_every = 7\n", std::path::Path::new(".")).unwrap();
        c.sim.seed = seed;
        let run = Run::new(c.sim).unwrap();
        let one = with_threads(Some(1), || run.simulate_ensemble()).unwrap();
        let many = with_threads(Some(8), || run.simulate_ensemble()).unwrap();
        prop_assert_eq!(&one, &many);
        let basis = run.system.basis();
        for (a, b) in one.iter().zip(&many) {
            prop_assert_eq!(snapshots_csv(basis, a), snapshots_csv(basis, b));
            let (_, states) = parse_snapshots_csv(&snapshots_csv(basis, a), basis).unwrap();
            prop_assert_eq!(&states, &a.states);
        }
    }
}

#[test]
fn q_is_positive_semidefinite_everywhere() {
    let basis = Basis::new(BasisSpec::new(2, 16)).unwrap();
    let noise = NoiseModel::new(&basis, NoiseSpec::default()).unwrap();
    let lmin = noise.min_eigenvalue_field().iter().copied().fold(f64::INFINITY, f64::min);
    assert!(lmin >= -1e-12, "{lmin}");
    let q: &[Array2<f64>; 3] = noise.q();
    let det = pairwise_map(q[0].len(), |i| {
        let (a, b, c) = (q[0].as_slice().unwrap()[i], q[1].as_slice().unwrap()[i], q[2].as_slice().unwrap()[i]);
        (a * c - b * b).min(0.0)
    });
    assert!(det >= -1e-20, "{det}");
}

//! Property-based invariants across modules.

use nalgebra::Vector3;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::{fit_g_delta, nonlinear_response, window_average, FitOptions, WindowSpec};
use crate::config::RunConfig;
use crate::hilbert::{build_hamiltonian, dressed_frequencies, dressed_frequencies_rotating, dressed_splitting, excitation_block_eigenvalues, max_abs_entry};
use crate::motion::{coupling_at, langevin_step, trap_fields_at, DirectProvider, MotionModel, TrapGeometry};
use crate::protocol::{postselect, IntervalKind, IntervalRecord, TrappingEventRecord};
use crate::semiclassical::{mb_residuals, mb_steady_states};
use crate::spectrum::{vertical_scan, Model, Spectrum, SpectrumPoint};
use crate::steadystate::{single_excitation_observables, spectrum_single_excitation, steady_state, steady_state_dense, PowerCalibration};
use crate::units::mhz;
use crate::SystemParams;

fn params(g: f64, kappa: f64, gamma: f64, da: f64, dc: f64, eta: f64, n_fock: usize) -> SystemParams {
    SystemParams { g: mhz(g), kappa: mhz(kappa), gamma: mhz(gamma), delta_a: mhz(da), delta_c: mhz(dc), eta: mhz(eta), n_fock }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn splitting_grows_as_root_n(wa in -50.0..50.0f64, wc in -50.0..50.0f64, g in 0.0..20.0f64, n in 0usize..8) {
        let (lo, hi) = dressed_frequencies(mhz(wa), mhz(wc), mhz(g), n);
        let s = dressed_splitting(mhz(wa - wc), mhz(g), n);
        prop_assert!(((hi - lo) - s).abs() <= 1e-12 * s.max(1.0));
        prop_assert!(s >= 2.0 * mhz(g) * ((n + 1) as f64).sqrt() * (1.0 - 1e-12));
    }

    #[test]
    fn blocks_match_dressed_ladder(g in 0.0..20.0f64, da in -30.0..30.0f64, dc in -30.0..30.0f64, n in 0usize..5) {
        let p = params(g, 1.25, 3.0, da, dc, 0.0, 6);
        let ev = excitation_block_eigenvalues(&p, n + 1).unwrap();
        let (lo, hi) = dressed_frequencies_rotating(p.delta_a, p.delta_c, p.g, n);
        let scale = lo.abs().max(hi.abs()).max(1.0);
        prop_assert!((ev[0] - lo).abs() <= 1e-9 * scale && (ev[1] - hi).abs() <= 1e-9 * scale);
    }

    #[test]
    fn hamiltonian_is_hermitian(g in 0.0..20.0f64, da in -30.0..30.0f64, dc in -30.0..30.0f64, eta in 0.0..5.0f64, n_fock in 2usize..10) {
        let h = build_hamiltonian(&params(g, 1.25, 3.0, da, dc, eta, n_fock)).unwrap();
        prop_assert!(max_abs_entry(&(&h - h.adjoint())) <= 1e-12);
    }

    #[test]
    fn steady_state_is_a_density_matrix(
        g_over_k in 0.0..20.0f64, eta_over_k in 0.0..3.0f64, kappa in 0.5..3.0f64, gamma in 0.5..6.0f64,
        da in -30.0..30.0f64, dc in -30.0..30.0f64,
    ) {
        let p = params(g_over_k * kappa, kappa, gamma, da, dc, eta_over_k * kappa, 8);
        let rho = steady_state(&p).unwrap();
        prop_assert!(rho.check_invariants().is_ok());
    }

    #[test]
    fn banded_and_dense_routes_agree(g in 0.0..15.0f64, eta in 0.0..3.0f64, da in -20.0..20.0f64, dc in -20.0..20.0f64) {
        let p = params(g, 1.25, 3.0, da, dc, eta, 5);
        let a = steady_state(&p).unwrap();
        let b = steady_state_dense(&p).unwrap();
        prop_assert!(max_abs_entry(&(a.matrix() - b.matrix())) <= 1e-9);
    }

    #[test]
    fn weak_drive_is_linear(g in 0.0..20.0f64, da in -25.0..25.0f64, dc in -25.0..25.0f64, frac in 0.0001..0.01f64) {
        let mut p = params(g, 1.25, 3.0, da, dc, 0.0, 4);
        p.eta = frac * p.kappa;
        let q = steady_state(&p).unwrap().photon_number();
        let s = single_excitation_observables(&p).n_photon;
        prop_assert!((q - s).abs() / s <= 1e-2);
    }

    #[test]
    fn maxwell_bloch_roots_are_physical(g in 0.0..20.0f64, da in -20.0..20.0f64, dc in -20.0..20.0f64, eta in 0.0..40.0f64) {
        let p = params(g, 1.25, 3.0, da, dc, eta, 2);
        let scale = [p.kappa, p.gamma, p.g, p.eta].into_iter().fold(0.0, f64::max);
        for s in mb_steady_states(&p).unwrap() {
            prop_assert!(s.sigma.norm() <= 1.0 + 1e-12);
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s.sigma_z));
            prop_assert!(mb_residuals(&p, &s).into_iter().fold(0.0, f64::max) <= 1e-10 * scale);
        }
    }

    #[test]
    fn coupling_is_periodic_and_bounded(x in -60.0..60.0f64, y in -60.0..60.0f64, z in -100.0..100.0f64) {
        let geom = TrapGeometry::default();
        let g0 = mhz(16.0);
        let r = Vector3::new(x, y, z);
        let g = coupling_at(&r, &geom, g0);
        prop_assert!((0.0..=g0).contains(&g));
        let shifted = Vector3::new(x, y, z + geom.lambda_probe / 2.0);
        prop_assert!((coupling_at(&shifted, &geom, g0) - g).abs() <= 1e-9 * g0);
        let (depth, stark) = trap_fields_at(&r, &geom);
        let (depth2, stark2) = trap_fields_at(&Vector3::new(x, y, z + geom.lambda_trap / 2.0), &geom);
        prop_assert!((0.0..=geom.trap_depth * (1.0 + 1e-12)).contains(&depth));
        prop_assert!((0.0..=geom.stark_max * (1.0 + 1e-12)).contains(&stark));
        prop_assert!((depth - depth2).abs() <= 1e-9 * geom.trap_depth && (stark - stark2).abs() <= 1e-9 * geom.stark_max);
    }

    #[test]
    fn postselection_is_monotone(counts in prop::collection::vec(0u64..12, 3..40), t1 in 0.0..12.0f64, t2 in 0.0..12.0f64) {
        let intervals: Vec<IntervalRecord> = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| IntervalRecord {
                kind: if i % 2 == 0 { IntervalKind::Check } else { IntervalKind::Probe },
                delta_a_mhz: 1.0,
                delta_c_mhz: 0.0,
                duration: 100.0,
                counts: c,
                mean_g_mhz: 0.0,
                mean_stark_mhz: 0.0,
                true_power_fw: 0.0,
                escaped: false,
                accepted: None,
            })
            .collect();
        let events = vec![TrappingEventRecord { event_id: 0, seed: 0, intervals, survival_time: 0.0, rejected: false, abort_reason: None }];
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let strict = postselect(&events, lo).accepted;
        let loose = postselect(&events, hi).accepted;
        prop_assert!(strict.iter().all(|a| loose.contains(a)));
    }

    #[test]
    fn config_round_trips(g in 0.0..20.0f64, n_fock in 2usize..16, seed in any::<u64>(), lo in -30.0..-5.0f64, workers in prop::option::of(1usize..64)) {
        let mut cfg = RunConfig::default();
        cfg.physics.g_mhz = g;
        cfg.physics.n_fock = n_fock;
        cfg.seed = seed;
        cfg.scan.lo = lo;
        cfg.workers = workers;
        let again = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        prop_assert_eq!(again, cfg);
    }
}

fn synthetic(values: &[f64]) -> Spectrum {
    let mut s = Spectrum::new(1.0, Model::Quantum);
    for (k, v) in values.iter().enumerate() {
        s.points.push(SpectrumPoint {
            delta_c: mhz(-25.0 + k as f64),
            delta_a: 0.0,
            power_out: *v,
            stderr: 0.0,
            n_photon: 0.0,
            p_excited: 0.0,
        });
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn window_average_is_linear(a in prop::collection::vec(0.0..10.0f64, 31), b in prop::collection::vec(0.0..10.0f64, 31)) {
        let w = WindowSpec::new(-15.0, -10.0).unwrap();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let lhs = window_average(&synthetic(&sum), &w).unwrap().mean;
        let rhs = window_average(&synthetic(&a), &w).unwrap().mean + window_average(&synthetic(&b), &w).unwrap().mean;
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
    }

    #[test]
    fn slope_is_scale_invariant(c in 0.01..100.0f64, exponent in 0.5..3.0f64) {
        let mk = |scale: f64| -> Vec<Spectrum> {
            [0.5, 1.5, 2.4, 3.3]
                .iter()
                .map(|&p: &f64| {
                    let vals: Vec<f64> = (0..31).map(|k| if (10..=15).contains(&k) { 1.0 + p.powf(exponent) } else { 1.0 }).collect();
                    let mut s = synthetic(&vals.iter().map(|v| v * scale).collect::<Vec<_>>());
                    s.p_in = p;
                    s
                })
                .collect()
        };
        let (on, off) = (WindowSpec::new(-15.0, -10.0).unwrap(), WindowSpec::new(-25.0, -20.0).unwrap());
        let a = nonlinear_response(&mk(1.0), &on, &off).unwrap().slope;
        let b = nonlinear_response(&mk(c), &on, &off).unwrap().slope;
        prop_assert!((a - b).abs() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn fit_round_trip_in_grid_box(g in 8.5..15.5f64, da in -2.5..2.5f64) {
        let base = params(0.0, 1.25, 3.0, 0.0, 0.0, 0.0, 2);
        let cal = PowerCalibration::default();
        // both normal modes in range, otherwise (g, Δa) is degenerate in the linear model
        let scan = vertical_scan(da, -25.0, 20.0, 0.5).unwrap();
        let data: Vec<Spectrum> = [0.5, 1.5, 2.4, 3.3]
            .iter()
            .map(|&p| spectrum_single_excitation(&base.with_g(mhz(g)), &scan, p, &cal).unwrap())
            .collect();
        let r = fit_g_delta(&data, &base, &cal, Model::SingleExcitation, &FitOptions::default()).unwrap();
        prop_assert!(r.refinement_trace.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!((r.g_mhz - g).abs() <= 0.1 && (r.delta_a_mhz - da).abs() <= 0.1, "{:?}", r);
    }
}

#[test]
fn langevin_steps_are_reproducible() {
    let model = MotionModel::new(TrapGeometry::default(), mhz(16.0), mhz(3.0));
    let provider = DirectProvider::new(params(16.0, 1.25, 3.0, 25.0, 0.0, 1.0, 4), Model::Quantum).unwrap();
    let start = crate::protocol::atom_at_well(&model, 3);
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut s = start;
        for _ in 0..20 {
            s = langevin_step(&s, 0.02, &model, &provider, &mut rng).unwrap();
        }
        s
    };
    let (a, b) = (run(), run());
    assert_eq!(a.r.map(f64::to_bits), b.r.map(f64::to_bits));
    assert_eq!(a.v.map(f64::to_bits), b.v.map(f64::to_bits));
}

use std::f64::consts::PI;

use kinemon_core::charge::{charge_levels, ChargeBasisConfig};
use kinemon_core::cqed::{kinemon_basis, CavityConfig};
use kinemon_core::fitting::{nelder_mead, FluxCalibration, SimplexOptions};
use kinemon_core::lindblad::{steady_state_from_basis, DissipationConfig, DriveConfig, SteadyStateMethod};
use kinemon_core::spectrum::levels;
use kinemon_core::{CircuitParams, PhaseGrid};
use proptest::prelude::*;

fn circuit() -> impl Strategy<Value = CircuitParams> {
    (1.0..12.0, 0.3..2.0, 5.0..15.0).prop_map(|(ej, ec, el)| CircuitParams::single_loop(ej, ec, el))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn transmon_spectrum_periodic_and_mirrored(ej in 0.0..20.0, ec in 0.2..2.0, ng in 0.0..1.0) {
        let at = |n_g: f64| charge_levels(&ChargeBasisConfig::new(ej, ec, n_g), 6).unwrap();
        let base = at(ng);
        for (a, b) in base.iter().zip(at(ng + 1.0)) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        for (a, b) in base.iter().zip(at(1.0 - ng)) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn single_loop_spectrum_even_and_periodic_in_flux(p in circuit(), phi in -PI..PI) {
        let grid = PhaseGrid::compact(&p, 121, 3);
        let e = levels(&p, phi, &grid, 3).unwrap();
        let mirrored = levels(&p, -phi, &grid, 3).unwrap();
        let shifted = levels(&p, phi + 2.0 * PI, &grid, 3).unwrap();
        for i in 0..3 {
            prop_assert!((e[i] - mirrored[i]).abs() < 1e-9 * e[i].abs().max(1.0));
            prop_assert!((e[i] - shifted[i]).abs() < 1e-9 * e[i].abs().max(1.0));
        }
        prop_assert!(e.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn symmetric_junctions_cancel_at_odd_half_flux(
        ej in 1.0..15.0, ec in 0.3..2.0, el in 6.0..15.0, kappa in 0.1..0.45, k in -2i32..=2,
    ) {
        let p = CircuitParams::double_loop(ej, ec, el, kappa);
        let e = levels(&p, PI * (2 * k + 1) as f64, &PhaseGrid::symmetric(8.0, 401), 6).unwrap();
        let w = (2.0 * ec * el).sqrt();
        for pair in e.windows(2) {
            prop_assert!(((pair[1] - pair[0]) / w - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn calibration_inverts(period in prop_oneof![-5.0..-0.01, 0.01..5.0], offset in -3.0..3.0, phi in -20.0..20.0) {
        let cal = FluxCalibration { period, offset };
        prop_assert!((cal.phi_e(cal.bias(phi)) - phi).abs() < 1e-9 * phi.abs().max(1.0));
    }

    #[test]
    fn simplex_history_never_increases(c in proptest::collection::vec(-3.0..3.0f64, 3), s in proptest::collection::vec(0.5..5.0f64, 3)) {
        let f = |x: &[f64]| x.iter().zip(&c).zip(&s).map(|((x, c), s)| s * (x - c).powi(2)).sum::<f64>();
        let out = nelder_mead(&f, &[0.0, 0.0, 0.0], &SimplexOptions::default());
        prop_assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(out.value <= f(&[0.0, 0.0, 0.0]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn steady_state_is_a_density_matrix(phi in -PI..PI, wd in 2.5..5.5, amp in 0.0..0.3, kc in 0.5..5.0, gq in 0.5..20.0) {
        let p = CircuitParams::single_loop(5.38, 0.90, 8.59);
        let mut cavity = CavityConfig::new(7.1851, 0.064, 3);
        cavity.n_kinemon_levels = 4;
        let basis = kinemon_basis(&p, phi, &PhaseGrid::default(), 4).unwrap();
        let s = steady_state_from_basis(
            &basis,
            &cavity,
            &DissipationConfig { kappa_c: kc, gamma_q: gq },
            &DriveConfig { omega_drive: wd, amplitude: amp },
            SteadyStateMethod::NullSpace,
        ).unwrap();
        prop_assert!(s.trace_error < 1e-9);
        prop_assert!(s.hermiticity_defect < 1e-9);
        prop_assert!(s.min_eigenvalue > -1e-7);
        prop_assert!((0.0..=1.0 + 1e-9).contains(&s.observables.ground_depopulation));
    }
}

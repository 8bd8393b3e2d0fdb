mod common;

use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;

use common::{excited, liouvillian, random_model};
use tlsbath::analysis::{detect_oscillation, fit_decay, log_grid};
use tlsbath::dynamics::{evolve_fast, lindblad_rhs, IntegratorConfig, SectorState};

/// Random density matrix `AA†/tr(AA†)`.
fn density(n: usize, entries: &[(f64, f64)]) -> DMatrix<Complex64> {
    let a = DMatrix::from_fn(n, n, |r, c| {
        let (re, im) = entries[(r * n + c) % entries.len()];
        Complex64::new(re, im)
    });
    let rho = &a * a.adjoint();
    let tr = rho.trace();
    rho / tr
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generator_preserves_trace_and_hermiticity(
        k in 1usize..5,
        seed in any::<u64>(),
        entries in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 8..40),
    ) {
        let m = random_model(k, seed);
        let rho = density(m.dim, &entries);
        let d = lindblad_rhs(&rho, &m).unwrap();
        prop_assert!(d.trace().norm() < 1e-12);
        prop_assert!((&d - d.adjoint()).camax() < 1e-12);
        let v = liouvillian(&m) * nalgebra::DVector::from_column_slice(rho.as_slice());
        let oracle = DMatrix::from_column_slice(m.dim, m.dim, v.as_slice());
        prop_assert!((&d - oracle).camax() < 1e-10);
    }

    #[test]
    fn fast_engine_excitation_never_grows(k in 1usize..6, seed in any::<u64>()) {
        let m = random_model(k, seed);
        let cfg = IntegratorConfig { horizon: 20.0, output_points: 120, ..IntegratorConfig::default() };
        let traj = evolve_fast(&SectorState::from_density(&excited(m.dim)).unwrap(), &m, &cfg).unwrap();
        let ex = traj.excitation();
        prop_assert!(ex.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        prop_assert!(traj.trace.iter().all(|t| (t - 1.0).abs() < 1e-9));
        prop_assert!(traj.p_qubit.iter().all(|p| (-1e-12..=1.0 + 1e-12).contains(p)));
    }

    #[test]
    fn exponential_fit_recovers_rate(t1 in 5.0f64..300.0, amp in 0.5f64..1.0) {
        let t: Vec<f64> = (0..800).map(|i| i as f64 * 1500.0 / 799.0).collect();
        let y: Vec<f64> = t.iter().map(|x| amp * (-x / t1).exp()).collect();
        let fit = fit_decay(&t, &y).unwrap();
        prop_assert!((fit.t1 / t1 - 1.0).abs() < 1e-4);
        prop_assert!(!fit.oscillatory);
        prop_assert!(!detect_oscillation(&y).0);
    }

    #[test]
    fn log_grid_is_ascending_with_exact_ends(lo in 1e-4f64..1.0, decades in 0.5f64..6.0, n in 2usize..40) {
        let hi = lo * 10f64.powf(decades);
        let g = log_grid(lo, hi, n);
        prop_assert_eq!(g.len(), n);
        prop_assert!((g[0] / lo - 1.0).abs() < 1e-12 && (g[n - 1] / hi - 1.0).abs() < 1e-12);
        prop_assert!(g.windows(2).all(|w| w[0] < w[1]));
    }
}

//! Property tests for solver, objective, constants and inversion invariants.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use beamload::bounds::{compute_constants, random_coefficients, random_smooth_load, CtVariant};
use beamload::forward::BeamProblem;
use beamload::inversion::{run_inversion, InversionConfig, StepRule};
use beamload::measurements::{add_noise, generate_scenario, NoiseSpec, ScenarioKind};
use beamload::model::{time_norm_sq, CoefficientBounds, CoefficientSet, LoadField, SpaceTimeGrid};
use beamload::objective::Objective;

fn grid() -> SpaceTimeGrid {
    SpaceTimeGrid::new(1.0, 1.0, 8, 32).unwrap()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(16)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn forward_solve_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_coefficients(&g, &mut rng);
        let (f1, f2) = (random_smooth_load(&g, &mut rng), random_smooth_load(&g, &mut rng));
        let p = BeamProblem::new(&g, &c).unwrap();
        let combo = f1.scaled(a).add_scaled(b, &f2).unwrap();
        let (t1, t2, t3) = (p.solve(&f1).unwrap(), p.solve(&f2).unwrap(), p.solve(&combo).unwrap());
        let expect: Vec<f64> = t1.outputs.theta0.iter().zip(&t2.outputs.theta0).map(|(x, y)| a * x + b * y).collect();
        let diff: Vec<f64> = expect.iter().zip(&t3.outputs.theta0).map(|(x, y)| x - y).collect();
        prop_assert!(max_abs(&diff) <= 1e-10 * max_abs(&expect).max(1e-300));
    }

    #[test]
    fn adjoint_solve_is_linear(seed in 0u64..1000, a in -3.0f64..3.0) {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_coefficients(&g, &mut rng);
        let p = BeamProblem::new(&g, &c).unwrap();
        let s1: Vec<f64> = g.times().iter().map(|t| (3.0 * t + seed as f64).sin()).collect();
        let s2: Vec<f64> = g.times().iter().map(|t| t * t).collect();
        let one = p.solve_adjoint(&s1, &s2).unwrap().nodal_field();
        let scaled: Vec<f64> = s1.iter().map(|x| a * x).collect();
        let scaled2: Vec<f64> = s2.iter().map(|x| a * x).collect();
        let two = p.solve_adjoint(&scaled, &scaled2).unwrap().nodal_field();
        let diff = two.add_scaled(-a, &one).unwrap();
        prop_assert!(diff.norm_sq().sqrt() <= 1e-10 * (a.abs() * one.norm_sq().sqrt()).max(1e-300));
    }

    #[test]
    fn misfit_is_nonnegative_and_vanishes_on_exact_data(seed in 0u64..1000) {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_coefficients(&g, &mut rng);
        let p = BeamProblem::new(&g, &c).unwrap();
        let f = random_smooth_load(&g, &mut rng);
        let other = random_smooth_load(&g, &mut rng);
        let obj = Objective::new(p.clone(), p.solve(&f).unwrap().outputs).unwrap();
        prop_assert_eq!(obj.evaluate(&f).unwrap().j, 0.0);
        prop_assert!(obj.evaluate(&other).unwrap().j >= 0.0);
    }

    #[test]
    fn output_differences_respect_the_lipschitz_constant(seed in 0u64..1000) {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_coefficients(&g, &mut rng);
        let p = BeamProblem::new(&g, &c).unwrap();
        let (f1, f2) = (random_smooth_load(&g, &mut rng), random_smooth_load(&g, &mut rng));
        let k = compute_constants(&g, c.bounds(), 1.0, (0.0, 0.0), CtVariant::Literal).unwrap();
        let (o1, o2) = (p.solve(&f1).unwrap().outputs, p.solve(&f2).unwrap().outputs);
        let d: Vec<f64> = o1.theta0.iter().zip(&o2.theta0).map(|(x, y)| x - y).collect();
        let ratio = time_norm_sq(&g, &d).sqrt() / f1.sub(&f2).unwrap().norm_sq().sqrt();
        prop_assert!(ratio <= k.c_l * 1.05);
    }

    #[test]
    fn constants_are_monotone(t in 0.2f64..3.0, rho0 in 0.2f64..3.0, r0 in 0.2f64..3.0, kappa0 in 0.01f64..1.0) {
        let at = |t: f64, rho0: f64, r0: f64, kappa0: f64| {
            let g = SpaceTimeGrid::new(1.0, t, 4, 4).unwrap();
            let b = CoefficientBounds::from_tuple((rho0, 2.0 * rho0, 0.0, 1.0, 0.0, 1.0, r0, 2.0 * r0, kappa0, 1.0));
            compute_constants(&g, &b, 1.0, (0.1, 0.1), CtVariant::Corrected).unwrap()
        };
        let base = at(t, rho0, r0, kappa0);
        prop_assert!(base.ce2 > 0.0 && base.c1_sq > 0.0 && base.c_j > 0.0 && base.l_g > 0.0);
        prop_assert!(at(1.1 * t, rho0, r0, kappa0).ce2 > base.ce2);
        prop_assert!(at(t, 1.1 * rho0, r0, kappa0).ce2 < base.ce2);
        prop_assert!(at(1.1 * t, rho0, r0, kappa0).c1_sq > base.c1_sq);
        prop_assert!(at(t, rho0, 1.1 * r0, kappa0).c_l < base.c_l);
        prop_assert!(at(t, rho0, 1.1 * r0, kappa0).c0_sq < base.c0_sq);
        prop_assert!(at(t, rho0, r0, 1.1 * kappa0).l_g < base.l_g);
    }

    #[test]
    fn inversion_iterates_stay_admissible(c_f in 0.01f64..1.0, seed in 0u64..100) {
        let g = grid();
        let c = CoefficientSet::constant(&g, 1.0, 0.1, 0.2, 1.0, 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = random_smooth_load(&g, &mut rng).scaled(3.0);
        let m = BeamProblem::new(&g, &c).unwrap().solve(&truth).unwrap().outputs;
        for step in [StepRule::Backtracking, StepRule::Fixed(None)] {
            let cfg = InversionConfig { step, max_iterations: 8, c_f, ..InversionConfig::default() };
            let s = run_inversion(&m, &c, &g, &cfg).unwrap();
            prop_assert!(s.iterate.norm_sq() <= c_f * (1.0 + 1e-12));
            prop_assert!(s.j_history.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn realized_noise_matches_the_request(delta in 0.0f64..0.2, seed in any::<u64>()) {
        let g = grid();
        let c = CoefficientSet::constant(&g, 1.0, 0.1, 0.2, 1.0, 0.05);
        let clean = generate_scenario(&ScenarioKind::Modal { terms: vec![(1, 1, 1.0)] }, &g, &c).unwrap().measurements;
        let n = add_noise(&clean, NoiseSpec { delta_rel: delta, seed }, &g).unwrap();
        let e: Vec<f64> = n.series.theta_l.iter().zip(&clean.theta_l).map(|(a, b)| a - b).collect();
        let expect = delta * time_norm_sq(&g, &clean.theta_l).sqrt();
        prop_assert!((time_norm_sq(&g, &e).sqrt() - expect).abs() <= 1e-12 + 1e-9 * expect);
        prop_assert!((n.realized.1 - expect).abs() <= 1e-15 + 1e-12 * expect);
        prop_assert_eq!(add_noise(&clean, NoiseSpec { delta_rel: delta, seed }, &g).unwrap(), n);
    }

    #[test]
    fn scenario_generation_is_pure(amplitude in -5.0f64..5.0, speed in -1.0f64..1.5, start in 0.0f64..1.0) {
        let g = grid();
        let c = CoefficientSet::constant(&g, 1.0, 0.1, 0.2, 1.0, 0.05);
        let kind = ScenarioKind::MovingGaussian { amplitude, speed, width: 0.1, start, clamp: true };
        prop_assert_eq!(generate_scenario(&kind, &g, &c).unwrap(), generate_scenario(&kind, &g, &c).unwrap());
    }
}

#[test]
fn zero_load_gives_an_exactly_zero_trajectory() {
    let g = grid();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let c = random_coefficients(&g, &mut rng);
    let t = BeamProblem::new(&g, &c).unwrap().solve(&LoadField::zeros(&g)).unwrap();
    assert!(t.outputs.theta0.iter().chain(&t.outputs.theta_l).all(|v| *v == 0.0));
}

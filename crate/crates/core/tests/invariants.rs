use std::f64::consts::PI;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use subcoupling::bridge::{run_block_detailed, run_until_coupled, BlockConfig};
use subcoupling::geometry::{riemannian_distance, wrap_mod_4pi, wrap_pos_4pi, FOUR_PI};
use subcoupling::montecarlo::{estimate_tail, run_trials, wilson_interval, Z95};
use subcoupling::reflection::{coupled_pair_trajectory, run_full_su2, run_reflection, ReflectionConfig};
use subcoupling::{Curvature, McConfig, SurfacePoint};

fn curvature() -> impl Strategy<Value = Curvature> {
    prop_oneof![Just(Curvature::Spherical), Just(Curvature::Flat), Just(Curvature::Hyperbolic)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fiber_representatives(x in -1e3f64..1e3) {
        let m = wrap_mod_4pi(x);
        prop_assert!(m > -2.0 * PI && m <= 2.0 * PI);
        let p = wrap_pos_4pi(x);
        prop_assert!((0.0..FOUR_PI).contains(&p));
        let turns = (x - m) / FOUR_PI;
        prop_assert!((turns - turns.round()).abs() < 1e-9);
    }

    #[test]
    fn distance_is_a_symmetric_nonnegative_function(
        k in curvature(),
        a in 0.05f64..1.5, ta in -3.0f64..3.0,
        b in 0.05f64..1.5, tb in -3.0f64..3.0,
    ) {
        let p = SurfacePoint::from_unwrapped(a, ta);
        let q = SurfacePoint::from_unwrapped(b, tb);
        let d = riemannian_distance(k, p, q);
        prop_assert!(d >= 0.0);
        prop_assert!((d - riemannian_distance(k, q, p)).abs() < 1e-12);
        prop_assert!(riemannian_distance(k, p, p) < 1e-7);
    }

    #[test]
    fn blocks_match_end_points(k in curvature(), dz in 0.01f64..12.5, seed in any::<u64>()) {
        let cfg = BlockConfig::new(k, 0.1, 50, 0.5 * PI).unwrap();
        let d = run_block_detailed(&cfg, dz, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let n = d.theta.len() - 1;
        prop_assert_eq!(d.theta[n], d.theta_prime[n]);
        prop_assert!(d.result.quadrature_residual.abs() <= 10.0 * cfg.dt());
        prop_assert!((0.0..FOUR_PI).contains(&d.result.delta_z_out));
        if d.result.success {
            prop_assert_eq!(d.result.delta_z_out, 0.0);
        }
    }

    #[test]
    fn coupling_runs_stop_at_success(dz in 0.01f64..12.5, seed in any::<u64>()) {
        let cfg = BlockConfig::equatorial(1.0, 50).unwrap();
        let run = run_until_coupled(&cfg, dz, 10, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let last_success = run.blocks.iter().position(|b| b.success);
        match run.tau {
            Some(tau) => {
                let i = last_success.unwrap();
                prop_assert_eq!(i + 1, run.blocks.len());
                prop_assert!((tau - run.blocks.len() as f64).abs() < 1e-9);
            }
            None => prop_assert!(last_success.is_none() && run.blocks.len() == 10),
        }
    }

    #[test]
    fn mirror_coupling_lands_on_the_fiber(rho0 in 0.0f64..3.1, zeta0 in -6.28f64..6.28, seed in any::<u64>()) {
        let refl = ReflectionConfig::new(1e-3, 50.0).unwrap();
        let r = run_reflection(rho0, zeta0, &refl, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert!(r.tau1 >= 0.0);
        prop_assert_eq!(r.clamp_count, 0);
        prop_assert!(r.zeta_tau1 > -2.0 * PI && r.zeta_tau1 <= 2.0 * PI);
    }

    #[test]
    fn full_coupling_orders_its_times(seed in any::<u64>()) {
        let refl = ReflectionConfig::new(1e-3, 50.0).unwrap();
        let block = BlockConfig::equatorial(1.0, 50).unwrap();
        let r = run_full_su2(1.0, PI, &block, &refl, 20, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        if let (Some(tau), Some(tau2)) = (r.tau, r.tau2) {
            prop_assert!((tau - r.tau1 - tau2).abs() < 1e-9);
        }
        prop_assert_eq!(r.tau.is_none(), r.censored);
    }

    #[test]
    fn copies_agree_after_coupling(seed in any::<u64>()) {
        let refl = ReflectionConfig::new(1e-3, 50.0).unwrap();
        let block = BlockConfig::equatorial(1.0, 50).unwrap();
        let ts: Vec<f64> = (0..=12).map(|i| 0.5 * i as f64).collect();
        let tr = coupled_pair_trajectory(0.5, 1.0, &block, &refl, &ts, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(tr.states.len(), ts.len());
        for (s, &t) in tr.states.iter().zip(&ts) {
            if tr.tau.map_or(false, |tau| tau <= t) {
                prop_assert_eq!(s.phi, s.phi_prime);
                prop_assert_eq!(s.z, s.z_prime);
            }
        }
    }

    #[test]
    fn wilson_interval_brackets_the_proportion(n in 1usize..5000, frac in 0.0f64..=1.0) {
        let s = ((n as f64) * frac).floor() as usize;
        let (lo, hi) = wilson_interval(s, n, Z95);
        let p = s as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= p && p <= hi && hi <= 1.0);
    }
}

#[test]
fn results_do_not_depend_on_the_worker_count() {
    let block = BlockConfig::equatorial(1.0, 50).unwrap();
    let ts: Vec<f64> = (0..=10).map(f64::from).collect();
    let sampler = |_, rng: &mut ChaCha8Rng| Ok(run_until_coupled(&block, PI, 10, rng)?.tau);
    let base = McConfig::new(200, 11).unwrap();
    let one = estimate_tail(sampler, &ts, &base, "workers").unwrap();
    for workers in [2, 4, 16] {
        let many = estimate_tail(sampler, &ts, &base.with_parallelism(workers), "workers").unwrap();
        assert_eq!(one, many);
    }
}

#[test]
fn tail_curves_are_nonincreasing() {
    let refl = ReflectionConfig::new(1e-3, 50.0).unwrap();
    let ts: Vec<f64> = (0..20).map(|i| 0.25 * i as f64).collect();
    let mc = McConfig::new(300, 5).unwrap();
    let curve = estimate_tail(
        |_, rng| Ok(Some(run_reflection(2.0, 0.0, &refl, rng)?.tau1)),
        &ts,
        &mc,
        "tail",
    )
    .unwrap();
    assert!(curve.p_hat.windows(2).all(|w| w[1] <= w[0]));
    assert!(curve.ci_lower.iter().zip(&curve.ci_upper).all(|(l, u)| l <= u));
}

#[test]
fn trial_streams_are_independent_of_order() {
    let mc = McConfig::new(50, 3).unwrap();
    let draws = run_trials(&mc, "order", |trial, rng| {
        use rand::Rng;
        Ok((trial, rng.gen::<u64>()))
    })
    .unwrap();
    let again = run_trials(&mc.with_parallelism(8), "order", |trial, rng| {
        use rand::Rng;
        Ok((trial, rng.gen::<u64>()))
    })
    .unwrap();
    assert_eq!(draws, again);
    assert!(draws.iter().enumerate().all(|(i, d)| d.0 == i as u64));
}

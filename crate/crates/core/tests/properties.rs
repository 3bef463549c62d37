mod common;

use nalgebra::DVector;
use platoon_mpc::comms::{Bsm, ChannelConfig, HoldModel, NeighborEstimate};
use platoon_mpc::metrics::{gap_error, percentile, ratios_from_peaks, speed_difference};
use platoon_mpc::model::{step_nonlinear, ControlInput, VehicleState};
use platoon_mpc::mpc::{Mode, SpacingPolicy};
use platoon_mpc::qp;
use platoon_mpc::sim::{LeaderProfile, ScenarioConfig};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn percentile_is_permutation_invariant(mut vals in prop::collection::vec(-1e3f64..1e3, 1..60), p in 0.0f64..=100.0, seed in any::<u64>()) {
        let before = percentile(&vals, p).unwrap();
        let mut rng = common::rng(seed);
        use rand::seq::SliceRandom;
        vals.shuffle(&mut rng);
        prop_assert_eq!(percentile(&vals, p).unwrap(), before);
    }

    #[test]
    fn percentile_is_monotone_and_bounded(vals in prop::collection::vec(-1e3f64..1e3, 1..60), p in 0.0f64..=100.0, q in 0.0f64..=100.0) {
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        let a = percentile(&vals, lo).unwrap();
        let b = percentile(&vals, hi).unwrap();
        prop_assert!(a <= b);
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(a >= min && b <= max);
    }

    #[test]
    fn speed_difference_is_non_negative(speeds in prop::collection::vec(prop::collection::vec(0.0f64..40.0, 3), 1..40)) {
        let cfg = ScenarioConfig { n_vehicles: 3, ..ScenarioConfig::default() };
        let trace = common::synthetic_trace(cfg, &speeds);
        let (series, mean) = speed_difference(&trace);
        prop_assert!(series.iter().all(|d| *d >= 0.0));
        prop_assert!(mean >= 0.0);
    }

    #[test]
    fn gap_errors_are_non_negative(gap in 0.0f64..100.0, desired in 0.0f64..100.0, v in 0.0f64..40.0) {
        for mode in Mode::ALL {
            if let Some(e) = gap_error(mode, gap, desired, v) {
                prop_assert!(e >= 0.0);
            }
        }
    }

    #[test]
    fn ratios_are_scale_free(peaks in prop::collection::vec(0.02f64..10.0, 3..12), k in 0.5f64..50.0) {
        let scaled: Vec<f64> = peaks.iter().map(|p| p * k).collect();
        for (a, b) in ratios_from_peaks(&peaks).iter().zip(ratios_from_peaks(&scaled)) {
            prop_assert!((a.unwrap() - b.unwrap()).abs() <= 1e-12 * a.unwrap().max(1.0));
        }
    }

    #[test]
    fn straight_line_motion_is_conserved(x in -1e3f64..1e3, v in 0.0f64..40.0, a in -3.0f64..3.0, steps in 1usize..50) {
        let mut s = VehicleState::on_lane(x, v);
        for _ in 0..steps {
            let next = step_nonlinear(&s, &ControlInput::new(a, 0.0), 0.1).unwrap();
            prop_assert_eq!(next.y, 0.0);
            prop_assert_eq!(next.phi, 0.0);
            prop_assert!(next.v >= 0.0);
            prop_assert!(next.x >= s.x);
            s = next;
        }
    }

    #[test]
    fn speed_never_negative(v in 0.0f64..5.0, phi in -1.0f64..1.0, a in -10.0f64..10.0, delta in -1.0f64..1.0) {
        let s = step_nonlinear(&VehicleState::new(0.0, 0.0, v, phi), &ControlInput::new(a, delta), 0.1).unwrap();
        prop_assert!(s.v >= 0.0);
    }

    #[test]
    fn desired_gap_scales_with_hops(v in 0.0f64..40.0, hops in 1usize..25, tg in 0.1f64..3.0, d in 0.0f64..5.0) {
        let p = SpacingPolicy { mode: Mode::Cacc, t_gap: tg, d_const: 15.0, d_safety: d };
        let one = p.desired_gap(v, 1).unwrap();
        prop_assert!((p.desired_gap(v, hops).unwrap() - hops as f64 * one).abs() <= 1e-9 * (1.0 + one * hops as f64));
        prop_assert!(p.desired_gap(v + 1.0, 1).unwrap() > one);
        let plat = SpacingPolicy { mode: Mode::Platooning, ..p };
        prop_assert_eq!(plat.desired_gap(v, hops).unwrap(), 15.0 * hops as f64);
    }

    #[test]
    fn box_qp_solutions_are_feasible_and_optimal(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let p = common::random_box_qp(&mut rng, 4);
        let sol = qp::solve_default(&p).unwrap();
        prop_assert!(p.max_violation(&sol.x) <= 1e-9);
        let oracle = common::box_qp_enumeration(&p.hessian, &p.gradient, &p.lb, &p.ub);
        prop_assert!((&sol.x - &oracle).amax() < 1e-6);
        prop_assert!(sol.kkt_residual <= 1e-6);
        // Projection of any point onto the box is never better.
        let y = DVector::from_fn(4, |i, _| (p.lb[i] + p.ub[i]) * 0.5);
        prop_assert!(p.objective(&y) >= sol.objective - 1e-9);
    }

    #[test]
    fn channel_draws_are_unit_interval(seed in any::<u64>(), step in any::<u32>(), s in 0usize..30, r in 0usize..30) {
        let cfg = ChannelConfig::new(0.5, seed).unwrap();
        let d = cfg.draw(u64::from(step), s, r);
        prop_assert!((0.0..1.0).contains(&d));
        prop_assert!(ChannelConfig::new(0.0, seed).unwrap().delivered(u64::from(step), s, r));
        prop_assert!(!ChannelConfig::new(1.0, seed).unwrap().delivered(u64::from(step), s, r));
    }

    #[test]
    fn estimator_age_counts_missed_beacons(pattern in prop::collection::vec(any::<bool>(), 1..80), hold_accel in any::<bool>()) {
        let hold = if hold_accel { HoldModel::ConstantAcceleration } else { HoldModel::ConstantSpeed };
        let b = Bsm { sender: 0, t: 0.0, x: 0.0, y: 0.0, v: 12.0, a: -0.5, phi: 0.0 };
        let mut est = NeighborEstimate::fresh(b);
        let mut since = 0usize;
        for ok in pattern {
            est = est.update(ok.then_some(&b), 0.1, hold).unwrap();
            since = if ok { 0 } else { since + 1 };
            prop_assert!((est.age - since as f64 * 0.1).abs() < 1e-9);
            prop_assert!(est.est_x >= b.x && est.est_v >= 0.0);
        }
    }

    #[test]
    fn leader_profiles_respect_limits(t in 0.0f64..500.0) {
        let step = LeaderProfile::step_test();
        let s = step.speed(t);
        prop_assert!((15.0..=25.0).contains(&s));
        prop_assert!((step.speed(t + 0.1) - s).abs() <= 0.1 + 1e-9);
        let tv = LeaderProfile::time_varying().speed(t);
        prop_assert!((10.0 - 1e-12..=20.0 + 1e-12).contains(&tv));
    }
}

use lmih_core::instances::random_feasible_nominal;
use lmih_core::model::*;
use lmih_core::simulate::*;
use lmih_core::synthesis::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn constant_disturbance_matches_parametric_dynamics() {
    let p = build_example(0.3f64, 0.1).with_kind(ProblemKind::RobustFinite).with_horizon(5);
    let a = DMatrix::from_row_slice(2, 2, &[1.3, 0.15, 0.1, 1.0]);
    let b = DVector::from_vec(vec![0.1, 1.1]);
    let d = DisturbanceSequence::custom(&p.cone, vec![vec![0.3, 0.0]; 5]).unwrap();
    let gain = DMatrix::from_row_slice(1, 3, &[0.0, -0.4, -0.9]);
    let t = rollout(&p, &vec![gain.clone(); 5], &d, 5).unwrap();
    let mut x = p.x_bar.clone();
    for k in 0..5 {
        assert!((&t.x[k] - &x).norm() < 1e-12);
        let u = (&gain * lift(&x))[0];
        x = &a * &x + &b * u;
    }
}

#[test]
fn cost_is_additive_over_split_rollouts() {
    let p = build_example(0.2f64, 0.1).with_horizon(1).with_x_bar(DVector::from_vec(vec![2.0, -3.0]));
    let d = sample_disturbances(&p.cone, 20, DisturbanceMode::Uniform, 9);
    let gain = DMatrix::from_row_slice(1, 3, &[0.0, -0.3, -0.8]);
    let whole = rollout(&p, &[gain.clone()], &d, 20).unwrap();
    let head = DisturbanceSequence::custom(&p.cone, d.deltas[..8].to_vec()).unwrap();
    let tail = DisturbanceSequence::custom(&p.cone, d.deltas[8..].to_vec()).unwrap();
    let first = rollout(&p, &[gain.clone()], &head, 8).unwrap();
    let second = rollout(&p.clone().with_x_bar(first.x[8].clone()), &[gain], &tail, 12).unwrap();
    assert!((whole.total_cost() - first.total_cost() - second.total_cost()).abs() <= 1e-10 * whole.total_cost());
    assert_eq!(head.chain(&tail).deltas, d.deltas);
}

#[test]
fn synthesized_value_decreases_along_disturbed_rollouts() {
    let p = build_example(0.2f64, 0.1).with_horizon(3).with_x_bar(DVector::from_vec(vec![-4.0, 1.0]));
    let cert = synth(&p, &SynthOptions::default()).unwrap();
    for seed in 0..20 {
        let d = sample_disturbances(&p.cone, 30, DisturbanceMode::Uniform, seed);
        let t = rollout(&p, &cert.recovered.k, &d, 30).unwrap();
        assert!(value_decrease_check(&cert, &t).unwrap() >= -1e-6);
    }
    let t = rollout(&p, &cert.recovered.k, &DisturbanceSequence::zero(&p.cone, 30), 30).unwrap();
    assert!(value_decrease_check(&cert, &t).unwrap() >= -1e-8);
}

#[test]
fn arbitrary_gain_breaks_the_decrease() {
    let p = build_example(0.2f64, 0.1).with_horizon(2).with_x_bar(DVector::from_vec(vec![3.0, 2.0]));
    let cert = synth(&p, &SynthOptions::default()).unwrap();
    let bad = vec![DMatrix::from_row_slice(1, 3, &[0.0, 0.5, 0.5]); 3];
    let t = rollout(&p, &bad, &DisturbanceSequence::zero(&p.cone, 10), 10).unwrap();
    assert!(value_decrease_check(&cert, &t).unwrap() < 0.0);
}

#[test]
fn nominal_rollout_ignores_missing_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (p, _) = random_feasible_nominal(&mut rng);
    let cert = synth(&p, &SynthOptions::default()).unwrap();
    let n = p.horizon();
    let t = rollout(&p, &cert.recovered.k, &DisturbanceSequence::zero(&p.cone, n), n).unwrap();
    assert!(t.w.iter().all(|w| w.is_empty()));
}

#[test]
fn out_of_bound_disturbance_is_rejected() {
    let p = build_example(0.2f64, 0.1);
    let err = DisturbanceSequence::custom(&p.cone, vec![vec![0.0, 0.0], vec![0.21, 0.0]]).unwrap_err();
    assert_eq!(err, SimError::OutOfBounds { step: 1 });
    let err = DisturbanceSequence::custom(&p.cone, vec![vec![0.0]]).unwrap_err();
    assert!(matches!(err, SimError::ChannelCount { .. }));
}

#[test]
fn nonzero_feedthrough_is_rejected() {
    let mut p = build_example(0.2f64, 0.1).with_horizon(1);
    p.stages[0].d32[(0, 0)] = 0.1;
    let gain = DMatrix::zeros(1, 3);
    let err = rollout(&p, &[gain], &DisturbanceSequence::zero(&p.cone, 1), 1).unwrap_err();
    assert_eq!(err, SimError::NonzeroD32(0));
}

#[test]
fn trajectory_csv_has_one_row_per_step() {
    let p = build_example(0.2f64, 0.1).with_horizon(1).with_x_bar(DVector::from_vec(vec![1.0, 1.0]));
    let cert = synth(&p, &SynthOptions::default()).unwrap();
    let d = sample_disturbances(&p.cone, 7, DisturbanceMode::Vertices, 0);
    let t = rollout(&p, &cert.recovered.k, &d, 7).unwrap();
    let mut buf = Vec::new();
    write_trajectory_csv(&mut buf, &t, Some(&cert)).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 8);
    assert_eq!(lines[0], "k,x0,x1,u0,w0,w1,y0,y1,y2,max_vtv,V");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn sampled_disturbances_respect_bounds(
        bounds in prop::collection::vec(0.0..2.0f64, 1..4),
        steps in 0usize..40,
        seed in any::<u64>(),
        vertices in any::<bool>(),
    ) {
        let cone = MultiplierCone::new(bounds.iter().map(|&b| Channel { size: 1, bound: b }).collect());
        let mode = if vertices { DisturbanceMode::Vertices } else { DisturbanceMode::Uniform };
        let d = sample_disturbances(&cone, steps, mode, seed);
        prop_assert_eq!(d.len(), steps);
        prop_assert!(d.check(&cone).is_ok());
        prop_assert_eq!(&d, &sample_disturbances(&cone, steps, mode, seed));
        if vertices {
            prop_assert!(d.deltas.iter().flatten().zip(bounds.iter().cycle()).all(|(v, b)| v.abs() == *b));
        }
    }

    #[test]
    fn rollout_states_follow_the_loop(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = rng.random_range(0.0..0.45);
        let p = build_example(g, 0.1).with_kind(ProblemKind::RobustFinite).with_horizon(4);
        let d = sample_disturbances(&p.cone, 4, DisturbanceMode::Uniform, seed);
        let gains: Vec<_> = (0..4).map(|_| DMatrix::from_fn(1, 3, |_, _| rng.random_range(-1.0..1.0))).collect();
        let t = rollout(&p, &gains, &d, 4).unwrap();
        for k in 0..4 {
            let (e1, e2) = (d.deltas[k][0], d.deltas[k][1]);
            let a = DMatrix::from_row_slice(2, 2, &[1.0 + e1, 0.15, 0.1, 1.0]);
            let b = DVector::from_vec(vec![0.1, 1.1 + e2]);
            let want = a * &t.x[k] + b * t.u[k][0];
            prop_assert!((&t.x[k + 1] - want).norm() <= 1e-12 * (1.0 + t.x[k].norm()));
        }
    }
}

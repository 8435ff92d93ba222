use lmih_core::instances::*;
use lmih_core::lmi::{assemble_program, AssembleOptions, LmiError};
use lmih_core::model::*;
use lmih_core::oracle::riccati_sweep;
use lmih_core::simulate::*;
use lmih_core::synthesis::*;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ridge_opts() -> SynthOptions<f64> {
    let mut o = SynthOptions::default();
    o.assemble.pf_ridge = true;
    o
}

#[test]
fn scalar_qp_bound_matches_closed_form() {
    let p = scalar_qp();
    let cert = synth(&p, &ridge_opts()).unwrap();
    assert!((cert.nu() - 1.5).abs() < 1e-4, "{}", cert.nu());
    assert!(verify_certificate(&p, &cert, 1e-6).unwrap().passed());
    let u = cert.input(0, &p.x_bar).unwrap();
    assert!((u[0] + 0.5).abs() < 1e-3, "{u}");
}

#[test]
fn singular_pf_needs_the_ridge() {
    let err = synth(&scalar_qp(), &SynthOptions::default()).unwrap_err();
    assert!(matches!(err, SynthError::Lmi(LmiError::SingularPf)), "{err}");
}

#[test]
fn perturbed_gain_breaks_the_decrease_condition() {
    let p = build_example(0.2f64, 0.1)
        .with_horizon(2)
        .with_x_bar(DVector::from_vec(vec![3.0, 1.0]));
    let cert = synth(&p, &SynthOptions::default()).unwrap();
    assert!(verify_certificate(&p, &cert, 1e-6).unwrap().passed());
    let cp = assemble_program(&prepare(&p).unwrap(), &AssembleOptions::default()).unwrap();
    let mut values = cert.values.clone();
    values.k_tilde[0].add_scalar_mut(0.5);
    let bad = certificate_from_point(&p, &cp, &cp.layout.encode(&values)).unwrap();
    let rep = verify_certificate(&p, &bad, 1e-6).unwrap();
    assert!(rep.margin(CheckFamily::Cost).unwrap() < -1e-6, "{rep:?}");
}

#[test]
fn nominal_decrease_form_ignores_empty_multiplier() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (p, _) = random_feasible_nominal(&mut rng);
    let cert = synth(&p, &SynthOptions::default()).unwrap();
    let r = &cert.recovered;
    let s = &p.stages[0];
    let a = decrease_form(s, &r.p[0], &r.p[1], &r.k[0], None);
    let b = decrease_form(s, &r.p[0], &r.p[1], &r.k[0], Some(&DMatrix::zeros(0, 0)));
    assert_eq!(a, b);
}

#[test]
fn robust_bound_holds_along_sampled_rollouts() {
    let p = build_example(0.2f64, 0.1)
        .with_horizon(2)
        .with_x_bar(DVector::from_vec(vec![3.0, 2.0]));
    let cert = synth(&p, &SynthOptions::default()).unwrap();
    let steps = 60;
    for seed in 0..100u64 {
        let mode = if seed % 4 == 0 { DisturbanceMode::Vertices } else { DisturbanceMode::Uniform };
        let d = sample_disturbances(&p.cone, steps, mode, seed);
        let t = rollout(&p, &cert.recovered.k, &d, steps).unwrap();
        let realized = t.total_cost() + cert.value(steps, &t.x[steps]);
        assert!(realized <= cert.nu() + 1e-6, "{realized} > {}", cert.nu());
        assert!(t.worst_constraint() <= 1.0 + 1e-7);
        for k in 0..=steps {
            assert!(cert.value(k, &t.x[k]) <= cert.nu() + 1e-6);
        }
        assert!(value_decrease_check(&cert, &t).unwrap() >= -1e-6);
    }
}

#[test]
fn robust_finite_bound_holds_along_sampled_rollouts() {
    let mut pf = DMatrix::identity(3, 3);
    pf[(0, 0)] = 0.1;
    let p = build_example(0.25f64, 0.1)
        .with_kind(ProblemKind::RobustFinite)
        .with_pf(pf)
        .with_horizon(3)
        .with_x_bar(DVector::from_vec(vec![-2.0, 4.0]));
    let cert = synth(&p, &SynthOptions::default()).unwrap();
    assert!(verify_certificate(&p, &cert, 1e-6).unwrap().passed());
    for seed in 0..50u64 {
        let d = sample_disturbances(&p.cone, 3, DisturbanceMode::Uniform, seed);
        let t = rollout(&p, &cert.recovered.k, &d, 3).unwrap();
        let xn = lift(&t.x[3]);
        let terminal = (xn.transpose() * &p.pf * &xn)[(0, 0)];
        assert!(t.total_cost() + terminal <= cert.nu() + 1e-6);
    }
}

#[test]
fn nominal_certificates_roll_out_feasibly() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let (p, _) = random_feasible_nominal(&mut rng);
        let cert = synth(&p, &SynthOptions::default()).unwrap();
        assert!(verify_certificate(&p, &cert, 1e-6).unwrap().passed());
        let n = p.horizon();
        let d = DisturbanceSequence::zero(&p.cone, n);
        let t = rollout(&p, &cert.recovered.k, &d, n).unwrap();
        assert!(t.worst_constraint() <= 1.0 + 1e-7, "{}", t.worst_constraint());
        let xn = lift(&t.x[n]);
        let terminal = (xn.transpose() * &p.pf * &xn)[(0, 0)];
        assert!(t.total_cost() + terminal <= cert.nu() * (1.0 + 1e-8) + 1e-8);
        assert!(value_decrease_check(&cert, &t).unwrap() >= -1e-8 * cert.nu().max(1.0));
    }
}

fn zero_system() -> Problem<f64> {
    let mut stage = nominal_stage(DMatrix::zeros(1, 1), DMatrix::zeros(1, 1), DVector::zeros(1), vec![row(&[0.0], &[0.0])]);
    stage.c1.fill(0.0);
    stage.d11.fill(0.0);
    Problem {
        stages: vec![stage; 3],
        pf: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0])),
        x_bar: DVector::zeros(1),
        cone: MultiplierCone::default(),
        kind: ProblemKind::NominalFinite,
    }
}

#[test]
fn zero_system_candidate_parameters() {
    let p = zero_system();
    let t = open_loop(&p, &[DVector::zeros(1), DVector::zeros(1)]);
    let params = candidate_params(&p, &t, CRule::Doubled, NuTildeChoice::Rule).unwrap();
    assert_eq!(params.c, vec![2.0, 2.0, 2.0]);
    assert_eq!(params.eps, 1.0);
    assert_eq!(params.nu_tilde, 0.5);
    let cert = open_loop_candidate(&p, &t, &CandidateOptions::default()).unwrap();
    assert!(cert.program_margin > 0.0);
    assert!(verify_certificate(&p, &cert, 1e-6).unwrap().passed());
}

fn nominal_example(horizon: usize, x: [f64; 2]) -> Problem<f64> {
    let mut pf = DMatrix::identity(3, 3);
    pf[(0, 0)] = 0.1;
    build_example(0.0, 0.0)
        .with_kind(ProblemKind::NominalFinite)
        .with_pf(pf)
        .with_horizon(horizon)
        .with_x_bar(DVector::from_row_slice(&x))
}

#[test]
fn example_trajectory_candidate_is_feasible() {
    let p = nominal_example(3, [1.0, 1.0]);
    let t = open_loop(&p, &vec![DVector::zeros(1); 3]);
    assert!(t.worst_constraint() < 1.0);
    for rule in [CRule::Doubled, CRule::Plain] {
        let o = CandidateOptions {
            rule,
            ..CandidateOptions::default()
        };
        let cert = open_loop_candidate(&p, &t, &o).unwrap();
        assert!(cert.program_margin > 0.0, "{rule:?}");
        let rank_one = open_loop_candidate(
            &p,
            &t,
            &CandidateOptions {
                strict: false,
                ..o
            },
        )
        .unwrap();
        assert!(rank_one.program_margin >= -1e-8, "{rule:?} {}", rank_one.program_margin);
    }
}

#[test]
fn touching_trajectory_is_rejected() {
    let p = nominal_example(2, [8.0, 0.0]);
    let t = open_loop(&p, &[DVector::from_element(1, -0.5), DVector::zeros(1)]);
    let err = open_loop_candidate(&p, &t, &CandidateOptions::default()).unwrap_err();
    assert!(matches!(err, SynthError::Candidate(_)), "{err}");
}

#[test]
fn custom_nu_tilde_is_checked() {
    let p = nominal_example(2, [1.0, 1.0]);
    let t = open_loop(&p, &vec![DVector::zeros(1); 2]);
    let rule = candidate_params(&p, &t, CRule::Plain, NuTildeChoice::Rule).unwrap();
    let ok = candidate_params(&p, &t, CRule::Plain, NuTildeChoice::Custom(rule.nu_tilde * 0.5)).unwrap();
    assert_eq!(ok.nu_tilde, rule.nu_tilde * 0.5);
    assert!(candidate_params(&p, &t, CRule::Plain, NuTildeChoice::Custom(rule.nu_tilde * 2.0)).is_err());
}

#[test]
fn candidate_bound_dominates_the_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let (p, t) = random_feasible_nominal(&mut rng);
        let cand = open_loop_candidate(&p, &t, &CandidateOptions::default()).unwrap();
        assert!(cand.program_margin > 0.0);
        assert!(verify_certificate(&p, &cand, 1e-6).unwrap().passed());
        let cert = synth(&p, &SynthOptions::default()).unwrap();
        // maximizing nu~ can only improve on the candidate bound
        assert!(cert.nu() <= cand.nu() * (1.0 + 1e-6));
    }
}

#[test]
fn tightened_cost_at_zero_is_the_plain_bound() {
    let p = nominal_example(2, [2.0, -1.0]);
    let o = SynthOptions::default();
    let plain = synth(&p, &o).unwrap().nu();
    let t0 = tightened_cost(&p, 0.0, &o).unwrap();
    assert!((plain - t0).abs() <= 1e-9 * plain);
}

#[test]
fn tightened_gap_shrinks_on_the_scalar_qp() {
    let p = scalar_qp();
    let o = ridge_opts();
    let gaps: Vec<f64> = [0.0, 10.0, 100.0, 1000.0]
        .iter()
        .map(|&t| tightened_cost(&p, t, &o).unwrap() - 1.5)
        .collect();
    for w in gaps.windows(2) {
        // the bound is tight already at t = 0; only solver noise remains
        assert!(w[1] <= w[0] + 1e-6, "{gaps:?}");
    }
    assert!(gaps.iter().all(|g| *g >= -1e-6 && *g <= 1e-4), "{gaps:?}");
}

#[test]
fn tightened_cost_approaches_the_riccati_cost() {
    let p = deconstrained_lqr(3);
    let lqr = riccati_sweep(&p).unwrap().cost;
    let o = ridge_opts();
    let mut prev = f64::INFINITY;
    for t in [0.0, 10.0, 100.0, 1e4] {
        let c = tightened_cost(&p, t, &o).unwrap();
        let gap = c - lqr;
        assert!(gap >= -1e-6 * lqr, "t = {t}: {c} below {lqr}");
        assert!(gap <= prev + 1e-6 * lqr, "t = {t}: gap {gap} after {prev}");
        prev = gap;
    }
    assert!(prev / lqr <= 1e-3, "{prev} / {lqr}");
}

use lmih_conic::{feasibility_margin, residuals, solve, BlockLmi, Program, Sense, SolverOptions, Status};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sym(n: usize, vals: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, n, vals)
}

fn opts() -> SolverOptions<f64> {
    SolverOptions::default()
}

#[test]
fn max_t_with_identity_minus_t_psd_is_one() {
    let mut p = Program::new(1);
    p.objective[0] = 1.0;
    let mut b = BlockLmi::new(DMatrix::identity(3, 3), Sense::Psd);
    b.add_term(0, -DMatrix::identity(3, 3));
    p.push(b);
    let sol = solve(&p, &opts()).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    assert!((sol.objective - 1.0).abs() < 1e-7);
    assert!(sol.iterations <= 30, "{} iterations", sol.iterations);
}

#[test]
fn off_diagonal_bound_is_one() {
    // max t s.t. [[1, t], [t, 1]] ⪰ 0, t >= 0
    let mut p = Program::new(1);
    p.objective[0] = 1.0;
    let mut b = BlockLmi::new(DMatrix::identity(2, 2), Sense::Psd);
    b.add_term(0, sym(2, &[0.0, 1.0, 1.0, 0.0]));
    p.push(b);
    let mut nn = BlockLmi::new(DMatrix::zeros(1, 1), Sense::Nonneg);
    nn.add_term(0, DMatrix::identity(1, 1));
    p.push(nn);
    let sol = solve(&p, &opts()).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    assert!((sol.objective - 1.0).abs() < 1e-7, "{}", sol.objective);
    assert!(sol.iterations <= 30);
}

#[test]
fn scalar_upper_bound() {
    let mut p = Program::new(1);
    p.objective[0] = 1.0;
    let mut b = BlockLmi::new(DMatrix::from_element(1, 1, 3.0), Sense::Nonneg);
    b.add_term(0, -DMatrix::identity(1, 1));
    p.push(b);
    let sol = solve(&p, &opts()).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    assert!((sol.objective - 3.0).abs() < 1e-7);
    assert!(sol.iterations <= 30);
}

#[test]
fn equality_blocks_are_enforced() {
    // max x0 + x1 s.t. x0 - x1 = 0.5, x0 + x1 <= 2
    let mut p = Program::new(2);
    p.objective = DVector::from_vec(vec![1.0, 1.0]);
    let mut eq = BlockLmi::new(DMatrix::from_element(1, 1, -0.5), Sense::Zero);
    eq.add_term(0, DMatrix::identity(1, 1));
    eq.add_term(1, -DMatrix::identity(1, 1));
    p.push(eq);
    let mut ub = BlockLmi::new(DMatrix::from_element(1, 1, 2.0), Sense::Nonneg);
    ub.add_term(0, -DMatrix::identity(1, 1));
    ub.add_term(1, -DMatrix::identity(1, 1));
    p.push(ub);
    let sol = solve(&p, &opts()).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    assert!((sol.x[0] - 1.25).abs() < 1e-6 && (sol.x[1] - 0.75).abs() < 1e-6, "{}", sol.x);
}

#[test]
fn inconsistent_constant_equality_is_infeasible() {
    let mut p = Program::<f64>::new(1);
    p.push(BlockLmi::new(DMatrix::identity(1, 1), Sense::Zero));
    let sol = solve(&p, &opts()).unwrap();
    assert_eq!(sol.status, Status::InfeasibleCertified);
}

#[test]
fn phase1_matches_grid_oracle() {
    // max_x min eig [[1, x], [x, 0.25]] is attained at x = 0: 0.25
    let mut p = Program::new(1);
    let mut b = BlockLmi::new(sym(2, &[1.0, 0.0, 0.0, 0.25]), Sense::Psd);
    b.add_term(0, sym(2, &[0.0, 1.0, 1.0, 0.0]));
    p.push(b);
    let m = feasibility_margin(&p, &opts()).unwrap();
    let grid = (-2000..=2000)
        .map(|i| {
            let x = i as f64 * 1e-3;
            SymmetricEigen::new(sym(2, &[1.0, x, x, 0.25])).eigenvalues.min()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    assert!((m.t_star - grid).abs() < 1e-6, "{} vs {}", m.t_star, grid);
    assert!(m.is_strictly_feasible(1e-7));
}

#[test]
fn phase1_detects_empty_lmi() {
    // [[x, 1], [1, -x]] has determinant -x^2 - 1 < 0 for every x
    let mut p = Program::new(1);
    let mut b = BlockLmi::new(sym(2, &[0.0, 1.0, 1.0, 0.0]), Sense::Psd);
    b.add_term(0, sym(2, &[1.0, 0.0, 0.0, -1.0]));
    p.push(b);
    let m = feasibility_margin(&p, &opts()).unwrap();
    assert!(!m.is_strictly_feasible(1e-7));
    assert!((m.t_star + 1.0).abs() < 1e-6, "{}", m.t_star);
}

#[test]
fn f32_solves_a_toy_problem() {
    let mut p = Program::<f32>::new(1);
    p.objective[0] = 1.0;
    let mut b = BlockLmi::new(DMatrix::identity(2, 2), Sense::Psd);
    b.add_term(0, -DMatrix::identity(2, 2));
    p.push(b);
    let sol = solve(&p, &SolverOptions::default().with_tol(1e-5)).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    assert!((sol.objective - 1.0).abs() < 1e-4);
}

fn random_program(seed: u64, n: usize, dims: &[usize]) -> Program<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Program::new(n);
    for &d in dims {
        let mut c = DMatrix::<f64>::identity(d, d) * 2.0;
        for i in 0..d {
            for j in 0..i {
                let v = rng.random_range(-0.3..0.3);
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
        }
        let mut b = BlockLmi::new(c, Sense::Psd);
        for k in 0..n {
            let mut g = DMatrix::zeros(d, d);
            for i in 0..d {
                for j in 0..=i {
                    let v = rng.random_range(-1.0..1.0);
                    g[(i, j)] = v;
                    g[(j, i)] = v;
                }
            }
            b.add_term(k, g);
        }
        p.push(b);
    }
    // Bounded feasible set: |x_k| <= 5.
    for k in 0..n {
        for s in [1.0, -1.0] {
            let mut b = BlockLmi::new(DMatrix::from_element(1, 1, 5.0), Sense::Nonneg);
            b.add_term(k, DMatrix::from_element(1, 1, -s));
            p.push(b);
        }
    }
    for k in 0..n {
        p.objective[k] = rng.random_range(-1.0..1.0);
    }
    p
}

#[test]
fn residuals_agree_with_independent_eigensolver() {
    let p = random_program(7, 3, &[3, 4]);
    let x = DVector::from_vec(vec![0.2, -0.1, 0.4]);
    let res = residuals(&p, &x);
    for (block, r) in p.blocks.iter().zip(&res) {
        let mut v = block.constant.clone();
        for (k, g) in &block.terms {
            v += g * x[*k];
        }
        // power iteration on (c I - V) for the smallest eigenvalue
        let d = v.nrows();
        let shift = v.iter().map(|e| e.abs()).sum::<f64>() + 1.0;
        let m = DMatrix::identity(d, d) * shift - &v;
        let mut q = DVector::from_element(d, 1.0);
        for _ in 0..5000 {
            q = &m * &q;
            q /= q.norm();
        }
        let lmin = shift - (q.transpose() * &m * &q)[(0, 0)];
        assert!((r.margin() - lmin).abs() < 1e-8, "{} vs {}", r.margin(), lmin);
    }
}

#[test]
fn solver_is_deterministic() {
    let p = random_program(11, 4, &[3, 3, 2]);
    let a = solve(&p, &opts()).unwrap();
    let b = solve(&p, &opts()).unwrap();
    assert_eq!(a.x, b.x);
    assert_eq!(a.iterations, b.iterations);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn optimal_points_are_feasible_and_weak_duality_holds(seed in 0u64..10_000, n in 1usize..5) {
        let p = random_program(seed, n, &[3, 2]);
        let sol = solve(&p, &opts()).unwrap();
        prop_assert_eq!(sol.status, Status::Optimal);
        for m in &sol.min_eig_by_block {
            prop_assert!(*m >= -1e-7, "block margin {}", m);
        }
        prop_assert!(sol.dual_objective >= sol.objective - 1e-6 * (1.0 + sol.objective.abs()));
    }

    #[test]
    fn phase1_margin_scales_with_the_program(seed in 0u64..10_000, s in 0.1f64..10.0) {
        let mut p = random_program(seed, 2, &[3]);
        p.blocks[0].constant *= 0.2;
        let a = feasibility_margin(&p, &opts()).unwrap();
        let b = feasibility_margin(&p.scaled(s), &opts()).unwrap();
        // Scaling the blocks scales the margin whenever the cap t <= 1 is inactive.
        prop_assume!(a.t_star < 0.99 && b.t_star < 0.99);
        prop_assert!((b.t_star - s * a.t_star).abs() < 1e-6 * (1.0 + s), "{} vs {}", b.t_star, s * a.t_star);
    }
}


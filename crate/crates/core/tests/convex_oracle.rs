mod common;

use std::sync::Arc;

use ndarray::{array, Array1, Array2};
use ridgelasso::convex::{kkt_residual, solve, GroupLassoProblem, SolveOptions};
use ridgelasso::synthetic::{generate_dataset, sample_target, TargetSpec};
use ridgelasso::trainer::{objective, train, Init, TrainConfig, Variant};
use ridgelasso::{enumerate_patterns, theta_of_beta, EnumerationMode, Network};

fn exact_problem(x: Array2<f64>, y: Array1<f64>, lambda: f64) -> GroupLassoProblem<f64> {
    let pats = enumerate_patterns(x.view(), EnumerationMode::Exact).unwrap();
    GroupLassoProblem::new(Arc::new(pats), y, lambda).unwrap()
}

#[test]
fn two_point_example_matches_brute_force() {
    let prob = exact_problem(array![[0.5], [-0.5]], array![1.0, 0.0], 0.05);
    let rep = solve(&prob, &SolveOptions::default()).unwrap();
    let oracle = common::brute_force_two_point([0.5, -0.5], [1.0, 0.0], 0.05, 4000);
    assert!((rep.objective - oracle).abs() <= 1e-6, "{} vs {oracle}", rep.objective);
    assert!(rep.kkt_residual <= 1e-8);
}

#[test]
fn null_data_gives_zero_solution() {
    let x = common::uniform_design(6, 2, 3);
    let prob = exact_problem(x, Array1::zeros(6), 0.1);
    let rep = solve(&prob, &SolveOptions::default()).unwrap();
    assert_eq!(rep.nonzero_blocks(), 0);
    assert_eq!(rep.objective, 0.0);
    let theta = theta_of_beta(&rep.beta);
    assert_eq!(theta.scaled_variation().value(), 0.0);
}

#[test]
fn optimum_is_a_strict_local_minimum_of_the_residual() {
    let x = common::uniform_design(10, 2, 11);
    let y = common::gaussian_vector(10, 12);
    let prob = exact_problem(x, y, 0.05);
    let rep = solve(&prob, &SolveOptions::default()).unwrap();
    assert!(rep.converged);
    // random feasible perturbations of the support never lower the objective
    let mut r = common::rng(5);
    for _ in 0..50 {
        let mut beta = rep.beta.clone();
        for i in beta.nonzero_blocks() {
            let mut b = beta.blocks.row_mut(i);
            let scale = 1.0 + 1e-3 * rand::Rng::random_range(&mut r, -1.0..1.0);
            b.mapv_inplace(|v| v * scale);
        }
        assert!(prob.objective(&beta) >= rep.objective - 1e-12);
    }
    assert!(kkt_residual(&prob, &rep.beta) <= 1e-8);
}

#[test]
fn trained_objective_never_beats_convex_optimum() {
    for seed in 0..4u64 {
        let spec = TargetSpec {
            d: 1 + (seed as usize % 2),
            atoms: 3,
            r: 1.0,
            seed,
            normalized: true,
        };
        let target: Network = sample_target(&spec).unwrap();
        let data = generate_dataset(&target, 12, 0.2, 100 + seed).unwrap();
        let lambda = 0.02;
        let prob = exact_problem(data.x.clone(), data.y.clone(), lambda);
        let rep = solve(&prob, &SolveOptions::default()).unwrap();
        let cfg = TrainConfig::new(
            Variant::ScaledVariation,
            lambda,
            0.1,
            5000,
            Init::BalancedRandom {
                width: 40,
                seed,
                scale: 0.1,
            },
        );
        let tr = train(data.x.view(), data.y.view(), &cfg).unwrap();
        let j = objective(&tr.final_net, data.x.view(), data.y.view(), lambda, Variant::ScaledVariation).unwrap();
        assert!(j >= rep.objective - 1e-6, "seed {seed}: {j} < {}", rep.objective);
    }
}

#[test]
fn training_from_convex_optimum_is_stationary() {
    let x = common::uniform_design(12, 2, 21);
    let y = common::gaussian_vector(12, 22);
    let lambda = 0.05;
    let prob = exact_problem(x.clone(), y.clone(), lambda);
    let rep = solve(&prob, &SolveOptions::default()).unwrap();
    let theta = theta_of_beta(&rep.beta).balance();
    let j0 = objective(&theta, x.view(), y.view(), lambda, Variant::ScaledVariation).unwrap();
    let mut cfg = TrainConfig::new(Variant::ScaledVariation, lambda, 1e-3, 1000, Init::Explicit(theta));
    cfg.snapshot_every = 1000;
    let tr = train(x.view(), y.view(), &cfg).unwrap();
    assert!((tr.final_objective() - j0).abs() <= 1e-6, "{} vs {j0}", tr.final_objective());
}

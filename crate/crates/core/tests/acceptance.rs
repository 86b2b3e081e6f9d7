//! End-to-end acceptance checks. Run with
//! `cargo test --release -p ridgelasso --test acceptance -- --nocapture`.
//!
//! Everything runs inside one test so the criteria execute one after another
//! and their wall-clock budgets are not inflated by sibling tests.

mod common;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use ndarray::{array, Array1, Array2};
use rand::Rng;
use ridgelasso::convex::{solve, GroupLassoProblem, SolveOptions};
use ridgelasso::experiments::{
    run_duality, run_generalization_curve, run_rate_curves, run_rf_comparison, ExperimentReport,
};
use ridgelasso::synthetic::{generate_dataset, lambda_default, sample_target, TargetSpec};
use ridgelasso::trainer::{balanced_random, train, Init, TrainConfig, Trainer, Variant};
use ridgelasso::{enumerate_patterns, EnumerationMode, Network};
use serde::de::DeserializeOwned;

struct Outcome {
    label: String,
    pass: bool,
    detail: String,
}

#[derive(Default)]
struct Ledger(Vec<Outcome>);

impl Ledger {
    fn record(&mut self, label: &str, pass: bool, detail: String) {
        println!("{} {label}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.0.push(Outcome {
            label: label.to_string(),
            pass,
            detail,
        });
    }

    fn report(&mut self, label: &str, rep: &ExperimentReport, names: &[&str]) {
        for &name in names {
            match rep.check(name) {
                Some(c) => {
                    let bounds = match (c.lower, c.upper) {
                        (Some(l), Some(u)) => format!("in [{l:e}, {u:e}]"),
                        (Some(l), None) => format!(">= {l:e}"),
                        (None, Some(u)) => format!("<= {u:e}"),
                        (None, None) => String::new(),
                    };
                    self.record(&format!("{label} {name}"), c.pass, format!("{:e} {bounds}", c.value));
                }
                None => self.record(&format!("{label} {name}"), false, "check missing".into()),
            }
        }
    }
}

fn config<C: DeserializeOwned>(name: &str) -> C {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.json"));
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn max_abs_diff(a: &Network, b: &Network) -> f64 {
    let dw = (&a.w - &b.w).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let da = (&a.a - &b.a).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    dw.max(da)
}

fn duality(l: &mut Ledger) {
    let rep = run_duality(&config("duality")).unwrap();
    l.report(
        "[1]",
        &rep,
        &["objective_rel_gap", "nu_l21_gap", "kkt_residual", "runtime_seconds"],
    );
    l.report("[6]", &rep, &["support_within_n_fraction"]);
}

fn two_point_brute_force(l: &mut Ledger) {
    let mut r = common::rng(2024);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let mut x: [f64; 2] = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
        while (x[0] - x[1]).abs() < 0.1 {
            x[1] = r.random_range(-1.0..1.0);
        }
        let y = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
        let lambda = r.random_range(0.01..0.2);
        let xs: Array2<f64> = array![[x[0]], [x[1]]];
        let pats = enumerate_patterns(xs.view(), EnumerationMode::Exact).unwrap();
        let prob = GroupLassoProblem::new(Arc::new(pats), Array1::from(y.to_vec()), lambda).unwrap();
        let rep = solve(&prob, &SolveOptions::default()).unwrap();
        let oracle = common::brute_force_two_point(x, y, lambda, 2000);
        worst = worst.max((rep.objective - oracle).abs());
    }
    l.record("[2] two-point brute force", worst <= 1e-6, format!("max |J^g - brute| = {worst:e} <= 1e-6"));
}

struct GapSetup {
    x: Array2<f64>,
    y: Array1<f64>,
    lambda: f64,
    init: Network,
}

fn gap_setup() -> GapSetup {
    let t: Network = sample_target(&TargetSpec {
        d: 2,
        atoms: 5,
        r: 2.0,
        seed: 7,
        normalized: true,
    })
    .unwrap();
    let ds = generate_dataset(&t, 100, 0.5, 3).unwrap();
    GapSetup {
        x: ds.x,
        y: ds.y,
        lambda: lambda_default(100, 2, 0.5, 1.0).unwrap(),
        init: balanced_random(2, 64, 1, 0.1),
    }
}

fn balance_gap(l: &mut Ledger) {
    let start = Instant::now();
    let s = gap_setup();
    let gap = |h: f64| {
        let cfg = TrainConfig::new(Variant::ScaledVariation, s.lambda, h, 10_000, Init::Explicit(s.init.clone()));
        train(s.x.view(), s.y.view(), &cfg).unwrap().max_balance_gap
    };
    let g1 = gap(1e-3);
    let g2 = gap(5e-4);
    let secs = start.elapsed().as_secs_f64();
    l.record("[3] balance gap", g1 <= 1e-5, format!("{g1:e} <= 1e-5"));
    l.record("[3] halving step halves gap", g1 / g2 >= 2.0, format!("ratio {:.4} >= 2", g1 / g2));
    l.record("[3] runtime", secs < 60.0, format!("{secs:.1} s < 60 s"));
}

fn variants_agree(l: &mut Ledger) {
    let s = gap_setup();
    let mut worst = 0.0f64;
    for seed in 0..5u64 {
        let init = balanced_random::<f64>(2, 64, 100 + seed, 0.1);
        let make = |v| TrainConfig::new(v, s.lambda, 1e-4, 1000, Init::Explicit(init.clone()));
        let mut a = Trainer::new(s.x.view(), s.y.view(), make(Variant::ScaledVariation)).unwrap();
        let mut b = Trainer::new(s.x.view(), s.y.view(), make(Variant::Ridge)).unwrap();
        for _ in 0..1000 {
            a.step();
            b.step();
            worst = worst.max(max_abs_diff(a.net(), b.net()));
        }
    }
    l.record("[4] variant trajectories", worst <= 1e-6, format!("max coordinate diff {worst:e} <= 1e-6 (h = 1e-4)"));
}

fn merge(l: &mut Ledger) {
    let mut r = common::rng(77);
    let mut worst_pred = 0.0f64;
    let mut worst_nu = f64::NEG_INFINITY;
    for k in 0..200u64 {
        let d = 1 + (k as usize % 2);
        let n = r.random_range(3..12);
        let x = common::uniform_design(n, d, 1000 + k);
        let pats = enumerate_patterns(x.view(), EnumerationMode::Exact).unwrap();
        let width = r.random_range(2..20);
        let mut neurons = Vec::with_capacity(width);
        for _ in 0..width {
            // reuse cones by drawing near an earlier neuron half of the time
            let w: Vec<f64> = if !neurons.is_empty() && r.random_bool(0.5) {
                let (_, base): &(f64, Vec<f64>) = &neurons[r.random_range(0..neurons.len())];
                base.iter().map(|v| v * r.random_range(0.5..2.0)).collect()
            } else {
                (0..=d).map(|_| r.random_range(-1.0..1.0)).collect()
            };
            neurons.push((r.random_range(-2.0..2.0), w));
        }
        let net = Network::from_neurons(d, &neurons, r.random_range(-1.0..1.0)).unwrap();
        let merged = net.merge_cone_neurons(&pats).unwrap();
        let p0 = net.forward_batch(x.view()).unwrap();
        let p1 = merged.forward_batch(x.view()).unwrap();
        for (a, b) in p0.iter().zip(p1.iter()) {
            worst_pred = worst_pred.max((a - b).abs() / (1.0 + a.abs()));
        }
        worst_nu = worst_nu.max(merged.scaled_variation().value() - net.scaled_variation().value());
    }
    l.record("[5] merge keeps predictions", worst_pred <= 1e-10, format!("max rel diff {worst_pred:e} <= 1e-10"));
    l.record("[5] merge never raises nu", worst_nu <= 1e-12, format!("max increase {worst_nu:e} <= 1e-12"));
}

#[test]
fn acceptance() {
    let mut l = Ledger::default();
    duality(&mut l);
    two_point_brute_force(&mut l);
    balance_gap(&mut l);
    variants_agree(&mut l);
    merge(&mut l);
    let rep = run_generalization_curve(&config("norm_bound")).unwrap();
    l.report("[7]", &rep, &["norm_bound_fraction", "runtime_seconds"]);
    let rep = run_generalization_curve(&config("generalization")).unwrap();
    l.report("[8]", &rep, &["risk_ratio_widest_to_narrowest", "runtime_seconds"]);
    let rep = run_rate_curves(&config("rates")).unwrap();
    l.report("[9]", &rep, &["approximation_slope", "estimation_slope", "runtime_seconds"]);
    let rep = run_rf_comparison(&config("rf_comparison")).unwrap();
    l.report("[10]", &rep, &["risk_ratio_d10", "risk_ratio_d1", "runtime_seconds"]);

    let failed: Vec<String> = l.0.iter().filter(|o| !o.pass).map(|o| format!("{}: {}", o.label, o.detail)).collect();
    println!("{} of {} checks passed", l.0.len() - failed.len(), l.0.len());
    assert!(failed.is_empty(), "failed:\n{}", failed.join("\n"));
}

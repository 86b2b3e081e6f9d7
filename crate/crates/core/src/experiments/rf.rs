use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    balanced_init, fit_trainer, median, mse, run_jobs, stream, timed, Check, CurvePoint, ExperimentReport, Row,
    TrainerSettings,
};
use crate::baselines::{fit_with_features, rf_excess_risk, sample_features};
use crate::error::{input_err, Result};
use crate::synthetic::{generate_dataset, lambda_default, single_atom_target, RegressionDataset};
use crate::trainer::{excess_risk, Init};
use crate::Network;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RfComparisonConfig {
    pub n: usize,
    pub dims: Vec<usize>,
    /// Outer weight of the single-atom target.
    pub r: f64,
    pub sigma: f64,
    pub tau: f64,
    pub seeds: usize,
    pub seed_base: u64,
    /// Size of the held-out set used to pick lambda.
    pub n_val: usize,
    pub n_test: usize,
    /// Exponents `k` of the candidate levels `lambda_default * 4^k` for the
    /// trained network.
    pub ours_grid: Vec<i32>,
    /// Same for the random-feature baseline.
    pub rf_grid: Vec<i32>,
    /// Feature count of the headline baseline; `None` means `n`.
    pub rf_width: Option<usize>,
    /// Additional feature counts for the width sweep.
    pub rf_widths: Vec<usize>,
    /// Width of the trained network; `None` means `n + 1`.
    pub ours_width: Option<usize>,
    /// Steps for the first (smallest) lambda come from `trainer.max_steps`;
    /// later levels warm-start and run this many.
    pub trainer: TrainerSettings,
    pub path_steps: usize,
    pub ratio_min: f64,
    pub ratio_min_dim: usize,
    pub control_dim: usize,
    pub control_band: [f64; 2],
    /// Allowed growth factor between consecutive widths in the sweep.
    pub rf_width_slack: f64,
    pub max_runtime_secs: f64,
}

impl Default for RfComparisonConfig {
    fn default() -> Self {
        Self {
            n: 200,
            dims: vec![1, 2, 5, 10],
            r: 10.0,
            sigma: 0.1,
            tau: 1.0,
            seeds: 20,
            seed_base: 0,
            n_val: 200,
            n_test: 20_000,
            ours_grid: (-2..=2).collect(),
            rf_grid: (-12..=2).collect(),
            rf_width: None,
            rf_widths: vec![50, 100, 400],
            ours_width: None,
            trainer: TrainerSettings {
                step: 0.03,
                max_steps: 8000,
                ..TrainerSettings::default()
            },
            path_steps: 3000,
            ratio_min: 3.0,
            ratio_min_dim: 10,
            control_dim: 1,
            control_band: [1.0 / 3.0, 3.0],
            rf_width_slack: 1.1,
            max_runtime_secs: 600.0,
        }
    }
}

impl RfComparisonConfig {
    fn rf_width(&self) -> usize {
        self.rf_width.unwrap_or(self.n)
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = self.rf_widths.clone();
        w.push(self.rf_width());
        w.sort_unstable();
        w.dedup();
        w
    }
}

/// Lambda picked by held-out error; ties keep the earlier level.
struct Tuned<M> {
    model: M,
    lambda: f64,
    validation_mse: f64,
}

fn keep_best<M>(best: &mut Option<Tuned<M>>, cand: Tuned<M>) {
    if best.as_ref().is_none_or(|b| cand.validation_mse < b.validation_mse) {
        *best = Some(cand);
    }
}

/// Trains along the ascending lambda path with warm starts.
fn tune_ours(
    cfg: &RfComparisonConfig,
    train: &RegressionDataset<f64>,
    val: &RegressionDataset<f64>,
    base: f64,
    seed: u64,
    path: &mut Vec<Row>,
) -> Result<Tuned<Network>> {
    let width = cfg.ours_width.unwrap_or(cfg.n + 1);
    let mut grid = cfg.ours_grid.clone();
    grid.sort_unstable();
    let mut init = balanced_init(width, stream(seed, 3), &cfg.trainer);
    let mut best = None;
    for (i, &k) in grid.iter().enumerate() {
        let lambda = base * 4f64.powi(k);
        let steps = if i == 0 { cfg.trainer.max_steps } else { cfg.path_steps };
        let fit = fit_trainer(train, lambda, &cfg.trainer, steps, init)?;
        let v = mse(&fit.net.forward_batch(val.x.view())?, &val.y);
        let mut row = Row::new("rf_comparison", "ours_path", seed, cfg.n, train.d(), width, lambda);
        row.objective = Some(fit.objective);
        row.nu = Some(fit.net.scaled_variation().value());
        row.validation_mse = Some(v);
        path.push(row);
        init = Init::Explicit(fit.net.clone());
        keep_best(
            &mut best,
            Tuned {
                model: fit.net,
                lambda,
                validation_mse: v,
            },
        );
    }
    best.ok_or_else(|| crate::Error::Input("empty lambda grid".into()))
}

fn seed_rows(cfg: &RfComparisonConfig, seed: u64, d: usize) -> Result<Vec<Row>> {
    let target: Network = single_atom_target(d, cfg.r, stream(seed, 1))?;
    let train = generate_dataset(&target, cfg.n, cfg.sigma, stream(seed, 2))?;
    let val = generate_dataset(&target, cfg.n_val, cfg.sigma, stream(seed, 5))?;
    let base = lambda_default(cfg.n, d, cfg.sigma, cfg.tau)?;
    let mut rows = Vec::new();

    let ours = tune_ours(cfg, &train, &val, base, seed, &mut rows)?;
    let mut row = Row::new("rf_comparison", "ours", seed, cfg.n, d, ours.model.width(), ours.lambda);
    row.nu = Some(ours.model.scaled_variation().value());
    row.validation_mse = Some(ours.validation_mse);
    row.excess_risk = Some(excess_risk(&ours.model, &target, cfg.n_test, stream(seed, 4))?);
    rows.push(row);

    for m in cfg.widths() {
        let w = sample_features::<f64>(d, m, stream(seed, 100 + m as u64));
        let mut best = None;
        for &k in &cfg.rf_grid {
            let lambda = base * 4f64.powi(k);
            let model = fit_with_features(w.clone(), train.x.view(), train.y.view(), lambda)?;
            let v = mse(&model.predict(val.x.view())?, &val.y);
            keep_best(
                &mut best,
                Tuned {
                    model,
                    lambda,
                    validation_mse: v,
                },
            );
        }
        let best = best.ok_or_else(|| crate::Error::Input("empty lambda grid".into()))?;
        let mut row = Row::new("rf_comparison", "rf", seed, cfg.n, d, m, best.lambda);
        row.nu = Some(best.model.to_network().scaled_variation().value());
        row.validation_mse = Some(best.validation_mse);
        row.excess_risk = Some(rf_excess_risk(&best.model, &target, cfg.n_test, stream(seed, 4))?);
        rows.push(row);
    }
    Ok(rows)
}

/// Held-out-tuned random-feature ridge against the trained network on
/// single-atom targets, per input dimension.
pub fn run_rf_comparison(cfg: &RfComparisonConfig) -> Result<ExperimentReport> {
    if cfg.dims.is_empty() || cfg.ours_grid.is_empty() || cfg.rf_grid.is_empty() {
        return input_err("dims and lambda grids must be nonempty");
    }
    let start = Instant::now();
    let jobs: Vec<(u64, usize)> = (0..cfg.seeds as u64)
        .flat_map(|s| cfg.dims.iter().map(move |&d| (cfg.seed_base + s, d)))
        .collect();
    let (rows, timings) = run_jobs(&jobs, |&(seed, d)| {
        let key = Row::new("rf_comparison", "both", seed, cfg.n, d, 0, 0.0);
        timed(&key, || seed_rows(cfg, seed, d))
    })?;
    let mut report = ExperimentReport::assemble("rf_comparison", cfg, rows, timings, start.elapsed().as_secs_f64())?;

    let risks = |method: &str, d: usize, m: Option<usize>| -> Vec<f64> {
        report
            .rows_of("rf_comparison", method)
            .filter(|r| r.d == d && m.is_none_or(|m| r.m == m))
            .filter_map(|r| r.excess_risk)
            .collect()
    };
    let mut dims = cfg.dims.clone();
    dims.sort_unstable();
    dims.dedup();
    let mut curves = Vec::new();
    let mut ratio = |d: usize| -> f64 {
        let rf = risks("rf", d, Some(cfg.rf_width()));
        let ours = risks("ours", d, None);
        curves.extend(CurvePoint::from_values("rf_risk", d as f64, &rf));
        curves.extend(CurvePoint::from_values("ours_risk", d as f64, &ours));
        median(&rf) / median(&ours)
    };
    let ratios: Vec<(usize, f64)> = dims.iter().map(|&d| (d, ratio(d))).collect();
    for &(d, r) in &ratios {
        curves.push(CurvePoint {
            series: "risk_ratio".into(),
            x: d as f64,
            median: r,
            q1: r,
            q3: r,
            count: 1,
        });
    }
    let ratio_at = |d: usize| ratios.iter().find(|p| p.0 == d).map_or(f64::NAN, |p| p.1);
    let mut monotone = true;
    for &d in &dims {
        let mut prev = f64::INFINITY;
        for m in cfg.widths() {
            let v = risks("rf", d, Some(m));
            curves.extend(CurvePoint::from_values(&format!("rf_risk_d{d}"), m as f64, &v));
            let med = median(&v);
            monotone &= med <= prev * cfg.rf_width_slack;
            prev = med;
        }
    }
    report.checks = vec![
        Check::at_least(
            &format!("risk_ratio_d{}", cfg.ratio_min_dim),
            ratio_at(cfg.ratio_min_dim),
            cfg.ratio_min,
        ),
        Check::new(
            &format!("risk_ratio_d{}", cfg.control_dim),
            ratio_at(cfg.control_dim),
            Some(cfg.control_band[0]),
            Some(cfg.control_band[1]),
        ),
        Check::at_least("rf_risk_nonincreasing_in_width", monotone as u8 as f64, 1.0),
        Check::at_most("runtime_seconds", report.wall_seconds, cfg.max_runtime_secs),
    ];
    report.curves = curves;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_comparison_rows() {
        let cfg = RfComparisonConfig {
            n: 30,
            dims: vec![1, 3],
            seeds: 2,
            n_val: 30,
            n_test: 2000,
            rf_grid: vec![-6, -2],
            ours_grid: vec![-1, 0],
            rf_widths: vec![10],
            trainer: TrainerSettings {
                step: 0.03,
                max_steps: 300,
                ..TrainerSettings::default()
            },
            path_steps: 100,
            ratio_min_dim: 3,
            ..RfComparisonConfig::default()
        };
        let rep = run_rf_comparison(&cfg).unwrap();
        // per (seed, d): 2 path rows, 1 tuned row, 2 baseline widths
        assert_eq!(rep.rows.len(), 2 * 2 * 5);
        for r in rep.rows_of("rf_comparison", "rf") {
            assert!(r.excess_risk.unwrap() >= 0.0);
            assert!(cfg.rf_grid.iter().any(|&k| (r.lambda / lambda_default(30, r.d, 0.1, 1.0).unwrap() - 4f64.powi(k)).abs() < 1e-9));
        }
        assert!(rep.check("risk_ratio_d3").is_some());
        let again = run_rf_comparison(&cfg).unwrap();
        assert_eq!(rep.rows_csv().unwrap(), again.rows_csv().unwrap());
    }
}

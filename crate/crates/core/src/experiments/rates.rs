use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    balanced_init, fit_trainer, loglog_slope, median, run_jobs, stream, timed, Check, CurvePoint,
    ExperimentReport, Row, TrainerSettings,
};
use crate::error::{input_err, Result};
use crate::synthetic::{compress, generate_dataset, lambda_default, rng_for, sample_ball, sample_target, TargetSpec};
use crate::trainer::excess_risk;
use crate::Network;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApproximationConfig {
    pub d: usize,
    /// Atoms in the wide target.
    pub width: usize,
    pub r: f64,
    pub m_grid: Vec<usize>,
    pub seeds: usize,
    pub seed_base: u64,
    pub n_test: usize,
    pub slope_max: f64,
    /// Paired runs compress the target scaled by this factor.
    pub r_scale: f64,
    /// Allowed relative deviation of the paired error ratio from `r_scale`.
    pub r_linearity_tol: f64,
}

impl Default for ApproximationConfig {
    fn default() -> Self {
        Self {
            d: 1,
            width: 4096,
            r: 1.0,
            m_grid: vec![8, 16, 32, 64],
            seeds: 50,
            seed_base: 0,
            n_test: 100_000,
            slope_max: -0.8,
            r_scale: 2.0,
            r_linearity_tol: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    pub d: usize,
    pub atoms: usize,
    pub r: f64,
    pub sigma: f64,
    pub tau: f64,
    pub n_grid: Vec<usize>,
    pub seeds: usize,
    pub seed_base: u64,
    pub trainer: TrainerSettings,
    pub n_test: usize,
    pub slope_range: [f64; 2],
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            d: 2,
            atoms: 5,
            r: 2.0,
            sigma: 0.3,
            tau: 1.0,
            n_grid: vec![50, 100, 200, 400],
            seeds: 20,
            seed_base: 0,
            trainer: TrainerSettings {
                max_steps: 8000,
                ..TrainerSettings::default()
            },
            n_test: 20_000,
            slope_range: [-0.9, -0.25],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesConfig {
    pub approximation: ApproximationConfig,
    pub estimation: EstimationConfig,
    pub max_runtime_secs: f64,
}

impl Default for RatesConfig {
    fn default() -> Self {
        Self {
            approximation: ApproximationConfig::default(),
            estimation: EstimationConfig::default(),
            max_runtime_secs: 900.0,
        }
    }
}

enum Job {
    Approximation { seed: u64 },
    Estimation { seed: u64, n: usize },
}

fn l2_distance(a: &Network, b_values: &ndarray::Array1<f64>, x: &ndarray::Array2<f64>) -> Result<f64> {
    let diff = a.forward_batch(x.view())? - b_values;
    Ok(diff.mapv(|v| v * v).mean().unwrap_or(f64::NAN).sqrt())
}

fn approximation_rows(cfg: &ApproximationConfig, seed: u64) -> Result<Vec<Row>> {
    let spec = TargetSpec {
        d: cfg.d,
        atoms: cfg.width,
        r: cfg.r,
        seed: stream(seed, 1),
        normalized: true,
    };
    let target: Network = sample_target(&spec)?;
    let mut scaled = target.clone();
    scaled.a.mapv_inplace(|a| a * cfg.r_scale);
    let x = sample_ball::<f64, _>(&mut rng_for(stream(seed, 2)), cfg.n_test, cfg.d);
    let ft = target.forward_batch(x.view())?;
    let fs = scaled.forward_batch(x.view())?;
    let mut rows = Vec::new();
    for &m in &cfg.m_grid {
        let cseed = stream(seed, 10 + m as u64);
        for (method, t, values) in [("compress", &target, &ft), ("compress_scaled", &scaled, &fs)] {
            let c = compress(t, m, cseed)?;
            let mut row = Row::new("approximation", method, seed, 0, cfg.d, m, 0.0);
            row.nu = Some(c.net.scaled_variation().value());
            row.l2_error = Some(l2_distance(&c.net, values, &x)?);
            rows.push(row);
        }
    }
    Ok(rows)
}

fn estimation_row(cfg: &EstimationConfig, seed: u64, n: usize) -> Result<Row> {
    let lambda = lambda_default(n, cfg.d, cfg.sigma, cfg.tau)?;
    let spec = TargetSpec {
        d: cfg.d,
        atoms: cfg.atoms,
        r: cfg.r,
        seed: stream(seed, 1),
        normalized: true,
    };
    let target: Network = sample_target(&spec)?;
    let data = generate_dataset(&target, n, cfg.sigma, stream(seed, 2 + n as u64))?;
    let init = balanced_init(n + 1, stream(seed, 3), &cfg.trainer);
    let fit = fit_trainer(&data, lambda, &cfg.trainer, cfg.trainer.max_steps, init)?;
    let mut row = Row::new("estimation", "trainer", seed, n, cfg.d, n + 1, lambda);
    row.objective = Some(fit.objective);
    row.nu = Some(fit.net.scaled_variation().value());
    row.excess_risk = Some(excess_risk(&fit.net, &target, cfg.n_test, stream(seed, 4))?);
    Ok(row)
}

/// Approximation error of compressed wide targets against the budget, and
/// excess risk of the trained estimator against the sample size.
pub fn run_rate_curves(cfg: &RatesConfig) -> Result<ExperimentReport> {
    let a = &cfg.approximation;
    let e = &cfg.estimation;
    if a.m_grid.len() < 2 || e.n_grid.len() < 2 {
        return input_err("rate grids need at least two points");
    }
    let start = Instant::now();
    let mut jobs: Vec<Job> = (0..a.seeds as u64)
        .map(|s| Job::Approximation { seed: a.seed_base + s })
        .collect();
    for s in 0..e.seeds as u64 {
        for &n in &e.n_grid {
            jobs.push(Job::Estimation { seed: e.seed_base + s, n });
        }
    }
    let (rows, timings) = run_jobs(&jobs, |job| match *job {
        Job::Approximation { seed } => {
            let key = Row::new("approximation", "compress", seed, 0, a.d, 0, 0.0);
            timed(&key, || approximation_rows(a, seed))
        }
        Job::Estimation { seed, n } => {
            let key = Row::new("estimation", "trainer", seed, n, e.d, n + 1, 0.0);
            timed(&key, || estimation_row(e, seed, n).map(|r| vec![r]))
        }
    })?;
    let mut report = ExperimentReport::assemble("rates", cfg, rows, timings, start.elapsed().as_secs_f64())?;

    let rows = &report.rows;
    let mut curves = Vec::new();
    let mut m_grid = a.m_grid.clone();
    m_grid.sort_unstable();
    m_grid.dedup();
    let mut approx_medians = Vec::new();
    let mut ratios = Vec::new();
    for &m in &m_grid {
        let err = |method: &str| -> Vec<(u64, f64)> {
            rows.iter()
                .filter(|r| r.part == "approximation" && r.method == method && r.m == m)
                .filter_map(|r| r.l2_error.map(|v| (r.seed, v)))
                .collect()
        };
        let base = err("compress");
        let scaled = err("compress_scaled");
        let values: Vec<f64> = base.iter().map(|p| p.1).collect();
        curves.extend(CurvePoint::from_values("approximation_error", m as f64, &values));
        approx_medians.push(median(&values));
        ratios.extend(base.iter().zip(&scaled).map(|(b, s)| s.1 / b.1));
    }
    let mut n_grid = e.n_grid.clone();
    n_grid.sort_unstable();
    n_grid.dedup();
    let mut est_medians = Vec::new();
    for &n in &n_grid {
        let values: Vec<f64> = rows
            .iter()
            .filter(|r| r.part == "estimation" && r.n == n)
            .filter_map(|r| r.excess_risk)
            .collect();
        curves.extend(CurvePoint::from_values("estimation_risk", n as f64, &values));
        est_medians.push(median(&values));
    }
    let mx: Vec<f64> = m_grid.iter().map(|&m| m as f64).collect();
    let nx: Vec<f64> = n_grid.iter().map(|&n| n as f64).collect();
    let ratio = median(&ratios);
    report.checks = vec![
        Check::at_most("approximation_slope", loglog_slope(&mx, &approx_medians), a.slope_max),
        Check::new(
            "estimation_slope",
            loglog_slope(&nx, &est_medians),
            Some(e.slope_range[0]),
            Some(e.slope_range[1]),
        ),
        Check::new(
            "r_scaling_error_ratio",
            ratio,
            Some(a.r_scale * (1.0 - a.r_linearity_tol)),
            Some(a.r_scale * (1.0 + a.r_linearity_tol)),
        ),
        Check::at_most("runtime_seconds", report.wall_seconds, cfg.max_runtime_secs),
    ];
    report.curves = curves;
    Ok(report)
}

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    balanced_init, fit_trainer, median, run_jobs, stream, timed, Check, CurvePoint, ExperimentReport, Row,
    TrainerSettings,
};
use crate::error::{input_err, Result};
use crate::synthetic::{generate_dataset, lambda_default, sample_target, TargetSpec};
use crate::trainer::excess_risk;
use crate::Network;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneralizationConfig {
    pub n: usize,
    pub d: usize,
    pub sigma: f64,
    pub tau: f64,
    /// Scaled variation of the target.
    pub r: f64,
    pub atoms: usize,
    pub seeds: usize,
    pub seed_base: u64,
    /// Widths are `factor * (n + 1)`.
    pub m_factors: Vec<usize>,
    pub trainer: TrainerSettings,
    pub n_test: usize,
    /// Largest allowed ratio of median risk at the widest to the narrowest
    /// width; `None` skips the check.
    pub flatness_ratio: Option<f64>,
    pub norm_factor: f64,
    pub norm_fraction: f64,
    pub max_runtime_secs: f64,
}

impl Default for GeneralizationConfig {
    fn default() -> Self {
        Self {
            n: 100,
            d: 2,
            sigma: 0.1,
            tau: 1.0,
            r: 2.0,
            atoms: 5,
            seeds: 20,
            seed_base: 0,
            m_factors: vec![1, 2, 4, 8],
            trainer: TrainerSettings::default(),
            n_test: 20_000,
            flatness_ratio: Some(1.25),
            norm_factor: 3.0,
            norm_fraction: 0.9,
            max_runtime_secs: 600.0,
        }
    }
}

impl GeneralizationConfig {
    /// Single-width run at `n = 200` with noise `0.5` and 40 seeds, used for
    /// the norm bound alone.
    pub fn norm_bound() -> Self {
        Self {
            n: 200,
            sigma: 0.5,
            seeds: 40,
            m_factors: vec![1],
            flatness_ratio: None,
            max_runtime_secs: 300.0,
            ..Self::default()
        }
    }
}

/// Trains at each width of the grid with `lambda_default` and records excess
/// risk and scaled variation.
pub fn run_generalization_curve(cfg: &GeneralizationConfig) -> Result<ExperimentReport> {
    if cfg.m_factors.is_empty() || cfg.m_factors.contains(&0) {
        return input_err("m_factors must be nonempty and positive");
    }
    let start = Instant::now();
    let lambda = lambda_default(cfg.n, cfg.d, cfg.sigma, cfg.tau)?;
    let jobs: Vec<(u64, usize)> = (0..cfg.seeds as u64)
        .flat_map(|s| cfg.m_factors.iter().map(move |&f| (cfg.seed_base + s, f * (cfg.n + 1))))
        .collect();
    let (rows, timings) = run_jobs(&jobs, |&(seed, m)| {
        let key = Row::new("generalization", "trainer", seed, cfg.n, cfg.d, m, lambda);
        timed(&key, || {
            let spec = TargetSpec {
                d: cfg.d,
                atoms: cfg.atoms,
                r: cfg.r,
                seed: stream(seed, 1),
                normalized: true,
            };
            let target: Network = sample_target(&spec)?;
            let data = generate_dataset(&target, cfg.n, cfg.sigma, stream(seed, 2))?;
            let init = balanced_init(m, stream(seed, 3), &cfg.trainer);
            let fit = fit_trainer(&data, lambda, &cfg.trainer, cfg.trainer.max_steps, init)?;
            let mut row = key.clone();
            row.objective = Some(fit.objective);
            row.nu = Some(fit.net.scaled_variation().value());
            row.excess_risk = Some(excess_risk(&fit.net, &target, cfg.n_test, stream(seed, 4))?);
            Ok(vec![row])
        })
    })?;
    let mut report = ExperimentReport::assemble("generalization", cfg, rows, timings, start.elapsed().as_secs_f64())?;

    let widths: Vec<usize> = {
        let mut w: Vec<usize> = cfg.m_factors.iter().map(|f| f * (cfg.n + 1)).collect();
        w.sort_unstable();
        w.dedup();
        w
    };
    let at = |m: usize, f: fn(&Row) -> Option<f64>| -> Vec<f64> {
        report.rows.iter().filter(|r| r.m == m).filter_map(f).collect()
    };
    let mut curves = Vec::new();
    for &m in &widths {
        curves.extend(CurvePoint::from_values("excess_risk", m as f64, &at(m, |r| r.excess_risk)));
        curves.extend(CurvePoint::from_values("nu", m as f64, &at(m, |r| r.nu)));
    }
    let mut checks = Vec::new();
    if let (Some(limit), true) = (cfg.flatness_ratio, widths.len() >= 2) {
        let lo = median(&at(widths[0], |r| r.excess_risk));
        let hi = median(&at(widths[widths.len() - 1], |r| r.excess_risk));
        checks.push(Check::at_most("risk_ratio_widest_to_narrowest", hi / lo, limit));
    }
    // per seed, the median of nu over the width grid
    let bound = cfg.norm_factor * cfg.r;
    let seeds: Vec<u64> = (0..cfg.seeds as u64).map(|s| cfg.seed_base + s).collect();
    let within = seeds
        .iter()
        .filter(|&&s| {
            let nus: Vec<f64> = report.rows.iter().filter(|r| r.seed == s).filter_map(|r| r.nu).collect();
            median(&nus) <= bound
        })
        .count() as f64
        / seeds.len().max(1) as f64;
    checks.push(Check::at_least("norm_bound_fraction", within, cfg.norm_fraction));
    checks.push(Check::at_most("runtime_seconds", report.wall_seconds, cfg.max_runtime_secs));
    report.checks = checks;
    report.curves = curves;
    Ok(report)
}

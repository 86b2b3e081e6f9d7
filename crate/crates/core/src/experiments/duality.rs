use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{fit_convex, run_jobs, stream, timed, Check, CurvePoint, ExperimentReport, Row};
use crate::error::{input_err, Result};
use crate::synthetic::{generate_dataset, lambda_default, rng_for, sample_target, TargetSpec};
use crate::trainer::{objective, Variant};
use crate::Network;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualityConfig {
    pub seeds: usize,
    pub seed_base: u64,
    /// Inclusive range for the per-seed sample size.
    pub n_range: [usize; 2],
    /// Input dimensions, cycled over seeds.
    pub dims: Vec<usize>,
    /// Multiples of `lambda_default(n, d, 1, 1)`, cycled over seeds.
    pub lambda_factors: Vec<f64>,
    pub sigma: f64,
    pub atoms: usize,
    pub r: f64,
    pub solver_tol: f64,
    pub objective_rel_tol: f64,
    pub nu_tol: f64,
    pub kkt_tol: f64,
    pub max_runtime_secs: f64,
}

impl Default for DualityConfig {
    fn default() -> Self {
        Self {
            seeds: 50,
            seed_base: 0,
            n_range: [4, 20],
            dims: vec![1, 2],
            lambda_factors: vec![0.01, 0.1, 1.0],
            sigma: 0.1,
            atoms: 3,
            r: 1.0,
            solver_tol: 1e-8,
            objective_rel_tol: 1e-6,
            nu_tol: 1e-8,
            kkt_tol: 1e-8,
            max_runtime_secs: 120.0,
        }
    }
}

impl DualityConfig {
    fn validate(&self) -> Result<()> {
        let dmax = self.dims.iter().copied().max().unwrap_or(0);
        if self.dims.is_empty() || self.dims.contains(&0) || dmax > 3 {
            return input_err("duality dims must lie in 1..=3");
        }
        if self.lambda_factors.is_empty() || self.lambda_factors.iter().any(|&f| !(f > 0.0)) {
            return input_err("lambda factors must be positive");
        }
        if self.n_range[0] > self.n_range[1] || self.n_range[0] <= dmax {
            return input_err("n_range must be ordered and exceed every dimension");
        }
        Ok(())
    }
}

struct Instance {
    seed: u64,
    n: usize,
    d: usize,
    lambda: f64,
}

/// Solves the convex program exactly on small random instances and compares
/// it with the network it induces.
pub fn run_duality(cfg: &DualityConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let jobs: Vec<Instance> = (0..cfg.seeds)
        .map(|i| {
            let seed = cfg.seed_base + i as u64;
            let n = rng_for(stream(seed, 0)).random_range(cfg.n_range[0]..=cfg.n_range[1]);
            let d = cfg.dims[i % cfg.dims.len()];
            let factor = cfg.lambda_factors[(i / cfg.dims.len()) % cfg.lambda_factors.len()];
            let lambda = factor * lambda_default(n, d, 1.0, 1.0)?;
            Ok(Instance { seed, n, d, lambda })
        })
        .collect::<Result<_>>()?;
    let (rows, timings) = run_jobs(&jobs, |job| {
        let key = Row::new("duality", "convex", job.seed, job.n, job.d, 0, job.lambda);
        timed(&key, || {
            let spec = TargetSpec {
                d: job.d,
                atoms: cfg.atoms,
                r: cfg.r,
                seed: stream(job.seed, 1),
                normalized: true,
            };
            let target: Network = sample_target(&spec)?;
            let data = generate_dataset(&target, job.n, cfg.sigma, stream(job.seed, 2))?;
            let (theta, report) = fit_convex(&data, job.lambda, cfg.solver_tol)?;
            let j = objective(&theta, data.x.view(), data.y.view(), job.lambda, Variant::ScaledVariation)?;
            let mut row = key.clone();
            row.m = theta.width();
            row.objective = Some(j);
            row.convex_objective = Some(report.objective);
            row.nu = Some(theta.scaled_variation().value());
            row.l21 = Some(report.beta.l21_norm());
            row.kkt = Some(report.kkt_residual);
            row.nonzero_blocks = Some(report.nonzero_blocks());
            Ok(vec![row])
        })
    })?;
    let mut report = ExperimentReport::assemble("duality", cfg, rows, timings, start.elapsed().as_secs_f64())?;

    let rows = &report.rows;
    let fold = |f: &dyn Fn(&Row) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    let rel_gap = |r: &Row| {
        let (j, g) = (r.objective.unwrap_or(f64::NAN), r.convex_objective.unwrap_or(f64::NAN));
        (j - g).abs() / (1.0 + g)
    };
    let nu_gap = |r: &Row| (r.nu.unwrap_or(f64::NAN) - r.l21.unwrap_or(f64::NAN)).abs();
    let within_support = rows
        .iter()
        .filter(|r| r.nonzero_blocks.is_some_and(|b| b <= r.n))
        .count() as f64
        / rows.len().max(1) as f64;
    let checks = vec![
        Check::at_most("objective_rel_gap", fold(&rel_gap), cfg.objective_rel_tol),
        Check::at_most("nu_l21_gap", fold(&nu_gap), cfg.nu_tol),
        Check::at_most("kkt_residual", fold(&|r| r.kkt.unwrap_or(f64::NAN)), cfg.kkt_tol),
        Check::at_least("support_within_n_fraction", within_support, 1.0),
        Check::at_most("runtime_seconds", report.wall_seconds, cfg.max_runtime_secs),
    ];
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    let mut curves = Vec::new();
    for &n in &ns {
        let at: Vec<&Row> = rows.iter().filter(|r| r.n == n).collect();
        let gaps: Vec<f64> = at.iter().map(|r| rel_gap(r)).collect();
        let blocks: Vec<f64> = at.iter().filter_map(|r| r.nonzero_blocks).map(|b| b as f64).collect();
        curves.extend(CurvePoint::from_values("objective_rel_gap", n as f64, &gaps));
        curves.extend(CurvePoint::from_values("nonzero_blocks", n as f64, &blocks));
    }
    report.checks = checks;
    report.curves = curves;
    Ok(report)
}

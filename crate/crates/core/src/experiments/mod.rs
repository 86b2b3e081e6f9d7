//! Experiment harness: seeded runs over configurable grids, collected into
//! an [`ExperimentReport`] with per-run rows, grouped medians, plot-ready
//! curves and named threshold checks.
//!
//! Every run derives all of its randomness from `(config, seed)`, and rows
//! are sorted by key before writing, so `rows.csv` is reproducible
//! byte-for-byte. Wall-clock times go to a separate `timings.csv`.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arrangement::{enumerate_patterns, theta_of_beta, EnumerationMode};
use crate::convex::{solve, GroupLassoProblem, SolveOptions, SolveReport};
use crate::error::{input_err, Result};
use crate::synthetic::RegressionDataset;
use crate::trainer::{train, Init, TrainConfig, Variant};
use crate::Network;

mod duality;
mod generalization;
mod rates;
mod rf;

pub use duality::{run_duality, DualityConfig};
pub use generalization::{run_generalization_curve, GeneralizationConfig};
pub use rates::{run_rate_curves, ApproximationConfig, EstimationConfig, RatesConfig};
pub use rf::{run_rf_comparison, RfComparisonConfig};

/// Experiment names accepted by [`run_named`].
pub const EXPERIMENTS: [&str; 4] = ["duality", "generalization", "rates", "rf_comparison"];

/// `git describe`-style version of the build.
pub fn version() -> &'static str {
    env!("RIDGELASSO_VERSION")
}

/// Hex SHA-256 of the config's canonical JSON form.
pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let canonical = crate::json::to_string(config)?;
    let digest = Sha256::digest(canonical.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Parses `config_json` for the named experiment and runs it.
pub fn run_named(name: &str, config_json: &str) -> Result<ExperimentReport> {
    match name {
        "duality" => run_duality(&serde_json::from_str(config_json)?),
        "generalization" => run_generalization_curve(&serde_json::from_str(config_json)?),
        "rates" => run_rate_curves(&serde_json::from_str(config_json)?),
        "rf_comparison" => run_rf_comparison(&serde_json::from_str(config_json)?),
        _ => input_err(format!(
            "unknown experiment {name:?}; expected one of {}",
            EXPERIMENTS.join(", ")
        )),
    }
}

/// Independent seed stream `k` of run `seed`.
pub(crate) fn stream(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(k)
}

/// One run's record. Absent measurements serialize as empty CSV fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    /// Sub-experiment, e.g. `approximation` or `estimation`.
    pub part: String,
    pub method: String,
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub lambda: f64,
    pub objective: Option<f64>,
    pub convex_objective: Option<f64>,
    pub nu: Option<f64>,
    pub l21: Option<f64>,
    pub kkt: Option<f64>,
    pub nonzero_blocks: Option<usize>,
    pub excess_risk: Option<f64>,
    pub l2_error: Option<f64>,
    pub validation_mse: Option<f64>,
}

impl Row {
    pub fn new(part: &str, method: &str, seed: u64, n: usize, d: usize, m: usize, lambda: f64) -> Self {
        Self {
            part: part.to_string(),
            method: method.to_string(),
            seed,
            n,
            d,
            m,
            lambda,
            objective: None,
            convex_objective: None,
            nu: None,
            l21: None,
            kkt: None,
            nonzero_blocks: None,
            excess_risk: None,
            l2_error: None,
            validation_mse: None,
        }
    }

    fn key_cmp(&self, o: &Self) -> Ordering {
        (&self.part, &self.method, self.d, self.n, self.m, self.seed)
            .cmp(&(&o.part, &o.method, o.d, o.n, o.m, o.seed))
            .then(self.lambda.total_cmp(&o.lambda))
    }

    fn group(&self) -> (String, String, usize, usize, usize) {
        (self.part.clone(), self.method.clone(), self.d, self.n, self.m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub part: String,
    pub method: String,
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub wall_seconds: f64,
}

/// Output of one scheduled job: its rows and how long it took.
pub(crate) struct JobOutput {
    pub rows: Vec<Row>,
    pub timing: Timing,
}

/// Runs `f` and stamps a timing keyed by `row`'s coordinates.
pub(crate) fn timed(key: &Row, f: impl FnOnce() -> Result<Vec<Row>>) -> Result<JobOutput> {
    let start = Instant::now();
    let rows = f()?;
    Ok(JobOutput {
        rows,
        timing: Timing {
            part: key.part.clone(),
            method: key.method.clone(),
            seed: key.seed,
            n: key.n,
            d: key.d,
            m: key.m,
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    })
}

/// Runs jobs concurrently and flattens their outputs.
pub(crate) fn run_jobs<J: Sync>(
    jobs: &[J],
    f: impl Fn(&J) -> Result<JobOutput> + Sync,
) -> Result<(Vec<Row>, Vec<Timing>)> {
    use rayon::prelude::*;
    let outs: Vec<JobOutput> = jobs.par_iter().map(&f).collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for o in outs {
        rows.extend(o.rows);
        timings.push(o.timing);
    }
    Ok((rows, timings))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub count: usize,
}

/// Linear-interpolation quantile of an ascending slice.
fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Median and quartiles; `None` on an empty input. NaNs sort last.
pub fn quartiles(values: &[f64]) -> Option<Quartiles> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(Quartiles {
        median: quantile_sorted(&v, 0.5),
        q1: quantile_sorted(&v, 0.25),
        q3: quantile_sorted(&v, 0.75),
        count: v.len(),
    })
}

pub fn median(values: &[f64]) -> f64 {
    quartiles(values).map_or(f64::NAN, |q| q.median)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub part: String,
    pub method: String,
    pub d: usize,
    pub n: usize,
    pub m: usize,
    pub runs: usize,
    pub excess_risk: Option<Quartiles>,
    pub l2_error: Option<Quartiles>,
    pub nu: Option<Quartiles>,
}

/// Medians of every measured column, per `(part, method, d, n, m)`.
pub fn summarize(rows: &[Row]) -> Vec<GroupSummary> {
    let mut keys: Vec<_> = rows.iter().map(Row::group).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|key| {
            let members: Vec<&Row> = rows.iter().filter(|r| r.group() == key).collect();
            let col = |f: fn(&Row) -> Option<f64>| {
                let v: Vec<f64> = members.iter().filter_map(|r| f(r)).collect();
                quartiles(&v)
            };
            GroupSummary {
                runs: members.len(),
                excess_risk: col(|r| r.excess_risk),
                l2_error: col(|r| r.l2_error),
                nu: col(|r| r.nu),
                part: key.0,
                method: key.1,
                d: key.2,
                n: key.3,
                m: key.4,
            }
        })
        .collect()
}

/// Named pass/fail comparison of a measured value against bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub pass: bool,
}

impl Check {
    pub fn new(name: &str, value: f64, lower: Option<f64>, upper: Option<f64>) -> Self {
        let pass = value.is_finite()
            && lower.is_none_or(|l| value >= l)
            && upper.is_none_or(|u| value <= u);
        Self {
            name: name.to_string(),
            value,
            lower,
            upper,
            pass,
        }
    }

    pub fn at_most(name: &str, value: f64, upper: f64) -> Self {
        Self::new(name, value, None, Some(upper))
    }

    pub fn at_least(name: &str, value: f64, lower: f64) -> Self {
        Self::new(name, value, Some(lower), None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub series: String,
    pub x: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub count: usize,
}

impl CurvePoint {
    pub(crate) fn from_values(series: &str, x: f64, values: &[f64]) -> Option<Self> {
        quartiles(values).map(|q| Self {
            series: series.to_string(),
            x,
            median: q.median,
            q1: q.q1,
            q3: q.q3,
            count: q.count,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub version: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub rows: Vec<Row>,
    pub groups: Vec<GroupSummary>,
    pub curves: Vec<CurvePoint>,
    pub checks: Vec<Check>,
    pub timings: Vec<Timing>,
    pub wall_seconds: f64,
}

impl ExperimentReport {
    /// Sorts rows and timings, computes group summaries, and stamps the
    /// version and config hash.
    pub(crate) fn assemble<C: Serialize>(
        experiment: &str,
        config: &C,
        mut rows: Vec<Row>,
        mut timings: Vec<Timing>,
        wall_seconds: f64,
    ) -> Result<Self> {
        rows.sort_by(Row::key_cmp);
        timings.sort_by(|a, b| {
            (&a.part, &a.method, a.d, a.n, a.m, a.seed).cmp(&(&b.part, &b.method, b.d, b.n, b.m, b.seed))
        });
        Ok(Self {
            experiment: experiment.to_string(),
            version: version().to_string(),
            config_hash: config_hash(config)?,
            config: serde_json::to_value(config)?,
            groups: summarize(&rows),
            rows,
            curves: Vec::new(),
            checks: Vec::new(),
            timings,
            wall_seconds,
        })
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// Rows matching `part` and `method`.
    pub fn rows_of<'a>(&'a self, part: &'a str, method: &'a str) -> impl Iterator<Item = &'a Row> + 'a {
        self.rows.iter().filter(move |r| r.part == part && r.method == method)
    }

    pub fn rows_csv(&self) -> Result<String> {
        write_csv(&self.rows)
    }

    pub fn curves_csv(&self) -> Result<String> {
        write_csv(&self.curves)
    }

    pub fn timings_csv(&self) -> Result<String> {
        write_csv(&self.timings)
    }

    /// Everything except the per-run rows and timings.
    pub fn summary_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Summary<'a> {
            experiment: &'a str,
            version: &'a str,
            config_hash: &'a str,
            config: &'a serde_json::Value,
            passed: bool,
            checks: &'a [Check],
            groups: &'a [GroupSummary],
            runs: usize,
            wall_seconds: f64,
        }
        Ok(crate::json::to_string_pretty(&Summary {
            experiment: &self.experiment,
            version: &self.version,
            config_hash: &self.config_hash,
            config: &self.config,
            passed: self.passed(),
            checks: &self.checks,
            groups: &self.groups,
            runs: self.rows.len(),
            wall_seconds: self.wall_seconds,
        })?)
    }

    /// Writes `rows.csv`, `summary.json`, `curves.csv` and `timings.csv`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("rows.csv"), self.rows_csv()?)?;
        fs::write(dir.join("summary.json"), self.summary_json()?)?;
        fs::write(dir.join("curves.csv"), self.curves_csv()?)?;
        fs::write(dir.join("timings.csv"), self.timings_csv()?)?;
        Ok(())
    }
}

fn write_csv<S: Serialize>(records: &[S]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf8"))
}

/// Gradient-descent settings shared by the experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSettings {
    pub variant: Variant,
    pub step: f64,
    pub max_steps: usize,
    /// Radius of the balanced random initialization.
    pub init_scale: f64,
}

impl Default for TrainerSettings {
    fn default() -> Self {
        Self {
            variant: Variant::ScaledVariation,
            step: 0.3,
            max_steps: 20_000,
            init_scale: 0.1,
        }
    }
}

/// Trained network and its final objective.
pub(crate) struct TrainedFit {
    pub net: Network,
    pub objective: f64,
}

/// Trains from `init`, or from a balanced random net of `width` neurons.
pub(crate) fn fit_trainer(
    data: &RegressionDataset<f64>,
    lambda: f64,
    settings: &TrainerSettings,
    steps: usize,
    init: Init<f64>,
) -> Result<TrainedFit> {
    let mut cfg = TrainConfig::new(settings.variant, lambda, settings.step, steps, init);
    cfg.snapshot_every = steps.max(1);
    let tr = train(data.x.view(), data.y.view(), &cfg)?;
    let objective = tr.final_objective();
    Ok(TrainedFit {
        net: tr.final_net,
        objective,
    })
}

pub(crate) fn balanced_init(width: usize, seed: u64, settings: &TrainerSettings) -> Init<f64> {
    Init::BalancedRandom {
        width,
        seed,
        scale: settings.init_scale,
    }
}

/// Exact enumeration, convex solve, and the network read off the solution.
pub(crate) fn fit_convex(
    data: &RegressionDataset<f64>,
    lambda: f64,
    tol: f64,
) -> Result<(Network, SolveReport<f64>)> {
    let patterns = enumerate_patterns(data.x.view(), EnumerationMode::Exact)?;
    let problem = GroupLassoProblem::new(Arc::new(patterns), data.y.clone(), lambda)?;
    let opts = SolveOptions {
        tol,
        ..SolveOptions::default()
    };
    let report = solve(&problem, &opts)?;
    Ok((theta_of_beta(&report.beta), report))
}

/// Mean squared error of `pred` against `y`.
pub(crate) fn mse(pred: &ndarray::Array1<f64>, y: &ndarray::Array1<f64>) -> f64 {
    (pred - y).mapv(|e| e * e).mean().unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartile_examples() {
        let q = quartiles(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(q.median, 2.5);
        assert_eq!(q.q1, 1.75);
        assert_eq!(q.q3, 3.25);
        assert!(quartiles(&[]).is_none());
        assert_eq!(median(&[7.0]), 7.0);
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-1.5)).collect();
        assert!((loglog_slope(&x, &y) + 1.5).abs() < 1e-12);
    }

    #[test]
    fn check_bounds() {
        assert!(Check::at_most("a", 1.0, 1.0).pass);
        assert!(!Check::at_most("a", 1.1, 1.0).pass);
        assert!(!Check::at_least("a", f64::NAN, 0.0).pass);
        assert!(Check::new("a", 0.5, Some(0.0), Some(1.0)).pass);
    }

    #[test]
    fn hash_is_stable_hex() {
        let h = config_hash(&DualityConfig::default()).unwrap();
        assert_eq!(h.len(), 64);
        assert_eq!(h, config_hash(&DualityConfig::default()).unwrap());
        let mut other = DualityConfig::default();
        other.seeds += 1;
        assert_ne!(h, config_hash(&other).unwrap());
    }

    #[test]
    fn unknown_experiment_rejected() {
        assert!(run_named("nope", "{}").is_err());
    }

    #[test]
    fn rows_sort_by_key() {
        let a = Row::new("p", "m", 2, 5, 1, 3, 0.1);
        let b = Row::new("p", "m", 1, 5, 1, 3, 0.1);
        let c = Row::new("p", "a", 9, 5, 1, 3, 0.1);
        let mut v = vec![a.clone(), b.clone(), c.clone()];
        v.sort_by(Row::key_cmp);
        assert_eq!(v, vec![c, b, a]);
    }
}

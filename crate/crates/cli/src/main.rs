use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use ridgelasso::baselines::{rf_excess_risk, rf_fit};
use ridgelasso::convex::{solve, GroupLassoProblem, SolveOptions};
use ridgelasso::experiments::{run_named, EXPERIMENTS};
use ridgelasso::synthetic::{
    compress, generate_dataset, lambda_default, sample_target, single_atom_target, RegressionDataset, TargetSpec,
};
use ridgelasso::trainer::{excess_risk, train, Init, TrainConfig, Variant};
use ridgelasso::{enumerate_patterns, EnumerationMode, Network};

#[derive(Parser)]
#[command(name = "ridgelasso", version, about = "Scaled-variation ReLU networks, their convex reformulation, and experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Auto,
    Exact,
    Sampled,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Scaled,
    Ridge,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a target network and a noisy dataset on the unit ball.
    Generate {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        #[arg(long, default_value_t = 3)]
        atoms: usize,
        /// Scaled variation of the target.
        #[arg(long, default_value_t = 1.0)]
        r: f64,
        /// Use one atom with a uniformly random direction and zero bias.
        #[arg(long)]
        single_atom: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Dataset CSV; the target goes next to it as `<out>.target.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Gradient descent from a balanced random initialization.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "scaled")]
        variant: VariantArg,
        /// Defaults to lambda_default(n, d, --sigma, 1).
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        #[arg(long, default_value_t = 0.1)]
        step: f64,
        #[arg(long, default_value_t = 10_000)]
        steps: usize,
        /// Defaults to n + 1.
        #[arg(long)]
        width: Option<usize>,
        #[arg(long, default_value_t = 0.1)]
        init_scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        snapshot_every: usize,
        #[arg(long)]
        fit_intercept: bool,
        /// Target network JSON; enables the excess-risk estimate.
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long, default_value_t = 100_000)]
        n_test: usize,
        /// Trajectory CSV.
        #[arg(long)]
        out: PathBuf,
        /// Final network JSON.
        #[arg(long)]
        net_out: Option<PathBuf>,
    },
    /// Solve the convex group-lasso program and print the report JSON.
    SolveConvex {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, value_enum, default_value = "auto")]
        mode: Mode,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Network read off the solution.
        #[arg(long)]
        net_out: Option<PathBuf>,
    },
    /// Enumerate activation patterns of the data's hyperplane arrangement.
    Enumerate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "auto")]
        mode: Mode,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stratified resampling of a wide network down to at most m neurons.
    Compress {
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random-feature ridge regression.
    RfBaseline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long, default_value_t = 100_000)]
        n_test: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a named experiment and write rows.csv, summary.json, curves.csv
    /// and timings.csv.
    Experiment {
        name: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_data(path: &Path) -> Result<RegressionDataset<f64>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(RegressionDataset::read_csv(BufReader::new(f))?)
}

fn read_net(path: &Path) -> Result<Network> {
    let s = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Network::from_json(&s)?)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn mode(m: Mode, samples: Option<usize>, seed: u64) -> EnumerationMode {
    match m {
        Mode::Auto => EnumerationMode::Auto,
        Mode::Exact => EnumerationMode::Exact,
        Mode::Sampled => EnumerationMode::Sampled { samples, seed },
    }
}

fn target_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".target.json");
    PathBuf::from(s)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            d,
            n,
            sigma,
            atoms,
            r,
            single_atom,
            seed,
            out,
        } => {
            let target: Network = if single_atom {
                single_atom_target(d, r, seed)?
            } else {
                sample_target(&TargetSpec {
                    d,
                    atoms,
                    r,
                    seed,
                    normalized: true,
                })?
            };
            let data = generate_dataset(&target, n, sigma, seed.wrapping_add(1))?;
            data.write_csv(File::create(&out)?)?;
            fs::write(target_path(&out), target.to_json()?)?;
        }
        Command::Train {
            data,
            variant,
            lambda,
            sigma,
            step,
            steps,
            width,
            init_scale,
            seed,
            snapshot_every,
            fit_intercept,
            target,
            n_test,
            out,
            net_out,
        } => {
            let data = read_data(&data)?;
            let lambda = match lambda {
                Some(l) => l,
                None => lambda_default(data.n(), data.d(), sigma, 1.0)?,
            };
            let variant = match variant {
                VariantArg::Scaled => Variant::ScaledVariation,
                VariantArg::Ridge => Variant::Ridge,
            };
            let init = Init::BalancedRandom {
                width: width.unwrap_or(data.n() + 1),
                seed,
                scale: init_scale,
            };
            let mut cfg = TrainConfig::new(variant, lambda, step, steps, init);
            cfg.snapshot_every = snapshot_every;
            cfg.fit_intercept = fit_intercept;
            let tr = train(data.x.view(), data.y.view(), &cfg)?;
            tr.write_csv(File::create(&out)?)?;
            if let Some(p) = &net_out {
                fs::write(p, tr.final_net.to_json()?)?;
            }
            let risk = match &target {
                Some(p) => Some(excess_risk(&tr.final_net, &read_net(p)?, n_test, seed.wrapping_add(7))?),
                None => None,
            };
            let summary = serde_json::json!({
                "lambda": lambda,
                "steps": tr.steps,
                "objective": tr.final_objective(),
                "nu": tr.final_net.scaled_variation().value(),
                "max_balance_gap": tr.max_balance_gap,
                "diverged": tr.diverged,
                "excess_risk": risk,
            });
            println!("{summary}");
        }
        Command::SolveConvex {
            data,
            lambda,
            tol,
            mode: m,
            samples,
            seed,
            out,
            net_out,
        } => {
            let data = read_data(&data)?;
            let patterns = enumerate_patterns(data.x.view(), mode(m, samples, seed))?;
            let problem = GroupLassoProblem::new(Arc::new(patterns), data.y.clone(), lambda)?;
            let opts = SolveOptions {
                tol,
                ..SolveOptions::default()
            };
            let report = solve(&problem, &opts)?;
            emit(out.as_deref(), &report.to_json()?)?;
            if let Some(p) = &net_out {
                fs::write(p, ridgelasso::theta_of_beta(&report.beta).to_json()?)?;
            }
            if !report.converged {
                eprintln!("warning: stopped at residual {:e} above tol {tol:e}", report.kkt_residual);
            }
        }
        Command::Enumerate {
            data,
            mode: m,
            samples,
            seed,
            out,
        } => {
            let data = read_data(&data)?;
            let patterns = enumerate_patterns(data.x.view(), mode(m, samples, seed))?;
            emit(out.as_deref(), &patterns.to_json()?)?;
        }
        Command::Compress { target, m, seed, out } => {
            let c = compress(&read_net(&target)?, m, seed)?;
            emit(out.as_deref(), &c.net.to_json()?)?;
        }
        Command::RfBaseline {
            data,
            m,
            lambda,
            seed,
            target,
            n_test,
            out,
        } => {
            let data = read_data(&data)?;
            let model = rf_fit(&data, m, lambda, seed)?;
            let pred = model.predict(data.x.view())?;
            let train_mse = (&pred - &data.y).mapv(|e| e * e).mean().unwrap_or(f64::NAN);
            let risk = match &target {
                Some(p) => Some(rf_excess_risk(&model, &read_net(p)?, n_test, seed.wrapping_add(7))?),
                None => None,
            };
            let net: serde_json::Value = serde_json::from_str(&model.to_network().to_json()?)?;
            let summary = serde_json::json!({
                "m": m,
                "lambda": lambda,
                "train_mse": train_mse,
                "excess_risk": risk,
                "network": net,
            });
            emit(out.as_deref(), &serde_json::to_string_pretty(&summary)?)?;
        }
        Command::Experiment { name, config, out } => {
            if !EXPERIMENTS.contains(&name.as_str()) {
                bail!("unknown experiment {name:?}; expected one of {}", EXPERIMENTS.join(", "));
            }
            let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let report = run_named(&name, &text)?;
            report.write_dir(&out)?;
            for c in &report.checks {
                println!("{} {} = {:e}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value);
            }
            println!("wrote {} rows to {}", report.rows.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    run(Cli::parse())
}

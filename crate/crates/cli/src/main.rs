//! Experiment CLI.
//!
//! Every subcommand reads the same JSON config (scenario plus sweep
//! settings), honors `--seed` and `--out`, and writes deterministic CSV/JSON
//! artifacts: identical config and seed produce byte-identical outputs.
//!
//! Exit codes: 0 success, 2 invalid config or arguments, 3 failed
//! acceptance check (`--check`), 1 other errors.

use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use funreg::error::Error;
use funreg::estimator::{dac_fit, FitMode};
use funreg::experiments::{
    rate_sweep, schedule_name, write_plotdata_csv, write_results_csv, ExperimentConfig,
};
use funreg::grid::{Grid, GridFunction};
use funreg::lowerbound::{
    build_hypotheses, gv_packing, minimax_certificate, PackingStrategy,
};
use funreg::operators::effective_dimension;
use funreg::risk::{
    approximation_error, deviation_probability, excess_risk_monte_carlo, excess_risk_spectral,
    f_lambda_coeffs, sample_error,
};
use funreg::synth::{Dataset, Scenario};

#[derive(Parser)]
#[command(name = "funreg", version, about = "Functional linear regression rate experiments")]
struct Cli {
    /// JSON experiment config (scenario, sweep, schedule).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for generated artifacts.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Operator,
    Gram,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Spectral,
    MonteCarlo,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    BruteForce,
    Greedy,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset from the configured scenario.
    Generate {
        #[arg(long)]
        n: usize,
        /// Output file name inside --out.
        #[arg(long, default_value = "dataset.csv")]
        file: String,
    },
    /// Fit a divide-and-conquer RLS model to a saved dataset.
    Fit {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        lambda: f64,
        /// Number of equal partitions (must divide the sample count).
        #[arg(long, default_value_t = 1)]
        m: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::Operator)]
        mode: ModeArg,
        /// Base name for the model files inside --out.
        #[arg(long, default_value = "model")]
        file: String,
    },
    /// Score a fitted model against the scenario ground truth.
    Risk {
        /// Base name of the model files (as written by `fit`).
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = MethodArg::Spectral)]
        method: MethodArg,
        #[arg(long, default_value_t = 100_000)]
        mc_draws: usize,
    },
    /// Run the configured rate sweep and fit the log-log slope.
    RateSweep {
        /// Exit 3 unless the fitted slope matches the schedule exponent
        /// within ±0.15.
        #[arg(long)]
        check: bool,
    },
    /// Tabulate the effective dimension over a lambda grid.
    EffectiveDim {
        /// Comma-separated lambda values; defaults to six decades up to 1.
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
    },
    /// Monte-Carlo deviation-event probability next to its analytic bound.
    DeviationProb {
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        n_block: usize,
        #[arg(long, default_value_t = 2000)]
        trials: usize,
        /// Exit 3 if the empirical probability exceeds the bound (when the
        /// bound is informative).
        #[arg(long)]
        check: bool,
    },
    /// Lower-bound certificate: packing, hypothesis family, Fano bound.
    Lowerbound {
        /// Block length M of the explicit packing and hypothesis family.
        #[arg(long, default_value_t = 8)]
        packing_m: usize,
        #[arg(long, value_enum, default_value_t = StrategyArg::BruteForce)]
        strategy: StrategyArg,
        /// Scale constant in M = ⌈a N^{p/(p+2θ)}⌉ for the certificate.
        #[arg(long, default_value_t = 256.0)]
        a: f64,
        /// Sample size the certificate is evaluated at.
        #[arg(long)]
        n: u64,
        /// Exit 3 if any invariant fails numerically.
        #[arg(long)]
        check: bool,
    },
}

/// Model sidecar written next to the averaged slope estimate.
#[derive(Serialize, Deserialize)]
struct ModelSidecar {
    lambda: f64,
    m: usize,
    n_per_block: usize,
    seed: u64,
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Config(_)
                | Error::InvalidArgument(_)
                | Error::InvalidPartition(_)
                | Error::AssumptionViolated(_)
                | Error::Parse { .. } => 2,
                _ => 1,
            };
            std::process::exit(code);
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config <file.json> is required".into()))?;
    let text = fs::read_to_string(path)?;
    let mut cfg: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.scenario.validate()?;
    Ok(cfg)
}

fn build_scenario(cfg: &ExperimentConfig) -> Result<Scenario, Error> {
    let grid = Grid::uniform(cfg.grid_size)?;
    Scenario::build(cfg.scenario.clone(), &grid)
}

fn out_path(cli: &Cli, name: &str) -> Result<PathBuf, Error> {
    fs::create_dir_all(&cli.out)?;
    Ok(cli.out.join(name))
}

fn run(cli: Cli) -> Result<i32, Error> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Generate { n, file } => {
            let scenario = build_scenario(&cfg)?;
            let ds = scenario.generate_dataset(*n, cfg.seed)?;
            let path = out_path(&cli, file)?;
            ds.save(&path)?;
            println!("wrote {} samples to {}", n, path.display());
            Ok(0)
        }
        Command::Fit {
            dataset,
            lambda,
            m,
            mode,
            file,
        } => {
            let scenario = build_scenario(&cfg)?;
            let ds = Dataset::load(dataset)?;
            if ds.meta.scenario != *scenario.spec() {
                return Err(Error::Config(
                    "dataset was generated under a different scenario".into(),
                ));
            }
            let fit_mode = match mode {
                ModeArg::Operator => FitMode::Operator,
                ModeArg::Gram => FitMode::Gram,
            };
            let dac = dac_fit(&ds, &scenario, *lambda, *m, fit_mode, cfg.seed)?;
            let text_path = out_path(&cli, &format!("{file}.txt"))?;
            fs::write(&text_path, dac.averaged.to_text())?;
            let sidecar = ModelSidecar {
                lambda: *lambda,
                m: *m,
                n_per_block: ds.n() / m,
                seed: cfg.seed,
            };
            let json_path = out_path(&cli, &format!("{file}.json"))?;
            fs::write(
                &json_path,
                serde_json::to_string_pretty(&sidecar)
                    .map_err(|e| Error::Config(e.to_string()))?,
            )?;
            println!(
                "fitted m={} lambda={} -> {} / {}",
                m,
                lambda,
                text_path.display(),
                json_path.display()
            );
            Ok(0)
        }
        Command::Risk {
            model,
            method,
            mc_draws,
        } => {
            let scenario = build_scenario(&cfg)?;
            let sidecar: ModelSidecar = serde_json::from_str(&fs::read_to_string(
                model.with_extension("json"),
            )?)
            .map_err(|e| Error::Config(format!("bad model sidecar: {e}")))?;
            let beta = GridFunction::from_text(&fs::read_to_string(model.with_extension("txt"))?)?;
            let b_hat = DVector::from_vec(scenario.project(&beta)?);
            let excess = match method {
                MethodArg::Spectral => excess_risk_spectral(&b_hat, &scenario)?,
                MethodArg::MonteCarlo => {
                    excess_risk_monte_carlo(&beta, &scenario, *mc_draws, cfg.seed)?
                }
            };
            let approx = approximation_error(
                sidecar.lambda,
                scenario.spec().theta,
                scenario.gamma0(),
                scenario.mu(),
            );
            // Recover the operator-form coefficients from the estimate.
            let f_bar = DVector::from_iterator(
                scenario.truncation(),
                b_hat
                    .iter()
                    .zip(scenario.rho())
                    .map(|(&b, &r)| b / r.sqrt()),
            );
            let fl = f_lambda_coeffs(&scenario, sidecar.lambda)?;
            let sample = sample_error(&f_bar, &fl, scenario.mu())?;
            let method_name = match method {
                MethodArg::Spectral => "spectral",
                MethodArg::MonteCarlo => "monte_carlo",
            };
            let path = out_path(&cli, "risk.csv")?;
            let spec = scenario.spec();
            let mut body = String::from(
                "N,m,lambda,theta,p,sigma,excess_risk,approx_error,sample_error,method\n",
            );
            body.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                sidecar.m * sidecar.n_per_block,
                sidecar.m,
                sidecar.lambda,
                spec.theta,
                spec.p,
                spec.sigma,
                excess,
                approx,
                sample,
                method_name
            ));
            fs::write(&path, body)?;
            println!(
                "excess_risk={excess} approx_error={approx} sample_error={sample} ({method_name})"
            );
            Ok(0)
        }
        Command::RateSweep { check } => {
            cfg.validate()?;
            let result = rate_sweep(&cfg)?;
            let results_path = out_path(&cli, "results.csv")?;
            let mut buf = Vec::new();
            write_results_csv(&cfg, &result.rows, &mut buf)?;
            fs::write(&results_path, buf)?;
            let plot_path = out_path(&cli, "plotdata.csv")?;
            let mut buf = Vec::new();
            write_plotdata_csv(&result.mean_risks, &mut buf)?;
            fs::write(&plot_path, buf)?;

            #[derive(Serialize)]
            struct RateFitFile<'a> {
                schedule: &'static str,
                degenerate: bool,
                theoretical_exponent: f64,
                fit: &'a Option<funreg::experiments::RateFitResult>,
            }
            let fit_path = out_path(&cli, "ratefit.json")?;
            let file = RateFitFile {
                schedule: schedule_name(&cfg.schedule),
                degenerate: result.degenerate,
                theoretical_exponent: result.theoretical_exponent,
                fit: &result.fit,
            };
            fs::write(
                &fit_path,
                serde_json::to_string_pretty(&file).map_err(|e| Error::Config(e.to_string()))?,
            )?;

            match &result.fit {
                Some(fit) => println!(
                    "slope={:.4} (theory {:.4}, stderr {:.4}) over {} sample sizes",
                    fit.slope,
                    fit.theoretical_exponent,
                    fit.stderr,
                    result.mean_risks.len()
                ),
                None => println!(
                    "no slope fit ({} sample sizes, degenerate={})",
                    result.mean_risks.len(),
                    result.degenerate
                ),
            }
            if *check {
                let ok = result
                    .fit
                    .as_ref()
                    .map(|f| (f.slope - f.theoretical_exponent).abs() <= 0.15)
                    .unwrap_or(false);
                if !ok {
                    eprintln!("check failed: fitted slope outside tolerance");
                    return Ok(3);
                }
            }
            Ok(0)
        }
        Command::EffectiveDim { lambdas } => {
            let scenario = build_scenario(&cfg)?;
            let system = scenario.analytic_system();
            let grid_values = lambdas
                .clone()
                .unwrap_or_else(|| vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0]);
            let mut body = String::from("lambda,n_lambda\n");
            for lambda in grid_values {
                let v = effective_dimension(&system, lambda)?;
                body.push_str(&format!("{lambda},{v}\n"));
            }
            let path = out_path(&cli, "effdim.csv")?;
            fs::write(&path, body)?;
            println!("wrote {}", path.display());
            Ok(0)
        }
        Command::DeviationProb {
            lambda,
            n_block,
            trials,
            check,
        } => {
            let scenario = build_scenario(&cfg)?;
            let rep = deviation_probability(&scenario, *lambda, *n_block, *trials, cfg.seed)?;
            let mut body =
                String::from("lambda,n_block,trials,empirical,bound,c1,effective_dimension,mc_stderr\n");
            body.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                rep.lambda,
                rep.n_block,
                rep.trials,
                rep.empirical,
                rep.bound,
                rep.c1,
                rep.effective_dimension,
                rep.mc_stderr
            ));
            let path = out_path(&cli, "deviation.csv")?;
            fs::write(&path, body)?;
            println!(
                "P(deviation)={} bound={} over {} trials",
                rep.empirical, rep.bound, rep.trials
            );
            if *check && rep.bound < 1.0 && rep.empirical > rep.bound + 2.0 * rep.mc_stderr {
                eprintln!("check failed: empirical probability exceeds the bound");
                return Ok(3);
            }
            Ok(0)
        }
        Command::Lowerbound {
            packing_m,
            strategy,
            a,
            n,
            check,
        } => {
            let scenario = build_scenario(&cfg)?;
            let spec = scenario.spec();
            if spec.sigma <= 0.0 {
                return Err(Error::InvalidArgument(
                    "the lower-bound construction needs sigma > 0".into(),
                ));
            }
            let strat = match strategy {
                StrategyArg::BruteForce => PackingStrategy::BruteForce,
                StrategyArg::Greedy => PackingStrategy::Greedy,
            };
            let packing = gv_packing(*packing_m, strat, cfg.seed)?;
            let family = build_hypotheses(
                &packing,
                spec.theta,
                spec.sigma,
                scenario.mu(),
                scenario.lam(),
            )?;
            let family_ok = family.verify(scenario.lam())?;
            println!(
                "packing M={} size={} min_disagreement={} verified={}",
                packing.m,
                packing.codewords.len(),
                packing.min_disagreement,
                packing.verify()
            );
            println!(
                "hypothesis family: L={} r={} R={} verified={family_ok}",
                family.betas.len(),
                family.r,
                family.kl_radius
            );
            let cert = minimax_certificate(*a, *n, spec.theta, spec.p, spec.sigma, scenario.mu())?;
            let path = out_path(&cli, "certificate.json")?;
            fs::write(
                &path,
                serde_json::to_string_pretty(&cert).map_err(|e| Error::Config(e.to_string()))?,
            )?;
            println!(
                "certificate: M={} probability_bound={} risk_level={}",
                cert.m, cert.probability_bound, cert.risk_level
            );
            if *check && !(packing.verify() && family_ok) {
                eprintln!("check failed: packing or hypothesis family invariant violated");
                return Ok(3);
            }
            Ok(0)
        }
    }
}

//! Config-driven rate sweeps.
//!
//! A sweep draws `replicates` datasets at each sample size in `n_list`,
//! fits the divide-and-conquer estimator with the (λ, m) pair prescribed by
//! the selected schedule, records spectral risk reports, and fits the
//! log-log slope of mean risk against sample size. Little-o partition
//! schedules are realized with a fixed exponent slack `δ` and `m` floored to
//! the largest admissible divisor of `N`, so the `m | N` requirement always
//! holds exactly.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{dac_fit, FitMode};
use crate::grid::{Grid, DEFAULT_GRID_SIZE};
use crate::operators::effective_dimension;
use crate::risk::{risk_report_spectral, RiskReport};
use crate::rng::{stream, tag};
use crate::synth::{Scenario, ScenarioSpec};

/// Regularization/partition schedules from the convergence theorems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// `λ = N^{−1/(2θ+p)}`, `m ≤ N^{(2θ−p)/(4θ+2p) − δ}`.
    T2a,
    /// `λ = N^{−1/(2p)} (log N)^{3r/(2p)}`, `m ≤ (log N)^r`.
    T2bLog { r: f64 },
    /// Noiseless: `λ = N^{−(1−2η)/(2p)}`, `m ≤ N^{η−δ}`.
    T5Noiseless { eta: f64 },
    /// Embedding parameter `t`: `λ = N^{−1/(2θ+p)}`,
    /// `m ≤ N^{(2θ+p−t)/(2θ+p) − δ} / log N`.
    T6Embedding { t: f64 },
    /// Fixed exponents: `λ = N^{−lambda_exponent}`, `m ≤ N^{m_cap_exponent}`.
    Custom {
        lambda_exponent: f64,
        m_cap_exponent: f64,
    },
}

/// Declarative sweep configuration; the JSON form of this struct is the CLI
/// config format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSpec,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default)]
    pub n_list: Vec<u64>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    /// Exponent slack realizing the strict little-o schedule conditions.
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_grid_size() -> usize {
    DEFAULT_GRID_SIZE
}

fn default_delta() -> f64 {
    0.05
}

fn default_replicates() -> usize {
    50
}

fn default_schedule() -> Schedule {
    Schedule::T2a
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.n_list.is_empty() {
            return Err(Error::Config("n_list must not be empty".into()));
        }
        if self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("n_list must be strictly increasing".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.delta < 0.0 {
            return Err(Error::Config("delta must be nonnegative".into()));
        }
        match self.schedule {
            Schedule::T2bLog { r } if r <= 0.0 => {
                return Err(Error::Config("log-schedule exponent r must be positive".into()))
            }
            Schedule::T5Noiseless { eta } if !(eta > 0.0 && eta <= 0.5) => {
                return Err(Error::Config("eta must lie in (0, 1/2]".into()))
            }
            Schedule::T6Embedding { t } if !(t > 0.0 && t <= 1.0) => {
                return Err(Error::Config("embedding parameter t must lie in (0, 1]".into()))
            }
            _ => {}
        }
        Ok(())
    }

    /// The exponent of `N` the schedule is expected to exhibit: the risk
    /// decays like `N^{exponent}`.
    pub fn theoretical_exponent(&self) -> f64 {
        let theta = self.scenario.theta;
        let p = self.scenario.p;
        match self.schedule {
            Schedule::T2a | Schedule::T6Embedding { .. } | Schedule::Custom { .. } => {
                -2.0 * theta / (2.0 * theta + p)
            }
            // Polylog factors are ignored in the exponent.
            Schedule::T2bLog { .. } => -theta / p,
            Schedule::T5Noiseless { eta } => -theta * (1.0 - 2.0 * eta) / p,
        }
    }
}

/// Largest divisor of `n` that is ≤ `cap`; at least 1.
pub fn largest_divisor_leq(n: u64, cap: f64) -> u64 {
    let cap = cap.floor().min(n as f64);
    if cap < 2.0 {
        return 1;
    }
    let mut best = 1;
    for d in 1..=(cap as u64) {
        if n % d == 0 {
            best = d;
        }
    }
    best
}

/// The theorem-prescribed `(λ, m)` for sample size `n`.
pub fn schedule_params(config: &ExperimentConfig, n: u64) -> Result<(f64, u64)> {
    if n == 0 {
        return Err(Error::invalid("sample size must be positive"));
    }
    let nf = n as f64;
    let theta = config.scenario.theta;
    let p = config.scenario.p;
    let delta = config.delta;
    let (lambda, m_cap) = match config.schedule {
        Schedule::T2a => {
            let lambda = nf.powf(-1.0 / (2.0 * theta + p));
            let cap = nf.powf((2.0 * theta - p) / (4.0 * theta + 2.0 * p) - delta);
            (lambda, cap)
        }
        Schedule::T2bLog { r } => {
            let lambda = nf.powf(-1.0 / (2.0 * p)) * nf.ln().powf(3.0 * r / (2.0 * p));
            (lambda, nf.ln().powf(r))
        }
        Schedule::T5Noiseless { eta } => {
            let lambda = nf.powf(-(1.0 - 2.0 * eta) / (2.0 * p));
            (lambda, nf.powf(eta - delta))
        }
        Schedule::T6Embedding { t } => {
            let lambda = nf.powf(-1.0 / (2.0 * theta + p));
            let cap = nf.powf((2.0 * theta + p - t) / (2.0 * theta + p) - delta) / nf.ln();
            (lambda, cap)
        }
        Schedule::Custom {
            lambda_exponent,
            m_cap_exponent,
        } => (nf.powf(-lambda_exponent), nf.powf(m_cap_exponent)),
    };
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("schedule produced bad lambda {lambda}")));
    }
    Ok((lambda, largest_divisor_leq(n, m_cap)))
}

/// One sweep record: the scheduled parameters and the spectral risk report
/// of a single replicate.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub n: u64,
    pub replicate: usize,
    pub m: u64,
    pub lambda: f64,
    #[serde(flatten)]
    pub report: RiskReport,
}

/// Ordinary-least-squares line fit over (log N, log mean-risk) points.
#[derive(Debug, Clone, Serialize)]
pub struct RateFitResult {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub points: Vec<(f64, f64)>,
    pub theoretical_exponent: f64,
}

/// Full sweep output.
#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Mean excess risk per sample size.
    pub mean_risks: Vec<(u64, f64)>,
    pub fit: Option<RateFitResult>,
    /// Set when risks sit at the floating-point floor and a slope would be
    /// meaningless.
    pub degenerate: bool,
    pub theoretical_exponent: f64,
}

/// OLS slope/intercept/standard-error over at least four points with
/// distinct abscissae.
pub fn slope_fit(points: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    if points.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "need at least 4 points, got {}",
            points.len()
        )));
    }
    for (i, (xi, _)) in points.iter().enumerate() {
        for (xj, _) in &points[i + 1..] {
            if (xi - xj).abs() < 1e-12 {
                return Err(Error::InsufficientData("duplicated abscissa".into()));
            }
        }
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.0 - mean_x)).sum();
    let sxy: f64 = points
        .iter()
        .map(|p| (p.0 - mean_x) * (p.1 - mean_y))
        .sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let rss: f64 = points
        .iter()
        .map(|p| {
            let r = p.1 - (intercept + slope * p.0);
            r * r
        })
        .sum();
    let stderr = (rss / (n - 2.0) / sxx).sqrt();
    Ok((slope, intercept, stderr))
}

/// Run the sweep: generate, fit, and score every (N, replicate) cell, then
/// fit the log-log slope of the per-N mean risks.
pub fn rate_sweep(config: &ExperimentConfig) -> Result<SweepResult> {
    config.validate()?;
    let grid = Grid::uniform(config.grid_size)?;
    let scenario = Scenario::build(config.scenario.clone(), &grid)?;

    let mut rows: Vec<SweepRow> = Vec::new();
    let mut mean_risks = Vec::new();
    for &n in &config.n_list {
        let (lambda, m) = schedule_params(config, n)?;
        // Each (N, replicate) cell owns a derived seed; cells are
        // independent, so the parallel schedule cannot change results.
        let cell: Vec<SweepRow> = (0..config.replicates)
            .into_par_iter()
            .map(|rep| -> Result<SweepRow> {
                let mut derive = stream(config.seed, &[tag::REPLICATE, n, rep as u64]);
                let data_seed: u64 = derive.gen();
                let ds = scenario.generate_dataset(n as usize, data_seed)?;
                let dac = dac_fit(
                    &ds,
                    &scenario,
                    lambda,
                    m as usize,
                    FitMode::Operator,
                    data_seed,
                )?;
                let report = risk_report_spectral(&dac, &scenario)?;
                Ok(SweepRow {
                    n,
                    replicate: rep,
                    m,
                    lambda,
                    report,
                })
            })
            .collect::<Result<_>>()?;
        let mean = cell.iter().map(|r| r.report.excess_risk).sum::<f64>() / cell.len() as f64;
        mean_risks.push((n, mean));
        rows.extend(cell);
    }

    let degenerate = mean_risks.iter().any(|&(_, r)| r <= 1e-18);
    let theoretical_exponent = config.theoretical_exponent();
    let fit = if degenerate || mean_risks.len() < 4 {
        None
    } else {
        let points: Vec<(f64, f64)> = mean_risks
            .iter()
            .map(|&(n, r)| ((n as f64).ln(), r.ln()))
            .collect();
        let (slope, intercept, stderr) = slope_fit(&points)?;
        Some(RateFitResult {
            slope,
            intercept,
            stderr,
            points,
            theoretical_exponent,
        })
    };
    Ok(SweepResult {
        rows,
        mean_risks,
        fit,
        degenerate,
        theoretical_exponent,
    })
}

/// Right-hand side of the expectation bound for bounded designs, evaluated
/// term by term:
///
/// ```text
/// 2 λ^{2θ} ‖γ₀‖²
///   + 16 (𝒩/N) (c₁ λ^{2θ} ‖γ₀‖² + σ²)
///   + 8 c₁ (m/N) 𝒩 λ^{2θ} ‖γ₀‖²
///   + c₃ c₄ μ₁ (4+2m)/(N λ^{2−2θ}) (1 + m𝒩/N) 𝒩^{1/2} exp(−c₅N/(2m𝒩))
///   + c₄ μ₁ ρ² tr(T) (4σ²)/(N λ²) (1 + m𝒩/N) 𝒩^{1/2} exp(−c₅N/(2m𝒩))
/// ```
///
/// with `c₃ = 192 (c₁ ρ⁴ tr²(T) ‖γ₀‖⁴ + max{μ₁², 1} ‖γ₀‖⁴)`,
/// `c₄⁴ = 1 + 6 (4ρ² + 4ρ²/3)²`, `c₅ = 3/(32ρ²)`, and `ρ = √3` for the
/// bounded-uniform design.
pub fn bounded_design_risk_bound(scenario: &Scenario, lambda: f64, m: u64, n: u64) -> Result<f64> {
    let rho = scenario
        .spec()
        .design
        .score_bound()
        .ok_or_else(|| Error::AssumptionViolated(
            "the expectation bound needs uniformly bounded scores; use the bounded-uniform design"
                .into(),
        ))?;
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::invalid("bound requires 0 < lambda <= 1"));
    }
    if n == 0 || m == 0 || n % m != 0 {
        return Err(Error::InvalidPartition(format!("m = {m} must divide N = {n}")));
    }
    let theta = scenario.spec().theta;
    let sigma = scenario.spec().sigma;
    let c1 = scenario.spec().design.kurtosis_c1();
    let g2 = scenario.gamma0_norm().powi(2);
    let mu1 = scenario.mu()[0];
    let trace: f64 = scenario.mu().iter().sum();
    let nl = effective_dimension(&scenario.analytic_system(), lambda)?;
    let (nf, mf) = (n as f64, m as f64);
    let rho2 = rho * rho;

    let c3 = 192.0 * (c1 * rho2 * rho2 * trace * trace * g2 * g2 + mu1.mul_add(mu1, 0.0).max(1.0) * g2 * g2);
    let c4 = (1.0 + 6.0 * (4.0 * rho2 + 4.0 * rho2 / 3.0).powi(2)).powf(0.25);
    let c5 = 3.0 / (32.0 * rho2);

    let lam_2theta = lambda.powf(2.0 * theta);
    let t1 = 2.0 * lam_2theta * g2;
    let t2 = 16.0 * nl / nf * (c1 * lam_2theta * g2 + sigma * sigma);
    let t3 = 8.0 * c1 * mf / nf * nl * lam_2theta * g2;
    let tail = (1.0 + mf * nl / nf) * nl.sqrt() * (-c5 * nf / (2.0 * mf * nl)).exp();
    let t4 = c3 * c4 * mu1 * (4.0 + 2.0 * mf) / (nf * lambda.powf(2.0 - 2.0 * theta)) * tail;
    let t5 = c4 * mu1 * rho2 * trace * 4.0 * sigma * sigma / (nf * lambda * lambda) * tail;
    Ok(t1 + t2 + t3 + t4 + t5)
}

/// `results.csv`: one row per (N, replicate) cell.
pub fn write_results_csv(config: &ExperimentConfig, rows: &[SweepRow], mut w: impl Write) -> Result<()> {
    writeln!(
        w,
        "schedule,N,replicate,m,lambda,theta,p,sigma,excess_risk,approx_error,sample_error,method"
    )?;
    let schedule = schedule_name(&config.schedule);
    for row in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            schedule,
            row.n,
            row.replicate,
            row.m,
            row.lambda,
            config.scenario.theta,
            config.scenario.p,
            config.scenario.sigma,
            row.report.excess_risk,
            row.report.approx_error,
            row.report.sample_error,
            row.report.method,
        )?;
    }
    Ok(())
}

/// `plotdata.csv`: `log10_N,log10_risk` per sample size (mean risk).
pub fn write_plotdata_csv(mean_risks: &[(u64, f64)], mut w: impl Write) -> Result<()> {
    writeln!(w, "log10_N,log10_risk")?;
    for &(n, risk) in mean_risks {
        writeln!(w, "{},{}", (n as f64).log10(), risk.log10())?;
    }
    Ok(())
}

pub fn schedule_name(schedule: &Schedule) -> &'static str {
    match schedule {
        Schedule::T2a => "t2a",
        Schedule::T2bLog { .. } => "t2b_log",
        Schedule::T5Noiseless { .. } => "t5_noiseless",
        Schedule::T6Embedding { .. } => "t6",
        Schedule::Custom { .. } => "custom",
    }
}

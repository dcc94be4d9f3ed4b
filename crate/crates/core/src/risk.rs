//! Excess prediction risk and its decomposition.
//!
//! The excess risk of an estimator is `‖L_C^{1/2}(β̂ − β₀)‖²`, which splits
//! around the intermediate function `f_λ = (λI + T)⁻¹ L_K^{1/2} L_C β₀`
//! into at most `2𝒮 + 2𝒜`, where
//!
//! - `𝒮 = ‖L_C^{1/2} L_K^{1/2} f̄ − L_C^{1/2} L_K^{1/2} f_λ‖²` is the sample
//!   error of the averaged fit, and
//! - `𝒜 = ‖L_C^{1/2} L_K^{1/2} f_λ − L_C^{1/2} β₀‖²` is the approximation
//!   error, equal in the diagonal frame to
//!   `Σ_k λ² μ_k^{2θ} a_k² / (λ + μ_k)²` and bounded by `λ^{2θ} ‖γ₀‖²`.
//!
//! The module also measures the operator-deviation event
//! `𝒰₁ = {‖(λI+T)^{−1/2}(T_X − T)(λI+T)^{−1/2}‖ ≥ 1/2}` by Monte Carlo and
//! reports it next to its analytic bound `4 c₁ 𝒩²(λ) / n`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::DacModel;
use crate::grid::GridFunction;
use crate::operators::{effective_dimension, DiscretizedOperator};
use crate::rng::tag;
use crate::synth::Scenario;

/// How an excess risk was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskMethod {
    Spectral,
    MonteCarlo,
}

impl std::fmt::Display for RiskMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RiskMethod::Spectral => write!(f, "spectral"),
            RiskMethod::MonteCarlo => write!(f, "monte_carlo"),
        }
    }
}

/// Excess risk with its sample/approximation split.
#[derive(Debug, Clone, Serialize)]
pub struct RiskReport {
    pub excess_risk: f64,
    pub approx_error: f64,
    pub sample_error: f64,
    pub method: RiskMethod,
    pub mc_draws: Option<usize>,
}

impl RiskReport {
    /// The split is a factor-2 inequality, not an identity.
    pub fn decomposition_holds(&self) -> bool {
        self.excess_risk <= 2.0 * self.sample_error + 2.0 * self.approx_error + 1e-9
    }
}

/// Coefficients of `f_λ = (λI + T)⁻¹ L_K^{1/2} L_C β₀` in the diagonal
/// frame: `f_{λ,k} = √ρ_k λ_k b_k / (λ + μ_k)`.
pub fn f_lambda_coeffs(scenario: &Scenario, lambda: f64) -> Result<Vec<f64>> {
    if lambda <= 0.0 {
        return Err(Error::invalid("lambda must be positive"));
    }
    Ok(scenario
        .beta0_coeffs()
        .iter()
        .enumerate()
        .map(|(k, &b)| {
            let rho = scenario.rho()[k];
            let lam = scenario.lam()[k];
            let mu = scenario.mu()[k];
            rho.sqrt() * lam * b / (lambda + mu)
        })
        .collect())
}

/// Grid route for `f_λ`: solve `(λI + T) f = L_K^{1/2} L_C β₀` directly on
/// the discretized operators.
pub fn f_lambda_grid(
    beta0: &GridFunction,
    lk: &DiscretizedOperator,
    lc: &DiscretizedOperator,
    t: &DiscretizedOperator,
    lambda: f64,
) -> Result<GridFunction> {
    if lambda <= 0.0 {
        return Err(Error::invalid("lambda must be positive"));
    }
    let rhs = lk.sqrt().apply(&lc.apply(beta0)?)?;
    // Solve in the symmetrized frame, where T is the stored matrix.
    let g = beta0.grid().len();
    let sqrt_w: Vec<f64> = beta0.grid().weights().iter().map(|w| w.sqrt()).collect();
    let rhs_sym = DVector::from_iterator(
        g,
        rhs.values().iter().zip(&sqrt_w).map(|(&v, &s)| v * s),
    );
    let mut a = t.sym().clone();
    for i in 0..g {
        a[(i, i)] += lambda;
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure("Cholesky failed on λI + T".into()))?;
    let f_sym = chol.solve(&rhs_sym);
    let values = DVector::from_iterator(
        g,
        f_sym.iter().zip(&sqrt_w).map(|(&v, &s)| v / s),
    );
    GridFunction::new(std::sync::Arc::clone(beta0.grid()), values)
}

/// Approximation error in the diagonal frame:
/// `𝒜(λ) = Σ_k λ² μ_k^{2θ} a_k² / (λ + μ_k)²` with `a = γ₀` coefficients.
/// Always bounded by `λ^{2θ} ‖γ₀‖²`.
pub fn approximation_error(lambda: f64, theta: f64, gamma0: &[f64], mu: &[f64]) -> f64 {
    gamma0
        .iter()
        .zip(mu)
        .map(|(&a, &m)| {
            let num = lambda * lambda * m.powf(2.0 * theta) * a * a;
            num / ((lambda + m) * (lambda + m))
        })
        .sum()
}

/// Spectral excess risk `Σ_k λ_k (b̂_k − b_k)²` in the diagonal frame.
pub fn excess_risk_spectral(basis_coeffs: &DVector<f64>, scenario: &Scenario) -> Result<f64> {
    if basis_coeffs.len() != scenario.truncation() {
        return Err(Error::invalid("coefficient length does not match scenario"));
    }
    Ok(scenario
        .lam()
        .iter()
        .zip(basis_coeffs.iter().zip(scenario.beta0_coeffs()))
        .map(|(&lam, (&bh, &b0))| lam * (bh - b0) * (bh - b0))
        .sum())
}

/// Monte-Carlo excess risk: the empirical mean of `⟨X, β̂ − β₀⟩²` over fresh
/// draws of `X`. Works for any estimate through projection onto the shared
/// basis (components outside the basis span never couple to `X`).
pub fn excess_risk_monte_carlo(
    beta_hat: &GridFunction,
    scenario: &Scenario,
    draws: usize,
    seed: u64,
) -> Result<f64> {
    if draws == 0 {
        return Err(Error::invalid("need at least one Monte-Carlo draw"));
    }
    let proj = scenario.project(beta_hat)?;
    let delta: Vec<f64> = proj
        .iter()
        .zip(scenario.beta0_coeffs())
        .map(|(&p, &b)| p - b)
        .collect();
    let m = scenario.truncation();
    let sqrt_lam: Vec<f64> = scenario.lam().iter().map(|l| l.sqrt()).collect();
    let mut scores = vec![0.0; m];
    let mut acc = 0.0;
    for i in 0..draws {
        scenario.draw_scores_with_path(seed, &[tag::MC_RISK, i as u64], &mut scores);
        let ip: f64 = (0..m).map(|k| sqrt_lam[k] * scores[k] * delta[k]).sum();
        acc += ip * ip;
    }
    Ok(acc / draws as f64)
}

/// Sample error `𝒮 = Σ_k μ_k (f̄_k − f_{λ,k})²` in the diagonal frame.
pub fn sample_error(f_bar: &DVector<f64>, f_lambda: &[f64], mu: &[f64]) -> Result<f64> {
    if f_bar.len() != f_lambda.len() || f_bar.len() != mu.len() {
        return Err(Error::invalid("coefficient lengths differ"));
    }
    Ok(mu
        .iter()
        .zip(f_bar.iter().zip(f_lambda))
        .map(|(&m, (&fb, &fl))| m * (fb - fl) * (fb - fl))
        .sum())
}

/// Assemble the spectral risk report for a divide-and-conquer fit.
pub fn risk_report_spectral(dac: &DacModel, scenario: &Scenario) -> Result<RiskReport> {
    let basis = dac
        .averaged_basis
        .as_ref()
        .ok_or_else(|| Error::MethodUnavailable("fit carries no basis coefficients".into()))?;
    let f_bar = dac
        .averaged_f
        .as_ref()
        .ok_or_else(|| Error::MethodUnavailable("fit carries no operator coefficients".into()))?;
    let excess = excess_risk_spectral(basis, scenario)?;
    let approx = approximation_error(
        dac.lambda,
        scenario.spec().theta,
        scenario.gamma0(),
        scenario.mu(),
    );
    let fl = f_lambda_coeffs(scenario, dac.lambda)?;
    let sample = sample_error(f_bar, &fl, scenario.mu())?;
    Ok(RiskReport {
        excess_risk: excess,
        approx_error: approx,
        sample_error: sample,
        method: RiskMethod::Spectral,
        mc_draws: None,
    })
}

/// Largest absolute eigenvalue of a symmetric matrix via power iteration
/// with a Rayleigh-quotient stopping rule. The deviation loop calls this on
/// small matrices thousands of times, where a dense eigensolve would
/// dominate the runtime.
fn sym_spectral_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    // Deterministic, dense start vector.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + ((i * 2654435761) % 97) as f64 / 97.0);
    v /= v.norm();
    let mut prev = 0.0f64;
    for _ in 0..600 {
        let mut w = a * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        w /= norm;
        let rayleigh = w.dot(&(a * &w));
        if (rayleigh.abs() - prev).abs() <= 1e-7 * rayleigh.abs().max(1e-300) {
            return rayleigh.abs();
        }
        prev = rayleigh.abs();
        v = w;
    }
    prev
}

/// Monte-Carlo estimate of the deviation-event probability plus the
/// analytic bound report.
#[derive(Debug, Clone, Serialize)]
pub struct DeviationReport {
    pub lambda: f64,
    pub n_block: usize,
    pub trials: usize,
    pub exceed_count: usize,
    /// Fraction of trials with `‖(λI+T)^{−1/2}(T_X−T)(λI+T)^{−1/2}‖ ≥ 1/2`.
    pub empirical: f64,
    /// Fourth-moment constant of the design (3 Gaussian, 9/5 bounded uniform).
    pub c1: f64,
    /// `4 c₁ 𝒩²(λ) / n_block`.
    pub bound: f64,
    pub effective_dimension: f64,
    /// Binomial standard error of `empirical`.
    pub mc_stderr: f64,
}

/// Draw `trials` independent blocks of size `n_block`, compute the spectral
/// norm of the normalized operator deviation for each, and report the
/// exceedance fraction next to the analytic bound.
pub fn deviation_probability(
    scenario: &Scenario,
    lambda: f64,
    n_block: usize,
    trials: usize,
    seed: u64,
) -> Result<DeviationReport> {
    if trials < 100 {
        return Err(Error::invalid("need at least 100 trials"));
    }
    if n_block == 0 {
        return Err(Error::invalid("block size must be positive"));
    }
    if lambda <= 0.0 {
        return Err(Error::invalid("lambda must be positive"));
    }
    let m = scenario.truncation();
    let mu = scenario.mu();
    // Column scalings √(μ_k/(λ+μ_k)) and the diagonal of the population term.
    let scale: Vec<f64> = mu.iter().map(|&v| (v / (lambda + v)).sqrt()).collect();
    let diag: Vec<f64> = mu.iter().map(|&v| v / (lambda + v)).collect();

    let mut exceed = 0usize;
    let mut scores = vec![0.0; m];
    for trial in 0..trials {
        let mut z = DMatrix::zeros(n_block, m);
        for i in 0..n_block {
            scenario.draw_scores_with_path(
                seed,
                &[tag::TRIAL, trial as u64, i as u64],
                &mut scores,
            );
            for k in 0..m {
                z[(i, k)] = scores[k] * scale[k];
            }
        }
        let mut d = z.tr_mul(&z) / n_block as f64;
        for k in 0..m {
            d[(k, k)] -= diag[k];
        }
        if sym_spectral_norm(&d) >= 0.5 {
            exceed += 1;
        }
    }
    let empirical = exceed as f64 / trials as f64;
    let c1 = scenario.spec().design.kurtosis_c1();
    let n_lambda = effective_dimension(&scenario.analytic_system(), lambda)?;
    let bound = 4.0 * c1 * n_lambda * n_lambda / n_block as f64;
    let mc_stderr = (empirical * (1.0 - empirical) / trials as f64).sqrt();
    Ok(DeviationReport {
        lambda,
        n_block,
        trials,
        exceed_count: exceed,
        empirical,
        c1,
        bound,
        effective_dimension: n_lambda,
        mc_stderr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{dac_fit, FitMode};
    use crate::grid::{l2_inner, Grid};
    use crate::synth::{Design, ScenarioSpec};
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn scenario() -> Scenario {
        let grid = Grid::uniform(257).unwrap();
        Scenario::build(ScenarioSpec::new(0.5, 0.5, 0.5, Design::Gaussian), &grid).unwrap()
    }

    fn single_mode_scenario() -> Scenario {
        let grid = Grid::uniform(257).unwrap();
        let mut spec = ScenarioSpec::new(0.5, 0.5, 0.5, Design::Gaussian);
        spec.gamma0_coeffs = Some(vec![1.0]);
        Scenario::build(spec, &grid).unwrap()
    }

    #[test]
    fn f_lambda_zero_slope() {
        let grid = Grid::uniform(257).unwrap();
        let mut spec = ScenarioSpec::new(0.5, 0.5, 0.0, Design::Gaussian);
        spec.gamma0_coeffs = Some(vec![0.0]);
        let sc = Scenario::build(spec, &grid).unwrap();
        let f = f_lambda_coeffs(&sc, 1.0).unwrap();
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn f_lambda_single_mode_closed_form() {
        // μ₁ = 1, θ = 0.5, g = 1, λ = 1: the L_C^{1/2} L_K^{1/2} f_λ
        // coefficient is μ^{1+θ}/(λ+μ) = 1/2.
        let sc = single_mode_scenario();
        let f = f_lambda_coeffs(&sc, 1.0).unwrap();
        let coef = sc.mu()[0].sqrt() * f[0];
        assert_abs_diff_eq!(coef, 0.5, epsilon = 1e-12);
        // λ → 0: the coefficient tends to μ^θ g.
        let f_small = f_lambda_coeffs(&sc, 1e-8).unwrap();
        let coef_small = sc.mu()[0].sqrt() * f_small[0];
        assert!((coef_small - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn f_lambda_grid_route_matches_diagonal() {
        let grid = Grid::uniform(257).unwrap();
        let mut spec = ScenarioSpec::new(0.5, 0.5, 0.5, Design::Gaussian);
        spec.truncation = 60;
        let sc = Scenario::build(spec, &grid).unwrap();
        let ops = sc.operators().unwrap();
        let diag = f_lambda_coeffs(&sc, 0.05).unwrap();
        let expect = sc.materialize(&diag).unwrap();
        let got = f_lambda_grid(sc.beta0(), &ops.lk, &ops.lc, &ops.t, 0.05).unwrap();
        let diff = GridFunction::new(
            Arc::clone(&grid),
            got.values() - expect.values(),
        )
        .unwrap();
        assert!(diff.l2_norm() <= 1e-6, "routes differ by {}", diff.l2_norm());
    }

    #[test]
    fn approximation_error_single_mode() {
        // λ²·μ^{2θ}·a²/(λ+μ)² = 1/4 at μ = a = λ = 1, θ = 0.5; below the
        // λ^{2θ}‖γ₀‖² = 1 envelope.
        let a = approximation_error(1.0, 0.5, &[1.0], &[1.0]);
        assert_abs_diff_eq!(a, 0.25, epsilon = 1e-15);
        assert!(a <= 1.0);
    }

    #[test]
    fn approximation_error_monotone_and_zero_cases() {
        let sc = scenario();
        let mut prev = f64::INFINITY;
        for &lambda in &[1.0, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5] {
            let a = approximation_error(lambda, 0.5, sc.gamma0(), sc.mu());
            assert!(a < prev);
            prev = a;
        }
        assert_eq!(approximation_error(0.5, 0.5, &[0.0, 0.0], &[1.0, 0.5]), 0.0);
    }

    #[test]
    fn lemma_bound_on_approximation_error() {
        // 𝒜(λ) ≤ λ^{2θ} ‖γ₀‖² across λ and θ grids, slack 1e−12 relative.
        let grid = Grid::uniform(257).unwrap();
        for &theta in &[0.1, 0.25, 0.5] {
            let spec = ScenarioSpec::new(0.5, theta, 0.5, Design::Gaussian);
            let sc = Scenario::build(spec, &grid).unwrap();
            let g2 = sc.gamma0_norm().powi(2);
            for e in (-6..=0).map(|e| 10f64.powi(e)) {
                let a = approximation_error(e, theta, sc.gamma0(), sc.mu());
                let envelope = e.powf(2.0 * theta) * g2;
                assert!(
                    a <= envelope * (1.0 + 1e-12),
                    "A({e}) = {a} exceeds envelope {envelope} at theta {theta}"
                );
            }
        }
    }

    #[test]
    fn excess_risk_zero_and_single_mode() {
        let sc = scenario();
        let b0 = DVector::from_column_slice(sc.beta0_coeffs());
        assert_eq!(excess_risk_spectral(&b0, &sc).unwrap(), 0.0);
        // One coefficient off by 0.5 with λ₁ = 1 adds 0.25.
        let mut b = b0.clone();
        b[0] += 0.5;
        assert_abs_diff_eq!(
            excess_risk_spectral(&b, &sc).unwrap(),
            0.25,
            epsilon = 1e-15
        );
    }

    #[test]
    fn spectral_and_monte_carlo_risks_agree() {
        let sc = scenario();
        let ds = sc.generate_dataset(64, 3).unwrap();
        let dac = dac_fit(&ds, &sc, 1e-2, 1, FitMode::Operator, 0).unwrap();
        let spectral =
            excess_risk_spectral(dac.averaged_basis.as_ref().unwrap(), &sc).unwrap();
        let mc = excess_risk_monte_carlo(&dac.averaged, &sc, 100_000, 7).unwrap();
        let rel = (spectral - mc).abs() / spectral;
        assert!(rel <= 0.05, "spectral {spectral} vs MC {mc}: rel {rel}");
    }

    #[test]
    fn spectral_risk_matches_direct_quadrature_norm() {
        // Independent route: materialize β̂ − β₀ on the grid and push it
        // through the discretized L_C^{1/2}.
        let grid = Grid::uniform(257).unwrap();
        let mut spec = ScenarioSpec::new(0.5, 0.5, 0.5, Design::Gaussian);
        spec.truncation = 60;
        let sc = Scenario::build(spec, &grid).unwrap();
        let ds = sc.generate_dataset(32, 5).unwrap();
        let dac = dac_fit(&ds, &sc, 1e-2, 1, FitMode::Operator, 0).unwrap();
        let spectral =
            excess_risk_spectral(dac.averaged_basis.as_ref().unwrap(), &sc).unwrap();
        let ops = sc.operators().unwrap();
        let diff = GridFunction::new(
            Arc::clone(&grid),
            dac.averaged.values() - sc.beta0().values(),
        )
        .unwrap();
        let pushed = ops.lc.sqrt().apply(&diff).unwrap();
        let direct = l2_inner(&pushed, &pushed).unwrap();
        assert!(
            (spectral - direct).abs() <= 1e-6,
            "spectral {spectral} vs direct {direct}"
        );
    }

    #[test]
    fn sample_error_zero_when_fits_coincide() {
        let sc = scenario();
        let fl = f_lambda_coeffs(&sc, 1e-2).unwrap();
        let fbar = DVector::from_column_slice(&fl);
        assert_eq!(sample_error(&fbar, &fl, sc.mu()).unwrap(), 0.0);
    }

    #[test]
    fn noiseless_zero_slope_gives_zero_everything() {
        let grid = Grid::uniform(257).unwrap();
        let mut spec = ScenarioSpec::new(0.5, 0.5, 0.0, Design::Gaussian);
        spec.gamma0_coeffs = Some(vec![0.0]);
        let sc = Scenario::build(spec, &grid).unwrap();
        let ds = sc.generate_dataset(8, 1).unwrap();
        let dac = dac_fit(&ds, &sc, 1e-2, 1, FitMode::Operator, 0).unwrap();
        let report = risk_report_spectral(&dac, &sc).unwrap();
        assert_eq!(report.excess_risk, 0.0);
        assert_eq!(report.sample_error, 0.0);
        assert_eq!(report.approx_error, 0.0);
    }

    #[test]
    fn decomposition_inequality_on_random_fits() {
        let sc = scenario();
        for rep in 0..20 {
            let ds = sc.generate_dataset(32, 100 + rep).unwrap();
            let dac = dac_fit(&ds, &sc, 3e-2, 2, FitMode::Operator, rep).unwrap();
            let report = risk_report_spectral(&dac, &sc).unwrap();
            assert!(
                report.decomposition_holds(),
                "decomposition violated: excess {} > 2({} + {})",
                report.excess_risk,
                report.sample_error,
                report.approx_error
            );
        }
    }

    #[test]
    fn power_iteration_matches_dense_eigensolver() {
        let mut rng = crate::rng::stream(5, &[9]);
        use rand::Rng;
        for n in [5usize, 40] {
            let raw = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
            let sym = (&raw + raw.transpose()) * 0.5;
            let dense = sym
                .clone()
                .symmetric_eigenvalues()
                .iter()
                .fold(0.0f64, |m, &v| m.max(v.abs()));
            let pow = sym_spectral_norm(&sym);
            assert_abs_diff_eq!(pow, dense, epsilon = 1e-5 * dense.max(1.0));
        }
    }

    #[test]
    fn deviation_probability_vanishes_for_large_blocks() {
        let sc = scenario();
        let rep = deviation_probability(&sc, 0.5, 2048, 100, 17).unwrap();
        assert_eq!(rep.exceed_count, 0, "empirical {}", rep.empirical);
        // Bound formula: 4 · 3 · 𝒩²(λ) / n.
        let nl = effective_dimension(&sc.analytic_system(), 0.5).unwrap();
        assert_abs_diff_eq!(rep.bound, 12.0 * nl * nl / 2048.0, epsilon = 1e-12);
    }

    #[test]
    fn deviation_probability_monotone_in_block_size() {
        let sc = scenario();
        // λ small enough that small blocks actually exceed the threshold.
        let mut prev = 1.0f64;
        let mut first = true;
        for &n in &[32usize, 128, 512] {
            let rep = deviation_probability(&sc, 0.02, n, 200, 23).unwrap();
            if !first {
                // Two Monte-Carlo standard errors of slack.
                let slack = 2.0 * (rep.mc_stderr + (prev * (1.0 - prev) / 200.0).sqrt());
                assert!(
                    rep.empirical <= prev + slack,
                    "P at n={n} is {} > previous {prev}",
                    rep.empirical
                );
            }
            prev = rep.empirical;
            first = false;
        }
    }

    #[test]
    fn deviation_probability_needs_trials() {
        let sc = scenario();
        assert!(deviation_probability(&sc, 0.5, 32, 50, 1).is_err());
    }
}

//! Discretized integral operators and their spectral calculus.
//!
//! An integral operator `A f (t) = ∫ k(s,t) f(s) ds` is realized on the grid
//! as the symmetrized matrix `S = W^{1/2} A W^{1/2}`, where `A[i][j] =
//! k(tᵢ,tⱼ)` and `W = diag(weights)`. `S` is symmetric, its eigenvalues
//! approximate the operator's, and a vector `u` in the symmetrized frame
//! corresponds to the grid function `W^{−1/2} u`. The unsymmetrized
//! quadrature matrix `A W` is similar to `S` but not symmetric, which is why
//! the symmetrized form is the one stored.
//!
//! On top of this sit square roots and fractional powers (negative
//! eigenvalues from discretization noise are clamped to zero first), the
//! composites `T = L_K^{1/2} L_C L_K^{1/2}` and `T_* = L_C^{1/2} L_K
//! L_C^{1/2}` that share the spectrum `{μ_k}`, the effective dimension
//! `𝒩(λ) = Σ μ_k/(λ+μ_k)`, the trace, and the eigenvalue-dominance
//! comparison `ρ_k(L_A^{1/2} L_B L_A^{1/2}) ≤ ρ_k(L_B)·‖L_A‖`.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::kernels::{gram_on_grid, KernelSpec};

/// Relative threshold below which eigenvalues are treated as numerically
/// zero and dropped from the retained spectrum.
const SPECTRUM_RETENTION: f64 = 1e-12;

/// A symmetric grid realization `W^{1/2} A W^{1/2}` of an integral operator.
#[derive(Debug, Clone)]
pub struct DiscretizedOperator {
    grid: Arc<Grid>,
    sym: DMatrix<f64>,
}

impl DiscretizedOperator {
    /// Discretize the integral operator induced by `spec` on `grid`.
    pub fn from_kernel(spec: &KernelSpec, grid: &Arc<Grid>) -> Result<Self> {
        let gram = gram_on_grid(spec, grid)?;
        let g = grid.len();
        let sqrt_w: Vec<f64> = grid.weights().iter().map(|w| w.sqrt()).collect();
        let mut sym = DMatrix::zeros(g, g);
        for i in 0..g {
            for j in 0..=i {
                let v = sqrt_w[i] * gram.entries()[(i, j)] * sqrt_w[j];
                sym[(i, j)] = v;
                sym[(j, i)] = v;
            }
        }
        Ok(DiscretizedOperator {
            grid: Arc::clone(grid),
            sym,
        })
    }

    /// Wrap an explicit symmetrized matrix; rejects asymmetry beyond 1e−10
    /// relative.
    pub fn from_sym(grid: Arc<Grid>, sym: DMatrix<f64>) -> Result<Self> {
        if sym.nrows() != grid.len() || sym.ncols() != grid.len() {
            return Err(Error::invalid("matrix dimensions must match the grid"));
        }
        let scale = sym.amax().max(f64::MIN_POSITIVE);
        for i in 0..sym.nrows() {
            for j in 0..i {
                if (sym[(i, j)] - sym[(j, i)]).abs() > 1e-10 * scale {
                    return Err(Error::invalid("matrix is not symmetric"));
                }
            }
        }
        Ok(DiscretizedOperator { grid, sym })
    }

    pub fn zero(grid: &Arc<Grid>) -> Self {
        DiscretizedOperator {
            grid: Arc::clone(grid),
            sym: DMatrix::zeros(grid.len(), grid.len()),
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn sym(&self) -> &DMatrix<f64> {
        &self.sym
    }

    /// Apply the operator to a grid function:
    /// `W^{−1/2} · S · W^{1/2} · values`, i.e. the quadrature realization of
    /// `∫ k(s,·) f(s) ds`.
    pub fn apply(&self, f: &GridFunction) -> Result<GridFunction> {
        if !f.grid().same_as(&self.grid) {
            return Err(Error::GridMismatch("operator and function grids differ".into()));
        }
        let w = self.grid.weights();
        let scaled = DVector::from_iterator(
            f.values().len(),
            f.values().iter().zip(w).map(|(&v, &wi)| v * wi.sqrt()),
        );
        let mut out = &self.sym * scaled;
        for (o, &wi) in out.iter_mut().zip(w) {
            *o /= wi.sqrt();
        }
        GridFunction::new(Arc::clone(&self.grid), out)
    }

    /// Symmetric square root: eigendecompose, clamp negative eigenvalues to
    /// zero, take entrywise square roots, recompose.
    pub fn sqrt(&self) -> DiscretizedOperator {
        let eig = self.sym.clone().symmetric_eigen();
        let vals: Vec<f64> = eig
            .eigenvalues
            .iter()
            .map(|&v| if v > 0.0 { v.sqrt() } else { 0.0 })
            .collect();
        let sym = recompose(&eig.eigenvectors, &vals);
        DiscretizedOperator {
            grid: Arc::clone(&self.grid),
            sym,
        }
    }

    /// Largest absolute eigenvalue.
    pub fn spectral_norm(&self) -> f64 {
        self.sym
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    pub fn same_grid(&self, other: &DiscretizedOperator) -> bool {
        self.grid.same_as(&other.grid)
    }
}

/// Recompose `Q diag(vals) Qᵀ`, symmetrizing away recomposition roundoff.
fn recompose(q: &DMatrix<f64>, vals: &[f64]) -> DMatrix<f64> {
    let mut scaled = q.clone();
    for (c, &v) in vals.iter().enumerate() {
        scaled.column_mut(c).scale_mut(v);
    }
    let m = &scaled * q.transpose();
    let mt = m.transpose();
    (m + mt) * 0.5
}

/// Descending, clamped spectrum with (optionally) the orthonormal
/// eigenvectors of the symmetrized frame.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    values: Vec<f64>,
    basis: Option<EigenBasis>,
}

#[derive(Debug, Clone)]
struct EigenBasis {
    grid: Arc<Grid>,
    /// Columns are orthonormal in ℝ^G; column k pairs with `values[k]`.
    vectors: DMatrix<f64>,
}

impl EigenSystem {
    /// Eigendecompose a discretized operator. Negative eigenvalues are
    /// clamped to zero; eigenvalues below `1e−12 · μ₁` are dropped.
    pub fn from_operator(op: &DiscretizedOperator) -> EigenSystem {
        let eig = op.sym.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .expect("finite eigenvalues")
        });
        let top = eig.eigenvalues[order[0]].max(0.0);
        let floor = SPECTRUM_RETENTION * top;
        let kept: Vec<usize> = order
            .into_iter()
            .filter(|&i| eig.eigenvalues[i] >= floor && eig.eigenvalues[i] > 0.0)
            .collect();
        let values: Vec<f64> = kept.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut vectors = DMatrix::zeros(op.sym.nrows(), kept.len());
        for (c, &i) in kept.iter().enumerate() {
            vectors.set_column(c, &eig.eigenvectors.column(i));
        }
        EigenSystem {
            values,
            basis: Some(EigenBasis {
                grid: Arc::clone(&op.grid),
                vectors,
            }),
        }
    }

    /// Build a spectrum-only system from a list of eigenvalues (no
    /// eigenfunctions). Values are clamped at zero and sorted descending.
    pub fn from_eigenvalues(mut values: Vec<f64>) -> EigenSystem {
        for v in values.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        values.sort_by(|a, b| b.partial_cmp(a).expect("finite eigenvalues"));
        EigenSystem { values, basis: None }
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The k-th eigenfunction (0-based) as a grid function, orthonormal in
    /// the quadrature inner product.
    pub fn eigenfunction(&self, k: usize) -> Result<GridFunction> {
        let basis = self
            .basis
            .as_ref()
            .ok_or_else(|| Error::MethodUnavailable("spectrum-only eigensystem".into()))?;
        if k >= self.values.len() {
            return Err(Error::invalid(format!("eigenfunction index {k} out of range")));
        }
        let w = basis.grid.weights();
        let vals = DVector::from_iterator(
            basis.grid.len(),
            basis
                .vectors
                .column(k)
                .iter()
                .zip(w)
                .map(|(&u, &wi)| u / wi.sqrt()),
        );
        GridFunction::new(Arc::clone(&basis.grid), vals)
    }

    /// CSV export: header `k,mu_k`, one row per retained eigenvalue in
    /// descending order.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "k,mu_k")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{v:.16e}", i + 1)?;
        }
        Ok(())
    }
}

/// Composites `T = L_K^{1/2} L_C L_K^{1/2}` and `T_* = L_C^{1/2} L_K
/// L_C^{1/2}`, plus the eigensystem of `T`. The nonzero spectra of the two
/// composites coincide.
pub fn compose_t(
    lk: &DiscretizedOperator,
    lc: &DiscretizedOperator,
) -> Result<(DiscretizedOperator, DiscretizedOperator, EigenSystem)> {
    if !lk.same_grid(lc) {
        return Err(Error::GridMismatch("operators live on different grids".into()));
    }
    let sk = lk.sqrt();
    let sc = lc.sqrt();
    let t_sym = symmetrized_triple(&sk.sym, &lc.sym);
    let t = DiscretizedOperator {
        grid: Arc::clone(lk.grid()),
        sym: t_sym,
    };
    let ts_sym = symmetrized_triple(&sc.sym, &lk.sym);
    let t_star = DiscretizedOperator {
        grid: Arc::clone(lk.grid()),
        sym: ts_sym,
    };
    let system = EigenSystem::from_operator(&t);
    Ok((t, t_star, system))
}

fn symmetrized_triple(half: &DMatrix<f64>, mid: &DMatrix<f64>) -> DMatrix<f64> {
    let m = half * mid * half;
    let mt = m.transpose();
    (m + mt) * 0.5
}

/// Effective dimension `𝒩(λ) = Σ_k μ_k / (λ + μ_k)` over the retained
/// spectrum. Monotone decreasing in `λ`.
pub fn effective_dimension(system: &EigenSystem, lambda: f64) -> Result<f64> {
    if lambda <= 0.0 || !lambda.is_finite() {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    Ok(system.values.iter().map(|&mu| mu / (lambda + mu)).sum())
}

/// Trace `Σ_k μ_k` of the retained spectrum.
pub fn trace_of(system: &EigenSystem) -> f64 {
    system.values.iter().sum()
}

/// Recompose the operator with eigenvalues raised to the power `r ∈ (0, 1]`.
pub fn spectral_power(system: &EigenSystem, r: f64) -> Result<DiscretizedOperator> {
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::invalid(format!("power must lie in (0, 1], got {r}")));
    }
    let basis = system
        .basis
        .as_ref()
        .ok_or_else(|| Error::MethodUnavailable("spectrum-only eigensystem".into()))?;
    let vals: Vec<f64> = system.values.iter().map(|&v| v.powf(r)).collect();
    let sym = recompose(&basis.vectors, &vals);
    DiscretizedOperator::from_sym(Arc::clone(&basis.grid), sym)
}

/// Outcome of the eigenvalue-dominance comparison
/// `ρ_k(L_A^{1/2} L_B L_A^{1/2}) ≤ ρ_k(L_B) · ‖L_A‖`.
#[derive(Debug, Clone)]
pub struct DominanceReport {
    /// `ρ_k(L_A^{1/2} L_B L_A^{1/2})` for k = 1..k_max.
    pub composite: Vec<f64>,
    /// `ρ_k(L_B)` for k = 1..k_max.
    pub inner: Vec<f64>,
    /// `‖L_A‖`.
    pub norm_a: f64,
    pub passed: bool,
}

/// Check the dominance inequality for the leading `k_max` eigenvalues,
/// within `1e−8` relative slack.
pub fn eigen_dominance_check(
    la: &DiscretizedOperator,
    lb: &DiscretizedOperator,
    k_max: usize,
) -> Result<DominanceReport> {
    if !la.same_grid(lb) {
        return Err(Error::GridMismatch("operators live on different grids".into()));
    }
    let half = la.sqrt();
    let comp = DiscretizedOperator {
        grid: Arc::clone(la.grid()),
        sym: symmetrized_triple(&half.sym, &lb.sym),
    };
    let comp_eig = EigenSystem::from_operator(&comp);
    let inner_eig = EigenSystem::from_operator(lb);
    let norm_a = la.spectral_norm();
    let norm_b = lb.spectral_norm();
    let take = |sys: &EigenSystem| -> Vec<f64> {
        (0..k_max)
            .map(|k| sys.eigenvalues().get(k).copied().unwrap_or(0.0))
            .collect()
    };
    let composite = take(&comp_eig);
    let inner = take(&inner_eig);
    let slack = 1e-8 * (norm_a * norm_b).max(f64::MIN_POSITIVE);
    let passed = composite
        .iter()
        .zip(&inner)
        .all(|(&lhs, &rhs)| lhs <= rhs * norm_a + slack);
    Ok(DominanceReport {
        composite,
        inner,
        norm_a,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{l2_inner, Grid};
    use approx::assert_abs_diff_eq;

    fn brownian(grid: &Arc<Grid>) -> DiscretizedOperator {
        DiscretizedOperator::from_kernel(&KernelSpec::Brownian, grid).unwrap()
    }

    #[test]
    fn apply_matches_quadrature_sum() {
        let grid = Grid::uniform(33).unwrap();
        let op = brownian(&grid);
        let f = GridFunction::from_fn(&grid, |t| 1.0 - t * t).unwrap();
        let out = op.apply(&f).unwrap();
        // Direct quadrature: (A f)(t_i) = Σ_j w_j k(t_i, t_j) f(t_j).
        for (i, &ti) in grid.points().iter().enumerate() {
            let direct: f64 = grid
                .points()
                .iter()
                .zip(grid.weights())
                .zip(f.values().iter())
                .map(|((&tj, &wj), &fj)| wj * ti.min(tj) * fj)
                .sum();
            assert_abs_diff_eq!(out.values()[i], direct, epsilon = 1e-12);
        }
    }

    #[test]
    fn brownian_apply_to_constant() {
        // Analytic oracle: ∫₀¹ min(s,t) ds = t − t²/2; the integrand is
        // piecewise linear with its kink on a node, so trapezoid is exact.
        let grid = Grid::uniform(257).unwrap();
        let op = brownian(&grid);
        let one = GridFunction::from_fn(&grid, |_| 1.0).unwrap();
        let out = op.apply(&one).unwrap();
        for (i, &t) in grid.points().iter().enumerate() {
            assert!((out.values()[i] - (t - t * t / 2.0)).abs() <= 1e-4);
        }
    }

    #[test]
    fn zero_kernel_gives_zero_operator() {
        let grid = Grid::uniform(9).unwrap();
        let op = DiscretizedOperator::zero(&grid);
        let f = GridFunction::from_fn(&grid, |t| t).unwrap();
        assert_eq!(op.apply(&f).unwrap().values().amax(), 0.0);
        let root = op.sqrt();
        assert_eq!(root.sym().amax(), 0.0);
    }

    #[test]
    fn sqrt_of_identity_like_is_itself() {
        let grid = Grid::uniform(9).unwrap();
        let op = DiscretizedOperator::from_sym(
            Arc::clone(&grid),
            DMatrix::identity(9, 9),
        )
        .unwrap();
        let root = op.sqrt();
        assert!((root.sym() - op.sym()).amax() < 1e-12);
    }

    #[test]
    fn sqrt_squares_back() {
        let grid = Grid::uniform(129).unwrap();
        let op = brownian(&grid);
        let root = op.sqrt();
        let squared = &root.sym * &root.sym;
        let diff = DiscretizedOperator::from_sym(Arc::clone(&grid), {
            let d = &squared - &op.sym;
            let dt = d.transpose();
            (d + dt) * 0.5
        })
        .unwrap();
        assert!(diff.spectral_norm() <= 1e-8 * op.spectral_norm());
    }

    #[test]
    fn spectral_decay_leading_eigenvalue() {
        // ρ₁ = 1⁻² = 1 by construction.
        let grid = Grid::uniform(257).unwrap();
        let spec = KernelSpec::SpectralDecay {
            exponent: 2.0,
            truncation: 200,
            include_constant: false,
        };
        let op = DiscretizedOperator::from_kernel(&spec, &grid).unwrap();
        let sys = EigenSystem::from_operator(&op);
        assert_abs_diff_eq!(sys.eigenvalues()[0], 1.0, epsilon = 1e-3);
    }

    #[test]
    fn eigenfunctions_orthonormal_in_l2() {
        let grid = Grid::uniform(65).unwrap();
        let op = brownian(&grid);
        let sys = EigenSystem::from_operator(&op);
        for j in 0..6 {
            for k in 0..=j {
                let fj = sys.eigenfunction(j).unwrap();
                let fk = sys.eigenfunction(k).unwrap();
                let ip = l2_inner(&fj, &fk).unwrap();
                let expect = if j == k { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(ip, expect, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn compose_diagonal_pair_multiplies_spectra() {
        // ρ_k = λ_k = k⁻² over the shared cosine basis, so μ_k = k⁻⁴.
        let grid = Grid::uniform(257).unwrap();
        let spec = KernelSpec::SpectralDecay {
            exponent: 2.0,
            truncation: 200,
            include_constant: false,
        };
        let lk = DiscretizedOperator::from_kernel(&spec, &grid).unwrap();
        let lc = lk.clone();
        let (t, t_star, sys) = compose_t(&lk, &lc).unwrap();
        for k in 1..=10usize {
            let expect = (k as f64).powi(-4);
            let got = sys.eigenvalues()[k - 1];
            assert!(
                (got - expect).abs() <= 1e-3 * expect,
                "mu_{k}: got {got}, expected {expect}"
            );
        }
        // T and T_* share their nonzero spectrum.
        let sys_star = EigenSystem::from_operator(&t_star);
        for k in 0..20 {
            let a = sys.eigenvalues()[k];
            let b = sys_star.eigenvalues()[k];
            assert!((a - b).abs() <= 1e-8 * a.max(b));
        }
        // Composites stay PSD after clamping.
        let min_t = t.sym().clone().symmetric_eigenvalues().min();
        assert!(min_t >= -1e-8 * sys.eigenvalues()[0]);
    }

    #[test]
    fn compose_with_zero_covariance() {
        let grid = Grid::uniform(17).unwrap();
        let lk = brownian(&grid);
        let lc = DiscretizedOperator::zero(&grid);
        let (t, _, sys) = compose_t(&lk, &lc).unwrap();
        assert!(t.spectral_norm() < 1e-14);
        assert!(sys.is_empty() || sys.eigenvalues()[0] < 1e-14);
    }

    #[test]
    fn effective_dimension_single_mode() {
        let sys = EigenSystem::from_eigenvalues(vec![1.0]);
        assert_eq!(effective_dimension(&sys, 1.0).unwrap(), 0.5);
        assert!(effective_dimension(&sys, 0.0).is_err());
        assert!(effective_dimension(&sys, -1.0).is_err());
    }

    #[test]
    fn effective_dimension_partial_sum_oracle() {
        // Oracle: Σ_{k=1}^{200} k⁻²/(1 + k⁻²) computed by direct summation;
        // the infinite sum is (π coth π − 1)/2 ≈ 1.0767 and the 200-term
        // partial sum sits ≈ 0.005 below it.
        let mu: Vec<f64> = (1..=200).map(|k| (k as f64).powi(-2)).collect();
        let oracle: f64 = mu.iter().map(|&m| m / (1.0 + m)).sum();
        assert_abs_diff_eq!(oracle, 1.0716865679899430, epsilon = 1e-12);
        let sys = EigenSystem::from_eigenvalues(mu);
        let got = effective_dimension(&sys, 1.0).unwrap();
        assert_abs_diff_eq!(got, oracle, epsilon = 2e-3);
        // 𝒩(λ) ≤ trace/λ for large λ.
        let tr = trace_of(&sys);
        for lambda in [10.0, 100.0] {
            assert!(effective_dimension(&sys, lambda).unwrap() <= tr / lambda);
        }
        // Monotone decreasing in λ.
        let mut prev = f64::INFINITY;
        for lambda in [1e-4, 1e-3, 1e-2, 1e-1, 1.0] {
            let v = effective_dimension(&sys, lambda).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn trace_values() {
        let sys = EigenSystem::from_eigenvalues(vec![1.0, 0.5]);
        assert_eq!(trace_of(&sys), 1.5);
        let empty = EigenSystem::from_eigenvalues(vec![]);
        assert_eq!(trace_of(&empty), 0.0);
        // Oracle: Σ_{k=1}^{200} k⁻² = π²/6 − tail ≈ 1.639947.
        let mu: Vec<f64> = (1..=200).map(|k| (k as f64).powi(-2)).collect();
        let partial: f64 = mu.iter().sum();
        assert_abs_diff_eq!(partial, 1.6399465460149975, epsilon = 1e-12);
        assert_abs_diff_eq!(
            trace_of(&EigenSystem::from_eigenvalues(mu)),
            partial,
            epsilon = 1e-12
        );
    }

    #[test]
    fn spectral_power_identity_and_root() {
        let grid = Grid::uniform(65).unwrap();
        let op = brownian(&grid);
        let sys = EigenSystem::from_operator(&op);
        let same = spectral_power(&sys, 1.0).unwrap();
        assert!((same.sym() - op.sym()).amax() <= 1e-10 * op.spectral_norm());
        // r = 0.5 then squaring restores the operator.
        let half = spectral_power(&sys, 0.5).unwrap();
        let squared = half.sym() * half.sym();
        assert!((&squared - op.sym()).amax() <= 1e-8 * op.spectral_norm());
        assert!(spectral_power(&sys, 0.0).is_err());
        assert!(spectral_power(&sys, 1.5).is_err());
    }

    #[test]
    fn spectral_power_of_plain_eigenvalue() {
        let sys = EigenSystem::from_eigenvalues(vec![4.0]);
        // No basis: the operator recomposition is unavailable, but the
        // eigenvalue arithmetic is what the contract pins down.
        assert!(spectral_power(&sys, 0.5).is_err());
        assert_eq!(sys.eigenvalues()[0].powf(0.5), 2.0);
    }

    #[test]
    fn dominance_scalar_operator_is_equality() {
        let grid = Grid::uniform(33).unwrap();
        let c = 0.7;
        let la = DiscretizedOperator::from_sym(
            Arc::clone(&grid),
            DMatrix::identity(33, 33) * c,
        )
        .unwrap();
        let lb = brownian(&grid);
        let rep = eigen_dominance_check(&la, &lb, 10).unwrap();
        assert!(rep.passed);
        for (lhs, rhs) in rep.composite.iter().zip(&rep.inner) {
            assert_abs_diff_eq!(*lhs, c * rhs, epsilon = 1e-10);
        }
    }

    #[test]
    fn dominance_zero_inner_operator() {
        let grid = Grid::uniform(17).unwrap();
        let la = brownian(&grid);
        let lb = DiscretizedOperator::zero(&grid);
        assert!(eigen_dominance_check(&la, &lb, 5).unwrap().passed);
    }

    #[test]
    fn dominance_brownian_sqexp() {
        let grid = Grid::uniform(257).unwrap();
        let la = brownian(&grid);
        let lb =
            DiscretizedOperator::from_kernel(&KernelSpec::SquaredExponential { gamma: 0.2 }, &grid)
                .unwrap();
        let rep = eigen_dominance_check(&la, &lb, 20).unwrap();
        assert!(rep.passed, "composite {:?} inner {:?}", rep.composite, rep.inner);
    }

    #[test]
    fn norm_relation_on_retained_span() {
        // ‖f‖_{L²} = ‖L_K^{1/2} f‖_K for f in the span of the leading
        // eigenfunctions, with the K-norm evaluated through the spectral
        // representation (coefficients divided by √ρ_k).
        let grid = Grid::uniform(129).unwrap();
        let op = brownian(&grid);
        let sys = EigenSystem::from_operator(&op);
        let half = op.sqrt();
        let m = 10;
        let coeffs = [0.9, -0.4, 0.25, 0.1, -0.3, 0.05, 0.2, -0.15, 0.08, 0.12];
        let mut f = GridFunction::zero(&grid);
        for (k, &c) in coeffs.iter().enumerate().take(m) {
            let phi = sys.eigenfunction(k).unwrap();
            f = GridFunction::new(
                Arc::clone(&grid),
                f.values() + phi.values() * c,
            )
            .unwrap();
        }
        let hf = half.apply(&f).unwrap();
        let mut k_norm_sq = 0.0;
        for k in 0..m {
            let phi = sys.eigenfunction(k).unwrap();
            let d = l2_inner(&hf, &phi).unwrap();
            k_norm_sq += d * d / sys.eigenvalues()[k];
        }
        assert_abs_diff_eq!(k_norm_sq.sqrt(), f.l2_norm(), epsilon = 1e-6);
    }

    #[test]
    fn csv_export_shape() {
        let sys = EigenSystem::from_eigenvalues(vec![0.5, 1.0, 0.25]);
        let mut buf = Vec::new();
        sys.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "k,mu_k");
        assert!(lines.next().unwrap().starts_with("1,1.0"));
        assert!(lines.next().unwrap().starts_with("2,5.0"));
    }
}

//! Regularized least squares in its two equivalent forms, and the
//! divide-and-conquer average.
//!
//! Representer form: `β̂(·) = Σᵢ cᵢ ∫ K(·,t) Xᵢ(t) dt` with
//! `c = (λ n I + 𝕂_X)⁻¹ Y`, an n×n symmetric positive-definite solve.
//!
//! Operator form: `β̂ = L_K^{1/2} f̂` with
//! `f̂ = (λ I + T_X)⁻¹ · (1/n) Σᵢ L_K^{1/2} Xᵢ Yᵢ` and the empirical
//! operator `T_X = (1/n) Σᵢ L_K^{1/2} Xᵢ ⊗ L_K^{1/2} Xᵢ`. The two forms are
//! algebraically identical; both are implemented and cross-checked. When a
//! dataset carries coefficients in the scenario basis, the operator form is
//! solved there (an M×M system instead of G×G, with no additional
//! approximation beyond the shared truncation).
//!
//! The divide-and-conquer estimator partitions the samples into `m` equal
//! blocks (contiguous after a seeded shuffle), fits each block
//! independently, and averages the local solutions in fixed block order.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::grid::{l2_inner, GridFunction};
use crate::kernels::{functional_gram, gram_on_grid, KernelSpec};
use crate::operators::DiscretizedOperator;
use crate::rng::{stream, tag};
use crate::synth::{Dataset, Scenario};

/// Which fitting path `dac_fit` uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMode {
    /// Representer form through the functional Gram matrix.
    Gram,
    /// Operator form in the scenario basis.
    Operator,
}

/// A fitted RLS model. `beta_hat` is always present; the remaining fields
/// depend on the fitting path.
#[derive(Debug, Clone)]
pub struct RlsModel {
    pub lambda: f64,
    pub beta_hat: GridFunction,
    /// Representer coefficients `c` (Gram path).
    pub representer_coeffs: Option<DVector<f64>>,
    /// Coefficients of `β̂` in the scenario basis (basis path).
    pub basis_coeffs: Option<DVector<f64>>,
    /// Coefficients of `f̂` in the scenario basis (basis path).
    pub f_coeffs: Option<DVector<f64>>,
    /// `f̂` on the grid (grid operator path).
    pub f_grid: Option<GridFunction>,
}

/// Divide-and-conquer model: `m` local fits plus their average.
#[derive(Debug, Clone)]
pub struct DacModel {
    pub lambda: f64,
    pub m: usize,
    pub locals: Vec<RlsModel>,
    pub averaged: GridFunction,
    pub averaged_basis: Option<DVector<f64>>,
    pub averaged_f: Option<DVector<f64>>,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("lambda must be positive, got {lambda}")))
    }
}

/// Representer-form fit: solve `(λ n I + 𝕂_X) c = Y` and assemble
/// `β̂ = L_K (Σᵢ cᵢ Xᵢ)` on the grid.
pub fn rls_fit_gram(
    xs: &[GridFunction],
    y: &DVector<f64>,
    kernel: &KernelSpec,
    lambda: f64,
) -> Result<RlsModel> {
    check_lambda(lambda)?;
    let n = xs.len();
    if n == 0 || y.len() != n {
        return Err(Error::invalid("need at least one sample and matching Y length"));
    }
    let gram = functional_gram(xs, kernel)?;
    let mut a = gram.entries().clone();
    for i in 0..n {
        a[(i, i)] += lambda * n as f64;
    }
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure("Cholesky failed on λnI + K_X".into()))?;
    let mut c = chol.solve(y);
    // One step of iterative refinement keeps the residual at roundoff even
    // when λn is small relative to the Gram spectrum.
    let resid = y - &a * &c;
    c += chol.solve(&resid);
    let final_resid = (y - &a * &c).norm();
    if final_resid > 1e-10 * y.norm().max(f64::MIN_POSITIVE) {
        return Err(Error::NumericalFailure(format!(
            "representer solve residual {final_resid} exceeds tolerance"
        )));
    }

    // β̂ = L_K u with u = Σ c_i X_i.
    let grid = xs[0].grid();
    let mut u = DVector::zeros(grid.len());
    for (ci, x) in c.iter().zip(xs) {
        u += x.values() * *ci;
    }
    let kernel_matrix = gram_on_grid(kernel, grid)?;
    let wu = DVector::from_iterator(
        grid.len(),
        u.iter().zip(grid.weights()).map(|(&v, &w)| v * w),
    );
    let beta_values = kernel_matrix.entries() * wu;
    let beta_hat = GridFunction::new(Arc::clone(grid), beta_values)?;
    Ok(RlsModel {
        lambda,
        beta_hat,
        representer_coeffs: Some(c),
        basis_coeffs: None,
        f_coeffs: None,
        f_grid: None,
    })
}

/// Operator-form fit on the grid: build `T_X` from `L_K^{1/2} Xᵢ`, solve the
/// regularized system, and set `β̂ = L_K^{1/2} f̂`.
pub fn rls_fit_operator(
    xs: &[GridFunction],
    lk: &DiscretizedOperator,
    y: &DVector<f64>,
    lambda: f64,
) -> Result<RlsModel> {
    check_lambda(lambda)?;
    let n = xs.len();
    if n == 0 || y.len() != n {
        return Err(Error::invalid("need at least one sample and matching Y length"));
    }
    let grid = lk.grid();
    for x in xs {
        if !x.grid().same_as(grid) {
            return Err(Error::GridMismatch("sample grid differs from operator grid".into()));
        }
    }
    let g = grid.len();
    let half = lk.sqrt();
    let sqrt_w: Vec<f64> = grid.weights().iter().map(|w| w.sqrt()).collect();

    // Columns h_i = S_K^{1/2} W^{1/2} x_i (symmetrized frame).
    let mut h = DMatrix::zeros(g, n);
    for (i, x) in xs.iter().enumerate() {
        let xt = DVector::from_iterator(
            g,
            x.values().iter().zip(&sqrt_w).map(|(&v, &s)| v * s),
        );
        h.set_column(i, &(half.sym() * xt));
    }
    let t_x = &h * h.transpose() / n as f64;
    let ghat = &h * y / n as f64;
    let mut a = t_x;
    for i in 0..g {
        a[(i, i)] += lambda;
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure("Cholesky failed on λI + T_X".into()))?;
    let f_sym = chol.solve(&ghat);
    let beta_sym = half.sym() * &f_sym;
    let unscale = |v: &DVector<f64>| {
        DVector::from_iterator(g, v.iter().zip(&sqrt_w).map(|(&a, &s)| a / s))
    };
    let beta_hat = GridFunction::new(Arc::clone(grid), unscale(&beta_sym))?;
    let f_grid = GridFunction::new(Arc::clone(grid), unscale(&f_sym))?;
    Ok(RlsModel {
        lambda,
        beta_hat,
        representer_coeffs: None,
        basis_coeffs: None,
        f_coeffs: None,
        f_grid: Some(f_grid),
    })
}

/// Operator-form fit in the scenario basis: `H` has rows `√ρ_k c_{ik}`,
/// `T_X = HᵀH/n`, and the solve is M×M.
pub fn rls_fit_basis(
    x_rows: &DMatrix<f64>,
    y: &DVector<f64>,
    scenario: &Scenario,
    lambda: f64,
) -> Result<RlsModel> {
    check_lambda(lambda)?;
    let n = x_rows.nrows();
    let m = scenario.truncation();
    if n == 0 || y.len() != n || x_rows.ncols() != m {
        return Err(Error::invalid("coefficient matrix and Y shapes do not match"));
    }
    let sqrt_rho: Vec<f64> = scenario.rho().iter().map(|r| r.sqrt()).collect();
    let mut h = x_rows.clone();
    for k in 0..m {
        h.column_mut(k).scale_mut(sqrt_rho[k]);
    }
    let mut a = h.tr_mul(&h) / n as f64;
    let ghat = h.tr_mul(y) / n as f64;
    for i in 0..m {
        a[(i, i)] += lambda;
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure("Cholesky failed on λI + T_X".into()))?;
    let f = chol.solve(&ghat);
    let mut b = f.clone();
    for k in 0..m {
        b[k] *= sqrt_rho[k];
    }
    let beta_hat = scenario.materialize(b.as_slice())?;
    Ok(RlsModel {
        lambda,
        beta_hat,
        representer_coeffs: None,
        basis_coeffs: Some(b),
        f_coeffs: Some(f),
        f_grid: None,
    })
}

/// Divide-and-conquer fit over `m` equal blocks.
///
/// Requires `m | n` exactly. Partitioning shuffles the sample indices with a
/// seed-derived stream and then cuts contiguous blocks; `m = 1` skips the
/// shuffle and reproduces the global fit. Local fits are independent;
/// averaging runs in fixed block order.
pub fn dac_fit(
    ds: &Dataset,
    scenario: &Scenario,
    lambda: f64,
    m: usize,
    mode: FitMode,
    partition_seed: u64,
) -> Result<DacModel> {
    check_lambda(lambda)?;
    let n = ds.n();
    if m == 0 || m > n {
        return Err(Error::InvalidPartition(format!(
            "partition count {m} must lie in [1, {n}]"
        )));
    }
    if n % m != 0 {
        return Err(Error::InvalidPartition(format!(
            "partition count {m} does not divide sample count {n}"
        )));
    }
    let block = n / m;
    let mut order: Vec<usize> = (0..n).collect();
    if m > 1 {
        let mut rng = stream(partition_seed, &[tag::PARTITION]);
        order.shuffle(&mut rng);
    }

    let mut locals = Vec::with_capacity(m);
    for j in 0..m {
        let idx = &order[j * block..(j + 1) * block];
        let y = DVector::from_iterator(block, idx.iter().map(|&i| ds.y[i]));
        let model = match mode {
            FitMode::Operator => {
                let mut rows = DMatrix::zeros(block, scenario.truncation());
                for (r, &i) in idx.iter().enumerate() {
                    rows.set_row(r, &ds.x_coeffs.row(i));
                }
                rls_fit_basis(&rows, &y, scenario, lambda)?
            }
            FitMode::Gram => {
                let xs: Vec<GridFunction> = idx
                    .iter()
                    .map(|&i| {
                        let row: Vec<f64> = ds.x_coeffs.row(i).iter().copied().collect();
                        scenario.materialize(&row)
                    })
                    .collect::<Result<_>>()?;
                rls_fit_gram(&xs, &y, &scenario.kernel_k(), lambda)?
            }
        };
        locals.push(model);
    }

    let grid = scenario.grid();
    let mut avg_values = DVector::zeros(grid.len());
    for model in &locals {
        avg_values += model.beta_hat.values();
    }
    avg_values /= m as f64;
    let averaged = GridFunction::new(Arc::clone(grid), avg_values)?;

    let average_opt = |extract: fn(&RlsModel) -> Option<&DVector<f64>>| -> Option<DVector<f64>> {
        let first = extract(&locals[0])?;
        let mut acc = first.clone();
        for model in &locals[1..] {
            acc += extract(model)?;
        }
        Some(acc / m as f64)
    };
    let averaged_basis = average_opt(|l| l.basis_coeffs.as_ref());
    let averaged_f = average_opt(|l| l.f_coeffs.as_ref());

    Ok(DacModel {
        lambda,
        m,
        locals,
        averaged,
        averaged_basis,
        averaged_f,
    })
}

/// Prediction `∫ β(t) X(t) dt` through the quadrature inner product.
pub fn predict(beta: &GridFunction, x_new: &GridFunction) -> Result<f64> {
    l2_inner(beta, x_new)
}

/// Prediction in the shared basis, `Σ_k b_k c_k`.
pub fn predict_coeffs(basis_coeffs: &DVector<f64>, x_coeffs: &DVector<f64>) -> Result<f64> {
    if basis_coeffs.len() != x_coeffs.len() {
        return Err(Error::invalid("coefficient lengths differ"));
    }
    Ok(basis_coeffs.dot(x_coeffs))
}

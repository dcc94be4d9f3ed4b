//! Reproducing and covariance kernels as point evaluators, plus Gram
//! matrices on the grid and the functional Gram matrix over samples.
//!
//! Three kernel families cover everything the verification suite needs:
//! the Brownian kernel `min(s,t)` (a classic RKHS with closed forms), the
//! square-exponential covariance kernel, and `SpectralDecay` kernels built on
//! the cosine basis `φ_k(t) = √2 cos(kπt)`. Spectral-decay reproducing and
//! covariance kernels share that basis, so the induced operators are
//! simultaneously diagonalizable and every risk quantity has an analytic
//! form.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{l2_inner, Grid, GridFunction};

/// Kernel specification.
///
/// `SpectralDecay` means `K(s,t) = Σ_{k=1}^{truncation} k^{−exponent}
/// φ_k(s) φ_k(t)` over the cosine basis, plus the constant mode `φ₀ ≡ 1`
/// when `include_constant` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    Brownian,
    #[serde(rename = "sqexp")]
    SquaredExponential { gamma: f64 },
    #[serde(rename = "spectral")]
    SpectralDecay {
        exponent: f64,
        truncation: usize,
        include_constant: bool,
    },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Brownian => Ok(()),
            KernelSpec::SquaredExponential { gamma } => {
                if gamma > 0.0 && gamma.is_finite() {
                    Ok(())
                } else {
                    Err(Error::invalid(format!("gamma must be positive, got {gamma}")))
                }
            }
            KernelSpec::SpectralDecay {
                exponent,
                truncation,
                ..
            } => {
                if exponent < 1.0 {
                    // At least harmonic decay; the truncated sum keeps K
                    // square integrable on the boundary case.
                    Err(Error::invalid(format!(
                        "spectral decay exponent must be at least 1, got {exponent}"
                    )))
                } else if truncation == 0 {
                    Err(Error::invalid("truncation must be at least 1"))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Cosine basis function `φ_k(t) = √2 cos(kπt)` for `k ≥ 1`, `φ₀ ≡ 1`.
pub fn cosine_basis_fn(k: usize, t: f64) -> f64 {
    if k == 0 {
        1.0
    } else {
        std::f64::consts::SQRT_2 * (k as f64 * PI * t).cos()
    }
}

/// Evaluate the kernel at `(s, t) ∈ [0,1]²`. Symmetric in its arguments.
pub fn eval_kernel(spec: &KernelSpec, s: f64, t: f64) -> Result<f64> {
    spec.validate()?;
    if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!(
            "kernel arguments must lie in [0,1], got ({s}, {t})"
        )));
    }
    Ok(eval_unchecked(spec, s, t))
}

fn eval_unchecked(spec: &KernelSpec, s: f64, t: f64) -> f64 {
    match *spec {
        KernelSpec::Brownian => s.min(t),
        KernelSpec::SquaredExponential { gamma } => (-((s - t) * (s - t)) / (gamma * gamma)).exp(),
        KernelSpec::SpectralDecay {
            exponent,
            truncation,
            include_constant,
        } => {
            let mut acc = if include_constant { 1.0 } else { 0.0 };
            for k in 1..=truncation {
                let rho = (k as f64).powf(-exponent);
                // The cosine product is formed first so evaluation is
                // bitwise symmetric in (s, t).
                let prod = (k as f64 * PI * s).cos() * (k as f64 * PI * t).cos();
                acc += rho * (2.0 * prod);
            }
            acc
        }
    }
}

/// Role of a Gram matrix: pointwise `K(tᵢ, tⱼ)` on the grid, or functional
/// `𝕂_X` over samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GramRole {
    Pointwise,
    Functional,
}

/// Symmetric positive-semidefinite Gram matrix.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    entries: DMatrix<f64>,
    role: GramRole,
}

impl GramMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn role(&self) -> GramRole {
        self.role
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    /// Minimum and maximum eigenvalues (symmetric eigensolve).
    pub fn eigen_range(&self) -> (f64, f64) {
        let eig = self.entries.clone().symmetric_eigenvalues();
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &v in eig.iter() {
            min = min.min(v);
            max = max.max(v);
        }
        (min, max)
    }

    /// PSD within discretization noise: `λ_min ≥ −1e−8 · λ_max`.
    pub fn is_psd(&self) -> bool {
        let (min, max) = self.eigen_range();
        min >= -1e-8 * max.max(f64::MIN_POSITIVE)
    }
}

/// Pointwise Gram matrix `entries[i][j] = K(tᵢ, tⱼ)`.
///
/// Only the lower triangle is evaluated; the mirror copy keeps the result
/// exactly symmetric.
pub fn gram_on_grid(spec: &KernelSpec, grid: &Grid) -> Result<GramMatrix> {
    spec.validate()?;
    let g = grid.len();
    let pts = grid.points();
    let mut entries = DMatrix::zeros(g, g);
    for i in 0..g {
        for j in 0..=i {
            let v = eval_unchecked(spec, pts[i], pts[j]);
            entries[(i, j)] = v;
            entries[(j, i)] = v;
        }
    }
    Ok(GramMatrix {
        entries,
        role: GramRole::Pointwise,
    })
}

/// Functional Gram matrix `𝕂_X` with entries
/// `∫∫ Xᵢ(s) K(s,t) Xⱼ(t) ds dt`, realized as the quadrature bilinear form
/// `(W Xᵢ)ᵀ · K_grid · (W Xⱼ)` through [`gram_on_grid`].
pub fn functional_gram(samples: &[GridFunction], spec: &KernelSpec) -> Result<GramMatrix> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("functional Gram of an empty sample list"))?;
    let grid = first.grid();
    for x in samples {
        if !x.grid().same_as(grid) {
            return Err(Error::GridMismatch(
                "all samples must share the same grid".into(),
            ));
        }
    }
    let kernel = gram_on_grid(spec, grid)?;
    let g = grid.len();
    let n = samples.len();
    // Columns wx_i = W x_i.
    let mut wx = DMatrix::zeros(g, n);
    for (i, x) in samples.iter().enumerate() {
        for (r, (&w, &v)) in grid.weights().iter().zip(x.values().iter()).enumerate() {
            wx[(r, i)] = w * v;
        }
    }
    let kwx = kernel.entries() * &wx;
    let mut entries = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = wx.column(i).dot(&kwx.column(j));
            entries[(i, j)] = v;
            entries[(j, i)] = v;
        }
    }
    Ok(GramMatrix {
        entries,
        role: GramRole::Functional,
    })
}

/// Basis-coefficient shortcut for spectral-decay kernels:
/// `[𝕂_X]ᵢⱼ = Σ_k ρ_k ⟨Xᵢ, φ_k⟩ ⟨Xⱼ, φ_k⟩`. Used as the independent route
/// in cross-implementation checks.
pub fn functional_gram_spectral(
    samples: &[GridFunction],
    exponent: f64,
    truncation: usize,
    include_constant: bool,
) -> Result<GramMatrix> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("functional Gram of an empty sample list"))?;
    let grid = Arc::clone(first.grid());
    let n = samples.len();
    let k0 = if include_constant { 0 } else { 1 };
    // coeffs[i][k] = ⟨X_i, φ_k⟩
    let mut coeffs = Vec::with_capacity(n);
    for x in samples {
        let mut c = Vec::with_capacity(truncation + 1 - k0);
        for k in k0..=truncation {
            let phi = GridFunction::from_fn(&grid, |t| cosine_basis_fn(k, t))?;
            c.push(l2_inner(x, &phi)?);
        }
        coeffs.push(c);
    }
    let mut entries = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut acc = 0.0;
            for (idx, k) in (k0..=truncation).enumerate() {
                let rho = if k == 0 { 1.0 } else { (k as f64).powf(-exponent) };
                acc += rho * coeffs[i][idx] * coeffs[j][idx];
            }
            entries[(i, j)] = acc;
            entries[(j, i)] = acc;
        }
    }
    Ok(GramMatrix {
        entries,
        role: GramRole::Functional,
    })
}

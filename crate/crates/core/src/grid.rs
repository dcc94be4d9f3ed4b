//! Uniform quadrature grid on `[0, 1]` and sampled functions.
//!
//! A [`Grid`] carries composite-trapezoid weights, so every `L²` inner
//! product in the crate is the weighted sum `Σᵢ wᵢ f(tᵢ) g(tᵢ)`. The rule is
//! exact on piecewise-linear integrands with breakpoints at the nodes and has
//! `O(G⁻²)` error otherwise, which is far below the statistical tolerances at
//! the default `G = 257`.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Default number of grid points (2⁸ + 1).
pub const DEFAULT_GRID_SIZE: usize = 257;

/// Ordered points in `[0, 1]` with positive quadrature weights summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl Grid {
    /// Equally spaced points with composite trapezoid weights: `h/2` at the
    /// endpoints and `h` elsewhere, `h = 1/(G−1)`.
    ///
    /// `g` must be odd and at least 3 (so the midpoint is a node).
    pub fn uniform(g: usize) -> Result<Arc<Grid>> {
        if g < 3 || g % 2 == 0 {
            return Err(Error::invalid(format!(
                "grid size must be odd and >= 3, got {g}"
            )));
        }
        let h = 1.0 / (g - 1) as f64;
        let points: Vec<f64> = (0..g).map(|i| i as f64 * h).collect();
        let mut weights = vec![h; g];
        weights[0] = h / 2.0;
        weights[g - 1] = h / 2.0;
        Ok(Arc::new(Grid { points, weights }))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.len() - 1) as f64
    }

    /// True when `other` is the same grid (pointer or value equality).
    pub fn same_as(&self, other: &Grid) -> bool {
        std::ptr::eq(self, other) || self == other
    }
}

/// A function sampled on a [`Grid`]; all values finite.
#[derive(Debug, Clone)]
pub struct GridFunction {
    grid: Arc<Grid>,
    values: DVector<f64>,
}

impl GridFunction {
    pub fn new(grid: Arc<Grid>, values: DVector<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "value vector length {} does not match grid length {}",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("grid function values must be finite"));
        }
        Ok(GridFunction { grid, values })
    }

    /// Sample `f` at the grid points.
    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = DVector::from_iterator(grid.len(), grid.points().iter().map(|&t| f(t)));
        GridFunction::new(Arc::clone(grid), values)
    }

    pub fn zero(grid: &Arc<Grid>) -> Self {
        GridFunction {
            grid: Arc::clone(grid),
            values: DVector::zeros(grid.len()),
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn l2_norm(&self) -> f64 {
        l2_inner(self, self).expect("same grid").sqrt()
    }

    /// Serialize in the plain-text columnar format:
    /// a `# grid_function v1 G=<G>` header, then one `t value` line per point.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# grid_function v1 G={}", self.grid.len());
        for (t, v) in self.grid.points().iter().zip(self.values.iter()) {
            let _ = writeln!(out, "{t:.16e} {v:.16e}");
        }
        out
    }

    /// Parse the text format produced by [`GridFunction::to_text`]. The grid
    /// is reconstructed from the point column and must be uniform.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "empty input".into(),
        })?;
        let g: usize = header
            .strip_prefix("# grid_function v1 G=")
            .and_then(|s| s.trim().parse().ok())
            .ok_or(Error::Parse {
                line: 1,
                msg: "expected header '# grid_function v1 G=<G>'".into(),
            })?;
        let grid = Grid::uniform(g).map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?;
        let mut values = Vec::with_capacity(g);
        for (idx, line) in lines {
            let lineno = idx + 1;
            let mut parts = line.split_whitespace();
            let t: f64 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or(Error::Parse {
                    line: lineno,
                    msg: "missing point column".into(),
                })?;
            let v: f64 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or(Error::Parse {
                    line: lineno,
                    msg: "missing value column".into(),
                })?;
            let k = values.len();
            if k >= g {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("more than {g} data lines"),
                });
            }
            if (t - grid.points()[k]).abs() > 1e-12 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("point {t} does not lie on the uniform grid"),
                });
            }
            values.push(v);
        }
        if values.len() != g {
            return Err(Error::Parse {
                line: values.len() + 1,
                msg: format!("expected {g} data lines, found {}", values.len()),
            });
        }
        GridFunction::new(grid, DVector::from_vec(values))
    }
}

/// Quadrature `L²` inner product `Σᵢ wᵢ f(tᵢ) g(tᵢ)`.
pub fn l2_inner(f: &GridFunction, g: &GridFunction) -> Result<f64> {
    if !f.grid.same_as(&g.grid) {
        return Err(Error::GridMismatch(
            "inner product requires both functions on the same grid".into(),
        ));
    }
    Ok(f.grid
        .weights()
        .iter()
        .zip(f.values.iter().zip(g.values.iter()))
        .map(|(&w, (&a, &b))| w * a * b)
        .sum())
}

/// `‖f − g‖ / (1 + ‖f‖)`, the relative `L²` distance used by the
/// cross-implementation checks.
pub fn relative_l2_distance(f: &GridFunction, g: &GridFunction) -> Result<f64> {
    if !f.grid().same_as(g.grid()) {
        return Err(Error::GridMismatch("distance requires a shared grid".into()));
    }
    let diff = f.values() - g.values();
    let d = GridFunction::new(Arc::clone(f.grid()), diff)?;
    Ok(d.l2_norm() / (1.0 + f.l2_norm()))
}

//! Uniform age grids, tabulated age functions and trapezoid quadrature.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Default admissibility threshold for truncating the age axis.
pub const TRUNCATION_TOL: f64 = 1e-10;

/// Uniform grid on `[0, a_max]` with `n_cells` cells, nodes `i * da`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgeGrid {
    a_max: f64,
    n_cells: usize,
    da: f64,
}

impl AgeGrid {
    pub fn new(a_max: f64, n_cells: usize) -> Result<Self> {
        if !(a_max.is_finite() && a_max > 0.0) {
            return Err(CoreError::Config(format!("a_max must be positive, got {a_max}")));
        }
        if n_cells == 0 {
            return Err(CoreError::Config("n_cells must be at least 1".into()));
        }
        Ok(Self { a_max, n_cells, da: a_max / n_cells as f64 })
    }

    pub fn a_max(&self) -> f64 {
        self.a_max
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn da(&self) -> f64 {
        self.da
    }

    /// Number of nodes (`n_cells + 1`).
    pub fn len(&self) -> usize {
        self.n_cells + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.n_cells {
            self.a_max
        } else {
            i as f64 * self.da
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    /// Same ages, half the step.
    pub fn refined(&self) -> Self {
        Self::new(self.a_max, 2 * self.n_cells).expect("refining a valid grid")
    }
}

/// Nonnegative function tabulated at the nodes of an [`AgeGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeFunction {
    grid: AgeGrid,
    values: Vec<f64>,
}

impl AgeFunction {
    pub fn new(grid: AgeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(CoreError::Structural(format!(
                "expected {} node values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(CoreError::Domain(format!(
                "value {v} at age {} is not a finite nonnegative number",
                grid.node(i)
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: AgeGrid, v: f64) -> Result<Self> {
        Self::new(grid, vec![v; grid.len()])
    }

    pub fn zeros(grid: AgeGrid) -> Self {
        Self { grid, values: vec![0.0; grid.len()] }
    }

    /// Samples `f` at every node.
    pub fn from_fn(grid: AgeGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.nodes().into_iter().map(f).collect())
    }

    /// Piecewise-linear interpolation of `(age, value)` pairs, constant outside
    /// the table. Pairs must have strictly increasing ages.
    pub fn from_table(grid: AgeGrid, table: &[(f64, f64)]) -> Result<Self> {
        if table.is_empty() {
            return Err(CoreError::Config("empty rate table".into()));
        }
        if table.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(CoreError::Config("rate table ages must be strictly increasing".into()));
        }
        let interp = |a: f64| {
            if a <= table[0].0 {
                return table[0].1;
            }
            let last = table[table.len() - 1];
            if a >= last.0 {
                return last.1;
            }
            let j = table.partition_point(|p| p.0 <= a);
            let (a0, v0) = table[j - 1];
            let (a1, v1) = table[j];
            v0 + (v1 - v0) * (a - a0) / (a1 - a0)
        };
        Self::from_fn(grid, interp)
    }

    pub fn grid(&self) -> &AgeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    pub fn inf(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    /// True when every node carries the same value.
    pub fn is_constant(&self) -> bool {
        self.values.iter().all(|v| *v == self.values[0])
    }

    /// Pointwise product (nonnegative by construction).
    pub fn mul(&self, other: &AgeFunction) -> Result<AgeFunction> {
        self.check_same_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect();
        Ok(AgeFunction { grid: self.grid, values })
    }

    pub fn scaled(&self, s: f64) -> Result<AgeFunction> {
        AgeFunction::new(self.grid, self.values.iter().map(|v| v * s).collect())
    }

    pub fn check_same_grid(&self, other: &AgeFunction) -> Result<()> {
        if self.grid != other.grid {
            return Err(CoreError::Structural("age functions live on different grids".into()));
        }
        Ok(())
    }
}

/// Composite trapezoid rule on uniformly spaced samples.
pub fn trapz(da: f64, f: &[f64]) -> f64 {
    match f.len() {
        0 | 1 => 0.0,
        n => {
            let inner: f64 = f[1..n - 1].iter().sum();
            da * (inner + 0.5 * (f[0] + f[n - 1]))
        }
    }
}

/// Trapezoid rule of the pointwise product `f * g`.
pub fn trapz_prod(da: f64, f: &[f64], g: &[f64]) -> f64 {
    debug_assert_eq!(f.len(), g.len());
    let n = f.len();
    if n < 2 {
        return 0.0;
    }
    let inner: f64 = f[1..n - 1].iter().zip(&g[1..n - 1]).map(|(a, b)| a * b).sum();
    da * (inner + 0.5 * (f[0] * g[0] + f[n - 1] * g[n - 1]))
}

/// Trapezoid rule of `f(a) * exp(-lam * a)` on nodes `i * da`.
///
/// The exponential is recomputed exactly at the start of each block of 64
/// nodes and propagated by multiplication inside the block.
pub fn trapz_exp(da: f64, f: &[f64], lam: f64) -> f64 {
    const BLOCK: usize = 64;
    let n = f.len();
    if n < 2 {
        return 0.0;
    }
    let q = (-lam * da).exp();
    let mut acc = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + BLOCK).min(n);
        let mut w = (-lam * da * start as f64).exp();
        let mut part = 0.0;
        for v in &f[start..end] {
            part += v * w;
            w *= q;
        }
        acc += part;
        start = end;
    }
    let last = f[n - 1] * (-lam * da * (n - 1) as f64).exp();
    da * (acc - 0.5 * (f[0] + last))
}

/// Trapezoid integral of `f` over its grid.
pub fn integrate(f: &AgeFunction) -> f64 {
    trapz(f.grid.da, &f.values)
}

/// Trapezoid integral of `f * g`; errors if the grids differ.
pub fn integrate_prod(f: &AgeFunction, g: &AgeFunction) -> Result<f64> {
    f.check_same_grid(g)?;
    Ok(trapz_prod(f.grid.da, &f.values, &g.values))
}

/// `H(a) = ∫_0^a k`, accumulated cell by cell with the trapezoid rule.
pub fn cumulative_hazard(k: &AgeFunction) -> Result<AgeFunction> {
    let da = k.grid.da;
    let mut h = Vec::with_capacity(k.values.len());
    let mut acc = 0.0;
    h.push(0.0);
    for w in k.values.windows(2) {
        acc += 0.5 * da * (w[0] + w[1]);
        h.push(acc);
    }
    AgeFunction::new(k.grid, h)
}

/// `exp(-H(a))` at every node.
pub fn survival(k: &AgeFunction) -> Result<Vec<f64>> {
    Ok(cumulative_hazard(k)?.values.iter().map(|h| (-h).exp()).collect())
}

/// Whether the neglected survival mass beyond `a_max` is below `tol`.
pub fn truncation_admissible(k: &AgeFunction, tol: f64) -> bool {
    let total = integrate(k);
    (-total).exp() <= tol
}

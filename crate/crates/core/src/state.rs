use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::{trapz, trapz_prod, AgeFunction};

/// Densities of both phases at one time, with their aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationState {
    pub t: f64,
    pub n1: AgeFunction,
    pub n2: AgeFunction,
    pub n1_total: f64,
    pub n2_total: f64,
    /// `∫ ψ1 n1`
    pub s1: f64,
    /// `∫ ψ2 n2`
    pub s2: f64,
}

impl PopulationState {
    pub fn new(t: f64, n1: AgeFunction, n2: AgeFunction, psi1: &AgeFunction, psi2: &AgeFunction) -> Result<Self> {
        n1.check_same_grid(&n2)?;
        n1.check_same_grid(psi1)?;
        n1.check_same_grid(psi2)?;
        let da = n1.grid().da();
        Ok(Self {
            t,
            n1_total: trapz(da, n1.values()),
            n2_total: trapz(da, n2.values()),
            s1: trapz_prod(da, psi1.values(), n1.values()),
            s2: trapz_prod(da, psi2.values(), n2.values()),
            n1,
            n2,
        })
    }

    /// Builds a state from raw node values, rejecting negative or non-finite entries.
    pub fn from_values(t: f64, n1: Vec<f64>, n2: Vec<f64>, psi1: &AgeFunction, psi2: &AgeFunction) -> Result<Self> {
        let grid = *psi1.grid();
        Self::new(t, AgeFunction::new(grid, n1)?, AgeFunction::new(grid, n2)?, psi1, psi2)
    }

    pub fn zeros(t: f64, psi1: &AgeFunction, psi2: &AgeFunction) -> Result<Self> {
        let grid = *psi1.grid();
        Self::new(t, AgeFunction::zeros(grid), AgeFunction::zeros(grid), psi1, psi2)
    }

    pub fn total_mass(&self) -> f64 {
        self.n1_total + self.n2_total
    }

    pub(crate) fn ensure_nonnegative(&self) -> Result<()> {
        let bad = self.n1.values().iter().chain(self.n2.values()).any(|v| !(*v >= 0.0));
        if bad {
            return Err(CoreError::Domain("state has a negative or non-finite density".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::AgeGrid;

    #[test]
    fn aggregates_follow_kernels() {
        let g = AgeGrid::new(2.0, 200).unwrap();
        let n1 = AgeFunction::constant(g, 1.0).unwrap();
        let n2 = AgeFunction::from_fn(g, |a| a).unwrap();
        let psi1 = AgeFunction::constant(g, 3.0).unwrap();
        let psi2 = AgeFunction::constant(g, 0.5).unwrap();
        let s = PopulationState::new(0.0, n1, n2, &psi1, &psi2).unwrap();
        assert!((s.n1_total - 2.0).abs() < 1e-12);
        assert!((s.n2_total - 2.0).abs() < 1e-12);
        assert!((s.s1 - 6.0).abs() < 1e-12);
        assert!((s.s2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negative_values_rejected() {
        let g = AgeGrid::new(1.0, 2).unwrap();
        let one = AgeFunction::constant(g, 1.0).unwrap();
        assert!(PopulationState::from_values(0.0, vec![1.0, -1.0, 0.0], vec![0.0; 3], &one, &one).is_err());
    }
}

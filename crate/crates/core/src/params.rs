//! Model parameters and the assumption report.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::{survival, trapz_prod, truncation_admissible, AgeFunction, AgeGrid, TRUNCATION_TOL};

/// Linear competition coefficients.
///
/// Phase-1 individuals die from competition at rate `c1 S1 + c2 S2` and are
/// pushed into phase 2 at the extra rate `eta1 S1 + eta2 S2`; phase-2
/// individuals die at the extra rate `ctilde1 S1 + ctilde2 S2`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Competition {
    pub eta1: f64,
    pub eta2: f64,
    pub c1: f64,
    pub c2: f64,
    pub ctilde1: f64,
    pub ctilde2: f64,
}

impl Competition {
    pub fn c1_tot(&self) -> f64 {
        self.eta1 + self.c1
    }

    pub fn c2_tot(&self) -> f64 {
        self.eta2 + self.c2
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("eta1", self.eta1),
            ("eta2", self.eta2),
            ("c1", self.c1),
            ("c2", self.c2),
            ("ctilde1", self.ctilde1),
            ("ctilde2", self.ctilde2),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CoreError::Domain(format!("competition coefficient {name} = {v} must be >= 0")));
            }
        }
        Ok(())
    }

    /// Total phase-1 exit pressure `c_tot(S1, S2)`.
    pub fn c_tot(&self, s1: f64, s2: f64) -> f64 {
        self.c1_tot() * s1 + self.c2_tot() * s2
    }

    /// Phase-2 death pressure `c̃(S1, S2)`.
    pub fn c_tilde(&self, s1: f64, s2: f64) -> f64 {
        self.ctilde1 * s1 + self.ctilde2 * s2
    }

    /// Competition-driven transition `η(S1, S2)`.
    pub fn eta(&self, s1: f64, s2: f64) -> f64 {
        self.eta1 * s1 + self.eta2 * s2
    }

    /// Competition-driven death in phase 1, `c(S1, S2)`.
    pub fn c_death(&self, s1: f64, s2: f64) -> f64 {
        self.c1 * s1 + self.c2 * s2
    }

    /// The same totals with no competition-driven transition.
    pub fn without_eta(&self) -> Competition {
        Competition { eta1: 0.0, eta2: 0.0, c1: self.c1_tot(), c2: self.c2_tot(), ..*self }
    }
}

/// Rates, kernels and competition of the full model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub b: AgeFunction,
    pub btilde: AgeFunction,
    pub k: AgeFunction,
    pub d: AgeFunction,
    pub psi1: AgeFunction,
    pub psi2: AgeFunction,
    pub comp: Competition,
}

impl ModelParams {
    /// Builds parameters with unit competition kernels.
    pub fn new(b: AgeFunction, btilde: AgeFunction, k: AgeFunction, d: AgeFunction, comp: Competition) -> Result<Self> {
        let grid = *b.grid();
        let one = AgeFunction::constant(grid, 1.0)?;
        Self::with_kernels(b, btilde, k, d, one.clone(), one, comp)
    }

    pub fn with_kernels(
        b: AgeFunction,
        btilde: AgeFunction,
        k: AgeFunction,
        d: AgeFunction,
        psi1: AgeFunction,
        psi2: AgeFunction,
        comp: Competition,
    ) -> Result<Self> {
        for f in [&btilde, &k, &d, &psi1, &psi2] {
            b.check_same_grid(f)?;
        }
        comp.validate()?;
        Ok(Self { b, btilde, k, d, psi1, psi2, comp })
    }

    /// Constant rates on a given grid.
    pub fn constant(grid: AgeGrid, b: f64, btilde: f64, k: f64, d: f64, comp: Competition) -> Result<Self> {
        Self::new(
            AgeFunction::constant(grid, b)?,
            AgeFunction::constant(grid, btilde)?,
            AgeFunction::constant(grid, k)?,
            AgeFunction::constant(grid, d)?,
            comp,
        )
    }

    pub fn grid(&self) -> &AgeGrid {
        self.b.grid()
    }

    pub fn with_comp(&self, comp: Competition) -> Result<Self> {
        comp.validate()?;
        Ok(Self { comp, ..self.clone() })
    }

    /// Same parameters with `b` multiplied by `s`.
    pub fn with_b_scaled(&self, s: f64) -> Result<Self> {
        Ok(Self { b: self.b.scaled(s)?, ..self.clone() })
    }
}

/// Growth functional at λ = 0:
/// `∫ b e^{-∫k} + (∫ k e^{-∫k}) (∫ b̃ e^{-∫d})`.
pub fn r0(params: &ModelParams) -> Result<f64> {
    let da = params.grid().da();
    let sk = survival(&params.k)?;
    let sd = survival(&params.d)?;
    let birth = trapz_prod(da, params.b.values(), &sk);
    let trans = trapz_prod(da, params.k.values(), &sk);
    let birth2 = trapz_prod(da, params.btilde.values(), &sd);
    Ok(birth + trans * birth2)
}

/// Birth-only growth functional `∫ b e^{-∫k}` (the relevant one when b̃ ≡ 0).
pub fn r0_phase1(params: &ModelParams) -> Result<f64> {
    let sk = survival(&params.k)?;
    Ok(trapz_prod(params.grid().da(), params.b.values(), &sk))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub r0: f64,
    pub non_extinction: bool,
    pub rates_bounded: bool,
    pub k_lower_bound: f64,
    pub d_lower_bound: f64,
    /// `exp(-∫k) <= 1e-10` over the truncated age axis.
    pub truncation_k: bool,
    /// Same test for the phase-2 death rate.
    pub truncation_d: bool,
    /// Competition pressures increase with the environment, i.e. `c1_tot > 0` and `ctilde2 > 0`.
    pub competition_increasing: bool,
    pub kernels_bounded_below: bool,
    pub btilde_zero: bool,
    pub d_constant: bool,
}

pub fn check_assumptions(params: &ModelParams) -> Result<AssumptionReport> {
    let r0 = r0(params)?;
    let all = [&params.b, &params.btilde, &params.k, &params.d, &params.psi1, &params.psi2];
    Ok(AssumptionReport {
        r0,
        non_extinction: r0 > 1.0,
        rates_bounded: all.iter().all(|f| f.sup().is_finite()),
        k_lower_bound: params.k.inf(),
        d_lower_bound: params.d.inf(),
        truncation_k: truncation_admissible(&params.k, TRUNCATION_TOL),
        truncation_d: truncation_admissible(&params.d, TRUNCATION_TOL),
        competition_increasing: params.comp.c1_tot() > 0.0 && params.comp.ctilde2 > 0.0,
        kernels_bounded_below: params.psi1.inf() > 0.0 && params.psi2.inf() > 0.0,
        btilde_zero: params.btilde.is_zero(),
        d_constant: params.d.is_constant(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn const_a(grid: AgeGrid) -> ModelParams {
        ModelParams::constant(grid, 2.0, 0.0, 1.0, 1.0, Competition::default()).unwrap()
    }

    #[test]
    fn const_a_r0_is_two() {
        let g = AgeGrid::new(30.0, 30_000).unwrap();
        let rep = check_assumptions(&const_a(g)).unwrap();
        assert!((rep.r0 - 2.0).abs() < 1e-6);
        assert!(rep.non_extinction);
        assert!(rep.truncation_k);
        assert!(rep.btilde_zero && rep.d_constant);
    }

    #[test]
    fn no_births_means_extinction() {
        let g = AgeGrid::new(30.0, 300).unwrap();
        let p = ModelParams::constant(g, 0.0, 0.0, 1.0, 1.0, Competition::default()).unwrap();
        let rep = check_assumptions(&p).unwrap();
        assert_eq!(rep.r0, 0.0);
        assert!(!rep.non_extinction);
    }

    #[test]
    fn const_b_r0_is_two() {
        let g = AgeGrid::new(30.0, 30_000).unwrap();
        let p = ModelParams::constant(g, 1.0, 1.0, 1.0, 1.0, Competition::default()).unwrap();
        assert!((r0(&p).unwrap() - 2.0).abs() < 1e-6);
    }

    #[test]
    fn totals_are_sums() {
        let c = Competition { eta1: 0.3, eta2: 0.2, c1: 1.0, c2: 0.5, ctilde1: 0.0, ctilde2: 1.0 };
        assert_eq!(c.c1_tot(), 1.3);
        assert_eq!(c.c2_tot(), 0.7);
        let n = c.without_eta();
        assert_eq!((n.eta1, n.eta2, n.c1_tot(), n.c2_tot()), (0.0, 0.0, 1.3, 0.7));
    }

    #[test]
    fn negative_competition_rejected() {
        let c = Competition { c2: -0.1, ..Default::default() };
        assert!(matches!(c.validate(), Err(CoreError::Domain(m)) if m.contains("c2")));
    }

    #[test]
    fn mixed_grids_rejected() {
        let g1 = AgeGrid::new(1.0, 10).unwrap();
        let g2 = AgeGrid::new(1.0, 11).unwrap();
        let r = ModelParams::new(
            AgeFunction::constant(g1, 1.0).unwrap(),
            AgeFunction::constant(g2, 1.0).unwrap(),
            AgeFunction::constant(g1, 1.0).unwrap(),
            AgeFunction::constant(g1, 1.0).unwrap(),
            Competition::default(),
        );
        assert!(matches!(r, Err(CoreError::Structural(_))));
    }
}

//! Malthusian growth rate, direct and adjoint eigenfunctions, and the
//! general relative entropy of the linear system.

use serde::{Deserialize, Serialize};

use crate::bisect::bisect;
use crate::error::{CoreError, Result};
use crate::grid::{cumulative_hazard, trapz_exp, trapz_prod, AgeFunction};
use crate::params::ModelParams;
use crate::state::PopulationState;

/// Tolerance on `|F(0) - 1|` below which the growth rate is reported as 0.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// `F(λ) = ∫ b e^{-∫k-λa} + (∫ k e^{-∫k-λa})(∫ b̃ e^{-∫d-λa})`, all by trapezoid.
///
/// Survival factors are tabulated once; each evaluation is a single pass.
#[derive(Debug, Clone)]
pub struct GrowthMap {
    da: f64,
    b_sk: Vec<f64>,
    k_sk: Vec<f64>,
    bt_sd: Vec<f64>,
    has_phase2_births: bool,
}

impl GrowthMap {
    pub fn new(params: &ModelParams) -> Result<Self> {
        let hk = cumulative_hazard(&params.k)?;
        let hd = cumulative_hazard(&params.d)?;
        let sk: Vec<f64> = hk.values().iter().map(|h| (-h).exp()).collect();
        let sd: Vec<f64> = hd.values().iter().map(|h| (-h).exp()).collect();
        let b_sk = params.b.values().iter().zip(&sk).map(|(b, s)| b * s).collect();
        let k_sk = params.k.values().iter().zip(&sk).map(|(k, s)| k * s).collect();
        let bt_sd = params.btilde.values().iter().zip(&sd).map(|(b, s)| b * s).collect();
        Ok(Self { da: params.grid().da(), b_sk, k_sk, bt_sd, has_phase2_births: !params.btilde.is_zero() })
    }

    pub fn eval(&self, lam: f64) -> f64 {
        let births = trapz_exp(self.da, &self.b_sk, lam);
        if !self.has_phase2_births {
            return births;
        }
        births + trapz_exp(self.da, &self.k_sk, lam) * trapz_exp(self.da, &self.bt_sd, lam)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lambda0 {
    pub value: f64,
    /// `F(0)` sits at 1 within [`DEGENERACY_TOL`]; `value` is then 0.
    pub degenerate: bool,
    pub r0: f64,
    pub iterations: usize,
}

/// Unique root of `F(λ) = 1` on `[0, ∞)` by bracketed bisection.
pub fn solve_lambda0(params: &ModelParams) -> Result<Lambda0> {
    let map = GrowthMap::new(params)?;
    solve_with_map(&map)
}

pub(crate) fn solve_with_map(map: &GrowthMap) -> Result<Lambda0> {
    let r0 = map.eval(0.0);
    if (r0 - 1.0).abs() <= DEGENERACY_TOL {
        return Ok(Lambda0 { value: 0.0, degenerate: true, r0, iterations: 0 });
    }
    if r0 < 1.0 {
        return Err(CoreError::NoPositiveRoot { r0 });
    }
    let mut hi = 1.0;
    while map.eval(hi) >= 1.0 {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(CoreError::Domain("growth functional does not decay; rates may be unbounded".into()));
        }
    }
    let res = bisect(|l| map.eval(l) - 1.0, 0.0, hi, 1e-13, 200);
    Ok(Lambda0 { value: res.root, degenerate: false, r0, iterations: res.iterations })
}

/// Bounds on the adjoint functions that follow from their integral form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjointBounds {
    pub phi1_upper: f64,
    pub phi2_upper: f64,
    /// Present only when `b` is bounded below by a positive constant.
    pub phi1_lower: Option<f64>,
    /// Present only when `b̃` is bounded below by a positive constant.
    pub phi2_lower: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSolution {
    pub lambda0: f64,
    pub n1_0: AgeFunction,
    pub n2_0: AgeFunction,
    pub phi1_0: AgeFunction,
    pub phi2_0: AgeFunction,
    /// `∫ φ1 n1⁰ + φ2 n2⁰` before rescaling.
    pub m0_normalizer: f64,
    pub bounds: AdjointBounds,
    /// Left eigenvector of one linear time step (`dt = da`, no competition),
    /// scaled so that `da Σ (w1 n1⁰ + w2 n2⁰) = 1`. It approximates `φ1⁰`,
    /// `φ2⁰` to first order and makes the weighted mass an exact invariant
    /// of the rescaled scheme.
    pub step_phi1: AgeFunction,
    pub step_phi2: AgeFunction,
}

/// Backward tail transform `φ(a) = e^{∫_0^a (r+λ)} ∫_a^∞ f(u) e^{-∫_0^u (r+λ)} du`.
///
/// Uses the trapezoid rule cell by cell and the recursion
/// `φ_i = ρ_i φ_{i+1} + da/2 (f_i + ρ_i f_{i+1})`, `ρ_i = e^{-da((r_i+r_{i+1})/2 + λ)}`,
/// which never forms the huge/tiny product of the direct formula. Beyond
/// `a_max` the last node's rates are extended as constants.
fn tail_transform(da: f64, f: &[f64], rate: &[f64], lam: f64) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![0.0; n];
    let r_end = (-da * (rate[n - 1] + lam)).exp();
    out[n - 1] = if r_end < 1.0 { 0.5 * da * f[n - 1] * (1.0 + r_end) / (1.0 - r_end) } else { 0.0 };
    for i in (0..n - 1).rev() {
        let rho = (-da * (0.5 * (rate[i] + rate[i + 1]) + lam)).exp();
        out[i] = rho * out[i + 1] + 0.5 * da * (f[i] + rho * f[i + 1]);
    }
    out
}

/// Direct and adjoint eigenfunctions for a given growth rate.
pub fn eigenfunctions(params: &ModelParams, lambda0: f64) -> Result<EigenSolution> {
    if !(lambda0 > 0.0) {
        return Err(CoreError::Domain(format!("eigenfunctions need lambda0 > 0, got {lambda0}")));
    }
    let grid = *params.grid();
    let da = grid.da();
    let nodes = grid.nodes();
    let hk = cumulative_hazard(&params.k)?;
    let hd = cumulative_hazard(&params.d)?;

    let n1: Vec<f64> = hk.values().iter().zip(&nodes).map(|(h, a)| (-h - lambda0 * a).exp()).collect();
    let shape2: Vec<f64> = hd.values().iter().zip(&nodes).map(|(h, a)| (-h - lambda0 * a).exp()).collect();
    let n2_at0 = trapz_prod(da, params.k.values(), &n1);
    let n2: Vec<f64> = shape2.iter().map(|v| n2_at0 * v).collect();

    let phi2_raw = tail_transform(da, params.btilde.values(), params.d.values(), lambda0);
    let phi2_at0 = phi2_raw[0];
    let src1: Vec<f64> =
        params.b.values().iter().zip(params.k.values()).map(|(b, k)| b + phi2_at0 * k).collect();
    let phi1_raw = tail_transform(da, &src1, params.k.values(), lambda0);

    let normalizer = trapz_prod(da, &phi1_raw, &n1) + trapz_prod(da, &phi2_raw, &n2);
    if !(normalizer > 0.0 && normalizer.is_finite()) {
        return Err(CoreError::Degenerate(format!("adjoint normalizer {normalizer}")));
    }
    let phi1: Vec<f64> = phi1_raw.iter().map(|v| v / normalizer).collect();
    let phi2: Vec<f64> = phi2_raw.iter().map(|v| v / normalizer).collect();

    let p10 = phi1[0];
    let p20 = phi2[0];
    let b_min = params.b.inf();
    let bt_min = params.btilde.inf();
    let bounds = AdjointBounds {
        phi1_upper: p10 * params.b.sup() / lambda0 + p20,
        phi2_upper: p10 * params.btilde.sup() / lambda0,
        phi1_lower: (b_min > 0.0).then(|| b_min / (lambda0 + params.k.sup()) * p10),
        phi2_lower: (bt_min > 0.0).then(|| bt_min / (lambda0 + params.d.sup()) * p10),
    };

    let (w1, w2) = step_adjoint(params, lambda0);
    let wnorm = da * (w1.iter().zip(&n1).map(|(w, n)| w * n).sum::<f64>() + w2.iter().zip(&n2).map(|(w, n)| w * n).sum::<f64>());
    if !(wnorm > 0.0 && wnorm.is_finite()) {
        return Err(CoreError::Degenerate(format!("step adjoint normalizer {wnorm}")));
    }
    let step_phi1 = AgeFunction::new(grid, w1.iter().map(|w| w / wnorm).collect())?;
    let step_phi2 = AgeFunction::new(grid, w2.iter().map(|w| w / wnorm).collect())?;

    Ok(EigenSolution {
        lambda0,
        n1_0: AgeFunction::new(grid, n1)?,
        n2_0: AgeFunction::new(grid, n2)?,
        phi1_0: AgeFunction::new(grid, phi1)?,
        phi2_0: AgeFunction::new(grid, phi2)?,
        m0_normalizer: normalizer,
        bounds,
        step_phi1,
        step_phi2,
    })
}

/// Left eigenvector of the no-competition step for the eigenvalue `e^{λ da}`,
/// with the phase-1 boundary entry fixed to 1.
///
/// The step shifts every node one cell with decay `D_i`, then solves the
/// trapezoid renewal conditions for the two boundary values. Transposing
/// gives a backward recursion in which the boundary entries enter only
/// through `A = (w1_0 + γ w2_0) / (1 - α - βγ)`.
fn step_adjoint(params: &ModelParams, lambda0: f64) -> (Vec<f64>, Vec<f64>) {
    let da = params.grid().da();
    let (b, bt, k, d) = (params.b.values(), params.btilde.values(), params.k.values(), params.d.values());
    let n = b.len();
    let inv_rho = (-lambda0 * da).exp();
    let weight = |i: usize| if i == n - 1 { 0.5 * da } else { da };
    let alpha = 0.5 * da * b[0];
    let beta = 0.5 * da * bt[0];
    let gamma = 0.5 * da * k[0];
    let den = 1.0 - alpha - beta * gamma;

    let mut v2 = vec![0.0; n];
    for j in (0..n - 1).rev() {
        let decay = (-0.5 * da * (d[j] + d[j + 1])).exp();
        v2[j] = inv_rho * decay * (v2[j + 1] + weight(j + 1) * bt[j + 1]);
    }
    // w2 = A v2 and A = (1 + γ A v2_0) / den
    let a = 1.0 / (den - gamma * v2[0]);
    let w2: Vec<f64> = v2.iter().map(|v| a * v).collect();
    let trans = a * beta + w2[0];
    let mut w1 = vec![0.0; n];
    for j in (0..n - 1).rev() {
        let decay = (-0.5 * da * (k[j] + k[j + 1])).exp();
        w1[j] = inv_rho * decay * (w1[j + 1] + weight(j + 1) * (a * b[j + 1] + trans * k[j + 1]));
    }
    (w1, w2)
}

impl EigenSolution {
    /// Eigen-weighted mass `∫ φ1 n1 + φ2 n2` by the trapezoid rule.
    pub fn adjoint_mass(&self, n1: &AgeFunction, n2: &AgeFunction) -> Result<f64> {
        n1.check_same_grid(&self.phi1_0)?;
        n2.check_same_grid(&self.phi2_0)?;
        let da = n1.grid().da();
        Ok(trapz_prod(da, self.phi1_0.values(), n1.values()) + trapz_prod(da, self.phi2_0.values(), n2.values()))
    }

    /// Weighted mass with the step adjoint, the quantity `m0` of the entropy.
    /// `e^{-λ0 t}` times this is conserved exactly by the linear scheme.
    pub fn step_mass(&self, n1: &AgeFunction, n2: &AgeFunction) -> Result<f64> {
        n1.check_same_grid(&self.step_phi1)?;
        n2.check_same_grid(&self.step_phi2)?;
        let da = n1.grid().da();
        Ok(da * (dot(self.step_phi1.values(), n1.values()) + dot(self.step_phi2.values(), n2.values())))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// General relative entropy
/// `H(t) = ∫ |e^{-λ0 t} n1 - m0 n1⁰| φ1 + |e^{-λ0 t} n2 - m0 n2⁰| φ2`,
/// with `m0` from [`EigenSolution::step_mass`] of the initial data.
///
/// The integral is the step-adjoint pairing, so `H` is non-increasing along
/// the linear scheme exactly, not just up to discretization error.
pub fn gre_entropy(state: &PopulationState, eig: &EigenSolution, m0: f64) -> Result<f64> {
    state.n1.check_same_grid(&eig.n1_0)?;
    state.n2.check_same_grid(&eig.n2_0)?;
    let da = state.n1.grid().da();
    let scale = (-eig.lambda0 * state.t).exp();
    let part = |n: &AgeFunction, e: &AgeFunction, w: &AgeFunction| -> f64 {
        n.values()
            .iter()
            .zip(e.values())
            .zip(w.values())
            .map(|((n, e), w)| (scale * n - m0 * e).abs() * w)
            .sum()
    };
    Ok(da * (part(&state.n1, &eig.n1_0, &eig.step_phi1) + part(&state.n2, &eig.n2_0, &eig.step_phi2)))
}

/// Best decay rate μ with `b ≥ μ φ1/φ1(0)` and `b̃ ≥ μ φ2/φ2(0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreRate {
    pub mu: f64,
    pub hypothesis_met: bool,
}

pub fn gre_rate(params: &ModelParams, eig: &EigenSolution) -> GreRate {
    let ratio_inf = |rate: &AgeFunction, phi: &AgeFunction| -> Option<f64> {
        let p0 = phi.at(0);
        if p0 <= 0.0 {
            return None;
        }
        rate.values()
            .iter()
            .zip(phi.values())
            .filter(|(_, p)| **p > 0.0)
            .map(|(r, p)| r * p0 / p)
            .reduce(f64::min)
    };
    let mu1 = ratio_inf(&params.b, &eig.phi1_0).unwrap_or(0.0);
    let mu = match ratio_inf(&params.btilde, &eig.phi2_0) {
        Some(mu2) => mu1.min(mu2),
        None => mu1,
    };
    GreRate { mu, hypothesis_met: mu > 0.0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{integrate, AgeGrid};
    use crate::params::Competition;

    fn constant(grid: AgeGrid, b: f64, bt: f64, k: f64, d: f64) -> ModelParams {
        ModelParams::constant(grid, b, bt, k, d, Competition::default()).unwrap()
    }

    #[test]
    fn const_a_lambda0_is_one() {
        let g = AgeGrid::new(25.0, 1_000_000).unwrap();
        let l = solve_lambda0(&constant(g, 2.0, 0.0, 1.0, 1.0)).unwrap();
        assert!((l.value - 1.0).abs() < 1e-9, "{}", l.value);
        assert!(!l.degenerate);
    }

    #[test]
    fn const_b_lambda0_is_golden() {
        let g = AgeGrid::new(25.0, 1_000_000).unwrap();
        let l = solve_lambda0(&constant(g, 1.0, 1.0, 1.0, 1.0)).unwrap();
        let exact = (5f64.sqrt() - 1.0) / 2.0;
        assert!((l.value - exact).abs() < 1e-8, "{}", l.value);
    }

    #[test]
    fn degenerate_and_subcritical() {
        // exp(-a) sampled on the grid makes F(0) = 1 only up to quadrature error,
        // so build b to hit it exactly.
        let g = AgeGrid::new(30.0, 3000).unwrap();
        let p = constant(g, 1.0, 0.0, 1.0, 1.0);
        let f0 = GrowthMap::new(&p).unwrap().eval(0.0);
        let exact = p.with_b_scaled(1.0 / f0).unwrap();
        let l = solve_lambda0(&exact).unwrap();
        assert!(l.degenerate);
        assert_eq!(l.value, 0.0);

        let sub = constant(g, 0.5, 0.0, 1.0, 1.0);
        assert!(matches!(solve_lambda0(&sub), Err(CoreError::NoPositiveRoot { .. })));
    }

    #[test]
    fn const_a_eigenfunctions() {
        let g = AgeGrid::new(25.0, 25_000).unwrap();
        let p = constant(g, 2.0, 0.0, 1.0, 1.0);
        let l = solve_lambda0(&p).unwrap().value;
        let e = eigenfunctions(&p, l).unwrap();
        assert!(e.phi2_0.is_zero());
        for (a, v) in g.nodes().iter().zip(e.n1_0.values()) {
            assert!((v - (-(1.0 + l) * a).exp()).abs() < 1e-10);
        }
        // exact lambda0 on this grid differs from 1 by O(da^2)
        assert!((l - 1.0).abs() < 1e-6);
        let (lo, hi) = (e.phi1_0.inf(), e.phi1_0.sup());
        assert!((hi - lo) / hi < 1e-8, "phi1 varies: {lo} .. {hi}");
    }

    #[test]
    fn eigen_invariants_general_rates() {
        let g = AgeGrid::new(30.0, 6000).unwrap();
        let b = AgeFunction::from_fn(g, |a| 1.5 * (1.0 - (-a).exp())).unwrap();
        let bt = AgeFunction::from_fn(g, |a| 0.4 + 0.2 * (a / 3.0).sin().abs()).unwrap();
        let k = AgeFunction::from_fn(g, |a| 0.8 + 0.1 * a.min(5.0)).unwrap();
        let d = AgeFunction::from_fn(g, |a| 1.0 + 0.05 * a).unwrap();
        let p = ModelParams::new(b, bt, k, d, Competition::default()).unwrap();
        let l = solve_lambda0(&p).unwrap().value;
        assert!(l > 0.0);
        let e = eigenfunctions(&p, l).unwrap();
        let da = g.da();
        assert_eq!(e.n1_0.at(0), 1.0);
        let bc = trapz_prod(da, p.b.values(), e.n1_0.values()) + trapz_prod(da, p.btilde.values(), e.n2_0.values());
        assert!((bc - 1.0).abs() < 1e-8);
        assert!((e.n2_0.at(0) - trapz_prod(da, p.k.values(), e.n1_0.values())).abs() < 1e-8);
        assert!((e.adjoint_mass(&e.n1_0, &e.n2_0).unwrap() - 1.0).abs() < 1e-8);
        for f in [&e.n1_0, &e.n2_0, &e.phi1_0, &e.phi2_0] {
            assert!(f.inf() >= 0.0);
        }
        // adjoint boundary relations
        let phi1_0 = e.phi1_0.at(0);
        let phi2_0 = e.phi2_0.at(0);
        assert!(phi2_0 > 0.0 && phi1_0 > 0.0);
        assert!(e.phi1_0.sup() <= e.bounds.phi1_upper * (1.0 + 1e-9));
        assert!(e.phi2_0.sup() <= e.bounds.phi2_upper * (1.0 + 1e-9));
        assert!(e.bounds.phi1_lower.is_none());
        let lower2 = e.bounds.phi2_lower.unwrap();
        assert!(e.phi2_0.inf() >= lower2 * (1.0 - 1e-9));
    }

    #[test]
    fn adjoint_lower_bound_with_positive_births() {
        let g = AgeGrid::new(30.0, 6000).unwrap();
        let b = AgeFunction::from_fn(g, |a| 1.0 + 0.5 * (a).cos().abs()).unwrap();
        let k = AgeFunction::from_fn(g, |a| 1.0 + 0.3 * (a / 2.0).sin().abs()).unwrap();
        let p = ModelParams::new(b, AgeFunction::zeros(g), k, AgeFunction::constant(g, 1.0).unwrap(), Competition::default())
            .unwrap();
        let l = solve_lambda0(&p).unwrap().value;
        let e = eigenfunctions(&p, l).unwrap();
        let lower = e.bounds.phi1_lower.unwrap();
        assert!(e.phi1_0.inf() >= lower * (1.0 - 1e-9));
    }

    #[test]
    fn entropy_vanishes_on_eigen_data() {
        let g = AgeGrid::new(25.0, 2500).unwrap();
        let p = constant(g, 1.0, 1.0, 1.0, 1.0);
        let l = solve_lambda0(&p).unwrap().value;
        let e = eigenfunctions(&p, l).unwrap();
        for scale in [1.0, 2.0] {
            let n1 = e.n1_0.scaled(scale).unwrap();
            let n2 = e.n2_0.scaled(scale).unwrap();
            let m0 = e.step_mass(&n1, &n2).unwrap();
            let st = PopulationState::new(0.0, n1, n2, &p.psi1, &p.psi2).unwrap();
            assert!(gre_entropy(&st, &e, m0).unwrap() < 1e-12);
        }
    }

    #[test]
    fn gre_rate_const_a() {
        let g = AgeGrid::new(25.0, 2500).unwrap();
        let p = constant(g, 2.0, 0.0, 1.0, 1.0);
        let l = solve_lambda0(&p).unwrap().value;
        let e = eigenfunctions(&p, l).unwrap();
        let r = gre_rate(&p, &e);
        assert!(r.hypothesis_met);
        assert!((r.mu - 2.0).abs() < 1e-8);
        let zero_b = ModelParams { b: AgeFunction::zeros(g), ..p.clone() };
        assert!(!gre_rate(&zero_b, &e).hypothesis_met);
    }

    #[test]
    fn eigenfunctions_reject_nonpositive_rate() {
        let g = AgeGrid::new(5.0, 50).unwrap();
        assert!(eigenfunctions(&constant(g, 2.0, 0.0, 1.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn n1_eigen_integrates_to_inverse_rate() {
        let g = AgeGrid::new(25.0, 50_000).unwrap();
        let p = constant(g, 2.0, 0.0, 1.0, 1.0);
        let e = eigenfunctions(&p, 1.0).unwrap();
        assert!((integrate(&e.n1_0) - 0.5).abs() < 1e-7);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn growth_map_strictly_decreasing(b in 0.2f64..3.0, bt in 0.0f64..2.0, k in 0.5f64..2.0,
                                              d in 0.5f64..2.0, l1 in 0.0f64..3.0, dl in 0.01f64..2.0) {
                let g = AgeGrid::new(60.0, 600).unwrap();
                let m = GrowthMap::new(&constant(g, b, bt, k, d)).unwrap();
                prop_assert!(m.eval(l1 + dl) < m.eval(l1));
            }

            #[test]
            fn lambda0_matches_closed_form(b in 0.5f64..3.0, bt in 0.1f64..2.0, k in 0.5f64..2.0, d in 0.5f64..2.0) {
                // u = 1/(k+λ), v = 1/(d+λ): b u + k u bt v = 1
                prop_assume!(b / k + bt / d > 1.05);
                let g = AgeGrid::new(25.0 / k.min(d), 1_000_000).unwrap();
                let l = solve_lambda0(&constant(g, b, bt, k, d)).unwrap().value;
                let f = |x: f64| b / (k + x) + k * bt / ((k + x) * (d + x)) - 1.0;
                let exact = crate::bisect::bisect(f, 0.0, 10.0 * (b + bt + 1.0), 1e-15, 300).root;
                prop_assert!((l - exact).abs() < 1e-8, "{} vs {}", l, exact);
            }
        }
    }
}

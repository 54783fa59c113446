//! Hybrid model: age-structured phase 1, aggregated phase 2 with constant
//! death rate `d` and no phase-2 births.
//!
//! Competition kernels are identically one, so `S1 = N1` and `S2 = N2`.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::{survival, trapz, trapz_exp, trapz_prod, AgeFunction};
use crate::params::{r0_phase1, ModelParams};
use crate::pde_full::{Mode, SolverConfig, Stepper, BLOWUP_FACTOR};
use crate::spectral::solve_lambda0;

/// Checks the structural restrictions of the hybrid model and returns `d`.
pub fn check_hybrid(params: &ModelParams) -> Result<f64> {
    if !params.btilde.is_zero() {
        return Err(CoreError::Config("hybrid model requires btilde = 0".into()));
    }
    if !params.d.is_constant() {
        return Err(CoreError::Config("hybrid model requires a constant phase-2 death rate d".into()));
    }
    for (name, psi) in [("psi1", &params.psi1), ("psi2", &params.psi2)] {
        if !(psi.is_constant() && psi.at(0) == 1.0) {
            return Err(CoreError::Config(format!("hybrid model requires {name} = 1")));
        }
    }
    Ok(params.d.at(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridState {
    pub t: f64,
    pub n1: AgeFunction,
    pub n1_total: f64,
    pub n2_total: f64,
}

/// Per-step aggregates. `lambda_t` and `kappa_t` are NaN when `N1 = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridRow {
    pub t: f64,
    pub n1_total: f64,
    pub n2_total: f64,
    pub n1_boundary: f64,
    /// `∫(b - k) n1 / N1`
    pub lambda_t: f64,
    /// `∫ k n1 / N1`
    pub kappa_t: f64,
}

impl HybridRow {
    fn of(params: &ModelParams, s: &HybridState) -> Self {
        let da = params.grid().da();
        let births = trapz_prod(da, params.b.values(), s.n1.values());
        let trans = trapz_prod(da, params.k.values(), s.n1.values());
        let (lambda_t, kappa_t) =
            if s.n1_total > 0.0 { ((births - trans) / s.n1_total, trans / s.n1_total) } else { (f64::NAN, f64::NAN) };
        Self { t: s.t, n1_total: s.n1_total, n2_total: s.n2_total, n1_boundary: s.n1.at(0), lambda_t, kappa_t }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<HybridState>,
    pub summary: Vec<HybridRow>,
}

impl HybridTrajectory {
    pub fn last(&self) -> &HybridState {
        self.states.last().expect("trajectory always holds the initial state")
    }
}

/// Runs the hybrid scheme: the phase-1 transport step of the full model with
/// exit pressure `c1_tot N1 + c2_tot N2`, and explicit Euler for `N2`.
pub fn simulate_hybrid(
    params: &ModelParams,
    init_n1: &AgeFunction,
    init_n2: f64,
    cfg: &SolverConfig,
) -> Result<HybridTrajectory> {
    let d = check_hybrid(params)?;
    if cfg.mode != Mode::Nonlinear {
        return Err(CoreError::Config("hybrid model has no linear mode".into()));
    }
    if cfg.dt != params.grid().da() {
        return Err(CoreError::Config(format!("dt = {} must equal da = {}", cfg.dt, params.grid().da())));
    }
    if cfg.record_every == 0 || !(cfg.t_end >= 0.0 && cfg.t_end.is_finite()) {
        return Err(CoreError::Config("t_end must be finite and >= 0, record_every >= 1".into()));
    }
    init_n1.check_same_grid(&params.b)?;
    if !(init_n2 >= 0.0 && init_n2.is_finite()) {
        return Err(CoreError::Domain(format!("initial N2 = {init_n2} must be >= 0")));
    }
    let da = cfg.dt;
    let comp = params.comp;
    let stepper = Stepper::new(params);
    let mut state =
        HybridState { t: 0.0, n1_total: trapz(da, init_n1.values()), n1: init_n1.clone(), n2_total: init_n2 };
    let limit = BLOWUP_FACTOR * (state.n1_total + state.n2_total);
    let n = cfg.n_steps();
    let mut traj =
        HybridTrajectory { times: vec![0.0], states: vec![state.clone()], summary: vec![HybridRow::of(params, &state)] };
    for step in 1..=n {
        let (n1t, n2t) = (state.n1_total, state.n2_total);
        let exit2 = d + comp.ctilde1 * n1t + comp.ctilde2 * n2t;
        if da * exit2 >= 1.0 {
            return Err(CoreError::Diverged {
                t: state.t,
                reason: format!("explicit N2 update unstable: dt*(d + ctilde1 N1 + ctilde2 N2) = {}", da * exit2),
            });
        }
        let inflow: f64 = {
            let k = params.k.values();
            let shift = comp.eta1 * n1t + comp.eta2 * n2t;
            let v: Vec<f64> = k.iter().zip(state.n1.values()).map(|(k, x)| (k + shift) * x).collect();
            trapz(da, &v)
        };
        let n1 = stepper.step_phase1(state.n1.values(), comp.c_tot(n1t, n2t))?;
        let n2 = n2t + da * (inflow - exit2 * n2t);
        let n1 = AgeFunction::new(*params.grid(), n1).map_err(|e| CoreError::Diverged { t: state.t, reason: e.to_string() })?;
        state = HybridState { t: da * step as f64, n1_total: trapz(da, n1.values()), n1, n2_total: n2 };
        let mass = state.n1_total + state.n2_total;
        if !mass.is_finite() || (limit > 0.0 && mass > limit) {
            return Err(CoreError::Diverged { t: state.t, reason: format!("mass {mass:e} exceeded the blow-up guard") });
        }
        traj.summary.push(HybridRow::of(params, &state));
        if step % cfg.record_every == 0 || step == n {
            traj.times.push(state.t);
            traj.states.push(state.clone());
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseTag {
    /// `A > 0`: two positive roots, the smaller one is the state.
    APositiveTwoRoots,
    /// `A <= 0`: exactly one positive root.
    ANonpositiveOneRoot,
    /// `c2_tot = 0`: the quadratic in `N2` has a single positive root.
    C2totZero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridSteadyState {
    pub lambda0: f64,
    /// `I = ∫ e^{-∫k} e^{-λ0 a}`
    pub i_integral: f64,
    /// `∫ k n1* / ∫ n1*`
    pub kappa0: f64,
    /// `1/I - λ0`, equal to `kappa0` up to quadrature error.
    pub kappa0_closed: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub delta: f64,
    pub d: f64,
    pub case_tag: CaseTag,
    /// Real positive roots of `A Y^2 + B Y + C`.
    pub positive_roots: Vec<f64>,
    /// Roots that also give `N1 > 0`.
    pub admissible: usize,
    pub n1s: f64,
    pub n2s: f64,
    pub n1_profile: AgeFunction,
}

/// Real roots of `a y^2 + b y + c`, ascending.
fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a == 0.0 {
        return if b != 0.0 { vec![-c / b] } else { vec![] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return vec![];
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let mut r = vec![q / a];
    if q != 0.0 {
        r.push(c / q);
    }
    r.sort_by(|x, y| x.total_cmp(y));
    r
}

/// Positive steady state `(N1*, N2*)` and its profile.
pub fn steady_state_hybrid(params: &ModelParams) -> Result<HybridSteadyState> {
    let d = check_hybrid(params)?;
    let comp = params.comp;
    let (c1, c2) = (comp.c1_tot(), comp.c2_tot());
    if c1 <= 0.0 {
        return Err(CoreError::Hypothesis("hybrid steady state needs c1_tot > 0".into()));
    }
    let r0 = r0_phase1(params)?;
    if r0 <= 1.0 {
        return Err(CoreError::NoPositiveSteadyState { r0 });
    }
    let lambda0 = solve_lambda0(params)?.value;
    let da = params.grid().da();
    let sk = survival(&params.k)?;
    let i_integral = trapz_exp(da, &sk, lambda0);
    let shape: Vec<f64> = sk.iter().zip(params.grid().nodes()).map(|(s, a)| s * (-lambda0 * a).exp()).collect();
    let kappa0 = trapz_prod(da, params.k.values(), &shape) / trapz(da, &shape);
    let kappa0_closed = 1.0 / i_integral - lambda0;

    let (e1, e2, ct1, ct2) = (comp.eta1, comp.eta2, comp.ctilde1, comp.ctilde2);
    let r = c2 / c1;
    let a = e1 * r * r + (ct1 - e2) * r - ct2;
    let b = -kappa0 * r - 2.0 * lambda0 * e1 * c2 / (c1 * c1) - (ct1 - e2) * lambda0 / c1 - d;
    let c = (lambda0 / c1) * (kappa0 + e1 * lambda0 / c1);
    let delta = b * b - 4.0 * a * c;

    let case_tag = if c2 == 0.0 {
        CaseTag::C2totZero
    } else if a > 0.0 {
        CaseTag::APositiveTwoRoots
    } else {
        CaseTag::ANonpositiveOneRoot
    };
    let positive_roots: Vec<f64> = quadratic_roots(a, b, c).into_iter().filter(|y| *y > 0.0).collect();
    let n1_of = |y: f64| (lambda0 - c2 * y) / c1;
    let admissible: Vec<f64> = positive_roots.iter().copied().filter(|y| n1_of(*y) > 0.0).collect();
    let chosen = match case_tag {
        CaseTag::APositiveTwoRoots => positive_roots.first().copied(),
        _ if positive_roots.len() == 1 => Some(positive_roots[0]),
        _ => None,
    };
    let n2s = match (chosen, admissible.len()) {
        (Some(y), 1) if admissible[0] == y => y,
        (_, 0) => return Err(CoreError::NoSteadyState(format!("no admissible root among {positive_roots:?}"))),
        _ => {
            return Err(CoreError::AmbiguousSteadyState {
                candidates: admissible.iter().map(|y| (n1_of(*y), *y)).collect(),
            })
        }
    };
    let n1s = n1_of(n2s);
    let n1_profile = AgeFunction::new(*params.grid(), shape.iter().map(|v| v * n1s / i_integral).collect())?;
    Ok(HybridSteadyState {
        lambda0,
        i_integral,
        kappa0,
        kappa0_closed,
        a,
        b,
        c,
        delta,
        d,
        case_tag,
        positive_roots,
        admissible: admissible.len(),
        n1s,
        n2s,
        n1_profile,
    })
}

/// Largest absolute residual of the two algebraic identities linking
/// `A, B, C, Δ` (needs `c2_tot > 0`).
pub fn discriminant_identity(params: &ModelParams, ss: &HybridSteadyState) -> Result<f64> {
    let comp = params.comp;
    let c2 = comp.c2_tot();
    if c2 <= 0.0 {
        return Err(CoreError::Domain("discriminant identity needs c2_tot > 0".into()));
    }
    let (l0, ct2, d) = (ss.lambda0, comp.ctilde2, ss.d);
    let (a, b, c) = (ss.a, ss.b, ss.c);
    let r_b = (c2 * b - (-l0 * a - l0 * ct2 - c2 * c2 / l0 * c - c2 * d)).abs();
    let sq = -(l0 / c2) * a - (l0 / c2) * ct2 + (c2 / l0) * c - d;
    let r_delta = (ss.delta - (sq * sq + 4.0 * (c2 / l0) * c * ((l0 / c2) * ct2 + d))).abs();
    Ok(r_b.max(r_delta))
}

/// Magnitude of the terms entering [`discriminant_identity`], for relative tolerances.
pub fn discriminant_scale(params: &ModelParams, ss: &HybridSteadyState) -> f64 {
    let c2 = params.comp.c2_tot();
    let l0 = ss.lambda0;
    let terms = [
        c2 * ss.b,
        l0 * ss.a,
        l0 * params.comp.ctilde2,
        c2 * c2 / l0 * ss.c,
        c2 * ss.d,
        ss.b * ss.b,
        (ss.a * ss.c).abs(),
    ];
    1.0 + terms.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub b2_direct: f64,
    pub b2_identity: f64,
    pub b3_direct: f64,
    pub b3_identity: f64,
    /// `[1, linear, constant]` of the characteristic quadratic.
    pub coefficients: [f64; 3],
    /// Constant term before the steady-state identities are applied.
    pub constant_unsimplified: f64,
    pub constant_gap: f64,
    /// Largest relative mismatch between the 3x3 determinant and the quadratic over sample λ.
    pub determinant_gap: f64,
    pub stable: bool,
}

fn det3(m: [[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Linear stability of the positive hybrid steady state.
pub fn stability_verdict(params: &ModelParams, ss: &HybridSteadyState) -> Result<StabilityReport> {
    let comp = params.comp;
    let (c1, c2) = (comp.c1_tot(), comp.c2_tot());
    let (e1, e2, ct1, ct2) = (comp.eta1, comp.eta2, comp.ctilde1, comp.ctilde2);
    let (n1, n2, l0, d, k0) = (ss.n1s, ss.n2s, ss.lambda0, ss.d, ss.kappa0);
    let b2_direct = ct1 * n1 + 2.0 * ct2 * n2 + d - e2 * n1;
    let b2_identity = (k0 * n1 + e1 * n1 * n1 + ct2 * n2 * n2) / n2;
    let b3_direct = ct1 * n2 - 2.0 * e1 * n1 - e2 * n2;
    let b3_identity = (k0 * n1 - e1 * n1 * n1 - d * n2 - ct2 * n2 * n2) / n1;
    let b2 = b2_direct;
    let b3 = b3_direct;
    let linear = b2 + c1 * n1;
    let constant = b2 * c1 * n1 + c2 * (ct2 * n2 * n2 + d * n2 + e1 * n1 * n1);
    let n0 = ss.n1_profile.at(0);
    let constant_unsimplified = b2 * c1 * n1 - b3 * c2 * n1 + c2 * n0 - l0 * c2 * n1;

    let da = params.grid().da();
    let sk = survival(&params.k)?;
    let mut determinant_gap = 0.0f64;
    for lam in [0.1, 0.5, 1.0, 2.0, 5.0].map(|x| x * (1.0 + l0)) {
        let g = trapz_exp(da, &sk, lam + l0);
        let a2 = c2 * n0 / lam;
        let a3 = c1 * n0 / lam;
        let det = det3([
            [1.0, a2, a3],
            [-1.0 + (l0 + lam) * g, b2 + lam + (l0 + lam) * g * a2 - l0 * n1 * c2 / lam, b3 + (l0 + lam) * g * a3 - l0 * n1 * c1 / lam],
            [-g, c2 * n1 / lam - g * a2, 1.0 + c1 * n1 / lam - g * a3],
        ]);
        let quad = (lam * lam + linear * lam + constant_unsimplified) / lam;
        determinant_gap = determinant_gap.max((det - quad).abs() / (1.0 + quad.abs()));
    }
    Ok(StabilityReport {
        b2_direct,
        b2_identity,
        b3_direct,
        b3_identity,
        coefficients: [1.0, linear, constant],
        constant_unsimplified,
        constant_gap: (constant_unsimplified - constant).abs(),
        determinant_gap,
        stable: linear > 0.0 && constant > 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrivialStability {
    /// `∫ b e^{-∫k}`
    pub r0: f64,
    pub stable: bool,
}

/// The zero state is linearly stable iff `∫ b e^{-∫k} < 1`.
pub fn trivial_stability(params: &ModelParams) -> Result<TrivialStability> {
    check_hybrid(params)?;
    let r0 = r0_phase1(params)?;
    Ok(TrivialStability { r0, stable: r0 < 1.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sensitivity {
    /// `d/dλ0 [N2* / (N1* + N2*)]` from the closed form.
    pub analytic: f64,
    /// Richardson-extrapolated central difference under rescaling of `b`.
    pub finite_difference: f64,
    pub step: f64,
    /// `∫ a k e^{-∫k} e^{-λ0 a} / (λ0 I^2)`
    pub r: f64,
    /// `1 / (λ0 I)`, an upper bound for `r`.
    pub inverse_lambda_i: f64,
    pub relative_gap: f64,
}

fn phase2_ratio(params: &ModelParams) -> Result<f64> {
    let ss = steady_state_hybrid(params)?;
    Ok(ss.n2s / (ss.n1s + ss.n2s))
}

/// Copy of `params` with `b` rescaled so that the growth rate becomes `lam`.
fn with_growth_rate(params: &ModelParams, lam: f64) -> Result<ModelParams> {
    let sk = survival(&params.k)?;
    let f = trapz_exp(params.grid().da(), &params.b.mul(&AgeFunction::new(*params.grid(), sk)?)?.into_values(), lam);
    params.with_b_scaled(1.0 / f)
}

/// Sensitivity of the phase-2 share of the steady population to `λ0`.
pub fn smurf_ratio_sensitivity(params: &ModelParams, ss: &HybridSteadyState) -> Result<Sensitivity> {
    let c1 = params.comp.c1_tot();
    let c2 = params.comp.c2_tot();
    let (l0, a, b, d, i) = (ss.lambda0, ss.a, ss.b, ss.d, ss.i_integral);
    if a.abs() <= 1e-12 * (1.0 + b.abs()) {
        return Err(CoreError::Degenerate(format!("leading coefficient A = {a:e} is numerically zero")));
    }
    let da = params.grid().da();
    let sk = survival(&params.k)?;
    let weighted: Vec<f64> = params.grid().nodes().iter().zip(params.k.values()).zip(&sk).map(|((a, k), s)| a * k * s).collect();
    let r = trapz_exp(da, &weighted, l0) / (l0 * i * i);
    let sq = ss.delta.sqrt();
    let total = ss.n1s + ss.n2s;
    let bracket = (d / l0 + r * c2 / c1) * (-1.0 - b / sq) / (2.0 * a) - l0 * r / (c1 * sq);
    let analytic = l0 / (c1 * total * total) * bracket;

    let h = (1e-4f64).min(l0 / 4.0);
    let central = |h: f64| -> Result<f64> {
        let up = phase2_ratio(&with_growth_rate(params, l0 + h)?)?;
        let down = phase2_ratio(&with_growth_rate(params, l0 - h)?)?;
        Ok((up - down) / (2.0 * h))
    };
    let finite_difference = (4.0 * central(h / 2.0)? - central(h)?) / 3.0;
    let relative_gap = (analytic - finite_difference).abs() / finite_difference.abs().max(1e-12);
    Ok(Sensitivity { analytic, finite_difference, step: h, r, inverse_lambda_i: 1.0 / (l0 * i), relative_gap })
}

/// `N* = λ0 / c1_tot` of the one-phase model, 0 when the population dies out.
pub fn one_phase_equilibrium(params: &ModelParams) -> Result<f64> {
    let c1 = params.comp.c1_tot();
    if c1 <= 0.0 {
        return Err(CoreError::Hypothesis("one-phase equilibrium needs c1_tot > 0".into()));
    }
    if r0_phase1(params)? <= 1.0 {
        return Ok(0.0);
    }
    Ok(solve_lambda0(params)?.value / c1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub n_star: f64,
    pub n1s: f64,
    pub n2s: f64,
    /// Steady state with `eta1 = eta2 = 0` and the same `c1_tot`, `c2_tot`.
    pub n1ss: f64,
    pub n2ss: f64,
    /// `N1* + N2* >= N*`
    pub sum_ge: bool,
    /// `sum_ge` is only a theorem when `c2_tot <= c1_tot`.
    pub sum_ge_guaranteed: bool,
    /// `N1** >= N1*`
    pub n1_order: bool,
    /// `N2** <= N2*`
    pub n2_order: bool,
    /// Whether `(N1** + N2** <= N1* + N2*) <=> (c2_tot <= c1_tot)` holds; `None` when `eta1 = 0`.
    pub total_order_iff: Option<bool>,
    /// `|N1* + N2* - (λ0/c1_tot + (1 - c2_tot/c1_tot) N2*)|`
    pub identity_gap: f64,
}

pub fn one_phase_and_comparisons(params: &ModelParams) -> Result<ComparisonReport> {
    let comp = params.comp;
    let (c1, c2) = (comp.c1_tot(), comp.c2_tot());
    let ss = steady_state_hybrid(params)?;
    let plain = steady_state_hybrid(&params.with_comp(comp.without_eta())?)?;
    let n_star = ss.lambda0 / c1;
    let total = ss.n1s + ss.n2s;
    let total_ss = plain.n1s + plain.n2s;
    let tol = 1e-10 * (1.0 + total.max(total_ss));
    let total_order_iff = (comp.eta1 > 0.0).then(|| (total_ss <= total + tol) == (c2 <= c1));
    Ok(ComparisonReport {
        n_star,
        n1s: ss.n1s,
        n2s: ss.n2s,
        n1ss: plain.n1s,
        n2ss: plain.n2s,
        sum_ge: total >= n_star - tol,
        sum_ge_guaranteed: c2 <= c1,
        n1_order: plain.n1s >= ss.n1s - tol,
        n2_order: plain.n2s <= ss.n2s + tol,
        total_order_iff,
        identity_gap: (total - (ss.lambda0 / c1 + (1.0 - c2 / c1) * ss.n2s)).abs(),
    })
}

/// Conditions under which the hybrid state attracts bounded trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionFlags {
    /// `d >= eta1 N1_bar`, as stated for the convergence theorem.
    pub death_dominates: bool,
    /// `d > eta2 N1_bar`, what the `N2` upper bound actually uses.
    pub n2_bound_valid: bool,
    pub ratio: bool,
    pub death_balance: bool,
    /// `c2_tot N2_bar < λ0`
    pub margin: bool,
}

impl AssumptionFlags {
    pub fn all(&self) -> bool {
        self.death_dominates && self.n2_bound_valid && self.ratio && self.death_balance && self.margin
    }
}

/// A-priori bounds on the hybrid trajectory, before auditing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundQuantities {
    pub n1_bar: f64,
    /// Infinite when `d <= eta2 N1_bar`.
    pub n2_bar: f64,
    pub k_lower: f64,
    /// `λ0 / (c2_tot N2_bar)`, infinite when `c2_tot N2_bar = 0`.
    pub m_sup: f64,
    pub m_margin: Option<f64>,
    pub n1_under: Option<f64>,
    pub flags: AssumptionFlags,
}

pub fn bound_quantities(params: &ModelParams, ss: &HybridSteadyState, n1_init: f64, n2_init: f64) -> Result<BoundQuantities> {
    let comp = params.comp;
    let (c1, c2) = (comp.c1_tot(), comp.c2_tot());
    let (e1, e2, ct1, ct2) = (comp.eta1, comp.eta2, comp.ctilde1, comp.ctilde2);
    let (l0, d) = (ss.lambda0, ss.d);
    let k_lower = params.k.inf();
    if !(k_lower > 0.0) {
        return Err(CoreError::Hypothesis("bounds need k bounded below by a positive constant".into()));
    }
    let (b_sup, k_sup) = (params.b.sup(), params.k.sup());
    let n1_bar = n1_init.max((b_sup - k_lower) / c1);
    let n2_bar = if d > e2 * n1_bar {
        n2_init.max((k_sup + e1 * n1_bar) * n1_bar / (d - e2 * n1_bar))
    } else {
        f64::INFINITY
    };
    let pressure = c2 * n2_bar;
    let m_sup = if pressure == 0.0 { f64::INFINITY } else { l0 / pressure };
    let margin = m_sup > 1.0;
    let m_margin = margin.then(|| if m_sup.is_finite() { (1.0 + m_sup) / 2.0 } else { 2.0 }.min(2.0));
    let n1_under = m_margin.map(|m| {
        let growth = b_sup - k_lower;
        let first = if growth > 0.0 { l0 / (m * growth) } else { f64::INFINITY };
        first.min((l0 / m - pressure) / c1)
    });

    let (ratio, death_balance) = if c2 == 0.0 {
        (true, true)
    } else {
        let ratio = match n1_under {
            Some(lo) if ct1 > 0.0 && lo > 0.0 => {
                c1 / c2 >= (k_sup + ct1 * n2_bar + e2 * ss.n2s + e1 * ss.n1s) / (2.0 * ct1 * lo) + e1 / (2.0 * ct1)
            }
            _ => false,
        };
        let n2_under = 0.0;
        let rhs = -0.5
            * ((k_sup + 2.0 * e2 + e1) * n1_bar + ct1 * n2_bar - 2.0 * ct2 * n2_under + (e2 - 2.0 * ct2) * ss.n2s
                + (e1 - ct1) * ss.n1s);
        (ratio, d >= rhs)
    };
    let flags = AssumptionFlags {
        death_dominates: d >= e1 * n1_bar,
        n2_bound_valid: n2_bar.is_finite(),
        ratio,
        death_balance,
        margin,
    };
    Ok(BoundQuantities { n1_bar, n2_bar, k_lower, m_sup, m_margin, n1_under, flags })
}

/// First time from which `lambda_t >= λ0 / M` holds for five consecutive rows.
pub fn entry_time(rows: &[HybridRow], lambda0: f64, m: f64) -> Option<f64> {
    const RUN: usize = 5;
    let level = lambda0 / m;
    let mut run = 0;
    for (i, row) in rows.iter().enumerate() {
        if row.lambda_t >= level {
            run += 1;
            if run == RUN {
                return Some(rows[i + 1 - RUN].t);
            }
        } else {
            run = 0;
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub bounds: BoundQuantities,
    pub t0: Option<f64>,
    pub sup_n1: f64,
    pub sup_n2: f64,
    pub inf_n1_after_t0: Option<f64>,
    pub n1_upper_ok: bool,
    pub n2_upper_ok: bool,
    pub n1_lower_ok: Option<bool>,
}

/// Relative slack allowed when auditing the bounds on the discrete trajectory.
pub const BOUND_AUDIT_TOL: f64 = 1e-9;

pub fn bounds_and_assumptions(params: &ModelParams, traj: &HybridTrajectory) -> Result<BoundsReport> {
    let ss = steady_state_hybrid(params)?;
    let first = &traj.summary[0];
    let bounds = bound_quantities(params, &ss, first.n1_total, first.n2_total)?;
    let rows = &traj.summary;
    let sup_n1 = rows.iter().map(|r| r.n1_total).fold(0.0, f64::max);
    let sup_n2 = rows.iter().map(|r| r.n2_total).fold(0.0, f64::max);
    let t0 = bounds.m_margin.and_then(|m| entry_time(rows, ss.lambda0, m));
    let inf_n1_after_t0 =
        t0.map(|t0| rows.iter().filter(|r| r.t >= t0).map(|r| r.n1_total).fold(f64::INFINITY, f64::min));
    let n1_lower_ok = match (inf_n1_after_t0, bounds.n1_under) {
        (Some(inf), Some(lo)) => Some(inf >= lo * (1.0 - BOUND_AUDIT_TOL)),
        _ => None,
    };
    Ok(BoundsReport {
        n1_upper_ok: sup_n1 <= bounds.n1_bar * (1.0 + BOUND_AUDIT_TOL),
        n2_upper_ok: sup_n2 <= bounds.n2_bar * (1.0 + BOUND_AUDIT_TOL),
        bounds,
        t0,
        sup_n1,
        sup_n2,
        inf_n1_after_t0,
        n1_lower_ok,
    })
}

/// Profile gaps below this are round-off.
pub const PROFILE_GAP_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub t: f64,
    pub n1_total: f64,
    pub n2_total: f64,
    pub lambda_t: f64,
    pub kappa_t: f64,
    pub lyapunov: f64,
    pub lyap_a: f64,
    pub lyap_b: f64,
    pub lyap_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceDiagnostics {
    pub records: Vec<ConvergenceRecord>,
    /// `(t, sup |n1/N1 - n1*/N1*|)` at every stored state.
    pub profile_gaps: Vec<(f64, f64)>,
    /// Ages beyond this are ignored by the profile gap (steady profile below 1e-6 of its peak).
    pub a_window: f64,
    /// Weight `c2_tot / (2 ctilde1)` of the `N2` term in the Lyapunov function.
    pub weight: f64,
    /// Set when `ctilde1 = 0` and `c2_tot > 0`, leaving the weight undefined (taken as 0).
    pub weight_degenerate: bool,
    pub t0: Option<f64>,
    /// `V(t+dt) <= V(t) + 1e-8 V(t0)` for every step after `max(t0, dt)`.
    pub lyapunov_monotone: Option<bool>,
    /// `A + C/2 < 0` and `B + C/2 < 0` (the latter only with a positive weight) after `t0`.
    pub lyapunov_coefficients_negative: Option<bool>,
    /// Estimate of the limit of `e^{-λ0 t} N1(t) exp(∫ c_tot) / N1*` at the final time.
    pub renewal_constant: f64,
}

pub fn convergence_diagnostics(
    params: &ModelParams,
    traj: &HybridTrajectory,
    ss: &HybridSteadyState,
) -> Result<ConvergenceDiagnostics> {
    let comp = params.comp;
    let (c1, c2, ct1, ct2, e1, e2) = (comp.c1_tot(), comp.c2_tot(), comp.ctilde1, comp.ctilde2, comp.eta1, comp.eta2);
    let (l0, d, n1s, n2s) = (ss.lambda0, ss.d, ss.n1s, ss.n2s);
    let weight_degenerate = c2 > 0.0 && ct1 == 0.0;
    let ratio = if c2 == 0.0 || weight_degenerate { 0.0 } else { c2 / ct1 };
    let weight = ratio / 2.0;

    let records: Vec<ConvergenceRecord> = traj
        .summary
        .iter()
        .map(|r| {
            let (x, y) = (r.n1_total, r.n2_total);
            ConvergenceRecord {
                t: r.t,
                n1_total: x,
                n2_total: y,
                lambda_t: r.lambda_t,
                kappa_t: r.kappa_t,
                lyapunov: 0.5 * (x - n1s).powi(2) + weight * (y - n2s).powi(2),
                lyap_a: l0 - c1 * (x + n1s) - c2 * y,
                lyap_b: -ratio * d - c2 * n1s - ratio * ct2 * (y + n2s) + ratio * e2 * x,
                lyap_c: c2 * n1s + ratio * (r.kappa_t + ct1 * y + e2 * n2s + e1 * (x + n1s)),
            }
        })
        .collect();

    let profile = ss.n1_profile.values();
    let peak = profile.iter().copied().fold(0.0, f64::max);
    let win = profile.iter().position(|v| *v < 1e-6 * peak).unwrap_or(profile.len() - 1);
    let profile_gaps = traj
        .states
        .iter()
        .map(|s| {
            let gap = if s.n1_total > 0.0 {
                (0..=win).map(|i| (s.n1.at(i) / s.n1_total - profile[i] / n1s).abs()).fold(0.0, f64::max)
            } else {
                f64::INFINITY
            };
            (s.t, gap)
        })
        .collect();

    let dt = params.grid().da();
    let bounds = bound_quantities(params, ss, records[0].n1_total, records[0].n2_total)?;
    let t0 = bounds.m_margin.and_then(|m| entry_time(&traj.summary, l0, m));
    let (lyapunov_monotone, lyapunov_coefficients_negative) = match t0 {
        Some(t0) if !weight_degenerate && records.len() > 2 => {
            let v0 = records.iter().find(|r| r.t >= t0).map_or(0.0, |r| r.lyapunov);
            let slack = 1e-8 * v0;
            // the first step carries the initial-layer jump of incompatible boundary data
            let start = t0.max(dt);
            let after: Vec<&ConvergenceRecord> = records.iter().filter(|r| r.t >= start).collect();
            let mono = after.windows(2).all(|w| w[1].lyapunov <= w[0].lyapunov + slack);
            let neg = after
                .iter()
                .all(|r| r.lyap_a + r.lyap_c / 2.0 < 0.0 && (weight == 0.0 || r.lyap_b + r.lyap_c / 2.0 < 0.0));
            (Some(mono), Some(neg))
        }
        _ => (None, None),
    };

    // the scheme applies the exit pressure of the step's starting state
    let exposure: f64 = traj.summary[..traj.summary.len() - 1].iter().map(|r| dt * comp.c_tot(r.n1_total, r.n2_total)).sum();
    let last = traj.summary.last().expect("summary holds the initial row");
    let renewal_constant = (exposure - l0 * last.t).exp() * last.n1_total / n1s;

    Ok(ConvergenceDiagnostics {
        records,
        profile_gaps,
        a_window: params.grid().node(win),
        weight,
        weight_degenerate,
        t0,
        lyapunov_monotone,
        lyapunov_coefficients_negative,
        renewal_constant,
    })
}

//! Time stepping of the full two-phase system, the prescribed-environment
//! linear system, the steady-state residual and the bounds on `S1 + S2`.

use serde::{Deserialize, Serialize};

use crate::bisect::bisect;
use crate::error::{CoreError, Result};
use crate::grid::{cumulative_hazard, trapz, AgeFunction};
use crate::params::ModelParams;
use crate::spectral::{eigenfunctions, solve_lambda0};
use crate::state::PopulationState;

/// Abort threshold on total mass relative to the initial mass.
pub const BLOWUP_FACTOR: f64 = 1e12;

/// Prescribed `(S1, S2)` as a function of time, linearly interpolated and
/// held constant outside the table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvTable {
    times: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl EnvTable {
    pub fn new(rows: &[(f64, f64, f64)]) -> Result<Self> {
        if rows.is_empty() {
            return Err(CoreError::Config("environment table is empty".into()));
        }
        if rows.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(CoreError::Config("environment table times must be strictly increasing".into()));
        }
        if rows.iter().any(|r| !(r.1 >= 0.0 && r.2 >= 0.0 && r.1.is_finite() && r.2.is_finite())) {
            return Err(CoreError::Domain("prescribed S1, S2 must be finite and >= 0".into()));
        }
        Ok(Self {
            times: rows.iter().map(|r| r.0).collect(),
            s1: rows.iter().map(|r| r.1).collect(),
            s2: rows.iter().map(|r| r.2).collect(),
        })
    }

    pub fn constant(s1: f64, s2: f64) -> Result<Self> {
        Self::new(&[(0.0, s1, s2)])
    }

    pub fn at(&self, t: f64) -> (f64, f64) {
        let n = self.times.len();
        if t <= self.times[0] {
            return (self.s1[0], self.s2[0]);
        }
        if t >= self.times[n - 1] {
            return (self.s1[n - 1], self.s2[n - 1]);
        }
        let j = self.times.partition_point(|&x| x <= t);
        let (t0, t1) = (self.times[j - 1], self.times[j]);
        let w = (t - t0) / (t1 - t0);
        (
            self.s1[j - 1] + w * (self.s1[j] - self.s1[j - 1]),
            self.s2[j - 1] + w * (self.s2[j] - self.s2[j - 1]),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Mode {
    Nonlinear,
    /// `S1, S2` read from the table instead of the state.
    Linear(EnvTable),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Store a full state every `record_every` steps (plus the first and last).
    pub record_every: usize,
    pub mode: Mode,
}

impl SolverConfig {
    /// Configuration with `dt` locked to the grid step.
    pub fn for_params(params: &ModelParams, t_end: f64, record_every: usize, mode: Mode) -> Self {
        Self { dt: params.grid().da(), t_end, record_every: record_every.max(1), mode }
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round().max(0.0) as usize
    }

    fn check(&self, params: &ModelParams) -> Result<()> {
        if self.dt != params.grid().da() {
            return Err(CoreError::Config(format!("dt = {} must equal da = {}", self.dt, params.grid().da())));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(CoreError::Config(format!("t_end = {} must be finite and >= 0", self.t_end)));
        }
        if self.record_every == 0 {
            return Err(CoreError::Config("record_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// Aggregates after every step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub t: f64,
    pub n1_total: f64,
    pub n2_total: f64,
    pub s1: f64,
    pub s2: f64,
    pub n1_boundary: f64,
    pub n2_boundary: f64,
}

impl SummaryRow {
    pub fn of(state: &PopulationState) -> Self {
        Self {
            t: state.t,
            n1_total: state.n1_total,
            n2_total: state.n2_total,
            s1: state.s1,
            s2: state.s2,
            n1_boundary: state.n1.at(0),
            n2_boundary: state.n2.at(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<PopulationState>,
    pub summary: Vec<SummaryRow>,
}

impl Trajectory {
    pub fn last(&self) -> &PopulationState {
        self.states.last().expect("trajectory always holds the initial state")
    }
}

/// Per-cell survival factors over one step, `exp(-dt * mean rate on the cell)`.
fn cell_decay(rate: &AgeFunction, dt: f64) -> Vec<f64> {
    let v = rate.values();
    let mut out = vec![1.0; v.len()];
    for i in 1..v.len() {
        out[i] = (-0.5 * dt * (v[i - 1] + v[i])).exp();
    }
    out
}

/// Precomputed data for repeated steps on a fixed parameter set.
#[derive(Debug, Clone)]
pub(crate) struct Stepper<'a> {
    pub(crate) params: &'a ModelParams,
    dt: f64,
    decay_k: Vec<f64>,
    decay_d: Vec<f64>,
}

/// Result of shifting and decaying the interior nodes, before the boundary fill.
pub(crate) struct Shifted {
    pub n1: Vec<f64>,
    pub n2: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(params: &'a ModelParams) -> Self {
        let dt = params.grid().da();
        Self { params, dt, decay_k: cell_decay(&params.k, dt), decay_d: cell_decay(&params.d, dt) }
    }

    /// Exact shift by one cell with exponential decay; node 0 left at 0.
    pub(crate) fn shift(&self, n1: &[f64], n2: &[f64], c_tot: f64, c_tilde: f64) -> Shifted {
        let e1 = (-self.dt * c_tot).exp();
        let e2 = (-self.dt * c_tilde).exp();
        let len = n1.len();
        let mut m1 = vec![0.0; len];
        let mut m2 = vec![0.0; len];
        for i in 1..len {
            m1[i] = n1[i - 1] * self.decay_k[i] * e1;
            m2[i] = n2[i - 1] * self.decay_d[i] * e2;
        }
        Shifted { n1: m1, n2: m2 }
    }

    /// Trapezoid weights applied to nodes `1..`, times `dt`.
    fn interior(&self, f: impl Fn(usize) -> f64, len: usize) -> f64 {
        let mut s = 0.0;
        for i in 1..len - 1 {
            s += f(i);
        }
        self.dt * (s + 0.5 * f(len - 1))
    }

    /// Solves the trapezoid renewal conditions for `(n1(0), n2(0))`, which
    /// involve the new boundary values themselves through the node-0 weights.
    pub(crate) fn fill_boundary(&self, s: &mut Shifted, eta: f64) -> Result<()> {
        let p = self.params;
        let (b, bt, k) = (p.b.values(), p.btilde.values(), p.k.values());
        let len = s.n1.len();
        let h2 = 0.5 * self.dt;
        let pp = self.interior(|i| b[i] * s.n1[i] + bt[i] * s.n2[i], len);
        let qq = self.interior(|i| (k[i] + eta) * s.n1[i], len);
        let alpha = h2 * b[0];
        let beta = h2 * bt[0];
        let gamma = h2 * (k[0] + eta);
        let den = 1.0 - alpha - beta * gamma;
        if !(den > 0.0) {
            return Err(CoreError::Config(format!(
                "age step too coarse for the renewal condition (1 - da/2 b(0) - ... = {den})"
            )));
        }
        let x = (pp + beta * qq) / den;
        s.n1[0] = x;
        s.n2[0] = gamma * x + qq;
        Ok(())
    }

    /// Phase-1-only step used by the hybrid model: shift with extra exit
    /// rate `c_tot`, then `n1(0) = ∫ b n1` by the same trapezoid rule.
    pub(crate) fn step_phase1(&self, n1: &[f64], c_tot: f64) -> Result<Vec<f64>> {
        let e1 = (-self.dt * c_tot).exp();
        let len = n1.len();
        let mut m = vec![0.0; len];
        for i in 1..len {
            m[i] = n1[i - 1] * self.decay_k[i] * e1;
        }
        let b = self.params.b.values();
        let den = 1.0 - 0.5 * self.dt * b[0];
        if !(den > 0.0) {
            return Err(CoreError::Config(format!("age step too coarse for the renewal condition (1 - da/2 b(0) = {den})")));
        }
        m[0] = self.interior(|i| b[i] * m[i], len) / den;
        Ok(m)
    }

    pub(crate) fn step(&self, state: &PopulationState, s1: f64, s2: f64) -> Result<PopulationState> {
        let comp = &self.params.comp;
        let mut sh = self.shift(state.n1.values(), state.n2.values(), comp.c_tot(s1, s2), comp.c_tilde(s1, s2));
        self.fill_boundary(&mut sh, comp.eta(s1, s2))?;
        if sh.n1.iter().chain(&sh.n2).any(|v| !v.is_finite()) {
            return Err(CoreError::Diverged { t: state.t, reason: "non-finite density".into() });
        }
        PopulationState::from_values(state.t + self.dt, sh.n1, sh.n2, &self.params.psi1, &self.params.psi2)
    }
}

/// One time step of length `dt = da` with `S1, S2` frozen at the start.
pub fn step(state: &PopulationState, params: &ModelParams, dt: f64) -> Result<PopulationState> {
    step_with_env(state, params, dt, state.s1, state.s2)
}

/// One step of the linear system with prescribed `S1, S2`.
pub fn step_with_env(state: &PopulationState, params: &ModelParams, dt: f64, s1: f64, s2: f64) -> Result<PopulationState> {
    if dt != params.grid().da() {
        return Err(CoreError::Config(format!("dt = {dt} must equal da = {}", params.grid().da())));
    }
    state.n1.check_same_grid(&params.b)?;
    state.ensure_nonnegative()?;
    Stepper::new(params).step(state, s1, s2)
}

/// Stepwise driver; the caller may inspect the state after every step.
pub struct Simulation<'a> {
    stepper: Stepper<'a>,
    cfg: SolverConfig,
    state: PopulationState,
    steps_done: usize,
    mass_limit: f64,
}

impl<'a> Simulation<'a> {
    pub fn new(params: &'a ModelParams, init: PopulationState, cfg: SolverConfig) -> Result<Self> {
        cfg.check(params)?;
        init.n1.check_same_grid(&params.b)?;
        init.ensure_nonnegative()?;
        // recompute aggregates against this parameter set's kernels
        let state = PopulationState::new(init.t, init.n1, init.n2, &params.psi1, &params.psi2)?;
        let mass_limit = BLOWUP_FACTOR * state.total_mass();
        Ok(Self { stepper: Stepper::new(params), cfg, state, steps_done: 0, mass_limit })
    }

    pub fn state(&self) -> &PopulationState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.steps_done >= self.cfg.n_steps()
    }

    pub fn advance(&mut self) -> Result<&PopulationState> {
        let (s1, s2) = match &self.cfg.mode {
            Mode::Nonlinear => (self.state.s1, self.state.s2),
            Mode::Linear(env) => env.at(self.state.t),
        };
        let mut next = self.stepper.step(&self.state, s1, s2)?;
        self.steps_done += 1;
        // keep times exact multiples of dt
        next.t = self.cfg.dt * self.steps_done as f64;
        let mass = next.total_mass();
        if !mass.is_finite() {
            return Err(CoreError::Diverged { t: self.state.t, reason: "non-finite mass".into() });
        }
        if self.mass_limit > 0.0 && mass > self.mass_limit {
            return Err(CoreError::Diverged { t: self.state.t, reason: format!("mass {mass:e} exceeded the blow-up guard") });
        }
        self.state = next;
        Ok(&self.state)
    }

    pub fn run(mut self) -> Result<Trajectory> {
        let n = self.cfg.n_steps();
        let every = self.cfg.record_every;
        let mut traj = Trajectory {
            times: vec![self.state.t],
            states: vec![self.state.clone()],
            summary: vec![SummaryRow::of(&self.state)],
        };
        while !self.is_done() {
            self.advance()?;
            traj.summary.push(SummaryRow::of(&self.state));
            if self.steps_done % every == 0 || self.steps_done == n {
                traj.times.push(self.state.t);
                traj.states.push(self.state.clone());
            }
        }
        Ok(traj)
    }
}

/// Runs the scheme from `init` to `cfg.t_end`.
pub fn simulate(params: &ModelParams, init: PopulationState, cfg: SolverConfig) -> Result<Trajectory> {
    Simulation::new(params, init, cfg)?.run()
}

/// Residual of the steady-state system at sizes `(N1, N2)`.
///
/// Kernels are taken as identically one, so `S_i = N_i`. Returns
/// `(r1, r2)` where `r1 = 0` is the renewal condition and `r2 = 0` balances
/// the phase-2 inflow.
pub fn steady_residual(params: &ModelParams, n1: f64, n2: f64) -> Result<(f64, f64)> {
    let grid = params.grid();
    let da = grid.da();
    let comp = &params.comp;
    let c_tot = comp.c_tot(n1, n2);
    let c_tilde = comp.c_tilde(n1, n2);
    let eta = comp.eta(n1, n2);
    let hk = cumulative_hazard(&params.k)?;
    let hd = cumulative_hazard(&params.d)?;
    let nodes = grid.nodes();
    let e1: Vec<f64> = hk.values().iter().zip(&nodes).map(|(h, a)| (-h - c_tot * a).exp()).collect();
    let e2: Vec<f64> = hd.values().iter().zip(&nodes).map(|(h, a)| (-h - c_tilde * a).exp()).collect();
    let prod = |f: &[f64], e: &[f64], shift: f64| -> f64 {
        let v: Vec<f64> = f.iter().zip(e).map(|(x, y)| (x + shift) * y).collect();
        trapz(da, &v)
    };
    let births1 = prod(params.b.values(), &e1, 0.0);
    let births2 = prod(params.btilde.values(), &e2, 0.0);
    let trans = prod(params.k.values(), &e1, eta);
    let mass1 = trapz(da, &e1);
    let mass2 = trapz(da, &e2);
    Ok((births2 * trans + births1 - 1.0, n1 * mass2 * trans - n2 * mass1))
}

/// Bounds on `S1 + S2` along trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SBounds {
    /// Population level above which competition beats twice the best birth rate.
    pub m_level: f64,
    pub m_upper: f64,
    pub m_lower: Option<f64>,
    pub lower_note: String,
}

pub fn bounds_s(params: &ModelParams, init: &PopulationState) -> Result<SBounds> {
    let comp = &params.comp;
    let (lo1, hi1) = (params.psi1.inf(), params.psi1.sup());
    let (lo2, hi2) = (params.psi2.inf(), params.psi2.sup());
    if !(hi1.is_finite() && hi2.is_finite()) {
        return Err(CoreError::Config("competition kernels must be bounded".into()));
    }
    let slope = (comp.ctilde2 * lo2).min(comp.c1 * lo1);
    if !(slope > 0.0) {
        return Err(CoreError::Config(
            "upper bound needs c1 > 0, ctilde2 > 0 and kernels bounded below by a positive constant".into(),
        ));
    }
    let target = 2.0 * params.b.sup().max(params.btilde.sup());
    let g = |m: f64| (comp.ctilde2 * lo2 * m).min(comp.c1 * lo1 * m) - target;
    let mut hi = 1.0;
    while g(hi) < 0.0 {
        hi *= 2.0;
    }
    let m_level = bisect(g, 0.0, hi, 1e-13 * hi, 200).root;
    let m_upper = hi1.max(hi2) * init.total_mass().max(2.0 * m_level);

    let mut m_lower = None;
    let mut lower_note = "absent: needs btilde not identically zero".to_string();
    if !params.btilde.is_zero() {
        match solve_lambda0(params) {
            Ok(l) if l.value > 0.0 => {
                let eig = eigenfunctions(params, l.value)?;
                let extrema = |psi: &AgeFunction, phi: &AgeFunction| -> (f64, f64) {
                    let mut lo = f64::INFINITY;
                    let mut hi = 0.0f64;
                    for (s, p) in psi.values().iter().zip(phi.values()) {
                        let r = if *p > 0.0 { s / p } else { f64::INFINITY };
                        lo = lo.min(r);
                        hi = hi.max(r);
                    }
                    (lo, hi)
                };
                let (c01, cc1) = extrema(&params.psi1, &eig.phi1_0);
                let (c02, cc2) = extrema(&params.psi2, &eig.phi2_0);
                let denom = (comp.c1_tot() + comp.ctilde1) * cc1 + (comp.c2_tot() + comp.ctilde2) * cc2;
                let n_tilde = if denom.is_finite() && denom > 0.0 { l.value / denom } else { 0.0 };
                let n0 = eig.adjoint_mass(&init.n1, &init.n2)?;
                m_lower = Some(c01.min(c02) * n0.min(n_tilde));
                lower_note = "certified for this grid only".to_string();
            }
            _ => lower_note = "absent: growth rate not positive".to_string(),
        }
    }
    Ok(SBounds { m_level, m_upper, m_lower, lower_note })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{trapz_prod, AgeGrid};
    use crate::params::Competition;
    use crate::spectral::gre_entropy;

    fn const_params(grid: AgeGrid, b: f64, bt: f64, k: f64, d: f64, comp: Competition) -> ModelParams {
        ModelParams::constant(grid, b, bt, k, d, comp).unwrap()
    }

    fn indicator_state(p: &ModelParams, width: f64, n2: f64) -> PopulationState {
        let g = *p.grid();
        let n1 = AgeFunction::from_fn(g, |a| if a <= width { 1.0 } else { 0.0 }).unwrap();
        let n2 = AgeFunction::constant(g, n2).unwrap();
        PopulationState::new(0.0, n1, n2, &p.psi1, &p.psi2).unwrap()
    }

    #[test]
    fn zero_is_fixed() {
        let g = AgeGrid::new(10.0, 100).unwrap();
        let p = const_params(g, 2.0, 0.5, 1.0, 1.0, Competition { c1: 1.0, ctilde2: 1.0, ..Default::default() });
        let z = PopulationState::zeros(0.0, &p.psi1, &p.psi2).unwrap();
        let s = step(&z, &p, g.da()).unwrap();
        assert!(s.n1.is_zero() && s.n2.is_zero());
        let tr = simulate(&p, z, SolverConfig::for_params(&p, 1.0, 10, Mode::Nonlinear)).unwrap();
        assert!(tr.summary.iter().all(|r| r.n1_total == 0.0 && r.n2_total == 0.0));
    }

    #[test]
    fn free_transport_is_a_shift() {
        let g = AgeGrid::new(5.0, 50).unwrap();
        let p = const_params(g, 0.0, 0.0, 0.0, 0.0, Competition::default());
        let init = PopulationState::from_values(
            0.0,
            g.nodes().iter().map(|a| (a * 1.3).sin().abs()).collect(),
            g.nodes().iter().map(|a| a * 0.1).collect(),
            &p.psi1,
            &p.psi2,
        )
        .unwrap();
        let s = step(&init, &p, g.da()).unwrap();
        for i in 1..g.len() {
            assert_eq!(s.n1.at(i), init.n1.at(i - 1));
            assert_eq!(s.n2.at(i), init.n2.at(i - 1));
        }
    }

    #[test]
    fn rejects_wrong_dt() {
        let g = AgeGrid::new(5.0, 50).unwrap();
        let p = const_params(g, 2.0, 0.0, 1.0, 1.0, Competition::default());
        let z = PopulationState::zeros(0.0, &p.psi1, &p.psi2).unwrap();
        assert!(matches!(step(&z, &p, 0.2), Err(CoreError::Config(_))));
        let mut cfg = SolverConfig::for_params(&p, 1.0, 1, Mode::Nonlinear);
        cfg.dt = 0.05;
        assert!(matches!(simulate(&p, z, cfg), Err(CoreError::Config(_))));
    }

    #[test]
    fn eigenprofile_grows_at_lambda0() {
        let g = AgeGrid::new(25.0, 5000).unwrap();
        let p = const_params(g, 2.0, 0.0, 1.0, 1.0, Competition::default());
        let l = solve_lambda0(&p).unwrap().value;
        let e = eigenfunctions(&p, l).unwrap();
        let init = PopulationState::new(0.0, e.n1_0.clone(), e.n2_0.clone(), &p.psi1, &p.psi2).unwrap();
        let s = step(&init, &p, g.da()).unwrap();
        let ratio = s.n1_total / init.n1_total;
        // the discrete profile is an exact eigenvector up to the mass leaving at a_max
        assert!((ratio - (l * g.da()).exp()).abs() < 1e-9, "{ratio}");
        assert!((l - 1.0).abs() < 1e-4);
    }

    #[test]
    fn mass_budget_per_step() {
        let g = AgeGrid::new(20.0, 4000).unwrap();
        let comp = Competition { eta1: 0.2, eta2: 0.1, c1: 0.5, c2: 0.3, ctilde1: 0.4, ctilde2: 0.6 };
        let k = AgeFunction::from_fn(g, |a| 1.0 + 0.5 * (a).sin().abs()).unwrap();
        let b = AgeFunction::from_fn(g, |a| 2.0 * a / (1.0 + a)).unwrap();
        let bt = AgeFunction::constant(g, 0.3).unwrap();
        let d = AgeFunction::from_fn(g, |a| 1.0 + 0.1 * a).unwrap();
        let p = ModelParams::new(b, bt, k, d, comp).unwrap();
        let init = PopulationState::from_values(
            0.0,
            g.nodes().iter().map(|a| (-a).exp() * (1.0 + a)).collect(),
            g.nodes().iter().map(|a| 0.5 * (-2.0 * a).exp()).collect(),
            &p.psi1,
            &p.psi2,
        )
        .unwrap();
        let dt = g.da();
        // the first step repairs incompatible boundary data at O(dt) cost
        let init = step(&init, &p, dt).unwrap();
        let s = step(&init, &p, dt).unwrap();
        let c = &p.comp;
        let (s1, s2) = (init.s1, init.s2);
        let births = trapz_prod(dt, p.b.values(), init.n1.values()) + trapz_prod(dt, p.btilde.values(), init.n2.values());
        let k_out = trapz_prod(dt, p.k.values(), init.n1.values());
        let d_out = trapz_prod(dt, p.d.values(), init.n2.values());
        let expect1 = births - k_out - c.c_tot(s1, s2) * init.n1_total;
        let expect2 = k_out + c.eta(s1, s2) * init.n1_total - d_out - c.c_tilde(s1, s2) * init.n2_total;
        let scale = 1.0 + init.total_mass();
        assert!(((s.n1_total - init.n1_total) - dt * expect1).abs() < 50.0 * dt * dt * scale);
        assert!(((s.n2_total - init.n2_total) - dt * expect2).abs() < 50.0 * dt * dt * scale);
    }

    #[test]
    fn gre_non_increasing_linear_const_a() {
        let g = AgeGrid::new(25.0, 2500).unwrap();
        let p = const_params(g, 2.0, 0.0, 1.0, 1.0, Competition::default());
        let l = solve_lambda0(&p).unwrap().value;
        let e = eigenfunctions(&p, l).unwrap();
        let init = indicator_state(&p, 1.0, 0.0);
        let m0 = e.step_mass(&init.n1, &init.n2).unwrap();
        let cfg = SolverConfig::for_params(&p, 2.0, 1, Mode::Linear(EnvTable::constant(0.0, 0.0).unwrap()));
        let tr = simulate(&p, init, cfg).unwrap();
        let h: Vec<f64> = tr.states.iter().map(|s| gre_entropy(s, &e, m0).unwrap()).collect();
        assert!(h.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        assert!(h.last().unwrap() < &(h[0] * (-4.0f64).exp() * 1.1));
    }

    #[test]
    fn step_mass_is_invariant_of_linear_scheme() {
        let g = AgeGrid::new(30.0, 3000).unwrap();
        let b = AgeFunction::from_fn(g, |a| 1.5 * a / (1.0 + a)).unwrap();
        let bt = AgeFunction::from_fn(g, |a| 0.5 + 0.2 * a.sin().abs()).unwrap();
        let k = AgeFunction::from_fn(g, |a| 0.8 + 0.1 * a.min(3.0)).unwrap();
        let d = AgeFunction::constant(g, 1.2).unwrap();
        let p = ModelParams::new(b, bt, k, d, Competition::default()).unwrap();
        let l = solve_lambda0(&p).unwrap().value;
        let e = eigenfunctions(&p, l).unwrap();
        let init = indicator_state(&p, 2.0, 0.3);
        let m0 = e.step_mass(&init.n1, &init.n2).unwrap();
        let cfg = SolverConfig::for_params(&p, 3.0, 50, Mode::Linear(EnvTable::constant(0.0, 0.0).unwrap()));
        for s in simulate(&p, init, cfg).unwrap().states {
            let m = (-l * s.t).exp() * e.step_mass(&s.n1, &s.n2).unwrap();
            assert!((m - m0).abs() < 1e-10 * m0, "{m} vs {m0}");
        }
        // the step adjoint is a first-order approximation of the continuous one
        let gap = e.phi1_0.values().iter().zip(e.step_phi1.values()).take(2000).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(gap < 0.05 * e.phi1_0.sup(), "{gap}");
    }

    #[test]
    fn env_table_interpolates() {
        let env = EnvTable::new(&[(0.0, 0.0, 1.0), (2.0, 2.0, 3.0)]).unwrap();
        assert_eq!(env.at(-1.0), (0.0, 1.0));
        assert_eq!(env.at(1.0), (1.0, 2.0));
        assert_eq!(env.at(5.0), (2.0, 3.0));
        assert!(EnvTable::new(&[(1.0, 0.0, 0.0), (1.0, 0.0, 0.0)]).is_err());
    }

    #[test]
    fn steady_residual_examples() {
        let g = AgeGrid::new(30.0, 30_000).unwrap();
        let comp = Competition { c1: 1.0, ctilde2: 1.0, ..Default::default() };
        let p = const_params(g, 2.0, 0.0, 1.0, 1.0, comp);
        let (r1, r2) = steady_residual(&p, 0.0, 0.0).unwrap();
        assert!((r1 - (crate::params::r0(&p).unwrap() - 1.0)).abs() < 1e-14);
        assert_eq!(r2, 0.0);
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        let (r1, r2) = steady_residual(&p, 1.0, phi).unwrap();
        assert!(r1.abs() < 1e-6 && r2.abs() < 1e-6, "{r1} {r2}");
        let (r1, _) = steady_residual(&p, 1.1, phi + 0.1).unwrap();
        assert!(r1.abs() > 1e-3);
    }

    #[test]
    fn bounds_s_examples() {
        let g = AgeGrid::new(30.0, 3000).unwrap();
        let comp = Competition { c1: 1.0, ctilde2: 1.0, ..Default::default() };
        let p = const_params(g, 2.0, 0.0, 1.0, 1.0, comp);
        let init = indicator_state(&p, 1.0, 0.1);
        let b = bounds_s(&p, &init).unwrap();
        assert!((b.m_level - 4.0).abs() < 1e-10);
        assert!((b.m_upper - 8.0).abs() < 1e-9);
        assert!(b.m_lower.is_none());
        let tr = simulate(&p, init, SolverConfig::for_params(&p, 20.0, 100, Mode::Nonlinear)).unwrap();
        assert!(tr.summary.iter().all(|r| r.s1 + r.s2 <= b.m_upper));
    }

    #[test]
    fn bounds_s_lower_with_phase2_births() {
        let g = AgeGrid::new(30.0, 3000).unwrap();
        let comp = Competition { c1: 1.0, ctilde2: 1.0, ctilde1: 0.2, eta1: 0.1, ..Default::default() };
        let p = const_params(g, 1.0, 1.0, 1.0, 1.0, comp);
        let init = indicator_state(&p, 1.0, 0.1);
        let b = bounds_s(&p, &init).unwrap();
        let lo = b.m_lower.unwrap();
        assert!(lo > 0.0);
        let tr = simulate(&p, init, SolverConfig::for_params(&p, 20.0, 100, Mode::Nonlinear)).unwrap();
        assert!(tr.summary.iter().all(|r| r.s1 + r.s2 <= b.m_upper && r.s1 + r.s2 >= lo));
    }

    #[test]
    fn blowup_guard_trips() {
        let g = AgeGrid::new(20.0, 200).unwrap();
        let p = const_params(g, 4.0, 0.0, 0.5, 1.0, Competition::default());
        let init = indicator_state(&p, 1.0, 0.0);
        let r = simulate(&p, init, SolverConfig::for_params(&p, 100.0, 10, Mode::Nonlinear));
        assert!(matches!(r, Err(CoreError::Diverged { .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn positivity_preserved(b in 0.0f64..4.0, bt in 0.0f64..2.0, k in 0.1f64..2.0, d in 0.1f64..2.0,
                                    c1 in 0.0f64..2.0, c2 in 0.0f64..2.0, e1 in 0.0f64..1.0, ct2 in 0.0f64..2.0,
                                    w in 0.1f64..5.0) {
                let g = AgeGrid::new(10.0, 200).unwrap();
                let comp = Competition { c1, c2, eta1: e1, ctilde2: ct2, ..Default::default() };
                let p = const_params(g, b, bt, k, d, comp);
                let init = indicator_state(&p, w, 0.2);
                let tr = simulate(&p, init, SolverConfig::for_params(&p, 5.0, 10, Mode::Nonlinear)).unwrap();
                for s in &tr.states {
                    prop_assert!(s.n1.inf() >= 0.0 && s.n2.inf() >= 0.0);
                }
            }

            #[test]
            fn comparison_principle(seed in 0u64..1000, s1 in 0.0f64..2.0, s2 in 0.0f64..2.0) {
                let g = AgeGrid::new(10.0, 200).unwrap();
                let comp = Competition { c1: 0.5, eta1: 0.3, ctilde2: 0.7, ..Default::default() };
                let p = const_params(g, 1.5, 0.4, 1.0, 1.0, comp);
                let f = |a: f64, s: f64| ((a + s).sin() + 1.0) * 0.5;
                let lo1: Vec<f64> = g.nodes().iter().map(|a| f(*a, seed as f64)).collect();
                let hi1: Vec<f64> = lo1.iter().zip(g.nodes()).map(|(v, a)| v + f(a * 2.0, 1.0)).collect();
                let lo = PopulationState::from_values(0.0, lo1, vec![0.1; g.len()], &p.psi1, &p.psi2).unwrap();
                let hi = PopulationState::from_values(0.0, hi1, vec![0.3; g.len()], &p.psi1, &p.psi2).unwrap();
                let env = Mode::Linear(EnvTable::new(&[(0.0, s1, s2), (3.0, s2, s1)]).unwrap());
                let ta = simulate(&p, lo, SolverConfig::for_params(&p, 3.0, 1, env.clone())).unwrap();
                let tb = simulate(&p, hi, SolverConfig::for_params(&p, 3.0, 1, env)).unwrap();
                for (a, b) in ta.states.iter().zip(&tb.states) {
                    prop_assert!(a.n1.values().iter().zip(b.n1.values()).all(|(x, y)| x <= y));
                    prop_assert!(a.n2.values().iter().zip(b.n2.values()).all(|(x, y)| x <= y));
                }
            }
        }
    }
}

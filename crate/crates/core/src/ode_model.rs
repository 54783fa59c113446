//! Constant-rate ODE reduction: integration, resultant-based steady states,
//! Dulac divergence and the small-`b̃` asymptotics.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::params::Competition;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeParams {
    pub b: f64,
    pub btilde: f64,
    pub k: f64,
    pub d: f64,
    pub comp: Competition,
}

impl OdeParams {
    pub fn new(b: f64, btilde: f64, k: f64, d: f64, comp: Competition) -> Result<Self> {
        for (name, v) in [("b", b), ("btilde", btilde), ("k", k), ("d", d)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CoreError::Domain(format!("rate {name} = {v} must be >= 0")));
            }
        }
        if !(k > 0.0 && d > 0.0) {
            return Err(CoreError::Domain(format!("exit rates must be positive (k = {k}, d = {d})")));
        }
        comp.validate()?;
        Ok(Self { b, btilde, k, d, comp })
    }

    /// `b/k + b̃/d`, the growth functional at zero for constant rates.
    pub fn r0(&self) -> f64 {
        self.b / self.k + self.btilde / self.d
    }
}

pub fn ode_rhs(state: (f64, f64), p: &OdeParams) -> (f64, f64) {
    let (x, y) = state;
    let c = &p.comp;
    let dx = -(p.k + c.c1_tot() * x + c.c2_tot() * y) * x + p.b * x + p.btilde * y;
    let dy = -(p.d + c.ctilde1 * x + c.ctilde2 * y) * y + (p.k + c.eta1 * x + c.eta2 * y) * x;
    (dx, dy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeTrajectory {
    pub times: Vec<f64>,
    pub n1: Vec<f64>,
    pub n2: Vec<f64>,
    /// Steps where a component went negative and was reset to 0.
    pub clip_events: usize,
}

impl OdeTrajectory {
    pub fn last(&self) -> (f64, f64) {
        (*self.n1.last().unwrap(), *self.n2.last().unwrap())
    }

    /// Sign changes of `dN1/dt` (finite differences of the samples) after `t_burn`.
    pub fn sign_changes_after(&self, t_burn: f64) -> usize {
        let mut last = 0.0f64;
        let mut count = 0;
        for i in 1..self.times.len() {
            if self.times[i] <= t_burn {
                continue;
            }
            let slope = self.n1[i] - self.n1[i - 1];
            if slope != 0.0 {
                if last != 0.0 && (slope > 0.0) != (last > 0.0) {
                    count += 1;
                }
                last = slope;
            }
        }
        count
    }
}

/// Classical RK4 with fixed step; negative components are clipped to 0.
pub fn integrate_ode(p: &OdeParams, init: (f64, f64), t_end: f64, dt: f64) -> Result<OdeTrajectory> {
    if !(init.0 >= 0.0 && init.1 >= 0.0) {
        return Err(CoreError::Domain(format!("initial state {init:?} must be >= 0")));
    }
    if !(dt > 0.0 && t_end >= 0.0) {
        return Err(CoreError::Config(format!("need dt > 0 and t_end >= 0 (dt = {dt}, t_end = {t_end})")));
    }
    let n = (t_end / dt).round() as usize;
    let mut tr = OdeTrajectory {
        times: Vec::with_capacity(n + 1),
        n1: Vec::with_capacity(n + 1),
        n2: Vec::with_capacity(n + 1),
        clip_events: 0,
    };
    let (mut x, mut y) = init;
    tr.times.push(0.0);
    tr.n1.push(x);
    tr.n2.push(y);
    let f = |x: f64, y: f64| ode_rhs((x, y), p);
    for i in 1..=n {
        let k1 = f(x, y);
        let k2 = f(x + 0.5 * dt * k1.0, y + 0.5 * dt * k1.1);
        let k3 = f(x + 0.5 * dt * k2.0, y + 0.5 * dt * k2.1);
        let k4 = f(x + dt * k3.0, y + dt * k3.1);
        x += dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        y += dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        if !(x.is_finite() && y.is_finite()) {
            return Err(CoreError::Diverged { t: (i - 1) as f64 * dt, reason: "non-finite ODE state".into() });
        }
        if x < 0.0 || y < 0.0 {
            tr.clip_events += 1;
            x = x.max(0.0);
            y = y.max(0.0);
        }
        tr.times.push(i as f64 * dt);
        tr.n1.push(x);
        tr.n2.push(y);
    }
    Ok(tr)
}

/// Coefficients of `P(Y) = A3 Y³ + A2 Y² + A1 Y + A0`, where `-Y P(Y)` is the
/// resultant in `N1` of the two steady-state polynomials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResultantCubic {
    pub a3: f64,
    pub a2: f64,
    pub a1: f64,
    pub a0: f64,
}

impl ResultantCubic {
    pub fn eval(&self, y: f64) -> f64 {
        ((self.a3 * y + self.a2) * y + self.a1) * y + self.a0
    }

    pub fn deriv(&self, y: f64) -> f64 {
        (3.0 * self.a3 * y + 2.0 * self.a2) * y + self.a1
    }

    /// Real roots, each refined by one Newton step when that reduces `|P|`.
    pub fn real_roots(&self) -> Vec<f64> {
        let raw = roots::find_roots_cubic(self.a3, self.a2, self.a1, self.a0);
        let mut out: Vec<f64> = raw
            .as_ref()
            .iter()
            .map(|&y| {
                let dp = self.deriv(y);
                if dp == 0.0 {
                    return y;
                }
                let z = y - self.eval(y) / dp;
                if self.eval(z).abs() < self.eval(y).abs() {
                    z
                } else {
                    y
                }
            })
            .collect();
        out.sort_by(f64::total_cmp);
        out
    }
}

pub fn resultant_coefficients(p: &OdeParams) -> ResultantCubic {
    let OdeParams { b, btilde: bt, k, d, comp } = *p;
    let c1 = comp.c1_tot();
    let c2 = comp.c2_tot();
    let (e1, ct2) = (comp.eta1, comp.ctilde2);
    let g = comp.ctilde1 - comp.eta2;
    let bk = b - k;
    let mix = bk * g + k * c2;
    let a3 = c1 * c2 * ct2 * g - c1 * c1 * ct2 * ct2 + e1 * c2 * c2 * ct2;
    let a2 = 2.0 * c1 * e1 * bt * ct2 + c1 * c2 * d * g - c1 * ct2 * mix - 2.0 * d * c1 * c1 * ct2
        + bt * c1 * g * g
        + bt * g * e1 * c2
        + e1 * d * c2 * c2
        - 2.0 * bk * c2 * e1 * ct2;
    let a1 = -c1 * d * mix + c1 * ct2 * k * bk - d * d * c1 * c1 - 2.0 * bt * k * c1 * g - e1 * bt * mix
        + 2.0 * e1 * d * bt * c1
        - 2.0 * bk * d * e1 * c2
        + e1 * ct2 * bk * bk
        - bt * bt * e1 * e1;
    let a0 = (k * bt + d * b - k * d) * (comp.c1 * k + b * e1);
    ResultantCubic { a3, a2, a1, a0 }
}

/// Residuals of the two steady-state polynomials at `(x, y)`.
pub fn steady_polynomials(p: &OdeParams, x: f64, y: f64) -> (f64, f64) {
    let c = &p.comp;
    let ra = c.c1_tot() * x * x + x * (p.k + c.c2_tot() * y - p.b) - p.btilde * y;
    let rb = -c.eta1 * x * x + x * (y * (c.ctilde1 - c.eta2) - p.k) + c.ctilde2 * y * y + p.d * y;
    (ra, rb)
}

/// Nonnegative root in `x` of the first steady-state polynomial for given `y`.
pub fn n1_branch(p: &OdeParams, y: f64) -> Option<f64> {
    let a = p.comp.c1_tot();
    let q = p.k + p.comp.c2_tot() * y - p.b;
    let r = p.btilde * y;
    if a <= 0.0 {
        return (q > 0.0).then(|| r / q);
    }
    let disc = q * q + 4.0 * a * r;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    // avoid cancellation in whichever form subtracts
    let x = if q > 0.0 { 2.0 * r / (q + s) } else { (-q + s) / (2.0 * a) };
    (x >= 0.0).then_some(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeSteadyState {
    pub n1s: f64,
    pub n2s: f64,
    pub residuals: (f64, f64),
    pub cubic: ResultantCubic,
    pub real_roots: Vec<f64>,
    /// Index into `real_roots` (ascending) of the accepted `N2`.
    pub root_index: usize,
}

pub const ODE_ROOT_TOL: f64 = 1e-9;

/// Two Newton steps on the polynomial system, kept only if they help.
fn polish_pair(p: &OdeParams, mut x: f64, mut y: f64) -> (f64, f64) {
    let c = &p.comp;
    for _ in 0..2 {
        let (fa, fb) = steady_polynomials(p, x, y);
        let jaa = 2.0 * c.c1_tot() * x + p.k + c.c2_tot() * y - p.b;
        let jab = c.c2_tot() * x - p.btilde;
        let jba = -2.0 * c.eta1 * x + y * (c.ctilde1 - c.eta2) - p.k;
        let jbb = x * (c.ctilde1 - c.eta2) + 2.0 * c.ctilde2 * y + p.d;
        let det = jaa * jbb - jab * jba;
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let nx = x - (fa * jbb - jab * fb) / det;
        let ny = y - (jaa * fb - jba * fa) / det;
        let (ga, gb) = steady_polynomials(p, nx, ny);
        if nx > 0.0 && ny > 0.0 && ga.abs().max(gb.abs()) < fa.abs().max(fb.abs()) {
            x = nx;
            y = ny;
        } else {
            break;
        }
    }
    (x, y)
}

pub fn steady_state_ode(p: &OdeParams) -> Result<OdeSteadyState> {
    if !(p.comp.c1_tot() > 0.0 && p.comp.ctilde2 > 0.0) {
        return Err(CoreError::Hypothesis("steady-state analysis needs c1_tot > 0 and ctilde2 > 0".into()));
    }
    if p.r0() <= 1.0 {
        return Err(CoreError::NoPositiveSteadyState { r0: p.r0() });
    }
    let cubic = resultant_coefficients(p);
    let real_roots = cubic.real_roots();
    let mut accepted = Vec::new();
    for (i, &y) in real_roots.iter().enumerate() {
        if !(y > 0.0) {
            continue;
        }
        let Some(x) = n1_branch(p, y) else { continue };
        if !(x > 0.0) {
            continue;
        }
        let (x, y) = polish_pair(p, x, y);
        let (ra, rb) = steady_polynomials(p, x, y);
        if ra.abs().max(rb.abs()) <= ODE_ROOT_TOL * (1.0 + x + y) {
            accepted.push((i, x, y, (ra.abs(), rb.abs())));
        }
    }
    match accepted.len() {
        0 => Err(CoreError::NoSteadyState(format!(
            "no positive root of the resultant cubic {cubic:?} yields an admissible pair"
        ))),
        1 => {
            let (root_index, n1s, n2s, residuals) = accepted[0];
            Ok(OdeSteadyState { n1s, n2s, residuals, cubic, real_roots, root_index })
        }
        _ => Err(CoreError::AmbiguousSteadyState { candidates: accepted.iter().map(|c| (c.1, c.2)).collect() }),
    }
}

/// Divergence of `g (f1, f2)` with the Dulac weight `g = 1/(N1 N2)`.
pub fn dulac_divergence(p: &OdeParams, point: (f64, f64)) -> Result<f64> {
    let (x, y) = point;
    if !(x > 0.0 && y > 0.0) {
        return Err(CoreError::Domain(format!("Dulac weight needs a positive point, got {point:?}")));
    }
    let c = &p.comp;
    Ok(-c.c1_tot() / y - p.btilde / (x * x) - c.ctilde2 / x - p.k / (y * y) - c.eta1 * x / (y * y))
}

/// Leading-order steady state when `b ≤ k` and `b̃` is small.
pub fn asymptotic_small_btilde(p: &OdeParams) -> Result<(f64, f64)> {
    let growth = p.btilde * p.k / p.d + p.b - p.k;
    if p.b - p.k > 0.0 || growth <= 0.0 {
        return Err(CoreError::Domain(format!(
            "small-btilde regime needs b <= k and btilde k/d + b - k > 0 (b - k = {}, margin = {growth})",
            p.b - p.k
        )));
    }
    let c = &p.comp;
    let n1 = (p.btilde * p.k + p.d * (p.b - p.k)) / (c.c1_tot() * p.d + c.c2_tot() * p.k);
    Ok((n1, p.k / p.d * n1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix4;

    const GOLDEN: f64 = 0.618_033_988_749_894_8;

    fn comp_a() -> Competition {
        Competition { c1: 1.0, ctilde2: 1.0, ..Default::default() }
    }

    fn const_a_ode() -> OdeParams {
        OdeParams::new(2.0, 0.0, 1.0, 1.0, comp_a()).unwrap()
    }

    #[test]
    fn rhs_examples() {
        let p = const_a_ode();
        assert_eq!(ode_rhs((0.0, 0.0), &p), (0.0, 0.0));
        let (a, b) = ode_rhs((1.0, GOLDEN), &p);
        assert!(a.abs() < 1e-12 && b.abs() < 1e-12);
        // pure birth; k = 0 is only allowed through the raw struct
        let pure = OdeParams { b: 1.0, btilde: 0.0, k: 0.0, d: 0.0, comp: Competition::default() };
        assert_eq!(ode_rhs((1.0, 0.0), &pure), (1.0, 0.0));
    }

    #[test]
    fn resultant_examples() {
        let c = resultant_coefficients(&const_a_ode());
        assert_eq!(c.a0, 1.0);
        assert_eq!(c.a3, -1.0);
        assert_eq!(c.a2, -2.0);
        let p = OdeParams::new(1.7, 0.0, 1.3, 0.9, Competition { c1: 0.6, ctilde2: 1.4, ..Default::default() }).unwrap();
        let r = resultant_coefficients(&p);
        assert!((r.a2 - (-2.0 * 0.9 * 0.36 * 1.4)).abs() < 1e-14);
    }

    #[test]
    fn steady_state_const_a() {
        let s = steady_state_ode(&const_a_ode()).unwrap();
        assert!((s.n1s - 1.0).abs() < 1e-10);
        assert!((s.n2s - GOLDEN).abs() < 1e-10);
        assert!(s.residuals.0 < 1e-12 && s.residuals.1 < 1e-12);
    }

    /// Positive roots of the cubic located by a dense sign scan and bisection.
    fn scan_roots(c: &ResultantCubic, hi: f64) -> Vec<f64> {
        let n = 200_000;
        let mut out = Vec::new();
        let mut prev = c.eval(0.0);
        for i in 1..=n {
            let y = hi * i as f64 / n as f64;
            let v = c.eval(y);
            if (v > 0.0) != (prev > 0.0) {
                let r = crate::bisect::bisect(|t| c.eval(t), hi * (i - 1) as f64 / n as f64, y, 1e-15, 200);
                out.push(r.root);
            }
            prev = v;
        }
        out
    }

    #[test]
    fn small_btilde_continuity() {
        let p = OdeParams::new(2.0, 0.01, 1.0, 1.0, comp_a()).unwrap();
        let s = steady_state_ode(&p).unwrap();
        assert!((s.n1s - 1.0).abs() < 0.05 && (s.n2s - GOLDEN).abs() < 0.05);
        let scanned = scan_roots(&s.cubic, 10.0);
        assert!(scanned.iter().any(|y| (y - s.n2s).abs() < 1e-9));
    }

    #[test]
    fn small_regime_matches_asymptotics_order() {
        let p = OdeParams::new(0.9, 0.2, 1.0, 1.0, comp_a()).unwrap();
        let s = steady_state_ode(&p).unwrap();
        assert!(s.n1s > 0.0 && s.n1s <= 0.2 && s.n2s > 0.0 && s.n2s <= 0.2);
        let (a1, _) = asymptotic_small_btilde(&p).unwrap();
        assert!((a1 - 0.1).abs() < 1e-12);
    }

    #[test]
    fn asymptotic_examples() {
        let c = Competition { c1: 1.0, ..Default::default() };
        let p = OdeParams::new(1.0, 0.1, 1.0, 1.0, c).unwrap();
        let (x, y) = asymptotic_small_btilde(&p).unwrap();
        assert!((x - 0.1).abs() < 1e-15 && (y - 0.1).abs() < 1e-15);
        let p = OdeParams::new(0.95, 0.1, 1.0, 1.0, c).unwrap();
        assert!((asymptotic_small_btilde(&p).unwrap().0 - 0.05).abs() < 1e-12);
        let p = OdeParams::new(2.0, 0.1, 1.0, 1.0, c).unwrap();
        assert!(asymptotic_small_btilde(&p).is_err());
    }

    #[test]
    fn asymptotic_error_shrinks_with_btilde() {
        let mut errs = Vec::new();
        for bt in [0.1, 0.05, 0.025] {
            let p = OdeParams::new(1.0, bt, 1.0, 1.0, comp_a()).unwrap();
            let s = steady_state_ode(&p).unwrap();
            let (a, _) = asymptotic_small_btilde(&p).unwrap();
            errs.push((s.n1s - a).abs() / s.n1s);
        }
        assert!(errs[0] < 0.3);
        assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
    }

    #[test]
    fn dulac_examples() {
        assert_eq!(dulac_divergence(&const_a_ode(), (1.0, 1.0)).unwrap(), -3.0);
        let p = OdeParams { btilde: 0.1, ..const_a_ode() };
        assert!((dulac_divergence(&p, (1.0, 1.0)).unwrap() + 3.1).abs() < 1e-15);
        assert!(dulac_divergence(&p, (0.0, 1.0)).is_err());
    }

    #[test]
    fn dulac_matches_finite_differences() {
        let comp = Competition { eta1: 0.4, eta2: 0.3, c1: 0.7, c2: 0.2, ctilde1: 0.5, ctilde2: 0.9 };
        let p = OdeParams::new(1.8, 0.3, 0.9, 1.1, comp).unwrap();
        let g = |x: f64, y: f64| {
            let (f1, f2) = ode_rhs((x, y), &p);
            (f1 / (x * y), f2 / (x * y))
        };
        for &(x, y) in &[(0.5, 0.7), (1.3, 0.2), (2.0, 3.0)] {
            let h = 1e-5;
            let dx = (g(x + h, y).0 - g(x - h, y).0) / (2.0 * h);
            let dy = (g(x, y + h).1 - g(x, y - h).1) / (2.0 * h);
            let exact = dulac_divergence(&p, (x, y)).unwrap();
            assert!((dx + dy - exact).abs() < 1e-6 * (1.0 + exact.abs()), "{} vs {exact}", dx + dy);
        }
    }

    #[test]
    fn ode_converges_and_extinction() {
        let p = const_a_ode();
        let tr = integrate_ode(&p, (0.5, 0.5), 60.0, 0.01).unwrap();
        let (x, y) = tr.last();
        assert!((x - 1.0).abs() < 1e-6 && (y - GOLDEN).abs() < 1e-6);
        assert_eq!(tr.clip_events, 0);
        let e = OdeParams::new(0.5, 0.2, 1.0, 1.0, comp_a()).unwrap();
        let tr = integrate_ode(&e, (1.0, 1.0), 100.0, 0.01).unwrap();
        let (x, y) = tr.last();
        assert!(x < 1e-6 && y < 1e-6);
        assert!(matches!(steady_state_ode(&e), Err(CoreError::NoPositiveSteadyState { .. })));
        let z = integrate_ode(&p, (0.0, 0.0), 10.0, 0.1).unwrap();
        assert!(z.n1.iter().chain(&z.n2).all(|v| *v == 0.0));
    }

    #[test]
    fn no_sustained_oscillation() {
        let comp = Competition { eta1: 0.2, c1: 0.8, c2: 0.3, ctilde1: 0.4, ctilde2: 1.0, ..Default::default() };
        let p = OdeParams::new(2.5, 0.05, 1.0, 0.7, comp).unwrap();
        let s = steady_state_ode(&p).unwrap();
        let tr = integrate_ode(&p, (3.0, 0.1), 200.0, 0.01).unwrap();
        assert!(tr.sign_changes_after(50.0) <= 2);
        let tail = tr.times.iter().position(|t| *t >= 100.0).unwrap();
        for i in tail..tr.times.len() {
            assert!(((tr.n1[i] - s.n1s).powi(2) + (tr.n2[i] - s.n2s).powi(2)).sqrt() < 1e-4);
        }
    }

    #[test]
    fn hypotheses_enforced() {
        let p = OdeParams::new(2.0, 0.0, 1.0, 1.0, Competition { c1: 1.0, ..Default::default() }).unwrap();
        assert!(matches!(steady_state_ode(&p), Err(CoreError::Hypothesis(_))));
        assert!(OdeParams::new(1.0, 0.0, 0.0, 1.0, comp_a()).is_err());
        assert!(OdeParams::new(-1.0, 0.0, 1.0, 1.0, comp_a()).is_err());
    }

    fn sylvester(p: &OdeParams, y: f64) -> f64 {
        let c = &p.comp;
        let (p2, p1, p0) = (c.c1_tot(), p.k + c.c2_tot() * y - p.b, -p.btilde * y);
        let (q2, q1, q0) = (-c.eta1, y * (c.ctilde1 - c.eta2) - p.k, c.ctilde2 * y * y + p.d * y);
        Matrix4::new(p2, p1, p0, 0.0, 0.0, p2, p1, p0, q2, q1, q0, 0.0, 0.0, q2, q1, q0).determinant()
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn comp_strategy() -> impl Strategy<Value = Competition> {
            (0.0f64..1.0, 0.0f64..1.0, 0.05f64..2.0, 0.0f64..2.0, 0.0f64..2.0, 0.05f64..2.0).prop_map(
                |(eta1, eta2, c1, c2, ctilde1, ctilde2)| Competition { eta1, eta2, c1, c2, ctilde1, ctilde2 },
            )
        }

        proptest! {
            #[test]
            fn resultant_equals_determinant(b in 0.0f64..3.0, bt in 0.0f64..2.0, k in 0.1f64..2.0, d in 0.1f64..2.0,
                                            comp in comp_strategy(), y in -3.0f64..3.0) {
                let p = OdeParams::new(b, bt, k, d, comp).unwrap();
                let c = resultant_coefficients(&p);
                let det = sylvester(&p, y);
                let scale = 1.0 + [c.a3, c.a2, c.a1, c.a0].iter().map(|a| a.abs()).sum::<f64>() * (1.0 + y.abs()).powi(4);
                prop_assert!((det + y * c.eval(y)).abs() < 1e-10 * scale, "{} vs {}", det, -y * c.eval(y));
            }

            #[test]
            fn a0_positive_above_threshold(b in 0.0f64..3.0, bt in 0.0f64..2.0, k in 0.1f64..2.0, d in 0.1f64..2.0,
                                           comp in comp_strategy()) {
                let p = OdeParams::new(b, bt, k, d, comp).unwrap();
                prop_assume!(p.r0() > 1.0);
                prop_assert!(resultant_coefficients(&p).a0 > 0.0);
            }

            #[test]
            fn steady_state_zeroes_rhs(b in 1.2f64..3.0, bt in 0.0f64..0.3, k in 0.3f64..1.0, d in 0.3f64..2.0,
                                       comp in comp_strategy()) {
                let p = OdeParams::new(b, bt, k, d, comp).unwrap();
                if let Ok(s) = steady_state_ode(&p) {
                    let (f1, f2) = ode_rhs((s.n1s, s.n2s), &p);
                    prop_assert!(f1.abs() < 1e-9 && f2.abs() < 1e-9);
                }
            }

            #[test]
            fn cubic_roots_are_common_roots(b in 0.0f64..3.0, bt in 0.0f64..2.0, k in 0.1f64..2.0, d in 0.1f64..2.0,
                                            comp in comp_strategy()) {
                let p = OdeParams::new(b, bt, k, d, comp).unwrap();
                let c = &p.comp;
                for y in resultant_coefficients(&p).real_roots().into_iter().filter(|y| *y > 0.0) {
                    let (qa, qb, qc) = (c.c1_tot(), p.k + c.c2_tot() * y - p.b, -p.btilde * y);
                    let disc = qb * qb - 4.0 * qa * qc;
                    if disc < 0.0 {
                        continue; // the shared root is complex
                    }
                    let best = [-1.0, 1.0]
                        .iter()
                        .map(|sg| {
                            let x = (-qb + sg * disc.sqrt()) / (2.0 * qa);
                            let (ra, rb) = steady_polynomials(&p, x, y);
                            let scale = 1.0 + x * x + y * y + x.abs() + y.abs();
                            ra.abs().max(rb.abs()) / scale
                        })
                        .fold(f64::INFINITY, f64::min);
                    prop_assert!(best < 1e-7, "y = {}, residual {}", y, best);
                }
            }

            #[test]
            fn dulac_negative(b in 0.0f64..3.0, bt in 0.0f64..2.0, k in 0.1f64..2.0, d in 0.1f64..2.0,
                              comp in comp_strategy(), x in 1e-3f64..10.0, y in 1e-3f64..10.0) {
                let p = OdeParams::new(b, bt, k, d, comp).unwrap();
                prop_assert!(dulac_divergence(&p, (x, y)).unwrap() < 0.0);
            }
        }
    }
}

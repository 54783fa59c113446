//! Scenario files (TOML).

use std::path::Path;

use serde::{Deserialize, Serialize};

use agepde_core::ode_model::OdeParams;
use agepde_core::params::{check_assumptions, AssumptionReport};
use agepde_core::pde_full::EnvTable;
use agepde_core::{AgeFunction, AgeGrid, Competition, ModelParams, PopulationState};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Pde,
    PdeLinear,
    Ode,
    Hybrid,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Pde => "pde",
            ModelKind::PdeLinear => "pde-linear",
            ModelKind::Ode => "ode",
            ModelKind::Hybrid => "hybrid",
        }
    }
}

/// An age profile: a constant, a `[[age, value], ...]` table, or a named shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Profile {
    Constant(f64),
    Table(Vec<[f64; 2]>),
    Shape(Shape),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Shape {
    /// `value` on `[from, to]`, zero elsewhere.
    Indicator { from: f64, to: f64, value: f64 },
    /// `scale * exp(-rate * a)`
    Exp { scale: f64, rate: f64 },
    /// `scale * exp(-((a - center) / width)^2)`
    Gaussian { center: f64, width: f64, scale: f64 },
}

impl Profile {
    fn validate(&self, key: &str) -> Result<()> {
        let bad = |msg: String| Err(CliError::Scenario(format!("{key}: {msg}")));
        match self {
            Profile::Constant(v) if !(v.is_finite() && *v >= 0.0) => bad(format!("negative or non-finite value {v}")),
            Profile::Table(rows) => {
                if rows.is_empty() {
                    return bad("empty table".into());
                }
                if let Some(r) = rows.iter().find(|r| !(r[1].is_finite() && r[1] >= 0.0)) {
                    return bad(format!("negative or non-finite value {} at age {}", r[1], r[0]));
                }
                if rows.windows(2).any(|w| w[1][0] <= w[0][0]) {
                    return bad("table ages must be strictly increasing".into());
                }
                Ok(())
            }
            Profile::Shape(Shape::Indicator { from, to, value }) => {
                if !(*value >= 0.0 && value.is_finite()) {
                    return bad(format!("negative or non-finite value {value}"));
                }
                if !(from <= to) {
                    return bad(format!("indicator needs from <= to, got [{from}, {to}]"));
                }
                Ok(())
            }
            Profile::Shape(Shape::Exp { scale, rate }) if !(*scale >= 0.0 && rate.is_finite()) => {
                bad(format!("negative scale {scale} or non-finite rate {rate}"))
            }
            Profile::Shape(Shape::Gaussian { width, scale, .. }) if !(*scale >= 0.0 && *width > 0.0) => {
                bad(format!("needs scale >= 0 and width > 0, got {scale}, {width}"))
            }
            _ => Ok(()),
        }
    }

    pub fn sample(&self, grid: AgeGrid) -> Result<AgeFunction> {
        let f = match self {
            Profile::Constant(v) => AgeFunction::constant(grid, *v)?,
            Profile::Table(rows) => {
                let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r[0], r[1])).collect();
                AgeFunction::from_table(grid, &pairs)?
            }
            Profile::Shape(Shape::Indicator { from, to, value }) => {
                AgeFunction::from_fn(grid, |a| if a >= *from && a <= *to { *value } else { 0.0 })?
            }
            Profile::Shape(Shape::Exp { scale, rate }) => AgeFunction::from_fn(grid, |a| scale * (-rate * a).exp())?,
            Profile::Shape(Shape::Gaussian { center, width, scale }) => {
                AgeFunction::from_fn(grid, |a| scale * (-((a - center) / width).powi(2)).exp())?
            }
        };
        Ok(f)
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Profile::Constant(v) => Some(*v),
            _ => None,
        }
    }

    /// Whether the profile is smooth in age (no jumps or kinks).
    pub fn is_smooth(&self) -> bool {
        matches!(self, Profile::Constant(_) | Profile::Shape(Shape::Exp { .. } | Shape::Gaussian { .. }))
    }

    /// Crude lower bound used to size the default grid.
    fn floor(&self) -> f64 {
        match self {
            Profile::Constant(v) => *v,
            Profile::Table(rows) => rows.iter().map(|r| r[1]).fold(f64::INFINITY, f64::min),
            _ => 0.0,
        }
    }
}

fn zero() -> Profile {
    Profile::Constant(0.0)
}

fn one() -> Profile {
    Profile::Constant(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub a_max: f64,
    pub n_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesSpec {
    pub b: Profile,
    #[serde(default = "zero")]
    pub btilde: Profile,
    pub k: Profile,
    pub d: Profile,
    #[serde(default = "one")]
    pub psi1: Profile,
    #[serde(default = "one")]
    pub psi2: Profile,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompetitionSpec {
    pub eta1: f64,
    pub eta2: f64,
    pub c1: f64,
    pub c2: f64,
    pub ctilde1: f64,
    pub ctilde2: f64,
}

impl From<CompetitionSpec> for Competition {
    fn from(c: CompetitionSpec) -> Self {
        Competition { eta1: c.eta1, eta2: c.eta2, c1: c.c1, c2: c.c2, ctilde1: c.ctilde1, ctilde2: c.ctilde2 }
    }
}

/// Initial data. For `ode` both entries are totals; for `hybrid`, `n2` is the total `N2(0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    pub n1: Profile,
    #[serde(default = "zero")]
    pub n2: Profile,
}

impl Default for InitSpec {
    fn default() -> Self {
        Self { n1: Profile::Shape(Shape::Indicator { from: 0.0, to: 1.0, value: 1.0 }), n2: zero() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub t_end: f64,
    /// Store full age profiles every this many steps.
    pub record_every: usize,
    /// Step of the ODE integrator.
    pub ode_dt: f64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self { t_end: 50.0, record_every: 100, ode_dt: 1e-3 }
    }
}

/// Frozen environment `(t, S1, S2)` for the linear model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub table: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySpec {
    pub seed: u64,
    /// Random initial conditions per randomized check.
    pub draws: usize,
    /// Check names to report as skipped.
    pub skip: Vec<String>,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self { seed: 0, draws: 20, skip: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub model: ModelKind,
    pub grid: Option<GridSpec>,
    pub rates: RatesSpec,
    #[serde(default)]
    pub competition: CompetitionSpec,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    pub env: Option<EnvSpec>,
    #[serde(default)]
    pub verify: VerifySpec,
}

/// A validated scenario with its assumption report on the default grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub assumptions: AssumptionReport,
}

pub fn load_scenario(path: &Path) -> Result<LoadedScenario> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let scenario = Scenario::from_toml(&text)?;
    let assumptions = check_assumptions(&scenario.params(None)?)?;
    Ok(LoadedScenario { scenario, assumptions })
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| CliError::Scenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_value(value: toml::Value) -> Result<Self> {
        let s: Scenario = value.try_into().map_err(|e: toml::de::Error| CliError::Scenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    fn rate_entries(&self) -> [(&'static str, &Profile); 6] {
        let r = &self.rates;
        [
            ("rates.b", &r.b),
            ("rates.btilde", &r.btilde),
            ("rates.k", &r.k),
            ("rates.d", &r.d),
            ("rates.psi1", &r.psi1),
            ("rates.psi2", &r.psi2),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (key, p) in self.rate_entries() {
            p.validate(key)?;
        }
        self.init.n1.validate("init.n1")?;
        self.init.n2.validate("init.n2")?;
        let c = self.competition;
        for (key, v) in [
            ("competition.eta1", c.eta1),
            ("competition.eta2", c.eta2),
            ("competition.c1", c.c1),
            ("competition.c2", c.c2),
            ("competition.ctilde1", c.ctilde1),
            ("competition.ctilde2", c.ctilde2),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CliError::Scenario(format!("{key}: negative or non-finite value {v}")));
            }
        }
        if let Some(g) = &self.grid {
            if !(g.a_max > 0.0 && g.a_max.is_finite() && g.n_cells >= 2) {
                return Err(CliError::Scenario(format!("grid: needs a_max > 0 and n_cells >= 2, got {g:?}")));
            }
        }
        let s = &self.solver;
        if !(s.t_end >= 0.0 && s.t_end.is_finite() && s.record_every >= 1 && s.ode_dt > 0.0) {
            return Err(CliError::Scenario("solver: needs t_end >= 0, record_every >= 1, ode_dt > 0".into()));
        }
        match self.model {
            ModelKind::Hybrid => {
                if self.rates.btilde != Profile::Constant(0.0) {
                    return Err(CliError::Scenario("rates.btilde: hybrid model requires btilde = 0".into()));
                }
                if self.rates.d.as_constant().is_none() {
                    return Err(CliError::Scenario("rates.d: hybrid model requires a constant death rate".into()));
                }
                for (key, p) in [("rates.psi1", &self.rates.psi1), ("rates.psi2", &self.rates.psi2)] {
                    if *p != Profile::Constant(1.0) {
                        return Err(CliError::Scenario(format!("{key}: hybrid model uses unit kernels")));
                    }
                }
                if self.init.n2.as_constant().is_none() {
                    return Err(CliError::Scenario("init.n2: hybrid model takes the total N2(0) as a number".into()));
                }
            }
            ModelKind::Ode => {
                for (key, p) in self.rate_entries().into_iter().take(4) {
                    if p.as_constant().is_none() {
                        return Err(CliError::Scenario(format!("{key}: ode model requires constant rates")));
                    }
                }
                if self.init.n1.as_constant().is_none() || self.init.n2.as_constant().is_none() {
                    return Err(CliError::Scenario("init: ode model takes the totals n1, n2 as numbers".into()));
                }
            }
            ModelKind::PdeLinear => {
                if self.env.is_none() {
                    return Err(CliError::Scenario("env: pde-linear model needs an [env] table".into()));
                }
            }
            ModelKind::Pde => {}
        }
        if let Some(env) = &self.env {
            let rows: Vec<(f64, f64, f64)> = env.table.iter().map(|r| (r[0], r[1], r[2])).collect();
            EnvTable::new(&rows).map_err(|e| CliError::Scenario(format!("env.table: {e}")))?;
        }
        Ok(())
    }

    /// The scenario grid, with `n_cells` optionally overridden.
    ///
    /// Without a `[grid]` table, `a_max` is chosen so that the slowest exit
    /// rate leaves `e^{-30}` of the survival mass, at 100 cells per unit age.
    pub fn grid(&self, n_cells: Option<usize>) -> Result<AgeGrid> {
        let (a_max, cells) = match &self.grid {
            Some(g) => (g.a_max, g.n_cells),
            None => {
                let slow = self.rates.k.floor().min(self.rates.d.floor());
                let a_max = if slow > 0.0 { 30.0 / slow } else { 50.0 };
                (a_max, (a_max * 100.0).ceil() as usize)
            }
        };
        Ok(AgeGrid::new(a_max, n_cells.unwrap_or(cells))?)
    }

    pub fn params(&self, n_cells: Option<usize>) -> Result<ModelParams> {
        let g = self.grid(n_cells)?;
        let r = &self.rates;
        Ok(ModelParams::with_kernels(
            r.b.sample(g)?,
            r.btilde.sample(g)?,
            r.k.sample(g)?,
            r.d.sample(g)?,
            r.psi1.sample(g)?,
            r.psi2.sample(g)?,
            self.competition.into(),
        )?)
    }

    pub fn ode_params(&self) -> Result<OdeParams> {
        let r = &self.rates;
        let get = |key: &str, p: &Profile| {
            p.as_constant().ok_or_else(|| CliError::Scenario(format!("{key}: the ODE reduction needs constant rates")))
        };
        Ok(OdeParams::new(
            get("rates.b", &r.b)?,
            get("rates.btilde", &r.btilde)?,
            get("rates.k", &r.k)?,
            get("rates.d", &r.d)?,
            self.competition.into(),
        )?)
    }

    pub fn ode_init(&self) -> Result<(f64, f64)> {
        match (self.init.n1.as_constant(), self.init.n2.as_constant()) {
            (Some(x), Some(y)) => Ok((x, y)),
            _ => Err(CliError::Scenario("init: the ODE takes totals n1, n2 as numbers".into())),
        }
    }

    pub fn pde_init(&self, params: &ModelParams) -> Result<PopulationState> {
        let g = *params.grid();
        Ok(PopulationState::new(0.0, self.init.n1.sample(g)?, self.init.n2.sample(g)?, &params.psi1, &params.psi2)?)
    }

    pub fn hybrid_init(&self, params: &ModelParams) -> Result<(AgeFunction, f64)> {
        let n2 = self.init.n2.as_constant().ok_or_else(|| CliError::Scenario("init.n2: must be a number".into()))?;
        Ok((self.init.n1.sample(*params.grid())?, n2))
    }

    pub fn env_table(&self) -> Result<Option<EnvTable>> {
        self.env
            .as_ref()
            .map(|env| {
                let rows: Vec<(f64, f64, f64)> = env.table.iter().map(|r| (r[0], r[1], r[2])).collect();
                Ok(EnvTable::new(&rows)?)
            })
            .transpose()
    }

    /// Whether every rate and initial profile is smooth in age.
    pub fn is_smooth(&self) -> bool {
        self.rate_entries().iter().all(|(_, p)| p.is_smooth()) && self.init.n1.is_smooth() && self.init.n2.is_smooth()
    }
}

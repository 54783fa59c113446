//! Cartesian parameter sweeps over a base scenario.
//!
//! Each `--set key=v1,v2,...` names a dotted TOML path. Every combination is
//! run in parallel; rows come back in input order so the output is
//! deterministic.

use rayon::prelude::*;
use serde::Serialize;

use agepde_core::ode_model::{integrate_ode, steady_state_ode};
use agepde_core::pde_full::{simulate, Mode, SolverConfig};
use agepde_core::pde_ode::{simulate_hybrid, stability_verdict, steady_state_hybrid};
use agepde_core::spectral::solve_lambda0;

use crate::error::{CliError, Result};
use crate::scenario::{ModelKind, Scenario};

#[derive(Debug, Clone, PartialEq)]
pub struct SetSpec {
    pub key: String,
    pub values: Vec<toml::Value>,
}

impl SetSpec {
    /// Parses `key=v1,v2`. Values are read as TOML scalars, falling back to strings.
    pub fn parse(arg: &str) -> Result<Self> {
        let (key, rhs) = arg.split_once('=').ok_or_else(|| CliError::Scenario(format!("--set {arg}: expected key=v1,v2")))?;
        let key = key.trim();
        if key.is_empty() || rhs.trim().is_empty() {
            return Err(CliError::Scenario(format!("--set {arg}: empty key or value list")));
        }
        let values = rhs.split(',').map(|v| parse_scalar(v.trim())).collect();
        Ok(Self { key: key.to_string(), values })
    }
}

fn parse_scalar(s: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {s}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(s.to_string()))
}

/// Writes `value` at a dotted path, creating intermediate tables.
pub fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = cur.as_table_mut().ok_or_else(|| CliError::Scenario(format!("{key}: {part} is not a table")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        cur = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    unreachable!("split always yields at least one part")
}

/// All combinations, first key varying slowest.
pub fn combinations(sets: &[SetSpec]) -> Vec<Vec<toml::Value>> {
    sets.iter().fold(vec![Vec::new()], |acc, s| {
        acc.into_iter()
            .flat_map(|prefix| {
                s.values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v.clone());
                    p
                })
            })
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub index: usize,
    pub settings: String,
    pub status: String,
    pub lambda0: Option<f64>,
    pub r0: Option<f64>,
    pub n1: Option<f64>,
    pub n2: Option<f64>,
    pub stable: Option<bool>,
    pub note: String,
}

fn describe(sets: &[SetSpec], combo: &[toml::Value]) -> String {
    sets.iter().zip(combo).map(|(s, v)| format!("{}={}", s.key, v)).collect::<Vec<_>>().join(";")
}

fn run_one(sc: &Scenario, n_cells: Option<usize>) -> Result<SweepRow> {
    let mut row = SweepRow {
        index: 0,
        settings: String::new(),
        status: "ok".into(),
        lambda0: None,
        r0: None,
        n1: None,
        n2: None,
        stable: None,
        note: String::new(),
    };
    if sc.model == ModelKind::Ode {
        let p = sc.ode_params()?;
        row.r0 = Some(p.r0());
        let (n1, n2) = match steady_state_ode(&p) {
            Ok(ss) => (ss.n1s, ss.n2s),
            Err(e) => {
                row.note = e.to_string();
                integrate_ode(&p, sc.ode_init()?, sc.solver.t_end, sc.solver.ode_dt)?.last()
            }
        };
        row.n1 = Some(n1);
        row.n2 = Some(n2);
        return Ok(row);
    }
    let params = sc.params(n_cells)?;
    let l = solve_lambda0(&params)?;
    row.lambda0 = Some(l.value);
    row.r0 = Some(l.r0);
    match sc.model {
        ModelKind::Hybrid => match steady_state_hybrid(&params) {
            Ok(ss) => {
                row.n1 = Some(ss.n1s);
                row.n2 = Some(ss.n2s);
                row.stable = stability_verdict(&params, &ss).ok().map(|s| s.stable);
            }
            Err(e) => {
                row.note = e.to_string();
                let (n1, n2) = sc.hybrid_init(&params)?;
                let cfg = SolverConfig::for_params(&params, sc.solver.t_end, usize::MAX, Mode::Nonlinear);
                let last = simulate_hybrid(&params, &n1, n2, &cfg)?.summary.last().copied().expect("non-empty");
                row.n1 = Some(last.n1_total);
                row.n2 = Some(last.n2_total);
            }
        },
        _ => {
            let mode = match sc.env_table()? {
                Some(env) if sc.model == ModelKind::PdeLinear => Mode::Linear(env),
                _ => Mode::Nonlinear,
            };
            let init = sc.pde_init(&params)?;
            let tr = simulate(&params, init, SolverConfig::for_params(&params, sc.solver.t_end, usize::MAX, mode))?;
            row.n1 = Some(tr.last().n1_total);
            row.n2 = Some(tr.last().n2_total);
        }
    }
    Ok(row)
}

/// Runs every combination. Failures of single runs are reported in their row.
pub fn run_sweep(base: &toml::Value, sets: &[SetSpec], n_cells: Option<usize>) -> Result<Vec<SweepRow>> {
    let combos = combinations(sets);
    let rows = combos
        .par_iter()
        .enumerate()
        .map(|(index, combo)| {
            let settings = describe(sets, combo);
            let result = (|| {
                let mut v = base.clone();
                for (s, val) in sets.iter().zip(combo) {
                    set_path(&mut v, &s.key, val.clone())?;
                }
                run_one(&Scenario::from_value(v)?, n_cells)
            })();
            match result {
                Ok(row) => SweepRow { index, settings, ..row },
                Err(e) => SweepRow {
                    index,
                    settings,
                    status: "error".into(),
                    lambda0: None,
                    r0: None,
                    n1: None,
                    n2: None,
                    stable: None,
                    note: e.to_string(),
                },
            }
        })
        .collect();
    Ok(rows)
}

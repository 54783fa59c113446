//! CSV and JSON files written under `--out`.
//!
//! Column sets are fixed:
//! - `summary.csv` (pde): `t,n1_total,n2_total,s1,s2,n1_boundary,n2_boundary`
//! - `summary.csv` (hybrid): `t,n1_total,n2_total,n1_boundary,lambda_t,kappa_t`
//! - `summary.csv` (ode): `t,n1,n2`
//! - `snapshots.csv`: `t,a,n1,n2` (hybrid: `t,a,n1`)
//! - `eigen.csv`: `a,n1_0,n2_0,phi1_0,phi2_0`

use std::fs;
use std::path::Path;

use serde::Serialize;

use agepde_core::ode_model::OdeTrajectory;
use agepde_core::pde_full::Trajectory;
use agepde_core::pde_ode::HybridTrajectory;
use agepde_core::spectral::EigenSolution;

use crate::error::{CliError, Result};

fn writer(dir: &Path, name: &str) -> Result<csv::Writer<fs::File>> {
    fs::create_dir_all(dir)?;
    csv::Writer::from_path(dir.join(name)).map_err(|e| CliError::Output(e.to_string()))
}

fn write_rows<T: Serialize>(dir: &Path, name: &str, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = writer(dir, name)?;
    for row in rows {
        w.serialize(row).map_err(|e| CliError::Output(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Snapshot {
    t: f64,
    a: f64,
    n1: f64,
    n2: f64,
}

#[derive(Serialize)]
struct HybridSnapshot {
    t: f64,
    a: f64,
    n1: f64,
}

#[derive(Serialize)]
struct OdeRow {
    t: f64,
    n1: f64,
    n2: f64,
}

#[derive(Serialize)]
struct EigenRow {
    a: f64,
    n1_0: f64,
    n2_0: f64,
    phi1_0: f64,
    phi2_0: f64,
}

pub fn write_pde(dir: &Path, traj: &Trajectory) -> Result<()> {
    write_rows(dir, "summary.csv", &traj.summary)?;
    let rows = traj.states.iter().flat_map(|s| {
        let g = *s.n1.grid();
        (0..g.len()).map(move |i| Snapshot { t: s.t, a: g.node(i), n1: s.n1.at(i), n2: s.n2.at(i) })
    });
    write_rows(dir, "snapshots.csv", rows)?;
    write_plot_script(dir)
}

pub fn write_hybrid(dir: &Path, traj: &HybridTrajectory) -> Result<()> {
    write_rows(dir, "summary.csv", &traj.summary)?;
    let rows = traj.states.iter().flat_map(|s| {
        let g = *s.n1.grid();
        (0..g.len()).map(move |i| HybridSnapshot { t: s.t, a: g.node(i), n1: s.n1.at(i) })
    });
    write_rows(dir, "snapshots.csv", rows)?;
    write_plot_script(dir)
}

pub fn write_ode(dir: &Path, traj: &OdeTrajectory) -> Result<()> {
    let rows = (0..traj.times.len()).map(|i| OdeRow { t: traj.times[i], n1: traj.n1[i], n2: traj.n2[i] });
    write_rows(dir, "summary.csv", rows)?;
    write_plot_script(dir)
}

pub fn write_eigen(dir: &Path, eig: &EigenSolution) -> Result<()> {
    let g = *eig.n1_0.grid();
    let rows = (0..g.len()).map(|i| EigenRow {
        a: g.node(i),
        n1_0: eig.n1_0.at(i),
        n2_0: eig.n2_0.at(i),
        phi1_0: eig.phi1_0.at(i),
        phi2_0: eig.phi2_0.at(i),
    });
    write_rows(dir, "eigen.csv", rows)
}

pub fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<()> {
    write_rows(dir, name, rows)
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| CliError::Output(e.to_string()))
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), to_json(value)? + "\n")?;
    Ok(())
}

const PLOT_SCRIPT: &str = r#"# Plots every column of summary.csv against t.
# usage: python plot.py [DIR]
import sys
import pandas as pd
import matplotlib.pyplot as plt

d = sys.argv[1] if len(sys.argv) > 1 else "."
df = pd.read_csv(f"{d}/summary.csv")
cols = [c for c in df.columns if c != "t"]
fig, axes = plt.subplots(len(cols), 1, sharex=True, figsize=(7, 2 * len(cols)))
for ax, c in zip(axes if len(cols) > 1 else [axes], cols):
    ax.plot(df["t"], df[c])
    ax.set_ylabel(c)
axes[-1].set_xlabel("t") if len(cols) > 1 else axes.set_xlabel("t")
fig.tight_layout()
fig.savefig(f"{d}/summary.png", dpi=120)
"#;

pub fn write_plot_script(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("plot.py"), PLOT_SCRIPT)?;
    Ok(())
}

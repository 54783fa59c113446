use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use agepde::output;
use agepde::sweep::{run_sweep, SetSpec};
use agepde::verify::{run_hybrid_verify, run_verify, Status, VerifyOptions};
use agepde::{load_scenario, CliError, LoadedScenario, ModelKind, Result};
use agepde_core::ode_model::{integrate_ode, steady_state_ode};
use agepde_core::pde_full::{simulate, Mode, SolverConfig};
use agepde_core::pde_ode::{
    one_phase_and_comparisons, simulate_hybrid, stability_verdict, steady_state_hybrid, trivial_stability,
};
use agepde_core::spectral::{eigenfunctions, solve_lambda0};

#[derive(Parser)]
#[command(name = "agepde", version, about = "Numerical lab for a two-phase age-structured population model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario TOML file.
    scenario: PathBuf,
    /// Output directory for CSV/JSON files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `solver.t_end`.
    #[arg(long)]
    t_end: Option<f64>,
    /// Number of age cells; the time step equals the cell width.
    #[arg(long)]
    dt_cells: Option<usize>,
    /// Seed for the randomized checks.
    #[arg(long)]
    seed: Option<u64>,
    /// Print JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Growth rate, normalizers and eigenfunctions.
    Eigen(Common),
    /// Run the full age-structured model.
    SimulatePde(Common),
    #[command(subcommand)]
    Ode(OdeCommand),
    #[command(subcommand)]
    Hybrid(HybridCommand),
    /// Cartesian parameter sweep.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `key=v1,v2,...` with a dotted scenario key; repeatable.
        #[arg(long = "set", required = true)]
        sets: Vec<String>,
    },
    /// Run every applicable check for the scenario.
    Verify(Common),
}

#[derive(Subcommand)]
enum OdeCommand {
    /// Resultant cubic, its real roots and the accepted steady state.
    Steady(Common),
    /// Integrate and write `(t, n1, n2)`.
    Run(Common),
}

#[derive(Subcommand)]
enum HybridCommand {
    Steady(Common),
    Stability(Common),
    Compare(Common),
    Run(Common),
    Verify(Common),
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load(c: &Common) -> Result<LoadedScenario> {
    load_scenario(&c.scenario)
}

fn emit<T: Serialize>(c: &Common, name: &str, value: &T, text: impl FnOnce() -> String) -> Result<()> {
    if c.json {
        println!("{}", output::to_json(value)?);
    } else {
        print!("{}", text());
    }
    if let Some(dir) = &c.out {
        output::write_json(dir, name, value)?;
    }
    Ok(())
}

fn out_dir(c: &Common) -> Result<&Path> {
    c.out.as_deref().ok_or_else(|| CliError::Output("--out DIR is required".into()))
}

fn verify_options(c: &Common) -> VerifyOptions {
    VerifyOptions { seed: c.seed, n_cells: c.dt_cells, t_end: c.t_end, ..Default::default() }
}

fn run(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Eigen(c) => eigen(&c).map(|_| true),
        Command::SimulatePde(c) => simulate_pde(&c).map(|_| true),
        Command::Ode(OdeCommand::Steady(c)) => ode_steady(&c).map(|_| true),
        Command::Ode(OdeCommand::Run(c)) => ode_run(&c).map(|_| true),
        Command::Hybrid(h) => hybrid(h),
        Command::Sweep { common, sets } => sweep(&common, &sets).map(|_| true),
        Command::Verify(c) => {
            let sc = load(&c)?.scenario;
            let rep = run_verify(&sc, &verify_options(&c))?;
            emit(&c, "verify.json", &rep, || {
                let mut s = String::new();
                for ch in &rep.checks {
                    let tag = match ch.status {
                        Status::Pass => "PASS",
                        Status::Fail => "FAIL",
                        Status::Skipped => "SKIP",
                    };
                    s += &format!("{tag:4} {:26} {}\n", ch.name, ch.note);
                }
                s + &format!(
                    "{} passed, {} failed, {} skipped\n",
                    rep.count(Status::Pass),
                    rep.count(Status::Fail),
                    rep.count(Status::Skipped)
                )
            })?;
            Ok(rep.passed())
        }
    }
}

#[derive(Serialize)]
struct EigenReport {
    lambda0: f64,
    r0: f64,
    degenerate: bool,
    step_normalizer: f64,
    adjoint_normalizer: f64,
}

fn eigen(c: &Common) -> Result<()> {
    let sc = load(c)?.scenario;
    let p = sc.params(c.dt_cells)?;
    let l = solve_lambda0(&p)?;
    let eig = eigenfunctions(&p, l.value)?;
    let rep = EigenReport {
        lambda0: l.value,
        r0: l.r0,
        degenerate: l.degenerate,
        step_normalizer: eig.step_mass(&eig.n1_0, &eig.n2_0)?,
        adjoint_normalizer: eig.adjoint_mass(&eig.n1_0, &eig.n2_0)?,
    };
    emit(c, "eigen.json", &rep, || {
        format!(
            "lambda0 = {:.12}\nr0 = {:.12}\nstep normalizer = {:.12}\nadjoint normalizer = {:.12}\n",
            rep.lambda0, rep.r0, rep.step_normalizer, rep.adjoint_normalizer
        )
    })?;
    if let Some(dir) = &c.out {
        output::write_eigen(dir, &eig)?;
    }
    Ok(())
}

fn simulate_pde(c: &Common) -> Result<()> {
    let sc = load(c)?.scenario;
    if !matches!(sc.model, ModelKind::Pde | ModelKind::PdeLinear) {
        return Err(CliError::Scenario(format!("simulate-pde needs a pde model, got {}", sc.model.as_str())));
    }
    let dir = out_dir(c)?;
    let p = sc.params(c.dt_cells)?;
    let init = sc.pde_init(&p)?;
    let mode = match sc.env_table()? {
        Some(env) if sc.model == ModelKind::PdeLinear => Mode::Linear(env),
        _ => Mode::Nonlinear,
    };
    let cfg = SolverConfig::for_params(&p, c.t_end.unwrap_or(sc.solver.t_end), sc.solver.record_every, mode);
    let tr = simulate(&p, init, cfg)?;
    output::write_pde(dir, &tr)?;
    let last = tr.last();
    println!("t = {:.6}  N1 = {:.10}  N2 = {:.10}", last.t, last.n1_total, last.n2_total);
    Ok(())
}

fn ode_steady(c: &Common) -> Result<()> {
    let sc = load(c)?.scenario;
    let ss = steady_state_ode(&sc.ode_params()?)?;
    emit(c, "ode_steady.json", &ss, || {
        let q = ss.cubic;
        format!(
            "cubic coefficients (a3, a2, a1, a0) = ({:.6e}, {:.6e}, {:.6e}, {:.6e})\nreal roots = {:?}\nsteady state = ({:.12}, {:.12})\nresiduals = ({:.3e}, {:.3e})\n",
            q.a3, q.a2, q.a1, q.a0, ss.real_roots, ss.n1s, ss.n2s, ss.residuals.0, ss.residuals.1
        )
    })
}

fn ode_run(c: &Common) -> Result<()> {
    let sc = load(c)?.scenario;
    let dir = out_dir(c)?;
    let tr = integrate_ode(&sc.ode_params()?, sc.ode_init()?, c.t_end.unwrap_or(sc.solver.t_end), sc.solver.ode_dt)?;
    output::write_ode(dir, &tr)?;
    let (n1, n2) = tr.last();
    println!("N1 = {n1:.10}  N2 = {n2:.10}  clip events = {}", tr.clip_events);
    Ok(())
}

#[derive(Serialize)]
struct StabilityOutput {
    positive: Option<agepde_core::pde_ode::StabilityReport>,
    positive_error: Option<String>,
    trivial: agepde_core::pde_ode::TrivialStability,
}

fn hybrid(cmd: HybridCommand) -> Result<bool> {
    match cmd {
        HybridCommand::Steady(c) => {
            let sc = load(&c)?.scenario;
            let ss = steady_state_hybrid(&sc.params(c.dt_cells)?)?;
            emit(&c, "hybrid_steady.json", &ss, || {
                format!(
                    "lambda0 = {:.12}\nI = {:.12}\nkappa0 = {:.12}\nA = {:.6e}  B = {:.6e}  C = {:.6e}\ncase = {:?}\nadmissible = {}\nN1* = {:.12}\nN2* = {:.12}\n",
                    ss.lambda0, ss.i_integral, ss.kappa0, ss.a, ss.b, ss.c, ss.case_tag, ss.admissible, ss.n1s, ss.n2s
                )
            })?;
        }
        HybridCommand::Stability(c) => {
            let sc = load(&c)?.scenario;
            let p = sc.params(c.dt_cells)?;
            let positive = steady_state_hybrid(&p).and_then(|ss| stability_verdict(&p, &ss));
            let rep = StabilityOutput {
                trivial: trivial_stability(&p)?,
                positive_error: positive.as_ref().err().map(|e| e.to_string()),
                positive: positive.ok(),
            };
            emit(&c, "hybrid_stability.json", &rep, || {
                let mut s = match &rep.positive {
                    Some(st) => format!(
                        "characteristic polynomial: {:.6e} l^2 + {:.6e} l + {:.6e}\npositive state stable: {}\n",
                        st.coefficients[0], st.coefficients[1], st.coefficients[2], st.stable
                    ),
                    None => format!("positive state: {}\n", rep.positive_error.as_deref().unwrap_or("")),
                };
                s += &format!("R0 = {:.6}  zero state stable: {}\n", rep.trivial.r0, rep.trivial.stable);
                s
            })?;
        }
        HybridCommand::Compare(c) => {
            let sc = load(&c)?.scenario;
            let rep = one_phase_and_comparisons(&sc.params(c.dt_cells)?)?;
            emit(&c, "hybrid_compare.json", &rep, || {
                format!(
                    "one-phase N* = {:.12}\nN1* = {:.12}  N2* = {:.12}\nN1** = {:.12}  N2** = {:.12}\nN1*+N2* >= N*: {}\nN1** >= N1*: {}  N2** <= N2*: {}\n",
                    rep.n_star, rep.n1s, rep.n2s, rep.n1ss, rep.n2ss, rep.sum_ge, rep.n1_order, rep.n2_order
                )
            })?;
        }
        HybridCommand::Run(c) => {
            let sc = load(&c)?.scenario;
            let dir = out_dir(&c)?;
            let p = sc.params(c.dt_cells)?;
            let (n1, n2) = sc.hybrid_init(&p)?;
            let cfg = SolverConfig::for_params(&p, c.t_end.unwrap_or(sc.solver.t_end), sc.solver.record_every, Mode::Nonlinear);
            let tr = simulate_hybrid(&p, &n1, n2, &cfg)?;
            output::write_hybrid(dir, &tr)?;
            let last = tr.summary.last().expect("summary holds the initial row");
            println!(
                "t = {:.6}  N1 = {:.10}  N2 = {:.10}  lambda_t = {:.10}  kappa_t = {:.10}",
                last.t, last.n1_total, last.n2_total, last.lambda_t, last.kappa_t
            );
        }
        HybridCommand::Verify(c) => {
            let sc = load(&c)?.scenario;
            let rep = run_hybrid_verify(&sc, &verify_options(&c))?;
            if let Some(dir) = &c.out {
                output::write_json(dir, "hybrid_verify.json", &rep)?;
            }
            println!("{}", output::to_json(&rep)?);
            return Ok(rep.passed);
        }
    }
    Ok(true)
}

fn sweep(c: &Common, sets: &[String]) -> Result<()> {
    let text = std::fs::read_to_string(&c.scenario).map_err(|e| CliError::Io(format!("{}: {e}", c.scenario.display())))?;
    let mut base: toml::Value = toml::from_str(&text).map_err(|e| CliError::Scenario(e.to_string()))?;
    if let Some(t) = c.t_end {
        agepde::sweep::set_path(&mut base, "solver.t_end", toml::Value::Float(t))?;
    }
    let sets = sets.iter().map(|s| SetSpec::parse(s)).collect::<Result<Vec<_>>>()?;
    let rows = run_sweep(&base, &sets, c.dt_cells)?;
    if let Some(dir) = &c.out {
        output::write_csv(dir, "sweep.csv", &rows)?;
    }
    if c.json {
        println!("{}", output::to_json(&rows)?);
    } else {
        for r in &rows {
            println!("{:4} {:40} {:6} n1={:?} n2={:?} {}", r.index, r.settings, r.status, r.n1, r.n2, r.note);
        }
    }
    Ok(())
}

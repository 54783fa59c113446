use agepde_core::ode_model::{integrate_ode, steady_state_ode, OdeParams};
use agepde_core::pde_full::{simulate, Mode, SolverConfig};
use agepde_core::pde_ode::{simulate_hybrid, steady_state_hybrid};
use agepde_core::spectral::{eigenfunctions, gre_entropy, solve_lambda0};
use agepde_core::{AgeFunction, AgeGrid, Competition, ModelParams, PopulationState};

fn comp() -> Competition {
    Competition { eta1: 0.3, eta2: 0.1, c1: 0.8, c2: 0.4, ctilde1: 0.5, ctilde2: 1.0 }
}

#[test]
fn hybrid_and_ode_steady_states_agree_for_constant_rates() {
    for (b, k, d) in [(2.0, 1.0, 1.0), (3.0, 0.7, 0.5), (1.6, 1.2, 2.0)] {
        let g = AgeGrid::new(30.0 / k, 200_000).unwrap();
        let p = ModelParams::constant(g, b, 0.0, k, d, comp()).unwrap();
        let hy = steady_state_hybrid(&p).unwrap();
        let ode = steady_state_ode(&OdeParams::new(b, 0.0, k, d, comp()).unwrap()).unwrap();
        assert!((hy.n1s - ode.n1s).abs() < 1e-7, "{} {}", hy.n1s, ode.n1s);
        assert!((hy.n2s - ode.n2s).abs() < 1e-7, "{} {}", hy.n2s, ode.n2s);
    }
}

#[test]
fn full_pde_settles_on_the_hybrid_state() {
    let g = AgeGrid::new(25.0, 2_500).unwrap();
    let p = ModelParams::constant(g, 2.0, 0.0, 1.0, 1.0, comp()).unwrap();
    let ss = steady_state_hybrid(&p).unwrap();
    let n1 = AgeFunction::from_fn(g, |a| if a <= 1.0 { 1.0 } else { 0.0 }).unwrap();
    let n2 = AgeFunction::from_fn(g, |a| 0.3 * (-a).exp()).unwrap();
    let init = PopulationState::new(0.0, n1, n2, &p.psi1, &p.psi2).unwrap();
    let tr = simulate(&p, init, SolverConfig::for_params(&p, 60.0, 1_000, Mode::Nonlinear)).unwrap();
    let last = tr.last();
    assert!((last.n1_total - ss.n1s).abs() < 1e-3, "{} {}", last.n1_total, ss.n1s);
    assert!((last.n2_total - ss.n2s).abs() < 1e-2, "{} {}", last.n2_total, ss.n2s);
}

#[test]
fn hybrid_run_tracks_the_ode_for_constant_rates() {
    // with constant k the age profile plays no role beyond its total
    let (b, k, d) = (2.0, 1.0, 1.0);
    let g = AgeGrid::new(25.0, 5_000).unwrap();
    let p = ModelParams::constant(g, b, 0.0, k, d, comp()).unwrap();
    let init = AgeFunction::from_fn(g, |a| 2.0 * (-2.0 * a).exp()).unwrap();
    let tr = simulate_hybrid(&p, &init, 0.2, &SolverConfig::for_params(&p, 10.0, 1_000, Mode::Nonlinear)).unwrap();
    let ode = integrate_ode(&OdeParams::new(b, 0.0, k, d, comp()).unwrap(), (1.0, 0.2), 10.0, 1e-3).unwrap();
    let (x, y) = ode.last();
    let last = tr.summary.last().unwrap();
    assert!((last.n1_total - x).abs() < 1e-2 && (last.n2_total - y).abs() < 1e-2, "{last:?} {x} {y}");
}

#[test]
fn relative_entropy_decays_for_the_linear_system() {
    let g = AgeGrid::new(20.0, 4_000).unwrap();
    let p = ModelParams::constant(g, 1.0, 1.0, 1.0, 1.0, Competition::default()).unwrap();
    let l = solve_lambda0(&p).unwrap();
    let eig = eigenfunctions(&p, l.value).unwrap();
    let n1 = AgeFunction::from_fn(g, |a| if a <= 1.0 { 1.0 } else { 0.0 }).unwrap();
    let init = PopulationState::new(0.0, n1, AgeFunction::zeros(g), &p.psi1, &p.psi2).unwrap();
    let m0 = eig.step_mass(&init.n1, &init.n2).unwrap();
    let tr = simulate(&p, init, SolverConfig::for_params(&p, 4.0, 40, Mode::Nonlinear)).unwrap();
    let h: Vec<f64> = tr.states.iter().map(|s| gre_entropy(s, &eig, m0).unwrap()).collect();
    assert!(h.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    assert!(h.last().unwrap() < &(0.5 * h[0]));
}

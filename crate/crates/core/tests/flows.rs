use hmflow::calculus::dirichlet_energy;
use hmflow::flow::{run, FlowConfig, State, StopReason};
use hmflow::radial::{geometric_nodes, lift, RadialProfile};
use hmflow::{Grid, SphereField};

/// Bump profile returning to the north pole well inside the domain, so lifting it is faithful.
fn profile(amplitude: f64, lambda: f64) -> RadialProfile {
    let nodes = geometric_nodes(4.0, 2e-2, 1.03).unwrap();
    RadialProfile::from_fn(nodes, 1, |r| {
        let x = r / lambda;
        amplitude * x * (0.5 * (1.0 - x * x)).exp()
    })
    .unwrap()
}

fn energy_of(state: &State) -> f64 {
    match state {
        State::Field(u) => dirichlet_energy(u),
        State::Profile(p) => p.dirichlet_energy(),
    }
}

fn flow(initial: State, grid: Grid, t_end: f64) -> Vec<(f64, f64)> {
    let mut cfg = FlowConfig::new(grid, t_end, t_end, 0.2);
    cfg.diagnostic_stride = 5;
    let r = run(&cfg, initial).unwrap();
    assert_eq!(r.stop, StopReason::EndTime);
    r.records.iter().map(|rec| (rec.t, rec.energy)).collect()
}

#[test]
fn energy_decays_in_both_representations() {
    let grid = Grid::new(4.0, 129).unwrap();
    let p = profile(1.5, 0.8);
    for initial in [State::Field(lift(&p, grid).unwrap()), State::Profile(p.clone())] {
        let trace = flow(initial, grid, 0.05);
        assert!(trace.len() > 3);
        for w in trace.windows(2) {
            assert!(w[1].1 <= w[0].1 * (1.0 + 1e-12), "energy rose from {} to {} at t = {}", w[0].1, w[1].1, w[1].0);
        }
        assert!(trace.last().unwrap().1 < 0.99 * trace[0].1, "the flow should dissipate a non-harmonic map");
    }
}

#[test]
fn lifted_and_radial_flows_agree() {
    // The equivariant reduction is exact, so the two solvers should differ only by discretization.
    let grid = Grid::new(4.0, 129).unwrap();
    let p = profile(1.5, 0.8);
    let field = run(&FlowConfig::new(grid, 0.05, 0.05, 0.2), State::Field(lift(&p, grid).unwrap())).unwrap();
    let radial = run(&FlowConfig::new(grid, 0.05, 0.05, 0.2), State::Profile(p)).unwrap();
    let (ef, er) = (energy_of(&field.final_state), energy_of(&radial.final_state));
    assert!((ef - er).abs() < 5e-3 * er, "grid {ef} vs radial {er}");

    let State::Field(u) = &field.final_state else { panic!("grid run lost its representation") };
    let State::Profile(q) = &radial.final_state else { panic!("radial run lost its representation") };
    let relifted: SphereField = lift(q, grid).unwrap();
    let worst = u
        .values()
        .iter()
        .zip(relifted.values())
        .map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1]).hypot(a[2] - b[2]))
        .fold(0.0, f64::max);
    assert!(worst < 1e-2, "pointwise gap {worst}");
}

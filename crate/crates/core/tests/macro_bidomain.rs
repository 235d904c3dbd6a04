#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

use fascicle::bidomain::{run, InitialCondition, MacroMesh, MacroSolver, MacroState, Scenario, Scheme, Stimulus};
use fascicle::effective::EffectiveModel;
use fascicle::membrane::{lambda_min, FhnParams, IonicModel};
use proptest::prelude::*;

fn model(a_i: f64, a_e: f64) -> EffectiveModel {
    EffectiveModel {
        a_i_eff: a_i,
        a_e_eff: [[a_e, 0.0, 0.0], [0.0, a_e, 0.0], [0.0, 0.0, a_e]],
        gamma_density: 1.0,
        fhn: FhnParams::default(),
        boundary_scale: 1.0,
    }
}

fn sine_scenario(nodes: usize, dt: f64, t_end: f64, scheme: Scheme) -> Scenario {
    let mut s = Scenario::new(MacroMesh::interval(1.0, nodes).unwrap(), model(0.6, 1.5));
    s.stimulus = Stimulus::none();
    s.initial = InitialCondition::RestPlusSine { amplitude: 0.8 };
    s.dt = dt;
    s.t_end = t_end;
    s.scheme = scheme;
    s.snapshot_every = 0;
    s
}

fn l2_diff(solver: &MacroSolver, a: &MacroState, b: &MacroState) -> f64 {
    let d: Vec<f64> = a.v.iter().zip(&b.v).map(|(x, y)| x - y).collect();
    solver.norm(&d)
}

#[test]
fn equal_conductivities_split_the_potential_evenly() {
    let solver = MacroSolver::new(MacroMesh::interval(1.0, 65).unwrap(), model(1.3, 1.3), IonicModel::FitzhughNagumo).unwrap();
    let v: Vec<f64> = (0..65)
        .map(|n| if n == 0 || n == 64 { 0.0 } else { (std::f64::consts::PI * n as f64 / 64.0).sin() })
        .collect();
    let g = vec![0.0; 65];
    let s = solver.state_from(0.0, v.clone(), g, &Stimulus::none()).unwrap();
    for n in 0..65 {
        assert!((s.u_e[n] + 0.5 * v[n]).abs() < 1e-9, "node {n}: u_e {} v {}", s.u_e[n], v[n]);
        assert!((s.u_i[n] - s.u_e[n] - v[n]).abs() < 1e-12);
    }
}

#[test]
fn imex_is_first_order_in_time() {
    let t_end = 0.4;
    let reference = run(&sine_scenario(65, 2.5e-5, t_end, Scheme::Imex)).unwrap().final_state;
    let solver = sine_scenario(65, 1e-3, t_end, Scheme::Imex).solver().unwrap();
    let errs: Vec<f64> = [4e-3, 2e-3, 1e-3]
        .iter()
        .map(|&dt| l2_diff(&solver, &run(&sine_scenario(65, dt, t_end, Scheme::Imex)).unwrap().final_state, &reference))
        .collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.6..2.6).contains(&ratio), "ratio {ratio} from {errs:?}");
    }
}

#[test]
fn imex_and_implicit_agree_as_dt_shrinks() {
    let lambda = lambda_min(&FhnParams::default());
    let gap = |dt: f64| {
        let a = run(&sine_scenario(65, dt, 0.4, Scheme::Imex)).unwrap();
        let b = run(&sine_scenario(65, dt, 0.4, Scheme::Implicit { lambda })).unwrap();
        let solver = sine_scenario(65, dt, 0.4, Scheme::Imex).solver().unwrap();
        l2_diff(&solver, &a.final_state, &b.final_state)
    };
    let coarse = gap(4e-3);
    let fine = gap(1e-3);
    assert!(fine < 0.5 * coarse, "{coarse} -> {fine}");
    assert!(fine < 1e-2);
}

#[test]
fn box_mode_rest_state_is_a_fixed_point() {
    let mut s = Scenario::new(MacroMesh::cuboid([1.0, 0.25, 0.25], [17, 5, 5]).unwrap(), model(0.6, 1.5));
    s.stimulus = Stimulus::none();
    s.dt = 1e-3;
    s.t_end = 0.02;
    let r = run(&s).unwrap();
    let first = &r.snapshots[0];
    let drift = r.final_state.v.iter().zip(&first.v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(drift < 1e-10, "{drift}");
}

#[test]
fn oversized_step_is_rejected() {
    let s = sine_scenario(33, 0.6, 0.6, Scheme::Imex);
    assert!(run(&s).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn a_eff_is_symmetric_and_nonnegative(
        c in prop::collection::vec(-1.0f64..1.0, 8),
        d in prop::collection::vec(-1.0f64..1.0, 8),
        a_i in 0.2f64..3.0,
        a_e in 0.2f64..3.0,
    ) {
        let mesh = MacroMesh::interval(1.0, 41).unwrap();
        let solver = MacroSolver::new(mesh.clone(), model(a_i, a_e), IonicModel::FitzhughNagumo).unwrap().with_tol(1e-13);
        let field = |c: &[f64]| -> Vec<f64> {
            (0..mesh.num_nodes())
                .map(|n| {
                    let x = mesh.coord(n)[0];
                    c.iter().enumerate().map(|(m, c)| c * ((m + 1) as f64 * std::f64::consts::PI * x).sin()).sum::<f64>()
                })
                .map(|v| if v.abs() < 1e-14 { 0.0 } else { v })
                .collect()
        };
        let (x, y) = (field(&c), field(&d));
        let (ax, ay) = (solver.apply_a_eff(&x).unwrap(), solver.apply_a_eff(&y).unwrap());
        let scale = (solver.norm(&ax) * solver.norm(&y)).max(1e-300);
        prop_assert!((solver.inner(&ax, &y) - solver.inner(&x, &ay)).abs() <= 1e-8 * scale);
        prop_assert!(solver.inner(&ax, &x) >= -1e-12 * solver.norm(&ax) * solver.norm(&x));
    }
}

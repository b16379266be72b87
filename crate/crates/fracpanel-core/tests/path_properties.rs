//! Equilibrium-path properties of the continuation solver and study drivers.

#![allow(clippy::field_reassign_with_default)]
use fracpanel_core::assembly::LoadDirection;
use fracpanel_core::solve::LoadSchedule;
use fracpanel_core::study::{
    curvature_study, resolve, run_case, sweep, AnalysisKind, CaseConfig, MeshConfig, Radius,
};

fn nonlinear_config(q_bar: f64, n: usize) -> CaseConfig {
    let mut c = CaseConfig::default();
    c.mesh = MeshConfig {
        n1: Some(n),
        n2: Some(n),
        dynamic_rate: None,
    };
    c.load.q_bar = Some(q_bar);
    c.analysis = AnalysisKind::Nonlinear;
    c.solver.load_steps = LoadSchedule::Uniform(5);
    c
}

#[test]
fn halving_load_steps_leaves_shared_states_unchanged() {
    let mut coarse = nonlinear_config(10.0, 12);
    coarse.solver.load_steps = LoadSchedule::Uniform(4);
    let mut fine = coarse.clone();
    fine.solver.load_steps = LoadSchedule::Uniform(8);
    let rc_coarse = run_case(&coarse).unwrap();
    let rc_fine = run_case(&fine).unwrap();
    for pc in &rc_coarse.path {
        let pf = rc_fine
            .path
            .iter()
            .find(|p| (p.load_factor - pc.load_factor).abs() < 1e-12)
            .expect("shared load factor");
        let rel = ((pf.w_center - pc.w_center) / pc.w_center).abs();
        assert!(
            rel < 1e-3,
            "step-size sensitivity {rel} at lambda {}",
            pc.load_factor
        );
    }
}

#[test]
fn hardening_and_softening_orderings_along_the_path() {
    // Clamped panel under +e3: the load-deflection curve is concave
    // (membrane stretching stiffens), and the nonlocal deflection exceeds
    // the local one at every converged step.
    let config = nonlinear_config(30.0, 12);
    let record = run_case(&config).unwrap();
    let path = &record.path;
    assert!(path.len() >= 3);
    let mut prev_slope = f64::INFINITY;
    for pair in path.windows(2) {
        let slope = (pair[1].w_center - pair[0].w_center) / (pair[1].q_bar - pair[0].q_bar);
        assert!(
            slope < prev_slope * (1.0 + 1e-9),
            "secant slope must decrease: {slope} after {prev_slope}"
        );
        prev_slope = slope;
    }
    for p in path {
        let wl = p.w_local.unwrap();
        assert!(
            p.w_center > wl,
            "nonlocal deflection must exceed local at q_bar {}: {} vs {wl}",
            p.q_bar,
            p.w_center
        );
        assert!(p.w_bar.unwrap() > 1.0);
    }
}

#[test]
fn curvature_study_flags_instability_instead_of_failing() {
    // A starved iteration budget turns a heavy load step into a
    // non-convergence; the study must keep going and mark the branch.
    let mut config = nonlinear_config(40.0, 8);
    config.solver.max_iterations = 2;
    config.solver.load_steps = LoadSchedule::Uniform(2);
    let rows = curvature_study(&config, &[10.0], &[LoadDirection::NegE3]).unwrap();
    assert!(
        rows.iter().any(|r| r.status.starts_with("instability")),
        "expected an instability marker, got {:?}",
        rows.iter().map(|r| r.status.clone()).collect::<Vec<_>>()
    );
}

#[test]
fn plate_paths_are_mirror_symmetric_in_load_direction() {
    // R -> infinity: +e3 and -e3 give mirror-image responses.
    let mut up = nonlinear_config(20.0, 10);
    up.geometry.r = Radius(f64::INFINITY);
    let mut down = up.clone();
    down.load.direction = LoadDirection::NegE3;
    let ru = run_case(&up).unwrap();
    let rd = run_case(&down).unwrap();
    for (a, b) in ru.path.iter().zip(&rd.path) {
        assert!(
            (a.w_center + b.w_center).abs() <= 1e-8 * a.w_center.abs(),
            "mirror symmetry violated: {} vs {}",
            a.w_center,
            b.w_center
        );
    }
}

#[test]
fn sweep_is_deterministic_at_fixed_thread_count() {
    let mut base = CaseConfig::default();
    base.mesh = MeshConfig {
        n1: Some(8),
        n2: Some(8),
        dynamic_rate: None,
    };
    let a = sweep(&base, &[0.8, 0.9], &[0.5]).unwrap();
    let b = sweep(&base, &[0.8, 0.9], &[0.5]).unwrap();
    for (x, y) in a.iter().zip(&b) {
        let (rx, ry) = (x.result.as_ref().unwrap(), y.result.as_ref().unwrap());
        let rel = ((rx.w_center - ry.w_center) / rx.w_center).abs();
        assert!(rel <= 1e-12, "nondeterministic sweep: {rel}");
        assert_eq!(rx.w_bar, ry.w_bar);
    }
}

#[test]
fn solver_tolerances_are_honored_in_records() {
    let mut config = nonlinear_config(10.0, 8);
    config.solver.residual_tolerance = 1e-8;
    let record = run_case(&config).unwrap();
    for p in &record.path {
        assert!(p.residual <= 1e-8, "residual {} above tolerance", p.residual);
    }
    let rc = resolve(&config).unwrap();
    assert_eq!(rc.solver.residual_tolerance, 1e-8);
}

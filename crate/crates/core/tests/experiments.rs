use kdg::experiments::problems::{Problem, ProblemSpec};
use kdg::experiments::run::{l2_error, run, setup, totals, write_run, RunConfig};
use kdg::experiments::studies::{fixed_dt_solution, knapsack_sweep, spectral_abscissa};
use kdg::knapsack::Objective;
use kdg::rhs::{SchemeConfig, SchemeKind};
use kdg::timestep::{RkScheme, StepController};
use kdg::Error;

fn scratch(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("kdg-test-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn short_sod(kind: SchemeKind) -> RunConfig {
    let mut c = RunConfig::new(Problem::ModifiedSod, 2, 16, kind);
    c.t_final = Some(0.02);
    c.snapshots = 2;
    c
}

#[test]
fn identical_configs_write_identical_csv() {
    let config = short_sod(SchemeKind::Qk);
    let (a, b) = (scratch("det-a"), scratch("det-b"));
    write_run(&run(&config).unwrap(), &a).unwrap();
    write_run(&run(&config).unwrap(), &b).unwrap();
    for name in ["snapshot_0000.csv", "snapshot_0001.csv", "snapshot_0002.csv", "series.csv"] {
        let (x, y) = (std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap());
        assert!(!x.is_empty());
        assert_eq!(x, y, "{name} differs");
    }
    let header = std::fs::read_to_string(a.join("snapshot_0000.csv")).unwrap();
    assert!(header.starts_with("element,node,x,rho,mom1,E,p,theta_mean\n"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["problem"], "modified_sod");
    assert_eq!(summary["snapshot_times"].as_array().unwrap().len(), 3);
}

#[test]
fn snapshots_are_time_ordered() {
    let record = run(&short_sod(SchemeKind::Lk)).unwrap();
    assert!(record.snapshots.windows(2).all(|w| w[0].t < w[1].t));
    assert_eq!(record.snapshots.last().unwrap().t, 0.02);
    assert!(record.series.iter().all(|s| s.accepted && s.cfl > 0.0));
}

#[test]
fn periodic_runs_conserve_totals() {
    for kind in SchemeKind::ALL {
        for problem in [Problem::DensityWave, Problem::Khi] {
            let cells = if problem == Problem::Khi { 4 } else { 8 };
            let spec = ProblemSpec::new(problem, cells);
            let (disc, u0) = setup(&spec, 3, SchemeConfig::new(kind)).unwrap();
            let (_, u, _) =
                fixed_dt_solution(&spec, 3, SchemeConfig::new(kind), RkScheme::Rk4, 1e-3, 0.05).unwrap();
            let (t0, t1) = (totals(&disc, &u0), totals(&disc, &u));
            for k in 0..4 {
                let scale = t0[k].abs().max(1.0);
                assert!((t1[k] - t0[k]).abs() <= 1e-9 * scale, "{kind} {problem} var {k}");
            }
        }
    }
}

#[test]
fn sod_run_approaches_exact_solution() {
    let spec = ProblemSpec::new(Problem::Sod, 64);
    let (disc, u, _) =
        fixed_dt_solution(&spec, 2, SchemeConfig::new(SchemeKind::Qk), RkScheme::Rk4, 5e-4, 0.2).unwrap();
    let err = l2_error(&disc, &u, |x| spec.gas.prim_to_cons(&spec.exact_primitive(x, 0.2).unwrap()));
    assert!(err < 0.05, "L2 error {err}");
}

#[test]
fn solver_failure_carries_step_context() {
    let mut config = RunConfig::new(Problem::ModifiedSod, 3, 32, SchemeKind::Dgsem);
    config.controller = StepController::Fixed { dt: 1e-3 };
    match run(&config) {
        Err(e @ Error::AtStep { .. }) => {
            assert!(e.is_solver_failure());
            assert!(e.to_string().starts_with("step "));
        }
        other => panic!("expected a located failure, got {other:?}"),
    }
}

#[test]
fn unknown_problem_rejected() {
    assert!(matches!(
        kdg::experiments::problems::problem("vortex", 4),
        Err(Error::UnknownProblem(_))
    ));
}

#[test]
fn spectral_abscissa_dof_cap() {
    let spec = ProblemSpec::new(Problem::ModifiedSod, 400);
    let (disc, u0) = setup(&spec, 3, SchemeConfig::new(SchemeKind::Qk)).unwrap();
    assert!(matches!(spectral_abscissa(&disc, &u0), Err(Error::DofCap(4800, 4096))));
}

#[test]
fn sweep_linear_jumps_on_diagonal() {
    let s = knapsack_sweep(Objective::L1, 100, (0.1, 2.0), 0.8, [1.0, 1.0]).unwrap();
    assert!(s.max_diagonal_jump() >= 0.1);
    let q = knapsack_sweep(Objective::L2, 100, (0.1, 2.0), 0.8, [1.0, 1.0]).unwrap();
    assert!(q.max_diagonal_jump() < s.max_diagonal_jump());
}

/// Scaled-down long-time Kelvin-Helmholtz run; slow, run with `--ignored`.
#[test]
#[ignore]
fn khi_smoke_runs_to_t5() {
    let mut config = RunConfig::new(Problem::Khi, 3, 24, SchemeKind::Qk);
    config.scheme = SchemeConfig::new(SchemeKind::Qk).with_positivity(0.0, kdg::rhs::Granularity::Nodewise);
    config.stepper = RkScheme::Ssprk43;
    config.t_final = Some(5.0);
    let record = run(&config).unwrap();
    assert_eq!(record.snapshots.last().unwrap().t, 5.0);
}

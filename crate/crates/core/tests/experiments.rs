use mfg_congestion::experiment::*;
use mfg_congestion::*;

#[test]
fn every_preset_round_trips_through_toml() {
    for name in PRESET_NAMES {
        for (label, cfg) in preset(name).unwrap().runs {
            let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
            assert_eq!(back, cfg, "{name} {label}");
        }
    }
}

#[test]
fn small_presets_run_and_write_files() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["fig1", "critical-1d", "fig-2d-p13"] {
        let mut cfg = ExperimentConfig::from_toml(&format!("mode = \"reproduce\"\npreset = \"{name}\"\nn = 24\n")).unwrap();
        cfg.seed = Some(3);
        let reports = run(&cfg).unwrap();
        assert!(reports.iter().all(|(_, r)| r.converged), "{name}");
        let dir = tmp.path().join(name);
        let files = write_reports(&reports, &dir, &ALL_EMITS).unwrap();
        assert!(files.iter().any(|f| f.ends_with("summary.json")));
        assert!(files.iter().all(|f| f.exists()));
    }
}

#[test]
fn drifted_solution_is_feasible_and_stationary() {
    let grid = TorusGrid::new(1, 120).unwrap();
    let v = PotentialFamily::CosineShift { amplitude: 0.5, shift: 0.25 };
    let spec = ProblemSpec::from_family(grid, 1.5, 2.0, vec![2.0], &v, CouplingG::quadratic()).unwrap();
    let obj = DiscreteObjective::with_default_floor(spec).unwrap();
    let s = minimize(&obj, Init::Random(5), &SolveOptions::default()).unwrap();
    assert!(s.converged);
    assert!((s.m.mean() - 1.0).abs() < 1e-12);
    assert!(s.u.mean().abs() < 1e-12);
    assert!(s.m.values().iter().all(|x| *x >= 0.0));
    let again = minimize(&obj, Init::Uniform, &SolveOptions::default()).unwrap();
    assert!(s.m.max_abs_diff(&again.m) < 1e-6);
    assert!((s.hbar - again.hbar).abs() < 1e-8);
}

#[test]
fn two_dimensional_drift_has_one_minimizer() {
    let grid = TorusGrid::new(2, 16).unwrap();
    let v = PotentialFamily::SineCosineProduct { amplitude: 1.0, x_shift: 0.25, y_shift: 0.25 };
    let spec = ProblemSpec::from_family(grid, 1.5, 2.0, vec![1.0, 3.0], &v, CouplingG::quadratic()).unwrap();
    let obj = DiscreteObjective::with_default_floor(spec).unwrap();
    let a = minimize(&obj, Init::Uniform, &SolveOptions::default()).unwrap();
    let b = minimize(&obj, Init::Random(7), &SolveOptions::default()).unwrap();
    assert!(a.converged && b.converged);
    assert!(a.m.max_abs_diff(&b.m) < 1e-6, "{}", a.m.max_abs_diff(&b.m));
}

#[test]
fn table2_errors_decrease() {
    let problem = ProblemConfig {
        dim: 2,
        n: 10,
        alpha: 1.5,
        gamma: 2.0,
        drift: Some(vec![0.0, 0.0]),
        q: None,
        potential: PotentialFamily::SineCosineProduct { amplitude: 10.0, x_shift: 0.25, y_shift: 0.25 },
        coupling: CouplingG::quadratic(),
    };
    let conv = ConvergenceConfig { ns: vec![12, 24], reference: Reference::Continuous };
    let rep = convergence_study(&problem, &conv, &SolveOptions::default(), &Init::Uniform).unwrap();
    assert!(rep.rows.iter().all(|r| r.converged));
    assert!(rep.rows[1].max_abs_error < rep.rows[0].max_abs_error);
    assert!(rep.order.unwrap() > 1.0);
    assert_eq!(rep.to_csv().lines().next().unwrap(), "n,max_abs_error,mean_abs_error");
}

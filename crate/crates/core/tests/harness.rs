use mtifp::diagnostics::SweepAxis;
use mtifp::harness::{error_table, run_command, Command, ExperimentConfig, Format};
use mtifp::{InitialData, SolverError};
use serde_json::Value;

fn small_temporal(cache: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::defaults(Command::TableTemporal);
    cfg.sweep.eps = vec![0.5, 0.125];
    cfg.sweep.h = vec![0.5];
    cfg.sweep.tau = vec![0.1, 0.025];
    cfg.sweep.t_end = 0.5;
    cfg.reference.h = 0.5;
    cfg.reference.tau = 0.1 / 64.0;
    cfg.reference.cache_dir = Some(cache.to_path_buf());
    cfg.output.formats = vec![Format::Csv, Format::Json];
    cfg
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8(bytes.to_vec()).unwrap()
}

#[test]
fn warm_cache_reproduces_tables_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_temporal(dir.path());
    let cold = run_command(Command::TableTemporal, &cfg).unwrap();
    let entries = std::fs::read_dir(dir.path()).unwrap().count();
    assert_eq!(entries, 2, "one cached reference per eps");
    let warm = run_command(Command::TableTemporal, &cfg).unwrap();
    for name in ["table_temporal.csv", "table_temporal.json"] {
        assert_eq!(cold.file(name).unwrap(), warm.file(name).unwrap(), "{name}");
    }
    let mut uncached = cfg.clone();
    uncached.reference.cache_dir = None;
    let fresh = run_command(Command::TableTemporal, &uncached).unwrap();
    // the hash covers the cache directory, so compare the data lines only
    let data = |b: &[u8]| {
        text(b)
            .lines()
            .filter(|l| !l.starts_with('#'))
            .map(String::from)
            .collect::<Vec<_>>()
    };
    assert_eq!(
        data(cold.file("table_temporal.csv").unwrap()),
        data(fresh.file("table_temporal.csv").unwrap())
    );
}

#[test]
fn corrupt_cache_entry_is_recomputed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_temporal(dir.path());
    let first = run_command(Command::TableTemporal, &cfg).unwrap();
    for e in std::fs::read_dir(dir.path()).unwrap() {
        std::fs::write(e.unwrap().path(), b"garbage").unwrap();
    }
    let second = run_command(Command::TableTemporal, &cfg).unwrap();
    assert_eq!(
        first.file("table_temporal.csv"),
        second.file("table_temporal.csv")
    );
}

#[test]
fn table_csv_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_temporal(dir.path());
    let out = run_command(Command::TableTemporal, &cfg).unwrap();
    let csv = text(out.file("table_temporal.csv").unwrap());
    let meta: Vec<&str> = csv.lines().filter(|l| l.starts_with('#')).collect();
    assert!(meta.iter().any(|l| l.starts_with("# config_hash=")));
    assert!(meta.iter().any(|l| l.starts_with("# norm=")));
    assert!(meta.iter().any(|l| l.starts_with("# reference=")));
    let body: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body[0], "eps,h,tau,e_h1,edot_h1,rate");
    // 2 eps x 2 tau plus one uniform row per tau
    assert_eq!(body.len(), 1 + 4 + 2);
    for row in &body[1..5] {
        let f: Vec<&str> = row.split(',').collect();
        assert_eq!(f.len(), 6);
        for v in &f[..5] {
            assert!(v.parse::<f64>().unwrap().is_finite());
        }
    }
    assert!(body[5].starts_with("max,") && body[6].starts_with("max,"));

    let json: Value = serde_json::from_slice(out.file("table_temporal.json").unwrap()).unwrap();
    assert_eq!(json["axis"], "tau");
    assert_eq!(json["cells"].as_array().unwrap().len(), 4);
    assert_eq!(json["uniform"].as_array().unwrap().len(), 2);
    assert!(json["metadata"]["config_hash"].is_string());
    for key in [
        "eps",
        "h",
        "tau",
        "e_h1",
        "edot_h1",
        "l2",
        "energy_err",
        "rate",
    ] {
        assert!(json["cells"][0].get(key).is_some(), "{key}");
    }
}

#[test]
fn zero_data_gives_zero_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_temporal(dir.path());
    cfg.problem.data = InitialData::Zero;
    let run = error_table(&cfg, SweepAxis::Tau).unwrap();
    assert!(run
        .table
        .cells
        .iter()
        .all(|c| c.e_h1 == 0.0 && c.edot_h1 == 0.0 && c.rate.is_none()));
    assert!(run.table.uniform.iter().all(|u| u.e_max == 0.0));
}

#[test]
fn spatial_table_uses_one_tau() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::defaults(Command::TableSpatial);
    cfg.sweep.eps = vec![0.5];
    cfg.sweep.h = vec![1.0, 0.5, 0.25];
    cfg.sweep.tau = vec![0.01];
    cfg.sweep.t_end = 0.2;
    cfg.reference.h = 1.0 / 16.0;
    cfg.reference.tau = 0.01;
    cfg.reference.cache_dir = Some(dir.path().to_path_buf());
    let run = error_table(&cfg, SweepAxis::H).unwrap();
    let row = run.table.row(0);
    assert!(row.iter().all(|c| c.tau == 0.01));
    assert!(row[0].e_h1 > row[1].e_h1 && row[1].e_h1 > row[2].e_h1);
    assert!(row[1].rate.unwrap() > 2.0);
}

#[test]
fn invalid_configs_report_every_problem() {
    let mut cfg = ExperimentConfig::defaults(Command::TableTemporal);
    cfg.sweep.eps = vec![-1.0];
    cfg.sweep.tau = vec![];
    let err = run_command(Command::TableTemporal, &cfg).unwrap_err();
    assert_eq!(err.kind(), "config");
    let report = err.report();
    assert_eq!(report["status"], "failed");
    assert!(report["problems"].as_array().unwrap().len() >= 2);
    assert!(matches!(
        ExperimentConfig::from_json_over(Command::Solve, r#"{"sweep": {"bogus": 1}}"#),
        Err(SolverError::Config(_) | SolverError::Json(_))
    ));
}

#[test]
fn interp_endpoints_are_exact_and_schema_holds() {
    let mut cfg = ExperimentConfig::defaults(Command::InterpError);
    cfg.sweep.eps = vec![0.2];
    cfg.sweep.h = vec![0.25];
    cfg.sweep.tau = vec![0.05];
    cfg.sweep.t_end = 0.2;
    cfg.reference.tau = 0.05 / 64.0;
    let out = run_command(Command::InterpError, &cfg).unwrap();
    let s = &out.summary["series"][0];
    assert!(s["endpoint_mismatch"].as_f64().unwrap() <= 1e-13);
    assert!(s["max_error"].as_f64().unwrap() < 0.5);
    let csv = text(out.file("interp_error.csv").unwrap());
    let body: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body[0], "eps,tau,t,u_ref,u_interp,error");
    assert_eq!(body.len(), 1 + 257);
    assert!(body[1..].iter().all(|l| l.split(',').count() == 6));
}

#[test]
fn limits_csv_schema() {
    let mut cfg = ExperimentConfig::defaults(Command::Limits);
    cfg.sweep.eps = vec![0.2];
    cfg.sweep.h = vec![0.25];
    cfg.sweep.tau = vec![1e-3];
    cfg.sweep.t_end = 0.5;
    cfg.sweep.sample_dt = 0.25;
    let out = run_command(Command::Limits, &cfg).unwrap();
    let csv = text(out.file("limits.csv").unwrap());
    let body: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body[0], "eps,gamma,t,e_sw,e_we");
    // three gamma choices times samples at t = 0, 0.25, 0.5
    assert_eq!(body.len(), 1 + 9);
    let gammas: std::collections::BTreeSet<&str> = body[1..]
        .iter()
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(gammas.len(), 3);
    assert!(out.summary["c_gamma"].as_object().unwrap().len() == 3);
}

#[test]
fn dynamics_snapshots_start_from_data_and_stay_symmetric() {
    let mut cfg = ExperimentConfig::defaults(Command::Dynamics2d);
    cfg.sweep.eps = vec![0.5];
    cfg.sweep.h = vec![40.0 / 32.0];
    cfg.sweep.tau = vec![0.05];
    cfg.sweep.t_end = 0.2;
    cfg.sweep.sample_dt = 0.1;
    let out = run_command(Command::Dynamics2d, &cfg).unwrap();
    let names: Vec<&str> = out.files.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names.len(), 3, "{names:?}");
    let first = text(out.file(names[0]).unwrap());
    assert!(first.starts_with("# shape=32,32\n"));
    let rows: Vec<Vec<f64>> = first
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 32);
    let h = 40.0 / 32.0;
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), 32);
        for (j, &u) in row.iter().enumerate() {
            let (x, y) = (-20.0 + i as f64 * h, -20.0 + j as f64 * h);
            assert_eq!(u, InitialData::TwoGaussian.phi1(x, y));
        }
    }
    assert!(out.summary["runs"][0]["x_asymmetry"].as_f64().unwrap() < 1e-12);
}

#[test]
fn solve_to_time_zero_returns_the_data() {
    let mut cfg = ExperimentConfig::defaults(Command::Solve);
    cfg.sweep.eps = vec![0.5];
    cfg.sweep.h = vec![0.5];
    cfg.sweep.t_end = 0.0;
    let out = run_command(Command::Solve, &cfg).unwrap();
    assert_eq!(out.summary["runs"][0]["steps"], 0);
    let csv = text(out.file("solve_eps5e-1.csv").unwrap());
    let body: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body[0], "x,u,udot");
    for l in &body[1..] {
        let f: Vec<f64> = l.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(f[1], InitialData::SechGauss.phi1(f[0], 0.0));
        assert_eq!(f[2], InitialData::SechGauss.phi2(f[0], 0.0) / 0.25);
    }
}

#[test]
fn coefficient_dump_schema() {
    let mut cfg = ExperimentConfig::defaults(Command::CoeffDump);
    cfg.output.formats = vec![Format::Csv, Format::Json];
    let out = run_command(Command::CoeffDump, &cfg).unwrap();
    assert_eq!(out.files.len(), 2);
    let csv = text(&out.files[0].1);
    let header = csv.lines().find(|l| !l.starts_with('#')).unwrap();
    assert!(header.starts_with("l,mu,"), "{header}");
    let json: Value = serde_json::from_slice(&out.files[1].1).unwrap();
    assert_eq!(json["modes"].as_array().unwrap().len(), 32);
}

#[test]
fn default_solve_conserves_energy() {
    let cfg = ExperimentConfig::defaults(Command::Solve);
    let out = run_command(Command::Solve, &cfg).unwrap();
    let run = &out.summary["runs"][0];
    assert_eq!(run["steps"], 10_000);
    // pinned from the first run: about 2e-10
    assert!(run["energy_drift"].as_f64().unwrap() < 1e-6, "{run}");
}

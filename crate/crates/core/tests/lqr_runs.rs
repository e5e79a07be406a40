use std::fs;

use egn::bench::{self, LqrConfig, LqrEvaluatorKind, LqrRow};
use egn::lqr::LqrSystem;
use egn::Error;

#[test]
fn scalar_builtin_recovers_the_riccati_gain() {
    let rows = bench::run_lqr(&LqrSystem::scalar(), &LqrConfig::default(), 0).unwrap();
    assert_eq!(rows[0].outer_iter, 0);
    assert!((rows[0].k_error - 0.265564).abs() < 1e-6);
    assert!(rows.last().unwrap().k_error < 1e-6);
    assert!(rows.windows(2).all(|w| w[1].wall_seconds >= w[0].wall_seconds));
}

#[test]
fn four_state_builtin_recovers_the_riccati_gain() {
    let rows = bench::run_lqr(&LqrSystem::four_state(), &LqrConfig::default(), 3).unwrap();
    assert!(rows.last().unwrap().k_error < 1e-4);
}

#[test]
fn cg_backed_evaluation_also_converges() {
    let mut cfg = LqrConfig::default();
    cfg.optim.kind = LqrEvaluatorKind::Cg;
    cfg.optim.cg_iters = 20;
    let rows = bench::run_lqr(&LqrSystem::scalar(), &cfg, 1).unwrap();
    assert!(rows.last().unwrap().k_error < 1e-6);
}

#[test]
fn same_seed_gives_the_same_curve() {
    let strip = |rows: Vec<LqrRow>| {
        rows.into_iter()
            .map(|r| (r.outer_iter, r.k_error.to_bits(), r.k_change.map(f64::to_bits), r.eval_iterations))
            .collect::<Vec<_>>()
    };
    let sys = LqrSystem::four_state();
    let cfg = LqrConfig::default();
    assert_eq!(
        strip(bench::run_lqr(&sys, &cfg, 9).unwrap()),
        strip(bench::run_lqr(&sys, &cfg, 9).unwrap())
    );
}

#[test]
fn cmd_lqr_reads_system_and_config_files() {
    let dir = tempfile::tempdir().unwrap();
    let sys_path = dir.path().join("sys.toml");
    fs::write(
        &sys_path,
        "A = [[0.5]]\nB = [[1.0]]\nSigma = [[0.0]]\nQ = [[-1.0]]\nR = [[-1.0]]\ngamma = 1.0\n",
    )
    .unwrap();
    let cfg_path = dir.path().join("lqr.toml");
    fs::write(
        &cfg_path,
        "name = \"demo\"\nseeds = [0, 1]\n[optim]\nkind = \"egn\"\nlambda = 1e-6\nbatch = 32\n[exploration]\nstd = 0.2\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let report = bench::cmd_lqr(sys_path.to_str().unwrap(), Some(&cfg_path), &out).unwrap();
    assert_eq!(report.csv_paths.len(), 2);
    assert!(report.summaries.iter().all(|s| s.status == "ok" && s.final_k_error.unwrap() < 1e-6));
    let rows: Vec<LqrRow> = bench::read_rows(&out.join("demo_seed1.csv")).unwrap();
    assert_eq!(rows[0].seed, 1);
    let summary = fs::read_to_string(&report.summary_path).unwrap();
    assert_eq!(summary.lines().count(), 2);
}

#[test]
fn indefinite_systems_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let sys_path = dir.path().join("bad.toml");
    fs::write(&sys_path, "A = [[0.5]]\nB = [[1.0]]\nQ = [[-1.0]]\nR = [[1.0]]\ngamma = 0.9\n").unwrap();
    let err = bench::cmd_lqr(sys_path.to_str().unwrap(), None, dir.path()).unwrap_err();
    assert!(matches!(err, Error::NotDefinite(_)), "{err:?}");
}

#[test]
fn unknown_builtin_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = bench::cmd_lqr("builtin:nope", None, dir.path()).unwrap_err();
    assert!(matches!(err, Error::Io(_)));
}

#[test]
fn lqr_config_errors_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    fs::write(&path, "[optim]\nbatch = 0\n").unwrap();
    match LqrConfig::load(&path) {
        Err(Error::Config { key, .. }) => assert_eq!(key, "optim.batch"),
        other => panic!("{other:?}"),
    }
    fs::write(&path, "[optim]\nkind = \"newton\"\n").unwrap();
    match LqrConfig::load(&path) {
        Err(Error::Config { key, .. }) => assert_eq!(key, "optim.kind"),
        other => panic!("{other:?}"),
    }
}

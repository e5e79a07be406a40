use std::fs;
use std::process::Command;

fn egn() -> Command {
    Command::new(env!("CARGO_BIN_EXE_egn"))
}

fn error_line(stderr: &[u8]) -> serde_json::Value {
    let text = String::from_utf8_lossy(stderr);
    let line = text.lines().last().expect("stderr line");
    serde_json::from_str(line).expect("json error line")
}

#[test]
fn lqr_builtin_writes_curves_into_the_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = egn()
        .args(["lqr", "builtin:scalar"])
        .env("EGN_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("lqr_seed0.csv")).unwrap();
    assert!(csv.starts_with("run_id,seed,outer_iter,wall_seconds,k_error,k_change,eval_iterations"));
    assert!(dir.path().join("lqr_summary.jsonl").exists());
}

#[test]
fn bench_solver_small_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = egn()
        .args([
            "bench-solver", "--d", "500,1e3", "--b", "4", "--c", "2", "--solvers", "egn,smw,cg:5",
            "--repeats", "2", "--warmup", "0",
        ])
        .env("EGN_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("bench_solver.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
    assert!(csv.lines().next().unwrap().contains("egn_smw_ratio"));
}

#[test]
fn profile_batch_small_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = egn()
        .args(["profile-batch", "--models", "4-8-1", "--b", "8,16", "--repeats", "2"])
        .env("EGN_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("profile_batch.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn train_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "name = \"cli\"\nmax_steps = 10\neval_every = 5\nseeds = [0, 1]\n\
         [model]\nwidths = [2, 4, 1]\n[data]\nsynthetic = \"regression\"\nn = 200\nfeatures = 2\n\
         [optim]\nkind = \"egn\"\n",
    )
    .unwrap();
    let out = egn()
        .arg("train")
        .arg(&cfg)
        .env("EGN_OUT_DIR", dir.path().join("out"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out/cli_seed1.csv").exists());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 3);
}

#[test]
fn config_error_is_a_json_line_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(
        &cfg,
        "max_steps = 10\nseeds = [0]\n[model]\nwidths = [2, 1]\n[data]\nsynthetic = \"regression\"\n\
         [optim]\nkind = \"egn\"\nlr = -2.0\n",
    )
    .unwrap();
    let out = egn().arg("train").arg(&cfg).env("EGN_OUT_DIR", dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = error_line(&out.stderr);
    assert_eq!(err["error"]["kind"], "config");
    assert!(err["error"]["message"].as_str().unwrap().contains("optim.lr"));
}

#[test]
fn missing_config_file_is_an_io_error() {
    let out = egn().args(["train", "/nonexistent/run.toml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_line(&out.stderr)["error"]["kind"], "io");
}

#[test]
fn non_definite_system_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let sys = dir.path().join("sys.toml");
    fs::write(&sys, "A = [[0.5]]\nB = [[1.0]]\nQ = [[-1.0]]\nR = [[2.0]]\ngamma = 0.9\n").unwrap();
    let out = egn().arg("lqr").arg(&sys).env("EGN_OUT_DIR", dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_line(&out.stderr)["error"]["kind"], "not_definite");
}

#[test]
fn usage_errors_are_machine_readable() {
    let out = egn().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out.stderr)["error"]["kind"], "usage");
}

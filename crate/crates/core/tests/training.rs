use std::fs;
use std::path::Path;

use egn::bench::{self, RunConfig, RunSummary};
use egn::data;
use egn::Error;

fn config(body: &str) -> String {
    format!(
        "name = \"t\"\nbatch_size = 32\nmax_steps = 60\neval_every = 20\nseeds = [0, 1, 2]\n\
         [model]\nwidths = [3, 8, 1]\n[data]\nsynthetic = \"regression\"\nn = 400\nfeatures = 3\n{body}"
    )
}

fn summary_lines(path: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn sweep_writes_one_csv_per_seed_and_an_aggregate_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_toml_str(&config("[optim]\nkind = \"egn\"\n")).unwrap();
    let report = bench::run_sweep(&cfg, dir.path(), dir.path()).unwrap();
    assert_eq!(report.metrics_paths.len(), 3);
    let lines = summary_lines(&report.summary_path);
    assert_eq!(lines.len(), 4);
    let runs: Vec<RunSummary> = lines[..3]
        .iter()
        .map(|v| serde_json::from_value(v.clone()).unwrap())
        .collect();
    assert!(runs.iter().all(|r| r.status == "ok" && r.steps == 60));
    assert_eq!(lines[3]["aggregate"], true);
    assert_eq!(lines[3]["runs"], 3);
    assert_eq!(lines[3]["metric"], "rmse");

    for path in &report.metrics_paths {
        let records = bench::read_metrics_csv(path).unwrap();
        let steps: Vec<usize> = records.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 20, 40, 60]);
        assert!(records.windows(2).all(|w| w[1].wall_seconds >= w[0].wall_seconds));
        assert!(records.iter().all(|r| r.train_loss.is_finite() && r.eval_metric >= 0.0));
        assert!(records[0].alpha.is_none());
        assert!(records[1..].iter().all(|r| r.alpha.is_some() && r.lambda.is_some()));
    }
}

#[test]
fn first_order_runs_leave_lambda_empty() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_toml_str(&config("[optim]\nkind = \"adam\"\n")).unwrap();
    let report = bench::run_sweep(&cfg, dir.path(), dir.path()).unwrap();
    let text = fs::read_to_string(&report.metrics_paths[0]).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(
        header,
        "run_id,seed,step,wall_seconds,eval_seconds,train_loss,eval_metric,alpha,lambda"
    );
    assert!(text.lines().nth(2).unwrap().ends_with(','));
}

#[test]
fn egn_training_reduces_test_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = config("[optim]\nkind = \"egn\"\nmomentum = 0.9\n").replace("max_steps = 60", "max_steps = 300");
    let cfg = RunConfig::from_toml_str(&text).unwrap();
    let report = bench::run_sweep(&cfg, dir.path(), dir.path()).unwrap();
    for run in &report.runs {
        let first = run.records.first().unwrap().eval_metric;
        let last = run.final_metric().unwrap();
        assert!(last < 0.5 * first, "rmse {first} -> {last}");
    }
}

#[test]
fn diverging_runs_fail_without_stopping_the_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_toml_str(&config("[optim]\nkind = \"sgd\"\nlr = 1e9\n")).unwrap();
    let report = bench::run_sweep(&cfg, dir.path(), dir.path()).unwrap();
    assert_eq!(report.runs.len(), 3);
    assert!(report.runs.iter().all(|r| r.error.is_some()));
    assert!(report.metrics_paths.iter().all(|p| p.exists()));
    assert_eq!(report.aggregate.completed, 0);
    let lines = summary_lines(&report.summary_path);
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0]["status"], "failed");
}

#[test]
fn classification_reports_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let text = "name = \"cls\"\nmax_steps = 200\neval_every = 100\nseeds = [0]\nbatch_size = 64\n\
                [model]\nwidths = [2, 16, 3]\n\
                [data]\nsynthetic = \"classification\"\nn = 900\nfeatures = 2\nclasses = 3\nseparation = 4.0\n\
                [optim]\nkind = \"egn\"\n";
    let cfg = RunConfig::from_toml_str(text).unwrap();
    let report = bench::run_sweep(&cfg, dir.path(), dir.path()).unwrap();
    assert_eq!(report.aggregate.metric, "accuracy");
    let acc = report.runs[0].final_metric().unwrap();
    assert!(acc > 0.9, "accuracy {acc}");
}

#[test]
fn csv_dataset_path_is_resolved_against_the_config_directory() {
    let dir = tempfile::tempdir().unwrap();
    let ds = data::synth_regression(300, 2, 0.1, 5).unwrap();
    data::write_csv(&ds, dir.path().join("train.csv")).unwrap();
    let text = "name = \"csv\"\nmax_steps = 20\neval_every = 10\nseeds = [0]\n\
                [model]\nwidths = [2, 4, 1]\n\
                [data]\npath = \"train.csv\"\ntarget = \"y\"\nstandardize_target = true\n\
                [optim]\nkind = \"sgd\"\n";
    let cfg_path = dir.path().join("run.toml");
    fs::write(&cfg_path, text).unwrap();
    let out = dir.path().join("out");
    let report = bench::cmd_train(&cfg_path, &out).unwrap();
    assert!(report.runs[0].error.is_none());
    assert!(out.join("csv_seed0.csv").exists());
    assert!(out.join("csv_summary.jsonl").exists());
}

#[test]
fn same_config_and_seed_reproduce_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_toml_str(&config("[optim]\nkind = \"egn\"\nmomentum = 0.5\n")).unwrap();
    let a = bench::run_sweep(&cfg, dir.path(), &dir.path().join("a")).unwrap();
    let b = bench::run_sweep(&cfg, dir.path(), &dir.path().join("b")).unwrap();
    for (ra, rb) in a.runs.iter().zip(&b.runs) {
        let strip = |r: &bench::RunResult| {
            r.records
                .iter()
                .map(|m| (m.step, m.train_loss.to_bits(), m.eval_metric.to_bits(), m.alpha, m.lambda))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(ra), strip(rb));
    }
}

fn config_error(text: &str) -> (String, String) {
    match RunConfig::from_toml_str(text) {
        Err(Error::Config { key, message }) => (key, message),
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn config_errors_name_the_key() {
    let (key, _) = config_error(&config("[optim]\nkind = \"egn\"\nlr = -1.0\n"));
    assert_eq!(key, "optim.lr");
    let (key, _) = config_error(&config("[optim]\nkind = \"egn\"\nlambda0 = 0.0\n"));
    assert_eq!(key, "optim.lambda0");
    let (key, msg) = config_error(&config("[optim]\nkind = \"egn\"\nmomentun = 0.9\n"));
    assert_eq!(key, "optim.momentun");
    assert!(msg.contains("momentun"), "{msg}");
    let (key, _) = config_error(&config("[optim]\nkind = \"newton\"\n"));
    assert_eq!(key, "optim.kind");
    let (key, _) = config_error(&config("[optim]\nkind = \"egn\"\n").replace("batch_size = 32", "batch_size = 0"));
    assert_eq!(key, "batch_size");
    let (key, _) = config_error(&config("[optim]\nkind = \"egn\"\n").replace("seeds = [0, 1, 2]", "seeds = []"));
    assert_eq!(key, "seeds");
    let (key, _) = config_error(&config("[optim]\nkind = \"egn\"\nschedule = \"diminishing\"\nalpha0 = 0.5\n"));
    assert_eq!(key, "optim.a");
    let (key, _) = config_error(&config("[optim]\nkind = \"egn\"\nschedule = \"diminishing\"\nalpha0 = 0.5\na = 1.5\n"));
    assert_eq!(key, "optim.a");
    let (key, _) = config_error(&config("[optim]\nkind = \"egn\"\nline_search = { kappa = 2.0 }\n"));
    assert_eq!(key, "optim.line_search.kappa");
    let (key, _) = config_error(&config("[optim]\nkind = \"egn\"\nsolver = \"lu\"\n"));
    assert_eq!(key, "optim.solver");
    let (key, _) = config_error(&config("[optim]\nkind = \"egn\"\n").replace("max_steps = 60\n", ""));
    assert_eq!(key, "max_seconds");
    let (key, _) = config_error("seeds = [0]\nmax_steps = 1\n[model]\nwidths = [1, 1]\n[optim]\nkind = \"egn\"\n");
    assert_eq!(key, "data");
}

#[test]
fn model_widths_must_match_the_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_toml_str(&config("[optim]\nkind = \"egn\"\n").replace("[3, 8, 1]", "[5, 8, 1]")).unwrap();
    match bench::run_sweep(&cfg, dir.path(), dir.path()) {
        Err(Error::Config { key, .. }) => assert_eq!(key, "model.widths"),
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn cg_backed_and_diminishing_variants_run() {
    let dir = tempfile::tempdir().unwrap();
    for optim in [
        "[optim]\nkind = \"egn\"\ncg_iters = 5\n",
        "[optim]\nkind = \"egn\"\nline_search = false\nschedule = \"diminishing\"\nalpha0 = 0.5\na = 0.6\n",
        "[optim]\nkind = \"egn\"\nsolver = \"smw\"\n",
        "[optim]\nkind = \"egn\"\nsolver = \"qr\"\n",
    ] {
        let cfg = RunConfig::from_toml_str(&config(optim)).unwrap();
        let report = bench::run_sweep(&cfg, dir.path(), dir.path()).unwrap();
        assert!(report.runs.iter().all(|r| r.error.is_none()), "{optim}");
    }
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_str().unwrap().to_string();
        if name.starts_with("system_") {
            egn::lqr::LqrSystem::load(&path).unwrap();
        } else if name.starts_with("lqr_") {
            bench::LqrConfig::load(&path).unwrap();
        } else {
            RunConfig::load(&path).unwrap();
        }
        seen += 1;
    }
    assert!(seen >= 6);
}

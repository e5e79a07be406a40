//! Experiment harness: seeded training sweeps, solver microbenchmarks,
//! batch-size profiling and LQR error curves. Everything is written as CSV
//! plus a JSON-lines summary.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, SplitSpec, Task};
use crate::losses::{self, LossKind};
use crate::lqr::{self, Evaluator, Exploration, LqrSystem};
use crate::nn::{self, Activation, Batch, MlpSpec};
use crate::optim::{
    self, AdamState, EgnConfig, LineSearchConfig, Optimizer, OptimizerKind, OptimizerState,
    Schedule,
};
use crate::solvers::{self, SolverKind};
use crate::{Error, Result};

/// Environment variable naming the output directory.
pub const OUT_DIR_ENV: &str = "EGN_OUT_DIR";

/// `$EGN_OUT_DIR`, or `./egn-out`.
pub fn out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("egn-out"))
}

/// Parses TOML into `T`, reporting the dotted key path of the first error.
pub fn parse_config<T: DeserializeOwned>(text: &str) -> Result<T> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config("<document>", e.to_string().trim()))?;
    serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        let message = e.into_inner().to_string();
        let missing = message
            .strip_prefix("missing field `")
            .and_then(|m| m.split('`').next());
        let key = match (path.as_str(), missing) {
            (".", Some(field)) => field.to_string(),
            (".", None) => "<root>".to_string(),
            (_, Some(field)) => format!("{path}.{field}"),
            (_, None) => path,
        };
        Error::config(key, message)
    })
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    parse_config(&text)
}

// ---------------------------------------------------------------------------
// Training configuration

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub epochs: Option<usize>,
    pub max_seconds: Option<f64>,
    pub max_steps: Option<usize>,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    pub seeds: Vec<u64>,
    pub model: ModelSection,
    pub data: DataSection,
    pub optim: OptimSection,
}

fn default_name() -> String {
    "run".into()
}
fn default_batch_size() -> usize {
    128
}
fn default_eval_every() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Layer widths including input and output.
    pub widths: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_activation() -> Activation {
    Activation::Relu
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    pub target: Option<String>,
    #[serde(default)]
    pub categoricals: Vec<String>,
    pub synthetic: Option<SyntheticKind>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_features")]
    pub features: usize,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_separation")]
    pub separation: f64,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub standardize_target: bool,
}

fn default_n() -> usize {
    5000
}
fn default_features() -> usize {
    8
}
fn default_noise() -> f64 {
    0.1
}
fn default_classes() -> usize {
    3
}
fn default_separation() -> f64 {
    3.0
}
fn default_test_fraction() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum LineSearchSetting {
    Enabled(bool),
    Custom(LineSearchConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Constant,
    Diminishing,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSection {
    pub kind: OptimizerKind,
    /// Constant step size; defaults to 1 for EGN, 0.01 for SGD, 0.001 for Adam.
    pub lr: Option<f64>,
    #[serde(default = "default_lambda0")]
    pub lambda0: f64,
    #[serde(default)]
    pub momentum: f64,
    pub line_search: Option<LineSearchSetting>,
    #[serde(default = "default_true")]
    pub adaptive_lambda: bool,
    /// Switches EGN to the truncated-CG direction with this many iterations.
    pub cg_iters: Option<usize>,
    /// Direction solver name (`egn`, `smw`, `qr`, `cg:N`, `dense`).
    pub solver: Option<String>,
    #[serde(default = "default_schedule")]
    pub schedule: ScheduleKind,
    pub alpha0: Option<f64>,
    pub a: Option<f64>,
}

fn default_lambda0() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}
fn default_schedule() -> ScheduleKind {
    ScheduleKind::Constant
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = parse_config(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: Self = read_config(path.as_ref())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "need at least one seed"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every", "must be at least 1"));
        }
        if self.epochs.is_none() && self.max_seconds.is_none() && self.max_steps.is_none() {
            return Err(Error::config(
                "max_seconds",
                "set at least one of epochs, max_steps, max_seconds",
            ));
        }
        if let Some(s) = self.max_seconds {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::config("max_seconds", "must be positive"));
            }
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::config("name", "must be a non-empty file-name stem"));
        }
        match (&self.data.path, self.data.synthetic) {
            (Some(_), Some(_)) => {
                return Err(Error::config("data", "set either path or synthetic, not both"))
            }
            (None, None) => return Err(Error::config("data", "set data.path or data.synthetic")),
            (Some(_), None) if self.data.target.is_none() => {
                return Err(Error::config("data.target", "required with data.path"))
            }
            _ => {}
        }
        build_optimizer(&self.optim, 1).map(|_| ())
    }
}

/// Builds an optimizer for `params` weights from the config section.
pub fn build_optimizer(o: &OptimSection, params: usize) -> Result<Optimizer> {
    let lr = o.lr.unwrap_or(match o.kind {
        OptimizerKind::Egn => 1.0,
        OptimizerKind::Sgd => 0.01,
        OptimizerKind::Adam => 0.001,
    });
    let schedule = match o.schedule {
        ScheduleKind::Constant => Schedule::Constant(lr),
        ScheduleKind::Diminishing => Schedule::Diminishing {
            alpha0: o
                .alpha0
                .ok_or_else(|| Error::config("optim.alpha0", "required by the diminishing schedule"))?,
            a: o.a
                .ok_or_else(|| Error::config("optim.a", "required by the diminishing schedule"))?,
        },
    };
    schedule.validate()?;
    match o.kind {
        OptimizerKind::Egn => {
            let solver = match (o.cg_iters, &o.solver) {
                (Some(_), Some(_)) => {
                    return Err(Error::config("optim.cg_iters", "conflicts with optim.solver"))
                }
                (Some(0), None) => return Err(Error::config("optim.cg_iters", "must be at least 1")),
                (Some(n), None) => SolverKind::CgInexact { max_iters: n },
                (None, Some(name)) => name
                    .parse()
                    .map_err(|e: Error| Error::config("optim.solver", e.to_string()))?,
                (None, None) => SolverKind::EgnDg,
            };
            let line_search = match o.line_search {
                None | Some(LineSearchSetting::Enabled(true)) => LineSearchConfig::default(),
                Some(LineSearchSetting::Enabled(false)) => LineSearchConfig {
                    enabled: false,
                    ..Default::default()
                },
                Some(LineSearchSetting::Custom(ls)) => ls,
            };
            line_search
                .validate()
                .map_err(|e| prefix_key(e, "optim."))?;
            let state = OptimizerState::new(params, o.lambda0, o.momentum, schedule)?;
            Ok(Optimizer::Egn {
                state,
                config: EgnConfig {
                    solver,
                    line_search,
                    adaptive_lambda: o.adaptive_lambda,
                },
            })
        }
        OptimizerKind::Sgd => Ok(Optimizer::Sgd { schedule, t: 1 }),
        OptimizerKind::Adam => Ok(Optimizer::Adam {
            state: AdamState::new(params),
            schedule,
        }),
    }
}

fn prefix_key(e: Error, prefix: &str) -> Error {
    match e {
        Error::Config { key, message } => Error::Config {
            key: format!("{prefix}{key}"),
            message,
        },
        other => other,
    }
}

// ---------------------------------------------------------------------------
// Training loop

/// Preprocessed data and model shared by all seeds of a sweep.
#[derive(Debug, Clone)]
pub struct TrainSetup {
    pub train: Dataset,
    pub test: Dataset,
    pub spec: MlpSpec,
    pub loss: LossKind,
    /// Multiplier from the training target scale back to original units.
    pub target_scale: f64,
}

/// Loads or generates data, splits, standardizes, and checks the model shape.
pub fn prepare(cfg: &RunConfig, base_dir: &Path) -> Result<TrainSetup> {
    let d = &cfg.data;
    let full = match (d.synthetic, &d.path) {
        (Some(SyntheticKind::Regression), _) => {
            data::synth_regression(d.n, d.features, d.noise, d.seed)?
        }
        (Some(SyntheticKind::Classification), _) => {
            data::synth_classification(d.n, d.features, d.classes, d.separation, d.seed)?
        }
        (None, Some(path)) => {
            let path = if path.is_absolute() {
                path.clone()
            } else {
                base_dir.join(path)
            };
            let target = d.target.as_deref().unwrap_or_default();
            data::load_csv(&path, target, &d.categoricals)?
        }
        (None, None) => return Err(Error::config("data", "set data.path or data.synthetic")),
    };
    let (train, test) = data::split(
        &full,
        SplitSpec {
            test_fraction: d.test_fraction,
            seed: d.seed,
        },
    )?;
    let (mut train, mut test, _) = data::standardize(&train, &test)?;
    let mut target_scale = 1.0;
    if d.standardize_target {
        let scaler = data::TargetScaler::fit(&train)
            .map_err(|e| Error::config("data.standardize_target", e.to_string()))?;
        train = scaler.transform(&train);
        test = scaler.transform(&test);
        target_scale = scaler.std;
    }
    let widths = &cfg.model.widths;
    let (want_in, want_out) = (train.input_width(), train.output_width());
    if widths.len() < 2 || widths[0] != want_in || *widths.last().unwrap() != want_out {
        return Err(Error::config(
            "model.widths",
            format!(
                "must start with the input width {want_in} and end with the output width {want_out}, got {widths:?}"
            ),
        ));
    }
    let spec = MlpSpec::new(widths.clone(), cfg.model.activation)
        .map_err(|e| Error::config("model.widths", e.to_string()))?;
    let loss = match train.task {
        Task::Regression => LossKind::Mse,
        Task::Classification { .. } => LossKind::CrossEntropy,
    };
    Ok(TrainSetup {
        train,
        test,
        spec,
        loss,
        target_scale,
    })
}

/// One row of a run's metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub run_id: String,
    pub seed: u64,
    pub step: usize,
    /// Cumulative training time, evaluation excluded.
    pub wall_seconds: f64,
    /// Cumulative evaluation time.
    pub eval_seconds: f64,
    pub train_loss: f64,
    /// Test RMSE (regression, original units) or accuracy (classification).
    pub eval_metric: f64,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
}

/// Columns of [`MetricRecord`] that depend on the clock.
pub const TIMING_COLUMNS: [&str; 2] = ["wall_seconds", "eval_seconds"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub run_id: String,
    pub seed: u64,
    pub records: Vec<MetricRecord>,
    pub steps: usize,
    pub train_seconds: f64,
    /// Set when the run aborted; records up to the failure are kept.
    pub error: Option<String>,
}

impl RunResult {
    pub fn final_metric(&self) -> Option<f64> {
        self.records.last().map(|r| r.eval_metric)
    }
}

/// `(train loss, eval metric)` on the full train and test sets.
pub fn evaluate(setup: &TrainSetup, w: &nn::ParamVector) -> Result<(f64, f64)> {
    let train_out = nn::forward(&setup.spec, w, &setup.train.features)?;
    let train_loss = losses::loss_value(setup.loss, &train_out, &setup.train.targets)?;
    let out = nn::forward(&setup.spec, w, &setup.test.features)?;
    let metric = match setup.test.task {
        Task::Regression => {
            let n = out.nrows() as f64;
            let se: f64 = (&out - &setup.test.targets).iter().map(|e| e * e).sum();
            (se / n).sqrt() * setup.target_scale
        }
        Task::Classification { .. } => {
            let labels = setup.test.labels().unwrap_or_default();
            let hits = out
                .row_iter()
                .zip(&labels)
                .filter(|(row, &label)| row.transpose().argmax().0 == label)
                .count();
            hits as f64 / labels.len().max(1) as f64
        }
    };
    if !train_loss.is_finite() || !metric.is_finite() {
        return Err(Error::NonFinite("evaluation".into()));
    }
    Ok((train_loss, metric))
}

/// Trains one seed. Errors during training end the run but are not returned.
pub fn train_seed(cfg: &RunConfig, setup: &TrainSetup, seed: u64) -> RunResult {
    let run_id = format!("{}-s{seed}", cfg.name);
    let mut result = RunResult {
        run_id: run_id.clone(),
        seed,
        records: Vec::new(),
        steps: 0,
        train_seconds: 0.0,
        error: None,
    };
    if let Err(e) = train_loop(cfg, setup, seed, &mut result) {
        result.error = Some(e.to_string());
    }
    result
}

fn train_loop(cfg: &RunConfig, setup: &TrainSetup, seed: u64, out: &mut RunResult) -> Result<()> {
    let mut w = nn::init_params(&setup.spec, seed);
    let mut opt = build_optimizer(&cfg.optim, w.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0ba7_c4e5);
    let n = setup.train.len();
    let bs = cfg.batch_size.min(n);
    let per_epoch = n / bs;
    let mut order: Vec<usize> = (0..n).collect();
    let mut eval_seconds = 0.0;
    let mut last_alpha = None;

    let mut record = |out: &mut RunResult, w: &nn::ParamVector, alpha: Option<f64>, lambda: Option<f64>| -> Result<()> {
        let start = Instant::now();
        let (train_loss, metric) = evaluate(setup, w)?;
        eval_seconds += start.elapsed().as_secs_f64();
        out.records.push(MetricRecord {
            run_id: out.run_id.clone(),
            seed,
            step: out.steps,
            wall_seconds: out.train_seconds,
            eval_seconds,
            train_loss,
            eval_metric: metric,
            alpha,
            lambda,
        });
        Ok(())
    };
    record(out, &w, None, opt.lambda())?;

    let mut epoch = 0;
    loop {
        if cfg.epochs.is_some_and(|e| epoch >= e) {
            break;
        }
        order.shuffle(&mut rng);
        let mut stop = false;
        for k in 0..per_epoch {
            let done_steps = cfg.max_steps.is_some_and(|m| out.steps >= m);
            let done_time = cfg.max_seconds.is_some_and(|s| out.train_seconds >= s);
            if done_steps || done_time {
                stop = true;
                break;
            }
            let start = Instant::now();
            let batch = setup.train.batch(&order[k * bs..(k + 1) * bs])?;
            let report = opt.step(&mut w, &setup.spec, &batch, setup.loss)?;
            out.train_seconds += start.elapsed().as_secs_f64();
            out.steps += 1;
            last_alpha = Some(report.alpha);
            if out.steps.is_multiple_of(cfg.eval_every) {
                record(out, &w, last_alpha, opt.lambda())?;
            }
        }
        if stop {
            break;
        }
        epoch += 1;
    }
    if out.records.last().is_none_or(|r| r.step != out.steps) {
        record(out, &w, last_alpha, opt.lambda())?;
    }
    Ok(())
}

/// Writes records with a header row.
pub fn write_metrics_csv(records: &[MetricRecord], path: &Path) -> Result<()> {
    let mut wr = csv::Writer::from_path(path)?;
    if records.is_empty() {
        wr.write_record([
            "run_id",
            "seed",
            "step",
            "wall_seconds",
            "eval_seconds",
            "train_loss",
            "eval_metric",
            "alpha",
            "lambda",
        ])?;
    }
    for r in records {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRecord>> {
    let mut rd = csv::Reader::from_path(path)?;
    rd.deserialize().map(|r| r.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub seed: u64,
    pub status: String,
    pub steps: usize,
    pub train_seconds: f64,
    pub final_train_loss: Option<f64>,
    pub final_eval_metric: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateSummary {
    pub run_id: String,
    pub aggregate: bool,
    pub metric: String,
    pub runs: usize,
    pub completed: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some((mean, std))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub runs: Vec<RunResult>,
    pub metrics_paths: Vec<PathBuf>,
    pub summary_path: PathBuf,
    pub aggregate: AggregateSummary,
}

/// Runs every seed of a sweep and writes per-run CSVs plus the summary.
pub fn run_sweep(cfg: &RunConfig, base_dir: &Path, out: &Path) -> Result<TrainReport> {
    cfg.validate()?;
    let setup = prepare(cfg, base_dir)?;
    fs::create_dir_all(out)?;
    let metric = match setup.test.task {
        Task::Regression => "rmse",
        Task::Classification { .. } => "accuracy",
    };
    let mut runs = Vec::new();
    let mut metrics_paths = Vec::new();
    let summary_path = out.join(format!("{}_summary.jsonl", cfg.name));
    let mut summary = BufWriter::new(File::create(&summary_path)?);
    for &seed in &cfg.seeds {
        let run = train_seed(cfg, &setup, seed);
        let path = out.join(format!("{}_seed{seed}.csv", cfg.name));
        write_metrics_csv(&run.records, &path)?;
        metrics_paths.push(path);
        let line = RunSummary {
            run_id: run.run_id.clone(),
            seed,
            status: if run.error.is_some() { "failed" } else { "ok" }.into(),
            steps: run.steps,
            train_seconds: run.train_seconds,
            final_train_loss: run.records.last().map(|r| r.train_loss),
            final_eval_metric: run.final_metric(),
            error: run.error.clone(),
        };
        writeln!(summary, "{}", serde_json::to_string(&line).map_err(json_err)?)?;
        runs.push(run);
    }
    let finals: Vec<f64> = runs
        .iter()
        .filter(|r| r.error.is_none())
        .filter_map(RunResult::final_metric)
        .collect();
    let stats = mean_std(&finals);
    let aggregate = AggregateSummary {
        run_id: format!("{}-aggregate", cfg.name),
        aggregate: true,
        metric: metric.into(),
        runs: runs.len(),
        completed: finals.len(),
        mean: stats.map(|s| s.0),
        std: stats.map(|s| s.1),
    };
    writeln!(summary, "{}", serde_json::to_string(&aggregate).map_err(json_err)?)?;
    summary.flush()?;
    Ok(TrainReport {
        runs,
        metrics_paths,
        summary_path,
        aggregate,
    })
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// `train <config>`: loads the config and runs the sweep into `out`.
pub fn cmd_train(config_path: &Path, out: &Path) -> Result<TrainReport> {
    let cfg = RunConfig::load(config_path)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    run_sweep(&cfg, base, out)
}

// ---------------------------------------------------------------------------
// Solver microbenchmark

/// Default cap on the estimated working set of one benchmark cell.
pub const DEFAULT_MAX_BYTES: u64 = 2 << 30;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverGrid {
    pub ds: Vec<usize>,
    pub bs: Vec<usize>,
    pub cs: Vec<usize>,
    pub solvers: Vec<SolverKind>,
    pub repeats: usize,
    pub warmup: usize,
    pub seed: u64,
    pub max_bytes: u64,
}

impl Default for SolverGrid {
    fn default() -> Self {
        Self {
            ds: vec![1_000, 10_000, 100_000, 1_000_000],
            bs: vec![32],
            cs: vec![10],
            solvers: vec![SolverKind::EgnDg, SolverKind::Smw],
            repeats: 100,
            warmup: solvers::WARMUP_RUNS,
            seed: 0,
            max_bytes: DEFAULT_MAX_BYTES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverRow {
    pub solver: String,
    pub d: usize,
    pub b: usize,
    pub c: usize,
    pub repeats: usize,
    pub mean_seconds: Option<f64>,
    pub std_seconds: Option<f64>,
    /// Mean EGN time over mean SMW time for this `(d, b, c)`.
    pub egn_smw_ratio: Option<f64>,
    /// `ok`, `skipped_memory`, `unsupported` or `error`.
    pub status: String,
}

/// Rough peak working set of one solve, in bytes.
pub fn solver_bytes(kind: SolverKind, d: usize, b: usize, c: usize) -> u64 {
    let (d, n) = (d as u64, (b * c) as u64);
    let jac = 8 * d * n;
    let small = 8 * n * n * 4;
    match kind {
        SolverKind::EgnDg | SolverKind::CgInexact { .. } => jac + small + 8 * d * 4,
        SolverKind::Smw | SolverKind::Qr => 2 * jac + small + 8 * d * 4,
        SolverKind::DenseOracle => jac + 8 * d * d * 2,
    }
}

fn unsupported(kind: SolverKind, d: usize, c: usize) -> bool {
    match kind {
        SolverKind::Qr => c != 1,
        SolverKind::DenseOracle => !solvers::oracle_supported(d),
        _ => false,
    }
}

/// Times every `(d, b, c, solver)` cell; one row per cell in that order.
pub fn bench_solver(grid: &SolverGrid) -> Result<Vec<SolverRow>> {
    if grid.repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for &d in &grid.ds {
        for &b in &grid.bs {
            for &c in &grid.cs {
                let first = rows.len();
                for &kind in &grid.solvers {
                    let mut row = SolverRow {
                        solver: kind.name(),
                        d,
                        b,
                        c,
                        repeats: grid.repeats,
                        mean_seconds: None,
                        std_seconds: None,
                        egn_smw_ratio: None,
                        status: "ok".into(),
                    };
                    if d == 0 || b == 0 || c == 0 || unsupported(kind, d, c) {
                        row.status = "unsupported".into();
                    } else if solver_bytes(kind, d, b, c) > grid.max_bytes {
                        row.status = "skipped_memory".into();
                    } else {
                        match solvers::time_solver_with_warmup(
                            kind,
                            d,
                            b,
                            c,
                            grid.repeats,
                            grid.seed,
                            grid.warmup,
                        ) {
                            Ok(t) => {
                                row.mean_seconds = Some(t.mean_seconds);
                                row.std_seconds = Some(t.std_seconds);
                            }
                            Err(e) => row.status = format!("error: {}", e.kind()),
                        }
                    }
                    rows.push(row);
                }
                let cell = &mut rows[first..];
                let mean_of = |name: &str, cell: &[SolverRow]| {
                    cell.iter().find(|r| r.solver == name).and_then(|r| r.mean_seconds)
                };
                if let (Some(e), Some(s)) = (mean_of("egn", cell), mean_of("smw", cell)) {
                    for r in cell.iter_mut() {
                        r.egn_smw_ratio = Some(e / s);
                    }
                }
            }
        }
    }
    Ok(rows)
}

pub fn write_rows<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut wr = csv::Writer::from_path(path)?;
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut rd = csv::Reader::from_path(path)?;
    rd.deserialize().map(|r| r.map_err(Error::from)).collect()
}

// ---------------------------------------------------------------------------
// Batch-size profiling

#[derive(Debug, Clone, PartialEq)]
pub struct ModelPreset {
    pub name: String,
    pub widths: Vec<usize>,
}

impl ModelPreset {
    /// `1k`, `10k`, `100k`, or explicit widths such as `8-32-1`.
    pub fn parse(s: &str) -> Result<Self> {
        let widths = match s {
            "1k" => vec![8, 40, 16, 1],
            "10k" => vec![8, 96, 96, 1],
            "100k" => vec![8, 256, 256, 128, 1],
            other => other
                .split('-')
                .map(|p| p.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| {
                    Error::InvalidArgument(format!(
                        "unknown model `{other}`; use 1k, 10k, 100k or widths like 8-32-1"
                    ))
                })?,
        };
        MlpSpec::new(widths.clone(), Activation::Relu)?;
        Ok(Self {
            name: s.to_string(),
            widths,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileGrid {
    pub models: Vec<ModelPreset>,
    pub bs: Vec<usize>,
    pub repeats: usize,
    pub warmup: usize,
    pub seed: u64,
    pub max_bytes: u64,
}

impl Default for ProfileGrid {
    fn default() -> Self {
        Self {
            models: ["1k", "10k", "100k"]
                .iter()
                .map(|m| ModelPreset::parse(m).expect("built-in preset"))
                .collect(),
            bs: vec![8, 16, 32, 64, 128, 256, 512],
            repeats: 10,
            warmup: 2,
            seed: 0,
            max_bytes: DEFAULT_MAX_BYTES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub model: String,
    pub params: usize,
    pub b: usize,
    pub repeats: usize,
    pub solve_ms: Option<f64>,
    pub other_ms: Option<f64>,
    pub solve_fraction: Option<f64>,
    pub status: String,
}

/// Splits the mean EGN step time into direction solve and everything else.
pub fn profile_cell(widths: &[usize], b: usize, repeats: usize, warmup: usize, seed: u64) -> Result<(f64, f64)> {
    if repeats == 0 || b == 0 {
        return Err(Error::InvalidArgument("repeats and b must be at least 1".into()));
    }
    let spec = MlpSpec::new(widths.to_vec(), Activation::Relu)?;
    let mut w = nn::init_params(&spec, seed);
    let mut state = OptimizerState::new(w.len(), 1.0, 0.0, Schedule::Constant(1.0))?;
    let config = EgnConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, c) = (spec.input_width(), spec.output_width());
    let mut solve = 0.0;
    let mut total = 0.0;
    for it in 0..warmup + repeats {
        let x = DMatrix::from_fn(b, m, |_, _| StandardNormal.sample(&mut rng));
        let y = DMatrix::from_fn(b, c, |_, _| StandardNormal.sample(&mut rng));
        let batch = Batch::new(x, y)?;
        let report = optim::egn_step(&mut state, &mut w, &spec, &batch, LossKind::Mse, &config)?;
        if it >= warmup {
            solve += report.solve_seconds;
            total += report.wall_seconds;
        }
    }
    let r = repeats as f64;
    Ok((solve / r, (total - solve) / r))
}

pub fn profile_batch(grid: &ProfileGrid) -> Result<Vec<ProfileRow>> {
    if grid.repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be at least 1".into()));
    }
    let mut rows = Vec::new();
    for model in &grid.models {
        let spec = MlpSpec::new(model.widths.clone(), Activation::Relu)?;
        let params = spec.param_count();
        for &b in &grid.bs {
            let mut row = ProfileRow {
                model: model.name.clone(),
                params,
                b,
                repeats: grid.repeats,
                solve_ms: None,
                other_ms: None,
                solve_fraction: None,
                status: "ok".into(),
            };
            let c = spec.output_width();
            if solver_bytes(SolverKind::EgnDg, params, b, c) > grid.max_bytes {
                row.status = "skipped_memory".into();
            } else {
                match profile_cell(&model.widths, b, grid.repeats, grid.warmup, grid.seed) {
                    Ok((s, o)) => {
                        row.solve_ms = Some(s * 1e3);
                        row.other_ms = Some(o * 1e3);
                        row.solve_fraction = Some(s / (s + o));
                    }
                    Err(e) => row.status = format!("error: {}", e.kind()),
                }
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// LQR

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LqrEvaluatorKind {
    Egn,
    Cg,
    Td,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqrOptimSection {
    pub kind: LqrEvaluatorKind,
    pub lambda: f64,
    /// Step size (`alpha` for TD, the update scale for EGN and CG).
    pub lr: f64,
    pub cg_iters: usize,
    pub batch: usize,
    pub eta: f64,
    pub max_iters: usize,
}

impl Default for LqrOptimSection {
    fn default() -> Self {
        Self {
            kind: LqrEvaluatorKind::Egn,
            lambda: 1e-6,
            lr: 1.0,
            cg_iters: 10,
            batch: 64,
            eta: 1e-8,
            max_iters: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqrConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    /// Outer tolerance on `‖K_p − K_{p−1}‖_F`.
    pub eta: f64,
    pub max_outer: usize,
    /// Initial gain, `n_a × n_s`; zeros when absent.
    pub k0: Option<Vec<Vec<f64>>>,
    pub optim: LqrOptimSection,
    pub exploration: Exploration,
}

impl Default for LqrConfig {
    fn default() -> Self {
        Self {
            name: "lqr".into(),
            seeds: vec![0],
            eta: 1e-8,
            max_outer: 50,
            k0: None,
            optim: LqrOptimSection::default(),
            exploration: Exploration::default(),
        }
    }
}

impl LqrConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: Self = read_config(path.as_ref())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "need at least one seed"));
        }
        if self.optim.batch == 0 {
            return Err(Error::config("optim.batch", "must be at least 1"));
        }
        if !(self.optim.lr > 0.0 && self.optim.lr.is_finite()) {
            return Err(Error::config("optim.lr", "must be positive"));
        }
        if self.optim.kind == LqrEvaluatorKind::Egn && (self.optim.lambda <= 0.0 || self.optim.lambda.is_nan()) {
            return Err(Error::config("optim.lambda", "must be positive"));
        }
        if self.exploration.episode_len == 0 {
            return Err(Error::config("exploration.episode_len", "must be at least 1"));
        }
        Ok(())
    }

    pub fn policy_iteration_config(&self) -> lqr::PolicyIterationConfig {
        let o = &self.optim;
        let evaluator = match o.kind {
            LqrEvaluatorKind::Egn => Evaluator::Egn {
                lambda: o.lambda,
                alpha: o.lr,
            },
            LqrEvaluatorKind::Cg => Evaluator::Cg {
                lambda: o.lambda,
                alpha: o.lr,
                max_iters: o.cg_iters,
            },
            LqrEvaluatorKind::Td => Evaluator::Td { alpha: o.lr },
        };
        lqr::PolicyIterationConfig {
            evaluation: lqr::EvaluationConfig {
                evaluator,
                batch: o.batch,
                eta: o.eta,
                max_iters: o.max_iters,
                exploration: self.exploration,
            },
            eta: self.eta,
            max_outer: self.max_outer,
        }
    }

    fn initial_gain(&self, sys: &LqrSystem) -> Result<DMatrix<f64>> {
        let (na, ns) = (sys.actions(), sys.states());
        match &self.k0 {
            None => Ok(DMatrix::zeros(na, ns)),
            Some(rows) => {
                if rows.len() != na || rows.iter().any(|r| r.len() != ns) {
                    return Err(Error::config("k0", format!("must be {na}x{ns}")));
                }
                Ok(DMatrix::from_fn(na, ns, |i, j| rows[i][j]))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqrRow {
    pub run_id: String,
    pub seed: u64,
    pub outer_iter: usize,
    pub wall_seconds: f64,
    /// `‖K_p − K*‖_F`.
    pub k_error: f64,
    pub k_change: Option<f64>,
    pub eval_iterations: Option<usize>,
}

/// Policy iteration for one seed, logging the gain error against the oracle.
pub fn run_lqr(sys: &LqrSystem, cfg: &LqrConfig, seed: u64) -> Result<Vec<LqrRow>> {
    let (_, k_star) = lqr::riccati_oracle(sys)?;
    let k0 = cfg.initial_gain(sys)?;
    let run_id = format!("{}-s{seed}", cfg.name);
    let res = lqr::policy_iteration(sys, &k0, &cfg.policy_iteration_config(), seed)?;
    let mut rows = vec![LqrRow {
        run_id: run_id.clone(),
        seed,
        outer_iter: 0,
        wall_seconds: 0.0,
        k_error: (&k0 - &k_star).norm(),
        k_change: None,
        eval_iterations: None,
    }];
    rows.extend(res.history.iter().map(|h| LqrRow {
        run_id: run_id.clone(),
        seed,
        outer_iter: h.iteration,
        wall_seconds: h.elapsed_seconds,
        k_error: (&h.k - &k_star).norm(),
        k_change: Some(h.k_change),
        eval_iterations: Some(h.eval_iterations),
    }));
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqrSummary {
    pub run_id: String,
    pub seed: u64,
    pub status: String,
    pub outer_iterations: usize,
    pub final_k_error: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqrReport {
    pub summaries: Vec<LqrSummary>,
    pub csv_paths: Vec<PathBuf>,
    pub summary_path: PathBuf,
}

/// `lqr <system> [config]`: one error-curve CSV per seed plus a summary.
pub fn cmd_lqr(system: &str, config: Option<&Path>, out: &Path) -> Result<LqrReport> {
    let sys = LqrSystem::resolve(system)?;
    let cfg = match config {
        Some(p) => LqrConfig::load(p)?,
        None => LqrConfig::default(),
    };
    cfg.validate()?;
    // Definiteness problems in the system itself surface before any run.
    lqr::riccati_oracle(&sys)?;
    fs::create_dir_all(out)?;
    let summary_path = out.join(format!("{}_summary.jsonl", cfg.name));
    let mut summary = BufWriter::new(File::create(&summary_path)?);
    let mut summaries = Vec::new();
    let mut csv_paths = Vec::new();
    for &seed in &cfg.seeds {
        let run_id = format!("{}-s{seed}", cfg.name);
        let line = match run_lqr(&sys, &cfg, seed) {
            Ok(rows) => {
                let path = out.join(format!("{}_seed{seed}.csv", cfg.name));
                write_rows(&rows, &path)?;
                csv_paths.push(path);
                LqrSummary {
                    run_id,
                    seed,
                    status: "ok".into(),
                    outer_iterations: rows.len() - 1,
                    final_k_error: rows.last().map(|r| r.k_error),
                    error: None,
                }
            }
            Err(e) => LqrSummary {
                run_id,
                seed,
                status: "failed".into(),
                outer_iterations: 0,
                final_k_error: None,
                error: Some(e.to_string()),
            },
        };
        writeln!(summary, "{}", serde_json::to_string(&line).map_err(json_err)?)?;
        summaries.push(line);
    }
    summary.flush()?;
    Ok(LqrReport {
        summaries,
        csv_paths,
        summary_path,
    })
}

/// Comma-separated list parser shared by the CLI.
pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let p = p.trim();
            p.parse::<T>()
                .map_err(|e| Error::InvalidArgument(format!("cannot parse `{p}`: {e}")))
        })
        .collect()
}

/// Parses sizes that may be written as `1e5` as well as `100000`.
pub fn parse_size(s: &str) -> Result<usize> {
    let s = s.trim();
    if let Ok(v) = s.parse::<usize>() {
        return Ok(v);
    }
    let v: f64 = s
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("cannot parse size `{s}`")))?;
    if v >= 0.0 && v.fract() == 0.0 && v <= usize::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(Error::InvalidArgument(format!("size `{s}` is not a whole number")))
    }
}

pub fn parse_sizes(s: &str) -> Result<Vec<usize>> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(parse_size).collect()
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use egn::bench::{self, ModelPreset, ProfileGrid, SolverGrid};
use egn::solvers::SolverKind;

#[derive(Debug, Parser)]
#[command(name = "egn", version, about = "Gauss-Newton training sweeps, solver benchmarks and LQR runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a seeded training sweep from a TOML config.
    Train { config: PathBuf },
    /// Time direction solvers over a grid of (d, b, c).
    BenchSolver {
        /// Parameter counts, comma separated; `1e5` notation is accepted.
        #[arg(long, default_value = "1e3,1e4,1e5,1e6")]
        d: String,
        #[arg(long, default_value = "32")]
        b: String,
        #[arg(long, default_value = "10")]
        c: String,
        /// egn, smw, qr, dense, cg:N
        #[arg(long, default_value = "egn,smw")]
        solvers: String,
        #[arg(long, default_value_t = 100)]
        repeats: usize,
        #[arg(long, default_value_t = egn::solvers::WARMUP_RUNS)]
        warmup: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Skip cells whose estimated working set exceeds this many GiB.
        #[arg(long, default_value_t = 2.0)]
        max_gib: f64,
    },
    /// Split EGN step time into direction solve and the rest, per batch size.
    ProfileBatch {
        /// 1k, 10k, 100k or explicit widths such as 8-32-1.
        #[arg(long, default_value = "1k,10k,100k")]
        models: String,
        #[arg(long, default_value = "8,16,32,64,128,256,512")]
        b: String,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2.0)]
        max_gib: f64,
    },
    /// Policy iteration on an LQR system against the Riccati solution.
    Lqr {
        /// `builtin:scalar`, `builtin:four-state`, or a system TOML file.
        system: String,
        config: Option<PathBuf>,
    },
}

fn gib(v: f64) -> egn::Result<u64> {
    if v > 0.0 && v.is_finite() {
        Ok((v * (1u64 << 30) as f64) as u64)
    } else {
        Err(egn::Error::InvalidArgument(format!("--max-gib must be positive, got {v}")))
    }
}

fn run(cli: Cli) -> egn::Result<()> {
    let out = bench::out_dir();
    match cli.command {
        Command::Train { config } => {
            let report = bench::cmd_train(&config, &out)?;
            for run in &report.runs {
                if let Some(e) = &run.error {
                    eprintln!("run {} failed: {e}", run.run_id);
                }
            }
            for p in &report.metrics_paths {
                println!("{}", p.display());
            }
            println!("{}", report.summary_path.display());
        }
        Command::BenchSolver {
            d,
            b,
            c,
            solvers,
            repeats,
            warmup,
            seed,
            max_gib,
        } => {
            let grid = SolverGrid {
                ds: bench::parse_sizes(&d)?,
                bs: bench::parse_sizes(&b)?,
                cs: bench::parse_sizes(&c)?,
                solvers: bench::parse_list::<SolverKind>(&solvers)?,
                repeats,
                warmup,
                seed,
                max_bytes: gib(max_gib)?,
            };
            let rows = bench::bench_solver(&grid)?;
            let path = out.join("bench_solver.csv");
            bench::write_rows(&rows, &path)?;
            println!("{}", path.display());
        }
        Command::ProfileBatch {
            models,
            b,
            repeats,
            warmup,
            seed,
            max_gib,
        } => {
            let grid = ProfileGrid {
                models: models
                    .split(',')
                    .filter(|m| !m.trim().is_empty())
                    .map(|m| ModelPreset::parse(m.trim()))
                    .collect::<egn::Result<_>>()?,
                bs: bench::parse_sizes(&b)?,
                repeats,
                warmup,
                seed,
                max_bytes: gib(max_gib)?,
            };
            let rows = bench::profile_batch(&grid)?;
            let path = out.join("profile_batch.csv");
            bench::write_rows(&rows, &path)?;
            println!("{}", path.display());
        }
        Command::Lqr { system, config } => {
            let report = bench::cmd_lqr(&system, config.as_deref(), &out)?;
            for s in &report.summaries {
                if let Some(e) = &s.error {
                    eprintln!("run {} failed: {e}", s.run_id);
                }
            }
            for p in &report.csv_paths {
                println!("{}", p.display());
            }
            println!("{}", report.summary_path.display());
        }
    }
    Ok(())
}

fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", error_line("usage", e.to_string().trim()));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}

//! Batch front end: parse a JSON experiment config, dispatch runs, and
//! write plot-ready CSV/JSON artifacts into the output directory.
//!
//! Exit codes: 0 success, 1 config error (the message names the
//! offending key or path), 2 runtime error, 3 failed verification
//! checks.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use fedlab_core::analysis::{
    deviation_experiment, run_checks, summarize_deviation, theory_constants, DeviationSummary,
};
use fedlab_core::centralized::GlobalObjective;
use fedlab_core::config::{parse_config, DataSpec, FederationConfig};
use fedlab_core::engine::{
    build_experiment, metrics_csv_row, run_experiment_with, Checkpoint, RoundMetrics, RunOptions,
    METRICS_HEADER,
};
use fedlab_core::vector::ParamVector;
use fedlab_core::Error;

mod grid;

const EXIT_OK: i32 = 0;
const EXIT_CONFIG: i32 = 1;
const EXIT_RUNTIME: i32 = 2;
const EXIT_CHECK_FAILED: i32 = 3;

/// Environment variable holding the default output root.
const OUT_ENV: &str = "FEDLAB_OUT";

#[derive(Parser)]
#[command(name = "fedlab", version, about = "Deterministic federated-optimization lab")]
struct Cli {
    /// Override the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (defaults to $FEDLAB_OUT, then ./out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (client fan-out; sweep cells).
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Machine-readable stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment: metrics.csv, checkpoint.json, and a resolved
    /// config echo.
    Run { config: PathBuf },
    /// Run the momentum-deviation experiment on a quadratic federation
    /// and fit its growth laws.
    Deviation { config: PathBuf },
    /// Run the exact-reduction and gradient verification battery.
    Check {
        /// Test hook: scales the decoupled side's learning rate inside
        /// the momentum reduction; any value other than 1 must make the
        /// suite fail.
        #[arg(long, default_value_t = 1.0, hide = true)]
        perturb_eta: f64,
    },
    /// Cartesian hyperparameter sweep: one metrics file per grid cell
    /// plus a summary sorted by final loss.
    Sweep {
        config: PathBuf,
        /// Grid spec, e.g. "eta=0.01,0.1;alpha=1,3.3".
        #[arg(long)]
        grid: String,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_CONFIG,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    std::process::exit(dispatch(cli));
}

fn dispatch(cli: Cli) -> i32 {
    let out_dir = cli
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    match &cli.command {
        Command::Run { config } => cmd_run(&cli, config, &out_dir),
        Command::Deviation { config } => cmd_deviation(&cli, config, &out_dir),
        Command::Check { perturb_eta } => cmd_check(&cli, *perturb_eta),
        Command::Sweep { config, grid } => cmd_sweep(&cli, config, grid, &out_dir),
    }
}

fn load_config(path: &Path, seed_override: Option<u64>) -> Result<FederationConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let mut config = parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    Ok(config)
}

fn write_file(path: &Path, contents: &str) -> Result<(), String> {
    std::fs::write(path, contents).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

#[derive(Serialize)]
struct RunSummary {
    rounds: usize,
    final_loss: Option<f64>,
    final_accuracy: Option<f64>,
    config_hash: String,
    out_dir: String,
}

/// Shared by `run` and each sweep cell: echo the resolved config,
/// stream metrics rows to disk as they are produced (partial results
/// survive a failed run), and dump the final checkpoint.
fn execute_run(
    config: &FederationConfig,
    dir: &Path,
    jobs: usize,
) -> Result<RunSummary, (i32, String)> {
    std::fs::create_dir_all(dir)
        .map_err(|e| (EXIT_RUNTIME, format!("cannot create {}: {e}", dir.display())))?;
    let echo = serde_json::to_string_pretty(config).expect("config serializes");
    write_file(&dir.join("resolved_config.json"), &echo).map_err(|e| (EXIT_RUNTIME, e))?;

    let metrics_path = dir.join("metrics.csv");
    let file = std::fs::File::create(&metrics_path)
        .map_err(|e| (EXIT_RUNTIME, format!("cannot create {}: {e}", metrics_path.display())))?;
    let mut writer = std::io::BufWriter::new(file);
    let mut io_error: Option<std::io::Error> = None;
    let mut last: Option<RoundMetrics> = None;
    if let Err(e) = writeln!(writer, "{METRICS_HEADER}") {
        return Err((EXIT_RUNTIME, format!("{}: {e}", metrics_path.display())));
    }
    let result = run_experiment_with(config, RunOptions { jobs }, |row| {
        if io_error.is_none() {
            if let Err(e) = writeln!(writer, "{}", metrics_csv_row(row)).and_then(|_| writer.flush())
            {
                io_error = Some(e);
            }
        }
        last = Some(row.clone());
    });
    if let Some(e) = io_error {
        return Err((EXIT_RUNTIME, format!("{}: {e}", metrics_path.display())));
    }
    let output = result.map_err(|e| {
        let code = match e {
            Error::Config(_) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        };
        (code, e.to_string())
    })?;
    let checkpoint = Checkpoint::from_state(&output.state, &output.config_hash);
    write_file(&dir.join("checkpoint.json"), &checkpoint.to_json())
        .map_err(|e| (EXIT_RUNTIME, e))?;
    Ok(RunSummary {
        rounds: output.metrics.len(),
        final_loss: last.as_ref().map(|r| r.loss),
        final_accuracy: last.as_ref().and_then(|r| r.accuracy),
        config_hash: output.config_hash,
        out_dir: dir.display().to_string(),
    })
}

fn cmd_run(cli: &Cli, config_path: &Path, out_dir: &Path) -> i32 {
    let config = match load_config(config_path, cli.seed) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("{msg}");
            return EXIT_CONFIG;
        }
    };
    match execute_run(&config, out_dir, cli.jobs) {
        Ok(summary) => {
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&summary).unwrap());
            } else {
                println!(
                    "completed {} rounds; final loss {}; outputs in {}",
                    summary.rounds,
                    summary
                        .final_loss
                        .map(|l| l.to_string())
                        .unwrap_or_else(|| "n/a".into()),
                    summary.out_dir
                );
            }
            EXIT_OK
        }
        Err((code, msg)) => {
            eprintln!("{msg}");
            code
        }
    }
}

#[derive(Serialize)]
struct DeviationReport {
    beta: f64,
    eta: f64,
    steps: usize,
    full_batch: bool,
    note: String,
    summary: DeviationSummary,
}

fn cmd_deviation(cli: &Cli, config_path: &Path, out_dir: &Path) -> i32 {
    let config = match load_config(config_path, cli.seed) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("{msg}");
            return EXIT_CONFIG;
        }
    };
    if !matches!(
        config.data,
        DataSpec::Quadratic { .. } | DataSpec::MirroredQuadratic { .. }
    ) {
        eprintln!("data.kind: the deviation experiment requires quadratic data");
        return EXIT_CONFIG;
    }
    let (steps, full_batch) = config
        .deviation
        .as_ref()
        .map(|d| (d.steps, d.full_batch))
        .unwrap_or((500, true));

    let outcome = (|| -> Result<DeviationReport, Error> {
        let built = build_experiment(&config)?;
        let dim = built.models[0].dim();
        let w0 = match &config.init {
            Some(v) if v.len() == dim => ParamVector::new(v.clone()),
            Some(v) => {
                return Err(Error::Config(format!(
                    "init must have length {dim}, got {}",
                    v.len()
                )))
            }
            None => ParamVector::zeros(dim),
        };
        let m0 = ParamVector::zeros(dim);
        let batch_size = config.batch_size.unwrap_or(1);
        let trace = deviation_experiment(
            &built.federation,
            &built.models,
            config.beta1,
            config.eta,
            steps,
            full_batch,
            batch_size,
            config.seed,
            &w0,
            &m0,
        )?;
        std::fs::create_dir_all(out_dir).map_err(|e| Error::Io {
            path: out_dir.display().to_string(),
            source: e,
        })?;
        std::fs::write(out_dir.join("deviation_trace.csv"), trace.to_csv()).map_err(|e| {
            Error::Io {
                path: out_dir.join("deviation_trace.csv").display().to_string(),
                source: e,
            }
        })?;
        let objective = GlobalObjective::new(&built.federation, &built.models);
        let w_star = objective.quadratic_minimizer()?;
        let constants = theory_constants(&built.models, config.beta1, config.eta)?;
        let summary = summarize_deviation(&trace, w0.sub(&w_star).norm(), Some(constants));
        let report = DeviationReport {
            beta: config.beta1,
            eta: config.eta,
            steps,
            full_batch,
            note: if summary.degenerate {
                "degenerate: zero deviation".into()
            } else {
                "ok".into()
            },
            summary,
        };
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(out_dir.join("fit_summary.json"), &json).map_err(|e| Error::Io {
            path: out_dir.join("fit_summary.json").display().to_string(),
            source: e,
        })?;
        Ok(report)
    })();

    match outcome {
        Ok(report) => {
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&report).unwrap());
            } else {
                println!(
                    "deviation trace over {} steps written to {}; {}",
                    report.steps,
                    out_dir.display(),
                    report.note
                );
            }
            EXIT_OK
        }
        Err(Error::Config(msg)) => {
            eprintln!("config error: {msg}");
            EXIT_CONFIG
        }
        Err(e) => {
            eprintln!("{e}");
            EXIT_RUNTIME
        }
    }
}

fn cmd_check(cli: &Cli, perturb_eta: f64) -> i32 {
    let report = match run_checks(perturb_eta) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_RUNTIME;
        }
    };
    if cli.json {
        println!("{}", serde_json::to_string_pretty(&report).unwrap());
    } else {
        println!(
            "{:<42} {:>13} {:>9} {:>8}  status",
            "check", "max_dev", "tol", "bitwise"
        );
        for case in &report.equivalence {
            println!(
                "{:<42} {:>13.3e} {:>9.0e} {:>8}  {}",
                case.name,
                case.max_deviation,
                case.tolerance,
                case.bitwise,
                if case.passed { "pass" } else { "FAIL" }
            );
        }
        for case in &report.gradients {
            println!(
                "{:<42} {:>13.3e} {:>9.0e} {:>8}  {}",
                format!("gradient_{}", case.kind),
                case.worst_relative_error,
                case.tolerance,
                "false",
                if case.passed { "pass" } else { "FAIL" }
            );
        }
    }
    if report.all_passed() {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    }
}

#[derive(Serialize)]
struct SweepRow {
    cell: usize,
    params: String,
    final_loss: Option<f64>,
    final_accuracy: Option<f64>,
}

fn cmd_sweep(cli: &Cli, config_path: &Path, grid_spec: &str, out_dir: &Path) -> i32 {
    let base = match load_config(config_path, cli.seed) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("{msg}");
            return EXIT_CONFIG;
        }
    };
    let cells = match grid::parse(grid_spec) {
        Ok(cells) => cells,
        Err(msg) => {
            eprintln!("grid: {msg}");
            return EXIT_CONFIG;
        }
    };
    // Validate every cell before running anything.
    let mut configs = Vec::with_capacity(cells.len());
    for cell in &cells {
        match grid::apply(&base, cell) {
            Ok(c) => configs.push(c),
            Err(msg) => {
                eprintln!("grid: {msg}");
                return EXIT_CONFIG;
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.max(1))
        .build()
        .expect("thread pool");
    use rayon::prelude::*;
    let results: Vec<Result<SweepRow, (i32, String)>> = pool.install(|| {
        configs
            .par_iter()
            .enumerate()
            .map(|(i, config)| {
                let dir = out_dir.join(format!("cell_{i:03}"));
                let summary = execute_run(config, &dir, 1)?;
                Ok(SweepRow {
                    cell: i,
                    params: grid::describe(&cells[i]),
                    final_loss: summary.final_loss,
                    final_accuracy: summary.final_accuracy,
                })
            })
            .collect()
    });

    let mut rows = Vec::with_capacity(results.len());
    for result in results {
        match result {
            Ok(row) => rows.push(row),
            Err((code, msg)) => {
                eprintln!("{msg}");
                return code;
            }
        }
    }
    rows.sort_by(|a, b| {
        let (la, lb) = (
            a.final_loss.unwrap_or(f64::INFINITY),
            b.final_loss.unwrap_or(f64::INFINITY),
        );
        la.partial_cmp(&lb)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cell.cmp(&b.cell))
    });
    let mut summary_csv = String::from("cell,params,final_loss,final_accuracy\n");
    for row in &rows {
        summary_csv.push_str(&format!(
            "{},{},{},{}\n",
            row.cell,
            row.params,
            row.final_loss.map(|l| l.to_string()).unwrap_or_default(),
            row.final_accuracy
                .map(|a| a.to_string())
                .unwrap_or_default()
        ));
    }
    if let Err(msg) = write_file(&out_dir.join("summary.csv"), &summary_csv) {
        eprintln!("{msg}");
        return EXIT_RUNTIME;
    }
    if cli.json {
        println!("{}", serde_json::to_string_pretty(&rows).unwrap());
    } else {
        println!(
            "{} cells completed; summary in {}",
            rows.len(),
            out_dir.join("summary.csv").display()
        );
    }
    EXIT_OK
}

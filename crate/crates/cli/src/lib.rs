//! Experiment harness behind the `mixsense` binary: seeded synthetic runs,
//! convergence traces and noise sweeps, written as CSV and JSON.

pub mod config;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
struct Guide;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use mixsense::dataset::{sample_dataset, StorageMode};
use mixsense::pipeline::{inspect_pipeline, run_pipeline, RecoveryReport};
use mixsense::synth::derive_seed;
use mixsense::Error;
use rayon::prelude::*;
use serde::Serialize;

pub use config::{Command, ExperimentConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Clone)]
pub struct Options {
    pub config: PathBuf,
    pub out: PathBuf,
    /// Worker threads; rayon's default when absent.
    pub threads: Option<usize>,
    /// Single-threaded execution.
    pub deterministic: bool,
}

/// Failure carrying the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Failure {
            code: EXIT_IO,
            message: format!("{}: {e}", path.display()),
        }
    }
}

/// Exit code of an error raised while a trial runs.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Config(_) => EXIT_CONFIG,
        Error::Io(_) => EXIT_IO,
        _ => EXIT_NUMERICAL,
    }
}

/// Runs `cmd` and returns the process exit code, reporting problems on stderr.
pub fn execute(cmd: Command, opts: &Options) -> i32 {
    match dispatch(cmd, opts) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cmd: Command, opts: &Options) -> Result<(), Failure> {
    let text = fs::read_to_string(&opts.config)
        .map_err(|e| Failure::config(format!("{}: {e}", opts.config.display())))?;
    let cfg = ExperimentConfig::parse(&text).map_err(Failure::config)?;
    cfg.check(cmd).map_err(Failure::config)?;
    let threads = if opts.deterministic { Some(1) } else { opts.threads };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(Failure::config("--threads must be at least 1"));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Failure::config(format!("thread pool: {e}")))?;
    if cfg.storage_mode() == StorageMode::Streamed {
        eprintln!(
            "warning: {}x{} designs with N = {} exceed the storage budget; regenerating them on every pass (slow)",
            cfg.n1,
            cfg.n2,
            cfg.samples()
        );
    }
    fs::create_dir_all(&opts.out).map_err(|e| Failure::io(&opts.out, e))?;
    pool.install(|| match cmd {
        Command::Run => cmd_run(&cfg, &opts.out),
        Command::Trace => cmd_trace(&cfg, &opts.out),
        Command::SweepNoise => cmd_sweep_noise(&cfg, &opts.out),
    })
}

/// One seeded trial at noise level `sigma`.
pub fn run_trial(cfg: &ExperimentConfig, t: usize, sigma: f64) -> mixsense::Result<RecoveryReport> {
    let seed = cfg.trial_seed(t);
    let gt = cfg.ground_truth(seed)?;
    let mode = cfg.storage_mode();
    let n = cfg.samples();
    let d_main = sample_dataset(&gt, n, sigma, derive_seed(seed, 1), mode)?;
    let pcfg = mixsense::pipeline::PipelineConfig {
        seed,
        ..cfg.pipeline.clone()
    };
    let d_mlr = if pcfg.splits_samples() {
        Some(sample_dataset(&gt, n, sigma, derive_seed(seed, 2), mode)?)
    } else {
        None
    };
    let report = if pcfg.t0 == 0 {
        inspect_pipeline(&d_main, d_mlr.as_ref(), &pcfg, Some(&gt))?
    } else {
        run_pipeline(&d_main, d_mlr.as_ref(), &pcfg, Some(&gt))?
    };
    for w in &report.warnings {
        eprintln!("warning: seed {seed}: {w}");
    }
    Ok(report)
}

fn trials(cfg: &ExperimentConfig, sigma: f64) -> Vec<mixsense::Result<RecoveryReport>> {
    (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, t, sigma))
        .collect()
}

#[derive(Serialize)]
struct SummaryRow {
    seed: u64,
    component: usize,
    rel_error: Option<f64>,
    init_error: Option<f64>,
    r_used: usize,
}

#[derive(Serialize)]
struct TraceRow {
    iter: usize,
    component: usize,
    rel_error: Option<f64>,
    tau: f64,
    kept: usize,
}

#[derive(Serialize)]
struct SweepRow {
    sigma: f64,
    mean_max_rel_error: f64,
    trials: usize,
}

#[derive(Serialize)]
struct TrialFailure {
    seed: u64,
    error: String,
}

#[derive(Serialize)]
struct RunReport<'a> {
    command: &'static str,
    config: &'a ExperimentConfig,
    trials: Vec<&'a RecoveryReport>,
    failures: Vec<TrialFailure>,
}

#[derive(Serialize)]
struct SweepPoint {
    sigma: f64,
    max_rel_errors: Vec<f64>,
    failures: Vec<TrialFailure>,
}

#[derive(Serialize)]
struct SweepReport<'a> {
    command: &'static str,
    config: &'a ExperimentConfig,
    points: &'a [SweepPoint],
}

/// Header-first CSV writer; the header is present even when no rows follow.
fn csv_writer(out: &Path, name: &str, header: &[&str]) -> Result<(csv::Writer<fs::File>, PathBuf), Failure> {
    let path = out.join(name);
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(&path)
        .map_err(|e| Failure::io(&path, e))?;
    w.write_record(header).map_err(|e| Failure::io(&path, e))?;
    w.flush().map_err(|e| Failure::io(&path, e))?;
    Ok((w, path))
}

fn write_json(out: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let path = out.join("report.json");
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::io(&path, e))?;
    text.push('\n');
    fs::File::create(&path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| Failure::io(&path, e))
}

/// Splits trial outcomes into reports and failures; returns the exit code of
/// the first failure.
fn partition<'a>(
    cfg: &ExperimentConfig,
    results: &'a [mixsense::Result<RecoveryReport>],
) -> (Vec<(u64, &'a RecoveryReport)>, Vec<TrialFailure>, Option<Failure>) {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    let mut first = None;
    for (t, r) in results.iter().enumerate() {
        let seed = cfg.trial_seed(t);
        match r {
            Ok(rep) => ok.push((seed, rep)),
            Err(e) => {
                first.get_or_insert_with(|| Failure {
                    code: exit_code(e),
                    message: format!("seed {seed}: {e}"),
                });
                failed.push(TrialFailure {
                    seed,
                    error: e.to_string(),
                });
            }
        }
    }
    (ok, failed, first)
}

/// `trials` seeded pipelines → `summary.csv` and `report.json`. Completed
/// trials are written even when another trial fails.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path) -> Result<(), Failure> {
    let sigma = cfg.sigma.values()[0];
    let results = trials(cfg, sigma);
    let (ok, failures, first) = partition(cfg, &results);
    let (mut w, path) = csv_writer(
        out,
        "summary.csv",
        &["seed", "component", "rel_error", "init_error", "R_used"],
    )?;
    for (seed, rep) in &ok {
        for (j, c) in rep.per_component.iter().enumerate() {
            w.serialize(SummaryRow {
                seed: *seed,
                component: j,
                rel_error: c.rel_error,
                init_error: c.init_error,
                r_used: rep.stage1.r_used,
            })
            .map_err(|e| Failure::io(&path, e))?;
        }
    }
    w.flush().map_err(|e| Failure::io(&path, e))?;
    write_json(
        out,
        &RunReport {
            command: "run",
            config: cfg,
            trials: ok.iter().map(|(_, r)| *r).collect(),
            failures,
        },
    )?;
    first.map_or(Ok(()), Err)
}

/// Per-iteration `trace.csv` of the first trial, one block per component.
pub fn cmd_trace(cfg: &ExperimentConfig, out: &Path) -> Result<(), Failure> {
    if cfg.trials > 1 {
        eprintln!("warning: trace records only the first of {} trials", cfg.trials);
    }
    let result = run_trial(cfg, 0, cfg.sigma.values()[0]);
    let results = [result];
    let (ok, failures, first) = partition(cfg, &results);
    let (mut w, path) = csv_writer(
        out,
        "trace.csv",
        &["iter", "component", "rel_error", "tau", "kept"],
    )?;
    let mut trace_of_failure = None;
    if let Some(Err(e)) = results.first() {
        if let Error::PreconditionerSingular { trace, .. } = e.root() {
            trace_of_failure = Some(trace.clone());
        }
    }
    let traces: Vec<(usize, &mixsense::scaledtgd::TgdTrace)> = match (ok.first(), &trace_of_failure) {
        (Some((_, rep)), _) => rep.per_component.iter().map(|c| &c.trace).enumerate().collect(),
        (None, Some(t)) => {
            let comp = match &results[0] {
                Err(Error::Stage { component, .. }) => component.unwrap_or(0),
                _ => 0,
            };
            vec![(comp, t)]
        }
        _ => Vec::new(),
    };
    for (j, trace) in traces {
        for r in &trace.records {
            w.serialize(TraceRow {
                iter: r.iter,
                component: j,
                rel_error: r.rel_error,
                tau: r.tau,
                kept: r.kept,
            })
            .map_err(|e| Failure::io(&path, e))?;
        }
    }
    w.flush().map_err(|e| Failure::io(&path, e))?;
    write_json(
        out,
        &RunReport {
            command: "trace",
            config: cfg,
            trials: ok.iter().map(|(_, r)| *r).collect(),
            failures,
        },
    )?;
    first.map_or(Ok(()), Err)
}

/// For each noise level, the mean over trials of the worst component error.
/// Rows are flushed as each level completes; the sweep stops at the first
/// level with a failed trial.
pub fn cmd_sweep_noise(cfg: &ExperimentConfig, out: &Path) -> Result<(), Failure> {
    let (mut w, path) = csv_writer(out, "sweep.csv", &["sigma", "mean_max_rel_error", "trials"])?;
    let mut points = Vec::new();
    let mut outcome = Ok(());
    for sigma in cfg.sigma.values() {
        let results = trials(cfg, sigma);
        let (ok, failures, first) = partition(cfg, &results);
        let max_rel_errors: Vec<f64> = ok
            .iter()
            .map(|(_, r)| r.max_rel_error().expect("truth is always supplied"))
            .collect();
        if first.is_none() {
            let mean = max_rel_errors.iter().sum::<f64>() / max_rel_errors.len() as f64;
            w.serialize(SweepRow {
                sigma,
                mean_max_rel_error: mean,
                trials: max_rel_errors.len(),
            })
            .map_err(|e| Failure::io(&path, e))?;
            w.flush().map_err(|e| Failure::io(&path, e))?;
        }
        points.push(SweepPoint {
            sigma,
            max_rel_errors,
            failures,
        });
        if let Some(f) = first {
            outcome = Err(Failure {
                code: f.code,
                message: format!("sigma {sigma}: {}", f.message),
            });
            break;
        }
    }
    write_json(
        out,
        &SweepReport {
            command: "sweep-noise",
            config: cfg,
            points: &points,
        },
    )?;
    outcome
}

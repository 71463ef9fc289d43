//! Subcommands of the `srd` binary.
//!
//! Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage error.
//! Commands that write to `--out` first write `config.echo`, the fully
//! resolved configuration; feeding it back through `--config` reproduces
//! the run.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use srd_core::config::{validate_deadlines, EvalConfig};
use srd_core::data::{compute_stats, parse_events, to_jsonl, SyntheticConfig};
use srd_core::eval::{cross_validate, early_detection_curve, format_deadline, metrics_csv, sweep, CrossValidation, MetricsRow, SweepGrid};
use srd_core::selfcheck::{format_checks, gradcheck_suite, ToyDims};
use srd_core::train::EpochRecord;
use srd_core::{Checkpoint, Config, Error, Mode};

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

pub const SEED_ENV: &str = "SRD_SEED";

#[derive(Debug, Parser)]
#[command(name = "srd", version, about = "Self-supervised rumor detection over propagation trees and post text")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic labeled corpus and its statistics.
    Generate(GenerateArgs),
    /// Print dataset statistics as CSV.
    Stats(StatsArgs),
    /// k-fold training with checkpoints, logs and metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint at one or more detection deadlines.
    Eval(EvalArgs),
    /// Finite-difference check of every training mode at toy sizes.
    Gradcheck(GradcheckArgs),
    /// Cross-validate every point of a mode / lambda / tau grid.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 400, value_parser = positive)]
    pub events: usize,
    #[arg(long, default_value_t = 4, value_parser = at_least_two)]
    pub classes: usize,
    /// Strength of the label signal in structure and text, in [0, 1].
    #[arg(long, default_value_t = 0.8, value_parser = unit_interval)]
    pub correlation: f64,
    #[arg(long, env = SEED_ENV, default_value_t = 7)]
    pub seed: u64,
    /// Output directory; receives events.jsonl and stats.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Events in JSONL form.
    #[arg(long)]
    pub data: PathBuf,
    /// Also write the CSV to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Configuration file plus flag overrides shared by training commands.
#[derive(Debug, Default, Args)]
pub struct ConfigArgs {
    /// TOML configuration; absent keys keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_max: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Root seed; falls back to SRD_SEED, then to the configuration.
    #[arg(long, env = SEED_ENV)]
    pub seed: Option<u64>,
    /// Detection deadlines in minutes, comma separated; `inf` keeps whole trees.
    #[arg(long, value_delimiter = ',')]
    pub deadlines: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated deadlines in minutes; defaults to whole trees only.
    #[arg(long, value_delimiter = ',')]
    pub deadlines: Option<Vec<f64>>,
    /// Output directory; receives config.echo, metrics.csv and reports.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "toy", value_parser = ["toy"])]
    pub dims: String,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_delimiter = ',', value_parser = parse_mode)]
    pub modes: Vec<Mode>,
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub taus: Vec<f64>,
}

/// A failed command, carrying its exit code class.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for Failure {}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

pub type Outcome<T = ()> = std::result::Result<T, Failure>;

pub fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Stats(a) => cmd_stats(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Sweep(a) => cmd_sweep(&a),
    }
}

fn positive(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(format!("expected a positive integer, got {s:?}")),
    }
}

fn at_least_two(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n >= 2 => Ok(n),
        _ => Err(format!("expected an integer >= 2, got {s:?}")),
    }
}

fn unit_interval(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if (0.0..=1.0).contains(&x) => Ok(x),
        _ => Err(format!("expected a number in [0, 1], got {s:?}")),
    }
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn write_file(path: &Path, contents: &str) -> Outcome {
    fs::write(path, contents).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Outcome {
    fs::create_dir_all(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> Outcome<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Failure::Runtime(e.to_string()))
}

impl ConfigArgs {
    /// File values, then flag overrides, validated and with derived
    /// defaults filled in.
    pub fn resolve(&self) -> Outcome<Config> {
        let mut c = match &self.config {
            Some(path) => Config::from_file(path).map_err(|e| match e {
                Error::Io { .. } => Failure::Runtime(e.to_string()),
                other => Failure::from(other),
            })?,
            None => Config::default(),
        };
        let t = &mut c.train;
        if let Some(m) = self.mode {
            t.mode = m;
        }
        if let Some(x) = self.lambda {
            t.lambda = x;
        }
        if let Some(x) = self.tau {
            t.tau = x;
        }
        if let Some(x) = self.epochs {
            t.epochs = x;
        }
        if let Some(x) = self.batch_size {
            t.batch_size = x;
        }
        if let Some(x) = self.lr_max {
            t.lr_max = x;
            t.lr_min = None;
        }
        if let Some(x) = self.patience {
            t.patience = x;
        }
        if let Some(x) = self.folds {
            t.folds = x;
        }
        if let Some(x) = self.seed {
            t.seed = x;
        }
        if let Some(d) = &self.deadlines {
            c.eval.deadlines = d.clone();
        }
        c.validate()?;
        Ok(c.resolved())
    }
}

pub fn cmd_generate(a: &GenerateArgs) -> Outcome {
    if a.events < a.classes {
        return Err(Failure::Usage(format!(
            "--events {} is fewer than --classes {}",
            a.events, a.classes
        )));
    }
    let cfg = SyntheticConfig::new(a.events, a.classes, a.correlation, a.seed);
    let events = srd_core::data::synthetic::generate(&cfg).map_err(|e| Failure::Usage(e.to_string()))?;
    let jsonl = to_jsonl(&events)?;
    create_dir(&a.out)?;
    write_file(&a.out.join("events.jsonl"), &jsonl)?;
    write_file(&a.out.join("stats.csv"), &compute_stats(&events).to_csv())?;
    println!(
        "generated {} events, {} classes, correlation {}, seed {} -> {}",
        a.events,
        a.classes,
        a.correlation,
        a.seed,
        a.out.display()
    );
    Ok(())
}

pub fn cmd_stats(a: &StatsArgs) -> Outcome {
    let events = parse_events(&a.data)?;
    let csv = compute_stats(&events).to_csv();
    if let Some(path) = &a.out {
        write_file(path, &csv)?;
    }
    print!("{csv}");
    Ok(())
}

#[derive(Serialize)]
struct LogLine<'a> {
    fold: usize,
    #[serde(flatten)]
    record: &'a EpochRecord,
}

fn train_log(cv: &CrossValidation) -> Outcome<String> {
    let mut out = String::new();
    for f in &cv.folds {
        for record in &f.log {
            let line = serde_json::to_string(&LogLine { fold: f.fold, record })
                .map_err(|e| Failure::Runtime(e.to_string()))?;
            out.push_str(&line);
            out.push('\n');
        }
    }
    Ok(out)
}

fn print_summary(cv: &CrossValidation) {
    let s = cv.summary();
    println!("mode={} lambda={} tau={} folds={}", s.mode, s.lambda, s.tau, s.folds);
    println!("{:>10} {:>10} {:>10}", "deadline", "accuracy", "std");
    for d in &s.deadlines {
        println!("{:>10} {:>10.4} {:>10.4}", d.deadline, d.mean_accuracy, d.std_accuracy);
    }
}

/// Fixed output layout: `config.echo`, `train_log.jsonl`, `metrics.csv`,
/// `summary.json` and `checkpoints/fold_k.srd`.
pub fn cmd_train(a: &TrainArgs) -> Outcome {
    let config = a.config.resolve()?;
    let events = parse_events(&a.data)?;
    create_dir(&a.out)?;
    write_file(&a.out.join("config.echo"), &config.echo()?)?;

    let started = Instant::now();
    let cv = cross_validate(&events, &config, &mut |fold, epoch, step, _| {
        if step == 1 && epoch == 0 {
            eprintln!("fold {fold}: training");
        }
    })?;

    let ck_dir = a.out.join("checkpoints");
    create_dir(&ck_dir)?;
    for f in &cv.folds {
        f.checkpoint.save(ck_dir.join(format!("fold_{}.srd", f.fold)))?;
    }
    write_file(&a.out.join("train_log.jsonl"), &train_log(&cv)?)?;
    write_file(&a.out.join("metrics.csv"), &metrics_csv(&cv.rows(), cv.classes))?;
    write_file(&a.out.join("summary.json"), &to_json(&cv.summary())?)?;
    print_summary(&cv);
    eprintln!("finished in {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}

/// Everything is computed before the output directory is touched, so a
/// bad checkpoint or data file leaves nothing behind.
pub fn cmd_eval(a: &EvalArgs) -> Outcome {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let deadlines = a.deadlines.clone().unwrap_or_else(|| vec![f64::INFINITY]);
    validate_deadlines(&deadlines)?;
    let events = parse_events(&a.data)?;
    let model = ck.to_model()?;
    let mut reports = early_detection_curve(&model, &ck.vocab, &events, &deadlines)?;
    for r in &mut reports {
        r.fold = Some(ck.fold);
    }
    let rows: Vec<MetricsRow> = reports
        .iter()
        .map(|r| MetricsRow {
            mode: ck.mode,
            lambda: ck.train.lambda,
            tau: ck.train.tau,
            fold: ck.fold,
            report: r.clone(),
        })
        .collect();
    let config = Config {
        data: ck.data.clone(),
        model: ck.model.clone(),
        train: ck.train.clone(),
        eval: EvalConfig { deadlines },
    };
    let echo = config.echo()?;
    let csv = metrics_csv(&rows, ck.dims.classes);
    let json = to_json(&reports)?;

    create_dir(&a.out)?;
    write_file(&a.out.join("config.echo"), &echo)?;
    write_file(&a.out.join("metrics.csv"), &csv)?;
    write_file(&a.out.join("reports.json"), &json)?;
    println!("{:>10} {:>8} {:>10}", "deadline", "events", "accuracy");
    for r in &reports {
        let d = r.deadline.map_or_else(|| "inf".into(), format_deadline);
        println!("{d:>10} {:>8} {:>10.4}", r.events(), r.accuracy);
    }
    Ok(())
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Outcome {
    if !(a.tol > 0.0) || !(a.eps > 0.0) {
        return Err(Failure::Usage("--tol and --eps must be positive".into()));
    }
    let dims = ToyDims::default();
    println!(
        "dims={} seed={} eps={:e} tol={:e} vocab={} d_model={} heads={} seq_len={} batch={} clusters={}",
        a.dims, a.seed, a.eps, a.tol, dims.vocab, dims.d_model, dims.heads, dims.seq_len, dims.batch, dims.clusters
    );
    let started = Instant::now();
    let checks = gradcheck_suite(&dims, a.seed, a.eps, a.tol)?;
    print!("{}", format_checks(&checks));
    eprintln!("finished in {:.1}s", started.elapsed().as_secs_f64());
    let failed: Vec<&str> = checks.iter().filter(|c| !c.report.passed).map(|c| c.mode.name()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("gradient check failed for {}", failed.join(", "))))
    }
}

/// Writes `config.echo` for the base configuration, then `metrics.csv` and
/// `summary.json` covering every grid point.
pub fn cmd_sweep(a: &SweepArgs) -> Outcome {
    let base = a.config.resolve()?;
    let grid = SweepGrid {
        modes: if a.modes.is_empty() { vec![base.train.mode] } else { a.modes.clone() },
        lambdas: if a.lambdas.is_empty() { vec![base.train.lambda] } else { a.lambdas.clone() },
        taus: if a.taus.is_empty() { vec![base.train.tau] } else { a.taus.clone() },
    };
    grid.configs(&base)?;
    let events = parse_events(&a.data)?;
    create_dir(&a.out)?;
    write_file(&a.out.join("config.echo"), &base.echo()?)?;

    let runs = sweep(&grid, &base, &events, &mut |c, fold, epoch, step, _| {
        if fold == 0 && epoch == 0 && step == 1 {
            eprintln!("mode={} lambda={} tau={}", c.train.mode, c.train.lambda, c.train.tau);
        }
    })?;
    let classes = runs.first().map_or(0, |r| r.classes);
    let rows: Vec<MetricsRow> = runs.iter().flat_map(|r| r.rows()).collect();
    let summaries: Vec<_> = runs.iter().map(|r| r.summary()).collect();
    write_file(&a.out.join("metrics.csv"), &metrics_csv(&rows, classes))?;
    write_file(&a.out.join("summary.json"), &to_json(&summaries)?)?;
    for r in &runs {
        print_summary(r);
    }
    Ok(())
}

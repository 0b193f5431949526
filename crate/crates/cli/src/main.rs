//! `mspac` command-line harness.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure
//! (including a failed gradient check), 3 I/O or malformed file.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mspac::autodiff::GradReport;
use mspac::config::RunConfig;
use mspac::data::Dataset;
use mspac::harness::{self, Axis};
use mspac::metrics::{Search, Shot};
use mspac::Error;

#[derive(Parser, Debug)]
#[command(name = "mspac", version, about = "MSPAC-MeCen cross-modality re-identification at desk scale")]
struct Cli {
    /// Output root (default: $MSPAC_OUT, else ./mspac-out).
    #[arg(long, global = true, value_name = "DIR")]
    root: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override one configuration key, e.g. `--set loss.lambda=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic two-modality dataset.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        ids: Option<usize>,
        #[arg(long)]
        per_id: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Dataset directory (default: <root>/data).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Train from scratch, writing a checkpoint per epoch and the train log.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset manifest (default: <root>/data/manifest.csv).
        #[arg(long, value_name = "CSV")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on the query/gallery split and write report.csv.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint directory (default: the last epoch under <root>/checkpoints).
        #[arg(long, value_name = "DIR")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "CSV")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        search: Option<Search>,
        #[arg(long)]
        shot: Option<Shot>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Finite-difference check of every parameter group on a tiny model.
    Gradcheck {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train and evaluate the variants of one ablation axis.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// scales, attention, loss, margin or lambda.
        #[arg(long)]
        axis: Axis,
        #[arg(long, value_name = "CSV")]
        manifest: Option<PathBuf>,
    },
}

fn resolve(args: &ConfigArgs, flags: &[(&str, Option<String>)]) -> mspac::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn opt<T: ToString>(v: Option<T>) -> Option<String> {
    v.map(|v| v.to_string())
}

fn last_checkpoint(root: &Path) -> mspac::Result<PathBuf> {
    let dir = root.join("checkpoints");
    let entries = fs::read_dir(&dir).map_err(|source| Error::Io {
        path: dir.clone(),
        source,
    })?;
    entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .max()
        .ok_or_else(|| Error::Precondition(format!("no checkpoints under {}", dir.display())))
}

fn print_grad_reports(reports: &[GradReport]) {
    println!(
        "{:<22} {:>12} {:>12} {:>12} {:>8} {:>8}  status",
        "parameter", "max_rel_err", "max_abs_err", "max_|grad|", "checked", "skipped"
    );
    for r in reports {
        println!(
            "{:<22} {:>12.3e} {:>12.3e} {:>12.3e} {:>8} {:>8}  {}",
            r.param_name,
            r.max_rel_err,
            r.max_abs_err,
            r.max_abs_grad,
            r.checked,
            r.skipped,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
}

fn run(cli: Cli) -> mspac::Result<ExitCode> {
    let root = harness::output_root(cli.root);
    match cli.command {
        Command::GenData {
            cfg,
            ids,
            per_id,
            seed,
            out,
        } => {
            let cfg = resolve(
                &cfg,
                &[("data.ids", opt(ids)), ("data.per_id", opt(per_id)), ("data.seed", opt(seed))],
            )?;
            let dir = out.unwrap_or_else(|| root.join("data"));
            let data = harness::gen_data(&cfg.synth(), &dir)?;
            println!(
                "wrote {} records for {} identities to {}",
                data.manifest.records.len(),
                data.manifest.n_ids(),
                dir.display()
            );
        }
        Command::Train {
            cfg,
            manifest,
            epochs,
            seed,
        } => {
            let cfg = resolve(&cfg, &[("train.epochs", opt(epochs)), ("train.seed", opt(seed))])?;
            let manifest = manifest.unwrap_or_else(|| harness::default_manifest(&root));
            eprintln!("{}", harness::TrainRow::CSV_HEADER);
            let (_, log) = harness::cmd_train(&cfg, &manifest, &root, &mut |row| eprintln!("{}", row.csv_row()))?;
            println!(
                "trained {} epochs; checkpoints and {} in {}",
                log.len(),
                harness::TRAIN_LOG,
                root.display()
            );
        }
        Command::Eval {
            cfg,
            checkpoint,
            manifest,
            search,
            shot,
            trials,
        } => {
            let cfg = resolve(
                &cfg,
                &[("eval.search", opt(search)), ("eval.shot", opt(shot)), ("eval.trials", opt(trials))],
            )?;
            let checkpoint = match checkpoint {
                Some(c) => c,
                None => last_checkpoint(&root)?,
            };
            let manifest = manifest.unwrap_or_else(|| harness::default_manifest(&root));
            let report = harness::cmd_eval(&checkpoint, &manifest, &cfg.eval, &root)?;
            println!("{report}");
        }
        Command::Gradcheck { cfg } => {
            let cfg = resolve(&cfg, &[])?;
            let reports = harness::cmd_gradcheck(&cfg)?;
            print_grad_reports(&reports);
            if reports.iter().any(|r| !r.passed) {
                eprintln!("gradient check failed");
                return Ok(ExitCode::from(2));
            }
        }
        Command::Ablate { cfg, axis, manifest } => {
            let cfg = resolve(&cfg, &[])?;
            let manifest = manifest.unwrap_or_else(|| harness::default_manifest(&root));
            let data = Dataset::load(&manifest)?;
            let mut cfg = cfg;
            cfg.data.n_ids = data.manifest.n_ids();
            let rows = harness::cmd_ablate(&cfg, axis, &data, Some(&root), &mut |row| match &row.failure {
                None => eprintln!("{:<22} {}", row.variant, row.report),
                Some(msg) => eprintln!("{:<22} diverged: {msg}", row.variant),
            })?;
            println!(
                "{} variants written to {}",
                rows.len(),
                root.join(format!("ablate_{axis}.csv")).display()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

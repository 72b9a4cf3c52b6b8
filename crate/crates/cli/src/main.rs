use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use fcu_core::checkpoint::{Checkpoint, TrainingProvenance};
use fcu_core::eval::{attach_reference, emit_report, read_reports, render_table, write_reports};
use fcu_core::federation::RoundLog;
use fcu_core::{Error, Experiment, MetricsReport, ParameterSet, RunConfig};

#[derive(Parser)]
#[command(name = "fcu", version, about = "Federated client unlearning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Federated training over all clients; writes the trained model.
    Train(RunArgs),
    /// Local unlearning on the target client, then post-training.
    Unlearn(UnlearnArgs),
    /// Retrain from scratch without the target client.
    Retrain(RunArgs),
    /// Continue training the trained model on the remaining clients.
    Finetune(FinetuneArgs),
    /// Combine report files into one table.
    Compare(CompareArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct UnlearnArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Trained model checkpoint, defaults to `<out>/origin/model`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    no_fgmp: bool,
    #[arg(long)]
    no_post_train: bool,
}

#[derive(Args)]
struct FinetuneArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Combine reports even when config digests differ.
    #[arg(long)]
    force: bool,
    /// Also write the combined reports to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Checkpoint(String),
    Comparison(String),
    Other(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Other(_) => 1,
            Failure::Config(_) => 2,
            Failure::Checkpoint(_) => 3,
            Failure::Comparison(_) => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Checkpoint(m) => write!(f, "checkpoint mismatch: {m}"),
            Failure::Comparison(m) => write!(f, "comparison mismatch: {m}"),
            Failure::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            Error::ArchitectureMismatch(_) | Error::Checkpoint(_) => Failure::Checkpoint(e.to_string()),
            other => Failure::Other(other.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

type CmdResult<T> = std::result::Result<T, Failure>;

fn load_config(args: &RunArgs) -> CmdResult<RunConfig> {
    let mut cfg = match RunConfig::load(&args.config) {
        Ok(c) => c,
        Err(Error::Io { path, source }) => {
            return Err(Failure::Config(format!("cannot read config file {path}: {source}")))
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn provenance(exp: &Experiment, phase: &str, round: usize) -> TrainingProvenance {
    TrainingProvenance {
        phase: phase.to_string(),
        round,
        seed: exp.config().seed,
        config_digest: exp.digest().to_string(),
    }
}

fn save_model(exp: &Experiment, params: &ParameterSet, dir: &Path, phase: &str, round: usize) -> CmdResult<()> {
    Checkpoint::new(exp.architecture().clone(), params.clone(), provenance(exp, phase, round))?.save(dir)?;
    log::info!("wrote checkpoint {}", dir.display());
    Ok(())
}

fn write_log(path: &Path, log: &[RoundLog]) -> CmdResult<()> {
    let mut s = String::from("round,mean_loss\n");
    for r in log {
        let _ = writeln!(s, "{},{}", r.round, r.mean_loss);
    }
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn create_dir(dir: &Path) -> CmdResult<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

/// Fills the efficacy gap from a retrain report of the same experiment, if
/// one has been written.
fn with_retrain_reference(cfg: &RunConfig, report: MetricsReport) -> MetricsReport {
    let path = cfg.output_dir.join("retrain").join("report.json");
    match read_reports(&path) {
        Ok(rs) => match rs.iter().find(|r| r.method == "retrain" && r.config_digest == report.config_digest) {
            Some(r) => report.with_reference(r.error_f),
            None => report,
        },
        Err(_) => report,
    }
}

fn finish(report: MetricsReport, dir: &Path) -> CmdResult<()> {
    let path = dir.join("report.json");
    let table = emit_report(std::slice::from_ref(&report), &path)?;
    print!("{table}");
    log::info!("wrote report {}", path.display());
    Ok(())
}

fn default_checkpoint(cfg: &RunConfig, given: &Option<PathBuf>) -> PathBuf {
    given
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join("origin").join("model"))
}

fn load_trained(exp: &Experiment, dir: &Path) -> CmdResult<ParameterSet> {
    match Checkpoint::load_for(dir, exp.architecture()) {
        Ok(ck) => Ok(ck.params),
        Err(Error::Io { path, source }) => Err(Failure::Checkpoint(format!("cannot read {path}: {source}"))),
        Err(e) => Err(e.into()),
    }
}

fn cmd_train(args: RunArgs) -> CmdResult<()> {
    let cfg = load_config(&args)?;
    let exp = Experiment::build(cfg)?;
    let out = exp.train_origin()?;
    let dir = exp.config().output_dir.join("origin");
    create_dir(&dir)?;
    save_model(&exp, &out.model.params, &dir.join("model"), "train", out.model.round)?;
    write_log(&dir.join("train_log.csv"), &out.log)?;
    let report = exp.evaluate("origin", &out.model.params, out.elapsed)?;
    finish(with_retrain_reference(exp.config(), report), &dir)
}

fn cmd_unlearn(args: UnlearnArgs) -> CmdResult<()> {
    let mut cfg = load_config(&args.run)?;
    cfg.fgmp_enabled &= !args.no_fgmp;
    cfg.post_train_enabled &= !args.no_post_train;
    let ck = default_checkpoint(&cfg, &args.checkpoint);
    let exp = Experiment::build(cfg)?;
    let trained = load_trained(&exp, &ck)?;
    let run = exp.unlearn(&trained)?;
    let method = exp.config().method_name();
    let dir = exp.config().output_dir.join(method);
    create_dir(&dir)?;
    save_model(&exp, &run.unlearned, &dir.join("unlearned"), "unlearn", run.trace.len())?;
    if let Some(p) = &run.post_train {
        if p.target_reads != 0 {
            return Err(Failure::Other(anyhow::anyhow!(
                "target client data was read {} times during post-training",
                p.target_reads
            )));
        }
        save_model(&exp, &p.outcome.model.params, &dir.join("final"), "post-train", p.outcome.model.round)?;
    }
    log::info!(
        "local unlearning: {} iterations, {} blends, {:.3}s",
        run.trace.len(),
        run.fgmp_applications,
        run.unlearn_elapsed.as_secs_f64()
    );
    let report = exp.evaluate(method, run.final_params(), run.elapsed())?;
    finish(with_retrain_reference(exp.config(), report), &dir)
}

fn cmd_retrain(args: RunArgs) -> CmdResult<()> {
    let cfg = load_config(&args)?;
    let exp = Experiment::build(cfg)?;
    let run = exp.retrain()?;
    if run.target_reads != 0 {
        return Err(Failure::Other(anyhow::anyhow!(
            "target client data was read {} times during retraining",
            run.target_reads
        )));
    }
    let dir = exp.config().output_dir.join("retrain");
    create_dir(&dir)?;
    let params = &run.outcome.model.params;
    save_model(&exp, params, &dir.join("model"), "retrain", run.outcome.model.round)?;
    write_log(&dir.join("train_log.csv"), &run.outcome.log)?;
    let report = exp.evaluate("retrain", params, run.outcome.elapsed)?;
    let error_f = report.error_f;
    finish(report.with_reference(error_f), &dir)
}

fn cmd_finetune(args: FinetuneArgs) -> CmdResult<()> {
    let cfg = load_config(&args.run)?;
    let ck = default_checkpoint(&cfg, &args.checkpoint);
    let exp = Experiment::build(cfg)?;
    let trained = load_trained(&exp, &ck)?;
    let run = exp.finetune(&trained)?;
    let dir = exp.config().output_dir.join("finetune");
    create_dir(&dir)?;
    let params = &run.outcome.model.params;
    save_model(&exp, params, &dir.join("model"), "finetune", run.outcome.model.round)?;
    let report = exp.evaluate("finetune", params, run.outcome.elapsed)?;
    finish(with_retrain_reference(exp.config(), report), &dir)
}

fn cmd_compare(args: CompareArgs) -> CmdResult<()> {
    let mut reports = Vec::new();
    for p in &args.reports {
        reports.extend(read_reports(p)?);
    }
    if reports.len() < 2 {
        return Err(Failure::Config(format!(
            "compare needs at least 2 reports, got {}",
            reports.len()
        )));
    }
    let first = reports[0].config_digest.clone();
    let odd: Vec<String> = reports
        .iter()
        .filter(|r| r.config_digest != first)
        .map(|r| format!("{} ({})", r.method, r.config_digest))
        .collect();
    if !odd.is_empty() {
        let msg = format!("config digest {first} differs from {}", odd.join(", "));
        if !args.force {
            return Err(Failure::Comparison(msg));
        }
        log::warn!("{msg}");
    }
    attach_reference(&mut reports);
    if let Some(out) = &args.out {
        write_reports(&reports, out)?;
    }
    print!("{}", render_table(&reports));
    Ok(())
}

fn configure_threads() -> CmdResult<()> {
    let Ok(raw) = std::env::var("FCU_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Config(format!("FCU_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Other(e.into()))
}

fn run(cli: Cli) -> CmdResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Unlearn(a) => cmd_unlearn(a),
        Command::Retrain(a) => cmd_retrain(a),
        Command::Finetune(a) => cmd_finetune(a),
        Command::Compare(a) => cmd_compare(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

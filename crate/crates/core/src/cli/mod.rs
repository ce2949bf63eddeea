//! Command-line orchestration: corpus generation, training, evaluation,
//! sweeps and report emission. Every command writes its outputs into a
//! staging directory that is renamed into place only when complete.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::corpus::{build_corpus, read_corpus, write_corpus, CorpusConfig};
use crate::error::{Error, Result};
use crate::metrics::{FairnessReport, MatchMode, Tolerances};
use crate::svtmodel::{FeatureNorm, SvtModel};
use crate::tensornet::{read_checkpoint, write_checkpoint};
use crate::trainer::{evaluate_model, prepare_songs, train, HistoryRow, Method, PreparedSong, RunRecord, TrainConfig};

mod sweep;

pub use sweep::{cmd_report, cmd_sweep, plan_runs, PlannedRun, SweepSpec, SWEEP_SPEC_VERSION};

pub const CONFIG_FILE: &str = "config.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const REPORT_FILE: &str = "report.json";

/// Exit status for configuration errors.
pub const EXIT_CONFIG: i32 = 2;
/// Exit status for training divergence.
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "fairsvt", version, about = "Fairness-aware singing voice transcription toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a corpus.
    Gen(GenArgs),
    /// Train one model on the train split of a corpus.
    Train(TrainArgs),
    /// Evaluate a run on the test split and write report.json into it.
    Eval(EvalArgs),
    /// Train and evaluate a hyper-parameter grid, then select trade-off points.
    Sweep(SweepArgs),
    /// Rebuild tradeoff.csv, tradeoff.svg and selection.json of a sweep.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Corpus config JSON; defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Train config JSON; defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Run directory; must not exist or be empty.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Restrict the report to one of con, conp, conpoff.
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Sweep spec JSON.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Override the sweep config's utility tolerance.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Concurrent runs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Sweep directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Metric used for selection: con, conp or conpoff.
    #[arg(long)]
    pub mode: Option<String>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(a.config.as_deref(), &a.out, a.seed),
        Command::Train(a) => cmd_train(a.config.as_deref(), &a.corpus, &a.out, a.seed),
        Command::Eval(a) => {
            let mode = a.mode.as_deref().map(parse_mode).transpose()?;
            cmd_eval(&a.run, &a.corpus, mode).map(|_| ())
        }
        Command::Sweep(a) => cmd_sweep(&a.config, &a.corpus, &a.out, a.delta, a.jobs),
        Command::Report(a) => {
            let mode = a.mode.as_deref().map(parse_mode).transpose()?;
            cmd_report(&a.out, a.delta, mode)
        }
    }
}

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::Diverged { .. } => EXIT_DIVERGED,
        _ => 1,
    }
}

fn parse_mode(s: &str) -> Result<MatchMode> {
    MatchMode::parse(s).map_err(|e| Error::Config(e.to_string()))
}

/// Reads a JSON config file; any failure is a configuration error.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Writes `bytes` next to `path` and renames over it.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = sibling(path, ".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}{suffix}"))
}

/// Refuses to touch an existing non-empty directory.
pub(crate) fn ensure_fresh(dir: &Path) -> Result<()> {
    if dir.exists() && (!dir.is_dir() || fs::read_dir(dir)?.next().is_some()) {
        return Err(Error::Config(format!(
            "{} exists and is not empty; resuming is not supported",
            dir.display()
        )));
    }
    Ok(())
}

/// Builds a directory's contents in a hidden sibling and renames it to
/// `dir` once `fill` succeeds. On failure nothing is left behind.
pub(crate) fn stage_dir(dir: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    ensure_fresh(dir)?;
    if let Some(parent) = dir.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let staging = sibling(dir, ".partial");
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir(&staging)?;
    if let Err(e) = fill(&staging) {
        let _ = fs::remove_dir_all(&staging);
        return Err(e);
    }
    if dir.exists() {
        fs::remove_dir(dir)?;
    }
    fs::rename(&staging, dir)?;
    Ok(())
}

pub fn cmd_gen(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = match config {
        Some(p) => read_config::<CorpusConfig>(p)?,
        None => CorpusConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    ensure_fresh(out)?;
    let corpus = build_corpus(&cfg)?;
    stage_dir(out, |dir| {
        write_corpus(&corpus, dir)?;
        write_json(&dir.join("corpus_config.json"), &cfg)
    })?;
    info!(
        "wrote {} train and {} test songs to {}",
        corpus.train.len(),
        corpus.test.len(),
        out.display()
    );
    Ok(())
}

fn load_train_config(config: Option<&Path>, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = match config {
        Some(p) => read_config::<TrainConfig>(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Features and labels of one split of a corpus directory.
pub fn load_split(corpus: &Path, cfg: &TrainConfig, test: bool) -> Result<Vec<PreparedSong>> {
    let c = read_corpus(corpus)?;
    let songs = if test { &c.test } else { &c.train };
    prepare_songs(songs, &cfg.frontend, &cfg.model.octaves)
}

pub fn history_csv(history: &[HistoryRow]) -> String {
    let mut s = String::from("step,L_y,L_A\n");
    for r in history {
        let la = r.l_a.map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{}\n", r.step, r.l_y, la));
    }
    s
}

/// Writes config, history and checkpoint of a finished run into `dir`.
pub fn write_run(dir: &Path, run: &RunRecord) -> Result<()> {
    write_json(&dir.join(CONFIG_FILE), &run.config)?;
    fs::write(dir.join(HISTORY_FILE), history_csv(&run.history))?;
    let mut w = BufWriter::new(fs::File::create(dir.join(CHECKPOINT_FILE))?);
    write_checkpoint(&mut w, &run.model.records())?;
    w.flush()?;
    Ok(())
}

pub fn cmd_train(config: Option<&Path>, corpus: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = load_train_config(config, seed)?;
    ensure_fresh(out)?;
    let songs = load_split(corpus, &cfg, false)?;
    train_into(&cfg, &songs, out, None)
}

/// Trains on `songs` and stages the run directory; with `test` the run is
/// also evaluated so the directory appears with its report.
pub(crate) fn train_into(cfg: &TrainConfig, songs: &[PreparedSong], out: &Path, test: Option<&[PreparedSong]>) -> Result<()> {
    stage_dir(out, |dir| {
        let run = train(songs, cfg)?;
        write_run(dir, &run)?;
        if let Some(test) = test {
            let report = report_for(&run.model, cfg, test, None)?;
            write_json(&dir.join(REPORT_FILE), &report)?;
        }
        Ok(())
    })?;
    info!("{} run written to {}", cfg.method.as_str(), out.display());
    Ok(())
}

/// Rebuilds the trained model of a run directory.
pub fn load_run(dir: &Path) -> Result<(TrainConfig, SvtModel)> {
    let cfg: TrainConfig = read_config(&dir.join(CONFIG_FILE))?;
    cfg.validate()?;
    let ckpt = dir.join(CHECKPOINT_FILE);
    if !ckpt.exists() {
        return Err(Error::MissingFile(ckpt));
    }
    let records = read_checkpoint(BufReader::new(fs::File::open(&ckpt)?))?;
    let mut model = SvtModel::new(
        &cfg.model,
        cfg.method == Method::Dind,
        cfg.method.attr_variant(),
        FeatureNorm::identity(cfg.model.input_dim),
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    model.load_records(&records)?;
    Ok((cfg, model))
}

fn report_for(model: &SvtModel, cfg: &TrainConfig, test: &[PreparedSong], mode: Option<MatchMode>) -> Result<FairnessReport> {
    let modes = match mode {
        Some(m) => vec![m],
        None => MatchMode::ALL.to_vec(),
    };
    evaluate_model(model, test, &cfg.postproc, cfg.dind_inference, &Tolerances::default(), &modes)
}

pub fn cmd_eval(run_dir: &Path, corpus: &Path, mode: Option<MatchMode>) -> Result<FairnessReport> {
    let (cfg, model) = load_run(run_dir)?;
    let test = load_split(corpus, &cfg, true)?;
    let report = report_for(&model, &cfg, &test, mode)?;
    let mut bytes = serde_json::to_vec_pretty(&report)?;
    bytes.push(b'\n');
    write_atomic(&run_dir.join(REPORT_FILE), &bytes)?;
    for m in &report.modes {
        info!(
            "{}: U {:.2}, F {}",
            m.mode,
            m.utility,
            m.fairness_gap.map(|f| format!("{f:+.2}")).unwrap_or_else(|| "undefined".into())
        );
    }
    Ok(report)
}

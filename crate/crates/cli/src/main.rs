mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use devae::checkpoint::{Checkpoint, DirLock};
use devae::config::{ExperimentConfig, Profile};
use devae::corpus::{LabeledCorpus, Vocabulary};
use devae::evaluation::{
    ablation_probe, controlled_generate, level_sweep, sentiment_range, transfer_batch_with, LevelGrid, TransferMode,
};
use devae::model::DeVae;
use devae::pipeline::{self, AcceptanceOptions, Prepared, Sabotage};
use devae::training::train;
use serde::{Deserialize, Serialize};

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_ACCEPTANCE: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "devae", version, about = "Disentangled hierarchical VAE for sentiment-controlled generation")]
struct Cli {
    /// TOML config; keys not set take the profile's value.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Profile used when no config file is given.
    #[arg(long, global = true, default_value = "desk")]
    profile: String,
    /// Output root; defaults to $DEVAE_OUT, then ./runs.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic corpus and its vocabulary.
    Synth {
        #[arg(long)]
        seed: Option<u64>,
        /// Target directory (default: <out>/corpus).
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Train a model on a corpus directory.
    Train(TrainArgs),
    /// Decode prior samples at a sentiment level.
    Generate {
        #[command(flatten)]
        target: Target,
        #[arg(short, long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Re-generate sentences at a sentiment level.
    Transfer {
        #[command(flatten)]
        target: Target,
        /// Sentences to transfer; read from stdin lines when empty.
        text: Vec<String>,
        #[arg(long, value_enum, default_value = "mean")]
        mode: TransferArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sentiment-level sweep over test sentences; writes sweep.csv.
    Sweep(ModelArg),
    /// Accuracy suite, sweep and probes; writes the evaluation tables.
    Evaluate(ModelArg),
    /// Per-dimension correlations and single-feature probes; writes probe.csv.
    Ablate(ModelArg),
    /// Render the CSVs under a directory into SVG plots and summary.md.
    Report {
        dir: Option<PathBuf>,
    },
    /// Run every acceptance criterion and print the pass/fail table.
    Reproduce {
        /// Damage the trained models before evaluation (failure-path check).
        #[arg(long, value_enum)]
        sabotage: Option<SabotageArg>,
        #[arg(long)]
        skip_determinism: bool,
        /// Rerun every seed for the determinism check.
        #[arg(long)]
        full_rerun: bool,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Corpus directory (default: <out>/corpus).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Run directory (default: <out>/model-<schedule>-<seed>).
    #[arg(long)]
    dir: Option<PathBuf>,
    /// none, linear, modcyc or modcyc+gated (default: from the config).
    #[arg(long)]
    schedule: Option<String>,
    /// Initialization and shuffling seed (default: from the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Total epochs; phase 1 keeps its configured length up to this total.
    #[arg(long)]
    epochs: Option<usize>,
    /// Retrain even when the run directory holds a finished checkpoint.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct ModelArg {
    /// Run directory written by `train`.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args, Debug)]
struct Target {
    #[arg(long)]
    model: PathBuf,
    /// Explicit value on the sentiment axis.
    #[arg(long, conflicts_with = "class", required_unless_present = "class")]
    level: Option<f64>,
    /// Class index; maps to the low or high end of the training range.
    #[arg(long)]
    class: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SabotageArg {
    IdentityFlow,
    Reinitialize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TransferArg {
    Mean,
    Sample,
    Prior,
}

/// Where a trained model came from.
#[derive(Debug, Serialize, Deserialize)]
struct RunInfo {
    corpus_dir: PathBuf,
    seed: u64,
    schedule: String,
    range: (f64, f64),
}

fn out_root(cli: &Cli) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os("DEVAE_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn base_config(cli: &Cli) -> Result<ExperimentConfig> {
    Ok(match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::for_profile(cli.profile.parse::<Profile>()?),
    })
}

fn load_prepared(corpus_dir: &Path) -> Result<Prepared> {
    let (corpus, rejected) = LabeledCorpus::load_dir(corpus_dir)?;
    if rejected > 0 {
        log::warn!("{rejected} corpus records rejected");
    }
    let vocab_path = corpus_dir.join("vocab.tsv");
    let vocab = Vocabulary::load(&vocab_path)?;
    let encoded = corpus.encode(&vocab);
    Ok(Prepared { corpus, vocab, encoded })
}

struct LoadedRun {
    cfg: ExperimentConfig,
    info: RunInfo,
    prepared: Prepared,
    model: DeVae<f64>,
}

fn load_run(dir: &Path) -> Result<LoadedRun> {
    let ck = Checkpoint::load(&dir.join("model.json"))?;
    let cfg = ExperimentConfig::load(&dir.join("config.toml"))?;
    let info_path = dir.join("run.json");
    let info: RunInfo = serde_json::from_str(
        &std::fs::read_to_string(&info_path).with_context(|| format!("reading {}", info_path.display()))?,
    )?;
    if ck.manifest.config_hash != cfg.hash() {
        bail!("config.toml in {} does not match the checkpoint's config hash", dir.display());
    }
    let prepared = load_prepared(&info.corpus_dir)?;
    let model = ck.restore(Some(&prepared.vocab.hash()))?;
    Ok(LoadedRun { cfg, info, prepared, model })
}

fn target_level(run: &LoadedRun, t: &Target) -> Result<f64> {
    match (t.level, t.class) {
        (Some(l), _) => Ok(l),
        (None, Some(c)) => {
            let top = run.model.config.num_classes - 1;
            match c {
                0 => Ok(run.info.range.0),
                c if c == top => Ok(run.info.range.1),
                c if c < top => Ok(run.info.range.0 + (run.info.range.1 - run.info.range.0) * c as f64 / top as f64),
                _ => bail!("class {c} out of range 0..={top}"),
            }
        }
        (None, None) => bail!("either --level or --class is required"),
    }
}

fn cmd_synth(cli: &Cli, seed: Option<u64>, dir: Option<PathBuf>) -> Result<()> {
    let mut cfg = base_config(cli)?;
    if let Some(s) = seed {
        cfg.corpus_seed = s;
    }
    let dir = dir.unwrap_or_else(|| out_root(cli).join("corpus"));
    let _lock = DirLock::acquire(&dir)?;
    let prepared = Prepared::synthesize(&cfg)?;
    prepared.corpus.save_dir(&dir)?;
    prepared.vocab.save(&dir.join("vocab.tsv"))?;
    pipeline::write_run_meta(
        &dir,
        &cfg,
        &[("corpus_hash", pipeline::corpus_hash(&prepared.corpus)), ("vocab_hash", prepared.vocab.hash())],
    )?;
    println!(
        "{}: {} train / {} val / {} test, vocabulary {}",
        dir.display(),
        prepared.corpus.train.len(),
        prepared.corpus.val.len(),
        prepared.corpus.test.len(),
        prepared.vocab.len()
    );
    Ok(())
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let mut cfg = base_config(cli)?;
    if let Some(s) = &a.schedule {
        cfg.schedule = s.parse()?;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(total) = a.epochs {
        cfg.phase1_epochs = cfg.phase1_epochs.min(total);
        cfg.phase2_epochs = total - cfg.phase1_epochs;
    }
    cfg.validate()?;
    let root = out_root(cli);
    let corpus_dir = a.corpus.clone().unwrap_or_else(|| root.join("corpus"));
    let dir = a.dir.clone().unwrap_or_else(|| root.join(format!("model-{}-{}", cfg.schedule, cfg.seed)));
    let _lock = DirLock::acquire(&dir)?;
    let ck_path = dir.join("model.json");
    if ck_path.exists() && !a.force {
        let existing = Checkpoint::load(&ck_path)?;
        if existing.manifest.config_hash != cfg.hash() {
            bail!(
                "{} holds a checkpoint for a different configuration (hash {}); refusing to resume with {}",
                dir.display(),
                existing.manifest.config_hash,
                cfg.hash()
            );
        }
        println!("{} is up to date", dir.display());
        return Ok(());
    }
    let prepared = load_prepared(&corpus_dir)?;
    let mut model = pipeline::new_model(&cfg, &prepared, cfg.seed)?;
    let report = train(&cfg.training_config(cfg.seed), &prepared.encoded, &mut model)?;
    let ck = Checkpoint::capture(&model, &prepared.vocab.hash(), &cfg.hash(), cfg.phase1_epochs + cfg.phase2_epochs);
    ck.save(&ck_path)?;
    pipeline::write_file(&dir.join("metrics.jsonl"), report.metrics.to_jsonl())?;
    pipeline::write_file(&dir.join("metrics.csv"), pipeline::metrics_csv(&cfg.schedule.to_string(), cfg.seed, &report)?)?;
    pipeline::write_file(&dir.join("collapse.jsonl"), report.collapse.to_jsonl())?;
    let range = sentiment_range(&model, &prepared.encoded.train, cfg.range_mode())?;
    let info = RunInfo {
        corpus_dir: std::fs::canonicalize(&corpus_dir).unwrap_or(corpus_dir),
        seed: cfg.seed,
        schedule: cfg.schedule.to_string(),
        range,
    };
    pipeline::write_file(&dir.join("run.json"), serde_json::to_string_pretty(&info)? + "\n")?;
    pipeline::write_run_meta(
        &dir,
        &cfg,
        &[
            ("corpus_hash", pipeline::corpus_hash(&prepared.corpus)),
            ("vocab_hash", prepared.vocab.hash()),
            ("params_hash", ck.manifest.params_hash.clone()),
        ],
    )?;
    match report.metrics.last() {
        Some(r) => println!(
            "{}: {} optimizer steps, final val KL {:.3}, MI {:.3}",
            dir.display(),
            report.optimizer_steps,
            r.val_kl,
            r.val_mi
        ),
        None => println!("{}: no epochs run, untrained checkpoint written", dir.display()),
    }
    Ok(())
}

fn cmd_generate(t: &Target, n: usize, seed: u64) -> Result<()> {
    let run = load_run(&t.model)?;
    let level = target_level(&run, t)?;
    for g in controlled_generate(&run.model, &run.prepared.vocab, level, n, seed)? {
        println!("{}", serde_json::to_string(&g)?);
    }
    Ok(())
}

fn cmd_transfer(t: &Target, text: &[String], mode: TransferArg, seed: u64) -> Result<()> {
    let run = load_run(&t.model)?;
    let level = target_level(&run, t)?;
    let lines: Vec<String> = if text.is_empty() {
        std::io::stdin().lines().collect::<std::io::Result<_>>()?
    } else {
        text.to_vec()
    };
    let encoded: Vec<Vec<u32>> = lines.iter().map(|l| run.prepared.vocab.encode_text(l)).collect();
    let refs: Vec<&[u32]> = encoded.iter().map(|s| s.as_slice()).collect();
    let mode = match mode {
        TransferArg::Mean => TransferMode::PosteriorMean,
        TransferArg::Sample => TransferMode::PosteriorSample { seed },
        TransferArg::Prior => TransferMode::PriorContent { seed },
    };
    let out = transfer_batch_with(&run.model, &refs, &vec![level; refs.len()], mode)?;
    for (src, o) in lines.iter().zip(out) {
        let line = serde_json::json!({ "source": src, "level": level, "text": run.prepared.vocab.decode(&o) });
        println!("{}", serde_json::to_string(&line)?);
    }
    Ok(())
}

fn judge(run: &LoadedRun) -> Result<devae::evaluation::SentimentClassifier> {
    let clf = pipeline::train_judge(&run.cfg, &run.prepared)?;
    clf.ensure_gate()?;
    Ok(clf)
}

fn cmd_sweep(m: &ModelArg) -> Result<()> {
    let run = load_run(&m.model)?;
    let clf = judge(&run)?;
    let grid = LevelGrid::new(run.info.range.0, run.info.range.1, run.cfg.levels)?;
    let test = &run.prepared.encoded.test;
    let sources = &test[..run.cfg.sweep_sources.min(test.len())];
    let sweep = level_sweep(&run.model, &clf, &run.prepared.vocab, sources, &grid, &pipeline::stopwords(&run.cfg)?)?;
    let path = m.model.join("sweep.csv");
    pipeline::write_file(&path, pipeline::sweep_csv(&sweep)?)?;
    println!("{}: Spearman {:.3}", path.display(), sweep.spearman.unwrap_or(f64::NAN));
    Ok(())
}

fn cmd_evaluate(m: &ModelArg) -> Result<()> {
    let run = load_run(&m.model)?;
    let clf = judge(&run)?;
    let ev = pipeline::evaluate_model(&run.cfg, &run.prepared, &run.model, &clf, run.info.seed)?;
    pipeline::write_evaluation(&m.model, run.info.seed, &ev, &run.prepared.vocab)?;
    println!(
        "controlled {:.3}, transfer {:.3}, Spearman {:.3}, z_a probe {:.3} vs {:.3}",
        ev.accuracy.controlled_accuracy,
        ev.accuracy.transfer_accuracy,
        ev.sweep.spearman.unwrap_or(f64::NAN),
        ev.probe.z_a_probe_accuracy,
        ev.probe.best_other_probe_accuracy
    );
    Ok(())
}

fn cmd_ablate(m: &ModelArg) -> Result<()> {
    let run = load_run(&m.model)?;
    let e = &run.prepared.encoded;
    let probe = ablation_probe(&run.model, &e.train, &e.test)?;
    pipeline::write_file(&m.model.join("probe.csv"), pipeline::probe_csv(&probe)?)?;
    println!(
        "argmax |rho| at dim {} (z_a is {}); probe accuracy z_a {:.3}, best other (dim {}) {:.3}",
        probe.argmax_dim, probe.z_a_dim, probe.z_a_probe_accuracy, probe.best_other_dim, probe.best_other_probe_accuracy
    );
    Ok(())
}

fn cmd_reproduce(cli: &Cli, sabotage: Option<SabotageArg>, skip_determinism: bool, full_rerun: bool, seeds: Option<Vec<u64>>) -> Result<bool> {
    let mut cfg = base_config(cli)?;
    if let Some(s) = seeds {
        cfg.seeds = s;
    }
    let dir = out_root(cli).join("acceptance");
    let _lock = DirLock::acquire(&dir)?;
    let sabotage = sabotage.map(|s| match s {
        SabotageArg::IdentityFlow => Sabotage::IdentityFlow,
        SabotageArg::Reinitialize => Sabotage::Reinitialize,
    });
    let opts = AcceptanceOptions { sabotage, skip_determinism, full_rerun };
    let summary = pipeline::reproduce_acceptance(&cfg, &dir, &opts)?;
    print!("{}", summary.table());
    Ok(summary.all_passed())
}

/// A config passed explicitly to a command that reads a finished run must be
/// the one the run was trained with, up to the `train` command-line overrides.
fn check_explicit_config(cli: &Cli) -> Result<()> {
    let dir = match &cli.command {
        Command::Generate { target, .. } | Command::Transfer { target, .. } => &target.model,
        Command::Sweep(m) | Command::Evaluate(m) | Command::Ablate(m) => &m.model,
        _ => return Ok(()),
    };
    if cli.config.is_none() {
        return Ok(());
    }
    let ck = Checkpoint::load(&dir.join("model.json"))?;
    let trained = ExperimentConfig::load(&dir.join("config.toml"))?;
    let mut given = base_config(cli)?;
    given.seed = trained.seed;
    given.schedule = trained.schedule;
    given.phase1_epochs = trained.phase1_epochs;
    given.phase2_epochs = trained.phase2_epochs;
    if ck.manifest.config_hash != given.hash() {
        bail!("the given config differs from the one {} was trained with", dir.display());
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    check_explicit_config(cli)?;
    match &cli.command {
        Command::Synth { seed, dir } => cmd_synth(cli, *seed, dir.clone())?,
        Command::Train(a) => cmd_train(cli, a)?,
        Command::Generate { target, n, seed } => cmd_generate(target, *n, *seed)?,
        Command::Transfer { target, text, mode, seed } => cmd_transfer(target, text, *mode, *seed)?,
        Command::Sweep(m) => cmd_sweep(m)?,
        Command::Evaluate(m) => cmd_evaluate(m)?,
        Command::Ablate(m) => cmd_ablate(m)?,
        Command::Report { dir } => {
            let dir = dir.clone().unwrap_or_else(|| out_root(cli));
            let written = report::render(&dir)?;
            println!("{}: {} files written", dir.display(), written.len());
        }
        Command::Reproduce { sabotage, skip_determinism, full_rerun, seeds } => {
            return cmd_reproduce(cli, *sabotage, *skip_determinism, *full_rerun, seeds.clone());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_ACCEPTANCE),
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = e.downcast_ref::<devae::Error>().is_some_and(|d| matches!(d, devae::Error::Config(_)));
            ExitCode::from(if usage { EXIT_USAGE } else { EXIT_RUNTIME })
        }
    }
}

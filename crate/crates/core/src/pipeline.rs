//! Experiment pipelines: corpus preparation, training and evaluation runs,
//! artifact writers, and the end-to-end acceptance run.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::corpus::{build_vocab, generate_synthetic, EncodedCorpus, LabeledCorpus, Vocabulary};
use crate::error::{Error, Result};
use crate::evaluation::{
    ablation_probe, accuracy_suite, default_stopwords, parse_stopwords, sentiment_range, train_classifier,
    AccuracyRecords, AccuracyReport, LevelGrid, ProbeReport, SentimentClassifier, SweepReport,
};
use crate::model::DeVae;
use crate::oracles::{self, Check};
use crate::training::{train, ScheduleMode, TrainReport};

pub const CONTROLLED_TARGET: f64 = 0.85;
pub const TRANSFER_TARGET: f64 = 0.80;
pub const CLASSIFIER_TARGET: f64 = 0.95;
pub const SPEARMAN_TARGET: f64 = 0.9;
pub const PROBE_GAP_TARGET: f64 = 0.15;
pub const COLLAPSE_KL: f64 = 0.1;
pub const AB_RUNTIME_LIMIT_SECS: f64 = 15.0 * 60.0;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn corpus_hash(corpus: &LabeledCorpus) -> String {
    sha256_hex(&serde_json::to_vec(corpus).expect("plain data"))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes the resolved config and a hash manifest into `dir`.
pub fn write_run_meta(dir: &Path, cfg: &ExperimentConfig, hashes: &[(&str, String)]) -> Result<()> {
    write_file(&dir.join("config.toml"), cfg.to_toml())?;
    let mut map = serde_json::Map::new();
    map.insert("config_hash".into(), cfg.hash().into());
    map.insert("code_version".into(), env!("CARGO_PKG_VERSION").into());
    for (k, v) in hashes {
        map.insert((*k).into(), v.clone().into());
    }
    write_file(&dir.join("hashes.json"), serde_json::to_string_pretty(&map)? + "\n")
}

/// Corpus, vocabulary and encoded splits for one configuration.
pub struct Prepared {
    pub corpus: LabeledCorpus,
    pub vocab: Vocabulary,
    pub encoded: EncodedCorpus,
}

impl Prepared {
    pub fn synthesize(cfg: &ExperimentConfig) -> Result<Self> {
        Self::from_corpus(cfg, generate_synthetic(&cfg.corpus_config())?)
    }

    pub fn from_corpus(cfg: &ExperimentConfig, corpus: LabeledCorpus) -> Result<Self> {
        let vocab = build_vocab(&corpus.train, cfg.vocab_min_freq, cfg.vocab_max_size)?;
        let encoded = corpus.encode(&vocab);
        Ok(Self { corpus, vocab, encoded })
    }

    pub fn num_classes(&self) -> usize {
        self.encoded.num_classes
    }
}

pub fn stopwords(cfg: &ExperimentConfig) -> Result<std::collections::HashSet<String>> {
    match &cfg.stopwords_file {
        Some(p) => {
            let path = Path::new(p);
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Ok(parse_stopwords(&text))
        }
        None => Ok(default_stopwords()),
    }
}

pub fn new_model(cfg: &ExperimentConfig, prepared: &Prepared, seed: u64) -> Result<DeVae<f64>> {
    let mut mc = cfg.model_config(prepared.vocab.len());
    mc.num_classes = prepared.num_classes();
    mc.init_seed = seed;
    DeVae::new(mc)
}

pub fn train_model(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    schedule: ScheduleMode,
    seed: u64,
) -> Result<(DeVae<f64>, TrainReport)> {
    let mut model = new_model(cfg, prepared, seed)?;
    let mut tc = cfg.training_config(seed);
    tc.schedule = schedule;
    let report = train(&tc, &prepared.encoded, &mut model)?;
    Ok((model, report))
}

pub fn train_judge(cfg: &ExperimentConfig, prepared: &Prepared) -> Result<SentimentClassifier> {
    let e = &prepared.encoded;
    train_classifier(&e.train, &e.val, prepared.vocab.len(), prepared.num_classes(), &cfg.classifier_config())
}

pub struct Evaluation {
    pub range: (f64, f64),
    pub accuracy: AccuracyReport,
    pub records: AccuracyRecords,
    pub sweep: SweepReport,
    pub probe: ProbeReport,
}

pub fn evaluate_model(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    model: &DeVae<f64>,
    judge: &SentimentClassifier,
    seed: u64,
) -> Result<Evaluation> {
    let e = &prepared.encoded;
    let range = sentiment_range(model, &e.train, cfg.range_mode())?;
    let (accuracy, records) = accuracy_suite(model, judge, &prepared.vocab, &e.test, range, cfg.accuracy_samples, seed)?;
    let grid = LevelGrid::new(range.0, range.1, cfg.levels)?;
    let sources = &e.test[..cfg.sweep_sources.min(e.test.len())];
    let sweep = crate::evaluation::level_sweep(model, judge, &prepared.vocab, sources, &grid, &stopwords(cfg)?)?;
    if !sweep.jaccard_soft_check() {
        log::warn!(
            "content overlap near the source level ({:.3}) is below the overlap at the grid ends ({:.3})",
            sweep.adjacent_jaccard,
            sweep.extreme_jaccard
        );
    }
    let probe = ablation_probe(model, &e.train, &e.test)?;
    Ok(Evaluation { range, accuracy, records, sweep, probe })
}

fn csv_bytes<F>(header: &[&str], fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> std::result::Result<(), csv::Error>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Config(format!("csv: {e}"));
    w.write_record(header).map_err(err)?;
    fill(&mut w).map_err(err)?;
    w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))
}

fn f(v: f64) -> String {
    format!("{v:.6}")
}

pub const SWEEP_COLUMNS: [&str; 5] =
    ["level", "mean_score_pos_source", "mean_score_neg_source", "mean_jaccard_pos", "mean_jaccard_neg"];

pub fn sweep_csv(sweep: &SweepReport) -> Result<Vec<u8>> {
    csv_bytes(&SWEEP_COLUMNS, |w| {
        for r in &sweep.rows {
            w.write_record([
                r.level.to_string(),
                f(r.mean_score_pos_source),
                f(r.mean_score_neg_source),
                f(r.mean_jaccard_pos),
                f(r.mean_jaccard_neg),
            ])?;
        }
        Ok(())
    })
}

pub fn accuracy_csv(rows: &[(u64, &AccuracyReport)]) -> Result<Vec<u8>> {
    csv_bytes(
        &["seed", "controlled_accuracy", "transfer_accuracy", "controlled_total", "transfer_total", "empty_generations", "f_min", "f_max"],
        |w| {
            for (seed, a) in rows {
                w.write_record([
                    seed.to_string(),
                    f(a.controlled_accuracy),
                    f(a.transfer_accuracy),
                    a.controlled_total.to_string(),
                    a.transfer_total.to_string(),
                    a.empty_generations.to_string(),
                    f(a.f_min),
                    f(a.f_max),
                ])?;
            }
            Ok(())
        },
    )
}

pub fn probe_csv(p: &ProbeReport) -> Result<Vec<u8>> {
    csv_bytes(&["dim", "pearson", "zero_variance", "is_z_a", "probe_accuracy"], |w| {
        for (j, r) in p.correlations.iter().enumerate() {
            let acc = if j == p.z_a_dim {
                f(p.z_a_probe_accuracy)
            } else if j == p.best_other_dim {
                f(p.best_other_probe_accuracy)
            } else {
                String::new()
            };
            w.write_record([j.to_string(), f(*r), p.zero_variance[j].to_string(), (j == p.z_a_dim).to_string(), acc])?;
        }
        Ok(())
    })
}

pub fn metrics_csv(arm: &str, seed: u64, report: &TrainReport) -> Result<Vec<u8>> {
    csv_bytes(
        &["seed", "arm", "epoch", "phase", "plan", "alpha_w", "alpha_f", "loss", "val_kl", "val_mi", "val_active_fraction", "collapsed"],
        |w| {
            for r in &report.metrics.records {
                w.write_record([
                    seed.to_string(),
                    arm.to_owned(),
                    r.epoch.to_string(),
                    r.phase.to_string(),
                    r.plan.clone(),
                    f(r.alpha_w),
                    f(r.alpha_f),
                    f(r.terms.loss),
                    f(r.val_kl),
                    f(r.val_mi),
                    f(r.val_active_fraction),
                    r.collapsed.to_string(),
                ])?;
            }
            Ok(())
        },
    )
}

/// Line-delimited generations and transfers with their provenance.
pub fn generations_jsonl(records: &AccuracyRecords, vocab: &Vocabulary) -> Result<String> {
    let mut out = String::new();
    for (class, g, pred) in &records.controlled {
        let line = serde_json::json!({
            "kind": "controlled", "seed": g.seed, "level": g.level, "z_a": g.z_a,
            "target_class": class, "predicted_class": pred, "text": g.text,
        });
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    for (src, target, tokens, pred) in &records.transfers {
        let line = serde_json::json!({
            "kind": "transfer", "source": src, "target_class": target,
            "predicted_class": pred, "text": vocab.decode(tokens),
        });
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    Ok(out)
}

/// Writes every evaluation artifact of one model into `dir`.
pub fn write_evaluation(dir: &Path, seed: u64, ev: &Evaluation, vocab: &Vocabulary) -> Result<()> {
    write_file(&dir.join("sweep.csv"), sweep_csv(&ev.sweep)?)?;
    write_file(&dir.join("accuracy.csv"), accuracy_csv(&[(seed, &ev.accuracy)])?)?;
    write_file(&dir.join("probe.csv"), probe_csv(&ev.probe)?)?;
    write_file(&dir.join("generations.jsonl"), generations_jsonl(&ev.records, vocab)?)?;
    let summary = serde_json::json!({
        "range": [ev.range.0, ev.range.1],
        "spearman": ev.sweep.spearman,
        "adjacent_jaccard": ev.sweep.adjacent_jaccard,
        "extreme_jaccard": ev.sweep.extreme_jaccard,
        "accuracy": ev.accuracy,
        "probe": ev.probe,
    });
    write_file(&dir.join("evaluation.json"), serde_json::to_string_pretty(&summary)? + "\n")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceSummary {
    pub criteria: Vec<CriterionResult>,
    pub output_dir: PathBuf,
}

impl AcceptanceSummary {
    pub fn all_passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        for c in &self.criteria {
            s.push_str(&format!("[{}] {}. {}: {}\n", if c.passed { "PASS" } else { "FAIL" }, c.id, c.name, c.detail));
        }
        s
    }

    pub fn csv(&self) -> Result<Vec<u8>> {
        csv_bytes(&["criterion", "name", "passed", "detail"], |w| {
            for c in &self.criteria {
                w.write_record([c.id.to_string(), c.name.clone(), c.passed.to_string(), c.detail.clone()])?;
            }
            Ok(())
        })
    }
}

/// Deliberate damage applied to the scheduled model before evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sabotage {
    /// Zero every coupling conditioner, making the flow the identity.
    IdentityFlow,
    /// Replace the trained parameters with a fresh initialization.
    Reinitialize,
}

#[derive(Clone, Debug, Default)]
pub struct AcceptanceOptions {
    pub sabotage: Option<Sabotage>,
    /// Skip the second run of the first seed.
    pub skip_determinism: bool,
    /// Rerun every seed instead of only the first for the determinism check.
    pub full_rerun: bool,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn oracle_criterion(id: u8, name: &str, checks: Result<Vec<Check>>, started: Instant, limit_secs: f64) -> CriterionResult {
    match checks {
        Ok(checks) => {
            let secs = started.elapsed().as_secs_f64();
            let within = secs <= limit_secs;
            if !within {
                log::warn!("criterion {id} exceeded its {limit_secs} s budget");
            }
            let mut detail = checks.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
            if limit_secs.is_finite() {
                detail += &format!("; {secs:.1} s (<= {limit_secs:.0} s)");
            }
            CriterionResult { id, name: name.into(), passed: within && checks.iter().all(|c| c.passed), detail }
        }
        Err(e) => CriterionResult { id, name: name.into(), passed: false, detail: format!("error: {e}") },
    }
}

/// Per-seed numbers of the collapse experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbRow {
    pub seed: u64,
    pub scheduled_final_mi: f64,
    pub constant_final_mi: f64,
    pub constant_min_kl: f64,
    pub scheduled_min_kl: f64,
}

impl AbRow {
    fn from_reports(seed: u64, scheduled: &TrainReport, constant: &TrainReport) -> Self {
        let final_mi = |r: &TrainReport| r.metrics.last().map_or(f64::NAN, |x| x.val_mi);
        let min_kl = |r: &TrainReport| r.metrics.records.iter().map(|x| x.val_kl).fold(f64::INFINITY, f64::min);
        Self {
            seed,
            scheduled_final_mi: final_mi(scheduled),
            constant_final_mi: final_mi(constant),
            constant_min_kl: min_kl(constant),
            scheduled_min_kl: min_kl(scheduled),
        }
    }

    pub fn passed(&self) -> bool {
        self.scheduled_final_mi > self.constant_final_mi
            && self.constant_min_kl < COLLAPSE_KL
            && self.scheduled_min_kl > COLLAPSE_KL
    }
}

pub fn ab_csv(rows: &[AbRow]) -> Result<Vec<u8>> {
    csv_bytes(
        &["seed", "scheduled_final_mi", "constant_final_mi", "constant_min_kl", "scheduled_min_kl", "passed"],
        |w| {
            for r in rows {
                w.write_record([
                    r.seed.to_string(),
                    f(r.scheduled_final_mi),
                    f(r.constant_final_mi),
                    f(r.constant_min_kl),
                    f(r.scheduled_min_kl),
                    r.passed().to_string(),
                ])?;
            }
            Ok(())
        },
    )
}

/// Trains both arms for `seed`, evaluates the scheduled one and writes all
/// per-seed artifacts into `dir`.
fn run_seed(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    judge: &SentimentClassifier,
    seed: u64,
    dir: &Path,
    opts: &AcceptanceOptions,
) -> Result<(AbRow, Evaluation, f64)> {
    let t = Instant::now();
    log::info!("seed {seed}: training the scheduled arm");
    let (mut model, scheduled) = train_model(cfg, prepared, ScheduleMode::ModcycGated, seed)?;
    log::info!("seed {seed}: training the constant-weight arm");
    let (_, constant) = train_model(cfg, prepared, ScheduleMode::None, seed)?;
    let ab_secs = t.elapsed().as_secs_f64();
    let row = AbRow::from_reports(seed, &scheduled, &constant);
    let mut curves = metrics_csv("scheduled", seed, &scheduled)?;
    let constant_rows = metrics_csv("constant", seed, &constant)?;
    let skip_header = constant_rows.iter().position(|b| *b == b'\n').map_or(0, |i| i + 1);
    curves.extend_from_slice(&constant_rows[skip_header..]);
    write_file(&dir.join("ab_curves.csv"), curves)?;
    write_file(&dir.join("ab.csv"), ab_csv(std::slice::from_ref(&row))?)?;

    match opts.sabotage {
        Some(Sabotage::IdentityFlow) => model.force_identity_flow(),
        Some(Sabotage::Reinitialize) => model = new_model(cfg, prepared, seed.wrapping_add(1000))?,
        None => {}
    }
    log::info!("seed {seed}: evaluating");
    let ev = evaluate_model(cfg, prepared, &model, judge, seed)?;
    write_evaluation(dir, seed, &ev, &prepared.vocab)?;
    let ck = Checkpoint::capture(&model, &prepared.vocab.hash(), &cfg.hash(), cfg.phase1_epochs + cfg.phase2_epochs);
    write_run_meta(dir, cfg, &[("vocab_hash", prepared.vocab.hash()), ("params_hash", ck.manifest.params_hash)])?;
    Ok((row, ev, ab_secs))
}

pub const DETERMINISM_FILES: [&str; 6] = ["ab.csv", "ab_curves.csv", "sweep.csv", "accuracy.csv", "probe.csv", "generations.jsonl"];

fn same_files(a: &Path, b: &Path) -> Result<Vec<String>> {
    let mut differing = Vec::new();
    for name in DETERMINISM_FILES {
        let pa = a.join(name);
        let pb = b.join(name);
        let x = fs::read(&pa).map_err(|e| Error::io(&pa, e))?;
        let y = fs::read(&pb).map_err(|e| Error::io(&pb, e))?;
        if x != y {
            differing.push(name.to_owned());
        }
    }
    Ok(differing)
}

/// Runs every acceptance criterion and writes the per-seed artifacts plus
/// `acceptance.csv` under `out`.
pub fn reproduce_acceptance(cfg: &ExperimentConfig, out: &Path, opts: &AcceptanceOptions) -> Result<AcceptanceSummary> {
    cfg.validate()?;
    let mut criteria = Vec::new();

    let t = Instant::now();
    criteria.push(oracle_criterion(1, "flow oracles", oracles::flow_checks(), t, 60.0));
    let t = Instant::now();
    criteria.push(oracle_criterion(2, "gradient checks", oracles::gradient_checks(), t, 120.0));
    let t = Instant::now();
    criteria.push(oracle_criterion(3, "closed forms", oracles::closed_form_checks(), t, f64::INFINITY));
    let t = Instant::now();
    criteria.push(oracle_criterion(4, "controller", oracles::controller_checks(), t, f64::INFINITY));

    let prepared = Prepared::synthesize(cfg)?;
    write_file(&out.join("vocab.tsv"), prepared.vocab.to_tsv())?;
    write_run_meta(out, cfg, &[("corpus_hash", corpus_hash(&prepared.corpus)), ("vocab_hash", prepared.vocab.hash())])?;
    let judge = train_judge(cfg, &prepared)?;
    let judge_test = judge.accuracy(&prepared.encoded.test);

    let mut rows = Vec::new();
    let mut evals = Vec::new();
    let mut ab_secs = 0.0;
    for &seed in &cfg.seeds {
        let (row, ev, secs) = run_seed(cfg, &prepared, &judge, seed, &out.join(format!("seed-{seed}")), opts)?;
        ab_secs += secs;
        rows.push(row);
        evals.push(ev);
    }
    write_file(&out.join("ab.csv"), ab_csv(&rows)?)?;
    let acc_rows: Vec<(u64, &AccuracyReport)> = cfg.seeds.iter().copied().zip(evals.iter().map(|e| &e.accuracy)).collect();
    write_file(&out.join("accuracy.csv"), accuracy_csv(&acc_rows)?)?;

    let needed = cfg.seeds.len() / 2 + 1;
    let ab_passes = rows.iter().filter(|r| r.passed()).count();
    log::info!("collapse experiment trained in {ab_secs:.0} s");
    criteria.push(CriterionResult {
        id: 5,
        name: "collapse A/B".into(),
        passed: ab_passes >= needed && ab_secs <= AB_RUNTIME_LIMIT_SECS,
        detail: format!(
            "{ab_passes}/{} seeds pass (need {needed}); {}",
            rows.len(),
            rows.iter()
                .map(|r| format!(
                    "seed {}: MI {:.3} vs {:.3}, min KL {:.3} vs {:.3}",
                    r.seed, r.scheduled_final_mi, r.constant_final_mi, r.scheduled_min_kl, r.constant_min_kl
                ))
                .collect::<Vec<_>>()
                .join("; ")
        ),
    });

    let ctrl = median(evals.iter().map(|e| e.accuracy.controlled_accuracy).collect());
    let xfer = median(evals.iter().map(|e| e.accuracy.transfer_accuracy).collect());
    criteria.push(CriterionResult {
        id: 6,
        name: "control suite".into(),
        passed: judge_test >= CLASSIFIER_TARGET && ctrl >= CONTROLLED_TARGET && xfer >= TRANSFER_TARGET,
        detail: format!(
            "classifier {judge_test:.3} (>= {CLASSIFIER_TARGET}); median controlled {ctrl:.3} (>= {CONTROLLED_TARGET}); median transfer {xfer:.3} (>= {TRANSFER_TARGET})"
        ),
    });

    let rho = median(evals.iter().map(|e| e.sweep.spearman.unwrap_or(f64::NAN)).collect());
    let argmax_hits = evals.iter().filter(|e| e.probe.argmax_dim == e.probe.z_a_dim).count();
    let gap = median(evals.iter().map(|e| e.probe.z_a_probe_accuracy - e.probe.best_other_probe_accuracy).collect());
    criteria.push(CriterionResult {
        id: 7,
        name: "sweep and ablation".into(),
        passed: rho >= SPEARMAN_TARGET && argmax_hits >= needed && gap >= PROBE_GAP_TARGET,
        detail: format!(
            "median Spearman {rho:.3} (>= {SPEARMAN_TARGET}); argmax |rho| at z_a in {argmax_hits}/{} seeds; median probe gap {gap:.3} (>= {PROBE_GAP_TARGET})",
            evals.len()
        ),
    });

    if !opts.skip_determinism {
        let rerun_seeds: Vec<u64> = if opts.full_rerun { cfg.seeds.clone() } else { cfg.seeds.iter().take(1).copied().collect() };
        let mut differing = Vec::new();
        for &seed in &rerun_seeds {
            let first = out.join(format!("seed-{seed}"));
            let second = out.join("rerun").join(format!("seed-{seed}"));
            run_seed(cfg, &prepared, &judge, seed, &second, opts)?;
            differing.extend(same_files(&first, &second)?.into_iter().map(|n| format!("seed-{seed}/{n}")));
        }
        criteria.push(CriterionResult {
            id: 8,
            name: "determinism".into(),
            passed: differing.is_empty(),
            detail: if differing.is_empty() {
                format!("{} seed(s) rerun, {} files byte-identical each", rerun_seeds.len(), DETERMINISM_FILES.len())
            } else {
                format!("differing: {}", differing.join(", "))
            },
        });
    }

    let summary = AcceptanceSummary { criteria, output_dir: out.to_path_buf() };
    write_file(&out.join("acceptance.csv"), summary.csv()?)?;
    write_file(&out.join("acceptance.txt"), summary.table())?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn ab_row_requires_all_three_conditions() {
        let row = AbRow { seed: 0, scheduled_final_mi: 1.0, constant_final_mi: 0.1, constant_min_kl: 0.01, scheduled_min_kl: 2.0 };
        assert!(row.passed());
        assert!(!AbRow { scheduled_min_kl: 0.05, ..row.clone() }.passed());
        assert!(!AbRow { constant_min_kl: 0.2, ..row.clone() }.passed());
        assert!(!AbRow { constant_final_mi: 1.0, ..row }.passed());
    }

    #[test]
    fn sweep_csv_has_the_published_columns() {
        let report = SweepReport { rows: Vec::new(), spearman: None, adjacent_jaccard: 0.0, extreme_jaccard: 0.0 };
        let bytes = sweep_csv(&report).unwrap();
        assert_eq!(String::from_utf8(bytes).unwrap().trim(), SWEEP_COLUMNS.join(","));
    }
}

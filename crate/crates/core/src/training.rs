//! Two-phase training with annealing schedules and the gated periodic update
//! controller.
//!
//! Phase 1 fits the sentence layer alone. Phase 2 adds the flow and the
//! sentiment supervision on top. When gating is enabled each phase-2 epoch
//! consults the MI history: a plateau switches the epoch to ordered
//! layer-wise updates (encoder then decoder per layer, bottom-up, followed by
//! a prior-inference step on the flow); otherwise layers receive joint
//! updates top-down on fresh minibatches.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{shuffled_indices, EncodedCorpus, LabeledSentence};
use crate::diagnostics::{collapse_record, estimate_mi, CollapseReport, MiHistory, MIN_MI_BATCH};
use crate::error::{Error, Result};
use crate::feature_layer::{upper_objective, UpperLossWeights};
use crate::model::DeVae;
use crate::optim::{Optimizer, OptimizerKind};
use crate::sentence_vae::{reparameterize, DiagonalGaussian};
use crate::tensor::{Graph, Gradients, ParamGroup, ParamId, Real};

/// min(1, step / total).
pub fn linear_anneal(step: i64, total_steps: i64) -> Result<f64> {
    if step < 0 {
        return Err(Error::Domain(format!("negative anneal step {step}")));
    }
    if total_steps <= 0 {
        return Err(Error::Domain(format!("anneal length must be positive, got {total_steps}")));
    }
    Ok((step as f64 / total_steps as f64).min(1.0))
}

/// Lagged cyclical weights: alpha_w = tanh((e mod c) / 2) and
/// alpha_f = max(0, tanh(((e mod c) - lag) / 2)).
pub fn modcyc(epoch: u64, cycle: u64, lag: f64) -> Result<(f64, f64)> {
    if cycle == 0 {
        return Err(Error::Domain("cycle length must be at least 1".into()));
    }
    if !(lag >= 0.0) {
        return Err(Error::Domain(format!("lag must be non-negative, got {lag}")));
    }
    let r = (epoch % cycle) as f64;
    Ok(((r / 2.0).tanh(), ((r - lag) / 2.0).tanh().max(0.0)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScheduleMode {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "linear")]
    Linear,
    #[serde(rename = "modcyc")]
    Modcyc,
    #[serde(rename = "gated")]
    Gated,
    #[serde(rename = "modcyc+gated")]
    ModcycGated,
}

impl ScheduleMode {
    pub fn uses_modcyc(self) -> bool {
        matches!(self, ScheduleMode::Modcyc | ScheduleMode::ModcycGated)
    }

    pub fn uses_gate(self) -> bool {
        matches!(self, ScheduleMode::Gated | ScheduleMode::ModcycGated)
    }

    pub fn anneals_phase1(self) -> bool {
        self != ScheduleMode::None
    }
}

impl fmt::Display for ScheduleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleMode::None => "none",
            ScheduleMode::Linear => "linear",
            ScheduleMode::Modcyc => "modcyc",
            ScheduleMode::Gated => "gated",
            ScheduleMode::ModcycGated => "modcyc+gated",
        })
    }
}

impl FromStr for ScheduleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ScheduleMode::None),
            "linear" => Ok(ScheduleMode::Linear),
            "modcyc" => Ok(ScheduleMode::Modcyc),
            "gated" => Ok(ScheduleMode::Gated),
            "modcyc+gated" => Ok(ScheduleMode::ModcycGated),
            other => Err(Error::Config(format!("unknown schedule mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdatePath {
    NormalVae,
    OrderedLayerwise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubStep {
    /// Encoder of layer i, repeated until its loss plateaus.
    Encoder(usize),
    /// Decoder of layer i, repeated until its loss plateaus.
    Decoder(usize),
    /// Flow parameters on the flow log-density of sentence latents.
    PriorInference,
    /// One joint step on every parameter of layer i.
    Joint(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdatePlan {
    pub path: UpdatePath,
    pub steps: Vec<SubStep>,
}

/// Branch of the gated update for a hierarchy whose top layer index is `top`.
pub fn plan_for(converged: bool, top: usize) -> UpdatePlan {
    if converged {
        let mut steps: Vec<SubStep> = (0..=top).flat_map(|i| [SubStep::Encoder(i), SubStep::Decoder(i)]).collect();
        steps.push(SubStep::PriorInference);
        UpdatePlan { path: UpdatePath::OrderedLayerwise, steps }
    } else {
        UpdatePlan { path: UpdatePath::NormalVae, steps: (0..=top).rev().map(SubStep::Joint).collect() }
    }
}

/// Top layer index of the two-layer model.
pub const TOP_LAYER: usize = 1;

/// Per-epoch schedule values; recomputed from the epoch, never accumulated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub epoch: u64,
    pub alpha_w: f64,
    pub alpha_f: f64,
    pub lower_weight: f64,
    pub mi: MiHistory,
}

pub fn plan_update(state: &ScheduleState) -> UpdatePlan {
    plan_for(state.mi.converged(), TOP_LAYER)
}

/// Parameter groups touched by a sub-step of the two-layer model.
pub fn substep_groups(step: SubStep) -> Result<Vec<ParamGroup>> {
    use ParamGroup::*;
    Ok(match step {
        SubStep::Encoder(0) => vec![Embedding, Posterior],
        SubStep::Decoder(0) => vec![Decoder],
        SubStep::Encoder(1) => vec![Flow],
        SubStep::Decoder(1) => vec![Scaler],
        SubStep::PriorInference => vec![Flow],
        SubStep::Joint(0) => vec![Embedding, Posterior, Decoder],
        SubStep::Joint(1) => vec![Flow, Scaler],
        other => return Err(Error::Domain(format!("{other:?} has no layer in a two-layer model"))),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    pub batch_size: usize,
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub schedule: ScheduleMode,
    pub cycle: u64,
    pub lag: f64,
    pub weights: UpperLossWeights,
    pub mi_window: usize,
    pub mi_epsilon: f64,
    pub mi_batch_size: usize,
    pub inner_patience: usize,
    pub inner_tolerance: f64,
    pub inner_cap: usize,
    pub freeze_decoder_phase2: bool,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Adam,
            lr: 5e-3,
            clip_norm: Some(5.0),
            batch_size: 32,
            phase1_epochs: 10,
            phase2_epochs: 40,
            schedule: ScheduleMode::ModcycGated,
            cycle: 4,
            lag: 1.0,
            weights: UpperLossWeights::default(),
            mi_window: 5,
            mi_epsilon: 0.05,
            mi_batch_size: 50,
            inner_patience: 3,
            inner_tolerance: 1e-3,
            inner_cap: 30,
            freeze_decoder_phase2: false,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.cycle == 0 {
            return Err(Error::Config("cycle length must be at least 1".into()));
        }
        if !(self.lag >= 0.0) {
            return Err(Error::Config("lag must be non-negative".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2".into()));
        }
        if self.mi_batch_size < MIN_MI_BATCH {
            return Err(Error::Config(format!("MI batch size must be at least {MIN_MI_BATCH}")));
        }
        if self.inner_patience == 0 || self.inner_cap == 0 {
            return Err(Error::Config("inner-loop patience and cap must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config("clip norm must be positive".into()));
            }
        }
        self.weights.validate()
    }
}

/// Plateau test for the inner "until converged" loops.
#[derive(Clone, Debug)]
pub struct PlateauTracker {
    best: f64,
    stale: usize,
    steps: usize,
    patience: usize,
    tolerance: f64,
    cap: usize,
}

impl PlateauTracker {
    pub fn new(patience: usize, tolerance: f64, cap: usize) -> Self {
        Self { best: f64::INFINITY, stale: 0, steps: 0, patience, tolerance, cap }
    }

    /// Records a loss; returns true once the loop should stop.
    pub fn observe(&mut self, loss: f64) -> bool {
        self.steps += 1;
        if !self.best.is_finite() || loss < self.best - self.tolerance * self.best.abs() {
            self.best = loss;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.done()
    }

    pub fn done(&self) -> bool {
        self.stale >= self.patience || self.steps >= self.cap
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

/// Averaged terms of one step or one epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepTerms {
    pub loss: f64,
    pub recon_loglik: f64,
    pub kl_s: f64,
    pub sentiment_loglik: f64,
    pub prior_loglik: f64,
    pub logdet: f64,
    pub kl_f: f64,
}

impl StepTerms {
    fn add(&mut self, o: &StepTerms) {
        self.loss += o.loss;
        self.recon_loglik += o.recon_loglik;
        self.kl_s += o.kl_s;
        self.sentiment_loglik += o.sentiment_loglik;
        self.prior_loglik += o.prior_loglik;
        self.logdet += o.logdet;
        self.kl_f += o.kl_f;
    }

    fn scaled(&self, k: f64) -> StepTerms {
        StepTerms {
            loss: self.loss * k,
            recon_loglik: self.recon_loglik * k,
            kl_s: self.kl_s * k,
            sentiment_loglik: self.sentiment_loglik * k,
            prior_loglik: self.prior_loglik * k,
            logdet: self.logdet * k,
            kl_f: self.kl_f * k,
        }
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: u8,
    pub plan: String,
    pub alpha_w: f64,
    pub alpha_f: f64,
    pub one_minus_alpha_w: f64,
    pub one_minus_alpha_f: f64,
    pub lower_weight: f64,
    pub steps: usize,
    pub terms: StepTerms,
    pub val_kl: f64,
    pub val_mi: f64,
    pub val_active_fraction: f64,
    pub collapsed: bool,
    pub wall_clock_secs: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub records: Vec<EpochRecord>,
}

impl MetricsLog {
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("plain record") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() }))
            .collect::<Result<_>>()?;
        Ok(Self { records })
    }

    /// Same log with wall-clock times zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        let mut c = self.clone();
        for r in &mut c.records {
            r.wall_clock_secs = 0.0;
        }
        c
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

pub struct TrainReport {
    pub metrics: MetricsLog,
    pub mi_history: MiHistory,
    pub collapse: CollapseReport,
    pub optimizer_steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Phase {
    Lower,
    Joint,
}

/// Which objective a step evaluates.
#[derive(Clone, Copy, Debug)]
struct Weights {
    lower_kl: f64,
    alpha_f: f64,
}

fn standard_noise<T: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<T> {
    Array2::from_shape_fn((rows, cols), |_| {
        let v: f64 = StandardNormal.sample(rng);
        T::c(v)
    })
}

/// Evaluates the objective of `phase` on a batch and returns its gradients.
fn evaluate<T: Real>(
    model: &DeVae<T>,
    batch: &[&LabeledSentence],
    phase: Phase,
    w: Weights,
    upper: UpperLossWeights,
    prior_only: bool,
    noise: Array2<T>,
) -> Result<(StepTerms, Gradients<T>)> {
    let seqs: Vec<&[u32]> = batch.iter().map(|s| s.tokens.as_slice()).collect();
    let mut g = Graph::new(&model.store);
    if prior_only {
        let (mu, ls) = model.vae.encode(&mut g, &seqs)?;
        let z = reparameterize(&mut g, mu, ls, noise);
        let (dens, _, logdet) = model.flow.log_density_graph(&mut g, z)?;
        let m = g.mean(dens);
        let loss = g.neg(m);
        let value = g.scalar(loss).f64();
        if !value.is_finite() {
            return Err(Error::NonFinite { context: "flow log-density".into(), index: 0 });
        }
        let ld = g.mean(logdet);
        let terms = StepTerms {
            loss: value,
            prior_loglik: -value - g.scalar(ld).f64(),
            logdet: g.scalar(ld).f64(),
            ..Default::default()
        };
        return Ok((terms, g.backward(loss)));
    }
    let (lower_loss, lower, pass) = model.vae.lower_elbo(&mut g, &seqs, noise, w.lower_kl)?;
    let mut terms = StepTerms { recon_loglik: lower.recon_loglik, kl_s: lower.kl, ..Default::default() };
    let loss = match phase {
        Phase::Lower => {
            terms.loss = lower.loss;
            lower_loss
        }
        Phase::Joint => {
            let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
            let weights = UpperLossWeights { beta: upper.beta, gamma_kl: upper.gamma_kl * w.alpha_f };
            let (upper_loss, ub, _) = upper_objective(
                &mut g,
                &model.flow,
                &model.scaler,
                pass.z,
                pass.mu,
                pass.log_sigma,
                &labels,
                weights,
            )?;
            terms.sentiment_loglik = ub.sentiment_loglik;
            terms.prior_loglik = ub.prior_loglik;
            terms.logdet = ub.logdet;
            terms.kl_f = ub.kl;
            terms.loss = lower.loss + ub.loss;
            g.add(lower_loss, upper_loss)
        }
    };
    if !terms.loss.is_finite() {
        return Err(Error::NonFinite { context: "training loss".into(), index: 0 });
    }
    Ok((terms, g.backward(loss)))
}

/// Posterior of every sentence in `split`.
pub fn split_posteriors<T: Real>(model: &DeVae<T>, split: &[LabeledSentence]) -> Result<Vec<DiagonalGaussian<T>>> {
    let mut out = Vec::with_capacity(split.len());
    for chunk in split.chunks(256) {
        let seqs: Vec<&[u32]> = chunk.iter().map(|s| s.tokens.as_slice()).collect();
        out.extend(model.posteriors(&seqs)?);
    }
    Ok(out)
}

/// MI estimate over consecutive batches of `split` with noise from `seed`.
pub fn split_mi<T: Real>(
    posteriors: &[DiagonalGaussian<T>],
    batch_size: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = posteriors.first().map(|q| q.dim()).unwrap_or(0);
    let batches: Vec<_> = posteriors
        .chunks(batch_size)
        .filter(|c| c.len() >= MIN_MI_BATCH)
        .map(|c| (c.to_vec(), standard_noise::<T>(&mut rng, c.len(), d)))
        .collect();
    estimate_mi(&batches)
}

/// One optimizer step of `sub` on `batch` with the phase-2 objective under
/// weights `(alpha_w, alpha_f)`. Only parameters of the sub-step's groups move.
pub fn apply_substep<T: Real>(
    model: &mut DeVae<T>,
    opt: &mut Optimizer<T>,
    batch: &[&LabeledSentence],
    sub: SubStep,
    alphas: (f64, f64),
    weights: UpperLossWeights,
    noise: Array2<T>,
) -> Result<StepTerms> {
    let ids = model.ids(&substep_groups(sub)?);
    let w = Weights { lower_kl: alphas.0, alpha_f: alphas.1 };
    let prior_only = sub == SubStep::PriorInference;
    let (terms, grads) = evaluate(model, batch, Phase::Joint, w, weights, prior_only, noise)?;
    opt.step(&mut model.store, &grads, &ids);
    Ok(terms)
}

struct Trainer<'a, T: Real> {
    cfg: &'a TrainingConfig,
    corpus: &'a EncodedCorpus,
    opt: Optimizer<T>,
    rng: ChaCha8Rng,
    mi: MiHistory,
    collapse: CollapseReport,
    metrics: MetricsLog,
    steps: usize,
    epoch: usize,
    started: Instant,
}

impl<T: Real> Trainer<'_, T> {
    fn batches(&mut self) -> Vec<Vec<usize>> {
        let idx = shuffled_indices(self.corpus.train.len(), &mut self.rng);
        idx.chunks(self.cfg.batch_size).filter(|c| c.len() >= 2).map(|c| c.to_vec()).collect()
    }

    fn trainable(&self, model: &DeVae<T>, groups: &[ParamGroup], phase: Phase) -> Vec<ParamId> {
        let frozen: &[ParamGroup] = if phase == Phase::Joint && self.cfg.freeze_decoder_phase2 {
            &[ParamGroup::Decoder, ParamGroup::Embedding]
        } else {
            &[]
        };
        let groups: Vec<ParamGroup> = groups.iter().copied().filter(|g| !frozen.contains(g)).collect();
        model.ids(&groups)
    }

    /// One optimizer step on `ids`.
    fn step(
        &mut self,
        model: &mut DeVae<T>,
        batch: &[usize],
        phase: Phase,
        w: Weights,
        ids: &[ParamId],
        prior_only: bool,
    ) -> Result<StepTerms> {
        let sentences: Vec<&LabeledSentence> = batch.iter().map(|&i| &self.corpus.train[i]).collect();
        let noise = standard_noise(&mut self.rng, sentences.len(), model.latent_dim());
        let (terms, grads) = evaluate(model, &sentences, phase, w, self.cfg.weights, prior_only, noise)?;
        self.opt.step(&mut model.store, &grads, ids);
        self.steps += 1;
        Ok(terms)
    }

    fn finish_epoch(
        &mut self,
        model: &DeVae<T>,
        phase: u8,
        plan: &str,
        w: (f64, f64, f64),
        steps: usize,
        terms: StepTerms,
    ) -> Result<()> {
        let post = split_posteriors(model, &self.corpus.val)?;
        let mi_seed = self.cfg.seed ^ 0x5eed_0000 ^ self.epoch as u64;
        let mi = split_mi(&post, self.cfg.mi_batch_size, mi_seed)?;
        self.mi.push(self.epoch as u64, mi)?;
        let rec = collapse_record(self.epoch as u64, &post, mi);
        self.collapse.push(rec);
        let (alpha_w, alpha_f, lower_weight) = w;
        self.metrics.records.push(EpochRecord {
            epoch: self.epoch,
            phase,
            plan: plan.to_owned(),
            alpha_w,
            alpha_f,
            one_minus_alpha_w: 1.0 - alpha_w,
            one_minus_alpha_f: 1.0 - alpha_f,
            lower_weight,
            steps,
            terms: if steps > 0 { terms.scaled(1.0 / steps as f64) } else { terms },
            val_kl: rec.kl,
            val_mi: mi,
            val_active_fraction: rec.active_fraction,
            collapsed: rec.collapsed,
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
        });
        log::info!(
            "epoch {} phase {phase} plan {plan}: loss {:.3} kl_s {:.3} mi {:.3}",
            self.epoch,
            self.metrics.last().map(|r| r.terms.loss).unwrap_or(0.0),
            rec.kl,
            mi
        );
        self.epoch += 1;
        Ok(())
    }

    fn phase1_epoch(&mut self, model: &mut DeVae<T>, total_steps: usize) -> Result<()> {
        let ids = self.trainable(model, &[ParamGroup::Embedding, ParamGroup::Posterior, ParamGroup::Decoder], Phase::Lower);
        let mut acc = StepTerms::default();
        let mut n = 0;
        let mut weight = 1.0;
        for batch in self.batches() {
            weight = if self.cfg.schedule.anneals_phase1() {
                linear_anneal(self.steps as i64, total_steps.max(1) as i64)?
            } else {
                1.0
            };
            let t = self.step(model, &batch, Phase::Lower, Weights { lower_kl: weight, alpha_f: 0.0 }, &ids, false)?;
            acc.add(&t);
            n += 1;
        }
        self.finish_epoch(model, 1, "lower", (weight, 0.0, weight), n, acc)
    }

    fn phase2_epoch(&mut self, model: &mut DeVae<T>, e2: u64) -> Result<()> {
        let (alpha_w, alpha_f) = if self.cfg.schedule.uses_modcyc() {
            modcyc(e2, self.cfg.cycle, self.cfg.lag)?
        } else {
            (1.0, 1.0)
        };
        let w = Weights { lower_kl: alpha_w, alpha_f };
        let batches = self.batches();
        let mut acc = StepTerms::default();
        let mut n = 0;
        let plan_name;
        if !self.cfg.schedule.uses_gate() {
            plan_name = "joint".to_owned();
            let all = [
                ParamGroup::Embedding,
                ParamGroup::Posterior,
                ParamGroup::Decoder,
                ParamGroup::Flow,
                ParamGroup::Scaler,
            ];
            let ids = self.trainable(model, &all, Phase::Joint);
            for batch in &batches {
                acc.add(&self.step(model, batch, Phase::Joint, w, &ids, false)?);
                n += 1;
            }
        } else {
            let plan = plan_for(
                crate::diagnostics::mi_converged(&self.mi.values(), self.cfg.mi_window, self.cfg.mi_epsilon),
                TOP_LAYER,
            );
            plan_name = match plan.path {
                UpdatePath::NormalVae => "normal",
                UpdatePath::OrderedLayerwise => "ordered",
            }
            .to_owned();
            let mut queue = batches.iter();
            'epoch: loop {
                for sub in &plan.steps {
                    let ids = self.trainable(model, &substep_groups(*sub)?, Phase::Joint);
                    let prior_only = *sub == SubStep::PriorInference;
                    let inner = !matches!(sub, SubStep::Joint(_));
                    if ids.is_empty() {
                        continue;
                    }
                    let mut tracker = PlateauTracker::new(
                        self.cfg.inner_patience,
                        self.cfg.inner_tolerance,
                        if inner { self.cfg.inner_cap } else { 1 },
                    );
                    while !tracker.done() {
                        let Some(batch) = queue.next() else { break 'epoch };
                        let t = self.step(model, batch, Phase::Joint, w, &ids, prior_only)?;
                        tracker.observe(t.loss);
                        if !prior_only {
                            acc.add(&t);
                            n += 1;
                        }
                    }
                }
            }
        }
        self.finish_epoch(model, 2, &plan_name, (alpha_w, alpha_f, alpha_w), n, acc)
    }
}

/// Trains `model` in place. On a non-finite loss the parameters of the last
/// completed epoch are restored and the error is returned.
pub fn train<T: Real>(
    config: &TrainingConfig,
    corpus: &EncodedCorpus,
    model: &mut DeVae<T>,
) -> Result<TrainReport> {
    train_with(config, corpus, model, |_, _| Ok(()))
}

/// Like [`train`], calling `on_epoch(epoch, model)` after every epoch.
pub fn train_with<T: Real>(
    config: &TrainingConfig,
    corpus: &EncodedCorpus,
    model: &mut DeVae<T>,
    mut on_epoch: impl FnMut(usize, &DeVae<T>) -> Result<()>,
) -> Result<TrainReport> {
    config.validate()?;
    if corpus.train.is_empty() || corpus.val.is_empty() {
        return Err(Error::Domain("training needs non-empty train and validation splits".into()));
    }
    let mut t = Trainer {
        cfg: config,
        corpus,
        opt: Optimizer::new(config.optimizer, config.lr, config.clip_norm),
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        mi: MiHistory::new(config.mi_window, config.mi_epsilon)?,
        collapse: CollapseReport::default(),
        metrics: MetricsLog::default(),
        steps: 0,
        epoch: 0,
        started: Instant::now(),
    };
    let per_epoch = corpus.train.len().div_ceil(config.batch_size);
    let total_phase1 = per_epoch * config.phase1_epochs;
    let mut last_good = model.store.clone();
    for e in 0..config.phase1_epochs + config.phase2_epochs {
        let res = if e < config.phase1_epochs {
            t.phase1_epoch(model, total_phase1)
        } else {
            t.phase2_epoch(model, (e - config.phase1_epochs) as u64)
        };
        if let Err(err) = res {
            model.store = last_good;
            return Err(err);
        }
        last_good = model.store.clone();
        on_epoch(e, model)?;
    }
    Ok(TrainReport { metrics: t.metrics, mi_history: t.mi, collapse: t.collapse, optimizer_steps: t.steps })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_anneal_examples() {
        assert_eq!(linear_anneal(0, 10).unwrap(), 0.0);
        assert_eq!(linear_anneal(10, 10).unwrap(), 1.0);
        assert_eq!(linear_anneal(5, 10).unwrap(), 0.5);
        assert_eq!(linear_anneal(50, 10).unwrap(), 1.0);
        assert!(linear_anneal(-1, 10).is_err());
        assert!(linear_anneal(1, 0).is_err());
    }

    #[test]
    fn modcyc_examples() {
        assert_eq!(modcyc(0, 4, 1.0).unwrap(), (0.0, 0.0));
        assert_eq!(modcyc(2, 4, 0.0).unwrap().0, 1f64.tanh());
        assert_eq!(modcyc(2, 5, 2.0).unwrap().1, 0.0);
        assert_eq!(modcyc(4, 5, 2.0).unwrap().1, 1f64.tanh());
        assert!(modcyc(1, 0, 1.0).is_err());
    }

    #[test]
    fn plan_examples() {
        let state = ScheduleState { epoch: 0, alpha_w: 0.0, alpha_f: 0.0, lower_weight: 0.0, mi: MiHistory::default() };
        assert_eq!(plan_update(&state).path, UpdatePath::NormalVae);
        let mut flat = state.clone();
        for s in 0..5 {
            flat.mi.push(s, 1.0).unwrap();
        }
        let plan = plan_update(&flat);
        assert_eq!(plan.path, UpdatePath::OrderedLayerwise);
        assert_eq!(
            plan.steps,
            [SubStep::Encoder(0), SubStep::Decoder(0), SubStep::Encoder(1), SubStep::Decoder(1), SubStep::PriorInference]
        );
        let json = serde_json::to_string(&plan).unwrap();
        assert_eq!(serde_json::from_str::<UpdatePlan>(&json).unwrap(), plan);
    }

    #[test]
    fn plateau_tracker_stops_on_patience_or_cap() {
        let mut t = PlateauTracker::new(3, 1e-3, 30);
        assert!(!t.observe(10.0));
        assert!(!t.observe(10.0));
        assert!(!t.observe(10.0));
        assert!(t.observe(9.999));
        let mut t = PlateauTracker::new(3, 1e-3, 5);
        let stops: Vec<bool> = (0..5).map(|i| t.observe(10.0 - i as f64)).collect();
        assert_eq!(stops, [false, false, false, false, true]);
    }

    #[test]
    fn schedule_mode_strings() {
        for m in ["none", "linear", "modcyc", "gated", "modcyc+gated"] {
            assert_eq!(m.parse::<ScheduleMode>().unwrap().to_string(), m);
        }
        assert!("cyclic".parse::<ScheduleMode>().is_err());
    }
}

//! Measurement suite: internal sentiment classifier, controlled generation and
//! transfer accuracy, the sentiment-level sweep with content overlap, and
//! per-dimension ablation probes.

use std::collections::HashSet;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{shuffled_indices, LabeledSentence, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{hash_params, DeVae};
use crate::nn::{uniform, Activation, Mlp};
use crate::optim::{Optimizer, OptimizerKind};
use crate::sentence_vae::DecodeMode;
use crate::tensor::{Graph, ParamGroup, ParamId, ParamStore, Real};

pub const CLASSIFIER_GATE: f64 = 0.9;

pub const STOPWORDS: [&str; 52] = [
    "a", "an", "the", "and", "or", "but", "if", "of", "at", "by", "for", "with", "about", "to", "from", "in",
    "on", "is", "are", "was", "were", "be", "been", "am", "it", "its", "this", "that", "these", "those", "i",
    "we", "you", "he", "she", "they", "me", "my", "our", "your", "their", "so", "as", "just", "very", "too",
    "there", "here", ".", ",", "!", "?",
];

pub fn default_stopwords() -> HashSet<String> {
    STOPWORDS.iter().map(|s| s.to_string()).collect()
}

/// Reads one stopword per line; blank lines and `#` comments are skipped.
pub fn parse_stopwords(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

/// Anything that maps token sequences to class probabilities.
pub trait SentimentJudge {
    fn num_classes(&self) -> usize;
    fn probabilities(&self, batch: &[&[u32]]) -> Vec<Vec<f64>>;

    fn predict(&self, batch: &[&[u32]]) -> Vec<usize> {
        self.probabilities(batch)
            .iter()
            .map(|p| crate::sentence_vae::argmax(p))
            .collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { embed_dim: 32, hidden: 32, epochs: 4, batch_size: 64, lr: 1e-2, seed: 17 }
    }
}

/// Mean-pooled embeddings followed by a two-layer feed-forward network.
#[derive(Clone, Debug)]
pub struct SentimentClassifier {
    pub store: ParamStore<f64>,
    pub table: ParamId,
    pub mlp: Mlp,
    pub classes: usize,
    pub held_out_accuracy: f64,
    pub refused: bool,
}

impl SentimentClassifier {
    fn logits(&self, g: &mut Graph<'_, f64>, batch: &[&[u32]]) -> crate::tensor::Var {
        let t = g.param(self.table);
        let seqs = batch.iter().map(|s| s.iter().map(|&x| x as usize).collect()).collect();
        let e = g.embed_mean(t, seqs);
        self.mlp.forward(g, e)
    }

    pub fn weights_hash(&self) -> String {
        let ids: Vec<ParamId> = self.store.ids().collect();
        hash_params(&self.store, &ids)
    }

    /// Errors when the held-out accuracy missed the gate.
    pub fn ensure_gate(&self) -> Result<()> {
        if self.refused {
            return Err(Error::Refused(format!(
                "classifier held-out accuracy {:.3} is below {CLASSIFIER_GATE}",
                self.held_out_accuracy
            )));
        }
        Ok(())
    }

    pub fn accuracy(&self, data: &[LabeledSentence]) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let seqs: Vec<&[u32]> = data.iter().map(|s| s.tokens.as_slice()).collect();
        let pred = self.predict(&seqs);
        pred.iter().zip(data).filter(|(p, s)| **p == s.label).count() as f64 / data.len() as f64
    }
}

impl SentimentJudge for SentimentClassifier {
    fn num_classes(&self) -> usize {
        self.classes
    }

    fn probabilities(&self, batch: &[&[u32]]) -> Vec<Vec<f64>> {
        let uniform_row = vec![1.0 / self.classes as f64; self.classes];
        let mut out = vec![uniform_row; batch.len()];
        let idx: Vec<usize> = (0..batch.len()).filter(|&i| !batch[i].is_empty()).collect();
        for chunk in idx.chunks(512) {
            let seqs: Vec<&[u32]> = chunk.iter().map(|&i| batch[i]).collect();
            let mut g = Graph::new(&self.store);
            let l = self.logits(&mut g, &seqs);
            let lp = g.log_softmax(l);
            for (row, &i) in g.value(lp).rows().into_iter().zip(chunk) {
                out[i] = row.iter().map(|v| v.exp()).collect();
            }
        }
        out
    }
}

/// Trains on `train` and measures accuracy on `held_out`.
pub fn train_classifier(
    train: &[LabeledSentence],
    held_out: &[LabeledSentence],
    vocab_size: usize,
    classes: usize,
    config: &ClassifierConfig,
) -> Result<SentimentClassifier> {
    if train.is_empty() || held_out.is_empty() {
        return Err(Error::Domain("classifier needs non-empty train and held-out sets".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = ParamStore::new();
    let table = store.add("classifier.embed", ParamGroup::Other, uniform(&mut rng, vocab_size, config.embed_dim, 0.5));
    let mlp = Mlp::new(
        &mut store,
        &mut rng,
        "classifier.ff",
        ParamGroup::Other,
        &[config.embed_dim, config.hidden, classes],
        Activation::Tanh,
        false,
    );
    let mut clf = SentimentClassifier { store, table, mlp, classes, held_out_accuracy: 0.0, refused: true };
    let ids: Vec<ParamId> = clf.store.ids().collect();
    let mut opt = Optimizer::new(OptimizerKind::Adam, config.lr, Some(5.0));
    let usable: Vec<&LabeledSentence> = train.iter().filter(|s| !s.tokens.is_empty()).collect();
    for _ in 0..config.epochs {
        for chunk in shuffled_indices(usable.len(), &mut rng).chunks(config.batch_size) {
            let seqs: Vec<&[u32]> = chunk.iter().map(|&i| usable[i].tokens.as_slice()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| usable[i].label).collect();
            let grads = {
                let mut g = Graph::new(&clf.store);
                let l = clf.logits(&mut g, &seqs);
                let lp = g.log_softmax(l);
                let picked = g.pick(lp, labels);
                let m = g.mean(picked);
                let loss = g.neg(m);
                g.backward(loss)
            };
            opt.step(&mut clf.store, &grads, &ids);
        }
    }
    clf.held_out_accuracy = clf.accuracy(held_out);
    clf.refused = clf.held_out_accuracy < CLASSIFIER_GATE;
    if clf.refused {
        log::warn!(
            "classifier held-out accuracy {:.3} is below the {CLASSIFIER_GATE} gate",
            clf.held_out_accuracy
        );
    }
    Ok(clf)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RangeMode {
    Strict,
    /// p-th and (100 - p)-th percentiles.
    Percentile(f64),
}

/// Linear-interpolated percentile of sorted data, `q` in [0, 100].
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// (min, max) of `values` under `mode`.
pub fn value_range(values: &[f64], mode: RangeMode) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Domain("cannot take the range of an empty set".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    match mode {
        RangeMode::Strict => Ok((v[0], v[v.len() - 1])),
        RangeMode::Percentile(p) => {
            if !(0.0..=50.0).contains(&p) {
                return Err(Error::Domain(format!("percentile {p} outside [0, 50]")));
            }
            Ok((percentile(&v, p), percentile(&v, 100.0 - p)))
        }
    }
}

/// Posterior-mean z_a of every sentence.
pub fn z_a_values<T: Real>(model: &DeVae<T>, data: &[LabeledSentence]) -> Result<Vec<f64>> {
    let d = model.latent_dim();
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.chunks(256) {
        let seqs: Vec<&[u32]> = chunk.iter().map(|s| s.tokens.as_slice()).collect();
        let zf = model.feature_means(&seqs)?;
        out.extend(zf.column(d - 1).iter().map(|v| v.f64()));
    }
    Ok(out)
}

pub fn sentiment_range<T: Real>(model: &DeVae<T>, train: &[LabeledSentence], mode: RangeMode) -> Result<(f64, f64)> {
    if train.is_empty() {
        return Err(Error::Domain("empty corpus".into()));
    }
    value_range(&z_a_values(model, train)?, mode)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelGrid {
    pub f_min: f64,
    pub f_max: f64,
    pub levels: usize,
}

impl LevelGrid {
    pub fn new(f_min: f64, f_max: f64, levels: usize) -> Result<Self> {
        if levels < 2 {
            return Err(Error::Domain("a level grid needs at least two levels".into()));
        }
        if !(f_min <= f_max) {
            return Err(Error::Domain(format!("f_min {f_min} exceeds f_max {f_max}")));
        }
        Ok(Self { f_min, f_max, levels })
    }

    /// l_i = f_min + (f_max - f_min)(i - 1)/(L - 1), 1-based.
    pub fn value(&self, i: usize) -> Result<f64> {
        level_value(i, self)
    }

    pub fn values(&self) -> Vec<f64> {
        (1..=self.levels).map(|i| level_value(i, self).expect("in range")).collect()
    }
}

pub fn level_value(i: usize, grid: &LevelGrid) -> Result<f64> {
    if i == 0 || i > grid.levels {
        return Err(Error::Domain(format!("level {i} outside 1..={}", grid.levels)));
    }
    if i == grid.levels {
        return Ok(grid.f_max);
    }
    Ok(grid.f_min + (grid.f_max - grid.f_min) * (i - 1) as f64 / (grid.levels - 1) as f64)
}

/// One decoded sentence with its provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub seed: u64,
    pub level: f64,
    pub z_a: f64,
    pub tokens: Vec<u32>,
    pub text: String,
    pub empty: bool,
}

/// Prior samples with z_a overwritten by `target_level`, decoded greedily.
pub fn controlled_generate<T: Real>(
    model: &DeVae<T>,
    vocab: &Vocabulary,
    target_level: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<Generation>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let d = model.latent_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = Array2::from_shape_fn((n, d), |_| {
        let v: f64 = StandardNormal.sample(&mut rng);
        T::c(v)
    });
    z.column_mut(d - 1).fill(T::c(target_level));
    let decoded = model.decode_features(&z, DecodeMode::Greedy, None)?;
    Ok(decoded
        .into_iter()
        .map(|tokens| {
            let empty = tokens.is_empty();
            if empty {
                log::warn!("controlled generation at level {target_level} produced an empty sentence");
            }
            Generation { seed, level: target_level, z_a: target_level, text: vocab.decode(&tokens), tokens, empty }
        })
        .collect())
}

/// Where the non-sentiment coordinates of a transferred sentence come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransferMode {
    /// Posterior mean of the source, pushed through the flow.
    #[default]
    PosteriorMean,
    /// One posterior sample of the source.
    PosteriorSample { seed: u64 },
    /// Content dimensions drawn from the factorized prior.
    PriorContent { seed: u64 },
}

/// Moves each sentence's posterior-mean feature latent to `levels[i]` on the
/// sentiment axis and decodes greedily.
pub fn transfer_batch<T: Real>(model: &DeVae<T>, batch: &[&[u32]], levels: &[f64]) -> Result<Vec<Vec<u32>>> {
    transfer_batch_with(model, batch, levels, TransferMode::PosteriorMean)
}

pub fn transfer_batch_with<T: Real>(
    model: &DeVae<T>,
    batch: &[&[u32]],
    levels: &[f64],
    mode: TransferMode,
) -> Result<Vec<Vec<u32>>> {
    if batch.len() != levels.len() {
        return Err(Error::Domain("one target level per sentence required".into()));
    }
    if batch.is_empty() {
        return Ok(Vec::new());
    }
    let d = model.latent_dim();
    let normal = |rng: &mut ChaCha8Rng| -> T {
        let v: f64 = StandardNormal.sample(rng);
        T::c(v)
    };
    let mut zf = match mode {
        TransferMode::PosteriorMean => model.feature_means(batch)?,
        TransferMode::PosteriorSample { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut zs = Array2::zeros((batch.len(), d));
            for (i, q) in model.posteriors(batch)?.iter().enumerate() {
                let eps = ndarray::Array1::from_shape_fn(d, |_| normal(&mut rng));
                zs.row_mut(i).assign(&q.sample(&eps)?);
            }
            model.flow.forward(&model.store, &zs)?.0
        }
        TransferMode::PriorContent { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Array2::from_shape_fn((batch.len(), d), |_| normal(&mut rng))
        }
    };
    for (i, l) in levels.iter().enumerate() {
        zf[[i, d - 1]] = T::c(*l);
    }
    model.decode_features(&zf, DecodeMode::Greedy, None)
}

pub fn transfer<T: Real>(model: &DeVae<T>, tokens: &[u32], target_level: f64) -> Result<Vec<u32>> {
    if !tokens.is_empty() && tokens.iter().all(|t| *t == crate::corpus::UNK) {
        log::warn!("transfer input consists only of unknown tokens");
    }
    Ok(transfer_batch(model, &[tokens], &[target_level])?.remove(0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub controlled_accuracy: f64,
    pub transfer_accuracy: f64,
    pub controlled_total: usize,
    pub transfer_total: usize,
    pub empty_generations: usize,
    pub f_min: f64,
    pub f_max: f64,
}

/// Generations and transfers behind an [`AccuracyReport`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRecords {
    pub controlled: Vec<(usize, Generation, usize)>,
    pub transfers: Vec<(String, usize, Vec<u32>, usize)>,
}

/// Controlled generation aims at f_max for the positive class and f_min for
/// the negative class; transfer flips every polar test sentence.
#[allow(clippy::too_many_arguments)]
pub fn accuracy_suite<T: Real>(
    model: &DeVae<T>,
    judge: &dyn SentimentJudge,
    vocab: &Vocabulary,
    test: &[LabeledSentence],
    range: (f64, f64),
    per_class: usize,
    seed: u64,
) -> Result<(AccuracyReport, AccuracyRecords)> {
    let c = judge.num_classes();
    let (neg, pos) = (0usize, c - 1);
    let (f_min, f_max) = range;
    let mut records = AccuracyRecords::default();
    let mut hits = 0usize;
    let mut empty = 0usize;
    for (k, (class, level)) in [(neg, f_min), (pos, f_max)].into_iter().enumerate() {
        let gens = controlled_generate(model, vocab, level, per_class, seed.wrapping_add(k as u64))?;
        let seqs: Vec<&[u32]> = gens.iter().map(|g| g.tokens.as_slice()).collect();
        let pred = judge.predict(&seqs);
        for (g, p) in gens.into_iter().zip(pred) {
            hits += (p == class) as usize;
            empty += g.empty as usize;
            records.controlled.push((class, g, p));
        }
    }
    let controlled_total = records.controlled.len();

    let polar: Vec<&LabeledSentence> = test.iter().filter(|s| s.label == neg || s.label == pos).collect();
    let mut t_hits = 0usize;
    for chunk in polar.chunks(256) {
        let seqs: Vec<&[u32]> = chunk.iter().map(|s| s.tokens.as_slice()).collect();
        let targets: Vec<usize> = chunk.iter().map(|s| if s.label == pos { neg } else { pos }).collect();
        let levels: Vec<f64> = targets.iter().map(|&t| if t == pos { f_max } else { f_min }).collect();
        let out = transfer_batch(model, &seqs, &levels)?;
        let out_refs: Vec<&[u32]> = out.iter().map(|s| s.as_slice()).collect();
        let pred = judge.predict(&out_refs);
        for ((s, t), (o, p)) in chunk.iter().zip(targets).zip(out.into_iter().zip(pred)) {
            t_hits += (p == t) as usize;
            records.transfers.push((s.raw_text.clone(), t, o, p));
        }
    }
    let transfer_total = records.transfers.len();
    let frac = |h: usize, n: usize| if n == 0 { 0.0 } else { h as f64 / n as f64 };
    Ok((
        AccuracyReport {
            controlled_accuracy: frac(hits, controlled_total),
            transfer_accuracy: frac(t_hits, transfer_total),
            controlled_total,
            transfer_total,
            empty_generations: empty,
            f_min,
            f_max,
        },
        records,
    ))
}

/// |A ∩ B| / |A ∪ B| over non-stopword unigrams; 1.0 when both are empty.
pub fn jaccard<S: AsRef<str>>(x: &[S], y: &[S], stopwords: &HashSet<String>) -> f64 {
    let content = |s: &[S]| -> HashSet<String> {
        s.iter()
            .map(|w| w.as_ref().to_lowercase())
            .filter(|w| !stopwords.contains(w))
            .collect()
    };
    let a = content(x);
    let b = content(y);
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / a.union(&b).count() as f64
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() {
        return None;
    }
    pearson(&ranks(x), &ranks(y))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub level: usize,
    pub value: f64,
    pub mean_score_pos_source: f64,
    pub mean_score_neg_source: f64,
    pub mean_jaccard_pos: f64,
    pub mean_jaccard_neg: f64,
    pub mean_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub spearman: Option<f64>,
    pub adjacent_jaccard: f64,
    pub extreme_jaccard: f64,
}

impl SweepReport {
    /// Content overlap near each source's own level is at least the overlap
    /// at the grid ends.
    pub fn jaccard_soft_check(&self) -> bool {
        self.adjacent_jaccard >= self.extreme_jaccard
    }
}

/// Transfers every source sentence to every grid level. Scores are the
/// judge's probability of the highest class.
pub fn level_sweep<T: Real>(
    model: &DeVae<T>,
    judge: &dyn SentimentJudge,
    vocab: &Vocabulary,
    sources: &[LabeledSentence],
    grid: &LevelGrid,
    stopwords: &HashSet<String>,
) -> Result<SweepReport> {
    let c = judge.num_classes();
    let pos_class = c - 1;
    let polar: Vec<&LabeledSentence> = sources.iter().filter(|s| s.label == 0 || s.label == pos_class).collect();
    let seqs: Vec<&[u32]> = polar.iter().map(|s| s.tokens.as_slice()).collect();
    let source_words: Vec<Vec<String>> =
        polar.iter().map(|s| s.tokens.iter().map(|&t| vocab.token(t).to_owned()).collect()).collect();
    let own = if polar.is_empty() {
        Vec::new()
    } else {
        let data: Vec<LabeledSentence> = polar.iter().map(|s| (*s).clone()).collect();
        z_a_values(model, &data)?
    };
    let values = grid.values();
    let mut rows = Vec::with_capacity(grid.levels);
    let mut jac = vec![vec![0.0; grid.levels]; polar.len()];
    for (li, &value) in values.iter().enumerate() {
        let mut outputs = Vec::with_capacity(polar.len());
        for chunk in seqs.chunks(256) {
            outputs.extend(transfer_batch(model, chunk, &vec![value; chunk.len()])?);
        }
        let refs: Vec<&[u32]> = outputs.iter().map(|o| o.as_slice()).collect();
        let probs = judge.probabilities(&refs);
        let (mut sp, mut sn, mut jp, mut jn, mut np, mut nn) = (0.0, 0.0, 0.0, 0.0, 0usize, 0usize);
        for (k, s) in polar.iter().enumerate() {
            let words: Vec<String> = outputs[k].iter().map(|&t| vocab.token(t).to_owned()).collect();
            let j = jaccard(&source_words[k], &words, stopwords);
            jac[k][li] = j;
            let score = probs[k][pos_class];
            if s.label == pos_class {
                sp += score;
                jp += j;
                np += 1;
            } else {
                sn += score;
                jn += j;
                nn += 1;
            }
        }
        let avg = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
        rows.push(SweepRow {
            level: li + 1,
            value,
            mean_score_pos_source: avg(sp, np),
            mean_score_neg_source: avg(sn, nn),
            mean_jaccard_pos: avg(jp, np),
            mean_jaccard_neg: avg(jn, nn),
            mean_score: avg(sp + sn, np + nn),
        });
    }
    let idx: Vec<f64> = rows.iter().map(|r| r.level as f64).collect();
    let means: Vec<f64> = rows.iter().map(|r| r.mean_score).collect();
    let spearman = spearman(&idx, &means);

    let (mut adjacent, mut extreme) = (0.0, 0.0);
    for (k, z) in own.iter().enumerate() {
        let nearest = values
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - z).abs().total_cmp(&(b.1 - z).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        adjacent += jac[k][nearest];
        extreme += 0.5 * (jac[k][0] + jac[k][grid.levels - 1]);
    }
    let n = own.len().max(1) as f64;
    let report = SweepReport { rows, spearman, adjacent_jaccard: adjacent / n, extreme_jaccard: extreme / n };
    if !report.jaccard_soft_check() {
        log::warn!(
            "content overlap near the source level ({:.3}) is below the overlap at the extremes ({:.3})",
            report.adjacent_jaccard,
            report.extreme_jaccard
        );
    }
    Ok(report)
}

/// Binary logistic regression on one standardized feature, fit by Newton
/// iterations. Returns the accuracy on `(test_x, test_y)`.
pub fn logistic_probe(train_x: &[f64], train_y: &[usize], test_x: &[f64], test_y: &[usize]) -> f64 {
    let n = train_x.len().max(1) as f64;
    let mean = train_x.iter().sum::<f64>() / n;
    let sd = (train_x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let sd = if sd > 0.0 { sd } else { 1.0 };
    let std = |v: f64| (v - mean) / sd;
    let (mut w, mut b) = (0.0f64, 0.0f64);
    let ridge = 1e-4;
    for _ in 0..50 {
        let (mut gw, mut gb, mut hww, mut hwb, mut hbb) = (ridge * w, 0.0, ridge, 0.0, 1e-9);
        for (x, y) in train_x.iter().zip(train_y) {
            let x = std(*x);
            let p = crate::tensor::sigmoid(w * x + b);
            let r = p - *y as f64;
            gw += r * x;
            gb += r;
            let s = p * (1.0 - p);
            hww += s * x * x;
            hwb += s * x;
            hbb += s;
        }
        let det = hww * hbb - hwb * hwb;
        if det.abs() < 1e-12 {
            break;
        }
        let dw = (hbb * gw - hwb * gb) / det;
        let db = (hww * gb - hwb * gw) / det;
        w -= dw;
        b -= db;
        if dw.abs() + db.abs() < 1e-10 {
            break;
        }
    }
    if test_x.is_empty() {
        return 0.0;
    }
    let hits = test_x
        .iter()
        .zip(test_y)
        .filter(|(x, y)| ((w * std(**x) + b > 0.0) as usize) == **y)
        .count();
    hits as f64 / test_x.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub correlations: Vec<f64>,
    pub zero_variance: Vec<bool>,
    pub z_a_dim: usize,
    pub argmax_dim: usize,
    pub z_a_probe_accuracy: f64,
    pub best_other_dim: usize,
    pub best_other_probe_accuracy: f64,
}

/// Per-dimension correlations of `features` with binary `labels` and the two
/// single-feature probes. The last column is z_a.
pub fn probe_features(
    train_x: &Array2<f64>,
    train_y: &[usize],
    test_x: &Array2<f64>,
    test_y: &[usize],
) -> Result<ProbeReport> {
    let d = train_x.ncols();
    if d < 2 || train_x.nrows() != train_y.len() || test_x.nrows() != test_y.len() {
        return Err(Error::Domain("feature/label shapes disagree".into()));
    }
    let yf: Vec<f64> = train_y.iter().map(|&y| y as f64).collect();
    let mut correlations = Vec::with_capacity(d);
    let mut zero_variance = Vec::with_capacity(d);
    for j in 0..d {
        let col: Vec<f64> = train_x.column(j).to_vec();
        match pearson(&col, &yf) {
            Some(r) => {
                correlations.push(r);
                zero_variance.push(false);
            }
            None => {
                correlations.push(0.0);
                zero_variance.push(true);
            }
        }
    }
    let by_abs = |a: &(usize, &f64), b: &(usize, &f64)| a.1.abs().total_cmp(&b.1.abs());
    let argmax_dim = correlations.iter().enumerate().max_by(by_abs).map(|(i, _)| i).unwrap_or(0);
    let best_other_dim = correlations[..d - 1].iter().enumerate().max_by(by_abs).map(|(i, _)| i).unwrap_or(0);
    let probe = |j: usize| {
        logistic_probe(&train_x.column(j).to_vec(), train_y, &test_x.column(j).to_vec(), test_y)
    };
    Ok(ProbeReport {
        correlations,
        zero_variance,
        z_a_dim: d - 1,
        argmax_dim,
        z_a_probe_accuracy: probe(d - 1),
        best_other_dim,
        best_other_probe_accuracy: probe(best_other_dim),
    })
}

/// Probes on posterior-mean feature latents. Multi-class corpora use their
/// two extreme classes.
pub fn ablation_probe<T: Real>(
    model: &DeVae<T>,
    train: &[LabeledSentence],
    test: &[LabeledSentence],
) -> Result<ProbeReport> {
    let pos = model.config.num_classes - 1;
    let features = |data: &[LabeledSentence]| -> Result<(Array2<f64>, Vec<usize>)> {
        let polar: Vec<&LabeledSentence> = data.iter().filter(|s| s.label == 0 || s.label == pos).collect();
        let mut x = Array2::zeros((polar.len(), model.latent_dim()));
        let mut row = 0;
        for chunk in polar.chunks(256) {
            let seqs: Vec<&[u32]> = chunk.iter().map(|s| s.tokens.as_slice()).collect();
            let zf = model.feature_means(&seqs)?;
            for r in zf.rows() {
                x.row_mut(row).assign(&r.mapv(|v| v.f64()));
                row += 1;
            }
        }
        Ok((x, polar.iter().map(|s| (s.label == pos) as usize).collect()))
    };
    let (tx, ty) = features(train)?;
    let (vx, vy) = features(test)?;
    probe_features(&tx, &ty, &vx, &vy)
}

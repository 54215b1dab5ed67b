//! Lower hierarchy layer: mean-pooled sentence embedding, diagonal Gaussian
//! posterior over the sentence latent and a GRU word decoder.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::nn::{uniform, Activation, GruCell, Linear, Mlp};
use crate::tensor::{Graph, ParamGroup, ParamId, ParamStore, Real, Var};

pub const LOG_SIGMA_MIN: f64 = -6.0;
pub const LOG_SIGMA_MAX: f64 = 3.0;
const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

/// Diagonal Gaussian N(mean, diag(scale^2)).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagonalGaussian<T> {
    pub mean: Array1<T>,
    pub scale: Array1<T>,
}

impl<T: Real> DiagonalGaussian<T> {
    pub fn new(mean: Array1<T>, scale: Array1<T>) -> Result<Self> {
        if mean.len() != scale.len() {
            return Err(Error::Domain(format!("mean dim {} != scale dim {}", mean.len(), scale.len())));
        }
        if scale.iter().any(|s| !(*s > T::zero())) {
            return Err(Error::Domain("scale must be strictly positive".into()));
        }
        Ok(Self { mean, scale })
    }

    pub fn standard(dim: usize) -> Self {
        Self { mean: Array1::zeros(dim), scale: Array1::ones(dim) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `mean + scale * noise`.
    pub fn sample(&self, noise: &Array1<T>) -> Result<Array1<T>> {
        if noise.len() != self.dim() {
            return Err(Error::Domain(format!("noise dim {} != latent dim {}", noise.len(), self.dim())));
        }
        Ok(&self.mean + &(&self.scale * noise))
    }

    pub fn log_density(&self, z: &Array1<T>) -> T {
        let mut acc = 0.0;
        for ((m, s), x) in self.mean.iter().zip(&self.scale).zip(z) {
            let (m, s, x) = (m.f64(), s.f64(), x.f64());
            let u = (x - m) / s;
            acc += -0.5 * u * u - s.ln() - HALF_LOG_2PI;
        }
        T::c(acc)
    }

    /// Closed-form KL(self || N(0, I)) = 1/2 sum(mu^2 + sigma^2 - 1 - 2 log sigma).
    pub fn kl_to_standard(&self) -> T {
        let kl: f64 = self
            .mean
            .iter()
            .zip(&self.scale)
            .map(|(m, s)| {
                let (m, s) = (m.f64(), s.f64());
                0.5 * (m * m + s * s - 1.0 - 2.0 * s.ln())
            })
            .sum();
        T::c(kl)
    }
}

/// log N(z; 0, I) for a single vector.
pub fn standard_normal_log_density<T: Real>(z: &[T]) -> T {
    T::c(z.iter().map(|v| -0.5 * v.f64() * v.f64() - HALF_LOG_2PI).sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingMode {
    TrainableTable,
    ExternalFile,
}

/// Per-token vectors for the sentence encoder.
#[derive(Clone, Debug)]
pub struct EmbeddingBackend {
    pub table: ParamId,
    pub mode: EmbeddingMode,
    pub dim: usize,
}

impl EmbeddingBackend {
    pub fn trainable<T: Real>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, vocab: usize, dim: usize) -> Self {
        let table = store.add("embedding.table", ParamGroup::Embedding, uniform(rng, vocab, dim, 0.5));
        Self { table, mode: EmbeddingMode::TrainableTable, dim }
    }

    /// Overwrites the table with externally supplied vectors and freezes it.
    pub fn load_external<T: Real>(&mut self, store: &mut ParamStore<T>, vectors: Array2<T>) -> Result<()> {
        if vectors.dim() != store.get(self.table).dim() {
            return Err(Error::Domain(format!(
                "external embeddings have shape {:?}, expected {:?}",
                vectors.dim(),
                store.get(self.table).dim()
            )));
        }
        *store.get_mut(self.table) = vectors;
        store.set_trainable(self.table, false);
        self.mode = EmbeddingMode::ExternalFile;
        Ok(())
    }

    /// Mean-pooled sentence encodings, one row per sentence.
    pub fn embed<T: Real>(&self, g: &mut Graph<'_, T>, batch: &[&[u32]]) -> Result<Var> {
        if let Some(i) = batch.iter().position(|s| s.is_empty()) {
            return Err(Error::Domain(format!("empty token list at batch index {i}")));
        }
        let vocab = g.store().get(self.table).nrows();
        let seqs = batch
            .iter()
            .map(|s| check_ids(s, vocab).map(|_| s.iter().map(|&t| t as usize).collect()))
            .collect::<Result<Vec<_>>>()?;
        let table = g.param(self.table);
        Ok(g.embed_mean(table, seqs))
    }
}

fn check_ids(seq: &[u32], vocab: usize) -> Result<()> {
    match seq.iter().find(|&&t| t as usize >= vocab) {
        Some(t) => Err(Error::Domain(format!("token id {t} >= vocabulary size {vocab}"))),
        None => Ok(()),
    }
}

/// Parses `token v1 v2 ...` lines into a table aligned with `vocab`. Tokens
/// missing from the file keep a zero row.
pub fn parse_embedding_file<T: Real>(
    text: &str,
    vocab: &crate::corpus::Vocabulary,
    dim: usize,
) -> Result<Array2<T>> {
    let mut table = Array2::zeros((vocab.len(), dim));
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(tok) = parts.next() else { continue };
        let vals: Vec<f64> = parts
            .map(|p| p.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        if vals.len() != dim {
            return Err(Error::Parse { line: i + 1, message: format!("expected {dim} values, got {}", vals.len()) });
        }
        if vocab.contains(tok) {
            let id = vocab.id(tok) as usize;
            for (j, v) in vals.into_iter().enumerate() {
                table[[id, j]] = T::c(v);
            }
        }
    }
    Ok(table)
}

/// g_phi: sentence encoding -> (mean, log scale).
#[derive(Clone, Debug)]
pub struct PosteriorNet {
    pub mlp: Mlp,
    pub latent_dim: usize,
}

impl PosteriorNet {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        input_dim: usize,
        hidden: &[usize],
        latent_dim: usize,
        zero_init_head: bool,
    ) -> Self {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * latent_dim);
        let mlp = Mlp::new(store, rng, "posterior", ParamGroup::Posterior, &sizes, Activation::Tanh, zero_init_head);
        Self { mlp, latent_dim }
    }

    /// Returns `(mean, log_sigma)`, each B x d, with log sigma clamped.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, e_s: Var) -> (Var, Var) {
        let out = self.mlp.forward(g, e_s);
        let d = self.latent_dim;
        let mu = g.slice_cols(out, 0, d);
        let raw = g.slice_cols(out, d, 2 * d);
        let log_sigma = g.clamp(raw, T::c(LOG_SIGMA_MIN), T::c(LOG_SIGMA_MAX));
        (mu, log_sigma)
    }
}

/// Reparameterized sample `mu + exp(log_sigma) * noise`.
pub fn reparameterize<T: Real>(g: &mut Graph<'_, T>, mu: Var, log_sigma: Var, noise: Array2<T>) -> Var {
    let eps = g.constant(noise);
    let sigma = g.exp(log_sigma);
    let scaled = g.mul(sigma, eps);
    g.add(mu, scaled)
}

/// Per-row closed-form KL(N(mu, sigma^2) || N(0, I)), B x 1.
pub fn kl_standard_rows<T: Real>(g: &mut Graph<'_, T>, mu: Var, log_sigma: Var) -> Var {
    let mu2 = g.square(mu);
    let two_ls = g.scale(log_sigma, T::c(2.0));
    let var = g.exp(two_ls);
    let a = g.add(mu2, var);
    let a = g.sub(a, two_ls);
    let a = g.add_scalar(a, -T::one());
    let s = g.sum_cols(a);
    g.scale(s, T::c(0.5))
}

/// Per-row diagonal Gaussian log density log N(z; mu, sigma^2), B x 1.
pub fn gaussian_log_density_rows<T: Real>(g: &mut Graph<'_, T>, z: Var, mu: Var, log_sigma: Var) -> Var {
    let diff = g.sub(z, mu);
    let neg_ls = g.neg(log_sigma);
    let inv_sigma = g.exp(neg_ls);
    let u = g.mul(diff, inv_sigma);
    let u2 = g.square(u);
    let half = g.scale(u2, T::c(-0.5));
    let a = g.sub(half, log_sigma);
    let a = g.add_scalar(a, T::c(-HALF_LOG_2PI));
    g.sum_cols(a)
}

/// Per-row standard normal log density, B x 1.
pub fn standard_log_density_rows<T: Real>(g: &mut Graph<'_, T>, z: Var) -> Var {
    let z2 = g.square(z);
    let a = g.scale(z2, T::c(-0.5));
    let a = g.add_scalar(a, T::c(-HALF_LOG_2PI));
    g.sum_cols(a)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConditioning {
    /// Concatenate the latent to the token embedding at every step.
    pub per_step_input: bool,
    /// Initial hidden state is an affine map of the latent (zeros otherwise).
    pub init_hidden: bool,
}

impl Default for DecoderConditioning {
    fn default() -> Self {
        Self { per_step_input: true, init_hidden: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DecodeMode {
    Greedy,
    Sample { temperature: f64 },
}

/// r_theta (GRU) and m_theta (hidden -> vocabulary logits).
#[derive(Clone, Debug)]
pub struct SequenceDecoder {
    pub embed: ParamId,
    pub gru: GruCell,
    pub init: Option<Linear>,
    pub out: Linear,
    pub conditioning: DecoderConditioning,
    pub latent_dim: usize,
    pub vocab_size: usize,
    pub max_len: usize,
}

impl SequenceDecoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        vocab_size: usize,
        embed_dim: usize,
        latent_dim: usize,
        hidden: usize,
        max_len: usize,
        conditioning: DecoderConditioning,
    ) -> Self {
        let group = ParamGroup::Decoder;
        let embed = store.add("decoder.embed", group, uniform(rng, vocab_size, embed_dim, 0.5));
        let input_dim = embed_dim + if conditioning.per_step_input { latent_dim } else { 0 };
        let gru = GruCell::new(store, rng, "decoder.gru", group, input_dim, hidden);
        let init = conditioning
            .init_hidden
            .then(|| Linear::new(store, rng, "decoder.init", group, latent_dim, hidden));
        let out = Linear::new(store, rng, "decoder.out", group, hidden, vocab_size);
        Self { embed, gru, init, out, conditioning, latent_dim, vocab_size, max_len }
    }

    fn initial_state<T: Real>(&self, g: &mut Graph<'_, T>, z: Var) -> Var {
        match &self.init {
            Some(lin) => lin.forward(g, z),
            None => {
                let b = g.shape(z).0;
                g.constant(Array2::zeros((b, self.gru.hidden)))
            }
        }
    }

    fn step_inputs<T: Real>(&self, g: &mut Graph<'_, T>, ids: Vec<usize>, z_rows: Option<Var>) -> Var {
        let table = g.param(self.embed);
        let emb = g.gather(table, ids);
        match z_rows {
            Some(z) if self.conditioning.per_step_input => g.concat_cols(&[emb, z]),
            _ => emb,
        }
    }

    /// Teacher-forced log-likelihood per sentence (B x 1), including EOS.
    pub fn log_likelihood<T: Real>(&self, g: &mut Graph<'_, T>, z: Var, batch: &[&[u32]]) -> Result<Var> {
        let b = batch.len();
        if b == 0 {
            return Err(Error::Domain("empty batch".into()));
        }
        for s in batch {
            check_ids(s, self.vocab_size)?;
        }
        let steps = batch.iter().map(|s| s.len() + 1).max().unwrap_or(1);
        let mut inputs = Vec::with_capacity(steps * b);
        let mut targets = Vec::with_capacity(steps * b);
        let mut agg = Array2::<T>::zeros((b, steps * b));
        for j in 0..steps {
            for (r, s) in batch.iter().enumerate() {
                let prev = if j == 0 { BOS } else { s.get(j - 1).copied().unwrap_or(PAD) };
                inputs.push(prev as usize);
                let target = match j.cmp(&s.len()) {
                    std::cmp::Ordering::Less => s[j],
                    std::cmp::Ordering::Equal => EOS,
                    std::cmp::Ordering::Greater => PAD,
                };
                targets.push(target as usize);
                if j <= s.len() {
                    agg[[r, j * b + r]] = T::one();
                }
            }
        }
        let z_rows = if self.conditioning.per_step_input {
            let reps = vec![z; steps];
            Some(g.concat_rows(&reps))
        } else {
            None
        };
        let x = self.step_inputs(g, inputs, z_rows);
        let x_proj = self.gru.project_input(g, x);
        let mut h = self.initial_state(g, z);
        let mut hs = Vec::with_capacity(steps);
        for j in 0..steps {
            let xp = g.slice_rows(x_proj, j * b, (j + 1) * b);
            h = self.gru.step(g, xp, h);
            hs.push(h);
        }
        let all = g.concat_rows(&hs);
        let logits = self.out.forward(g, all);
        let logp = g.log_softmax(logits);
        let picked = g.pick(logp, targets);
        let agg = g.constant(agg);
        Ok(g.matmul(agg, picked))
    }

    /// Decodes one sentence per latent row. Stops at EOS or `max_len` tokens.
    pub fn decode<T: Real>(
        &self,
        store: &ParamStore<T>,
        z: &Array2<T>,
        mode: DecodeMode,
        max_len: usize,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Vec<Vec<u32>>> {
        if max_len == 0 {
            return Err(Error::Domain("max_len must be positive".into()));
        }
        let mut rng = rng;
        if matches!(mode, DecodeMode::Sample { .. }) && rng.is_none() {
            return Err(Error::Domain("sampling requires a random source".into()));
        }
        let b = z.nrows();
        let mut out: Vec<Vec<u32>> = vec![Vec::new(); b];
        let mut done = vec![false; b];
        let mut g = Graph::new(store);
        let zv = g.constant(z.clone());
        let mut h = self.initial_state(&mut g, zv);
        let mut prev: Vec<usize> = vec![BOS as usize; b];
        for _ in 0..max_len {
            let x = self.step_inputs(&mut g, prev.clone(), Some(zv));
            let xp = self.gru.project_input(&mut g, x);
            h = self.gru.step(&mut g, xp, h);
            let logits = self.out.forward(&mut g, h);
            let logits = g.value(logits).clone();
            for r in 0..b {
                if done[r] {
                    continue;
                }
                let row: Vec<f64> = logits.row(r).iter().map(|v| v.f64()).collect();
                let tok = match mode {
                    DecodeMode::Greedy => argmax(&row),
                    DecodeMode::Sample { temperature } => {
                        sample_categorical(&row, temperature, rng.as_deref_mut().expect("checked"))
                    }
                };
                if tok as u32 == EOS {
                    done[r] = true;
                } else {
                    out[r].push(tok as u32);
                }
                prev[r] = tok;
            }
            if done.iter().all(|d| *d) {
                break;
            }
        }
        Ok(out)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = vec![self.embed];
        p.extend(self.gru.params());
        if let Some(init) = &self.init {
            p.extend(init.params());
        }
        p.extend(self.out.params());
        p
    }
}

pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, v)| if *v > bv { (i, *v) } else { (bi, bv) })
        .0
}

/// Samples from softmax(logits / temperature).
pub fn sample_categorical(logits: &[f64], temperature: f64, rng: &mut impl Rng) -> usize {
    let t = temperature.max(1e-8);
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| ((l - max) / t).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    argmax(logits)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceVaeConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub latent_dim: usize,
    pub posterior_hidden: Vec<usize>,
    pub decoder_embed_dim: usize,
    pub decoder_hidden: usize,
    pub max_len: usize,
    pub conditioning: DecoderConditioning,
    pub zero_init_posterior_head: bool,
}

/// Sentence layer: embedding backend, g_phi, and the recurrent decoder.
#[derive(Clone, Debug)]
pub struct SentenceVae {
    pub embedding: EmbeddingBackend,
    pub posterior: PosteriorNet,
    pub decoder: SequenceDecoder,
    pub config: SentenceVaeConfig,
}

/// Lower-layer loss terms averaged over the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LowerBreakdown {
    pub loss: f64,
    /// Mean teacher-forced log-likelihood (nats, <= 0).
    pub recon_loglik: f64,
    pub kl: f64,
    pub kl_weight: f64,
}

impl LowerBreakdown {
    pub fn compose(recon_loglik: f64, kl: f64, kl_weight: f64) -> Self {
        Self { loss: -recon_loglik + kl_weight * kl, recon_loglik, kl, kl_weight }
    }
}

/// Everything one lower-layer forward pass produces on the tape.
pub struct LowerPass {
    pub mu: Var,
    pub log_sigma: Var,
    pub z: Var,
    pub loglik_rows: Var,
    pub kl_rows: Var,
}

impl SentenceVae {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, config: SentenceVaeConfig) -> Self {
        let embedding = EmbeddingBackend::trainable(store, rng, config.vocab_size, config.embed_dim);
        let posterior = PosteriorNet::new(
            store,
            rng,
            config.embed_dim,
            &config.posterior_hidden,
            config.latent_dim,
            config.zero_init_posterior_head,
        );
        let decoder = SequenceDecoder::new(
            store,
            rng,
            config.vocab_size,
            config.decoder_embed_dim,
            config.latent_dim,
            config.decoder_hidden,
            config.max_len,
            config.conditioning,
        );
        Self { embedding, posterior, decoder, config }
    }

    /// Encoder half of a pass: posterior parameters for each sentence.
    pub fn encode<T: Real>(&self, g: &mut Graph<'_, T>, batch: &[&[u32]]) -> Result<(Var, Var)> {
        let e_s = self.embedding.embed(g, batch)?;
        let (mu, ls) = self.posterior.forward(g, e_s);
        check_finite(g, mu, "posterior mean")?;
        Ok((mu, ls))
    }

    /// Full lower pass with externally supplied standard-normal noise (B x d).
    pub fn pass<T: Real>(&self, g: &mut Graph<'_, T>, batch: &[&[u32]], noise: Array2<T>) -> Result<LowerPass> {
        let (mu, log_sigma) = self.encode(g, batch)?;
        if noise.dim() != g.shape(mu) {
            return Err(Error::Domain(format!("noise shape {:?} != {:?}", noise.dim(), g.shape(mu))));
        }
        let z = reparameterize(g, mu, log_sigma, noise);
        let loglik_rows = self.decoder.log_likelihood(g, z, batch)?;
        let kl_rows = kl_standard_rows(g, mu, log_sigma);
        Ok(LowerPass { mu, log_sigma, z, loglik_rows, kl_rows })
    }

    /// Lower ELBO loss: -E[log p(x|z)] + w * KL(q(z|x) || N(0, I)), batch mean.
    pub fn lower_elbo<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        batch: &[&[u32]],
        noise: Array2<T>,
        kl_weight: f64,
    ) -> Result<(Var, LowerBreakdown, LowerPass)> {
        if batch.is_empty() {
            return Err(Error::Domain("empty batch".into()));
        }
        let pass = self.pass(g, batch, noise)?;
        check_finite(g, pass.loglik_rows, "reconstruction log-likelihood")?;
        let ll = g.mean(pass.loglik_rows);
        let kl = g.mean(pass.kl_rows);
        let nll = g.neg(ll);
        let wkl = g.scale(kl, T::c(kl_weight));
        let loss = g.add(nll, wkl);
        let bd = LowerBreakdown::compose(g.scalar(ll).f64(), g.scalar(kl).f64(), kl_weight);
        if !bd.loss.is_finite() {
            return Err(Error::NonFinite { context: "lower ELBO".into(), index: 0 });
        }
        Ok((loss, bd, pass))
    }

    /// Posterior for a single sentence.
    pub fn posterior<T: Real>(&self, store: &ParamStore<T>, tokens: &[u32]) -> Result<DiagonalGaussian<T>> {
        let mut post = self.posteriors(store, &[tokens])?;
        Ok(post.remove(0))
    }

    pub fn posteriors<T: Real>(&self, store: &ParamStore<T>, batch: &[&[u32]]) -> Result<Vec<DiagonalGaussian<T>>> {
        let mut g = Graph::new(store);
        let (mu, ls) = self.encode(&mut g, batch)?;
        check_finite(&g, ls, "posterior log-scale")?;
        let mu = g.value(mu);
        let ls = g.value(ls);
        Ok((0..batch.len())
            .map(|i| DiagonalGaussian {
                mean: mu.row(i).to_owned(),
                scale: ls.row(i).mapv(|v| v.exp()),
            })
            .collect())
    }

    /// Posterior means stacked as rows.
    pub fn posterior_means<T: Real>(&self, store: &ParamStore<T>, batch: &[&[u32]]) -> Result<Array2<T>> {
        let mut g = Graph::new(store);
        let (mu, _) = self.encode(&mut g, batch)?;
        Ok(g.value(mu).clone())
    }

    /// Teacher-forced log-likelihood of each sentence given its latent row.
    pub fn reconstruction_loglik<T: Real>(
        &self,
        store: &ParamStore<T>,
        z: &Array2<T>,
        batch: &[&[u32]],
    ) -> Result<Vec<f64>> {
        let mut g = Graph::new(store);
        let zv = g.constant(z.clone());
        let ll = self.decoder.log_likelihood(&mut g, zv, batch)?;
        Ok(g.value(ll).column(0).iter().map(|v| v.f64()).collect())
    }

    pub fn encoder_params(&self) -> Vec<ParamId> {
        let mut p = vec![self.embedding.table];
        p.extend(self.posterior.mlp.params());
        p
    }
}

pub fn check_finite<T: Real>(g: &Graph<'_, T>, v: Var, context: &str) -> Result<()> {
    let val = g.value(v);
    for (i, row) in val.rows().into_iter().enumerate() {
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { context: context.into(), index: i });
        }
    }
    Ok(())
}

//! Upper hierarchy layer: factored standard-normal prior over z_f, sentiment
//! supervision on its last coordinate z_a, and the weighted upper objective.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::CouplingFlowStack;
use crate::sentence_vae::{gaussian_log_density_rows, standard_log_density_rows, DiagonalGaussian};
use crate::tensor::{log_sum_exp, Graph, ParamGroup, ParamId, ParamStore, Real, Var};

/// Read-only views of a feature latent: z_u is everything but the last
/// coordinate, z_a is the last one.
#[derive(Clone, Copy, Debug)]
pub struct FeatureLatent<'a, T> {
    pub z_f: &'a [T],
}

impl<'a, T: Real> FeatureLatent<'a, T> {
    pub fn new(z_f: &'a [T]) -> Result<Self> {
        if z_f.len() < 2 {
            return Err(Error::Domain("feature latent needs at least two dimensions".into()));
        }
        Ok(Self { z_f })
    }

    pub fn z_u(&self) -> &'a [T] {
        &self.z_f[..self.z_f.len() - 1]
    }

    pub fn z_a(&self) -> T {
        self.z_f[self.z_f.len() - 1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalerMode {
    /// logits = z_a * [-1, 1]; binary only.
    Fixed,
    /// logits = z_a * w + b with w initialized to an ordinal ramp.
    Learned,
}

/// xi: scalar z_a -> class logits.
#[derive(Clone, Debug)]
pub struct SentimentScaler {
    pub mode: ScalerMode,
    pub num_classes: usize,
    pub weight: Option<ParamId>,
    pub bias: Option<ParamId>,
}

impl SentimentScaler {
    pub fn new<T: Real>(store: &mut ParamStore<T>, mode: ScalerMode, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config("need at least two sentiment classes".into()));
        }
        match mode {
            ScalerMode::Fixed if num_classes != 2 => {
                Err(Error::Config(format!("fixed scaler is binary; got {num_classes} classes")))
            }
            ScalerMode::Fixed => Ok(Self { mode, num_classes, weight: None, bias: None }),
            ScalerMode::Learned => {
                let ramp = Array2::from_shape_fn((1, num_classes), |(_, j)| {
                    T::c(-1.0 + 2.0 * j as f64 / (num_classes - 1) as f64)
                });
                let weight = store.add("scaler.weight", ParamGroup::Scaler, ramp);
                let bias = store.add("scaler.bias", ParamGroup::Scaler, Array2::zeros((1, num_classes)));
                Ok(Self { mode, num_classes, weight: Some(weight), bias: Some(bias) })
            }
        }
    }

    /// Logits for a column of z_a values (B x 1 -> B x C).
    pub fn logits<T: Real>(&self, g: &mut Graph<'_, T>, z_a: Var) -> Var {
        match (self.weight, self.bias) {
            (Some(w), Some(b)) => {
                let w = g.param(w);
                let b = g.param(b);
                let y = g.matmul(z_a, w);
                g.add_row(y, b)
            }
            _ => {
                let xi = g.constant(ndarray::array![[-T::one(), T::one()]]);
                g.matmul(z_a, xi)
            }
        }
    }

    /// Per-row log p(f | z_a), B x 1.
    pub fn loglik_rows<T: Real>(&self, g: &mut Graph<'_, T>, z_a: Var, labels: &[usize]) -> Result<Var> {
        if let Some(l) = labels.iter().find(|l| **l >= self.num_classes) {
            return Err(Error::Domain(format!("label {l} >= {} classes", self.num_classes)));
        }
        let logits = self.logits(g, z_a);
        let lp = g.log_softmax(logits);
        Ok(g.pick(lp, labels.to_vec()))
    }

    /// log softmax(xi(z_a))[label] for a single scalar.
    pub fn sentiment_loglik<T: Real>(&self, store: &ParamStore<T>, z_a: T, label: usize) -> Result<T> {
        let mut g = Graph::new(store);
        let z = g.constant(Array2::from_elem((1, 1), z_a));
        let v = self.loglik_rows(&mut g, z, &[label])?;
        Ok(g.scalar(v))
    }

    /// Class probabilities for each z_a.
    pub fn probabilities<T: Real>(&self, store: &ParamStore<T>, z_a: &[T]) -> Array2<f64> {
        let mut g = Graph::new(store);
        let z = g.constant(Array2::from_shape_vec((z_a.len(), 1), z_a.to_vec()).expect("column"));
        let logits = self.logits(&mut g, z);
        let lp = g.log_softmax(logits);
        g.value(lp).mapv(|v| v.f64().exp())
    }

    pub fn predict<T: Real>(&self, store: &ParamStore<T>, z_a: T) -> usize {
        let p = self.probabilities(store, &[z_a]);
        crate::sentence_vae::argmax(p.row(0).as_slice().expect("contiguous"))
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.weight.into_iter().chain(self.bias).collect()
    }
}

/// Closed-form KL(q || N(0, I)) with validation of the scale.
pub fn feature_kl<T: Real>(q: &DiagonalGaussian<T>) -> Result<T> {
    if q.scale.iter().any(|s| !(*s > T::zero())) {
        return Err(Error::Domain("scale must be strictly positive".into()));
    }
    Ok(q.kl_to_standard())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpperLossWeights {
    pub beta: f64,
    pub gamma_kl: f64,
}

impl Default for UpperLossWeights {
    fn default() -> Self {
        Self { beta: 10.0, gamma_kl: 10.0 }
    }
}

impl UpperLossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.gamma_kl >= 0.0) {
            return Err(Error::Config("beta and gamma_kl must be non-negative".into()));
        }
        Ok(())
    }
}

/// Batch means of the upper-layer terms. `logdet` is the forward z_s -> z_f
/// log-determinant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpperBreakdown {
    pub loss: f64,
    pub sentiment_loglik: f64,
    pub prior_loglik: f64,
    pub logdet: f64,
    pub kl: f64,
    pub beta: f64,
    pub gamma_kl: f64,
}

impl UpperBreakdown {
    /// loss = -(beta * sent + prior + logdet) + gamma * kl
    pub fn compose(sent: f64, prior: f64, logdet: f64, kl: f64, w: UpperLossWeights) -> Self {
        Self {
            loss: -(w.beta * sent + prior + logdet) + w.gamma_kl * kl,
            sentiment_loglik: sent,
            prior_loglik: prior,
            logdet,
            kl,
            beta: w.beta,
            gamma_kl: w.gamma_kl,
        }
    }
}

/// Tape handles for the upper pass.
pub struct UpperPass {
    pub z_f: Var,
    pub logdet_rows: Var,
    pub kl_rows: Var,
}

/// Upper objective on reparameterized z_s samples from q(z_s | x) with
/// posterior parameters `(mu, log_sigma)`.
///
/// The KL of the pushed-forward posterior against the prior is estimated as
/// `log q(z_s | x) - logdet - log N(z_f; 0, I)` per sample.
#[allow(clippy::too_many_arguments)]
pub fn upper_objective<T: Real>(
    g: &mut Graph<'_, T>,
    flow: &CouplingFlowStack,
    scaler: &SentimentScaler,
    z_s: Var,
    mu: Var,
    log_sigma: Var,
    labels: &[usize],
    weights: UpperLossWeights,
) -> Result<(Var, UpperBreakdown, UpperPass)> {
    weights.validate()?;
    if labels.len() != g.shape(z_s).0 {
        return Err(Error::Domain(format!("{} labels for {} samples", labels.len(), g.shape(z_s).0)));
    }
    let d = flow.dim();
    let (z_f, logdet_rows) = flow.forward_graph(g, z_s)?;
    let z_a = g.slice_cols(z_f, d - 1, d);
    let sent_rows = scaler.loglik_rows(g, z_a, labels)?;
    let prior_rows = standard_log_density_rows(g, z_f);
    let logq = gaussian_log_density_rows(g, z_s, mu, log_sigma);
    let kl_rows = g.sub(logq, logdet_rows);
    let kl_rows = g.sub(kl_rows, prior_rows);

    let sent = g.mean(sent_rows);
    let prior = g.mean(prior_rows);
    let logdet = g.mean(logdet_rows);
    let kl = g.mean(kl_rows);
    for (name, v) in [("sentiment log-likelihood", sent), ("prior log-density", prior), ("logdet", logdet), ("feature KL", kl)] {
        if !g.scalar(v).is_finite() {
            return Err(Error::NonFinite { context: name.into(), index: 0 });
        }
    }
    let bs = g.scale(sent, T::c(weights.beta));
    let a = g.add(bs, prior);
    let a = g.add(a, logdet);
    let neg = g.neg(a);
    let wk = g.scale(kl, T::c(weights.gamma_kl));
    let loss = g.add(neg, wk);
    let bd = UpperBreakdown::compose(
        g.scalar(sent).f64(),
        g.scalar(prior).f64(),
        g.scalar(logdet).f64(),
        g.scalar(kl).f64(),
        weights,
    );
    Ok((loss, bd, UpperPass { z_f, logdet_rows, kl_rows }))
}

/// Splits E_x KL(q(z_f|x) || p(z_f)) into the mutual information between the
/// input and z_f and the KL of the aggregate posterior from the prior. The
/// aggregate is the minibatch mixture of pushed-forward posteriors.
///
/// `noise` holds one standard-normal draw per posterior.
pub fn tc_decomposition_diag<T: Real>(
    store: &ParamStore<T>,
    flow: &CouplingFlowStack,
    posteriors: &[DiagonalGaussian<T>],
    noise: &Array2<T>,
) -> Result<(f64, f64)> {
    let b = posteriors.len();
    if b < 2 {
        return Err(Error::Domain(format!("batch of {b} is too small for a mixture estimate")));
    }
    if b < 16 {
        log::warn!("decomposition estimate on a batch of {b} is very noisy");
    }
    let d = flow.dim();
    if noise.dim() != (b, d) {
        return Err(Error::Domain(format!("noise shape {:?} != ({b}, {d})", noise.dim())));
    }
    let mut z_s = Array2::<T>::zeros((b, d));
    for (i, q) in posteriors.iter().enumerate() {
        let row = q.sample(&noise.row(i).to_owned())?;
        z_s.row_mut(i).assign(&row);
    }
    let (z_f, logdet) = flow.forward(store, &z_s)?;
    let log_b = (b as f64).ln();
    let mut mi = 0.0;
    let mut marginal = 0.0;
    for i in 0..b {
        let zs_i: Array1<T> = z_s.row(i).to_owned();
        let ld = logdet[i].f64();
        let cond: Vec<f64> = posteriors.iter().map(|q| q.log_density(&zs_i).f64() - ld).collect();
        let log_agg = log_sum_exp(cond.iter().copied()) - log_b;
        let log_prior: f64 = z_f.row(i).iter().map(|v| -0.5 * v.f64() * v.f64()).sum::<f64>()
            - 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln();
        mi += cond[i] - log_agg;
        marginal += log_agg - log_prior;
    }
    Ok((mi / b as f64, marginal / b as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fixed() -> (ParamStore<f64>, SentimentScaler) {
        let mut store = ParamStore::new();
        let s = SentimentScaler::new(&mut store, ScalerMode::Fixed, 2).unwrap();
        (store, s)
    }

    #[test]
    fn fixed_scaler_closed_forms() {
        let (store, s) = fixed();
        assert!((s.sentiment_loglik(&store, 0.0, 0).unwrap() + 2f64.ln()).abs() < 1e-12);
        let v = s.sentiment_loglik(&store, 0.5, 1).unwrap();
        assert!((v - 0.731_058_578_630_004_9f64.ln()).abs() < 1e-12);
        assert!(s.sentiment_loglik(&store, 40.0, 1).unwrap().abs() < 1e-12);
        assert!(s.sentiment_loglik(&store, 0.0, 2).is_err());
    }

    #[test]
    fn fixed_scaler_rejects_three_classes() {
        let mut store = ParamStore::<f64>::new();
        assert!(SentimentScaler::new(&mut store, ScalerMode::Fixed, 3).is_err());
        let s = SentimentScaler::new(&mut store, ScalerMode::Learned, 3).unwrap();
        assert_eq!(store.get(s.weight.unwrap()), &array![[-1.0, 0.0, 1.0]]);
        assert_eq!(s.predict(&store, -2.0), 0);
        let p = s.probabilities(&store, &[0.0]);
        assert!((p[[0, 1]] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.predict(&store, 2.0), 2);
    }

    #[test]
    fn feature_kl_values() {
        let q = DiagonalGaussian::<f64>::new(array![1.0, 0.0], array![1.0, 1.0]).unwrap();
        assert!((feature_kl(&q).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(feature_kl(&DiagonalGaussian::<f64>::standard(3)).unwrap(), 0.0);
        let bad = DiagonalGaussian { mean: array![0.0], scale: array![-1.0] };
        assert!(matches!(feature_kl(&bad), Err(Error::Domain(_))));
    }

    #[test]
    fn hand_set_terms_compose() {
        let bd = UpperBreakdown::compose(-0.3, -2.1, 0.4, 0.7, UpperLossWeights::default());
        // -(10 * -0.3 + -2.1 + 0.4) + 10 * 0.7
        assert!((bd.loss - 11.7).abs() < 1e-12);
    }

    #[test]
    fn feature_views_alias_last_dimension() {
        let z = [0.1, 0.2, 0.9];
        let f = FeatureLatent::new(&z).unwrap();
        assert_eq!(f.z_u(), &[0.1, 0.2]);
        assert_eq!(f.z_a(), 0.9);
        assert!(FeatureLatent::new(&z[..1]).is_err());
    }
}

//! Mutual-information and KL estimators and posterior-collapse detection.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sentence_vae::{standard_normal_log_density, DiagonalGaussian};
use crate::tensor::{log_sum_exp, Real};

pub const MIN_MI_BATCH: usize = 32;
pub const DEFAULT_WINDOW: usize = 5;
pub const DEFAULT_EPSILON: f64 = 0.05;
pub const ACTIVE_UNIT_THRESHOLD: f64 = 0.01;
pub const COLLAPSE_KL: f64 = 0.1;
pub const COLLAPSE_ACTIVE_FRACTION: f64 = 0.1;

/// Minibatch-mixture MI terms for one batch, before clipping:
/// mean KL(q(z|x_b) || p) - [mean log q_agg(z_b) - mean log p(z_b)].
pub fn mi_batch_terms<T: Real>(posteriors: &[DiagonalGaussian<T>], noise: &Array2<T>) -> Result<f64> {
    let b = posteriors.len();
    if b < 2 {
        return Err(Error::Domain(format!("batch of {b} is too small")));
    }
    if noise.nrows() != b {
        return Err(Error::Domain(format!("{} noise rows for {b} posteriors", noise.nrows())));
    }
    let log_b = (b as f64).ln();
    let mut kl = 0.0;
    let mut agg = 0.0;
    let mut prior = 0.0;
    for (i, q) in posteriors.iter().enumerate() {
        kl += q.kl_to_standard().f64();
        let z: Array1<T> = q.sample(&noise.row(i).to_owned())?;
        let comps = posteriors.iter().map(|p| p.log_density(&z).f64());
        agg += log_sum_exp(comps) - log_b;
        prior += standard_normal_log_density(z.as_slice().expect("contiguous")).f64();
    }
    let n = b as f64;
    Ok(kl / n - (agg / n - prior / n))
}

/// Averages the batch estimates and clips at zero. Every batch must hold at
/// least [`MIN_MI_BATCH`] posteriors.
pub fn estimate_mi<T: Real>(batches: &[(Vec<DiagonalGaussian<T>>, Array2<T>)]) -> Result<f64> {
    if batches.is_empty() {
        return Err(Error::Domain("no batches for the MI estimate".into()));
    }
    if batches.len() < 4 {
        log::warn!("MI estimate from only {} batches", batches.len());
    }
    let mut total = 0.0;
    for (posteriors, noise) in batches {
        if posteriors.len() < MIN_MI_BATCH {
            return Err(Error::Domain(format!(
                "MI batch of {} is below the minimum of {MIN_MI_BATCH}",
                posteriors.len()
            )));
        }
        total += mi_batch_terms(posteriors, noise)?;
    }
    Ok((total / batches.len() as f64).max(0.0))
}

/// One-dimensional Gaussian.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normal1 {
    pub mean: f64,
    pub std: f64,
}

impl Normal1 {
    pub fn kl(&self, p: &Normal1) -> Result<f64> {
        if !(self.std > 0.0 && p.std > 0.0) {
            return Err(Error::Domain("standard deviations must be positive".into()));
        }
        let dm = self.mean - p.mean;
        Ok((p.std / self.std).ln() + (self.std * self.std + dm * dm) / (2.0 * p.std * p.std) - 0.5)
    }
}

/// Sum of per-dimension KLs between two factorized Gaussian densities.
pub fn kl_factorized(q: &[Normal1], p: &[Normal1]) -> Result<f64> {
    if q.len() != p.len() {
        return Err(Error::Domain(format!("{} vs {} dimensions", q.len(), p.len())));
    }
    q.iter().zip(p).map(|(a, b)| a.kl(b)).sum()
}

/// MI estimates over training time with the plateau test parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiHistory {
    pub entries: Vec<(u64, f64)>,
    pub window: usize,
    pub epsilon: f64,
}

impl Default for MiHistory {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW, DEFAULT_EPSILON).expect("valid defaults")
    }
}

impl MiHistory {
    pub fn new(window: usize, epsilon: f64) -> Result<Self> {
        if window < 2 {
            return Err(Error::Config(format!("MI window must be at least 2, got {window}")));
        }
        Ok(Self { entries: Vec::new(), window, epsilon })
    }

    pub fn push(&mut self, step: u64, mi: f64) -> Result<()> {
        if let Some((last, _)) = self.entries.last() {
            if step <= *last {
                return Err(Error::Domain(format!("MI step {step} does not follow {last}")));
            }
        }
        self.entries.push((step, mi));
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.1).collect()
    }

    pub fn converged(&self) -> bool {
        mi_converged(&self.values(), self.window, self.epsilon)
    }
}

/// True when the best estimate in the last `window` entries improves on the
/// best earlier estimate by at most `epsilon`. With nothing before the window
/// the window's first entry is the reference.
pub fn mi_converged(history: &[f64], window: usize, epsilon: f64) -> bool {
    let n = history.len();
    if window == 0 || n < window {
        return false;
    }
    let (before, recent) = history.split_at(n - window);
    let recent_max = recent.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let reference = if before.is_empty() {
        recent[0]
    } else {
        before.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    };
    recent_max - reference <= epsilon
}

/// Number and fraction of latent dimensions whose posterior mean varies across
/// inputs by more than [`ACTIVE_UNIT_THRESHOLD`].
pub fn active_units<T: Real>(means: &Array2<T>) -> (usize, f64) {
    let d = means.ncols();
    if means.nrows() == 0 || d == 0 {
        return (0, 0.0);
    }
    let m = means.mapv(|v| v.f64());
    let var = m.var_axis(Axis(0), 0.0);
    let active = var.iter().filter(|v| **v > ACTIVE_UNIT_THRESHOLD).count();
    (active, active as f64 / d as f64)
}

pub fn is_collapsed(kl: f64, active_fraction: f64) -> bool {
    kl < COLLAPSE_KL && active_fraction < COLLAPSE_ACTIVE_FRACTION
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseRecord {
    pub step: u64,
    pub kl: f64,
    pub mi: f64,
    pub active_fraction: f64,
    pub collapsed: bool,
}

impl CollapseRecord {
    pub fn new(step: u64, kl: f64, mi: f64, active_fraction: f64) -> Self {
        Self { step, kl, mi, active_fraction, collapsed: is_collapsed(kl, active_fraction) }
    }
}

/// Line-delimited collapse trajectory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub records: Vec<CollapseRecord>,
}

impl CollapseReport {
    pub fn push(&mut self, record: CollapseRecord) {
        self.records.push(record);
    }

    pub fn last(&self) -> Option<&CollapseRecord> {
        self.records.last()
    }

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
}

/// Collapse record from a set of posteriors and an MI estimate.
pub fn collapse_record<T: Real>(step: u64, posteriors: &[DiagonalGaussian<T>], mi: f64) -> CollapseRecord {
    let n = posteriors.len().max(1) as f64;
    let kl = posteriors.iter().map(|q| q.kl_to_standard().f64()).sum::<f64>() / n;
    let d = posteriors.first().map(|q| q.dim()).unwrap_or(0);
    let mut means = Array2::<T>::zeros((posteriors.len(), d));
    for (i, q) in posteriors.iter().enumerate() {
        means.row_mut(i).assign(&q.mean);
    }
    let (_, frac) = active_units(&means);
    CollapseRecord::new(step, kl, mi, frac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn converged_examples() {
        assert!(!mi_converged(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6], 5, 0.05));
        assert!(mi_converged(&[1.0; 5], 5, 0.05));
        assert!(!mi_converged(&[1.0; 4], 5, 0.05));
    }

    #[test]
    fn plateau_fixture_fires_at_first_full_window() {
        // rise 0.0, 0.5, 1.0 then a flat run at 1.0
        let seq = [0.0, 0.5, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let flags: Vec<bool> = (1..=seq.len()).map(|n| mi_converged(&seq[..n], 5, 0.01)).collect();
        // n=5: window [0,.5,1,1,1] vs first entry 0 -> 1.0 > eps
        // n=6: window [.5,1,1,1,1] vs max{0} -> 1.0
        // n=7: window [1,1,1,1,1] vs max{0,.5} -> 0.5
        // n=8: window [1,1,1,1,1] vs max{0,.5,1} -> 0
        assert_eq!(flags, [false, false, false, false, false, false, false, true]);
    }

    #[test]
    fn history_requires_increasing_steps() {
        let mut h = MiHistory::default();
        h.push(1, 0.2).unwrap();
        assert!(h.push(1, 0.3).is_err());
        assert!(MiHistory::new(1, 0.1).is_err());
    }

    #[test]
    fn factorized_kl_examples() {
        let std = Normal1 { mean: 0.0, std: 1.0 };
        assert_eq!(kl_factorized(&[std, std], &[std, std]).unwrap(), 0.0);
        let q = Normal1 { mean: 1.0, std: 1.0 };
        assert!((kl_factorized(&[q, q], &[std, std]).unwrap() - 1.0).abs() < 1e-15);
        assert!(kl_factorized(&[q], &[std, std]).is_err());
    }

    #[test]
    fn prior_posteriors_give_zero_mi() {
        let qs = vec![DiagonalGaussian::<f64>::standard(3); 32];
        let noise = Array2::from_shape_fn((32, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0);
        let mi = estimate_mi(&[(qs, noise)]).unwrap();
        assert!(mi.abs() < 1e-12);
    }

    #[test]
    fn small_mi_batch_is_domain_error() {
        let qs = vec![DiagonalGaussian::<f64>::standard(2); 8];
        assert!(matches!(estimate_mi(&[(qs, Array2::zeros((8, 2)))]), Err(Error::Domain(_))));
    }

    #[test]
    fn collapse_flags() {
        let zero = vec![DiagonalGaussian::<f64>::standard(4); 10];
        let r = collapse_record(0, &zero, 0.0);
        assert_eq!(r.kl, 0.0);
        assert!(r.collapsed);
        let qs: Vec<_> = (0..10)
            .map(|i| {
                let label = i % 2;
                let mut m = array![0.0, 0.0, 0.0, 0.0];
                m[label] = 5.0;
                DiagonalGaussian::new(m, array![1.0, 1.0, 1.0, 1.0]).unwrap()
            })
            .collect();
        let r = collapse_record(1, &qs, 0.5);
        assert!(r.active_fraction >= 0.25);
        assert!(!r.collapsed);
    }

    #[test]
    fn report_round_trips() {
        let mut rep = CollapseReport::default();
        rep.push(CollapseRecord::new(1, 0.05, 0.01, 0.0));
        rep.push(CollapseRecord::new(2, 2.0, 1.1, 0.5));
        assert_eq!(CollapseReport::from_jsonl(&rep.to_jsonl()).unwrap(), rep);
    }
}

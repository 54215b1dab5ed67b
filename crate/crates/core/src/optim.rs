//! First-order optimizers with global-norm gradient clipping.

use std::collections::HashMap;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::tensor::{Gradients, ParamId, ParamStore, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug)]
struct AdamState<T> {
    m: Array2<T>,
    v: Array2<T>,
    t: i32,
}

/// Plain SGD or Adam; state is kept per parameter so that steps restricted to
/// a subset of parameters leave the others untouched.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    beta1: f64,
    beta2: f64,
    eps: f64,
    state: HashMap<ParamId, AdamState<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64, clip_norm: Option<f64>) -> Self {
        Self { kind, lr, clip_norm, beta1: 0.9, beta2: 0.999, eps: 1e-8, state: HashMap::new() }
    }

    /// Applies one descent step to `ids` only. Returns the pre-clip gradient norm.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>, ids: &[ParamId]) -> f64 {
        let ids: Vec<ParamId> = ids
            .iter()
            .copied()
            .filter(|id| store.entry(*id).trainable && grads.get(*id).is_some())
            .collect();
        let norm = grads.global_norm(&ids).f64();
        let clip = match self.clip_norm {
            Some(max) if norm > max && norm > 0.0 => max / norm,
            _ => 1.0,
        };
        let clip_t = T::c(clip);
        for id in ids {
            let grad = grads.get(id).expect("filtered");
            match self.kind {
                OptimizerKind::Sgd => {
                    let lr = T::c(self.lr) * clip_t;
                    let p = store.get_mut(id);
                    Zip::from(p).and(grad).for_each(|p, g| *p = *p - lr * *g);
                }
                OptimizerKind::Adam => {
                    let st = self.state.entry(id).or_insert_with(|| AdamState {
                        m: Array2::zeros(grad.dim()),
                        v: Array2::zeros(grad.dim()),
                        t: 0,
                    });
                    st.t += 1;
                    let (b1, b2) = (T::c(self.beta1), T::c(self.beta2));
                    let bc1 = T::one() - b1.powi(st.t);
                    let bc2 = T::one() - b2.powi(st.t);
                    let lr = T::c(self.lr);
                    let eps = T::c(self.eps);
                    let p = store.get_mut(id);
                    Zip::from(p).and(&mut st.m).and(&mut st.v).and(grad).for_each(|p, m, v, g| {
                        let g = *g * clip_t;
                        *m = b1 * *m + (T::one() - b1) * g;
                        *v = b2 * *v + (T::one() - b2) * g * g;
                        let mh = *m / bc1;
                        let vh = *v / bc2;
                        *p = *p - lr * mh / (vh.sqrt() + eps);
                    });
                }
            }
        }
        norm
    }
}

//! Affine coupling stack mapping the sentence latent z_s to the feature latent
//! z_f and back.
//!
//! Sign convention: `logdet` is always the log-determinant of the forward map
//! z_s -> z_f, so the density of z_s induced by a standard-normal prior on z_f
//! is `log N(z_f; 0, I) + logdet`.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};
use crate::sentence_vae::standard_log_density_rows;
use crate::tensor::{Graph, ParamGroup, ParamId, ParamStore, Real, Var};

pub const LOG_SCALE_BOUND: f64 = 8.0;
const MIN_SCALE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlowConfig {
    pub dim: usize,
    pub split: usize,
    pub layers: usize,
    pub hidden: usize,
    /// Odd layers condition on the upper block and transform the lower one.
    pub alternating: bool,
}

impl FlowConfig {
    /// Split at ceil(d / 2).
    pub fn new(dim: usize, layers: usize, hidden: usize) -> Self {
        Self { dim, split: dim.div_ceil(2), layers, hidden, alternating: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.split == 0 || self.split >= self.dim {
            return Err(Error::Config(format!("split index {} must satisfy 1 <= k < d = {}", self.split, self.dim)));
        }
        if self.layers == 0 {
            return Err(Error::Config("flow needs at least one coupling layer".into()));
        }
        if self.hidden == 0 {
            return Err(Error::Config("conditioner hidden width must be positive".into()));
        }
        Ok(())
    }
}

/// One coupling: copies the conditioning block and shifts/scales the rest.
#[derive(Clone, Debug)]
pub struct CouplingLayer {
    pub psi: Mlp,
    pub index: usize,
    pub dim: usize,
    pub split: usize,
    pub swapped: bool,
}

impl CouplingLayer {
    fn blocks(&self) -> ((usize, usize), (usize, usize)) {
        let lower = (0, self.split);
        let upper = (self.split, self.dim);
        if self.swapped {
            (upper, lower)
        } else {
            (lower, upper)
        }
    }

    /// Returns `(mu, log_sigma)` for the transformed block.
    fn conditioner<T: Real>(&self, g: &mut Graph<'_, T>, cond: Var) -> Result<(Var, Var)> {
        let out = self.psi.forward(g, cond);
        let m = self.psi.out_dim() / 2;
        let mu = g.slice_cols(out, 0, m);
        let raw = g.slice_cols(out, m, 2 * m);
        let bound = T::c(LOG_SCALE_BOUND);
        let log_sigma = g.clamp(raw, -bound, bound);
        for (i, row) in g.value(log_sigma).rows().into_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { context: format!("scale of coupling layer {}", self.index), index: i });
            }
        }
        Ok((mu, log_sigma))
    }

    fn assemble<T: Real>(&self, g: &mut Graph<'_, T>, kept: Var, moved: Var) -> Var {
        if self.swapped {
            g.concat_cols(&[moved, kept])
        } else {
            g.concat_cols(&[kept, moved])
        }
    }

    /// Forward on the tape; returns the output and per-row logdet (B x 1).
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, z: Var) -> Result<(Var, Var)> {
        let ((c0, c1), (t0, t1)) = self.blocks();
        let cond = g.slice_cols(z, c0, c1);
        let x = g.slice_cols(z, t0, t1);
        let (mu, log_sigma) = self.conditioner(g, cond)?;
        let sigma = g.exp(log_sigma);
        let scaled = g.mul(x, sigma);
        let y = g.add(scaled, mu);
        let logdet = g.sum_cols(log_sigma);
        Ok((self.assemble(g, cond, y), logdet))
    }

    pub fn inverse<T: Real>(&self, g: &mut Graph<'_, T>, z: Var) -> Result<Var> {
        let ((c0, c1), (t0, t1)) = self.blocks();
        let cond = g.slice_cols(z, c0, c1);
        let y = g.slice_cols(z, t0, t1);
        let (mu, log_sigma) = self.conditioner(g, cond)?;
        let min_scale = g
            .value(log_sigma)
            .iter()
            .map(|v| v.f64().exp())
            .fold(f64::INFINITY, f64::min);
        if min_scale < MIN_SCALE {
            return Err(Error::SingularLayer { layer: self.index, scale: min_scale });
        }
        let shifted = g.sub(y, mu);
        let neg = g.neg(log_sigma);
        let inv = g.exp(neg);
        let x = g.mul(shifted, inv);
        Ok(self.assemble(g, cond, x))
    }
}

/// T coupling layers sharing dimension and split.
#[derive(Clone, Debug)]
pub struct CouplingFlowStack {
    pub layers: Vec<CouplingLayer>,
    pub config: FlowConfig,
}

impl CouplingFlowStack {
    /// Conditioners are 3-layer tanh networks whose output layer starts at
    /// zero, so a fresh stack is the identity map.
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, config: FlowConfig) -> Result<Self> {
        config.validate()?;
        let layers = (0..config.layers)
            .map(|t| {
                let swapped = config.alternating && t % 2 == 1;
                let (cond, moved) = if swapped {
                    (config.dim - config.split, config.split)
                } else {
                    (config.split, config.dim - config.split)
                };
                let sizes = [cond, config.hidden, config.hidden, 2 * moved];
                let psi = Mlp::new(store, rng, &format!("flow.{t}"), ParamGroup::Flow, &sizes, Activation::Tanh, true);
                CouplingLayer { psi, index: t, dim: config.dim, split: config.split, swapped }
            })
            .collect();
        Ok(Self { layers, config })
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    /// z_s -> (z_f, per-row forward logdet).
    pub fn forward_graph<T: Real>(&self, g: &mut Graph<'_, T>, z: Var) -> Result<(Var, Var)> {
        self.check_dim(g.shape(z).1)?;
        let mut h = z;
        let mut total: Option<Var> = None;
        for layer in &self.layers {
            let (next, ld) = layer.forward(g, h)?;
            h = next;
            total = Some(match total {
                Some(t) => g.add(t, ld),
                None => ld,
            });
        }
        Ok((h, total.expect("at least one layer")))
    }

    /// z_f -> z_s, layers applied in reverse order.
    pub fn inverse_graph<T: Real>(&self, g: &mut Graph<'_, T>, z: Var) -> Result<Var> {
        self.check_dim(g.shape(z).1)?;
        let mut h = z;
        for layer in self.layers.iter().rev() {
            h = layer.inverse(g, h)?;
        }
        Ok(h)
    }

    /// Per-row log density of z_s under the pushed-back standard normal, with
    /// the intermediate z_f and logdet.
    pub fn log_density_graph<T: Real>(&self, g: &mut Graph<'_, T>, z: Var) -> Result<(Var, Var, Var)> {
        let (zf, logdet) = self.forward_graph(g, z)?;
        let base = standard_log_density_rows(g, zf);
        let density = g.add(base, logdet);
        Ok((density, zf, logdet))
    }

    pub fn forward<T: Real>(&self, store: &ParamStore<T>, z: &Array2<T>) -> Result<(Array2<T>, Array1<T>)> {
        check_input(z, "flow input")?;
        let mut g = Graph::new(store);
        let zv = g.constant(z.clone());
        let (zf, ld) = self.forward_graph(&mut g, zv)?;
        Ok((g.value(zf).clone(), g.value(ld).column(0).to_owned()))
    }

    pub fn inverse<T: Real>(&self, store: &ParamStore<T>, z: &Array2<T>) -> Result<Array2<T>> {
        check_input(z, "flow inverse input")?;
        let mut g = Graph::new(store);
        let zv = g.constant(z.clone());
        let zs = self.inverse_graph(&mut g, zv)?;
        Ok(g.value(zs).clone())
    }

    pub fn flow_log_density<T: Real>(&self, store: &ParamStore<T>, z: &Array2<T>) -> Result<Array1<T>> {
        check_input(z, "flow input")?;
        let mut g = Graph::new(store);
        let zv = g.constant(z.clone());
        let (d, _, _) = self.log_density_graph(&mut g, zv)?;
        Ok(g.value(d).column(0).to_owned())
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| l.psi.params()).collect()
    }

    fn check_dim(&self, cols: usize) -> Result<()> {
        if cols != self.config.dim {
            return Err(Error::Domain(format!("flow expects dimension {}, got {cols}", self.config.dim)));
        }
        Ok(())
    }
}

fn check_input<T: Real>(z: &Array2<T>, context: &str) -> Result<()> {
    for (i, row) in z.rows().into_iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: context.into(), index: i });
        }
    }
    Ok(())
}

/// Randomizes every conditioner parameter uniformly in `[-scale, scale]`.
pub fn randomize<T: Real>(store: &mut ParamStore<T>, flow: &CouplingFlowStack, rng: &mut ChaCha8Rng, scale: f64) {
    for id in flow.params() {
        let (r, c) = store.get(id).dim();
        *store.get_mut(id) = crate::nn::uniform(rng, r, c, scale);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    fn stack(dim: usize, layers: usize) -> (ParamStore<f64>, CouplingFlowStack) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let flow = CouplingFlowStack::new(&mut store, &mut rng, FlowConfig::new(dim, layers, 6)).unwrap();
        (store, flow)
    }

    /// Makes a single-layer d=2 stack output constant (mu, log_sigma).
    fn constant_coupling(mu: f64, log_sigma: f64) -> (ParamStore<f64>, CouplingFlowStack) {
        let (mut store, flow) = stack(2, 1);
        let last = flow.layers[0].psi.layers.last().unwrap().clone();
        store.get_mut(last.weight).fill(0.0);
        *store.get_mut(last.bias) = array![[mu, log_sigma]];
        (store, flow)
    }

    #[test]
    fn fresh_stack_is_identity() {
        let (store, flow) = stack(4, 3);
        let z = array![[0.3, -1.0, 2.0, 0.1], [5.0, 0.0, -0.2, 1.0]];
        let (zf, ld) = flow.forward(&store, &z).unwrap();
        assert_eq!(zf, z);
        assert!(ld.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_coupling_forward_and_inverse() {
        let (store, flow) = constant_coupling(1.0, 2f64.ln());
        let (zf, ld) = flow.forward(&store, &array![[0.7, 3.0]]).unwrap();
        assert!((zf[[0, 0]] - 0.7).abs() < 1e-15);
        assert!((zf[[0, 1]] - 7.0).abs() < 1e-12);
        assert!((ld[0] - 2f64.ln()).abs() < 1e-15);
        let zs = flow.inverse(&store, &array![[0.7, 5.0]]).unwrap();
        assert!((zs[[0, 1]] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn pure_scaling_density_adds_log_two() {
        let (store, flow) = constant_coupling(0.0, 2f64.ln());
        let d = flow.flow_log_density(&store, &array![[0.0, 0.0]]).unwrap()[0];
        let std0 = -0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((d - (2.0 * std0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn identity_density_is_standard_normal() {
        let (store, flow) = stack(3, 3);
        let z = array![[0.5, -1.5, 2.0]];
        let d = flow.flow_log_density(&store, &z).unwrap()[0];
        let expected: f64 = z.iter().map(|v| -0.5 * v * v - 0.5 * (2.0 * std::f64::consts::PI).ln()).sum();
        assert!((d - expected).abs() < 1e-12);
    }

    #[test]
    fn invalid_split_is_rejected() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut cfg = FlowConfig::new(4, 3, 8);
        cfg.split = 4;
        assert!(CouplingFlowStack::new(&mut store, &mut rng, cfg).is_err());
        cfg.split = 0;
        assert!(CouplingFlowStack::new(&mut store, &mut rng, cfg).is_err());
    }

    #[test]
    fn non_finite_input_is_reported() {
        let (store, flow) = stack(2, 1);
        assert!(matches!(flow.forward(&store, &array![[f64::NAN, 0.0]]), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn alternating_mode_round_trips() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut cfg = FlowConfig::new(5, 4, 7);
        cfg.alternating = true;
        let flow = CouplingFlowStack::new(&mut store, &mut rng, cfg).unwrap();
        randomize(&mut store, &flow, &mut rng, 0.6);
        let z = array![[0.1, -0.4, 1.2, 0.8, -2.0]];
        let (zf, _) = flow.forward(&store, &z).unwrap();
        assert!(zf.iter().zip(&z).any(|(a, b)| (a - b).abs() > 1e-6));
        let back = flow.inverse(&store, &zf).unwrap();
        assert!(back.iter().zip(&z).all(|(a, b)| (a - b).abs() < 1e-10));
    }
}

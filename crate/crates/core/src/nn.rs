//! Parameterized building blocks: affine layers, small MLPs and a GRU cell.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Graph, ParamGroup, ParamId, ParamStore, Real, Var};

/// Glorot-uniform matrix.
pub fn glorot<T: Real>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Array2<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| T::c(rng.random_range(-limit..limit)))
}

pub fn uniform<T: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, limit: f64) -> Array2<T> {
    Array2::from_shape_fn((rows, cols), |_| T::c(rng.random_range(-limit..limit)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Identity,
}

/// `y = x W + b` with `W: in x out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        group: ParamGroup,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), group, glorot(rng, in_dim, out_dim));
        let bias = store.add(format!("{name}.bias"), group, Array2::zeros((1, out_dim)));
        Self { weight, bias, in_dim, out_dim }
    }

    /// Same shape, both weight and bias start at zero.
    pub fn zeros<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        group: ParamGroup,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), group, Array2::zeros((in_dim, out_dim)));
        let bias = store.add(format!("{name}.bias"), group, Array2::zeros((1, out_dim)));
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

/// Feed-forward stack; `hidden_activation` between layers, identity at the end.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden_activation: Activation,
}

impl Mlp {
    /// `sizes` lists every width including input and output. The last layer is
    /// zero-initialized when `zero_last` is set.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        group: ParamGroup,
        sizes: &[usize],
        hidden_activation: Activation,
        zero_last: bool,
    ) -> Self {
        assert!(sizes.len() >= 2);
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let lname = format!("{name}.{i}");
                if zero_last && i == n - 1 {
                    Linear::zeros(store, &lname, group, sizes[i], sizes[i + 1])
                } else {
                    Linear::new(store, rng, &lname, group, sizes[i], sizes[i + 1])
                }
            })
            .collect();
        Self { layers, hidden_activation }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h);
            if i < last && self.hidden_activation == Activation::Tanh {
                h = g.tanh(h);
            }
        }
        h
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }
}

/// Gated recurrent unit with fused gate matrices (reset, update, candidate).
#[derive(Clone, Debug)]
pub struct GruCell {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b_x: ParamId,
    pub b_h: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        group: ParamGroup,
        input_dim: usize,
        hidden: usize,
    ) -> Self {
        let limit = 1.0 / (hidden as f64).sqrt();
        let w_x = store.add(format!("{name}.w_x"), group, uniform(rng, input_dim, 3 * hidden, limit));
        let w_h = store.add(format!("{name}.w_h"), group, uniform(rng, hidden, 3 * hidden, limit));
        let b_x = store.add(format!("{name}.b_x"), group, Array2::zeros((1, 3 * hidden)));
        let b_h = store.add(format!("{name}.b_h"), group, Array2::zeros((1, 3 * hidden)));
        Self { w_x, w_h, b_x, b_h, input_dim, hidden }
    }

    /// Input projection `x W_x + b_x`; may be computed for many steps at once.
    pub fn project_input<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let w = g.param(self.w_x);
        let b = g.param(self.b_x);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }

    /// One step given the precomputed input projection.
    pub fn step<T: Real>(&self, g: &mut Graph<'_, T>, x_proj: Var, h: Var) -> Var {
        let hd = self.hidden;
        let w = g.param(self.w_h);
        let b = g.param(self.b_h);
        let hp = g.matmul(h, w);
        let hp = g.add_row(hp, b);
        let xr = g.slice_cols(x_proj, 0, hd);
        let xz = g.slice_cols(x_proj, hd, 2 * hd);
        let xn = g.slice_cols(x_proj, 2 * hd, 3 * hd);
        let hr = g.slice_cols(hp, 0, hd);
        let hz = g.slice_cols(hp, hd, 2 * hd);
        let hn = g.slice_cols(hp, 2 * hd, 3 * hd);
        let r = g.add(xr, hr);
        let r = g.sigmoid(r);
        let z = g.add(xz, hz);
        let z = g.sigmoid(z);
        let rn = g.mul(r, hn);
        let n = g.add(xn, rn);
        let n = g.tanh(n);
        // h' = n + z * (h - n)
        let diff = g.sub(h, n);
        let zd = g.mul(z, diff);
        g.add(n, zd)
    }

    pub fn params(&self) -> [ParamId; 4] {
        [self.w_x, self.w_h, self.b_x, self.b_h]
    }
}

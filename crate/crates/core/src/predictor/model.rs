use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::TokenGrid;

/// Which next-frame function a [`PredictorModel`] implements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorVariant {
    /// Predicts the next frame to equal the current one.
    LastFrame,
    /// Affine map `W x + b` applied per token.
    Linear,
    /// `W2 gelu(W1 x + b1) + b2` applied per token.
    TwoLayer,
}

impl std::fmt::Display for PredictorVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PredictorVariant::LastFrame => "last_frame",
            PredictorVariant::Linear => "linear",
            PredictorVariant::TwoLayer => "two_layer",
        })
    }
}

/// Affine head. `weight` is input-major: entry `(i, o)` lives at `i * dim + o`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearHead {
    pub(crate) dim: usize,
    pub(crate) weight: Vec<f64>,
    pub(crate) bias: Vec<f64>,
}

/// Two-layer perceptron head with exact (erf) GELU between the layers.
/// Both weight matrices are input-major like [`LinearHead`].
#[derive(Clone, Debug, PartialEq)]
pub struct MlpHead {
    pub(crate) dim: usize,
    pub(crate) hidden: usize,
    pub(crate) w1: Vec<f64>,
    pub(crate) b1: Vec<f64>,
    pub(crate) w2: Vec<f64>,
    pub(crate) b2: Vec<f64>,
}

/// Next-latent-frame predictor applied position-wise to every token.
#[derive(Clone, Debug, PartialEq)]
pub enum PredictorModel {
    LastFrame { dim: usize },
    Linear(LinearHead),
    TwoLayer(MlpHead),
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * INV_SQRT_2))
}

#[inline]
pub(crate) fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * INV_SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Scratch buffers for one token's forward/backward pass.
#[derive(Default)]
pub(crate) struct Scratch {
    pub x: Vec<f64>,
    pub pre: Vec<f64>,
    pub act: Vec<f64>,
    pub out: Vec<f64>,
    pub g_hidden: Vec<f64>,
}

impl PredictorModel {
    pub fn last_frame(dim: usize) -> Self {
        PredictorModel::LastFrame { dim }
    }

    /// Identity weights, zero bias.
    pub fn linear_identity(dim: usize) -> Self {
        let mut weight = vec![0.0; dim * dim];
        for i in 0..dim {
            weight[i * dim + i] = 1.0;
        }
        PredictorModel::Linear(LinearHead {
            dim,
            weight,
            bias: vec![0.0; dim],
        })
    }

    /// Glorot-uniform weights and zero biases, drawn from `seed`.
    pub fn linear(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (6.0 / (2 * dim) as f64).sqrt();
        PredictorModel::Linear(LinearHead {
            dim,
            weight: uniform(&mut rng, dim * dim, bound),
            bias: vec![0.0; dim],
        })
    }

    /// Glorot-uniform weights and zero biases, drawn from `seed`.
    pub fn two_layer(dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (6.0 / (dim + hidden) as f64).sqrt();
        PredictorModel::TwoLayer(MlpHead {
            dim,
            hidden,
            w1: uniform(&mut rng, dim * hidden, bound),
            b1: vec![0.0; hidden],
            w2: uniform(&mut rng, hidden * dim, bound),
            b2: vec![0.0; dim],
        })
    }

    /// Builds a freshly initialised model. `hidden` is only used by the two-layer head.
    pub fn init(variant: PredictorVariant, dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        if dim == 0 || (variant == PredictorVariant::TwoLayer && hidden == 0) {
            return Err(Error::InvalidConfig("predictor dimensions must be positive".into()));
        }
        Ok(match variant {
            PredictorVariant::LastFrame => Self::last_frame(dim),
            PredictorVariant::Linear => Self::linear(dim, seed),
            PredictorVariant::TwoLayer => Self::two_layer(dim, hidden, seed),
        })
    }

    /// Randomises every parameter (biases included) uniformly in `[-scale, scale]`.
    pub fn randomize(&mut self, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.param_count();
        let p = uniform(&mut rng, n, scale);
        self.set_params(&p).expect("length matches");
    }

    pub fn variant(&self) -> PredictorVariant {
        match self {
            PredictorModel::LastFrame { .. } => PredictorVariant::LastFrame,
            PredictorModel::Linear(_) => PredictorVariant::Linear,
            PredictorModel::TwoLayer(_) => PredictorVariant::TwoLayer,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            PredictorModel::LastFrame { dim } => *dim,
            PredictorModel::Linear(h) => h.dim,
            PredictorModel::TwoLayer(h) => h.dim,
        }
    }

    /// Hidden width of the two-layer head, 0 otherwise.
    pub fn hidden(&self) -> usize {
        match self {
            PredictorModel::TwoLayer(h) => h.hidden,
            _ => 0,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            PredictorModel::LastFrame { .. } => 0,
            PredictorModel::Linear(h) => h.weight.len() + h.bias.len(),
            PredictorModel::TwoLayer(h) => h.w1.len() + h.b1.len() + h.w2.len() + h.b2.len(),
        }
    }

    fn blocks(&self) -> Vec<&[f64]> {
        match self {
            PredictorModel::LastFrame { .. } => vec![],
            PredictorModel::Linear(h) => vec![&h.weight, &h.bias],
            PredictorModel::TwoLayer(h) => vec![&h.w1, &h.b1, &h.w2, &h.b2],
        }
    }

    fn blocks_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            PredictorModel::LastFrame { .. } => vec![],
            PredictorModel::Linear(h) => vec![&mut h.weight, &mut h.bias],
            PredictorModel::TwoLayer(h) => vec![&mut h.w1, &mut h.b1, &mut h.w2, &mut h.b2],
        }
    }

    /// Flat parameter vector. Layout: linear `[weight, bias]`, two-layer `[w1, b1, w2, b2]`.
    pub fn params(&self) -> Vec<f64> {
        self.blocks().concat()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                actual: params.len(),
            });
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let mut offset = 0;
        for block in self.blocks_mut() {
            let n = block.len();
            block.copy_from_slice(&params[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// `params -= step * grad`, with `grad` in [`params`](Self::params) layout.
    pub(crate) fn descend(&mut self, grad: &[f64], step: f64) {
        let mut offset = 0;
        for block in self.blocks_mut() {
            for (p, g) in block.iter_mut().zip(&grad[offset..]) {
                *p -= step * g;
            }
            offset += block.len();
        }
    }

    pub(crate) fn scratch(&self) -> Scratch {
        let (d, h) = (self.dim(), self.hidden());
        Scratch {
            x: vec![0.0; d],
            pre: vec![0.0; h],
            act: vec![0.0; h],
            out: vec![0.0; d],
            g_hidden: vec![0.0; h],
        }
    }

    /// Forward pass for one token; the prediction is left in `s.out`.
    pub(crate) fn forward_token(&self, token: &[f32], s: &mut Scratch) {
        for (x, &t) in s.x.iter_mut().zip(token) {
            *x = t as f64;
        }
        match self {
            PredictorModel::LastFrame { .. } => s.out.copy_from_slice(&s.x),
            PredictorModel::Linear(h) => affine(&h.weight, &h.bias, &s.x, &mut s.out),
            PredictorModel::TwoLayer(h) => {
                affine(&h.w1, &h.b1, &s.x, &mut s.pre);
                for (a, &z) in s.act.iter_mut().zip(&s.pre) {
                    *a = gelu(z);
                }
                affine(&h.w2, &h.b2, &s.act, &mut s.out);
            }
        }
    }

    /// Accumulates parameter gradients for one token given `d loss / d prediction`.
    /// Must follow `forward_token` on the same scratch.
    pub(crate) fn backward_token(&self, g_out: &[f64], s: &mut Scratch, grad: &mut [f64]) {
        match self {
            PredictorModel::LastFrame { .. } => {}
            PredictorModel::Linear(h) => {
                let (gw, gb) = grad.split_at_mut(h.weight.len());
                outer_acc(&s.x, g_out, gw);
                add_acc(g_out, gb);
            }
            PredictorModel::TwoLayer(h) => {
                let (gw1, rest) = grad.split_at_mut(h.w1.len());
                let (gb1, rest) = rest.split_at_mut(h.b1.len());
                let (gw2, gb2) = rest.split_at_mut(h.w2.len());
                outer_acc(&s.act, g_out, gw2);
                add_acc(g_out, gb2);
                for (j, gh) in s.g_hidden.iter_mut().enumerate() {
                    let row = &h.w2[j * h.dim..(j + 1) * h.dim];
                    let back: f64 = row.iter().zip(g_out).map(|(w, g)| w * g).sum();
                    *gh = back * gelu_grad(s.pre[j]);
                }
                outer_acc(&s.x, &s.g_hidden, gw1);
                add_acc(&s.g_hidden, gb1);
            }
        }
    }

    /// Applies the model to every token of `current`.
    pub fn predict_next(&self, current: &TokenGrid) -> Result<TokenGrid> {
        if current.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: current.dim(),
            });
        }
        if let PredictorModel::LastFrame { .. } = self {
            return Ok(current.clone());
        }
        let mut s = self.scratch();
        let mut data = Vec::with_capacity(current.as_flat().len());
        for t in current.tokens() {
            self.forward_token(t, &mut s);
            data.extend(s.out.iter().map(|&v| v as f32));
        }
        TokenGrid::new(current.dim(), data)
    }
}

/// `out = b + x W` with input-major `w`.
#[inline]
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    out.copy_from_slice(b);
    let n = out.len();
    for (i, &xi) in x.iter().enumerate() {
        let row = &w[i * n..(i + 1) * n];
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += wij * xi;
        }
    }
}

#[inline]
fn outer_acc(x: &[f64], g: &[f64], gw: &mut [f64]) {
    let n = g.len();
    for (i, &xi) in x.iter().enumerate() {
        for (acc, &gj) in gw[i * n..(i + 1) * n].iter_mut().zip(g) {
            *acc += xi * gj;
        }
    }
}

#[inline]
fn add_acc(g: &[f64], acc: &mut [f64]) {
    for (a, &v) in acc.iter_mut().zip(g) {
        *a += v;
    }
}

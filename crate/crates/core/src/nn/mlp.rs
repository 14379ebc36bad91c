//! Dense multilayer perceptron with a hand-written reverse pass.
//!
//! Each layer computes `activation(x Wᵀ + b)` on a row-major batch `x`.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
            Activation::Sigmoid => sigmoid(v),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
            Activation::Identity => 1.0,
            Activation::Sigmoid => out * (1.0 - out),
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
            Activation::Sigmoid => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Identity),
            3 => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// Shape `[out × in]`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::Shape(format!(
                "bias length {} does not match weight rows {}",
                bias.len(),
                weight.rows()
            )));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

/// Per-layer gradients, shape-congruent with the [`MlpParams`] they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

/// Everything the reverse pass needs from a forward call.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `acts[0]` is the input batch, `acts[l + 1]` is layer `l`'s output.
    acts: Vec<Matrix>,
    fingerprint: u64,
}

impl ForwardCache {
    pub fn input(&self) -> &Matrix {
        &self.acts[0]
    }

    pub fn output(&self) -> &Matrix {
        self.acts.last().expect("cache always holds the input")
    }
}

pub struct Backward {
    pub grads: Gradients,
    /// Gradient with respect to the forward input batch.
    pub input_grad: Matrix,
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("an MLP needs at least one layer".into()));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer {l} outputs {} values but layer {} expects {}",
                    pair[0].out_dim(),
                    l + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-uniform weights, zero biases. `dims` has one more entry than `activations`.
    pub fn init<R: Rng + ?Sized>(
        dims: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() != activations.len() + 1 || activations.is_empty() {
            return Err(Error::Shape(format!(
                "{} layer sizes need {} activations, got {}",
                dims.len(),
                dims.len().saturating_sub(1),
                activations.len()
            )));
        }
        if dims.contains(&0) {
            return Err(Error::Shape("layer sizes must be positive".into()));
        }
        let mut layers = Vec::with_capacity(activations.len());
        for (w, &act) in dims.windows(2).zip(activations) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
            let data = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
            layers.push(Layer::new(
                Matrix::from_vec(fan_out, fan_in, data)?,
                vec![0.0; fan_out],
                act,
            )?);
        }
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.rows() * l.weight.cols() + l.bias.len())
            .sum()
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.weight.shape() == b.weight.shape() && a.activation == b.activation
            })
    }

    /// Parameter tensors in a fixed order: weight then bias, layer by layer.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "flat vector has {} values, network has {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for l in &self.layers {
            h = (h ^ l.weight.rows() as u64).wrapping_mul(0x100_0000_01b3);
            h = (h ^ l.weight.cols() as u64).wrapping_mul(0x100_0000_01b3);
            for v in l.weight.as_slice().iter().chain(&l.bias) {
                h = (h ^ v.to_bits()).wrapping_mul(0x100_0000_01b3);
            }
        }
        h
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "input has {} columns, network expects {}",
                x.cols(),
                self.in_dim()
            )));
        }
        Ok(())
    }

    /// Forward pass returning the cache needed by [`MlpParams::backward`].
    pub fn forward(&self, x: &Matrix) -> Result<(ForwardCache, Matrix)> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for layer in &self.layers {
            let next = layer_forward(layer, acts.last().expect("nonempty"));
            acts.push(next);
        }
        let out = acts.last().expect("nonempty").clone();
        Ok((
            ForwardCache {
                acts,
                fingerprint: self.fingerprint(),
            },
            out,
        ))
    }

    /// Forward pass without keeping intermediate activations.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut cur = layer_forward(&self.layers[0], x);
        for layer in &self.layers[1..] {
            cur = layer_forward(layer, &cur);
        }
        Ok(cur)
    }

    /// Reverse pass. `upstream` is dLoss/dOutput for the cached batch.
    pub fn backward(&self, cache: &ForwardCache, upstream: &Matrix) -> Result<Backward> {
        if cache.acts.len() != self.layers.len() + 1 || cache.fingerprint != self.fingerprint() {
            return Err(Error::Contract(
                "forward cache was produced by different parameters".into(),
            ));
        }
        let out = cache.output();
        if upstream.shape() != out.shape() {
            return Err(Error::Shape(format!(
                "upstream gradient is {:?}, output is {:?}",
                upstream.shape(),
                out.shape()
            )));
        }

        let n_layers = self.layers.len();
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        let mut grad = upstream.clone();
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let input = &cache.acts[l];
            let output = &cache.acts[l + 1];
            let (batch, out_dim, in_dim) = (input.rows(), layer.out_dim(), layer.in_dim());

            // delta = upstream ⊙ act'(pre)
            let mut delta = grad;
            for (d, &o) in delta.as_mut_slice().iter_mut().zip(output.as_slice()) {
                *d *= layer.activation.derivative_from_output(o);
            }

            let mut dw = Matrix::zeros(out_dim, in_dim);
            let mut db = vec![0.0; out_dim];
            for b in 0..batch {
                let d_row = delta.row(b);
                let x_row = input.row(b);
                for (o, &d) in d_row.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    db[o] += d;
                    for (w, &xi) in dw.row_mut(o).iter_mut().zip(x_row) {
                        *w += d * xi;
                    }
                }
            }

            let mut d_in = Matrix::zeros(batch, in_dim);
            for b in 0..batch {
                let d_row = delta.row(b);
                let dst = d_in.row_mut(b);
                for (o, &d) in d_row.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (g, &w) in dst.iter_mut().zip(layer.weight.row(o)) {
                        *g += d * w;
                    }
                }
            }

            weights.push(dw);
            biases.push(db);
            grad = d_in;
        }
        weights.reverse();
        biases.reverse();
        Ok(Backward {
            grads: Gradients { weights, biases },
            input_grad: grad,
        })
    }
}

fn layer_forward(layer: &Layer, x: &Matrix) -> Matrix {
    let (batch, out_dim) = (x.rows(), layer.out_dim());
    let mut out = Matrix::zeros(batch, out_dim);
    for b in 0..batch {
        let x_row = x.row(b);
        let dst = out.row_mut(b);
        for (o, slot) in dst.iter_mut().enumerate() {
            let w_row = layer.weight.row(o);
            let mut acc = layer.bias[o];
            for (w, xi) in w_row.iter().zip(x_row) {
                acc += w * xi;
            }
            *slot = layer.activation.apply(acc);
        }
    }
    out
}

impl Gradients {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            weights: params
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.weight.rows(), l.weight.cols()))
                .collect(),
            biases: params.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn is_congruent(&self, params: &MlpParams) -> bool {
        self.weights.len() == params.layers.len()
            && self
                .weights
                .iter()
                .zip(&self.biases)
                .zip(&params.layers)
                .all(|((w, b), l)| w.shape() == l.weight.shape() && b.len() == l.bias.len())
    }
}

//! Softmax MLP classifiers used as per-distribution experts.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::checkpoint::{read_mlp, write_mlp, ByteReader};
use crate::nn::{Activation, Gradients, Matrix, MlpParams, OptimizerState};
use crate::vae::for_each_batch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub data_dim: usize,
    pub num_classes: usize,
    pub hidden: Vec<usize>,
    pub hidden_activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    net: MlpParams,
    num_classes: usize,
}

fn check_labels(labels: &[usize], num_classes: usize) -> Result<()> {
    if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::Input(format!(
            "label {bad} out of range for {num_classes} classes"
        )));
    }
    Ok(())
}

/// Lowest index among maximal entries.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl ClassifierModel {
    pub fn new<R: Rng + ?Sized>(config: &ClassifierConfig, rng: &mut R) -> Result<Self> {
        if config.num_classes < 2 {
            return Err(Error::config("model.num_classes", "need at least 2 classes"));
        }
        let mut dims = vec![config.data_dim];
        dims.extend(&config.hidden);
        dims.push(config.num_classes);
        let mut acts = vec![config.hidden_activation; config.hidden.len()];
        acts.push(Activation::Identity);
        Self::from_net(MlpParams::init(&dims, &acts, rng)?)
    }

    pub fn from_net(net: MlpParams) -> Result<Self> {
        let num_classes = net.out_dim();
        Ok(Self { net, num_classes })
    }

    pub fn net(&self) -> &MlpParams {
        &self.net
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn same_shape(&self, other: &ClassifierModel) -> bool {
        self.net.same_shape(&other.net)
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.net.tensors()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.net.tensors_mut()
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        self.net.predict(x)
    }

    /// Per-row cross-entropy; the building block for [`ClassifierModel::loss`].
    pub fn sample_losses(&self, x: &Matrix, labels: &[usize]) -> Result<Vec<f64>> {
        check_len(x, labels)?;
        check_labels(labels, self.num_classes)?;
        let logits = self.net.predict(x)?;
        Ok(labels
            .iter()
            .enumerate()
            .map(|(b, &y)| {
                cross_entropy(logits.row(b), y)
            })
            .collect())
    }

    /// Mean cross-entropy over the batch.
    pub fn loss(&self, x: &Matrix, labels: &[usize]) -> Result<f64> {
        if labels.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let l = self.sample_losses(x, labels)?;
        Ok(l.iter().sum::<f64>() / l.len() as f64)
    }

    pub fn loss_and_grads(&self, x: &Matrix, labels: &[usize]) -> Result<(f64, Gradients)> {
        check_len(x, labels)?;
        check_labels(labels, self.num_classes)?;
        if labels.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let n = labels.len() as f64;
        let (cache, logits) = self.net.forward(x)?;
        let mut up = Matrix::zeros(logits.rows(), logits.cols());
        let mut total = 0.0;
        for (b, &y) in labels.iter().enumerate() {
            let row = logits.row(b);
            let lse = log_sum_exp(row);
            total += cross_entropy(row, y);
            for (c, g) in up.row_mut(b).iter_mut().enumerate() {
                *g = (row[c] - lse).exp() / n;
            }
            up.row_mut(b)[y] -= 1.0 / n;
        }
        let back = self.net.backward(&cache, &up)?;
        if !total.is_finite() {
            return Err(Error::Numeric("non-finite cross-entropy".into()));
        }
        Ok((total / n, back.grads))
    }

    pub fn train_step(
        &mut self,
        x: &Matrix,
        labels: &[usize],
        opt: &mut OptimizerState,
    ) -> Result<f64> {
        let (loss, grads) = self.loss_and_grads(x, labels)?;
        crate::nn::optimizer_step(&mut self.net, &grads, opt)?;
        Ok(loss)
    }

    /// Mini-batch training; returns the loss of every step.
    pub fn fit<R: Rng + ?Sized>(
        &mut self,
        x: &Matrix,
        labels: &[usize],
        epochs: usize,
        batch_size: usize,
        opt: &mut OptimizerState,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        check_len(x, labels)?;
        let mut losses = Vec::new();
        for_each_batch(x.rows(), epochs, batch_size, rng, |idx, _| {
            let bx = x.select_rows(idx);
            let by: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            losses.push(self.train_step(&bx, &by, opt)?);
            Ok(())
        })?;
        Ok(losses)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let logits = self.net.predict(x)?;
        Ok(logits.iter_rows().map(argmax).collect())
    }

    /// Fraction of rows whose argmax logit equals the label.
    pub fn accuracy(&self, x: &Matrix, labels: &[usize]) -> Result<f64> {
        check_len(x, labels)?;
        if labels.is_empty() {
            return Err(Error::Input("accuracy of an empty set".into()));
        }
        let pred = self.predict(x)?;
        let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
        Ok(hits as f64 / labels.len() as f64)
    }

    /// MLP block followed by `num_classes: u32`.
    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> Result<()> {
        write_mlp(w, &self.net)?;
        w.write_all(&(self.num_classes as u32).to_le_bytes())?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(r: R) -> Result<Self> {
        let mut r = ByteReader::new(r);
        let net = read_mlp(&mut r)?;
        let at = r.offset();
        let c = r.u32_le("num_classes")? as usize;
        r.expect_end()?;
        if c != net.out_dim() {
            return Err(Error::format(at, "num_classes disagrees with network output"));
        }
        Self::from_net(net)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf).expect("Vec write");
        buf
    }
}

fn check_len(x: &Matrix, labels: &[usize]) -> Result<()> {
    if x.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} rows but {} labels",
            x.rows(),
            labels.len()
        )));
    }
    Ok(())
}

/// `logsumexp(row) - row[y]`, exact to full precision when `y` is the max.
fn cross_entropy(row: &[f64], y: usize) -> f64 {
    let top = argmax(row);
    let m = row[top];
    let rest: f64 = row
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != top)
        .map(|(_, v)| (v - m).exp())
        .sum();
    (m - row[y]) + rest.ln_1p()
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

//! VAE density estimator with a hand-derived ELBO gradient.
//!
//! The encoder emits `[μ | log σ²]`, the decoder maps a latent code back to
//! data space. In Bernoulli mode the decoder's last layer produces logits and
//! the reconstruction term is binary cross-entropy; in unit-Gaussian mode the
//! decoder output is the mean and the term is half the squared error. The
//! per-sample loss `rec + kl` is used downstream as a negative log-density
//! score.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::checkpoint::{read_mlp, write_mlp, ByteReader};
use crate::nn::mlp::sigmoid;
use crate::nn::{Activation, Gradients, Matrix, MlpParams, OptimizerState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Likelihood {
    Bernoulli,
    UnitGaussian,
}

impl Likelihood {
    fn code(self) -> u8 {
        match self {
            Likelihood::Bernoulli => 0,
            Likelihood::UnitGaussian => 1,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Likelihood::Bernoulli),
            1 => Some(Likelihood::UnitGaussian),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaeConfig {
    pub data_dim: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub likelihood: Likelihood,
    pub kl_weight: f64,
    pub free_bits: f64,
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.data_dim == 0 {
            return Err(Error::config("model.data_dim", "must be > 0"));
        }
        if self.latent_dim == 0 {
            return Err(Error::config("model.latent_dim", "must be > 0"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("model.hidden", "widths must be > 0"));
        }
        if !(self.kl_weight.is_finite() && self.kl_weight >= 0.0) {
            return Err(Error::config("model.kl_weight", "must be finite and >= 0"));
        }
        if !(self.free_bits.is_finite() && self.free_bits >= 0.0) {
            return Err(Error::config("model.free_bits", "must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    encoder: MlpParams,
    decoder: MlpParams,
    latent_dim: usize,
    likelihood: Likelihood,
    kl_weight: f64,
    free_bits: f64,
}

/// Mean per-sample loss terms, in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VaeLoss {
    pub rec: f64,
    pub kl: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeForward {
    pub mu: Matrix,
    pub logvar: Matrix,
    pub z: Matrix,
    /// Decoder mean; sigmoid of the logits in Bernoulli mode.
    pub x_hat: Matrix,
}

pub struct VaeGradients {
    pub encoder: Gradients,
    pub decoder: Gradients,
}

/// Draws a `rows × cols` matrix of standard normal noise.
pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized above")
}

#[inline]
fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

/// Per-sample terms before batch reduction.
struct SampleTerms {
    rec: Vec<f64>,
    kl: Vec<f64>,
    total: Vec<f64>,
}

impl VaeModel {
    pub fn new<R: Rng + ?Sized>(config: &VaeConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let hidden_acts = vec![config.hidden_activation; config.hidden.len()];

        let mut enc_dims = vec![config.data_dim];
        enc_dims.extend(&config.hidden);
        enc_dims.push(2 * config.latent_dim);
        let mut enc_acts = hidden_acts.clone();
        enc_acts.push(Activation::Identity);

        let mut dec_dims = vec![config.latent_dim];
        dec_dims.extend(config.hidden.iter().rev());
        dec_dims.push(config.data_dim);
        let mut dec_acts = hidden_acts;
        dec_acts.push(Activation::Identity);

        let encoder = MlpParams::init(&enc_dims, &enc_acts, rng)?;
        let decoder = MlpParams::init(&dec_dims, &dec_acts, rng)?;
        Self::from_parts(
            encoder,
            decoder,
            config.latent_dim,
            config.likelihood,
            config.kl_weight,
            config.free_bits,
        )
    }

    pub fn from_parts(
        encoder: MlpParams,
        decoder: MlpParams,
        latent_dim: usize,
        likelihood: Likelihood,
        kl_weight: f64,
        free_bits: f64,
    ) -> Result<Self> {
        if encoder.out_dim() != 2 * latent_dim {
            return Err(Error::Shape(format!(
                "encoder emits {} values, need 2 x latent_dim = {}",
                encoder.out_dim(),
                2 * latent_dim
            )));
        }
        if decoder.in_dim() != latent_dim {
            return Err(Error::Shape(format!(
                "decoder takes {} inputs, latent_dim is {latent_dim}",
                decoder.in_dim()
            )));
        }
        if decoder.out_dim() != encoder.in_dim() {
            return Err(Error::Shape(format!(
                "decoder emits {} values but data_dim is {}",
                decoder.out_dim(),
                encoder.in_dim()
            )));
        }
        Ok(Self {
            encoder,
            decoder,
            latent_dim,
            likelihood,
            kl_weight,
            free_bits,
        })
    }

    pub fn encoder(&self) -> &MlpParams {
        &self.encoder
    }

    pub fn decoder(&self) -> &MlpParams {
        &self.decoder
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn data_dim(&self) -> usize {
        self.encoder.in_dim()
    }

    pub fn likelihood(&self) -> Likelihood {
        self.likelihood
    }

    pub fn kl_weight(&self) -> f64 {
        self.kl_weight
    }

    pub fn free_bits(&self) -> f64 {
        self.free_bits
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.decoder.param_count()
    }

    pub fn same_shape(&self, other: &VaeModel) -> bool {
        self.latent_dim == other.latent_dim
            && self.likelihood == other.likelihood
            && self.encoder.same_shape(&other.encoder)
            && self.decoder.same_shape(&other.decoder)
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.encoder.tensors();
        t.extend(self.decoder.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.decoder.tensors_mut());
        t
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.encoder.param_count();
        if flat.len() != self.param_count() {
            return Err(Error::Shape("flat vector does not match VAE".into()));
        }
        self.encoder.set_flat(&flat[..n])?;
        self.decoder.set_flat(&flat[n..])
    }

    fn check_data(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.data_dim() {
            return Err(Error::Shape(format!(
                "data has {} columns, VAE expects {}",
                x.cols(),
                self.data_dim()
            )));
        }
        if self.likelihood == Likelihood::Bernoulli
            && x.as_slice().iter().any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::Input(
                "bernoulli likelihood needs data in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    fn check_eps(&self, x: &Matrix, eps: &Matrix) -> Result<()> {
        if eps.rows() != x.rows() || eps.cols() < self.latent_dim {
            return Err(Error::Shape(format!(
                "noise is {:?}, need {} rows and at least {} columns",
                eps.shape(),
                x.rows(),
                self.latent_dim
            )));
        }
        Ok(())
    }

    /// Encoder statistics, reparameterized latent and decoder output (logits in
    /// Bernoulli mode). `eps` may be wider than the latent; extra columns are ignored.
    fn encode_decode(
        &self,
        x: &Matrix,
        eps: &Matrix,
        keep_cache: bool,
    ) -> Result<(Matrix, Option<crate::nn::ForwardCache>, Matrix, Option<crate::nn::ForwardCache>, Matrix)>
    {
        self.check_data(x)?;
        self.check_eps(x, eps)?;
        let l = self.latent_dim;
        let (enc_cache, stats) = if keep_cache {
            let (c, s) = self.encoder.forward(x)?;
            (Some(c), s)
        } else {
            (None, self.encoder.predict(x)?)
        };
        let mut z = Matrix::zeros(x.rows(), l);
        for b in 0..x.rows() {
            let s = stats.row(b);
            let e = eps.row(b);
            for (d, zd) in z.row_mut(b).iter_mut().enumerate() {
                *zd = s[d] + (0.5 * s[l + d]).exp() * e[d];
            }
        }
        let (dec_cache, out) = if keep_cache {
            let (c, o) = self.decoder.forward(&z)?;
            (Some(c), o)
        } else {
            (None, self.decoder.predict(&z)?)
        };
        if !out.is_finite() || !z.is_finite() {
            return Err(Error::Numeric("non-finite VAE activations".into()));
        }
        Ok((stats, enc_cache, z, dec_cache, out))
    }

    fn terms(&self, x: &Matrix, stats: &Matrix, out: &Matrix) -> SampleTerms {
        let l = self.latent_dim;
        let n = x.rows();
        let mut rec = Vec::with_capacity(n);
        let mut kl = Vec::with_capacity(n);
        let mut total = Vec::with_capacity(n);
        for b in 0..n {
            let r: f64 = match self.likelihood {
                Likelihood::UnitGaussian => {
                    x.row(b)
                        .iter()
                        .zip(out.row(b))
                        .map(|(xi, oi)| (xi - oi) * (xi - oi))
                        .sum::<f64>()
                        * 0.5
                }
                Likelihood::Bernoulli => x
                    .row(b)
                    .iter()
                    .zip(out.row(b))
                    .map(|(xi, oi)| softplus(*oi) - xi * oi)
                    .sum(),
            };
            let s = stats.row(b);
            let mut k_raw = 0.0;
            let mut k_adj = 0.0;
            for d in 0..l {
                let (mu, lv) = (s[d], s[l + d]);
                let kd = 0.5 * (mu * mu + lv.exp() - lv - 1.0);
                k_raw += kd;
                k_adj += kd.max(self.free_bits);
            }
            rec.push(r);
            kl.push(k_raw);
            total.push(r + self.kl_weight * k_adj);
        }
        SampleTerms { rec, kl, total }
    }

    pub fn forward_with_eps(&self, x: &Matrix, eps: &Matrix) -> Result<VaeForward> {
        let (stats, _, z, _, out) = self.encode_decode(x, eps, false)?;
        let l = self.latent_dim;
        let mut mu = Matrix::zeros(x.rows(), l);
        let mut logvar = Matrix::zeros(x.rows(), l);
        for b in 0..x.rows() {
            mu.row_mut(b).copy_from_slice(&stats.row(b)[..l]);
            logvar.row_mut(b).copy_from_slice(&stats.row(b)[l..]);
        }
        let x_hat = match self.likelihood {
            Likelihood::UnitGaussian => out,
            Likelihood::Bernoulli => {
                let mut o = out;
                o.as_mut_slice().iter_mut().for_each(|v| *v = sigmoid(*v));
                o
            }
        };
        Ok(VaeForward {
            mu,
            logvar,
            z,
            x_hat,
        })
    }

    /// Reparameterized forward pass with noise drawn from `rng`.
    pub fn forward<R: Rng + ?Sized>(&self, x: &Matrix, rng: &mut R) -> Result<VaeForward> {
        let eps = standard_normal(x.rows(), self.latent_dim, rng);
        self.forward_with_eps(x, &eps)
    }

    /// Total loss of every row under frozen noise.
    pub fn sample_losses_with_eps(&self, x: &Matrix, eps: &Matrix) -> Result<Vec<f64>> {
        let (stats, _, _, _, out) = self.encode_decode(x, eps, false)?;
        Ok(self.terms(x, &stats, &out).total)
    }

    pub fn loss_with_eps(&self, x: &Matrix, eps: &Matrix) -> Result<VaeLoss> {
        if x.rows() == 0 {
            return Err(Error::Input("empty batch".into()));
        }
        let (stats, _, _, _, out) = self.encode_decode(x, eps, false)?;
        Ok(mean_loss(&self.terms(x, &stats, &out)))
    }

    /// One-sample ELBO loss averaged over the batch.
    pub fn elbo_loss<R: Rng + ?Sized>(&self, x: &Matrix, rng: &mut R) -> Result<VaeLoss> {
        let eps = standard_normal(x.rows(), self.latent_dim, rng);
        self.loss_with_eps(x, &eps)
    }

    /// Mean batch loss and its exact gradient under frozen noise.
    pub fn loss_and_grads(&self, x: &Matrix, eps: &Matrix) -> Result<(VaeLoss, VaeGradients)> {
        let n = x.rows();
        if n == 0 {
            return Err(Error::Input("empty batch".into()));
        }
        let (stats, enc_cache, _z, dec_cache, out) = self.encode_decode(x, eps, true)?;
        let terms = self.terms(x, &stats, &out);
        let scale = 1.0 / n as f64;
        let l = self.latent_dim;

        let mut d_out = Matrix::zeros(n, out.cols());
        for b in 0..n {
            let xr = x.row(b);
            let orow = out.row(b);
            for (d, g) in d_out.row_mut(b).iter_mut().enumerate() {
                *g = scale
                    * match self.likelihood {
                        Likelihood::UnitGaussian => orow[d] - xr[d],
                        Likelihood::Bernoulli => sigmoid(orow[d]) - xr[d],
                    };
            }
        }
        let dec_back = self
            .decoder
            .backward(dec_cache.as_ref().expect("cache kept"), &d_out)?;
        let dz = dec_back.input_grad;

        let mut d_stats = Matrix::zeros(n, 2 * l);
        for b in 0..n {
            let s = stats.row(b);
            let e = eps.row(b);
            let dzr = dz.row(b);
            let dst = d_stats.row_mut(b);
            for d in 0..l {
                let (mu, lv) = (s[d], s[l + d]);
                let sigma = (0.5 * lv).exp();
                let kd = 0.5 * (mu * mu + lv.exp() - lv - 1.0);
                let active = if kd >= self.free_bits { 1.0 } else { 0.0 };
                let kw = self.kl_weight * active * scale;
                dst[d] = dzr[d] + kw * mu;
                dst[l + d] = dzr[d] * e[d] * 0.5 * sigma + kw * 0.5 * (lv.exp() - 1.0);
            }
        }
        let enc_back = self
            .encoder
            .backward(enc_cache.as_ref().expect("cache kept"), &d_stats)?;
        let grads = VaeGradients {
            encoder: enc_back.grads,
            decoder: dec_back.grads,
        };
        if !(grads.encoder.is_finite() && grads.decoder.is_finite()) {
            return Err(Error::Numeric("non-finite VAE gradient".into()));
        }
        Ok((mean_loss(&terms), grads))
    }

    /// One gradient step on the mean batch loss.
    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        batch: &Matrix,
        opt: &mut OptimizerState,
        rng: &mut R,
    ) -> Result<VaeLoss> {
        let eps = standard_normal(batch.rows(), self.latent_dim, rng);
        let (loss, grads) = self.loss_and_grads(batch, &eps)?;
        let mut g = grads.encoder.tensors();
        g.extend(grads.decoder.tensors());
        opt.step(&mut self.tensors_mut(), &g)?;
        Ok(loss)
    }

    /// Mini-batch training over `data`; returns the loss of every step.
    pub fn fit<R: Rng + ?Sized>(
        &mut self,
        data: &Matrix,
        epochs: usize,
        batch_size: usize,
        opt: &mut OptimizerState,
        rng: &mut R,
    ) -> Result<Vec<VaeLoss>> {
        let mut losses = Vec::new();
        for_each_batch(data.rows(), epochs, batch_size, rng, |idx, rng| {
            let batch = data.select_rows(idx);
            losses.push(self.train_step(&batch, opt, rng)?);
            Ok(())
        })?;
        Ok(losses)
    }

    /// Decoder means at `n` prior draws `z ~ N(0, I)`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Matrix> {
        if n == 0 {
            return Err(Error::Input("sample count must be >= 1".into()));
        }
        let z = standard_normal(n, self.latent_dim, rng);
        self.decode(&z)
    }

    /// Decoder mean for given latent codes.
    pub fn decode(&self, z: &Matrix) -> Result<Matrix> {
        let mut out = self.decoder.predict(z)?;
        if self.likelihood == Likelihood::Bernoulli {
            out.as_mut_slice().iter_mut().for_each(|v| *v = sigmoid(*v));
        }
        Ok(out)
    }

    /// Two MLP blocks followed by `latent_dim: u32 | likelihood: u8 | kl_weight: f64 | free_bits: f64`.
    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> Result<()> {
        write_mlp(w, &self.encoder)?;
        write_mlp(w, &self.decoder)?;
        w.write_all(&(self.latent_dim as u32).to_le_bytes())?;
        w.write_all(&[self.likelihood.code()])?;
        w.write_all(&self.kl_weight.to_le_bytes())?;
        w.write_all(&self.free_bits.to_le_bytes())?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(r: R) -> Result<Self> {
        let mut r = ByteReader::new(r);
        let encoder = read_mlp(&mut r)?;
        let decoder = read_mlp(&mut r)?;
        let latent = r.u32_le("latent_dim")? as usize;
        let at = r.offset();
        let code = r.u8("likelihood")?;
        let likelihood = Likelihood::from_code(code)
            .ok_or_else(|| Error::format(at, format!("unknown likelihood code {code}")))?;
        let kl_weight = r.f64_le("kl_weight")?;
        let free_bits = r.f64_le("free_bits")?;
        r.expect_end()?;
        Self::from_parts(encoder, decoder, latent, likelihood, kl_weight, free_bits)
            .map_err(|e| Error::format(r.offset(), e.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf).expect("Vec write");
        buf
    }
}

fn mean_loss(t: &SampleTerms) -> VaeLoss {
    let n = t.total.len() as f64;
    VaeLoss {
        rec: t.rec.iter().sum::<f64>() / n,
        kl: t.kl.iter().sum::<f64>() / n,
        total: t.total.iter().sum::<f64>() / n,
    }
}

/// Shuffled mini-batch schedule shared by the VAE and classifier trainers.
pub(crate) fn for_each_batch<R, F>(
    n: usize,
    epochs: usize,
    batch_size: usize,
    rng: &mut R,
    mut f: F,
) -> Result<()>
where
    R: Rng + ?Sized,
    F: FnMut(&[usize], &mut R) -> Result<()>,
{
    if n == 0 || epochs == 0 {
        return Ok(());
    }
    if batch_size == 0 {
        return Err(Error::Input("batch size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
        for chunk in order.chunks(batch_size) {
            f(chunk, rng)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{grad_check, GradCheckConfig};
    use crate::nn::{Layer, OptimizerConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config(likelihood: Likelihood) -> VaeConfig {
        VaeConfig {
            data_dim: 3,
            latent_dim: 2,
            hidden: vec![5],
            hidden_activation: Activation::Tanh,
            likelihood,
            kl_weight: 1.0,
            free_bits: 0.0,
        }
    }

    fn linear(w: Matrix, b: Vec<f64>) -> MlpParams {
        MlpParams::new(vec![Layer::new(w, b, Activation::Identity).unwrap()]).unwrap()
    }

    /// Encoder that ignores x and emits fixed (μ, logσ²).
    fn constant_encoder(data_dim: usize, stats: Vec<f64>) -> MlpParams {
        linear(Matrix::zeros(stats.len(), data_dim), stats)
    }

    #[test]
    fn zero_noise_gives_z_equal_mu() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = VaeModel::new(&config(Likelihood::UnitGaussian), &mut rng).unwrap();
        let x = Matrix::from_rows(&[vec![0.1, -0.4, 2.0], vec![1.0, 1.0, 1.0]]).unwrap();
        let f = m.forward_with_eps(&x, &Matrix::zeros(2, 2)).unwrap();
        assert_eq!(f.z, f.mu);
    }

    #[test]
    fn forward_is_deterministic_under_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = VaeModel::new(&config(Likelihood::UnitGaussian), &mut rng).unwrap();
        let x = Matrix::from_rows(&[vec![0.1, -0.4, 2.0]]).unwrap();
        let a = m.forward(&x, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = m.forward(&x, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tiny_variance_collapses_z_to_mu() {
        let enc = constant_encoder(2, vec![0.7, -1.2, -30.0, -30.0]);
        let dec = linear(Matrix::identity(2), vec![0.0; 2]);
        let m = VaeModel::from_parts(enc, dec, 2, Likelihood::UnitGaussian, 1.0, 0.0).unwrap();
        let x = Matrix::zeros(1, 2);
        let eps = Matrix::from_rows(&[vec![2.0, -3.0]]).unwrap();
        let f = m.forward_with_eps(&x, &eps).unwrap();
        // σ = e^-15 ≈ 3.06e-7
        assert!((f.z.get(0, 0) - 0.7).abs() < 1e-6);
        assert!((f.z.get(0, 1) + 1.2).abs() < 1e-6);
    }

    #[test]
    fn kl_is_zero_at_prior_and_half_for_unit_mean_shift() {
        let dec = linear(Matrix::identity(2), vec![0.0; 2]);
        let at_prior = VaeModel::from_parts(
            constant_encoder(2, vec![0.0; 4]),
            dec.clone(),
            2,
            Likelihood::UnitGaussian,
            1.0,
            0.0,
        )
        .unwrap();
        let x = Matrix::zeros(1, 2);
        let l = at_prior.loss_with_eps(&x, &Matrix::zeros(1, 2)).unwrap();
        assert_eq!(l.kl, 0.0);

        let shifted = VaeModel::from_parts(
            constant_encoder(2, vec![1.0, 0.0, 0.0, 0.0]),
            dec,
            2,
            Likelihood::UnitGaussian,
            1.0,
            0.0,
        )
        .unwrap();
        let l = shifted.loss_with_eps(&x, &Matrix::zeros(1, 2)).unwrap();
        assert!((l.kl - 0.5).abs() < 1e-15);
    }

    #[test]
    fn perfect_reconstruction_has_zero_rec() {
        // identity decoder, encoder μ = x, logσ² = 0, ε = 0 → x̂ = x
        let mut w = Matrix::zeros(4, 2);
        w.set(0, 0, 1.0);
        w.set(1, 1, 1.0);
        let enc = linear(w, vec![0.0; 4]);
        let dec = linear(Matrix::identity(2), vec![0.0; 2]);
        let m = VaeModel::from_parts(enc, dec, 2, Likelihood::UnitGaussian, 1.0, 0.0).unwrap();
        let x = Matrix::from_rows(&[vec![0.3, -2.0]]).unwrap();
        let l = m.loss_with_eps(&x, &Matrix::zeros(1, 2)).unwrap();
        assert_eq!(l.rec, 0.0);
    }

    #[test]
    fn bernoulli_rejects_out_of_range_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = VaeModel::new(&config(Likelihood::Bernoulli), &mut rng).unwrap();
        let x = Matrix::from_rows(&[vec![0.1, 1.4, 0.0]]).unwrap();
        assert!(matches!(m.elbo_loss(&x, &mut rng), Err(Error::Input(_))));
    }

    #[test]
    fn loss_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = VaeModel::new(&config(Likelihood::UnitGaussian), &mut rng).unwrap();
        let x = standard_normal(6, 3, &mut rng);
        let eps = standard_normal(6, 2, &mut rng);
        let perm = [3, 0, 5, 1, 4, 2];
        let a = m.loss_with_eps(&x, &eps).unwrap();
        let b = m
            .loss_with_eps(&x.select_rows(&perm), &eps.select_rows(&perm))
            .unwrap();
        assert!((a.total - b.total).abs() < 1e-12);
    }

    fn check_gradients(likelihood: Likelihood, kl_weight: f64, free_bits: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cfg = config(likelihood);
        cfg.kl_weight = kl_weight;
        cfg.free_bits = free_bits;
        let m = VaeModel::new(&cfg, &mut rng).unwrap();
        let x = match likelihood {
            Likelihood::UnitGaussian => standard_normal(4, 3, &mut rng),
            Likelihood::Bernoulli => {
                let mut x = standard_normal(4, 3, &mut rng);
                x.as_mut_slice().iter_mut().for_each(|v| *v = sigmoid(*v));
                x
            }
        };
        let eps = standard_normal(4, 2, &mut rng);
        let (_, g) = m.loss_and_grads(&x, &eps).unwrap();
        let mut analytic = g.encoder.to_flat();
        analytic.extend(g.decoder.to_flat());
        let mut probe = m.clone();
        let report = grad_check(
            &m.to_flat(),
            &analytic,
            |p| {
                probe.set_flat(p).unwrap();
                probe.loss_with_eps(&x, &eps).unwrap().total
            },
            &GradCheckConfig {
                max_coords: usize::MAX,
                ..GradCheckConfig::default()
            },
            &mut rng,
        );
        assert!(report.pass, "{likelihood:?} seed {seed}: {report:?}");
    }

    #[test]
    fn gradients_pass_finite_difference_check() {
        for seed in 0..4 {
            check_gradients(Likelihood::UnitGaussian, 1.0, 0.0, seed);
            check_gradients(Likelihood::Bernoulli, 1.0, 0.0, seed);
            check_gradients(Likelihood::UnitGaussian, 0.5, 0.05, seed);
        }
    }

    #[test]
    fn zero_lr_leaves_model_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = VaeModel::new(&config(Likelihood::UnitGaussian), &mut rng).unwrap();
        let before = m.clone();
        let x = standard_normal(8, 3, &mut rng);
        let mut opt = OptimizerState::new(OptimizerConfig::sgd(0.0));
        m.train_step(&x, &mut opt, &mut rng).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn identity_decoder_samples_are_the_latent_draws() {
        let enc = constant_encoder(2, vec![0.0; 4]);
        let dec = linear(Matrix::identity(2), vec![0.0; 2]);
        let m = VaeModel::from_parts(enc, dec, 2, Likelihood::UnitGaussian, 1.0, 0.0).unwrap();
        let s = m.sample(5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let z = standard_normal(5, 2, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(s, z);
        assert!(matches!(m.sample(0, &mut ChaCha8Rng::seed_from_u64(9)), Err(Error::Input(_))));
    }

    #[test]
    fn affine_decoder_sample_mean_matches_bias() {
        let w = Matrix::from_rows(&[vec![2.0, 0.0], vec![0.5, 1.0]]).unwrap();
        let bias = vec![3.0, -1.0];
        let enc = constant_encoder(2, vec![0.0; 4]);
        let dec = linear(w, bias.clone());
        let m = VaeModel::from_parts(enc, dec, 2, Likelihood::UnitGaussian, 1.0, 0.0).unwrap();
        let n = 10_000;
        let s = m.sample(n, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        // per-coordinate std of Wz is the row norm of W
        let sd = [2.0f64, (0.25f64 + 1.0).sqrt()];
        for d in 0..2 {
            let mean: f64 = (0..n).map(|i| s.get(i, d)).sum::<f64>() / n as f64;
            assert!((mean - bias[d]).abs() < 3.0 * sd[d] / (n as f64).sqrt());
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut cfg = config(Likelihood::Bernoulli);
        cfg.kl_weight = 0.75;
        cfg.free_bits = 0.125;
        let m = VaeModel::new(&cfg, &mut rng).unwrap();
        let back = VaeModel::read_checkpoint(m.to_bytes().as_slice()).unwrap();
        assert_eq!(back, m);
    }
}

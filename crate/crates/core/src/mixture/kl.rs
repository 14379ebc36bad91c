use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::rng::SeedTree;
use crate::vae::{standard_normal, VaeModel};

/// Pairwise directed divergences in nats; `D[i][i] = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlMatrix {
    pub entries: Vec<Vec<f64>>,
}

impl KlMatrix {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i][j]
    }
}

/// Monte-Carlo estimate of `D(i ‖ j)`: mean over `b` of
/// `L(x̂_b; φ_j) - L(x̂_b; φ_i)` with `x̂_b = decode_i(z_b)`.
///
/// The reparameterization noise for each `x̂_b` is shared by both loss
/// evaluations, so identical models give exactly zero.
pub fn kl_estimate<R: Rng + ?Sized>(
    vi: &VaeModel,
    vj: &VaeModel,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::Input("kl sample count must be >= 1".into()));
    }
    if vi.data_dim() != vj.data_dim() {
        return Err(Error::Shape(format!(
            "data dims differ: {} vs {}",
            vi.data_dim(),
            vj.data_dim()
        )));
    }
    let z = standard_normal(samples, vi.latent_dim(), rng);
    let x_hat = vi.decode(&z)?;
    let eps = standard_normal(samples, vi.latent_dim().max(vj.latent_dim()), rng);
    let li = vi.sample_losses_with_eps(&x_hat, &eps)?;
    let lj = vj.sample_losses_with_eps(&x_hat, &eps)?;
    let sum: f64 = lj.iter().zip(&li).map(|(a, b)| a - b).sum();
    let d = sum / samples as f64;
    if !d.is_finite() {
        return Err(Error::Numeric("non-finite kl estimate".into()));
    }
    Ok(d)
}

/// All ordered pairs, each drawn from its own `("kl", [i, j])` stream so the
/// result does not depend on evaluation order or thread count.
pub fn kl_matrix(vaes: &[VaeModel], samples: usize, seeds: &SeedTree) -> Result<KlMatrix> {
    let n = vaes.len();
    if n < 2 {
        return Err(Error::Input("kl matrix needs at least 2 VAEs".into()));
    }
    let cells = exec::map_range(n * n, |k| {
        let (i, j) = (k / n, k % n);
        if i == j {
            return Ok(0.0);
        }
        let mut rng = seeds.rng("kl", &[i as u64, j as u64]);
        kl_estimate(&vaes[i], &vaes[j], samples, &mut rng)
    });
    let flat = cells.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(KlMatrix {
        entries: flat.chunks(n).map(<[f64]>::to_vec).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::OptimizerConfig;
    use crate::vae::{Likelihood, VaeConfig};
    use crate::data::GaussianTask;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config() -> VaeConfig {
        VaeConfig {
            data_dim: 2,
            latent_dim: 2,
            hidden: vec![8],
            hidden_activation: crate::nn::Activation::Tanh,
            likelihood: Likelihood::UnitGaussian,
            kl_weight: 1.0,
            free_bits: 0.0,
        }
    }

    #[test]
    fn identical_models_give_exact_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = VaeModel::new(&config(), &mut rng).unwrap();
        for &b in &[1usize, 7, 1024] {
            for seed in 0..3 {
                let d = kl_estimate(&v, &v.clone(), b, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                assert_eq!(d, 0.0);
            }
        }
    }

    #[test]
    fn identical_list_gives_zero_matrix() {
        let v = VaeModel::new(&config(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let m = kl_matrix(&[v.clone(), v.clone(), v], 16, &SeedTree::new(3)).unwrap();
        assert!(m.entries.iter().flatten().all(|&d| d == 0.0));
    }

    #[test]
    fn matrix_replays_per_pair_streams() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let vaes: Vec<_> = (0..3).map(|_| VaeModel::new(&config(), &mut rng).unwrap()).collect();
        let seeds = SeedTree::new(11);
        let m = kl_matrix(&vaes, 32, &seeds).unwrap();
        for i in 0..3 {
            assert_eq!(m.get(i, i), 0.0);
            for j in 0..3 {
                if i != j {
                    let mut r = seeds.rng("kl", &[i as u64, j as u64]);
                    assert_eq!(m.get(i, j), kl_estimate(&vaes[i], &vaes[j], 32, &mut r).unwrap());
                }
            }
        }
        assert_eq!(m, kl_matrix(&vaes, 32, &seeds).unwrap());
        assert!(kl_matrix(&vaes[..1], 32, &seeds).is_err());
    }

    #[test]
    fn separated_models_have_positive_divergence() {
        let task = GaussianTask::new(2, 1, 2, 8.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut vaes = Vec::new();
        for j in 0..2 {
            let pool = task.sample_pool(j, 400, &mut rng);
            let mut v = VaeModel::new(&config(), &mut rng).unwrap();
            let mut opt = crate::nn::OptimizerState::new(OptimizerConfig::adam(0.01));
            v.fit(&pool.x, 20, 32, &mut opt, &mut rng).unwrap();
            vaes.push(v);
        }
        let d01 = kl_estimate(&vaes[0], &vaes[1], 256, &mut rng).unwrap();
        let d10 = kl_estimate(&vaes[1], &vaes[0], 256, &mut rng).unwrap();
        assert!(d01 > 0.0 && d10 > 0.0, "{d01} {d10}");
    }
}

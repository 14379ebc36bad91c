//! Class-conditional Gaussian tasks with an exact density oracle.
//!
//! Class means sit on a circle of radius `separation` in the first two
//! coordinates; inherent distribution `j` rotates that circle by `2πj/M`.
//! All components have identity covariance and classes are equiprobable.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{Dataset, InherentSpec};
use crate::error::{Error, Result};
use crate::nn::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTask {
    m: usize,
    num_classes: usize,
    data_dim: usize,
    separation: f64,
    /// `means[j][c]`
    means: Vec<Vec<Vec<f64>>>,
}

/// Training pools to draw clients from, plus held-out pools for evaluation.
#[derive(Debug, Clone)]
pub struct InherentPools {
    pub train: Vec<Dataset>,
    pub test: Vec<Dataset>,
}

impl GaussianTask {
    pub fn new(m: usize, num_classes: usize, data_dim: usize, separation: f64) -> Result<Self> {
        if m == 0 || num_classes == 0 {
            return Err(Error::Input("need at least one distribution and class".into()));
        }
        if data_dim < 2 {
            return Err(Error::Input("gaussian task needs data_dim >= 2".into()));
        }
        if !(separation.is_finite() && separation >= 0.0) {
            return Err(Error::Input("separation must be finite and >= 0".into()));
        }
        let means = (0..m)
            .map(|j| {
                (0..num_classes)
                    .map(|c| {
                        let angle = TAU * c as f64 / num_classes as f64 + TAU * j as f64 / m as f64;
                        let mut mu = vec![0.0; data_dim];
                        mu[0] = separation * angle.cos();
                        mu[1] = separation * angle.sin();
                        mu
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            m,
            num_classes,
            data_dim,
            separation,
            means,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn separation(&self) -> f64 {
        self.separation
    }

    pub fn mean(&self, j: usize, class: usize) -> &[f64] {
        &self.means[j][class]
    }

    pub fn spec(&self, j: usize) -> InherentSpec {
        InherentSpec::GaussianTask {
            index: j,
            means: self.means[j].clone(),
        }
    }

    /// `n` samples from distribution `j`, labels uniform over classes.
    pub fn sample_pool<R: Rng + ?Sized>(&self, j: usize, n: usize, rng: &mut R) -> Dataset {
        let mut data = Vec::with_capacity(n * self.data_dim);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let c = rng.random_range(0..self.num_classes);
            for &mu in &self.means[j][c] {
                data.push(mu + rng.sample::<f64, _>(StandardNormal));
            }
            labels.push(c);
        }
        let x = Matrix::from_vec(n, self.data_dim, data).expect("sized above");
        Dataset::new(x, labels, vec![j; n]).expect("sized above")
    }

    /// Exact `log p_j(x)` of the equal-weight class mixture.
    pub fn log_density(&self, x: &[f64], j: usize) -> f64 {
        let norm = -0.5 * self.data_dim as f64 * TAU.ln();
        let logs: Vec<f64> = self.means[j]
            .iter()
            .map(|mu| {
                let d2: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
                norm - 0.5 * d2
            })
            .collect();
        let mx = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        mx + logs.iter().map(|l| (l - mx).exp()).sum::<f64>().ln() - (self.num_classes as f64).ln()
    }

    /// Most likely origin under equal priors; ties go to the lowest index.
    pub fn bayes_origin(&self, x: &[f64]) -> usize {
        let d: Vec<f64> = (0..self.m).map(|j| self.log_density(x, j)).collect();
        crate::classifier::argmax(&d)
    }
}

pub fn gen_gaussian_task<R: Rng + ?Sized>(
    m: usize,
    num_classes: usize,
    data_dim: usize,
    separation: f64,
    train_pool_size: usize,
    test_pool_size: usize,
    rng: &mut R,
) -> Result<(GaussianTask, InherentPools)> {
    let task = GaussianTask::new(m, num_classes, data_dim, separation)?;
    let train = (0..m).map(|j| task.sample_pool(j, train_pool_size, rng)).collect();
    let test = (0..m).map(|j| task.sample_pool(j, test_pool_size, rng)).collect();
    Ok((task, InherentPools { train, test }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_separation_makes_all_distributions_identical() {
        let t = GaussianTask::new(3, 4, 2, 0.0).unwrap();
        let x = [0.3, -1.1];
        let d0 = t.log_density(&x, 0);
        for j in 1..3 {
            assert_eq!(t.log_density(&x, j), d0);
        }
    }

    #[test]
    fn density_integrates_to_one_on_a_grid() {
        let t = GaussianTask::new(2, 3, 2, 2.0).unwrap();
        let h = 0.05;
        let mut total = 0.0;
        let mut x = -9.0;
        while x < 9.0 {
            let mut y = -9.0;
            while y < 9.0 {
                total += t.log_density(&[x, y], 1).exp() * h * h;
                y += h;
            }
            x += h;
        }
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }

    #[test]
    fn separation_eight_has_tiny_bayes_origin_error() {
        let t = GaussianTask::new(2, 3, 2, 8.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 20_000;
        let mut wrong = 0;
        for j in 0..2 {
            let pool = t.sample_pool(j, n, &mut rng);
            wrong += (0..n).filter(|&i| t.bayes_origin(pool.x.row(i)) != j).count();
        }
        assert!((wrong as f64) / (2.0 * n as f64) < 1e-3);
    }

    #[test]
    fn origins_match_generation_tallies() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, pools) = gen_gaussian_task(3, 3, 4, 5.0, 70, 30, &mut rng).unwrap();
        for (j, p) in pools.train.iter().enumerate() {
            assert_eq!(p.origin_counts(3)[j], 70);
            assert_eq!(p.dim(), 4);
        }
        assert!(pools.test.iter().all(|p| p.len() == 30));
    }
}

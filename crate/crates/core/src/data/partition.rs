//! Splitting inherent-distribution pools into client datasets with known
//! mixture coefficients.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaPattern {
    /// `α_i^0 = i / (N - 1)`; two components only.
    Linear,
    /// `α^0 ~ U[0, 1]` for two components, flat Dirichlet otherwise.
    UniformRandom,
    Fixed(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientPartitionPlan {
    pub num_clients: usize,
    pub size_per_client: usize,
    pub pattern: AlphaPattern,
    pub test_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientData {
    pub id: usize,
    pub train: Dataset,
    pub test: Dataset,
    pub true_alpha: Vec<f64>,
}

/// Mixture coefficient rows, one per client.
pub fn alpha_matrix<R: Rng + ?Sized>(
    pattern: &AlphaPattern,
    num_clients: usize,
    m: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    match pattern {
        AlphaPattern::Linear => {
            if m != 2 {
                return Err(Error::Input(format!(
                    "linear mixture pattern needs exactly 2 components, got {m}"
                )));
            }
            Ok((0..num_clients)
                .map(|i| {
                    let a = if num_clients == 1 {
                        0.5
                    } else {
                        i as f64 / (num_clients - 1) as f64
                    };
                    vec![a, 1.0 - a]
                })
                .collect())
        }
        AlphaPattern::UniformRandom => Ok((0..num_clients)
            .map(|_| {
                if m == 1 {
                    vec![1.0]
                } else if m == 2 {
                    let a: f64 = rng.random();
                    vec![a, 1.0 - a]
                } else {
                    let g: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(Exp1)).collect();
                    let s: f64 = g.iter().sum();
                    g.into_iter().map(|v| v / s).collect()
                }
            })
            .collect()),
        AlphaPattern::Fixed(rows) => {
            if rows.len() != num_clients {
                return Err(Error::Input(format!(
                    "fixed alpha has {} rows for {num_clients} clients",
                    rows.len()
                )));
            }
            for (i, r) in rows.iter().enumerate() {
                let s: f64 = r.iter().sum();
                if r.len() != m || r.iter().any(|&v| !(v >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                    return Err(Error::Input(format!(
                        "alpha row {i} must have {m} nonnegative entries summing to 1"
                    )));
                }
            }
            Ok(rows.clone())
        }
    }
}

/// Integer counts summing to `total`, proportional to `weights`.
/// Leftover units go to the largest fractional parts, lowest index first on ties.
pub fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &j in order.iter().take(total.saturating_sub(assigned)) {
        counts[j] += 1;
    }
    counts
}

/// Builds `plan.num_clients` client datasets from per-distribution pools.
///
/// Each client draws its samples without replacement from each pool
/// (different clients may reuse pool samples), then splits them into
/// train/test stratified by origin.
pub fn partition_clients<R: Rng + ?Sized>(
    pools: &[Dataset],
    plan: &ClientPartitionPlan,
    rng: &mut R,
) -> Result<Vec<ClientData>> {
    let m = pools.len();
    if m == 0 {
        return Err(Error::Input("no pools".into()));
    }
    if plan.num_clients == 0 || plan.size_per_client == 0 {
        return Err(Error::Input("need at least one client with data".into()));
    }
    if !(0.0..1.0).contains(&plan.test_fraction) {
        return Err(Error::Input("test_fraction must lie in [0, 1)".into()));
    }
    let alphas = alpha_matrix(&plan.pattern, plan.num_clients, m, rng)?;
    let dim = pools[0].dim();

    let mut clients = Vec::with_capacity(plan.num_clients);
    for (id, alpha) in alphas.into_iter().enumerate() {
        let counts = largest_remainder(&alpha, plan.size_per_client);
        let mut train_parts = Vec::with_capacity(m);
        let mut test_parts = Vec::with_capacity(m);
        for (j, &count) in counts.iter().enumerate() {
            let pool = &pools[j];
            if count > pool.len() {
                return Err(Error::Input(format!(
                    "client {id} needs {count} samples from pool {j}, which holds {}",
                    pool.len()
                )));
            }
            let picked = sample(rng, pool.len(), count).into_vec();
            let n_test = (count as f64 * plan.test_fraction).round() as usize;
            let (test_idx, train_idx) = picked.split_at(n_test);
            train_parts.push(pool.subset(train_idx));
            test_parts.push(pool.subset(test_idx));
        }
        let train = Dataset::concat(&train_parts)?;
        let test = Dataset::concat(&test_parts)?;
        if train.is_empty() {
            return Err(Error::Input(format!("client {id} ends up with no training data")));
        }
        debug_assert_eq!(train.dim(), dim);
        clients.push(ClientData {
            id,
            train,
            test,
            true_alpha: alpha,
        });
    }
    Ok(clients)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gaussian::GaussianTask;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pools(n: usize) -> Vec<Dataset> {
        let t = GaussianTask::new(2, 3, 2, 4.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        (0..2).map(|j| t.sample_pool(j, n, &mut rng)).collect()
    }

    #[test]
    fn linear_pattern_counts() {
        let plan = ClientPartitionPlan {
            num_clients: 3,
            size_per_client: 100,
            pattern: AlphaPattern::Linear,
            test_fraction: 0.0,
        };
        let clients = partition_clients(&pools(200), &plan, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let rows: Vec<f64> = clients.iter().map(|c| c.true_alpha[0]).collect();
        assert_eq!(rows, vec![0.0, 0.5, 1.0]);
        let counts: Vec<Vec<usize>> = clients.iter().map(|c| c.train.origin_counts(2)).collect();
        assert_eq!(counts, vec![vec![0, 100], vec![50, 50], vec![100, 0]]);
    }

    #[test]
    fn identity_alpha_makes_pure_clients() {
        let plan = ClientPartitionPlan {
            num_clients: 2,
            size_per_client: 40,
            pattern: AlphaPattern::Fixed(vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
            test_fraction: 0.2,
        };
        let clients = partition_clients(&pools(100), &plan, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(clients[0].train.origins.iter().chain(&clients[0].test.origins).all(|&o| o == 0));
        assert!(clients[1].train.origins.iter().chain(&clients[1].test.origins).all(|&o| o == 1));
        assert_eq!(clients[0].train.len(), 32);
        assert_eq!(clients[0].test.len(), 8);
    }

    #[test]
    fn pool_exhaustion_is_an_input_error() {
        let plan = ClientPartitionPlan {
            num_clients: 1,
            size_per_client: 50,
            pattern: AlphaPattern::Fixed(vec![vec![1.0, 0.0]]),
            test_fraction: 0.2,
        };
        let r = partition_clients(&pools(20), &plan, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(matches!(r, Err(Error::Input(_))));
    }

    #[test]
    fn linear_pattern_rejects_three_components() {
        let r = alpha_matrix(&AlphaPattern::Linear, 4, 3, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(r.is_err());
    }

    proptest! {
        #[test]
        fn counts_always_hit_requested_size(seed in any::<u64>(), m in 1usize..6, size in 1usize..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows = alpha_matrix(&AlphaPattern::UniformRandom, 5, m, &mut rng).unwrap();
            for r in rows {
                prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(r.iter().all(|&v| v >= 0.0));
                let c = largest_remainder(&r, size);
                prop_assert_eq!(c.iter().sum::<usize>(), size);
                for (cj, aj) in c.iter().zip(&r) {
                    prop_assert!((*cj as f64 - aj * size as f64).abs() < 1.0 + 1e-9);
                }
            }
        }
    }
}

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};

/// Aggregation weights for one component.
#[derive(Debug, Clone, PartialEq)]
pub struct Betas {
    pub weights: Vec<f64>,
    /// No client holds any sample of this component.
    pub empty: bool,
}

/// `β_i^j = counts_{i,j} / Σ_i counts_{i,j}` over every client.
pub fn compute_betas(counts: &[Vec<usize>], j: usize) -> Betas {
    let column: Vec<usize> = counts.iter().map(|c| c.get(j).copied().unwrap_or(0)).collect();
    let total: usize = column.iter().sum();
    if total == 0 {
        return Betas {
            weights: vec![0.0; counts.len()],
            empty: true,
        };
    }
    Betas {
        weights: column.iter().map(|&c| c as f64 / total as f64).collect(),
        empty: false,
    }
}

/// `β_k / Σ β_k` over a contributing subset, in the given order.
pub fn normalize_over(betas: &[f64], subset: &[usize]) -> Vec<f64> {
    let total: f64 = subset.iter().map(|&k| betas[k]).sum();
    if total <= 0.0 {
        return vec![0.0; subset.len()];
    }
    subset.iter().map(|&k| betas[k] / total).collect()
}

/// `k` distinct client ids drawn uniformly, returned ascending.
pub fn select_clients<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if k == 0 || k > n {
        return Err(Error::Input(format!("cannot select {k} of {n} clients")));
    }
    let mut ids = sample(rng, n, k).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Convex combination of congruent flat parameter vectors.
///
/// Written as `p_0 + Σ_{k>0} w_k (p_k - p_0)` and reduced in the given order,
/// so a single contributor or identical contributors come back bit-exact.
pub fn weighted_average(params: &[&[f64]], weights: &[f64]) -> Result<Vec<f64>> {
    if params.is_empty() || params.len() != weights.len() {
        return Err(Error::Contract(format!(
            "{} parameter sets with {} weights",
            params.len(),
            weights.len()
        )));
    }
    let len = params[0].len();
    if params.iter().any(|p| p.len() != len) {
        return Err(Error::Contract("aggregating incongruent parameter sets".into()));
    }
    let anchor = params[0];
    let mut out = anchor.to_vec();
    for (p, &w) in params.iter().zip(weights).skip(1) {
        for ((o, &a), &v) in out.iter_mut().zip(anchor).zip(p.iter()) {
            *o += w * (v - a);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn betas_from_counts() {
        let b = compute_betas(&[vec![100, 3], vec![0, 1]], 0);
        assert_eq!(b.weights, vec![1.0, 0.0]);
        // α = 0.5 on sizes 100 and 300
        let b = compute_betas(&[vec![50, 50], vec![150, 150]], 1);
        assert_eq!(b.weights, vec![0.25, 0.75]);
        assert_eq!(compute_betas(&[vec![7, 0]], 0).weights, vec![1.0]);
        let e = compute_betas(&[vec![7, 0], vec![2, 0]], 1);
        assert!(e.empty);
    }

    #[test]
    fn selection_covers_everyone_when_k_equals_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_clients(6, 6, &mut rng).unwrap(), (0..6).collect::<Vec<_>>());
        assert!(select_clients(3, 4, &mut rng).is_err());
        let a = select_clients(20, 5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = select_clients(20, 5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn selection_frequency_is_uniform() {
        let (n, k, rounds) = (10usize, 3usize, 10_000usize);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut hits = vec![0usize; n];
        for _ in 0..rounds {
            for i in select_clients(n, k, &mut rng).unwrap() {
                hits[i] += 1;
            }
        }
        let p = k as f64 / n as f64;
        let mean = rounds as f64 * p;
        let sd = (rounds as f64 * p * (1.0 - p)).sqrt();
        for h in hits {
            assert!((h as f64 - mean).abs() <= 3.0 * sd, "{h} vs {mean}");
        }
    }

    #[test]
    fn single_and_identical_contributors_are_exact() {
        let p = [0.1, -3.3, 7.25e-9];
        assert_eq!(weighted_average(&[&p], &[1.0]).unwrap(), p.to_vec());
        let out = weighted_average(&[&p, &p, &p], &[0.1, 0.2, 0.7]).unwrap();
        assert_eq!(out, p.to_vec());
    }

    #[test]
    fn two_client_mix_matches_elementwise() {
        let p = [1.0, 2.0, -4.0];
        let q = [3.0, -2.0, 0.5];
        let out = weighted_average(&[&p, &q], &[0.25, 0.75]).unwrap();
        for i in 0..3 {
            let want = 0.25 * p[i] + 0.75 * q[i];
            assert!((out[i] - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
        assert!(matches!(
            weighted_average(&[&p, &q[..2]], &[0.5, 0.5]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn normalized_weights_sum_to_one() {
        let b = compute_betas(&[vec![3, 1], vec![5, 0], vec![11, 2], vec![0, 9]], 0);
        let w = normalize_over(&b.weights, &[0, 2]);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

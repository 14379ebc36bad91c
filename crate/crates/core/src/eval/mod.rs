//! Evaluation metrics and the clustered-FL baselines.

mod align;
mod fedavg;
mod ifca;

pub use align::{align, apply_alignment, confusion, MAX_ALIGN};
pub use fedavg::fedavg_reference;
pub use ifca::{ifca_baseline, BaselineOutput};

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierModel;
use crate::data::{ClientData, Dataset};
use crate::error::{Error, Result};
use crate::exec;
use crate::mixture::route;
use crate::rng::SeedTree;
use crate::vae::VaeModel;

/// `acc[j][k]`: learned expert `j` on the held-out pool of true component `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossEvalMatrix {
    pub acc: Vec<Vec<f64>>,
}

impl CrossEvalMatrix {
    /// `min_j (acc[j][π(j)] - max_{k ≠ π(j)} acc[j][k])`.
    pub fn specialization_gap(&self, perm: &[usize]) -> f64 {
        perm.iter()
            .enumerate()
            .map(|(j, &k)| {
                let other = self.acc[j]
                    .iter()
                    .enumerate()
                    .filter(|&(c, _)| c != k)
                    .map(|(_, &a)| a)
                    .fold(f64::NEG_INFINITY, f64::max);
                self.acc[j][k] - other
            })
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn cross_eval(experts: &[ClassifierModel], pools: &[Dataset]) -> Result<CrossEvalMatrix> {
    if pools.iter().any(Dataset::is_empty) {
        return Err(Error::Input("cross evaluation on an empty pool".into()));
    }
    let acc = experts
        .iter()
        .map(|g| pools.iter().map(|p| g.accuracy(&p.x, &p.labels)).collect())
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(CrossEvalMatrix { acc })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivisionError {
    pub rate: f64,
    /// Learned index → true index.
    pub alignment: Vec<usize>,
}

/// Fraction of samples whose aligned assignment differs from their origin,
/// under one alignment computed from the pooled confusion counts.
pub fn division_error_rate(pairs: &[(&[usize], &[usize])], m: usize) -> Result<DivisionError> {
    let c = confusion(pairs, m)?;
    let total: f64 = c.iter().flatten().sum();
    if total == 0.0 {
        return Err(Error::Input("no samples to score".into()));
    }
    let alignment = align(&c)?;
    let hit: f64 = alignment.iter().enumerate().map(|(j, &k)| c[j][k]).sum();
    Ok(DivisionError {
        rate: 1.0 - hit / total,
        alignment,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionMetrics {
    pub mae: f64,
    /// Rank correlation of the first component's proportion across clients;
    /// `None` when either side is constant.
    pub spearman: Option<f64>,
}

/// Compares already-aligned estimates against the truth.
pub fn proportion_metrics(estimated: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<ProportionMetrics> {
    if estimated.len() != truth.len() || estimated.is_empty() {
        return Err(Error::Shape(format!(
            "{} estimates for {} clients",
            estimated.len(),
            truth.len()
        )));
    }
    let mut total = 0.0;
    let mut cells = 0usize;
    for (e, t) in estimated.iter().zip(truth) {
        if e.len() != t.len() {
            return Err(Error::Shape("estimate and truth widths differ".into()));
        }
        total += e.iter().zip(t).map(|(a, b)| (a - b).abs()).sum::<f64>();
        cells += e.len();
    }
    let first = |rows: &[Vec<f64>]| rows.iter().map(|r| r[0]).collect::<Vec<_>>();
    Ok(ProportionMetrics {
        mae: total / cells as f64,
        spearman: spearman(&first(estimated), &first(truth)),
    })
}

/// Average ranks, ties sharing the mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut k = i;
        while k + 1 < idx.len() && v[idx[k + 1]] == v[idx[i]] {
            k += 1;
        }
        let mean = (i + k) as f64 / 2.0 + 1.0;
        for &p in &idx[i..=k] {
            r[p] = mean;
        }
        i = k + 1;
    }
    r
}

/// Spearman rank correlation, `None` for constant input.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

/// Raw proportions of each client's assignments.
pub fn assignment_proportions(assignments: &[usize], m: usize) -> Vec<f64> {
    let mut c = vec![0.0; m];
    for &a in assignments {
        c[a] += 1.0;
    }
    let n = assignments.len().max(1) as f64;
    c.into_iter().map(|v| v / n).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientAccuracy {
    /// `None` for clients without test data.
    pub per_client: Vec<Option<f64>>,
    pub mean: f64,
}

/// Routes each client's test samples to an expert by hard affinity argmax
/// under the client's priors and scores the routed predictions.
pub fn client_associated_accuracy(
    clients: &[ClientData],
    experts: &[ClassifierModel],
    vaes: &[VaeModel],
    priors: &[Vec<f64>],
    seeds: &SeedTree,
) -> Result<ClientAccuracy> {
    if priors.len() != clients.len() {
        return Err(Error::Shape(format!("{} prior rows for {} clients", priors.len(), clients.len())));
    }
    let routes = exec::map_range(clients.len(), |i| {
        let mut rng = seeds.rng("assoc", &[i as u64]);
        route(&clients[i].test.x, vaes, &priors[i], &mut rng)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    routed_accuracy(clients, experts, &routes)
}

/// Accuracy per client when sample `b` of client `i` goes to `routes[i][b]`.
pub fn routed_accuracy(
    clients: &[ClientData],
    experts: &[ClassifierModel],
    routes: &[Vec<usize>],
) -> Result<ClientAccuracy> {
    let per_client = clients
        .iter()
        .zip(routes)
        .map(|(c, r)| {
            if c.test.is_empty() {
                return Ok(None);
            }
            let (hits, total) = routed_hits(&c.test, experts, r)?
                .iter()
                .fold((0, 0), |(h, t), &(a, b)| (h + a, t + b));
            Ok(Some(hits as f64 / total as f64))
        })
        .collect::<Result<Vec<_>>>()?;
    let scored: Vec<f64> = per_client.iter().flatten().copied().collect();
    if scored.is_empty() {
        return Err(Error::Input("no client has test data".into()));
    }
    Ok(ClientAccuracy {
        mean: scored.iter().sum::<f64>() / scored.len() as f64,
        per_client,
    })
}

/// `(hits, total)` per expert over the samples routed to it.
fn routed_hits(
    data: &Dataset,
    experts: &[ClassifierModel],
    routes: &[usize],
) -> Result<Vec<(usize, usize)>> {
    if routes.len() != data.len() {
        return Err(Error::Shape(format!("{} routes for {} samples", routes.len(), data.len())));
    }
    let mut out = vec![(0, 0); experts.len()];
    for (j, g) in experts.iter().enumerate() {
        let idx: Vec<usize> = (0..data.len()).filter(|&b| routes[b] == j).collect();
        if idx.is_empty() {
            continue;
        }
        let sub = data.subset(&idx);
        let pred = g.predict(&sub.x)?;
        out[j] = (
            pred.iter().zip(&sub.labels).filter(|(p, y)| p == y).count(),
            idx.len(),
        );
    }
    Ok(out)
}

/// Per-client routing of train and test samples for one round.
#[derive(Debug, Clone)]
pub struct RoundRouting {
    pub train: Vec<Vec<usize>>,
    pub test: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundQuality {
    pub test_acc: Vec<Option<f64>>,
    pub alpha_mae: Option<f64>,
    pub division_error: Option<f64>,
}

/// Per-round log fields shared by every method.
///
/// Proportion and division metrics need a bijection between learned and true
/// components, so they are left empty when the counts differ.
pub fn round_quality(
    clients: &[ClientData],
    experts: &[ClassifierModel],
    routing: &RoundRouting,
) -> Result<RoundQuality> {
    let m = experts.len();
    let per_client = clients
        .iter()
        .zip(&routing.test)
        .map(|(c, r)| routed_hits(&c.test, experts, r))
        .collect::<Result<Vec<_>>>()?;
    let test_acc = (0..m)
        .map(|j| {
            let (h, t) = per_client
                .iter()
                .fold((0, 0), |(h, t), row| (h + row[j].0, t + row[j].1));
            (t > 0).then(|| h as f64 / t as f64)
        })
        .collect();

    let m_data = clients.first().map_or(0, |c| c.true_alpha.len());
    let (mut alpha_mae, mut division_error) = (None, None);
    if m == m_data && m <= MAX_ALIGN {
        let pairs: Vec<(&[usize], &[usize])> = clients
            .iter()
            .zip(&routing.train)
            .map(|(c, a)| (a.as_slice(), c.train.origins.as_slice()))
            .collect();
        let err = division_error_rate(&pairs, m)?;
        let est: Vec<Vec<f64>> = routing
            .train
            .iter()
            .map(|a| apply_alignment(&assignment_proportions(a, m), &err.alignment))
            .collect();
        let truth: Vec<Vec<f64>> = clients.iter().map(|c| c.true_alpha.clone()).collect();
        alpha_mae = Some(proportion_metrics(&est, &truth)?.mae);
        division_error = Some(err.rate);
    }
    Ok(RoundQuality {
        test_acc,
        alpha_mae,
        division_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn division_error_absorbs_relabeling() {
        let origins = vec![0, 0, 1, 1, 1, 0];
        assert_eq!(division_error_rate(&[(&origins, &origins)], 2).unwrap().rate, 0.0);
        let flipped: Vec<usize> = origins.iter().map(|o| 1 - o).collect();
        let e = division_error_rate(&[(&flipped, &origins)], 2).unwrap();
        assert_eq!(e.rate, 0.0);
        assert_eq!(e.alignment, vec![1, 0]);
    }

    #[test]
    fn random_assignment_is_near_half() {
        let n = 20_000;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let origins: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let assigned: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let rate = division_error_rate(&[(&assigned, &origins)], 2).unwrap().rate;
        let sd = (0.25 / n as f64).sqrt();
        assert!((rate - 0.5).abs() <= 3.0 * sd, "{rate}");
    }

    #[test]
    fn proportions_exact_and_compressed() {
        let truth: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 9.0, 1.0 - i as f64 / 9.0]).collect();
        let p = proportion_metrics(&truth, &truth).unwrap();
        assert_eq!(p.mae, 0.0);
        assert_eq!(p.spearman, Some(1.0));

        let swapped: Vec<Vec<f64>> = truth.iter().map(|r| vec![r[1], r[0]]).collect();
        let aligned: Vec<Vec<f64>> = swapped.iter().map(|r| apply_alignment(r, &[1, 0])).collect();
        assert_eq!(proportion_metrics(&aligned, &truth).unwrap().mae, 0.0);

        let squeezed: Vec<Vec<f64>> = truth
            .iter()
            .map(|r| vec![0.25 + 0.5 * r[0], 0.75 - 0.5 * r[0]])
            .collect();
        let p = proportion_metrics(&squeezed, &truth).unwrap();
        assert!((p.spearman.unwrap() - 1.0).abs() < 1e-12);
        assert!(p.mae > 0.0);

        let flat = vec![vec![0.5, 0.5]; 10];
        assert_eq!(proportion_metrics(&flat, &truth).unwrap().spearman, None);
    }

    #[test]
    fn spearman_handles_ties() {
        let s = spearman(&[1.0, 2.0, 2.0, 3.0], &[10.0, 20.0, 20.0, 30.0]).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
        let s = spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert!((s + 1.0).abs() < 1e-12);
    }
}

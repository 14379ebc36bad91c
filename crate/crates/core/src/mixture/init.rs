use super::kl::{kl_matrix, KlMatrix};
use crate::error::{Error, Result};
use crate::rng::SeedTree;
use crate::vae::VaeModel;

/// Greedy max-min selection over a directed distance matrix.
///
/// Starts from the lexicographically first pair `(p, q)` maximizing `D[p][q]`,
/// then repeatedly adds the index `i` maximizing `min_{j ∈ I} D[i][j]`,
/// lowest index on ties. Returned in selection order.
pub fn select_max_min(d: &KlMatrix, m: usize) -> Result<Vec<usize>> {
    let n = d.len();
    if m < 2 {
        return Err(Error::Input("need to select at least 2".into()));
    }
    if n < m {
        return Err(Error::Input(format!("cannot pick {m} of {n}")));
    }
    if d.entries.iter().any(|r| r.len() != n) {
        return Err(Error::Shape("distance matrix is not square".into()));
    }
    let mut best = (f64::NEG_INFINITY, 0, 1);
    for i in 0..n {
        for j in 0..n {
            if i != j && d.get(i, j) > best.0 {
                best = (d.get(i, j), i, j);
            }
        }
    }
    let mut chosen = vec![best.1, best.2];
    while chosen.len() < m {
        let mut pick = None;
        let mut pick_score = f64::NEG_INFINITY;
        for i in (0..n).filter(|i| !chosen.contains(i)) {
            let score = chosen.iter().map(|&j| d.get(i, j)).fold(f64::INFINITY, f64::min);
            if pick.is_none() || score > pick_score {
                pick = Some(i);
                pick_score = score;
            }
        }
        chosen.push(pick.expect("n >= m"));
    }
    Ok(chosen)
}

/// Estimates the divergence matrix of `vaes` and selects `m` of them.
pub fn stable_initialize(
    vaes: &[VaeModel],
    m: usize,
    samples: usize,
    seeds: &SeedTree,
) -> Result<(Vec<usize>, KlMatrix)> {
    if vaes.len() < m {
        return Err(Error::Input(format!("cannot pick {m} of {} VAEs", vaes.len())));
    }
    let d = kl_matrix(vaes, samples, seeds)?;
    Ok((select_max_min(&d, m)?, d))
}

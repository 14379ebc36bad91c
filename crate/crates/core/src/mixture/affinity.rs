use serde::{Deserialize, Serialize};

use crate::classifier::argmax;
use crate::error::{Error, Result};

/// Normalized per-component scores for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityVector(pub Vec<f64>);

impl AffinityVector {
    pub fn scores(&self) -> &[f64] {
        &self.0
    }

    /// Winning component, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

/// `softmax(-losses) ⊙ priors`, renormalized to sum to one.
///
/// Evaluated in log space with the maximum subtracted, which is the same
/// quantity but cannot underflow to an all-zero vector while any prior is
/// positive.
pub fn affinity(losses: &[f64], priors: &[f64]) -> Result<AffinityVector> {
    if losses.len() != priors.len() || losses.is_empty() {
        return Err(Error::Shape(format!(
            "{} losses vs {} priors",
            losses.len(),
            priors.len()
        )));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::Numeric("non-finite loss in affinity".into()));
    }
    if priors.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
        return Err(Error::Input("priors must be finite and nonnegative".into()));
    }
    let logits: Vec<f64> = losses
        .iter()
        .zip(priors)
        .map(|(&l, &p)| if p > 0.0 { -l + p.ln() } else { f64::NEG_INFINITY })
        .collect();
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return Err(Error::Contract("all priors are zero".into()));
    }
    let mut v: Vec<f64> = logits.iter().map(|&a| (a - mx).exp()).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    Ok(AffinityVector(v))
}

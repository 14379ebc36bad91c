use rand::Rng;
use serde::{Deserialize, Serialize};

use super::affinity::affinity;
use crate::error::{Error, Result};
use crate::exec;
use crate::nn::Matrix;
use crate::vae::{standard_normal, VaeModel};

/// A client's current hard split of its local data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivisionState {
    /// Winning component per local sample; empty before the first pass.
    pub assignments: Vec<usize>,
    pub counts: Vec<usize>,
    /// Smoothed priors fed to the next affinity computation.
    pub priors: Vec<f64>,
}

impl DivisionState {
    /// Starting point: no assignments and uniform priors.
    pub fn uniform(m: usize) -> Self {
        Self {
            assignments: Vec::new(),
            counts: vec![0; m],
            priors: vec![1.0 / m as f64; m],
        }
    }

    /// Counts and Laplace-smoothed priors `(c_j + λ) / (n + Mλ)` for given assignments.
    pub fn from_assignments(assignments: Vec<usize>, m: usize, smoothing: f64) -> Self {
        let mut counts = vec![0usize; m];
        for &a in &assignments {
            counts[a] += 1;
        }
        let denom = assignments.len() as f64 + m as f64 * smoothing;
        let priors = counts
            .iter()
            .map(|&c| (c as f64 + smoothing) / denom)
            .collect();
        Self {
            assignments,
            counts,
            priors,
        }
    }

    pub fn num_components(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Indices of samples assigned to component `j`.
    pub fn subset(&self, j: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == j)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Per-client audit record of a division pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivisionRecord {
    pub client_id: usize,
    pub counts: Vec<usize>,
    pub priors: Vec<f64>,
    pub alpha_hat: Vec<f64>,
}

impl DivisionState {
    pub fn record(&self, client_id: usize) -> DivisionRecord {
        DivisionRecord {
            client_id,
            counts: self.counts.clone(),
            priors: self.priors.clone(),
            alpha_hat: mixture_estimate(self),
        }
    }
}

/// Additive smoothing `λ` that keeps every prior at least `s` for a client
/// with `n` samples and `m` components: `λ = s·n / (1 - m·s)`.
pub fn smoothing_for_ratio_bound(s: f64, n: usize, m: usize) -> Result<f64> {
    if !(s >= 0.0 && s * (m as f64) < 1.0) {
        return Err(Error::Input(format!("need 0 <= s < 1/{m}, got {s}")));
    }
    Ok(s * n as f64 / (1.0 - m as f64 * s))
}

/// Hard affinity routing: the argmax component of every row under `priors`.
///
/// Every sample gets one noise vector, shared across components so that the
/// loss comparison is not dominated by sampling noise. A single component
/// takes every row without evaluating anything.
pub fn route<R: Rng + ?Sized>(
    data: &Matrix,
    vaes: &[VaeModel],
    priors: &[f64],
    rng: &mut R,
) -> Result<Vec<usize>> {
    let m = vaes.len();
    if m == 0 || priors.len() != m {
        return Err(Error::Shape(format!(
            "{} priors for {m} components",
            priors.len()
        )));
    }
    if m == 1 {
        return Ok(vec![0; data.rows()]);
    }
    let width = vaes.iter().map(VaeModel::latent_dim).max().expect("m >= 2");
    let eps = standard_normal(data.rows(), width, rng);
    let per_component = exec::map_slice(vaes, |v| v.sample_losses_with_eps(data, &eps));
    let losses = per_component.into_iter().collect::<Result<Vec<_>>>()?;
    let mut row = vec![0.0; m];
    (0..data.rows())
        .map(|i| {
            for (j, l) in losses.iter().enumerate() {
                row[j] = l[i];
            }
            Ok(affinity(&row, priors)?.argmax())
        })
        .collect()
}

/// One division pass over a client's data, followed by smoothed prior refresh.
pub fn divide_local<R: Rng + ?Sized>(
    data: &Matrix,
    vaes: &[VaeModel],
    previous: &DivisionState,
    smoothing: f64,
    rng: &mut R,
) -> Result<DivisionState> {
    let m = vaes.len();
    if m < 2 {
        return Err(Error::Input("division needs at least 2 components".into()));
    }
    if data.rows() == 0 {
        return Err(Error::Input("cannot divide an empty dataset".into()));
    }
    if previous.priors.len() != m {
        return Err(Error::Shape(format!(
            "previous state has {} priors for {m} components",
            previous.priors.len()
        )));
    }
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(Error::Input("smoothing must be finite and >= 0".into()));
    }
    let assignments = route(data, vaes, &previous.priors, rng)?;
    Ok(DivisionState::from_assignments(assignments, m, smoothing))
}

/// Raw proportions `counts_j / |D_i|`.
pub fn mixture_estimate(state: &DivisionState) -> Vec<f64> {
    let n = state.total();
    if n == 0 {
        return vec![0.0; state.counts.len()];
    }
    state.counts.iter().map(|&c| c as f64 / n as f64).collect()
}

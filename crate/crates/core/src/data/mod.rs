//! Inherent distributions, client mixtures with known ground truth, and
//! on-disk dataset formats.

pub mod cache;
pub mod gaussian;
pub mod idx;
pub mod partition;
pub mod rotate;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;

pub use cache::{CacheSidecar, DatasetBundle};
pub use gaussian::{gen_gaussian_task, GaussianTask, InherentPools};
pub use idx::{load_idx, parse_idx, IdxData};
pub use partition::{partition_clients, AlphaPattern, ClientData, ClientPartitionPlan};
pub use rotate::{rotate, rotate_flat, rotated_pools};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledSample<'a> {
    pub x: &'a [f64],
    pub y: usize,
    /// Index of the inherent distribution that generated the sample. Evaluation only.
    pub origin: usize,
}

/// Column-oriented labeled samples with ground-truth origins.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub labels: Vec<usize>,
    pub origins: Vec<usize>,
}

impl Dataset {
    pub fn new(x: Matrix, labels: Vec<usize>, origins: Vec<usize>) -> Result<Self> {
        if labels.len() != x.rows() || origins.len() != x.rows() {
            return Err(Error::Shape(format!(
                "{} rows, {} labels, {} origins",
                x.rows(),
                labels.len(),
                origins.len()
            )));
        }
        Ok(Self { x, labels, origins })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            x: Matrix::zeros(0, dim),
            labels: Vec::new(),
            origins: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn sample(&self, i: usize) -> LabeledSample<'_> {
        LabeledSample {
            x: self.x.row(i),
            y: self.labels[i],
            origin: self.origins[i],
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            origins: indices.iter().map(|&i| self.origins[i]).collect(),
        }
    }

    pub fn concat(parts: &[Dataset]) -> Result<Dataset> {
        let dim = parts.first().map_or(0, Dataset::dim);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut origins = Vec::new();
        for p in parts {
            if p.dim() != dim {
                return Err(Error::Shape("datasets differ in dimension".into()));
            }
            data.extend_from_slice(p.x.as_slice());
            labels.extend_from_slice(&p.labels);
            origins.extend_from_slice(&p.origins);
        }
        Dataset::new(Matrix::from_vec(labels.len(), dim, data)?, labels, origins)
    }

    /// Count of samples per origin, for `m` origins.
    pub fn origin_counts(&self, m: usize) -> Vec<usize> {
        let mut c = vec![0; m];
        for &o in &self.origins {
            if o < m {
                c[o] += 1;
            }
        }
        c
    }
}

/// How each inherent distribution was produced; recorded in dataset sidecars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InherentSpec {
    GaussianTask {
        index: usize,
        /// Class means, one per class.
        means: Vec<Vec<f64>>,
    },
    RotatedImages {
        index: usize,
        quarter_turns: u8,
    },
}

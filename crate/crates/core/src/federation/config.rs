use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierConfig;
use crate::error::{Error, Result};
use crate::nn::OptimizerConfig;
use crate::vae::VaeConfig;

/// Which model family a client trains on each nonempty subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdatePolicy {
    VaeOnly,
    ClfOnly,
    #[default]
    Both,
}

impl UpdatePolicy {
    pub fn trains_vae(self) -> bool {
        matches!(self, Self::VaeOnly | Self::Both)
    }

    pub fn trains_classifier(self) -> bool {
        matches!(self, Self::ClfOnly | Self::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    /// Number of inherent components `M` the server models.
    pub num_components: usize,
    /// `K`, clients sampled per round.
    pub clients_per_round: usize,
    /// `T`.
    pub rounds: usize,
    /// `τ`; division is refreshed at rounds `0, τ, 2τ, ...`.
    pub division_interval: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub update_policy: UpdatePolicy,
    /// Additive prior smoothing `λ`.
    pub smoothing: f64,
    /// Monte-Carlo sample count for the VAE divergence matrix.
    pub kl_samples: usize,
    pub vae: VaeConfig,
    pub classifier: ClassifierConfig,
    pub vae_optimizer: OptimizerConfig,
    pub classifier_optimizer: OptimizerConfig,
    pub seed: u64,
}

impl FederationConfig {
    /// Checks everything that does not depend on the client population.
    pub fn validate(&self) -> Result<()> {
        if self.num_components == 0 {
            return Err(Error::config("federation.num_components", "must be >= 1"));
        }
        if self.clients_per_round == 0 {
            return Err(Error::config("federation.clients_per_round", "must be >= 1"));
        }
        if self.rounds == 0 {
            return Err(Error::config("federation.rounds", "must be >= 1"));
        }
        if self.division_interval == 0 {
            return Err(Error::config("federation.division_interval", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("federation.batch_size", "must be >= 1"));
        }
        if !(self.smoothing >= 0.0 && self.smoothing.is_finite()) {
            return Err(Error::config("mixture.smoothing", "must be finite and >= 0"));
        }
        if self.kl_samples == 0 {
            return Err(Error::config("mixture.kl_samples", "must be >= 1"));
        }
        self.vae.validate()?;
        if self.classifier.data_dim != self.vae.data_dim {
            return Err(Error::config(
                "model.classifier.data_dim",
                "must equal the VAE data_dim",
            ));
        }
        self.vae_optimizer.validate()?;
        self.classifier_optimizer.validate()?;
        Ok(())
    }

    /// Checks against a concrete population of `n` clients.
    pub fn validate_for(&self, n: usize) -> Result<()> {
        self.validate()?;
        if n == 0 {
            return Err(Error::config("dataset.num_clients", "must be >= 1"));
        }
        if self.clients_per_round > n {
            return Err(Error::config(
                "federation.clients_per_round",
                format!("K = {} exceeds N = {n}", self.clients_per_round),
            ));
        }
        if self.num_components > n {
            return Err(Error::config(
                "federation.num_components",
                format!("M = {} exceeds N = {n}", self.num_components),
            ));
        }
        Ok(())
    }

    pub fn is_division_round(&self, t: usize) -> bool {
        t % self.division_interval == 0
    }
}

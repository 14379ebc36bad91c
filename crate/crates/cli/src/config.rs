//! Experiment configuration file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use fedgmi::classifier::ClassifierConfig;
use fedgmi::data::AlphaPattern;
use fedgmi::federation::{FederationConfig, UpdatePolicy};
use fedgmi::nn::{Activation, OptimizerConfig, OptimizerKind};
use fedgmi::vae::{Likelihood, VaeConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetSection,
    pub federation: FederationSection,
    pub model: ModelSection,
    pub optimizer: OptimizerSection,
    pub mixture: MixtureSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub num_clients: usize,
    pub size_per_client: usize,
    pub pattern: AlphaPattern,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    pub source: DataSource,
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Interleaved Gaussian class clusters, one ring per component.
    Gaussian {
        components: usize,
        classes: usize,
        data_dim: usize,
        separation: f64,
        pool_size: usize,
        test_pool_size: usize,
    },
    /// IDX images turned by a fixed number of quarter turns per component.
    RotatedIdx {
        images: PathBuf,
        labels: PathBuf,
        /// Base images per pool; the next block of the same size becomes the test pools.
        base_images: usize,
        quarter_turns: Vec<u8>,
    },
}

impl DataSource {
    pub fn components(&self) -> usize {
        match self {
            Self::Gaussian { components, .. } => *components,
            Self::RotatedIdx { quarter_turns, .. } => quarter_turns.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationSection {
    pub num_components: usize,
    pub clients_per_round: usize,
    pub rounds: usize,
    pub division_interval: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    #[serde(default)]
    pub update_policy: UpdatePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub data_dim: usize,
    pub num_classes: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    #[serde(default = "default_vae_activation")]
    pub hidden_activation: Activation,
    pub decoder_likelihood: Likelihood,
    #[serde(default = "one")]
    pub kl_weight: f64,
    #[serde(default)]
    pub free_bits: f64,
    #[serde(default)]
    pub classifier_hidden: Vec<usize>,
    #[serde(default = "default_clf_activation")]
    pub classifier_activation: Activation,
}

fn default_vae_activation() -> Activation {
    Activation::Tanh
}

fn default_clf_activation() -> Activation {
    Activation::Relu
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    #[serde(default = "default_kind")]
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Classifier learning rate; `lr` when absent.
    pub classifier_lr: Option<f64>,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_kind() -> OptimizerKind {
    OptimizerKind::Adam
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSection {
    pub smoothing: f64,
    pub kl_samples: usize,
}

impl ExperimentConfig {
    /// Reads a TOML config, or the config echoed in a run manifest.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            let mut manifest: serde_json::Value = serde_json::from_str(&text)
                .with_context(|| format!("parsing manifest {}", path.display()))?;
            serde_json::from_value(manifest["config"].take())
                .with_context(|| format!("reading the config echo in {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Field-level checks; the federation config runs its own on conversion.
    pub fn validate(&self) -> anyhow::Result<()> {
        let d = &self.dataset;
        if d.num_clients == 0 {
            bail!("dataset.num_clients: must be >= 1");
        }
        if d.size_per_client == 0 {
            bail!("dataset.size_per_client: must be >= 1");
        }
        if !(0.0..1.0).contains(&d.test_fraction) {
            bail!("dataset.test_fraction: must lie in [0, 1)");
        }
        match &d.source {
            DataSource::Gaussian {
                components,
                classes,
                data_dim,
                separation,
                ..
            } => {
                if *components == 0 {
                    bail!("dataset.source.components: must be >= 1");
                }
                if *classes < 2 {
                    bail!("dataset.source.classes: must be >= 2");
                }
                if *data_dim != self.model.data_dim {
                    bail!("dataset.source.data_dim: must equal model.data_dim");
                }
                if *classes != self.model.num_classes {
                    bail!("dataset.source.classes: must equal model.num_classes");
                }
                if !(separation.is_finite() && *separation >= 0.0) {
                    bail!("dataset.source.separation: must be finite and >= 0");
                }
            }
            DataSource::RotatedIdx {
                base_images,
                quarter_turns,
                ..
            } => {
                if *base_images == 0 {
                    bail!("dataset.source.base_images: must be >= 1");
                }
                if quarter_turns.is_empty() || quarter_turns.iter().any(|&t| t > 3) {
                    bail!("dataset.source.quarter_turns: need at least one value in 0..=3");
                }
            }
        }
        if self.federation.clients_per_round > d.num_clients {
            bail!(
                "federation.clients_per_round: K = {} exceeds dataset.num_clients = {}",
                self.federation.clients_per_round,
                d.num_clients
            );
        }
        self.federation_config()?.validate_for(d.num_clients)?;
        Ok(())
    }

    pub fn federation_config(&self) -> anyhow::Result<FederationConfig> {
        let f = &self.federation;
        let m = &self.model;
        let o = &self.optimizer;
        let opt = |lr: f64| OptimizerConfig {
            kind: o.kind,
            lr,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
        };
        Ok(FederationConfig {
            num_components: f.num_components,
            clients_per_round: f.clients_per_round,
            rounds: f.rounds,
            division_interval: f.division_interval,
            local_epochs: f.local_epochs,
            batch_size: f.batch_size,
            pretrain_epochs: f.pretrain_epochs,
            update_policy: f.update_policy,
            smoothing: self.mixture.smoothing,
            kl_samples: self.mixture.kl_samples,
            vae: VaeConfig {
                data_dim: m.data_dim,
                latent_dim: m.latent_dim,
                hidden: m.hidden.clone(),
                hidden_activation: m.hidden_activation,
                likelihood: m.decoder_likelihood,
                kl_weight: m.kl_weight,
                free_bits: m.free_bits,
            },
            classifier: ClassifierConfig {
                data_dim: m.data_dim,
                num_classes: m.num_classes,
                hidden: m.classifier_hidden.clone(),
                hidden_activation: m.classifier_activation,
            },
            vae_optimizer: opt(o.lr),
            classifier_optimizer: opt(o.classifier_lr.unwrap_or(o.lr)),
            seed: self.seed,
        })
    }
}

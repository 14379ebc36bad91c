#![allow(dead_code)]

use fedgmi::classifier::ClassifierConfig;
use fedgmi::data::{
    gen_gaussian_task, partition_clients, AlphaPattern, ClientData, ClientPartitionPlan,
    InherentPools,
};
use fedgmi::federation::{FederationConfig, UpdatePolicy};
use fedgmi::nn::{Activation, OptimizerConfig};
use fedgmi::vae::{Likelihood, VaeConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Two interleaved three-class rings, the synthetic benchmark setup.
pub fn ring_task(
    seed: u64,
    num_clients: usize,
    size: usize,
    pattern: AlphaPattern,
) -> (Vec<ClientData>, InherentPools) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, pools) = gen_gaussian_task(2, 3, 2, 8.0, 3000, 1000, &mut rng).unwrap();
    let plan = ClientPartitionPlan {
        num_clients,
        size_per_client: size,
        pattern,
        test_fraction: 0.2,
    };
    let clients = partition_clients(&pools.train, &plan, &mut rng).unwrap();
    (clients, pools)
}

pub fn ring_config(seed: u64) -> FederationConfig {
    FederationConfig {
        num_components: 2,
        clients_per_round: 5,
        rounds: 30,
        division_interval: 5,
        local_epochs: 10,
        batch_size: 32,
        pretrain_epochs: 300,
        update_policy: UpdatePolicy::Both,
        smoothing: 1.0,
        kl_samples: 256,
        vae: VaeConfig {
            data_dim: 2,
            latent_dim: 1,
            hidden: vec![16, 16],
            hidden_activation: Activation::Tanh,
            likelihood: Likelihood::UnitGaussian,
            kl_weight: 1.0,
            free_bits: 0.0,
        },
        classifier: ClassifierConfig {
            data_dim: 2,
            num_classes: 3,
            hidden: vec![],
            hidden_activation: Activation::Relu,
        },
        vae_optimizer: OptimizerConfig::adam(0.005),
        classifier_optimizer: OptimizerConfig::adam(0.01),
        seed,
    }
}

/// Cheap configuration for loop-accounting tests.
pub fn tiny_config(seed: u64) -> FederationConfig {
    let mut c = ring_config(seed);
    c.rounds = 3;
    c.division_interval = 2;
    c.local_epochs = 1;
    c.pretrain_epochs = 2;
    c.kl_samples = 16;
    c.vae.hidden = vec![4];
    c
}

/// Two groups of pure clients with flipped labels: identical inputs, opposite targets.
pub fn flipped_groups(seed: u64, num_clients: usize, size: usize) -> Vec<ClientData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, pools) = gen_gaussian_task(2, 2, 2, 8.0, 2000, 500, &mut rng).unwrap();
    let rows = (0..num_clients)
        .map(|i| if i % 2 == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] })
        .collect();
    let plan = ClientPartitionPlan {
        num_clients,
        size_per_client: size,
        pattern: AlphaPattern::Fixed(rows),
        test_fraction: 0.2,
    };
    partition_clients(&pools.train, &plan, &mut rng).unwrap()
}

pub fn flipped_config(seed: u64) -> FederationConfig {
    let mut c = ring_config(seed);
    c.clients_per_round = 5;
    c.rounds = 20;
    c.local_epochs = 2;
    c.classifier.num_classes = 2;
    c.classifier_optimizer = OptimizerConfig::adam(0.05);
    c
}

use crate::classifier::{argmax, ClassifierModel};
use crate::data::ClientData;
use crate::error::Result;
use crate::exec;
use crate::federation::{
    check_clients, initial_experts, param_bytes, select_clients, weighted_average,
    FederationConfig, RoundMetrics,
};
use crate::nn::OptimizerState;
use crate::rng::SeedTree;

use super::{round_quality, RoundRouting};

/// Result of a classifier-only baseline run.
#[derive(Debug, Clone)]
pub struct BaselineOutput {
    pub experts: Vec<ClassifierModel>,
    /// Cluster of every client after the last round.
    pub membership: Vec<usize>,
    pub metrics: Vec<RoundMetrics>,
}

/// Cluster with the lowest mean loss on the client's full training set.
fn best_cluster(experts: &[ClassifierModel], client: &ClientData) -> Result<usize> {
    let neg: Vec<f64> = experts
        .iter()
        .map(|g| g.loss(&client.train.x, &client.train.labels).map(|l| -l))
        .collect::<Result<_>>()?;
    Ok(argmax(&neg))
}

/// Iterative federated clustering: each selected client joins the cluster
/// whose classifier fits its data best and trains that classifier; clusters
/// are averaged with local dataset sizes as weights.
///
/// The reported proportion estimate of a client is the one-hot indicator of
/// its current cluster.
pub fn ifca_baseline(config: &FederationConfig, clients: &[ClientData]) -> Result<BaselineOutput> {
    check_clients(config, clients)?;
    let n = clients.len();
    let m = config.num_components;
    let seeds = SeedTree::new(config.seed);
    let mut experts = initial_experts(config, &seeds)?;
    let clf_bytes = param_bytes(experts[0].param_count());

    let mut metrics = Vec::with_capacity(config.rounds);
    let mut membership = vec![0; n];
    for t in 0..config.rounds {
        let selected = select_clients(n, config.clients_per_round, &mut seeds.rng("select", &[t as u64]))?;
        let updates = exec::map_slice(&selected, |&i| {
            let c = &clients[i];
            let k = best_cluster(&experts, c)?;
            let mut g = experts[k].clone();
            let mut opt = OptimizerState::new(config.classifier_optimizer);
            let mut rng = seeds.rng("local", &[t as u64, i as u64]);
            g.fit(&c.train.x, &c.train.labels, config.local_epochs, config.batch_size, &mut opt, &mut rng)?;
            let loss = g.loss(&c.train.x, &c.train.labels)?;
            Ok((i, k, g, loss))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

        let mut train_loss = vec![None; m];
        for (k, slot) in train_loss.iter_mut().enumerate() {
            let members: Vec<_> = updates.iter().filter(|u| u.1 == k).collect();
            if members.is_empty() {
                continue;
            }
            let total: usize = members.iter().map(|u| clients[u.0].train.len()).sum();
            let w: Vec<f64> = members
                .iter()
                .map(|u| clients[u.0].train.len() as f64 / total as f64)
                .collect();
            let flats: Vec<Vec<f64>> = members.iter().map(|u| u.2.net().to_flat()).collect();
            let refs: Vec<&[f64]> = flats.iter().map(Vec::as_slice).collect();
            let mut net = experts[k].net().clone();
            net.set_flat(&weighted_average(&refs, &w)?)?;
            experts[k] = ClassifierModel::from_net(net)?;
            *slot = Some(members.iter().zip(&w).map(|(u, w)| w * u.3).sum());
        }

        membership = exec::map_slice(clients, |c| best_cluster(&experts, c))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let routing = RoundRouting {
            train: clients.iter().zip(&membership).map(|(c, &k)| vec![k; c.train.len()]).collect(),
            test: clients.iter().zip(&membership).map(|(c, &k)| vec![k; c.test.len()]).collect(),
        };
        let q = round_quality(clients, &experts, &routing)?;
        metrics.push(RoundMetrics {
            round: t,
            division_event: false,
            train_loss,
            test_acc: q.test_acc,
            alpha_mae: q.alpha_mae,
            division_error: q.division_error,
            bytes_up: selected.len() as u64 * clf_bytes,
            bytes_down: selected.len() as u64 * m as u64 * clf_bytes,
        });
    }
    Ok(BaselineOutput {
        experts,
        membership,
        metrics,
    })
}

use crate::classifier::ClassifierModel;
use crate::data::ClientData;
use crate::error::{Error, Result};
use crate::federation::{param_bytes, select_clients, FederationConfig, RoundMetrics};
use crate::nn::OptimizerState;
use crate::rng::SeedTree;

use super::{round_quality, BaselineOutput, RoundRouting};

/// Plain federated averaging of a single classifier, size-weighted.
///
/// Kept separate from the clustering baseline so the two can be checked
/// against each other.
pub fn fedavg_reference(config: &FederationConfig, clients: &[ClientData]) -> Result<BaselineOutput> {
    config.validate_for(clients.len())?;
    if clients.iter().any(|c| c.train.is_empty()) {
        return Err(Error::Input("every client needs training data".into()));
    }
    let seeds = SeedTree::new(config.seed);
    let mut global = ClassifierModel::new(&config.classifier, &mut seeds.rng("expert_init", &[0]))?;
    let bytes = param_bytes(global.param_count());

    let mut metrics = Vec::with_capacity(config.rounds);
    for t in 0..config.rounds {
        let selected = select_clients(clients.len(), config.clients_per_round, &mut seeds.rng("select", &[t as u64]))?;
        let mut locals = Vec::with_capacity(selected.len());
        for &i in &selected {
            let c = &clients[i];
            let mut g = global.clone();
            let mut opt = OptimizerState::new(config.classifier_optimizer);
            let mut rng = seeds.rng("local", &[t as u64, i as u64]);
            g.fit(&c.train.x, &c.train.labels, config.local_epochs, config.batch_size, &mut opt, &mut rng)?;
            let loss = g.loss(&c.train.x, &c.train.labels)?;
            locals.push((c.train.len(), g.net().to_flat(), loss));
        }

        let total: usize = locals.iter().map(|l| l.0).sum();
        let anchor = locals[0].1.clone();
        let mut merged = anchor.clone();
        let mut loss = 0.0;
        for (k, (size, flat, l)) in locals.iter().enumerate() {
            let w = *size as f64 / total as f64;
            loss += w * l;
            if k == 0 {
                continue;
            }
            for ((o, a), v) in merged.iter_mut().zip(&anchor).zip(flat) {
                *o += w * (v - a);
            }
        }
        let mut net = global.net().clone();
        net.set_flat(&merged)?;
        global = ClassifierModel::from_net(net)?;

        let routing = RoundRouting {
            train: clients.iter().map(|c| vec![0; c.train.len()]).collect(),
            test: clients.iter().map(|c| vec![0; c.test.len()]).collect(),
        };
        let q = round_quality(clients, std::slice::from_ref(&global), &routing)?;
        metrics.push(RoundMetrics {
            round: t,
            division_event: false,
            train_loss: vec![Some(loss)],
            test_acc: q.test_acc,
            alpha_mae: q.alpha_mae,
            division_error: q.division_error,
            bytes_up: selected.len() as u64 * bytes,
            bytes_down: selected.len() as u64 * bytes,
        });
    }
    Ok(BaselineOutput {
        experts: vec![global],
        membership: vec![0; clients.len()],
        metrics,
    })
}

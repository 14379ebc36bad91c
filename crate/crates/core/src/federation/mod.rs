//! The federated training loop: local VAE pretraining, stable initialization,
//! periodic data division, client sampling, local dual training and weighted
//! aggregation.

mod aggregate;
mod config;
mod metrics;

pub use aggregate::{compute_betas, normalize_over, select_clients, weighted_average, Betas};
pub use config::{FederationConfig, UpdatePolicy};
pub use metrics::{param_bytes, RoundMetrics, Traffic};

use log::{debug, info};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierModel;
use crate::data::ClientData;
use crate::error::{Error, Result};
use crate::eval::{round_quality, RoundRouting};
use crate::exec;
use crate::mixture::{
    divide_local, route, stable_initialize, DivisionRecord, DivisionState, KlMatrix,
};
use crate::nn::OptimizerState;
use crate::rng::SeedTree;
use crate::vae::{VaeLoss, VaeModel};

/// Per-client algorithm state. Ground truth stays in [`ClientData`].
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub division: DivisionState,
    /// Pretrained local VAE; dropped once initialization is done.
    pub local_vae: Option<VaeModel>,
}

#[derive(Debug, Clone)]
pub struct ServerState {
    pub vaes: Vec<VaeModel>,
    pub experts: Vec<ClassifierModel>,
    /// Completed rounds.
    pub round: usize,
}

impl ServerState {
    pub fn num_components(&self) -> usize {
        self.vaes.len()
    }
}

/// Round plan: who trains and with what per-component weights.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundPlan {
    pub selected: Vec<usize>,
    /// `betas[j]` over all clients.
    pub betas: Vec<Betas>,
}

/// One client's contribution for one component.
#[derive(Debug, Clone)]
pub struct ComponentUpdate {
    pub component: usize,
    pub count: usize,
    pub vae: Option<VaeModel>,
    pub classifier: Option<ClassifierModel>,
    /// Post-update loss on the client's subset.
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct LocalUpdate {
    pub client_id: usize,
    pub components: Vec<ComponentUpdate>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitReport {
    pub selected: Vec<usize>,
    pub kl: KlMatrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DivisionSnapshot {
    pub round: usize,
    pub records: Vec<DivisionRecord>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    pub metrics: Vec<RoundMetrics>,
    pub divisions: Vec<DivisionSnapshot>,
    pub init: Option<InitReport>,
}

pub(crate) fn check_clients(config: &FederationConfig, clients: &[ClientData]) -> Result<()> {
    config.validate_for(clients.len())?;
    for (i, c) in clients.iter().enumerate() {
        if c.id != i {
            return Err(Error::Input(format!("client at position {i} has id {}", c.id)));
        }
        if c.train.is_empty() {
            return Err(Error::Input(format!("client {i} has no training data")));
        }
        if c.train.dim() != config.vae.data_dim {
            return Err(Error::Shape(format!(
                "client {i} data has dim {}, models expect {}",
                c.train.dim(),
                config.vae.data_dim
            )));
        }
    }
    Ok(())
}

/// The common starting point of every local VAE.
pub fn initial_vae(config: &FederationConfig, seeds: &SeedTree) -> Result<VaeModel> {
    VaeModel::new(&config.vae, &mut seeds.rng("vae_init", &[]))
}

/// Fresh expert classifiers, one stream per component.
pub fn initial_experts(config: &FederationConfig, seeds: &SeedTree) -> Result<Vec<ClassifierModel>> {
    (0..config.num_components)
        .map(|j| ClassifierModel::new(&config.classifier, &mut seeds.rng("expert_init", &[j as u64])))
        .collect()
}

/// Trains one VAE per client on its full local data from a shared starting point.
pub fn pretrain_local_vaes(
    config: &FederationConfig,
    clients: &[ClientData],
    seeds: &SeedTree,
) -> Result<Vec<(VaeModel, Vec<VaeLoss>)>> {
    let init = initial_vae(config, seeds)?;
    exec::map_slice(clients, |c| {
        let mut vae = init.clone();
        let mut opt = OptimizerState::new(config.vae_optimizer);
        let mut rng = seeds.rng("pretrain", &[c.id as u64]);
        let losses = vae.fit(
            &c.train.x,
            config.pretrain_epochs,
            config.batch_size,
            &mut opt,
            &mut rng,
        )?;
        Ok((vae, losses))
    })
    .into_iter()
    .collect()
}

/// Trains copies of the global models on each nonempty local subset.
pub fn local_update<R: Rng + ?Sized>(
    config: &FederationConfig,
    client: &ClientData,
    division: &DivisionState,
    server: &ServerState,
    rng: &mut R,
) -> Result<LocalUpdate> {
    if division.assignments.len() != client.train.len() {
        return Err(Error::Contract(format!(
            "client {} has {} assignments for {} samples",
            client.id,
            division.assignments.len(),
            client.train.len()
        )));
    }
    let policy = config.update_policy;
    let mut components = Vec::new();
    for j in 0..server.num_components() {
        let idx = division.subset(j);
        if idx.is_empty() {
            continue;
        }
        let subset = client.train.subset(&idx);
        let mut vae = None;
        let mut classifier = None;
        let mut loss = 0.0;
        if policy.trains_vae() {
            let mut v = server.vaes[j].clone();
            let mut opt = OptimizerState::new(config.vae_optimizer);
            v.fit(&subset.x, config.local_epochs, config.batch_size, &mut opt, rng)?;
            loss = v.elbo_loss(&subset.x, rng)?.total;
            vae = Some(v);
        }
        if policy.trains_classifier() {
            let mut g = server.experts[j].clone();
            let mut opt = OptimizerState::new(config.classifier_optimizer);
            g.fit(
                &subset.x,
                &subset.labels,
                config.local_epochs,
                config.batch_size,
                &mut opt,
                rng,
            )?;
            loss = g.loss(&subset.x, &subset.labels)?;
            classifier = Some(g);
        }
        components.push(ComponentUpdate {
            component: j,
            count: idx.len(),
            vae,
            classifier,
            loss,
        });
    }
    Ok(LocalUpdate {
        client_id: client.id,
        components,
    })
}

/// β-weighted merge of local updates into a new server state.
///
/// Weights are the global betas renormalized over the clients that actually
/// returned an update for the component. Components nobody trained are
/// carried forward unchanged. Also returns the weighted training loss per
/// component.
pub fn aggregate(
    server: &ServerState,
    updates: &[LocalUpdate],
    plan: &RoundPlan,
) -> Result<(ServerState, Vec<Option<f64>>)> {
    let m = server.num_components();
    if plan.betas.len() != m {
        return Err(Error::Contract(format!("{} beta columns for {m} components", plan.betas.len())));
    }
    let mut ordered: Vec<&LocalUpdate> = updates.iter().collect();
    ordered.sort_by_key(|u| u.client_id);

    let mut next = server.clone();
    let mut losses = vec![None; m];
    for j in 0..m {
        let contrib: Vec<(usize, &ComponentUpdate)> = ordered
            .iter()
            .filter_map(|u| {
                u.components
                    .iter()
                    .find(|c| c.component == j)
                    .map(|c| (u.client_id, c))
            })
            .collect();
        if contrib.is_empty() {
            continue;
        }
        let ids: Vec<usize> = contrib.iter().map(|(i, _)| *i).collect();
        let w = normalize_over(&plan.betas[j].weights, &ids);
        losses[j] = Some(contrib.iter().zip(&w).map(|((_, c), w)| w * c.loss).sum());

        let vaes: Vec<(&VaeModel, f64)> = contrib
            .iter()
            .zip(&w)
            .filter_map(|((_, c), &w)| c.vae.as_ref().map(|v| (v, w)))
            .collect();
        if !vaes.is_empty() {
            let flats: Vec<Vec<f64>> = vaes.iter().map(|(v, _)| v.to_flat()).collect();
            let refs: Vec<&[f64]> = flats.iter().map(Vec::as_slice).collect();
            let ws: Vec<f64> = vaes.iter().map(|(_, w)| *w).collect();
            if vaes.iter().any(|(v, _)| !v.same_shape(&server.vaes[j])) {
                return Err(Error::Contract(format!("VAE update for {j} changed shape")));
            }
            next.vaes[j].set_flat(&weighted_average(&refs, &ws)?)?;
        }

        let clfs: Vec<(&ClassifierModel, f64)> = contrib
            .iter()
            .zip(&w)
            .filter_map(|((_, c), &w)| c.classifier.as_ref().map(|g| (g, w)))
            .collect();
        if !clfs.is_empty() {
            if clfs.iter().any(|(g, _)| !g.same_shape(&server.experts[j])) {
                return Err(Error::Contract(format!("classifier update for {j} changed shape")));
            }
            let flats: Vec<Vec<f64>> = clfs.iter().map(|(g, _)| g.net().to_flat()).collect();
            let refs: Vec<&[f64]> = flats.iter().map(Vec::as_slice).collect();
            let ws: Vec<f64> = clfs.iter().map(|(_, w)| *w).collect();
            let merged = weighted_average(&refs, &ws)?;
            let mut net = next.experts[j].net().clone();
            net.set_flat(&merged)?;
            next.experts[j] = ClassifierModel::from_net(net)?;
        }
    }
    next.round = server.round + 1;
    Ok((next, losses))
}

/// Runs the full federated loop over `clients`.
pub fn run(config: &FederationConfig, clients: &[ClientData]) -> Result<RunOutput> {
    check_clients(config, clients)?;
    let n = clients.len();
    let m = config.num_components;
    let seeds = SeedTree::new(config.seed);

    let base = initial_vae(config, &seeds)?;
    let vae_bytes = param_bytes(base.param_count());
    let mut pre_traffic = Traffic::default();

    let (vaes, init, mut states) = if m >= 2 {
        info!("pretraining {n} local VAEs");
        let locals: Vec<VaeModel> = pretrain_local_vaes(config, clients, &seeds)?
            .into_iter()
            .map(|(v, _)| v)
            .collect();
        pre_traffic.up += n as u64 * vae_bytes;
        let (selected, kl) = stable_initialize(&locals, m, config.kl_samples, &seeds)?;
        info!("stable initialization picked clients {selected:?}");
        let vaes = selected.iter().map(|&i| locals[i].clone()).collect();
        // local VAEs are not used after initialization
        let states = (0..n)
            .map(|id| ClientState {
                id,
                division: DivisionState::uniform(m),
                local_vae: None,
            })
            .collect::<Vec<_>>();
        (vaes, Some(InitReport { selected, kl }), states)
    } else {
        let states = (0..n)
            .map(|id| ClientState {
                id,
                division: DivisionState::uniform(1),
                local_vae: None,
            })
            .collect::<Vec<_>>();
        (vec![base], None, states)
    };

    let mut server = ServerState {
        vaes,
        experts: initial_experts(config, &seeds)?,
        round: 0,
    };
    let clf_bytes = param_bytes(server.experts[0].param_count());
    let count_bytes = param_bytes(m);

    let mut metrics = Vec::with_capacity(config.rounds);
    let mut divisions = Vec::new();
    for t in 0..config.rounds {
        let mut traffic = if t == 0 { pre_traffic } else { Traffic::default() };
        let division_event = config.is_division_round(t);
        if division_event {
            let next = exec::map_range(n, |i| {
                let x = &clients[i].train.x;
                if m == 1 {
                    return Ok(DivisionState::from_assignments(vec![0; x.rows()], 1, config.smoothing));
                }
                let mut rng = seeds.rng("divide", &[t as u64, i as u64]);
                divide_local(x, &server.vaes, &states[i].division, config.smoothing, &mut rng)
            });
            for (s, d) in states.iter_mut().zip(next) {
                s.division = d?;
            }
            traffic.down += n as u64 * m as u64 * vae_bytes;
            traffic.up += n as u64 * count_bytes;
            divisions.push(DivisionSnapshot {
                round: t,
                records: states.iter().map(|s| s.division.record(s.id)).collect(),
            });
            debug!("round {t}: division refreshed");
        }

        let counts: Vec<Vec<usize>> = states.iter().map(|s| s.division.counts.clone()).collect();
        let plan = RoundPlan {
            selected: select_clients(n, config.clients_per_round, &mut seeds.rng("select", &[t as u64]))?,
            betas: (0..m).map(|j| compute_betas(&counts, j)).collect(),
        };
        traffic.down += plan.selected.len() as u64 * m as u64 * (vae_bytes + clf_bytes);

        let updates = exec::map_slice(&plan.selected, |&i| {
            let mut rng = seeds.rng("local", &[t as u64, i as u64]);
            local_update(config, &clients[i], &states[i].division, &server, &mut rng)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        for u in &updates {
            traffic.up += count_bytes;
            for c in &u.components {
                traffic.up += c.vae.as_ref().map_or(0, |_| vae_bytes);
                traffic.up += c.classifier.as_ref().map_or(0, |_| clf_bytes);
            }
        }

        let (next, train_loss) = aggregate(&server, &updates, &plan)?;
        server = next;

        let test_routes = exec::map_range(n, |i| {
            let mut rng = seeds.rng("eval", &[t as u64, i as u64]);
            route(&clients[i].test.x, &server.vaes, &states[i].division.priors, &mut rng)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let routing = RoundRouting {
            train: states.iter().map(|s| s.division.assignments.clone()).collect(),
            test: test_routes,
        };
        let quality = round_quality(clients, &server.experts, &routing)?;
        metrics.push(RoundMetrics {
            round: t,
            division_event,
            train_loss,
            test_acc: quality.test_acc,
            alpha_mae: quality.alpha_mae,
            division_error: quality.division_error,
            bytes_up: traffic.up,
            bytes_down: traffic.down,
        });
        debug!("round {t}: {:?}", metrics.last());
    }

    Ok(RunOutput {
        server,
        clients: states,
        metrics,
        divisions,
        init,
    })
}

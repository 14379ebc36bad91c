mod common;

use common::{ring_task, tiny_config};
use fedgmi::classifier::ClassifierModel;
use fedgmi::data::{AlphaPattern, ClientData, Dataset};
use fedgmi::federation::*;
use fedgmi::mixture::DivisionState;
use fedgmi::nn::Matrix;
use fedgmi::report::metrics_csv;
use fedgmi::{Error, SeedTree};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_clients(n: usize) -> Vec<ClientData> {
    ring_task(7, n, 60, AlphaPattern::Linear).0
}

#[test]
fn zero_pretraining_keeps_the_shared_init() {
    let mut cfg = tiny_config(1);
    cfg.pretrain_epochs = 0;
    let clients = small_clients(3);
    let seeds = SeedTree::new(cfg.seed);
    let init = initial_vae(&cfg, &seeds).unwrap();
    for (v, losses) in pretrain_local_vaes(&cfg, &clients, &seeds).unwrap() {
        assert_eq!(v.to_flat(), init.to_flat());
        assert!(losses.is_empty());
    }
}

#[test]
fn same_data_and_seed_pretrain_identically() {
    let cfg = tiny_config(2);
    let a = small_clients(3);
    let mut b = a.clone();
    b[1] = b[2].clone();
    b[1].id = 1;
    let seeds = SeedTree::new(cfg.seed);
    let va = pretrain_local_vaes(&cfg, &a, &seeds).unwrap();
    let vb = pretrain_local_vaes(&cfg, &b, &seeds).unwrap();
    assert_eq!(va[0].0.to_flat(), vb[0].0.to_flat());
    assert_ne!(va[1].0.to_flat(), vb[1].0.to_flat());
}

#[test]
fn pretraining_loss_trends_down() {
    let mut cfg = tiny_config(3);
    cfg.pretrain_epochs = 40;
    cfg.vae.hidden = vec![16, 16];
    let clients = small_clients(2);
    for (_, losses) in pretrain_local_vaes(&cfg, &clients, &SeedTree::new(3)).unwrap() {
        let head: f64 = losses[..20].iter().map(|l| l.total).sum::<f64>() / 20.0;
        let tail: f64 = losses[losses.len() - 20..].iter().map(|l| l.total).sum::<f64>() / 20.0;
        assert!(tail < head, "{head} -> {tail}");
    }
}

fn server(cfg: &FederationConfig) -> ServerState {
    let seeds = SeedTree::new(cfg.seed);
    let v = initial_vae(cfg, &seeds).unwrap();
    ServerState {
        vaes: vec![v.clone(), v],
        experts: initial_experts(cfg, &seeds).unwrap(),
        round: 0,
    }
}

#[test]
fn local_update_only_touches_nonempty_components() {
    let cfg = tiny_config(4);
    let clients = small_clients(2);
    let c = &clients[0];
    let division = DivisionState::from_assignments(vec![0; c.train.len()], 2, 0.0);
    let up = local_update(&cfg, c, &division, &server(&cfg), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(up.components.len(), 1);
    assert_eq!(up.components[0].component, 0);
    assert_eq!(up.components[0].count, c.train.len());
}

#[test]
fn zero_local_epochs_return_the_snapshot() {
    let mut cfg = tiny_config(5);
    cfg.local_epochs = 0;
    let clients = small_clients(2);
    let c = &clients[1];
    let assignments = (0..c.train.len()).map(|i| i % 2).collect();
    let division = DivisionState::from_assignments(assignments, 2, 0.0);
    let s = server(&cfg);
    let up = local_update(&cfg, c, &division, &s, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(up.components.len(), 2);
    for u in &up.components {
        assert_eq!(u.vae.as_ref().unwrap().to_flat(), s.vaes[u.component].to_flat());
        assert_eq!(u.classifier.as_ref().unwrap().net().to_flat(), s.experts[u.component].net().to_flat());
    }
}

#[test]
fn local_training_lowers_subset_loss() {
    let mut cfg = tiny_config(6);
    cfg.local_epochs = 20;
    let clients = small_clients(4);
    let c = &clients[3];
    let division = DivisionState::from_assignments(vec![1; c.train.len()], 2, 0.0);
    let s = server(&cfg);
    let before = s.experts[1].loss(&c.train.x, &c.train.labels).unwrap();
    let up = local_update(&cfg, c, &division, &s, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(up.components[0].loss < before);
}

fn update_with(id: usize, j: usize, clf: ClassifierModel, count: usize) -> LocalUpdate {
    LocalUpdate {
        client_id: id,
        components: vec![ComponentUpdate {
            component: j,
            count,
            vae: None,
            classifier: Some(clf),
            loss: 1.0,
        }],
    }
}

#[test]
fn aggregation_cases() {
    let cfg = tiny_config(8);
    let s = server(&cfg);
    let mut other = s.experts[0].clone();
    let mut flat = other.net().to_flat();
    flat.iter_mut().for_each(|v| *v += 0.37);
    let mut net = other.net().clone();
    net.set_flat(&flat).unwrap();
    other = ClassifierModel::from_net(net).unwrap();

    let counts = vec![vec![10, 0], vec![30, 0]];
    let plan = RoundPlan {
        selected: vec![0, 1],
        betas: (0..2).map(|j| compute_betas(&counts, j)).collect(),
    };

    // single contributor: exact copy, untouched component carried forward
    let (next, losses) = aggregate(&s, &[update_with(1, 0, other.clone(), 30)], &plan).unwrap();
    assert_eq!(next.experts[0].net().to_flat(), flat);
    assert_eq!(next.experts[1].net().to_flat(), s.experts[1].net().to_flat());
    assert_eq!(next.vaes[0].to_flat(), s.vaes[0].to_flat());
    assert_eq!(losses, vec![Some(1.0), None]);
    assert_eq!(next.round, 1);

    // identical contributors: bit-identical
    let ups = [update_with(1, 0, other.clone(), 30), update_with(0, 0, other.clone(), 10)];
    let (next, _) = aggregate(&s, &ups, &plan).unwrap();
    assert_eq!(next.experts[0].net().to_flat(), flat);

    // weights 0.25 / 0.75 in ascending client order
    let base = s.experts[0].net().to_flat();
    let ups = [update_with(1, 0, other.clone(), 30), update_with(0, 0, s.experts[0].clone(), 10)];
    let (next, _) = aggregate(&s, &ups, &plan).unwrap();
    for ((g, b), o) in next.experts[0].net().to_flat().iter().zip(&base).zip(&flat) {
        assert!((g - (0.25 * b + 0.75 * o)).abs() < 1e-12);
    }
}

#[test]
fn incongruent_update_is_a_contract_error() {
    let cfg = tiny_config(9);
    let s = server(&cfg);
    let mut wide = cfg.classifier.clone();
    wide.hidden = vec![3];
    let bad = ClassifierModel::new(&wide, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let plan = RoundPlan {
        selected: vec![0],
        betas: (0..2).map(|j| compute_betas(&[vec![5, 5]], j)).collect(),
    };
    assert!(matches!(aggregate(&s, &[update_with(0, 0, bad, 5)], &plan), Err(Error::Contract(_))));
}

#[test]
fn one_round_loop_accounting() {
    let mut cfg = tiny_config(10);
    cfg.rounds = 1;
    cfg.division_interval = 1;
    let clients = small_clients(5);
    cfg.clients_per_round = clients.len();
    let out = run(&cfg, &clients).unwrap();
    assert_eq!(out.metrics.len(), 1);
    assert_eq!(out.divisions.len(), 1);
    assert!(out.metrics[0].division_event);
    assert_eq!(out.server.round, 1);
}

#[test]
fn division_schedule_and_shapes() {
    let mut cfg = tiny_config(11);
    cfg.rounds = 7;
    cfg.division_interval = 3;
    let clients = small_clients(6);
    let out = run(&cfg, &clients).unwrap();
    assert_eq!(out.metrics.len(), 7);
    let events: Vec<usize> = out.metrics.iter().filter(|m| m.division_event).map(|m| m.round).collect();
    assert_eq!(events, vec![0, 3, 6]);
    assert_eq!(out.divisions.iter().map(|d| d.round).collect::<Vec<_>>(), events);
    let fresh = server(&cfg);
    for j in 0..2 {
        assert!(out.server.vaes[j].same_shape(&fresh.vaes[j]));
        assert!(out.server.experts[j].same_shape(&fresh.experts[j]));
    }
    // division rounds pay for the broadcast
    assert!(out.metrics[3].bytes_down > out.metrics[4].bytes_down);
    for s in &out.clients {
        assert_eq!(s.division.total(), clients[s.id].train.len());
        assert!(s.local_vae.is_none());
    }
}

#[test]
fn same_seed_same_log() {
    let cfg = tiny_config(12);
    let clients = small_clients(6);
    let a = run(&cfg, &clients).unwrap();
    let b = run(&cfg, &clients).unwrap();
    assert_eq!(metrics_csv(&a.metrics), metrics_csv(&b.metrics));
    assert_eq!(a.server.vaes[1].to_flat(), b.server.vaes[1].to_flat());
}

#[test]
fn validation_names_fields() {
    let mut cfg = tiny_config(13);
    cfg.clients_per_round = 10;
    match run(&cfg, &small_clients(4)) {
        Err(Error::Config { field, .. }) => assert_eq!(field, "federation.clients_per_round"),
        other => panic!("{other:?}"),
    }
    let mut cfg = tiny_config(13);
    cfg.division_interval = 0;
    assert!(matches!(cfg.validate(), Err(Error::Config { .. })));
}

#[test]
fn single_component_runs_without_division_machinery() {
    let mut cfg = tiny_config(14);
    cfg.num_components = 1;
    let clients = small_clients(6);
    let out = run(&cfg, &clients).unwrap();
    assert!(out.init.is_none());
    assert!(out.metrics.iter().all(|m| m.alpha_mae.is_none()));
}

#[test]
fn hand_built_client_round_trip() {
    let x = Matrix::from_rows(&[vec![8.0, 0.0], vec![-4.0, 6.9], vec![-4.0, -6.9]]).unwrap();
    let d = Dataset::new(x, vec![0, 1, 2], vec![0, 0, 0]).unwrap();
    let client = ClientData {
        id: 0,
        train: d.clone(),
        test: d,
        true_alpha: vec![1.0, 0.0],
    };
    let mut cfg = tiny_config(15);
    cfg.clients_per_round = 1;
    cfg.num_components = 1;
    let out = run(&cfg, &[client]).unwrap();
    assert_eq!(out.metrics.len(), cfg.rounds);
}

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context};
use fedgmi::classifier::ClassifierModel;
use fedgmi::data::{
    gen_gaussian_task, load_idx, partition_clients, rotated_pools, ClientData, ClientPartitionPlan,
    DatasetBundle, IdxData,
};
use fedgmi::eval::{
    client_associated_accuracy, cross_eval, division_error_rate, fedavg_reference, ifca_baseline,
    CrossEvalMatrix, MAX_ALIGN,
};
use fedgmi::federation::{self, pretrain_local_vaes, DivisionSnapshot, FederationConfig, RoundMetrics};
use fedgmi::mixture::{divide_local, kl_matrix, mixture_estimate, route, DivisionState};
use fedgmi::report;
use fedgmi::vae::VaeModel;
use fedgmi::SeedTree;
use log::info;
use serde_json::json;

use crate::config::{DataSource, ExperimentConfig};
use crate::{Common, Method};

const VERSION: &str = concat!("fedgmi-cli/", env!("CARGO_PKG_VERSION"));

fn load_config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Creates `dir`, replacing it only when `force` is set.
fn fresh_dir(dir: &Path, force: bool) -> anyhow::Result<()> {
    if dir.exists() {
        if !force {
            bail!("{} already exists; pass --force to replace it", dir.display());
        }
        fs::remove_dir_all(dir).with_context(|| format!("removing {}", dir.display()))?;
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// Builds the client datasets from the config alone.
pub fn generate_bundle(cfg: &ExperimentConfig) -> anyhow::Result<DatasetBundle> {
    let seeds = SeedTree::new(cfg.seed);
    let d = &cfg.dataset;
    let (train_pools, test_pools, inherent, num_classes) = match &d.source {
        DataSource::Gaussian {
            components,
            classes,
            data_dim,
            separation,
            pool_size,
            test_pool_size,
        } => {
            let (task, pools) = gen_gaussian_task(
                *components,
                *classes,
                *data_dim,
                *separation,
                *pool_size,
                *test_pool_size,
                &mut seeds.rng("pools", &[]),
            )?;
            let inherent = (0..*components).map(|j| task.spec(j)).collect();
            (pools.train, pools.test, inherent, *classes)
        }
        DataSource::RotatedIdx {
            images,
            labels,
            base_images,
            quarter_turns,
        } => {
            let (h, w, pixels) = match load_idx(images).with_context(|| format!("loading {}", images.display()))? {
                IdxData::Images { rows, cols, pixels } => (rows, cols, pixels),
                IdxData::Labels(_) => bail!("dataset.source.images: {} holds labels", images.display()),
            };
            let raw = match load_idx(labels).with_context(|| format!("loading {}", labels.display()))? {
                IdxData::Labels(l) => l,
                IdxData::Images { .. } => bail!("dataset.source.labels: {} holds images", labels.display()),
            };
            ensure!(
                raw.len() == pixels.rows(),
                "dataset.source: {} images but {} labels",
                pixels.rows(),
                raw.len()
            );
            ensure!(
                2 * base_images <= pixels.rows(),
                "dataset.source.base_images: need {} images for train and test pools, file has {}",
                2 * base_images,
                pixels.rows()
            );
            ensure!(
                h * w == cfg.model.data_dim,
                "model.data_dim: images have {} pixels",
                h * w
            );
            let block = |start: usize| {
                let idx: Vec<usize> = (start..start + base_images).collect();
                let y: Vec<usize> = idx.iter().map(|&i| usize::from(raw[i])).collect();
                rotated_pools(&pixels.select_rows(&idx), &y, h, w, quarter_turns)
            };
            let (train, inherent) = block(0)?;
            let (test, _) = block(*base_images)?;
            let classes = raw.iter().map(|&y| usize::from(y) + 1).max().unwrap_or(0);
            ensure!(
                classes <= cfg.model.num_classes,
                "model.num_classes: labels reach {}",
                classes
            );
            (train, test, inherent, cfg.model.num_classes)
        }
    };
    let plan = ClientPartitionPlan {
        num_clients: d.num_clients,
        size_per_client: d.size_per_client,
        pattern: d.pattern.clone(),
        test_fraction: d.test_fraction,
    };
    let clients = partition_clients(&train_pools, &plan, &mut seeds.rng("partition", &[]))?;
    Ok(DatasetBundle {
        clients,
        test_pools,
        num_classes,
        inherent,
    })
}

fn obtain_bundle(cfg: &ExperimentConfig, cache: Option<&Path>) -> anyhow::Result<DatasetBundle> {
    let Some(dir) = cache else {
        return generate_bundle(cfg);
    };
    let (bundle, sidecar) =
        DatasetBundle::read_dir(dir).with_context(|| format!("reading dataset cache {}", dir.display()))?;
    ensure!(
        sidecar.num_clients == cfg.dataset.num_clients,
        "dataset.num_clients: cache holds {} clients",
        sidecar.num_clients
    );
    ensure!(
        sidecar.num_components == cfg.dataset.source.components(),
        "dataset.source: cache holds {} inherent distributions",
        sidecar.num_components
    );
    ensure!(
        sidecar.data_dim == cfg.model.data_dim,
        "model.data_dim: cache holds {}-dimensional samples",
        sidecar.data_dim
    );
    ensure!(
        sidecar.num_classes == cfg.model.num_classes,
        "model.num_classes: cache holds {} classes",
        sidecar.num_classes
    );
    info!("loaded {} clients from {}", bundle.clients.len(), dir.display());
    Ok(bundle)
}

fn write_vaes(dir: &Path, vaes: &[VaeModel]) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    for (j, v) in vaes.iter().enumerate() {
        let mut w = create(&dir.join(format!("vae_{j}.bin")))?;
        v.write_checkpoint(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn write_classifiers(dir: &Path, experts: &[ClassifierModel]) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    for (j, g) in experts.iter().enumerate() {
        let mut w = create(&dir.join(format!("clf_{j}.bin")))?;
        g.write_checkpoint(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

/// Reads `{prefix}_0.bin`, `{prefix}_1.bin`, ... up to the first gap.
fn read_indexed<T>(
    dir: &Path,
    prefix: &str,
    read: impl Fn(File) -> fedgmi::Result<T>,
) -> anyhow::Result<Vec<T>> {
    let mut out = Vec::new();
    loop {
        let path = dir.join(format!("{prefix}_{}.bin", out.len()));
        if !path.is_file() {
            break;
        }
        let file = File::open(&path)?;
        out.push(read(file).with_context(|| format!("reading {}", path.display()))?);
    }
    ensure!(!out.is_empty(), "no {prefix}_0.bin in {}", dir.display());
    Ok(out)
}

fn read_vaes(dir: &Path) -> anyhow::Result<Vec<VaeModel>> {
    read_indexed(dir, "vae", |f| VaeModel::read_checkpoint(std::io::BufReader::new(f)))
}

fn read_classifiers(dir: &Path) -> anyhow::Result<Vec<ClassifierModel>> {
    read_indexed(dir, "clf", |f| ClassifierModel::read_checkpoint(std::io::BufReader::new(f)))
}

/// Learned-to-true alignment from per-sample routes, when the component counts allow one.
fn alignment(clients: &[ClientData], routes: &[Vec<usize>], m: usize) -> anyhow::Result<Option<(f64, Vec<usize>)>> {
    let m_data = clients.first().map_or(0, |c| c.true_alpha.len());
    if m != m_data || m > MAX_ALIGN {
        return Ok(None);
    }
    let pairs: Vec<(&[usize], &[usize])> = clients
        .iter()
        .zip(routes)
        .map(|(c, r)| (r.as_slice(), c.train.origins.as_slice()))
        .collect();
    let err = division_error_rate(&pairs, m)?;
    Ok(Some((err.rate, err.alignment)))
}

/// `(client, true α_0, estimated α of the learned component aligned to true 0)`.
fn proportion_rows(clients: &[ClientData], estimates: &[Vec<f64>], perm: &[usize]) -> Vec<(usize, f64, f64)> {
    let learned = perm.iter().position(|&k| k == 0).unwrap_or(0);
    clients
        .iter()
        .zip(estimates)
        .map(|(c, e)| (c.id, c.true_alpha[0], e[learned]))
        .collect()
}

fn one_hot(k: usize, m: usize) -> Vec<f64> {
    let mut v = vec![0.0; m];
    v[k] = 1.0;
    v
}

fn write_cross_eval(path: &Path, grid: &CrossEvalMatrix) -> anyhow::Result<()> {
    let mut w = create(path)?;
    report::write_cross_eval_csv(&mut w, grid)?;
    w.flush()?;
    Ok(())
}

fn write_proportions(path: &Path, rows: &[(usize, f64, f64)]) -> anyhow::Result<()> {
    let mut w = create(path)?;
    report::write_proportions_csv(&mut w, rows)?;
    w.flush()?;
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn run(common: &Common, method: Method, out: &Path, force: bool) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    let mut fed = cfg.federation_config()?;
    if method == Method::Fedavg {
        fed.num_components = 1;
    }
    let bundle = obtain_bundle(&cfg, common.data.as_deref())?;
    fresh_dir(out, force)?;
    info!("running {method:?} for {} rounds on {} clients", fed.rounds, bundle.clients.len());

    let clients = &bundle.clients;
    let m = fed.num_components;
    let last = fed.rounds.saturating_sub(1);
    let ckpt = out.join(format!("server_round_{last}"));
    let (metrics, experts, init, proportions) = match method {
        Method::Fedgmi => {
            let output = federation::run(&fed, clients)?;
            write_vaes(&ckpt, &output.server.vaes)?;
            let dir = out.join("divisions");
            fs::create_dir_all(&dir)?;
            for snap in &output.divisions {
                write_json(&dir.join(format!("round_{}.json", snap.round)), snap)?;
            }
            let routes: Vec<Vec<usize>> = output.clients.iter().map(|s| s.division.assignments.clone()).collect();
            let estimates: Vec<Vec<f64>> = output
                .clients
                .iter()
                .map(|s| mixture_estimate(&s.division))
                .collect();
            let proportions = alignment(clients, &routes, m)?
                .map(|(_, perm)| proportion_rows(clients, &estimates, &perm));
            (output.metrics, output.server.experts, output.init, proportions)
        }
        Method::Ifca | Method::Fedavg => {
            let output = if method == Method::Ifca {
                ifca_baseline(&fed, clients)?
            } else {
                fedavg_reference(&fed, clients)?
            };
            let routes: Vec<Vec<usize>> = clients
                .iter()
                .zip(&output.membership)
                .map(|(c, &k)| vec![k; c.train.len()])
                .collect();
            let estimates: Vec<Vec<f64>> = output.membership.iter().map(|&k| one_hot(k, m)).collect();
            let proportions = alignment(clients, &routes, m)?
                .map(|(_, perm)| proportion_rows(clients, &estimates, &perm));
            (output.metrics, output.experts, None, proportions)
        }
    };
    write_classifiers(&ckpt, &experts)?;

    fs::write(out.join("metrics.csv"), report::metrics_csv(&metrics))?;
    write_cross_eval(&out.join("cross_eval.csv"), &cross_eval(&experts, &bundle.test_pools)?)?;
    if let Some(rows) = proportions {
        write_proportions(&out.join("proportions.csv"), &rows)?;
    }
    write_manifest(out, &cfg, &fed, method, common.data.as_deref(), &metrics, init.as_ref())?;
    println!(
        "wrote {} rounds to {}",
        metrics.len(),
        out.display()
    );
    Ok(())
}

fn write_manifest(
    out: &Path,
    cfg: &ExperimentConfig,
    fed: &FederationConfig,
    method: Method,
    cache: Option<&Path>,
    metrics: &[RoundMetrics],
    init: Option<&federation::InitReport>,
) -> anyhow::Result<()> {
    let communication: Vec<_> = metrics
        .iter()
        .map(|r| json!({"round": r.round, "bytes_up": r.bytes_up, "bytes_down": r.bytes_down}))
        .collect();
    let manifest = json!({
        "version": VERSION,
        "method": method,
        "seed": cfg.seed,
        "config": cfg,
        "resolved": fed,
        "data_cache": cache.map(|p| p.display().to_string()),
        "communication": communication,
        "init": init,
    });
    write_json(&out.join("manifest.json"), &manifest)
}

pub fn gen_data(common: &Common, out: &Path, force: bool) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    let bundle = generate_bundle(&cfg)?;
    fresh_dir(out, force)?;
    bundle.write_dir(out, json!({"version": VERSION, "seed": cfg.seed, "dataset": cfg.dataset}))?;
    println!("wrote {} clients to {}", bundle.clients.len(), out.display());
    Ok(())
}

pub fn pretrain(common: &Common, out: &Path, force: bool) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    let fed = cfg.federation_config()?;
    let bundle = obtain_bundle(&cfg, common.data.as_deref())?;
    fresh_dir(out, force)?;
    let trained = pretrain_local_vaes(&fed, &bundle.clients, &SeedTree::new(cfg.seed))?;
    let vaes: Vec<VaeModel> = trained.iter().map(|(v, _)| v.clone()).collect();
    write_vaes(out, &vaes)?;
    let mut w = create(&out.join("pretrain_losses.csv"))?;
    writeln!(w, "client_id,epoch,rec,kl,total")?;
    for (i, (_, losses)) in trained.iter().enumerate() {
        for (e, l) in losses.iter().enumerate() {
            writeln!(w, "{i},{e},{},{},{}", l.rec, l.kl, l.total)?;
        }
    }
    w.flush()?;
    println!("wrote {} local VAEs to {}", vaes.len(), out.display());
    Ok(())
}

/// One pass per client from uniform priors, on the `divide` stream of round 0.
fn divide_all(
    clients: &[ClientData],
    vaes: &[VaeModel],
    smoothing: f64,
    seeds: &SeedTree,
) -> anyhow::Result<Vec<DivisionState>> {
    let m = vaes.len();
    fedgmi::exec::map_slice(clients, |c| {
        let mut rng = seeds.rng("divide", &[0, c.id as u64]);
        if m == 1 {
            let a = route(&c.train.x, vaes, &[1.0], &mut rng)?;
            return Ok(DivisionState::from_assignments(a, 1, smoothing));
        }
        divide_local(&c.train.x, vaes, &DivisionState::uniform(m), smoothing, &mut rng)
    })
    .into_iter()
    .collect::<fedgmi::Result<Vec<_>>>()
    .map_err(Into::into)
}

fn check_vaes(vaes: &[VaeModel], data_dim: usize) -> anyhow::Result<()> {
    ensure!(
        vaes.iter().all(|v| v.data_dim() == data_dim),
        "stored VAEs do not match the {data_dim}-dimensional data"
    );
    Ok(())
}

pub fn divide(common: &Common, vaes_dir: &Path, out: Option<&Path>) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    let bundle = obtain_bundle(&cfg, common.data.as_deref())?;
    let vaes = read_vaes(vaes_dir)?;
    check_vaes(&vaes, cfg.model.data_dim)?;
    let states = divide_all(&bundle.clients, &vaes, cfg.mixture.smoothing, &SeedTree::new(cfg.seed))?;
    let snapshot = DivisionSnapshot {
        round: 0,
        records: states.iter().enumerate().map(|(i, s)| s.record(i)).collect(),
    };
    for r in &snapshot.records {
        let counts: Vec<String> = r.counts.iter().map(ToString::to_string).collect();
        println!("client {}: {}", r.client_id, counts.join(" "));
    }
    if let Some(path) = out {
        write_json(path, &snapshot)?;
    }
    Ok(())
}

pub fn eval(common: &Common, dir: &Path, out: Option<&Path>, force: bool) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    let bundle = obtain_bundle(&cfg, common.data.as_deref())?;
    let vaes = read_vaes(dir)?;
    let experts = read_classifiers(dir)?;
    check_vaes(&vaes, cfg.model.data_dim)?;
    ensure!(
        vaes.len() == experts.len(),
        "{} VAEs but {} classifiers in {}",
        vaes.len(),
        experts.len(),
        dir.display()
    );
    let m = vaes.len();
    let seeds = SeedTree::new(cfg.seed);
    let clients = &bundle.clients;
    let states = divide_all(clients, &vaes, cfg.mixture.smoothing, &seeds)?;
    let priors: Vec<Vec<f64>> = states.iter().map(|s| s.priors.clone()).collect();
    let grid = cross_eval(&experts, &bundle.test_pools)?;
    let accuracy = client_associated_accuracy(clients, &experts, &vaes, &priors, &seeds)?;
    let routes: Vec<Vec<usize>> = states.iter().map(|s| s.assignments.clone()).collect();
    let aligned = alignment(clients, &routes, m)?;
    let estimates: Vec<Vec<f64>> = states.iter().map(mixture_estimate).collect();

    let summary = json!({
        "client_associated_accuracy": accuracy.mean,
        "per_client_accuracy": accuracy.per_client,
        "division_error": aligned.as_ref().map(|a| a.0),
        "alignment": aligned.as_ref().map(|a| &a.1),
        "specialization_gap": aligned.as_ref().map(|a| grid.specialization_gap(&a.1)),
        "cross_eval": grid.acc,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if let Some(out) = out {
        fresh_dir(out, force)?;
        write_cross_eval(&out.join("cross_eval.csv"), &grid)?;
        if let Some((_, perm)) = &aligned {
            write_proportions(&out.join("proportions.csv"), &proportion_rows(clients, &estimates, perm))?;
        }
        write_json(&out.join("eval.json"), &summary)?;
    }
    Ok(())
}

pub fn kl_matrix_cmd(
    vaes_dir: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    samples: Option<usize>,
) -> anyhow::Result<()> {
    let cfg = config.map(ExperimentConfig::load).transpose()?;
    let samples = samples
        .or(cfg.as_ref().map(|c| c.mixture.kl_samples))
        .unwrap_or(256);
    ensure!(samples >= 1, "mixture.kl_samples: must be >= 1");
    let seed = seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
    let vaes = read_vaes(vaes_dir)?;
    let d = kl_matrix(&vaes, samples, &SeedTree::new(seed))?;
    for row in &d.entries {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        println!("{}", cells.join(" "));
    }
    Ok(())
}

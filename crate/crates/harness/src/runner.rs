//! Seeded study execution: dataset bundles, the pretrained-extractor cache,
//! and a bounded worker pool whose output is identical for any worker count.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use adaptlab_core::data::{
    build_generators, corrupt, sample, sample_anomalies, sample_ood, AnomalyKind,
    CorruptionSpec, DominoConfig, Provenance, ShiftConfig, RANDOMIZED_RHO,
};
use adaptlab_core::metrics::{accuracy, evaluate_suite, MetricReport, PgdConfig};
use adaptlab_core::model::{graph_from_text, graph_to_text, pretrain, FeatureExtractor, PretrainConfig};
use adaptlab_core::protocols::run_protocol;
use adaptlab_core::{Dataset, Error, Extractor, Generator, Result, Rng};

use crate::config::{hyperparameter_grid, parse_protocol, HpPoint, ProtocolSpec, StudyConfig};

/// One cell of the study grid.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub run_id: usize,
    pub rho_index: usize,
    pub rho: f64,
    pub protocol: ProtocolSpec,
    pub protocol_name: String,
    pub hp_index: usize,
    pub hp: HpPoint,
    pub seed: u64,
}

/// Result of one run; `error` is set when the run failed.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub spec: RunSpec,
    pub id_val_acc: Option<f64>,
    pub report: Option<MetricReport>,
    pub error: Option<String>,
}

/// Train split plus everything the metric suite consumes, for one (ρ, seed).
pub struct DataBundle {
    pub train: Dataset,
    pub val: Dataset,
    pub eval: adaptlab_core::EvalSets,
}

pub fn domino_config(study: &StudyConfig, rho: f64) -> DominoConfig {
    DominoConfig {
        classes: study.classes,
        complex_dim: study.complex_dim,
        rho,
        sigma_simple: study.sigma_simple,
        sigma_complex: study.sigma_complex,
        seed: study.data_seed,
    }
}

pub fn build_generator(study: &StudyConfig) -> Result<Generator> {
    build_generators(&domino_config(study, 1.0))
}

fn split_train_val(ds: Dataset, val_fraction: f64, rng: &mut Rng) -> (Dataset, Dataset) {
    let n = ds.len();
    let n_val = ((n as f64) * val_fraction).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let pick = |idx: &[usize], provenance: Provenance| Dataset {
        inputs: ds.inputs.gather_rows(idx),
        labels: idx.iter().map(|&i| ds.labels[i]).collect(),
        simple_labels: idx.iter().map(|&i| ds.simple_labels[i]).collect(),
        provenance,
    };
    let val = pick(&order[..n_val], Provenance::IdTest);
    let train = pick(&order[n_val..], Provenance::Train);
    (train, val)
}

/// Deterministic bundle for one (ρ index, seed): the rng tree depends only
/// on the config and those two coordinates.
pub fn build_bundle(
    study: &StudyConfig,
    gen: &Generator,
    rho_index: usize,
    seed: u64,
) -> Result<DataBundle> {
    let rho = study.rho_values[rho_index];
    let root = Rng::new(study.data_seed)
        .substream("rho", rho_index as u64)
        .substream("seed", seed);

    let mut train_rng = root.substream("train", 0);
    let full_train = sample(gen, study.n_train, Some(rho), Provenance::Train, &mut train_rng)?;
    let mut split_rng = root.substream("val-split", 0);
    let (train, val) = split_train_val(full_train, study.val_fraction, &mut split_rng);

    let shift = ShiftConfig {
        rotation_angle: study.rotation_angle,
        noise_scale: study.noise_scale,
    };
    let mut eval_rng = root.substream("eval", 0);
    let id_test = sample(gen, study.n_test, Some(rho), Provenance::IdTest, &mut eval_rng)?;
    let ood_test = sample_ood(gen, &shift, study.n_test, rho, &mut eval_rng)?;
    let correlated = sample(gen, study.n_test, Some(1.0), Provenance::IdTest, &mut eval_rng)?;
    let randomized = sample(
        gen,
        study.n_test,
        Some(RANDOMIZED_RHO),
        Provenance::Randomized,
        &mut eval_rng,
    )?;

    let mut corrupted = Vec::with_capacity(15);
    let mut corrupt_rng = root.substream("corruptions", 0);
    for spec in CorruptionSpec::full_suite() {
        corrupted.push(corrupt(&id_test, &spec, &mut corrupt_rng)?);
    }

    let mut anomalies = Vec::with_capacity(AnomalyKind::ALL.len());
    let mut anomaly_rng = root.substream("anomalies", 0);
    for kind in AnomalyKind::ALL {
        anomalies.push((kind, sample_anomalies(kind, study.n_anomaly, gen, &mut anomaly_rng)?));
    }

    Ok(DataBundle {
        train,
        val,
        eval: adaptlab_core::EvalSets {
            id_test,
            ood_test,
            correlated,
            randomized,
            corrupted,
            anomalies,
        },
    })
}

fn pretrain_config(study: &StudyConfig) -> PretrainConfig {
    PretrainConfig {
        epochs: study.pretrain_epochs,
        lambda: study.pretrain_lambda,
        lr: study.pretrain_lr,
        momentum: study.momentum,
        batch_size: study.batch_size,
        samples_per_epoch: study.pretrain_samples_per_epoch,
        seed: study.pretrain_seed,
    }
}

/// Key identifying a cached pretrained extractor.
fn pretrain_cache_key(study: &StudyConfig) -> String {
    format!(
        "classes={} complex_dim={} sigma_simple={} sigma_complex={} data_seed={} \
         epochs={} lambda={} lr={} samples={} pretrain_seed={} momentum={} batch={}",
        study.classes,
        study.complex_dim,
        study.sigma_simple,
        study.sigma_complex,
        study.data_seed,
        study.pretrain_epochs,
        study.pretrain_lambda,
        study.pretrain_lr,
        study.pretrain_samples_per_epoch,
        study.pretrain_seed,
        study.momentum,
        study.batch_size
    )
}

pub fn checkpoint_path(out_dir: &Path) -> PathBuf {
    out_dir.join("pretrained.ckpt")
}

fn cache_key_path(out_dir: &Path) -> PathBuf {
    out_dir.join("pretrained.key")
}

/// Loads the cached extractor when its cache key matches the current
/// config; otherwise pretrains and refreshes the cache.
pub fn pretrain_or_load(study: &StudyConfig, gen: &Generator, out_dir: &Path) -> Result<Extractor> {
    let ckpt = checkpoint_path(out_dir);
    let key_file = cache_key_path(out_dir);
    let key = pretrain_cache_key(study);
    if ckpt.exists() && key_file.exists() {
        let stored = std::fs::read_to_string(&key_file)?;
        if stored.trim() == key {
            let text = std::fs::read_to_string(&ckpt)?;
            let graph = graph_from_text(&text)?;
            let extractor = FeatureExtractor::from_graph(graph);
            if extractor.input_dim() != gen.input_dim() {
                return Err(Error::config(format!(
                    "cached extractor expects input dim {}, dataset provides {}",
                    extractor.input_dim(),
                    gen.input_dim()
                )));
            }
            return Ok(extractor);
        }
    }
    let (extractor, report) = pretrain(gen, &pretrain_config(study))?;
    eprintln!(
        "pretrained extractor: probe acc {:.4}, reconstruction R² {:.4}, final loss {:.4}",
        report.probe_accuracy, report.reconstruction_r2, report.final_loss
    );
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(&ckpt, graph_to_text(extractor.graph()))?;
    std::fs::write(&key_file, key)?;
    Ok(extractor)
}

/// All jobs in deterministic order: ρ → protocol → grid point → seed.
pub fn enumerate_jobs(study: &StudyConfig) -> Result<Vec<RunSpec>> {
    let mut jobs = Vec::new();
    let mut run_id = 0usize;
    for (rho_index, &rho) in study.rho_values.iter().enumerate() {
        for name in &study.protocols {
            let protocol = parse_protocol(name)?;
            let grid = hyperparameter_grid(&protocol, study);
            for (hp_index, hp) in grid.iter().enumerate() {
                for &seed in &study.seeds {
                    jobs.push(RunSpec {
                        run_id,
                        rho_index,
                        rho,
                        protocol: protocol.clone(),
                        protocol_name: protocol.name(),
                        hp_index,
                        hp: hp.clone(),
                        seed,
                    });
                    run_id += 1;
                }
            }
        }
    }
    Ok(jobs)
}

/// Training seed for one run, derived from the per-run coordinates so a
/// config fully determines every number downstream.
fn run_seed(spec: &RunSpec) -> u64 {
    Rng::new(spec.seed)
        .substream(&spec.protocol_name, spec.hp_index as u64)
        .substream("rho", spec.rho_index as u64)
        .seed()
}

/// Executes one grid cell: adapt, then evaluate the full suite.
pub fn execute_run(
    spec: &RunSpec,
    study: &StudyConfig,
    extractor: &Extractor,
    bundle: &DataBundle,
) -> Result<RunRecord> {
    let cfg = spec
        .protocol
        .to_protocol_config(&spec.hp, study, run_seed(spec));
    let adapted = run_protocol(extractor, &bundle.train, &cfg)?;
    let id_val_acc = accuracy(&adapted.model, &bundle.val)?;
    let pgd = PgdConfig {
        epsilon: study.pgd_epsilon,
        steps: 10,
        seed: study.pgd_seed,
    };
    let report = evaluate_suite(&adapted, &bundle.eval, &pgd)?;
    Ok(RunRecord {
        spec: spec.clone(),
        id_val_acc: Some(id_val_acc),
        report: Some(report),
        error: None,
    })
}

/// Runs every job on `workers` threads. Results are keyed by run_id, so
/// the output is independent of scheduling.
pub fn run_all(
    jobs: &[RunSpec],
    study: &StudyConfig,
    extractor: &Extractor,
    bundles: &BTreeMap<(usize, u64), DataBundle>,
    workers: usize,
) -> Vec<RunRecord> {
    let workers = workers.max(1);
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<RunRecord>>> = Mutex::new(vec![None; jobs.len()]);

    std::thread::scope(|scope| {
        for _ in 0..workers.min(jobs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let spec = &jobs[i];
                let bundle = &bundles[&(spec.rho_index, spec.seed)];
                let record = match execute_run(spec, study, extractor, bundle) {
                    Ok(r) => r,
                    Err(e) => RunRecord {
                        spec: spec.clone(),
                        id_val_acc: None,
                        report: None,
                        error: Some(e.to_string()),
                    },
                };
                slots.lock().unwrap()[i] = Some(record);
            });
        }
    });

    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every job slot filled"))
        .collect()
}

/// Full study: pretrain-or-load, build bundles, run the grid.
pub fn run_study(study: &StudyConfig, out_dir: &Path, workers: usize) -> Result<Vec<RunRecord>> {
    study.validate()?;
    let gen = build_generator(study)?;
    let extractor = pretrain_or_load(study, &gen, out_dir)?;
    let jobs = enumerate_jobs(study)?;

    let mut bundles = BTreeMap::new();
    for rho_index in 0..study.rho_values.len() {
        for &seed in &study.seeds {
            bundles.insert((rho_index, seed), build_bundle(study, &gen, rho_index, seed)?);
        }
    }
    Ok(run_all(&jobs, study, &extractor, &bundles, workers))
}

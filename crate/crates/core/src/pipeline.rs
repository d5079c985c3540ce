//! Glue from an [`ExperimentConfig`] to datasets, runs, embeddings and
//! reports. The command-line tool is a thin layer over these functions.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{self, RunMeta};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::eval::{evaluate, extract_all, AccuracyReport, EmbeddingSet, ProtocolOptions};
use crate::graph::{
    load_tudataset, raw_dir, FeaturePolicy, FeatureSpec, PreparedDataset, TuDataset,
    MAX_DEGREE_BUCKETS,
};
use crate::scalar::Scalar;
use crate::training::{self, TrainOutcome};

/// Class-balanced seeded subset of `n` graphs, kept in dataset order.
pub fn stratified_subset(ds: &TuDataset, n: usize, seed: u64) -> TuDataset {
    if n >= ds.graphs.len() {
        return ds.clone();
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, g) in ds.graphs.iter().enumerate() {
        by_class.entry(g.graph_label).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
    }
    let mut picked = Vec::with_capacity(n);
    let mut round = 0;
    while picked.len() < n {
        for members in by_class.values() {
            if let Some(&i) = members.get(round) {
                if picked.len() < n {
                    picked.push(i);
                }
            }
        }
        round += 1;
    }
    picked.sort_unstable();
    ds.select(&picked)
}

/// Loads the configured dataset from the cache, applying `subset`.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<TuDataset> {
    let dir = raw_dir(&cfg.data_root(), cfg.dataset);
    let ds = load_tudataset(&dir, cfg.dataset)?;
    Ok(match cfg.subset {
        Some(n) => stratified_subset(&ds, n, cfg.seed),
        None => ds,
    })
}

/// Resolves the feature policy and width from the config and the data.
pub fn feature_spec(cfg: &ExperimentConfig, ds: &TuDataset) -> Result<FeatureSpec> {
    let auto = FeatureSpec::for_dataset(ds);
    let policy = cfg.feature_policy.unwrap_or(auto.policy);
    let natural = match policy {
        _ if policy == auto.policy => auto.width,
        FeaturePolicy::NodeLabelOnehot => {
            return Err(Error::Config(format!("{} has no node labels", ds.name)));
        }
        FeaturePolicy::DegreeOnehot => (ds.stats.max_degree + 1).min(MAX_DEGREE_BUCKETS),
    };
    Ok(FeatureSpec {
        policy,
        width: cfg.feature_width.unwrap_or(natural),
    })
}

/// Features, size filtering and padding geometry for `ds`. Pass the spec
/// stored in a checkpoint to reproduce a training run's features exactly.
pub fn prepare<T: Scalar>(
    cfg: &ExperimentConfig,
    ds: &TuDataset,
    spec: Option<FeatureSpec>,
) -> Result<PreparedDataset<T>> {
    let spec = match spec {
        Some(s) => s,
        None => feature_spec(cfg, ds)?,
    };
    PreparedDataset::new(ds, spec, cfg.size_multiple(), cfg.max_nodes)
}

pub fn train<T: Scalar>(
    cfg: &ExperimentConfig,
    data: &PreparedDataset<T>,
    run_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    training::train(cfg, data, run_dir, resume)
}

/// Loads a checkpoint and embeds `ds` with it, using the checkpoint's own
/// feature spec and extraction step.
pub fn embed<T: Scalar>(ckpt: &Path, ds: &TuDataset) -> Result<(RunMeta, EmbeddingSet)> {
    let (meta, state) = checkpoint::load::<T>(ckpt)?;
    if ds.name != meta.dataset {
        return Err(Error::Config(format!(
            "checkpoint was trained on {}, not {}",
            meta.dataset, ds.name
        )));
    }
    let data = prepare::<T>(&meta.config, ds, Some(meta.feature_spec))?;
    let set = extract_all(&meta, &state.model, &data, meta.config.extract_t)?;
    Ok((meta, set))
}

pub fn protocol_options(cfg: &ExperimentConfig) -> ProtocolOptions {
    ProtocolOptions {
        inner_folds: cfg.inner_folds,
        c_grid: cfg.svm_c_grid.clone(),
        seed: cfg.eval_seed,
    }
}

/// SVM cross-validation of an embedding set.
pub fn evaluate_set(set: &EmbeddingSet, cfg: &ExperimentConfig) -> Result<AccuracyReport> {
    evaluate(
        set.data.view(),
        &set.labels,
        cfg.folds,
        cfg.eval_seed,
        &protocol_options(cfg),
        &set.dataset,
        &set.config_hash,
    )
}

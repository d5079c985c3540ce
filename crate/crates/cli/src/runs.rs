//! Run directories and the train / embed / eval stages.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ddgae::checkpoint;
use ddgae::eval::{
    emit_report, read_embeddings, write_embeddings, AccuracyReport, EmbeddingSet, ReportFormat,
};
use ddgae::pipeline;
use ddgae::training::CHECKPOINT_FILE;
use ddgae::{Error, ExperimentConfig, Precision, Scalar};

pub const CONFIG_FILE: &str = "config.toml";
pub const EMBEDDING_FILE: &str = "embeddings.bin";

/// Existing run directory for `hash` under `out`, or a fresh
/// `<timestamp>-<hash>` one.
pub fn run_dir(out: &Path, hash: &str) -> Result<PathBuf> {
    if let Ok(entries) = std::fs::read_dir(out) {
        let mut found: Vec<PathBuf> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.is_dir()
                    && p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.ends_with(&format!("-{hash}")))
            })
            .collect();
        found.sort();
        if let Some(p) = found.pop() {
            return Ok(p);
        }
    }
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let dir = out.join(format!("{stamp}-{hash}"));
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Trains unless the run directory already holds a finished checkpoint.
pub fn train_stage(cfg: &ExperimentConfig, dir: &Path, resume: Option<&Path>) -> Result<PathBuf> {
    write_atomic(&dir.join(CONFIG_FILE), cfg.to_toml_string().as_bytes())?;
    let ckpt = dir.join(CHECKPOINT_FILE);
    if resume.is_none() && ckpt.is_file() {
        let header = checkpoint::read_header(&ckpt)?;
        if header.meta.config_hash == cfg.config_hash() && header.epoch >= cfg.epochs {
            eprintln!("train: reusing finished checkpoint {}", ckpt.display());
            return Ok(ckpt);
        }
    }
    // An unfinished checkpoint of the same run is continued in place.
    let resume = match resume {
        Some(p) => Some(p.to_path_buf()),
        None if ckpt.is_file() => Some(ckpt.clone()),
        None => None,
    };
    let ds = pipeline::load_dataset(cfg)?;
    let out = match cfg.precision {
        Precision::F32 => train_typed::<f32>(cfg, &ds, dir, resume.as_deref())?,
        Precision::F64 => train_typed::<f64>(cfg, &ds, dir, resume.as_deref())?,
    };
    Ok(out)
}

fn train_typed<T: Scalar>(
    cfg: &ExperimentConfig,
    ds: &ddgae::graph::TuDataset,
    dir: &Path,
    resume: Option<&Path>,
) -> Result<PathBuf> {
    let data = pipeline::prepare::<T>(cfg, ds, None)?;
    eprintln!(
        "train: {} graphs ({} dropped), features {:?} x {}, {} epochs",
        data.len(),
        data.dropped,
        data.feature_spec.policy,
        data.feature_spec.width,
        cfg.epochs
    );
    let out = pipeline::train(cfg, &data, dir, resume)?;
    if let Some(m) = out.last {
        eprintln!("train: step {} loss {:.6}", m.step, m.total);
    }
    Ok(out.checkpoint)
}

/// Embeds the checkpoint's dataset and writes `embeddings.bin` (+ `.csv`).
pub fn embed_stage(ckpt: &Path, out: Option<&Path>, data_root: Option<&Path>) -> Result<PathBuf> {
    let header = checkpoint::read_header(ckpt)?;
    let mut cfg = header.meta.config.clone();
    if let Some(root) = data_root {
        cfg.data_root = Some(root.to_path_buf());
    }
    let ds = pipeline::load_dataset(&cfg)?;
    let set = match header.scalar.as_str() {
        "f32" => pipeline::embed::<f32>(ckpt, &ds)?.1,
        "f64" => pipeline::embed::<f64>(ckpt, &ds)?.1,
        other => bail!(Error::Checkpoint(format!("unknown scalar type {other}"))),
    };
    let path = match out {
        Some(p) => p.to_path_buf(),
        None => ckpt.with_file_name(EMBEDDING_FILE),
    };
    let tmp = path.with_extension("partial");
    write_embeddings(&tmp, &set)?;
    std::fs::rename(&tmp, &path)?;
    std::fs::rename(tmp.with_extension("csv"), path.with_extension("csv"))?;
    eprintln!(
        "embed: {} graphs x {} dims -> {}",
        set.len(),
        set.dim(),
        path.display()
    );
    Ok(path)
}

/// Concatenates embedding files; they must agree on dataset and width,
/// and on config hash unless `force`.
pub fn load_embeddings(paths: &[PathBuf], force: bool) -> Result<EmbeddingSet> {
    let mut sets = paths
        .iter()
        .map(|p| read_embeddings(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let Some(mut acc) = (!sets.is_empty()).then(|| sets.remove(0)) else {
        bail!(Error::InvalidArgument("no embedding files given".into()));
    };
    for s in sets {
        if s.config_hash != acc.config_hash && !force {
            bail!(Error::Config(format!(
                "embedding files come from different configs ({} vs {}); pass --force to mix",
                acc.config_hash, s.config_hash
            )));
        }
        if s.dataset != acc.dataset || s.dim() != acc.dim() || s.enc_dim != acc.enc_dim {
            bail!(Error::Config(
                "embedding files differ in dataset or width".into()
            ));
        }
        acc.ids.extend(s.ids);
        acc.labels.extend(s.labels);
        acc.data = ndarray::concatenate(ndarray::Axis(0), &[acc.data.view(), s.data.view()])?;
    }
    Ok(acc)
}

/// Runs the SVM protocol and writes json, table and plot reports.
pub fn eval_stage(
    set: &EmbeddingSet,
    cfg: &ExperimentConfig,
    out_dir: &Path,
    force: bool,
) -> Result<AccuracyReport> {
    if cfg.config_hash() != set.config_hash && !force {
        bail!(Error::Config(format!(
            "embeddings carry config hash {} but the evaluation config hashes to {}; pass --force to mix",
            set.config_hash,
            cfg.config_hash()
        )));
    }
    let report = pipeline::evaluate_set(set, cfg)?;
    for f in [ReportFormat::Json, ReportFormat::Table, ReportFormat::Plot] {
        emit_report(&report, f, out_dir)?;
    }
    Ok(report)
}

/// The config stored beside an artifact, if any.
pub fn sibling_config(artifact: &Path) -> Result<Option<ExperimentConfig>> {
    let p = artifact.with_file_name(CONFIG_FILE);
    if p.is_file() {
        Ok(Some(ExperimentConfig::load(&p)?))
    } else {
        Ok(None)
    }
}

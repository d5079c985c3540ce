//! Binary checkpoints.
//!
//! Layout: `DDGAECKP` magic, `u32` format version, `u64` header length, a
//! JSON header, then every tensor as raw little-endian scalars in header
//! order, then a SHA-256 of all preceding bytes.

use std::io::Write;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::diffusion::{NoiseSchedule, ScheduleKind};
use crate::error::{Error, Result};
use crate::graph::{FeatureSpec, PreparedDataset};
use crate::networks::{Ddgae, ModelConfig, ModelGrads};
use crate::scalar::Scalar;
use crate::training::{Adam, TrainState};

pub const MAGIC: &[u8; 8] = b"DDGAECKP";
pub const FORMAT_VERSION: u32 = 1;

/// Run identity stored in every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub fingerprint: String,
    pub dataset: String,
    pub graphs: usize,
    pub feature_spec: FeatureSpec,
    pub n_max: usize,
    pub model: ModelConfig,
}

impl RunMeta {
    pub fn new<T: Scalar>(cfg: &ExperimentConfig, data: &PreparedDataset<T>) -> Self {
        Self {
            config: cfg.clone(),
            config_hash: cfg.config_hash(),
            fingerprint: cfg.training_fingerprint(),
            dataset: data.name.clone(),
            graphs: data.len(),
            feature_spec: data.feature_spec,
            n_max: data.n_max,
            model: cfg.model_config(data.feature_spec.width),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEcho {
    pub kind: ScheduleKind,
    pub steps: usize,
    pub alpha_bar: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub group: String,
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub scalar: String,
    pub meta: RunMeta,
    pub schedule: ScheduleEcho,
    pub step: u64,
    pub epoch: usize,
    pub cursor: usize,
    pub seed: u64,
    pub adam_t: u64,
    pub adam_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub tensors: Vec<TensorEntry>,
}

const GROUPS: [&str; 6] = [
    "encoder",
    "denoiser",
    "adam_m.encoder",
    "adam_m.denoiser",
    "adam_v.encoder",
    "adam_v.denoiser",
];

fn groups<T: Scalar>(state: &TrainState<T>) -> [&[ArrayD<T>]; 6] {
    [
        state.model.encoder.params.tensors(),
        state.model.denoiser.params.tensors(),
        &state.adam.m.encoder,
        &state.adam.m.denoiser,
        &state.adam.v.encoder,
        &state.adam.v.denoiser,
    ]
}

fn encode<T: Scalar>(meta: &RunMeta, state: &TrainState<T>) -> Result<Vec<u8>> {
    let s = NoiseSchedule::<f64>::new(meta.config.timesteps, meta.config.schedule)?;
    let enc_names = state.model.encoder.params.names();
    let dec_names = state.model.denoiser.params.names();
    let mut tensors = Vec::new();
    for (g, ts) in GROUPS.iter().zip(groups(state)) {
        let names = if g.ends_with("encoder") {
            enc_names
        } else {
            dec_names
        };
        for (name, t) in names.iter().zip(ts) {
            tensors.push(TensorEntry {
                group: g.to_string(),
                name: name.clone(),
                shape: t.shape().to_vec(),
            });
        }
    }
    let header = CheckpointHeader {
        scalar: T::NAME.to_string(),
        meta: meta.clone(),
        schedule: ScheduleEcho {
            kind: s.kind(),
            steps: s.steps(),
            alpha_bar: s.alpha_bars().to_vec(),
        },
        step: state.step,
        epoch: state.epoch,
        cursor: state.cursor,
        seed: state.seed,
        adam_t: state.adam.t,
        adam_lr: state.adam.lr,
        adam_beta1: state.adam.beta1,
        adam_beta2: state.adam.beta2,
        adam_eps: state.adam.eps,
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for ts in groups(state) {
        for t in ts {
            for &v in t.iter() {
                v.write_le(&mut out);
            }
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

/// Writes atomically: a temporary sibling is renamed over `path`.
pub fn save<T: Scalar>(path: &Path, meta: &RunMeta, state: &TrainState<T>) -> Result<()> {
    let bytes = encode(meta, state)?;
    let tmp = path.with_extension("ckpt.tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn split_header(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    if bytes.len() < 20 + 32 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch"));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let len = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
    let json = body
        .get(20..20 + len)
        .ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(json)?;
    Ok((header, &body[20 + len..]))
}

/// Reads only the header, e.g. to pick the scalar type before loading.
pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = std::fs::read(path)?;
    Ok(split_header(&bytes)?.0)
}

pub fn load<T: Scalar>(path: &Path) -> Result<(RunMeta, TrainState<T>)> {
    let bytes = std::fs::read(path)?;
    decode(&bytes)
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<(RunMeta, TrainState<T>)> {
    let (h, mut data) = split_header(bytes)?;
    if h.scalar != T::NAME {
        return Err(bad(format!(
            "checkpoint holds {} parameters, expected {}",
            h.scalar,
            T::NAME
        )));
    }
    let mut grouped: Vec<Vec<ArrayD<T>>> = vec![Vec::new(); GROUPS.len()];
    for e in &h.tensors {
        let gi = GROUPS
            .iter()
            .position(|g| *g == e.group)
            .ok_or_else(|| bad(format!("unknown tensor group {}", e.group)))?;
        let len: usize = e.shape.iter().product();
        let nbytes = len * T::BYTES;
        if data.len() < nbytes {
            return Err(bad("truncated tensor data"));
        }
        let vals = data[..nbytes]
            .chunks_exact(T::BYTES)
            .map(T::read_le)
            .collect();
        data = &data[nbytes..];
        let t = ArrayD::from_shape_vec(IxDyn(&e.shape), vals).map_err(|e| bad(e.to_string()))?;
        grouped[gi].push(t);
    }
    if !data.is_empty() {
        return Err(bad("trailing tensor data"));
    }
    let mut it = grouped.into_iter();
    let mut next = || it.next().unwrap();
    let model = Ddgae::from_tensors(h.meta.model.clone(), next(), next())?;
    let names: Vec<&String> = model
        .encoder
        .params
        .names()
        .iter()
        .chain(model.denoiser.params.names())
        .collect();
    let stored: Vec<&String> = h
        .tensors
        .iter()
        .take(names.len())
        .map(|e| &e.name)
        .collect();
    if names != stored {
        return Err(bad("tensor names do not match the model layout"));
    }
    let m = ModelGrads {
        encoder: next(),
        denoiser: next(),
    };
    let v = ModelGrads {
        encoder: next(),
        denoiser: next(),
    };
    let shapes_ok = |g: &ModelGrads<T>| {
        let want = ModelGrads::zeros_like(&model);
        g.encoder.len() == want.encoder.len()
            && g.denoiser.len() == want.denoiser.len()
            && g.encoder
                .iter()
                .zip(&want.encoder)
                .all(|(a, b)| a.shape() == b.shape())
            && g.denoiser
                .iter()
                .zip(&want.denoiser)
                .all(|(a, b)| a.shape() == b.shape())
    };
    if !shapes_ok(&m) || !shapes_ok(&v) {
        return Err(bad("optimizer moments do not match the model layout"));
    }
    let adam = Adam {
        lr: h.adam_lr,
        beta1: h.adam_beta1,
        beta2: h.adam_beta2,
        eps: h.adam_eps,
        t: h.adam_t,
        m,
        v,
    };
    let state = TrainState {
        model,
        adam,
        step: h.step,
        epoch: h.epoch,
        cursor: h.cursor,
        seed: h.seed,
    };
    Ok((h.meta, state))
}

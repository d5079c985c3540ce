//! Joint training of encoder and denoiser on the hybrid diffusion loss.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::ArrayD;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, RunMeta};
use crate::config::ExperimentConfig;
use crate::diffusion::{
    corrupt_with_rng, hybrid_loss, LossBreakdown, NoiseSchedule, NoisyAdjacency, ScheduleKind,
};
use crate::error::{invalid, Error, Result};
use crate::graph::{round_up, PaddedGraph, PreparedDataset};
use crate::networks::{Ddgae, GraphStep, ModelGrads};
use crate::scalar::Scalar;

pub const METRICS_FILE: &str = "metrics.ndjson";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const DIVERGED_FILE: &str = "diverged.ckpt";

/// Optimisation settings, a view of [`ExperimentConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub timesteps: usize,
    pub schedule: ScheduleKind,
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn from_experiment(cfg: &ExperimentConfig) -> Self {
        Self {
            timesteps: cfg.timesteps,
            schedule: cfg.schedule,
            lambda: cfg.lambda,
            learning_rate: cfg.learning_rate,
            batch_size: cfg.batch_size,
            epochs: cfg.epochs,
            seed: cfg.seed,
            checkpoint_every: cfg.checkpoint_every,
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule<f64>> {
        NoiseSchedule::new(self.timesteps, self.schedule)
    }
}

/// Adam with bias correction and no weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: ModelGrads<T>,
    pub v: ModelGrads<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(model: &Ddgae<T>, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: ModelGrads::zeros_like(model),
            v: ModelGrads::zeros_like(model),
        }
    }

    pub fn update(&mut self, model: &mut Ddgae<T>, grads: &ModelGrads<T>) {
        self.t += 1;
        let b1 = T::lit(self.beta1);
        let b2 = T::lit(self.beta2);
        let one = T::one();
        let c1 = T::lit(1.0 - self.beta1.powi(self.t as i32));
        let c2 = T::lit(1.0 - self.beta2.powi(self.t as i32));
        let lr = T::lit(self.lr);
        let eps = T::lit(self.eps);
        let params = model
            .encoder
            .params
            .tensors_mut()
            .iter_mut()
            .chain(model.denoiser.params.tensors_mut().iter_mut());
        let moments = self
            .m
            .encoder
            .iter_mut()
            .chain(self.m.denoiser.iter_mut())
            .zip(self.v.encoder.iter_mut().chain(self.v.denoiser.iter_mut()));
        let gs = grads.encoder.iter().chain(grads.denoiser.iter());
        for ((p, (m, v)), g) in params.zip(moments).zip(gs) {
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let mh = *m / c1;
                    let vh = *v / c2;
                    *p = *p - lr * mh / (vh.sqrt() + eps);
                });
        }
    }
}

/// Everything needed to continue training bit-identically. Randomness is
/// derived from `(seed, epoch, step)`, so the counters are the rng state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub model: Ddgae<T>,
    pub adam: Adam<T>,
    pub step: u64,
    pub epoch: usize,
    /// Next batch index within `epoch`.
    pub cursor: usize,
    pub seed: u64,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(model: Ddgae<T>, lr: f64, seed: u64) -> Self {
        let adam = Adam::new(&model, lr);
        Self {
            model,
            adam,
            step: 0,
            epoch: 0,
            cursor: 0,
            seed,
        }
    }
}

/// One metrics-log record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub t_mean: f64,
    pub l_vb: f64,
    pub aux_ce: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub metrics: StepMetrics,
    pub per_graph: Vec<LossBreakdown>,
    pub grad_norm: f64,
}

/// Where `x0` predictions come from during a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum X0Source {
    Denoiser,
    /// A frozen denoiser that returns the clean adjacency. It ignores the
    /// code, so no gradient reaches either network.
    Oracle,
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn graph_rng(seed: u64, step: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(seed, step), index as u64))
}

/// Samples `t ~ U{1..T}` and `A_t ~ q(A_t | A_0)` for one graph.
pub fn sample_noisy<T: Scalar>(
    g: &PaddedGraph<T>,
    schedule: &NoiseSchedule<f64>,
    seed: u64,
    step: u64,
    index: usize,
) -> Result<NoisyAdjacency> {
    let mut rng = graph_rng(seed, step, index);
    let t = rng.random_range(1..=schedule.steps());
    corrupt_with_rng(&g.clean_adjacency(), t, schedule, &mut rng)
}

fn oracle_step<T: Scalar>(
    model: &Ddgae<T>,
    g: &PaddedGraph<T>,
    a_t: &NoisyAdjacency,
    lambda: f64,
    schedule: &NoiseSchedule<f64>,
) -> Result<GraphStep<T>> {
    let probs = g
        .adjacency
        .mapv(|b| if b == 1 { T::one() } else { T::zero() });
    let loss = hybrid_loss(
        g.adjacency.view(),
        a_t.bits.view(),
        a_t.t,
        probs.view(),
        g.edge_mask.view(),
        lambda,
        schedule,
    )?;
    Ok(GraphStep {
        loss,
        grads: ModelGrads::zeros_like(model),
    })
}

fn grads_finite<T: Scalar>(g: &ModelGrads<T>) -> bool {
    g.encoder
        .iter()
        .chain(g.denoiser.iter())
        .all(|a: &ArrayD<T>| a.iter().all(|v| v.is_finite()))
}

/// One optimizer update on `batch`. On error `state` is left untouched.
pub fn train_step<T: Scalar>(
    state: &mut TrainState<T>,
    batch: &[PaddedGraph<T>],
    schedule: &NoiseSchedule<f64>,
    lambda: f64,
) -> Result<StepReport> {
    train_step_with(state, batch, schedule, lambda, X0Source::Denoiser)
}

pub fn train_step_with<T: Scalar>(
    state: &mut TrainState<T>,
    batch: &[PaddedGraph<T>],
    schedule: &NoiseSchedule<f64>,
    lambda: f64,
    source: X0Source,
) -> Result<StepReport> {
    if batch.is_empty() {
        return Err(invalid("training batch is empty"));
    }
    let model = &state.model;
    let (seed, step) = (state.seed, state.step);
    let results: Vec<Result<GraphStep<T>>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let a_t = sample_noisy(g, schedule, seed, step, i)?;
            match source {
                X0Source::Denoiser => model.loss_and_grads(g, &a_t, lambda, schedule),
                X0Source::Oracle => oracle_step(model, g, &a_t, lambda, schedule),
            }
        })
        .collect();

    let mut total = ModelGrads::zeros_like(model);
    let mut per_graph = Vec::with_capacity(batch.len());
    for (i, r) in results.into_iter().enumerate() {
        let gs = r?;
        if !gs.loss.total.is_finite() || !grads_finite(&gs.grads) {
            return Err(Error::NonFinite {
                step,
                graph: i,
                t: gs.loss.t_sampled,
                detail: format!(
                    "l_vb = {}, aux_ce = {}, total = {}",
                    gs.loss.l_vb_term, gs.loss.aux_ce, gs.loss.total
                ),
            });
        }
        total.add_assign(&gs.grads);
        per_graph.push(gs.loss);
    }
    let k = batch.len() as f64;
    total.scale(T::lit(1.0 / k));
    let grad_norm = total.norm();
    state.adam.update(&mut state.model, &total);
    state.step += 1;

    let mean = |f: fn(&LossBreakdown) -> f64| per_graph.iter().map(f).sum::<f64>() / k;
    let metrics = StepMetrics {
        step: state.step,
        t_mean: mean(|l| l.t_sampled as f64),
        l_vb: mean(|l| l.l_vb_term),
        aux_ce: mean(|l| l.aux_ce),
        total: mean(|l| l.total),
    };
    Ok(StepReport {
        metrics,
        per_graph,
        grad_norm,
    })
}

/// Graph order for `epoch`, a seeded permutation.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ 0x5EED_0F0E, epoch as u64));
    idx.shuffle(&mut rng);
    idx
}

/// Pads graph `i` to the smallest size the denoiser accepts. Outputs do not
/// depend on the amount of padding, so this is equivalent to padding to
/// `n_max` and much cheaper.
pub fn tight_padded<T: Scalar>(
    data: &PreparedDataset<T>,
    i: usize,
    multiple: usize,
) -> Result<PaddedGraph<T>> {
    let n = data.graphs[i].n_nodes.max(1);
    data.padded(i, Some(round_up(n, multiple)))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub steps: u64,
    pub last: Option<StepMetrics>,
}

/// Fresh training state for `cfg` on `data`.
pub fn init_state<T: Scalar>(
    cfg: &ExperimentConfig,
    data: &PreparedDataset<T>,
) -> Result<TrainState<T>> {
    let model = Ddgae::init(cfg.model_config(data.feature_spec.width), cfg.seed)?;
    Ok(TrainState::new(model, cfg.learning_rate, cfg.seed))
}

/// Runs (or resumes) training up to `cfg.epochs` epochs, appending one
/// record per step to `metrics.ndjson` in `run_dir`. Always leaves a
/// checkpoint at `run_dir/checkpoint.ckpt`.
pub fn train<T: Scalar>(
    cfg: &ExperimentConfig,
    data: &PreparedDataset<T>,
    run_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let meta = RunMeta::new(cfg, data);
    let mut state = match resume {
        Some(path) => {
            let (old, state) = checkpoint::load::<T>(path)?;
            if old.fingerprint != meta.fingerprint || old.model != meta.model {
                return Err(Error::Config(format!(
                    "refusing to resume {}: training settings differ (checkpoint {}, config {})",
                    path.display(),
                    old.fingerprint,
                    meta.fingerprint
                )));
            }
            state
        }
        None => init_state(cfg, data)?,
    };
    let tc = TrainConfig::from_experiment(cfg);
    let schedule = tc.schedule()?;
    let multiple = cfg.size_multiple();
    std::fs::create_dir_all(run_dir)?;
    let ckpt = run_dir.join(CHECKPOINT_FILE);
    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(run_dir.join(METRICS_FILE))?;

    let n = data.len();
    let batches = n.div_ceil(tc.batch_size);
    let mut last = None;
    while state.epoch < tc.epochs {
        let order = epoch_order(n, tc.seed, state.epoch);
        while state.cursor < batches {
            let lo = state.cursor * tc.batch_size;
            let hi = (lo + tc.batch_size).min(n);
            let batch = order[lo..hi]
                .iter()
                .map(|&i| tight_padded(data, i, multiple))
                .collect::<Result<Vec<_>>>()?;
            let report = match train_step(&mut state, &batch, &schedule, tc.lambda) {
                Ok(r) => r,
                Err(e @ Error::NonFinite { .. }) => {
                    checkpoint::save(&run_dir.join(DIVERGED_FILE), &meta, &state)?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            state.cursor += 1;
            serde_json::to_writer(&mut log, &report.metrics)?;
            log.write_all(b"\n")?;
            last = Some(report.metrics);
            if tc.checkpoint_every > 0 && state.step % tc.checkpoint_every as u64 == 0 {
                checkpoint::save(&ckpt, &meta, &state)?;
            }
        }
        state.epoch += 1;
        state.cursor = 0;
        checkpoint::save(&ckpt, &meta, &state)?;
    }
    log.flush()?;
    checkpoint::save(&ckpt, &meta, &state)?;
    Ok(TrainOutcome {
        checkpoint: ckpt,
        steps: state.step,
        last,
    })
}

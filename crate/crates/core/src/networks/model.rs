use ndarray::{Array1, ArrayD, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::denoiser::{Denoiser, DenoiserConfig};
use super::encoder::{Encoder, EncoderConfig};
use super::params::ParamStore;
use crate::autograd::{Tape, Var};
use crate::diffusion::{hybrid_loss_with_grad, LossBreakdown, NoiseSchedule, NoisyAdjacency};
use crate::error::{invalid, Error, Result};
use crate::graph::PaddedGraph;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub denoiser: DenoiserConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.spec()?;
        self.denoiser.layout()?;
        if self.encoder.out_dim != self.denoiser.z_dim {
            return Err(invalid(
                "encoder output width must equal the denoiser condition width",
            ));
        }
        Ok(())
    }

    pub fn embedding_dim(&self) -> usize {
        self.encoder.out_dim + self.denoiser.tap_dim
    }
}

/// Gradients for both parameter sets, aligned with their stores.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads<T> {
    pub encoder: Vec<ArrayD<T>>,
    pub denoiser: Vec<ArrayD<T>>,
}

impl<T: Scalar> ModelGrads<T> {
    pub fn zeros_like(model: &Ddgae<T>) -> Self {
        let z = |ts: &[ArrayD<T>]| ts.iter().map(|t| ArrayD::zeros(t.raw_dim())).collect();
        Self {
            encoder: z(model.encoder.params.tensors()),
            denoiser: z(model.denoiser.params.tensors()),
        }
    }

    pub fn add_assign(&mut self, other: &ModelGrads<T>) {
        for (a, b) in self
            .encoder
            .iter_mut()
            .chain(self.denoiser.iter_mut())
            .zip(other.encoder.iter().chain(other.denoiser.iter()))
        {
            a.zip_mut_with(b, |x, &y| *x = *x + y);
        }
    }

    pub fn scale(&mut self, k: T) {
        for a in self.encoder.iter_mut().chain(self.denoiser.iter_mut()) {
            a.mapv_inplace(|x| x * k);
        }
    }

    pub fn norm(&self) -> f64 {
        self.encoder
            .iter()
            .chain(self.denoiser.iter())
            .flat_map(|a| a.iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt()
    }
}

/// Result of one graph's forward/backward pass.
#[derive(Debug, Clone)]
pub struct GraphStep<T> {
    pub loss: LossBreakdown,
    pub grads: ModelGrads<T>,
}

/// Encoder plus conditional denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct Ddgae<T> {
    pub config: ModelConfig,
    pub encoder: Encoder<T>,
    pub denoiser: Denoiser<T>,
}

fn collect_grads<T: Scalar>(
    grads: &mut crate::autograd::Gradients<T>,
    vars: &[Var],
    params: &[ArrayD<T>],
) -> Vec<ArrayD<T>> {
    vars.iter()
        .zip(params)
        .map(|(v, p)| grads.take(*v).unwrap_or_else(|| ArrayD::zeros(p.raw_dim())))
        .collect()
}

impl<T: Scalar> Ddgae<T> {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::init(config.encoder.clone(), &mut rng)?;
        let denoiser = Denoiser::init(config.denoiser.clone(), &mut rng)?;
        Ok(Self {
            config,
            encoder,
            denoiser,
        })
    }

    /// Rebuilds a model from tensors stored in layout order.
    pub fn from_tensors(
        config: ModelConfig,
        encoder: Vec<ArrayD<T>>,
        denoiser: Vec<ArrayD<T>>,
    ) -> Result<Self> {
        config.validate()?;
        let enc_spec = config.encoder.spec()?;
        let (_, dec_spec) = config.denoiser.layout()?;
        let mismatch =
            |what: &str| Error::Checkpoint(format!("{what} tensors do not match config"));
        let enc =
            ParamStore::from_tensors(&enc_spec, encoder).ok_or_else(|| mismatch("encoder"))?;
        let dec =
            ParamStore::from_tensors(&dec_spec, denoiser).ok_or_else(|| mismatch("denoiser"))?;
        Ok(Self {
            encoder: Encoder::from_params(config.encoder.clone(), enc)?,
            denoiser: Denoiser::from_params(config.denoiser.clone(), dec)?,
            config,
        })
    }

    pub fn num_params(&self) -> usize {
        self.encoder.params.num_scalars() + self.denoiser.params.num_scalars()
    }

    pub fn all_finite(&self) -> bool {
        self.encoder.params.all_finite() && self.denoiser.params.all_finite()
    }

    /// Encodes `g`, denoises `a_t` conditioned on the code and back-propagates
    /// the hybrid loss into both networks.
    pub fn loss_and_grads(
        &self,
        g: &PaddedGraph<T>,
        a_t: &NoisyAdjacency,
        lambda: f64,
        schedule: &NoiseSchedule<f64>,
    ) -> Result<GraphStep<T>> {
        if a_t.bits.dim() != g.adjacency.dim() {
            return Err(invalid("noisy adjacency does not match the graph size"));
        }
        let mut tape = Tape::new();
        let enc_vars = self.encoder.params.register(&mut tape);
        let dec_vars = self.denoiser.params.register(&mut tape);
        let z = self.encoder.forward(&mut tape, &enc_vars, g)?;
        let trace = self.denoiser.forward(
            &mut tape,
            &dec_vars,
            a_t.bits.view(),
            g.node_mask.view(),
            a_t.t,
            z,
        )?;
        let probs = tape
            .value(trace.probs)
            .view()
            .into_dimensionality()
            .unwrap();
        let (loss, dprobs) = hybrid_loss_with_grad(
            g.adjacency.view(),
            a_t.bits.view(),
            a_t.t,
            probs,
            g.edge_mask.view(),
            lambda,
            schedule,
        )?;
        let root = tape.loss(trace.probs, T::lit(loss.total), dprobs.into_dyn());
        let mut grads = tape.backward(root);
        Ok(GraphStep {
            loss,
            grads: ModelGrads {
                encoder: collect_grads(&mut grads, &enc_vars, self.encoder.params.tensors()),
                denoiser: collect_grads(&mut grads, &dec_vars, self.denoiser.params.tensors()),
            },
        })
    }

    /// `(h_enc, h_int)` from one encoder call and one denoiser call on the
    /// clean adjacency at step `t`.
    pub fn embed_parts(&self, g: &PaddedGraph<T>, t: usize) -> Result<(Array1<T>, Array1<T>)> {
        let mut tape = Tape::new();
        let enc_vars: Vec<Var> = self
            .encoder
            .params
            .tensors()
            .iter()
            .map(|p| tape.constant(p.clone()))
            .collect();
        let dec_vars: Vec<Var> = self
            .denoiser
            .params
            .tensors()
            .iter()
            .map(|p| tape.constant(p.clone()))
            .collect();
        let z = self.encoder.forward(&mut tape, &enc_vars, g)?;
        let trace = self.denoiser.forward(
            &mut tape,
            &dec_vars,
            g.adjacency.view(),
            g.node_mask.view(),
            t,
            z,
        )?;
        let h_enc = tape
            .value(z)
            .index_axis(Axis(0), 0)
            .iter()
            .copied()
            .collect();
        let h_int = tape.value(trace.h_int).iter().copied().collect();
        Ok((h_enc, h_int))
    }
}

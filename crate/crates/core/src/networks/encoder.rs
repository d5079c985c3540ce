use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{Init, ParamSpec, ParamStore};
use crate::autograd::{Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::graph::PaddedGraph;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub layers: usize,
}

impl EncoderConfig {
    pub fn new(in_dim: usize) -> Self {
        Self {
            in_dim,
            hidden: 128,
            out_dim: 64,
            layers: 3,
        }
    }

    fn widths(&self) -> Vec<(usize, usize)> {
        (0..self.layers)
            .map(|l| {
                let i = if l == 0 { self.in_dim } else { self.hidden };
                let o = if l + 1 == self.layers {
                    self.out_dim
                } else {
                    self.hidden
                };
                (i, o)
            })
            .collect()
    }

    pub(crate) fn spec(&self) -> Result<ParamSpec> {
        if self.layers == 0 || self.in_dim == 0 || self.hidden == 0 || self.out_dim == 0 {
            return Err(invalid("encoder dimensions must be positive"));
        }
        Ok(self
            .widths()
            .into_iter()
            .enumerate()
            .flat_map(|(l, (i, o))| {
                [
                    (format!("gcn{l}.weight"), vec![i, o], Init::He(i)),
                    (format!("gcn{l}.bias"), vec![1, o], Init::Zero),
                ]
            })
            .collect())
    }
}

/// Symmetric normalisation `D^-1/2 (A + I) D^-1/2` with self-loops only on
/// real nodes; padded rows and columns stay zero.
pub fn gcn_normalize<T: Scalar>(adjacency: ArrayView2<u8>, node_mask: ArrayView1<u8>) -> Array2<T> {
    let n = adjacency.nrows();
    let mut a = Array2::<T>::zeros((n, n));
    for i in 0..n {
        if node_mask[i] == 0 {
            continue;
        }
        for j in 0..n {
            if node_mask[j] == 1 && (i == j || adjacency[[i, j]] == 1) {
                a[[i, j]] = T::one();
            }
        }
    }
    let inv_sqrt: Vec<T> = a
        .axis_iter(Axis(0))
        .map(|row| {
            let d = row.sum();
            if d > T::zero() {
                d.sqrt().recip()
            } else {
                T::zero()
            }
        })
        .collect();
    for ((i, j), v) in a.indexed_iter_mut() {
        *v = *v * inv_sqrt[i] * inv_sqrt[j];
    }
    a
}

/// GCN encoder with masked mean pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    pub config: EncoderConfig,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Encoder<T> {
    pub fn init<R: Rng + ?Sized>(config: EncoderConfig, rng: &mut R) -> Result<Self> {
        let spec = config.spec()?;
        Ok(Self {
            params: ParamStore::from_spec(&spec, rng),
            config,
        })
    }

    pub fn from_params(config: EncoderConfig, params: ParamStore<T>) -> Result<Self> {
        let spec = config.spec()?;
        let params = ParamStore::from_tensors(&spec, params.tensors().to_vec())
            .ok_or_else(|| Error::Checkpoint("encoder tensors do not match config".into()))?;
        Ok(Self { config, params })
    }

    /// Records the forward pass on `tape` and returns the pooled `[1, out_dim]` row.
    pub fn forward(&self, tape: &mut Tape<T>, vars: &[Var], g: &PaddedGraph<T>) -> Result<Var> {
        if g.features.ncols() != self.config.in_dim {
            return Err(invalid(format!(
                "feature width {} does not match encoder input {}",
                g.features.ncols(),
                self.config.in_dim
            )));
        }
        let real = g.node_mask.iter().filter(|&&m| m == 1).count();
        if real == 0 {
            return Err(invalid("cannot encode a graph without nodes"));
        }
        let a_hat =
            tape.constant(gcn_normalize::<T>(g.adjacency.view(), g.node_mask.view()).into_dyn());
        let mut h = tape.constant(g.features.clone().into_dyn());
        for l in 0..self.config.layers {
            let xw = tape.matmul(h, vars[2 * l]);
            let agg = tape.matmul(a_hat, xw);
            h = tape.add_row(agg, vars[2 * l + 1]);
            if l + 1 < self.config.layers {
                h = tape.relu(h);
            }
        }
        let inv = T::one() / T::from_usize(real).unwrap();
        let pool = g.node_mask.mapv(|m| if m == 1 { inv } else { T::zero() });
        let pool = tape.constant(pool.insert_axis(Axis(0)).into_dyn());
        Ok(tape.matmul(pool, h))
    }
}

/// Graph-level encoding `h_enc`.
pub fn encode<T: Scalar>(encoder: &Encoder<T>, g: &PaddedGraph<T>) -> Result<Array1<T>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = encoder
        .params
        .tensors()
        .iter()
        .map(|t| tape.constant(t.clone()))
        .collect();
    let out = encoder.forward(&mut tape, &vars, g)?;
    Ok(tape.value(out).iter().copied().collect())
}

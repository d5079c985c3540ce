use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{Init, ParamSpec, ParamStore};
use crate::autograd::{Tape, Var};
use crate::diffusion::NoisyAdjacency;
use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    /// Channel width per resolution level; the grid is pooled once per level.
    pub channels: Vec<usize>,
    pub time_dim: usize,
    /// Width of the conditioning code `z_enc`.
    pub z_dim: usize,
    /// Width of the combined timestep/condition embedding.
    pub emb_dim: usize,
    /// Width of the pooled bottleneck tap `h_int`.
    pub tap_dim: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            channels: vec![32, 64, 128],
            time_dim: 64,
            z_dim: 64,
            emb_dim: 128,
            tap_dim: 64,
        }
    }
}

impl DenoiserConfig {
    pub fn levels(&self) -> usize {
        self.channels.len()
    }

    /// Padded sizes must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.levels()
    }

    pub(crate) fn layout(&self) -> Result<(Layout, ParamSpec)> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(invalid("denoiser needs at least one non-empty level"));
        }
        if self.time_dim == 0 || self.time_dim % 2 == 1 {
            return Err(invalid("time embedding width must be positive and even"));
        }
        if self.z_dim == 0 || self.emb_dim == 0 || self.tap_dim == 0 {
            return Err(invalid("denoiser widths must be positive"));
        }
        let mut spec = Vec::new();
        let mut add = |name: String, shape: Vec<usize>, init: Init| {
            spec.push((name, shape, init));
            spec.len() - 1
        };
        let e = self.emb_dim;
        let time_w = add(
            "time.weight".into(),
            vec![self.time_dim, e],
            Init::FanIn(self.time_dim),
        );
        let time_b = add("time.bias".into(), vec![1, e], Init::Zero);
        let cond_w = add(
            "cond.weight".into(),
            vec![self.z_dim, e],
            Init::FanIn(self.z_dim),
        );
        let c0 = self.channels[0];
        let in_w = add("in.weight".into(), vec![c0, 1, 3, 3], Init::He(9));
        let in_b = add("in.bias".into(), vec![c0], Init::Zero);

        let mut block = |prefix: String, cin: usize, cout: usize| BlockIdx {
            w1: add(
                format!("{prefix}.conv1.weight"),
                vec![cout, cin, 3, 3],
                Init::He(9 * cin),
            ),
            b1: add(format!("{prefix}.conv1.bias"), vec![cout], Init::Zero),
            ew: add(
                format!("{prefix}.emb.weight"),
                vec![e, cout],
                Init::FanIn(e),
            ),
            eb: add(format!("{prefix}.emb.bias"), vec![1, cout], Init::Zero),
            w2: add(
                format!("{prefix}.conv2.weight"),
                vec![cout, cout, 3, 3],
                Init::He(9 * cout),
            ),
            b2: add(format!("{prefix}.conv2.bias"), vec![cout], Init::Zero),
        };
        let levels = self.levels();
        let down: Vec<BlockIdx> = (0..levels)
            .map(|l| {
                let cin = if l == 0 { c0 } else { self.channels[l - 1] };
                block(format!("down{l}"), cin, self.channels[l])
            })
            .collect();
        let cl = self.channels[levels - 1];
        let mid = block("mid".into(), cl, cl);
        // up[l] runs at the resolution of down[l]; stored deepest first
        let up: Vec<BlockIdx> = (0..levels)
            .rev()
            .map(|l| {
                let from = if l + 1 == levels {
                    cl
                } else {
                    self.channels[l + 1]
                };
                block(format!("up{l}"), from + self.channels[l], self.channels[l])
            })
            .collect();
        let tap_w = add("tap.weight".into(), vec![cl, self.tap_dim], Init::FanIn(cl));
        let tap_b = add("tap.bias".into(), vec![1, self.tap_dim], Init::Zero);
        let out_w = add("out.weight".into(), vec![1, c0, 1, 1], Init::Zero);
        let out_b = add("out.bias".into(), vec![1], Init::Zero);
        let layout = Layout {
            time_w,
            time_b,
            cond_w,
            in_w,
            in_b,
            down,
            mid,
            up,
            tap_w,
            tap_b,
            out_w,
            out_b,
        };
        Ok((layout, spec))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BlockIdx {
    w1: usize,
    b1: usize,
    ew: usize,
    eb: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layout {
    time_w: usize,
    time_b: usize,
    cond_w: usize,
    in_w: usize,
    in_b: usize,
    down: Vec<BlockIdx>,
    mid: BlockIdx,
    up: Vec<BlockIdx>,
    tap_w: usize,
    tap_b: usize,
    out_w: usize,
    out_b: usize,
}

/// Sinusoidal embedding: `[sin(t w_0) .. sin(t w_{d/2-1}), cos(t w_0) ..]`
/// with `w_i = 10000^(-i / (d/2))`.
pub fn time_embedding<T: Scalar>(t: usize, dim: usize) -> Result<Array1<T>> {
    if dim == 0 || dim % 2 == 1 {
        return Err(invalid("time embedding width must be positive and even"));
    }
    let half = dim / 2;
    let mut out = Array1::<T>::zeros(dim);
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[i] = T::lit(arg.sin());
        out[half + i] = T::lit(arg.cos());
    }
    Ok(out)
}

/// Tape handles produced by one denoiser forward pass.
#[derive(Debug, Clone, Copy)]
pub struct DenoiserTrace {
    /// Symmetrised logits `[N, N]`.
    pub logits: Var,
    /// `sigmoid(logits)` masked to real edge slots.
    pub probs: Var,
    /// `[1, tap_dim]`.
    pub h_int: Var,
    /// Top-level features entering the output head, `[C0, N, N]`.
    pub head_input: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserOutput<T> {
    pub x0_probs: Array2<T>,
    pub h_int: Array1<T>,
}

/// Conditional UNet over the adjacency grid predicting `p(x_0 = 1 | x_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser<T> {
    pub config: DenoiserConfig,
    pub params: ParamStore<T>,
    layout: Layout,
}

fn prefix_len(node_mask: ArrayView1<u8>) -> Result<usize> {
    let n = node_mask.iter().take_while(|&&m| m == 1).count();
    if node_mask.iter().skip(n).any(|&m| m != 0) {
        return Err(invalid("real nodes must occupy the leading rows"));
    }
    Ok(n)
}

fn block_mask<T: Scalar>(size: usize, real: usize) -> Array2<T> {
    Array2::from_shape_fn((size, size), |(i, j)| {
        if i < real && j < real {
            T::one()
        } else {
            T::zero()
        }
    })
}

impl<T: Scalar> Denoiser<T> {
    pub fn init<R: Rng + ?Sized>(config: DenoiserConfig, rng: &mut R) -> Result<Self> {
        let (layout, spec) = config.layout()?;
        Ok(Self {
            params: ParamStore::from_spec(&spec, rng),
            config,
            layout,
        })
    }

    pub fn from_params(config: DenoiserConfig, params: ParamStore<T>) -> Result<Self> {
        let (layout, spec) = config.layout()?;
        let params = ParamStore::from_tensors(&spec, params.tensors().to_vec())
            .ok_or_else(|| Error::Checkpoint("denoiser tensors do not match config".into()))?;
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    fn block(
        &self,
        tape: &mut Tape<T>,
        v: &[Var],
        idx: &BlockIdx,
        x: Var,
        emb: Var,
        mask: &Array2<T>,
    ) -> Var {
        let h = tape.conv2d(x, v[idx.w1]);
        let h = tape.add_channel(h, v[idx.b1]);
        let film = tape.matmul(emb, v[idx.ew]);
        let film = tape.add_row(film, v[idx.eb]);
        let h = tape.add_channel(h, film);
        let h = tape.silu(h);
        let h = tape.mask(h, mask.clone());
        let h = tape.conv2d(h, v[idx.w2]);
        let h = tape.add_channel(h, v[idx.b2]);
        let h = tape.silu(h);
        tape.mask(h, mask.clone())
    }

    /// Records a forward pass. `bits` is the noisy adjacency, `node_mask`
    /// marks real nodes (a prefix), `z` is a `[1, z_dim]` row.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        v: &[Var],
        bits: ArrayView2<u8>,
        node_mask: ArrayView1<u8>,
        t: usize,
        z: Var,
    ) -> Result<DenoiserTrace> {
        let n = bits.nrows();
        if bits.ncols() != n || node_mask.len() != n {
            return Err(invalid("adjacency and node mask sizes differ"));
        }
        if n == 0 || !n.is_multiple_of(self.config.size_multiple()) {
            return Err(invalid(format!(
                "padded size {n} is not a positive multiple of {}",
                self.config.size_multiple()
            )));
        }
        if tape.value(z).shape() != [1, self.config.z_dim] {
            return Err(invalid("conditioning code has the wrong width"));
        }
        let real = prefix_len(node_mask)?;
        let lay = &self.layout;
        let levels = self.config.levels();
        let masks: Vec<Array2<T>> = (0..=levels)
            .map(|l| block_mask(n >> l, real.div_ceil(1 << l)))
            .collect();

        let temb = time_embedding::<T>(t, self.config.time_dim)?.insert_axis(Axis(0));
        let temb = tape.constant(temb.into_dyn());
        let e_t = tape.matmul(temb, v[lay.time_w]);
        let e_t = tape.add_row(e_t, v[lay.time_b]);
        let e_z = tape.matmul(z, v[lay.cond_w]);
        let emb = tape.add(e_t, e_z);
        let emb = tape.silu(emb);

        let x = bits.mapv(|b| if b == 1 { T::one() } else { T::zero() });
        let x = tape.constant(x.insert_axis(Axis(0)).into_dyn());
        let h = tape.conv2d(x, v[lay.in_w]);
        let h = tape.add_channel(h, v[lay.in_b]);
        let h = tape.silu(h);
        let mut h = tape.mask(h, masks[0].clone());

        let mut skips = Vec::with_capacity(levels);
        for (l, idx) in lay.down.iter().enumerate() {
            h = self.block(tape, v, idx, h, emb, &masks[l]);
            skips.push(h);
            h = tape.avg_pool2(h);
        }
        h = self.block(tape, v, &lay.mid, h, emb, &masks[levels]);

        let bottom = &masks[levels];
        let count = bottom.sum();
        let weights = bottom.mapv(|m| m / count);
        let pooled = tape.spatial_mean(h, weights);
        let h_int = tape.matmul(pooled, v[lay.tap_w]);
        let h_int = tape.add_row(h_int, v[lay.tap_b]);

        for (idx, l) in lay.up.iter().zip((0..levels).rev()) {
            let u = tape.upsample2(h);
            let u = tape.mask(u, masks[l].clone());
            let cat = tape.concat_channels(u, skips[l]);
            h = self.block(tape, v, idx, cat, emb, &masks[l]);
        }
        let head_input = h;
        let out = tape.conv2d(h, v[lay.out_w]);
        let out = tape.add_channel(out, v[lay.out_b]);
        let logits = tape.symmetrize(out);
        let probs = tape.sigmoid(logits);
        let mut edge_mask = masks[0].clone();
        edge_mask.diag_mut().fill(T::zero());
        let probs = tape.mask(probs, edge_mask);
        Ok(DenoiserTrace {
            logits,
            probs,
            h_int,
            head_input,
        })
    }
}

/// One denoiser call: x0 probabilities for every slot and the bottleneck tap.
pub fn denoise<T: Scalar>(
    denoiser: &Denoiser<T>,
    a_t: &NoisyAdjacency,
    node_mask: ArrayView1<u8>,
    t: usize,
    z_enc: ArrayView1<T>,
) -> Result<DenoiserOutput<T>> {
    if a_t.edge_mask.dim() != a_t.bits.dim() {
        return Err(invalid("edge mask shape differs from adjacency"));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = denoiser
        .params
        .tensors()
        .iter()
        .map(|p| tape.constant(p.clone()))
        .collect();
    let z = tape.constant(z_enc.to_owned().insert_axis(Axis(0)).into_dyn());
    let trace = denoiser.forward(&mut tape, &vars, a_t.bits.view(), node_mask, t, z)?;
    let x0_probs = tape
        .value(trace.probs)
        .view()
        .into_dimensionality()
        .unwrap()
        .to_owned();
    Ok(DenoiserOutput {
        x0_probs,
        h_int: tape.value(trace.h_int).iter().copied().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> DenoiserConfig {
        DenoiserConfig {
            channels: vec![4, 8],
            time_dim: 8,
            z_dim: 6,
            emb_dim: 8,
            tap_dim: 5,
        }
    }

    fn adjacency(n: usize, real: usize, seed: u64) -> (NoisyAdjacency, Array1<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bits = Array2::<u8>::zeros((n, n));
        for i in 0..real {
            for j in (i + 1)..real {
                if rng.random::<f64>() < 0.4 {
                    bits[[i, j]] = 1;
                    bits[[j, i]] = 1;
                }
            }
        }
        let mask = Array2::from_shape_fn((n, n), |(i, j)| u8::from(i < real && j < real && i != j));
        let node_mask = Array1::from_shape_fn(n, |i| u8::from(i < real));
        (
            NoisyAdjacency {
                bits,
                t: 0,
                edge_mask: mask,
            },
            node_mask,
        )
    }

    #[test]
    fn time_embedding_at_zero() {
        let e = time_embedding::<f64>(0, 8).unwrap();
        assert!(e.iter().take(4).all(|&v| v == 0.0));
        assert!(e.iter().skip(4).all(|&v| v == 1.0));
        assert!(time_embedding::<f64>(0, 7).is_err());
    }

    #[test]
    fn time_embedding_distinguishes_steps() {
        let all: Vec<Array1<f64>> = (0..=32).map(|t| time_embedding(t, 64).unwrap()).collect();
        assert_ne!(all[1], all[2]);
        for a in 0..all.len() {
            for b in (a + 1)..all.len() {
                assert_ne!(all[a], all[b]);
            }
        }
    }

    #[test]
    fn zero_head_predicts_one_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = Denoiser::<f64>::init(small(), &mut rng).unwrap();
        let (a, m) = adjacency(8, 6, 1);
        let z = Array1::from_elem(6, 0.3);
        let out = denoise(&d, &a, m.view(), 3, z.view()).unwrap();
        assert_eq!(out.h_int.len(), 5);
        for ((i, j), &p) in out.x0_probs.indexed_iter() {
            let expect = if a.edge_mask[[i, j]] == 1 { 0.5 } else { 0.0 };
            assert_eq!(p, expect);
        }
    }

    #[test]
    fn output_is_symmetric_for_random_head() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut d = Denoiser::<f64>::init(small(), &mut rng).unwrap();
        let w = d.params.get_mut("out.weight").unwrap();
        w.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        let (a, m) = adjacency(8, 7, 2);
        let z = Array1::from_shape_fn(6, |i| i as f64 * 0.1);
        let out = denoise(&d, &a, m.view(), 2, z.view()).unwrap();
        assert_eq!(out.x0_probs, out.x0_probs.t());
        assert!(out.x0_probs.iter().any(|&p| p != 0.5 && p != 0.0));
    }

    #[test]
    fn rejects_bad_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = Denoiser::<f64>::init(small(), &mut rng).unwrap();
        let (a, m) = adjacency(6, 4, 0);
        assert!(denoise(&d, &a, m.view(), 1, Array1::zeros(6).view()).is_err());
        let (a, m) = adjacency(8, 4, 0);
        assert!(denoise(&d, &a, m.view(), 1, Array1::zeros(5).view()).is_err());
    }

    #[test]
    fn padding_does_not_change_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut d = Denoiser::<f64>::init(small(), &mut rng).unwrap();
        for t in d.params.tensors_mut() {
            t.mapv_inplace(|v| v + rng.random_range(-0.2..0.2));
        }
        let (small_a, small_m) = adjacency(8, 5, 3);
        let mut big_bits = Array2::<u8>::zeros((16, 16));
        big_bits
            .slice_mut(ndarray::s![..8, ..8])
            .assign(&small_a.bits);
        let big_mask = Array2::from_shape_fn((16, 16), |(i, j)| u8::from(i < 5 && j < 5 && i != j));
        let big = NoisyAdjacency {
            bits: big_bits,
            t: 0,
            edge_mask: big_mask,
        };
        let big_m = Array1::from_shape_fn(16, |i| u8::from(i < 5));
        let z = Array1::from_elem(6, -0.4);
        let a = denoise(&d, &small_a, small_m.view(), 4, z.view()).unwrap();
        let b = denoise(&d, &big, big_m.view(), 4, z.view()).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                assert!((a.x0_probs[[i, j]] - b.x0_probs[[i, j]]).abs() < 1e-12);
            }
        }
        for (x, y) in a.h_int.iter().zip(b.h_int.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn code_reaches_the_head_input_at_init() {
        // The zero head hides the code from the output at initialisation,
        // but the features entering the head already depend on it.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let d = Denoiser::<f64>::init(small(), &mut rng).unwrap();
        let (a, m) = adjacency(8, 8, 3);
        let z0 = Array1::from_shape_fn(6, |i| 0.1 * i as f64);
        let mut z1 = z0.clone();
        z1[2] += 1e-3;
        let head = |z: &Array1<f64>| {
            let mut tape = Tape::new();
            let vars = d.params.register(&mut tape);
            let zv = tape.constant(z.clone().insert_axis(Axis(0)).into_dyn());
            let trace = d
                .forward(&mut tape, &vars, a.bits.view(), m.view(), 2, zv)
                .unwrap();
            tape.value(trace.head_input).clone()
        };
        let moved = (&head(&z1) - &head(&z0))
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        assert!(moved > 1e-9, "head input ignores the code");
        let p0 = denoise(&d, &a, m.view(), 2, z0.view()).unwrap().x0_probs;
        let p1 = denoise(&d, &a, m.view(), 2, z1.view()).unwrap().x0_probs;
        assert_eq!(p0, p1);
    }
}

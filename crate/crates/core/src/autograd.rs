//! Minimal reverse-mode automatic differentiation over `ndarray` tensors.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks it in reverse. The op set is exactly what the GCN encoder and the
//! UNet denoiser need. Spatial tensors are laid out `[channels, height, width]`
//! and vectors are `[1, n]` rows.

use ndarray::{s, Array2, Array3, ArrayD, ArrayView2, ArrayView3, Axis, Ix2, Ix3, IxDyn};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    AddChannel(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Silu(Var),
    Sigmoid(Var),
    Mask(Var, Array2<T>),
    Conv2d {
        x: Var,
        w: Var,
        cols: Array2<T>,
        k: usize,
    },
    AvgPool2(Var),
    Upsample2(Var),
    ConcatChannels(Var, Var),
    ConcatCols(Var, Var),
    SpatialMean {
        x: Var,
        weights: Array2<T>,
    },
    Symmetrize(Var),
    Loss {
        x: Var,
        grad: ArrayD<T>,
    },
}

struct Node<T> {
    value: ArrayD<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn as2<T>(a: &ArrayD<T>) -> ArrayView2<'_, T> {
    a.view()
        .into_dimensionality::<Ix2>()
        .expect("rank-2 tensor")
}

fn as3<T>(a: &ArrayD<T>) -> ArrayView3<'_, T> {
    a.view()
        .into_dimensionality::<Ix3>()
        .expect("rank-3 tensor")
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `[C, H, W] -> [C*k*k, H*W]` with zero padding `k / 2`.
fn im2col<T: Scalar>(x: ArrayView3<T>, k: usize) -> Array2<T> {
    let (c, h, w) = x.dim();
    let p = (k / 2) as isize;
    let mut cols = Array2::<T>::zeros((c * k * k, h * w));
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let mut dst = cols.row_mut(row);
                let dst = dst.as_slice_mut().unwrap();
                for y in 0..h {
                    let sy = y as isize + ky as isize - p;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xx in 0..w {
                        let sx = xx as isize + kx as isize - p;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        dst[y * w + xx] = x[[ci, sy as usize, sx as usize]];
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: ArrayView2<T>, c: usize, h: usize, w: usize, k: usize) -> Array3<T> {
    let p = (k / 2) as isize;
    let mut x = Array3::<T>::zeros((c, h, w));
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = cols.row((ci * k + ky) * k + kx);
                for y in 0..h {
                    let sy = y as isize + ky as isize - p;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xx in 0..w {
                        let sx = xx as isize + kx as isize - p;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        x[[ci, sy as usize, sx as usize]] =
                            x[[ci, sy as usize, sx as usize]] + row[y * w + xx];
                    }
                }
            }
        }
    }
    x
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: ArrayD<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &ArrayD<T> {
        &self.nodes[v.0].value
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: ArrayD<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: ArrayD<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = as2(self.value(a)).dot(&as2(self.value(b))).into_dyn();
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    /// `[m, n] + [1, n]`, broadcasting the row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let out = (&as2(self.value(a)) + &as2(self.value(row))).into_dyn();
        let ng = self.ng(a) || self.ng(row);
        self.push(out, Op::AddRow(a, row), ng)
    }

    /// `[C, H, W] + bias`, where `bias` holds `C` values in any shape.
    pub fn add_channel(&mut self, x: Var, bias: Var) -> Var {
        let b = self.value(bias).iter().copied().collect::<Vec<_>>();
        let mut out = self.value(x).clone();
        for (mut plane, &bc) in out.axis_iter_mut(Axis(0)).zip(&b) {
            plane.mapv_inplace(|v| v + bc);
        }
        let ng = self.ng(x) || self.ng(bias);
        self.push(out, Op::AddChannel(x, bias), ng)
    }

    pub fn scale(&mut self, x: Var, k: T) -> Var {
        let out = self.value(x).mapv(|v| v * k);
        let ng = self.ng(x);
        self.push(out, Op::Scale(x, k), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| v.max(T::zero()));
        let ng = self.ng(x);
        self.push(out, Op::Relu(x), ng)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(|v| v * sigmoid(v));
        let ng = self.ng(x);
        self.push(out, Op::Silu(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(sigmoid);
        let ng = self.ng(x);
        self.push(out, Op::Sigmoid(x), ng)
    }

    /// Multiplies every channel of `[C, H, W]` (or a plain `[H, W]`) by `mask`.
    pub fn mask(&mut self, x: Var, mask: Array2<T>) -> Var {
        let out = match self.value(x).ndim() {
            2 => (&as2(self.value(x)) * &mask).into_dyn(),
            _ => (&as3(self.value(x)) * &mask).into_dyn(),
        };
        let ng = self.ng(x);
        self.push(out, Op::Mask(x, mask), ng)
    }

    /// Same-size 2-D convolution of `[C_in, H, W]` with `[C_out, C_in, k, k]`
    /// weights, zero padding `k / 2`, odd `k`.
    pub fn conv2d(&mut self, x: Var, w: Var) -> Var {
        let xv = as3(self.value(x));
        let (_, h, wd) = xv.dim();
        let ws = self.value(w).shape().to_vec();
        let (c_out, c_in, k) = (ws[0], ws[1], ws[2]);
        assert_eq!(xv.dim().0, c_in, "conv input channels");
        let cols = im2col(xv, k);
        let w2 = self.value(w).to_shape((c_out, c_in * k * k)).unwrap();
        let out = w2
            .dot(&cols)
            .to_shape(IxDyn(&[c_out, h, wd]))
            .unwrap()
            .into_owned();
        let ng = self.ng(x) || self.ng(w);
        self.push(out, Op::Conv2d { x, w, cols, k }, ng)
    }

    /// 2x2 average pooling; spatial dims must be even.
    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let xv = as3(self.value(x));
        let (c, h, w) = xv.dim();
        assert!(h % 2 == 0 && w % 2 == 0, "pooling needs even spatial dims");
        let quarter = T::lit(0.25);
        let out = Array3::from_shape_fn((c, h / 2, w / 2), |(ci, y, xx)| {
            (xv[[ci, 2 * y, 2 * xx]]
                + xv[[ci, 2 * y + 1, 2 * xx]]
                + xv[[ci, 2 * y, 2 * xx + 1]]
                + xv[[ci, 2 * y + 1, 2 * xx + 1]])
                * quarter
        });
        let ng = self.ng(x);
        self.push(out.into_dyn(), Op::AvgPool2(x), ng)
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let xv = as3(self.value(x));
        let (c, h, w) = xv.dim();
        let out = Array3::from_shape_fn((c, 2 * h, 2 * w), |(ci, y, xx)| xv[[ci, y / 2, xx / 2]]);
        let ng = self.ng(x);
        self.push(out.into_dyn(), Op::Upsample2(x), ng)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let out = ndarray::concatenate(Axis(0), &[self.value(a).view(), self.value(b).view()])
            .expect("matching spatial dims");
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::ConcatChannels(a, b), ng)
    }

    /// `[1, a] ++ [1, b] -> [1, a + b]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let out = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("row vectors");
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::ConcatCols(a, b), ng)
    }

    /// Weighted spatial sum of `[C, H, W]` into a `[1, C]` row. With
    /// `weights = mask / count` this is a masked mean.
    pub fn spatial_mean(&mut self, x: Var, weights: Array2<T>) -> Var {
        let xv = as3(self.value(x));
        let c = xv.dim().0;
        let out = Array2::from_shape_fn((1, c), |(_, ci)| {
            (&xv.index_axis(Axis(0), ci) * &weights).sum()
        });
        let ng = self.ng(x);
        self.push(out.into_dyn(), Op::SpatialMean { x, weights }, ng)
    }

    /// `[1, N, N] -> [N, N]`, `(X + X^T) / 2`.
    pub fn symmetrize(&mut self, x: Var) -> Var {
        let xv = as3(self.value(x));
        let m = xv.index_axis(Axis(0), 0);
        let half = T::lit(0.5);
        let out = (&m + &m.t()).mapv(|v| v * half);
        let ng = self.ng(x);
        self.push(out.into_dyn(), Op::Symmetrize(x), ng)
    }

    /// Scalar node with an externally computed value and local gradient
    /// `d value / d x`.
    pub fn loss(&mut self, x: Var, value: T, grad: ArrayD<T>) -> Var {
        assert_eq!(grad.shape(), self.value(x).shape(), "loss gradient shape");
        let ng = self.ng(x);
        self.push(
            ArrayD::from_elem(IxDyn(&[]), value),
            Op::Loss { x, grad },
            ng,
        )
    }

    /// Reverse pass from a scalar `root`. Returns one gradient slot per node;
    /// constants and nodes not upstream of `root` are `None`.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        let mut grads: Vec<Option<ArrayD<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(ArrayD::from_elem(
            self.nodes[root.0].value.raw_dim(),
            T::one(),
        ));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let acc = |v: Var, d: ArrayD<T>, grads: &mut Vec<Option<ArrayD<T>>>| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.zip_mut_with(&d, |a, &b| *a = *a + b),
                    slot => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let g2 = as2(&g);
                    if self.ng(*a) {
                        acc(*a, g2.dot(&as2(self.value(*b)).t()).into_dyn(), &mut grads);
                    }
                    if self.ng(*b) {
                        acc(*b, as2(self.value(*a)).t().dot(&g2).into_dyn(), &mut grads);
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, g, &mut grads);
                }
                Op::AddRow(a, row) => {
                    if self.ng(*row) {
                        let db = as2(&g).sum_axis(Axis(0)).insert_axis(Axis(0)).into_dyn();
                        acc(*row, db, &mut grads);
                    }
                    acc(*a, g, &mut grads);
                }
                Op::AddChannel(x, bias) => {
                    if self.ng(*bias) {
                        let shape = self.value(*bias).raw_dim();
                        let sums: Vec<T> = g.axis_iter(Axis(0)).map(|p| p.sum()).collect();
                        acc(
                            *bias,
                            ArrayD::from_shape_vec(shape, sums).unwrap(),
                            &mut grads,
                        );
                    }
                    acc(*x, g, &mut grads);
                }
                Op::Scale(x, k) => acc(*x, g.mapv(|v| v * *k), &mut grads),
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let mut d = g;
                    d.zip_mut_with(xv, |gv, &x| {
                        if x <= T::zero() {
                            *gv = T::zero()
                        }
                    });
                    acc(*x, d, &mut grads);
                }
                Op::Silu(x) => {
                    let xv = self.value(*x);
                    let mut d = g;
                    d.zip_mut_with(xv, |gv, &x| {
                        let s = sigmoid(x);
                        *gv = *gv * s * (T::one() + x * (T::one() - s));
                    });
                    acc(*x, d, &mut grads);
                }
                Op::Sigmoid(x) => {
                    let mut d = g;
                    d.zip_mut_with(&node.value, |gv, &y| *gv = *gv * y * (T::one() - y));
                    acc(*x, d, &mut grads);
                }
                Op::Mask(x, mask) => {
                    let d = if g.ndim() == 2 {
                        (&as2(&g) * mask).into_dyn()
                    } else {
                        (&as3(&g) * mask).into_dyn()
                    };
                    acc(*x, d, &mut grads);
                }
                Op::Conv2d { x, w, cols, k } => {
                    let ws = self.value(*w).shape().to_vec();
                    let (c_out, c_in) = (ws[0], ws[1]);
                    let (_, h, wd) = as3(self.value(*x)).dim();
                    let g2 = g.to_shape((c_out, h * wd)).unwrap();
                    if self.ng(*w) {
                        let dw = g2.dot(&cols.t()).to_shape(IxDyn(&ws)).unwrap().into_owned();
                        acc(*w, dw, &mut grads);
                    }
                    if self.ng(*x) {
                        let w2 = self.value(*w).to_shape((c_out, c_in * k * k)).unwrap();
                        let dcols = w2.t().dot(&g2);
                        acc(
                            *x,
                            col2im(dcols.view(), c_in, h, wd, *k).into_dyn(),
                            &mut grads,
                        );
                    }
                }
                Op::AvgPool2(x) => {
                    let g3 = as3(&g);
                    let (c, h, w) = g3.dim();
                    let quarter = T::lit(0.25);
                    let d = Array3::from_shape_fn((c, 2 * h, 2 * w), |(ci, y, xx)| {
                        g3[[ci, y / 2, xx / 2]] * quarter
                    });
                    acc(*x, d.into_dyn(), &mut grads);
                }
                Op::Upsample2(x) => {
                    let g3 = as3(&g);
                    let (c, h, w) = g3.dim();
                    let d = Array3::from_shape_fn((c, h / 2, w / 2), |(ci, y, xx)| {
                        g3[[ci, 2 * y, 2 * xx]]
                            + g3[[ci, 2 * y + 1, 2 * xx]]
                            + g3[[ci, 2 * y, 2 * xx + 1]]
                            + g3[[ci, 2 * y + 1, 2 * xx + 1]]
                    });
                    acc(*x, d.into_dyn(), &mut grads);
                }
                Op::ConcatChannels(a, b) => {
                    let ca = self.value(*a).shape()[0];
                    acc(
                        *a,
                        g.slice(s![..ca, .., ..]).to_owned().into_dyn(),
                        &mut grads,
                    );
                    acc(
                        *b,
                        g.slice(s![ca.., .., ..]).to_owned().into_dyn(),
                        &mut grads,
                    );
                }
                Op::ConcatCols(a, b) => {
                    let na = self.value(*a).shape()[1];
                    acc(*a, g.slice(s![.., ..na]).to_owned().into_dyn(), &mut grads);
                    acc(*b, g.slice(s![.., na..]).to_owned().into_dyn(), &mut grads);
                }
                Op::SpatialMean { x, weights } => {
                    let g2 = as2(&g);
                    let c = g2.ncols();
                    let (h, w) = weights.dim();
                    let d = Array3::from_shape_fn((c, h, w), |(ci, y, xx)| {
                        g2[[0, ci]] * weights[[y, xx]]
                    });
                    acc(*x, d.into_dyn(), &mut grads);
                }
                Op::Symmetrize(x) => {
                    let g2 = as2(&g);
                    let half = T::lit(0.5);
                    let d = (&g2 + &g2.t()).mapv(|v| v * half).insert_axis(Axis(0));
                    acc(*x, d.into_dyn(), &mut grads);
                }
                Op::Loss { x, grad } => {
                    let gs = *g.first().unwrap();
                    acc(*x, grad.mapv(|v| v * gs), &mut grads);
                }
            }
        }
        Gradients { grads }
    }
}

pub struct Gradients<T> {
    grads: Vec<Option<ArrayD<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&ArrayD<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<ArrayD<T>> {
        self.grads[v.0].take()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_arr(rng: &mut ChaCha8Rng, shape: &[usize]) -> ArrayD<f64> {
        Array::from_shape_fn(IxDyn(shape), |_| rng.random_range(-1.0..1.0))
    }

    /// Central differences of `f` against the tape gradient of every param.
    fn check<F>(params: Vec<ArrayD<f64>>, build: F)
    where
        F: Fn(&mut Tape<f64>, &[Var]) -> Var,
    {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
        let out = build(&mut tape, &vars);
        let grads = tape.backward(out);
        let eval = |ps: &[ArrayD<f64>]| {
            let mut t = Tape::new();
            let vs: Vec<Var> = ps.iter().map(|p| t.param(p.clone())).collect();
            let o = build(&mut t, &vs);
            *t.value(o).first().unwrap()
        };
        let h = 1e-6;
        for (pi, p) in params.iter().enumerate() {
            let g = grads.get(vars[pi]).expect("param gradient");
            for (flat, _) in p.iter().enumerate() {
                let mut up = params.clone();
                up[pi].as_slice_mut().unwrap()[flat] += h;
                let mut dn = params.clone();
                dn[pi].as_slice_mut().unwrap()[flat] -= h;
                let fd = (eval(&up) - eval(&dn)) / (2.0 * h);
                let an = g.as_slice().unwrap()[flat];
                assert!(
                    (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "param {pi}[{flat}]: analytic {an} vs fd {fd}"
                );
            }
        }
    }

    /// Reduce any tensor to a scalar with a fixed random weighting.
    fn weighted_sum(tape: &mut Tape<f64>, v: Var, seed: u64) -> Var {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = tape.value(v).shape().to_vec();
        let w = rand_arr(&mut rng, &shape);
        let value = (tape.value(v) * &w).sum();
        tape.loss(v, value, w)
    }

    #[test]
    fn conv_pool_upsample_concat_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = vec![
            rand_arr(&mut rng, &[2, 4, 4]),
            rand_arr(&mut rng, &[3, 2, 3, 3]),
            rand_arr(&mut rng, &[3]),
            rand_arr(&mut rng, &[1, 5, 1, 1]),
        ];
        check(params, |t, v| {
            let c = t.conv2d(v[0], v[1]);
            let c = t.add_channel(c, v[2]);
            let a = t.silu(c);
            let p = t.avg_pool2(a);
            let u = t.upsample2(p);
            let cat = t.concat_channels(u, v[0]);
            let o = t.conv2d(cat, v[3]);
            let sym = t.symmetrize(o);
            let sg = t.sigmoid(sym);
            weighted_sum(t, sg, 2)
        });
    }

    #[test]
    fn dense_and_pooling_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = vec![
            rand_arr(&mut rng, &[4, 3]),
            rand_arr(&mut rng, &[3, 5]),
            rand_arr(&mut rng, &[1, 5]),
            rand_arr(&mut rng, &[2, 4, 4]),
            rand_arr(&mut rng, &[1, 2]),
        ];
        let mask = Array2::from_shape_fn((4, 4), |(i, j)| if i < 3 && j < 3 { 1.0 } else { 0.0 });
        check(params, move |t, v| {
            let h = t.matmul(v[0], v[1]);
            let h = t.add_row(h, v[2]);
            let h = t.relu(h);
            let m = t.mask(v[3], mask.clone());
            let sp = t.spatial_mean(m, mask.mapv(|x| x / 9.0));
            let cat = t.concat_cols(sp, v[4]);
            let s1 = t.scale(cat, 1.5);
            let pooled = weighted_sum(t, h, 5);
            let other = weighted_sum(t, s1, 6);
            t.add(pooled, other)
        });
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = rand_arr(&mut rng, &[2, 3, 5]);
        let w = rand_arr(&mut rng, &[1, 2, 3, 3]);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let wv = tape.constant(w.clone());
        let y = tape.conv2d(xv, wv);
        let out = tape.value(y);
        for yy in 0..3 {
            for xx in 0..5 {
                let mut acc = 0.0;
                for c in 0..2 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (sy, sx) =
                                (yy as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                            if (0..3).contains(&sy) && (0..5).contains(&sx) {
                                acc += w[[0, c, ky, kx]] * x[[c, sy as usize, sx as usize]];
                            }
                        }
                    }
                }
                assert!((out[[0, yy, xx]] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(ArrayD::from_elem(IxDyn(&[1, 2]), 2.0));
        let p = tape.param(ArrayD::from_elem(IxDyn(&[2, 1]), 3.0));
        let y = tape.matmul(c, p);
        let l = tape.loss(y, 12.0, ArrayD::from_elem(IxDyn(&[1, 1]), 1.0));
        let g = tape.backward(l);
        assert!(g.get(c).is_none());
        assert_eq!(
            g.get(p).unwrap().iter().copied().collect::<Vec<_>>(),
            vec![2.0, 2.0]
        );
    }
}

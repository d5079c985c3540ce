//! C-SVC trained by SMO with second-order working-set selection, on a
//! precomputed kernel matrix. Multiclass problems use one-vs-one voting.

use ndarray::{Array2, ArrayView2};

use crate::error::{invalid, Result};

const TAU: f64 = 1e-12;
const TOL: f64 = 1e-3;

/// `exp(-gamma * |a - b|^2)` for every row pair of `a` x `b`.
pub fn rbf_kernel(a: ArrayView2<f64>, b: ArrayView2<f64>, gamma: f64) -> Array2<f64> {
    let sq =
        |m: &ArrayView2<f64>| -> Vec<f64> { m.rows().into_iter().map(|r| r.dot(&r)).collect() };
    let (na, nb) = (sq(&a), sq(&b));
    let mut k = a.dot(&b.t());
    for ((i, j), v) in k.indexed_iter_mut() {
        let d = (na[i] + nb[j] - 2.0 * *v).max(0.0);
        *v = (-gamma * d).exp();
    }
    k
}

/// Squared Euclidean distances between rows of `x`, upper triangle only.
pub fn pairwise_sq_dists(x: ArrayView2<f64>) -> Vec<f64> {
    let n = x.nrows();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            out.push(d);
        }
    }
    out
}

/// Binary dual solution; `coef[i] = alpha_i * y_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySvm {
    pub coef: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
}

/// Solves the C-SVC dual over the samples `idx` of the kernel `k`, with
/// labels `y` in {+1, -1} aligned with `idx`.
pub fn solve_binary(k: ArrayView2<f64>, idx: &[usize], y: &[f64], c: f64) -> BinarySvm {
    let n = idx.len();
    let kk = |a: usize, b: usize| k[[idx[a], idx[b]]];
    let qd: Vec<f64> = (0..n).map(|i| kk(i, i)).collect();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;
    let max_iter = (100 * n).max(100_000);
    let mut iter = 0;
    while iter < max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            if y[t] > 0.0 {
                if !upper(alpha[t]) && -grad[t] >= gmax {
                    gmax = -grad[t];
                    i = t;
                }
            } else if !lower(alpha[t]) && grad[t] >= gmax {
                gmax = grad[t];
                i = t;
            }
        }
        if i == usize::MAX {
            break;
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            let qit = y[i] * y[t] * kk(i, t);
            if y[t] > 0.0 {
                if !lower(alpha[t]) {
                    let diff = gmax + grad[t];
                    gmax2 = gmax2.max(grad[t]);
                    if diff > 0.0 {
                        let quad = qd[i] + qd[t] - 2.0 * y[i] * qit;
                        let obj = -diff * diff / if quad > 0.0 { quad } else { TAU };
                        if obj <= best {
                            best = obj;
                            j = t;
                        }
                    }
                }
            } else if !upper(alpha[t]) {
                let diff = gmax - grad[t];
                gmax2 = gmax2.max(-grad[t]);
                if diff > 0.0 {
                    let quad = qd[i] + qd[t] + 2.0 * y[i] * qit;
                    let obj = -diff * diff / if quad > 0.0 { quad } else { TAU };
                    if obj <= best {
                        best = obj;
                        j = t;
                    }
                }
            }
        }
        if gmax + gmax2 < TOL || j == usize::MAX {
            break;
        }
        iter += 1;

        let qij = y[i] * y[j] * kk(i, j);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (qd[i] + qd[j] + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (qd[i] + qd[j] - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            let qti = y[t] * y[i] * kk(t, i);
            let qtj = y[t] * y[j] * kk(t, j);
            grad[t] += qti * di + qtj * dj;
        }
    }

    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if upper(alpha[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let rho = if free > 0 {
        sum_free / free as f64
    } else {
        (ub + lb) / 2.0
    };
    BinarySvm {
        coef: alpha.iter().zip(y).map(|(a, y)| a * y).collect(),
        rho,
        iterations: iter,
    }
}

/// One-vs-one multiclass model over a training subset of a kernel matrix.
#[derive(Debug, Clone)]
pub struct Svm {
    train: Vec<usize>,
    classes: Vec<usize>,
    /// `(class a, class b, positions into `train`, solution)`; positive = a.
    pairs: Vec<(usize, usize, Vec<usize>, BinarySvm)>,
}

impl Svm {
    /// Fits on rows/columns `train` of the square kernel `k`.
    pub fn fit(k: ArrayView2<f64>, train: &[usize], labels: &[usize], c: f64) -> Result<Svm> {
        if train.len() != labels.len() || train.is_empty() {
            return Err(invalid(
                "training indices and labels must be non-empty and aligned",
            ));
        }
        if c.is_nan() || c <= 0.0 {
            return Err(invalid("C must be positive"));
        }
        let mut classes: Vec<usize> = labels.to_vec();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() < 2 {
            return Err(invalid("need at least two classes to fit an SVM"));
        }
        let mut pairs = Vec::new();
        for (ai, &a) in classes.iter().enumerate() {
            for &b in &classes[ai + 1..] {
                let pos: Vec<usize> = (0..train.len())
                    .filter(|&p| labels[p] == a || labels[p] == b)
                    .collect();
                let idx: Vec<usize> = pos.iter().map(|&p| train[p]).collect();
                let y: Vec<f64> = pos
                    .iter()
                    .map(|&p| if labels[p] == a { 1.0 } else { -1.0 })
                    .collect();
                let sol = solve_binary(k, &idx, &y, c);
                pairs.push((a, b, pos, sol));
            }
        }
        Ok(Svm {
            train: train.to_vec(),
            classes,
            pairs,
        })
    }

    /// Predicts sample `s` given a kernel `k_test` whose columns are indexed
    /// like the training kernel (`k_test[[s, train[p]]]`).
    pub fn predict_one(&self, k_row: &dyn Fn(usize) -> f64) -> usize {
        let mut votes = vec![0usize; self.classes.len()];
        for (a, b, pos, sol) in &self.pairs {
            let f: f64 = pos
                .iter()
                .zip(&sol.coef)
                .filter(|(_, c)| **c != 0.0)
                .map(|(&p, c)| c * k_row(self.train[p]))
                .sum::<f64>()
                - sol.rho;
            let winner = if f > 0.0 { a } else { b };
            votes[self.classes.iter().position(|c| c == winner).unwrap()] += 1;
        }
        let best = votes.iter().max().unwrap();
        self.classes[votes.iter().position(|v| v == best).unwrap()]
    }

    /// Predicts rows `test` of the square kernel `k`.
    pub fn predict(&self, k: ArrayView2<f64>, test: &[usize]) -> Vec<usize> {
        test.iter()
            .map(|&s| self.predict_one(&|t| k[[s, t]]))
            .collect()
    }
}

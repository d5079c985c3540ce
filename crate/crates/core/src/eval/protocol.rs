use ndarray::{Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::svm::{pairwise_sq_dists, rbf_kernel, Svm};
use crate::error::{invalid, Error, Result};
use crate::graph::{stratified_folds, FoldAssignment};

/// Inner-selection settings for [`svm_protocol`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolOptions {
    pub inner_folds: usize,
    pub c_grid: Vec<f64>,
    pub seed: u64,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        Self {
            inner_folds: 5,
            c_grid: vec![1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0],
            seed: 0,
        }
    }
}

/// Outcome of one outer fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    /// Test accuracy in percent.
    pub accuracy: f64,
    pub c: f64,
    pub gamma: f64,
    pub train_size: usize,
    pub test_size: usize,
    /// Mean inner accuracy (percent) for each grid value of C.
    pub inner_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub dataset: String,
    pub config_hash: String,
    pub folds: Vec<FoldResult>,
    /// Mean of the per-fold accuracies, percent.
    pub mean: f64,
    /// Population standard deviation of the per-fold accuracies, percent.
    pub std: f64,
    pub std_kind: String,
    pub fold_seed: u64,
    pub options: ProtocolOptions,
    pub n_samples: usize,
    pub dim: usize,
}

pub const STD_KIND: &str = "population std of the 10 outer-fold accuracies";

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl AccuracyReport {
    pub fn accuracies(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.accuracy).collect()
    }

    /// Recomputes mean and std from the folds and checks them.
    pub fn is_consistent(&self) -> bool {
        if self.folds.is_empty() {
            return false;
        }
        let (m, s) = mean_std(&self.accuracies());
        (m - self.mean).abs() <= 1e-12 && (s - self.std).abs() <= 1e-12
    }
}

/// Per-column mean and standard deviation over `rows` (std 0 becomes 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl Scaler {
    pub fn fit(x: ArrayView2<f64>, rows: &[usize]) -> Scaler {
        let sub = x.select(Axis(0), rows);
        let mean = sub.mean_axis(Axis(0)).unwrap();
        let scale = sub
            .std_axis(Axis(0), 0.0)
            .mapv(|s| if s > 1e-12 { s } else { 1.0 });
        Scaler { mean, scale }
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (&x - &self.mean) / &self.scale
    }
}

/// `1 / median` of squared distances between training rows.
pub fn median_gamma(x: ArrayView2<f64>) -> f64 {
    let mut d = pairwise_sq_dists(x);
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    if med > 0.0 {
        1.0 / med
    } else {
        1.0
    }
}

fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    100.0 * hits as f64 / truth.len() as f64
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 31)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^ (z >> 29)
}

/// Everything chosen from a fold's training split alone.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldFit {
    pub scaler: Scaler,
    pub gamma: f64,
    pub c: f64,
    pub inner_scores: Vec<f64>,
}

/// Standardises, picks gamma and selects C by inner cross-validation,
/// looking only at `train` rows.
pub fn select_on_train(
    x: ArrayView2<f64>,
    labels: &[usize],
    train: &[usize],
    opts: &ProtocolOptions,
    fold: usize,
) -> Result<FoldFit> {
    let y: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let mut classes = y.clone();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::InvalidFold(format!(
            "fold {fold}: training split holds a single class"
        )));
    }
    let scaler = Scaler::fit(x, train);
    let xt = scaler.transform(x.select(Axis(0), train).view());
    let gamma = median_gamma(xt.view());
    let k = rbf_kernel(xt.view(), xt.view(), gamma);

    let smallest = classes
        .iter()
        .map(|c| y.iter().filter(|&&l| l == *c).count())
        .min()
        .unwrap();
    let inner_k = opts.inner_folds.min(smallest);
    let mut inner_scores = Vec::with_capacity(opts.c_grid.len());
    if inner_k >= 2 {
        let inner = stratified_folds(&y, inner_k, mix(opts.seed, fold as u64))?;
        for &c in &opts.c_grid {
            let mut total = 0.0;
            for f in 0..inner_k {
                let (tr, te) = inner.split(f);
                let tr_y: Vec<usize> = tr.iter().map(|&i| y[i]).collect();
                let te_y: Vec<usize> = te.iter().map(|&i| y[i]).collect();
                let svm = Svm::fit(k.view(), &tr, &tr_y, c)?;
                total += accuracy(&svm.predict(k.view(), &te), &te_y);
            }
            inner_scores.push(total / inner_k as f64);
        }
    }
    // Ties go to the smaller C, whatever the grid order.
    let c = if inner_scores.is_empty() {
        1.0
    } else {
        let best = inner_scores
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        opts.c_grid
            .iter()
            .zip(&inner_scores)
            .filter(|(_, s)| **s == best)
            .map(|(c, _)| *c)
            .fold(f64::INFINITY, f64::min)
    };
    Ok(FoldFit {
        scaler,
        gamma,
        c,
        inner_scores,
    })
}

fn run_fold(
    x: ArrayView2<f64>,
    labels: &[usize],
    folds: &FoldAssignment,
    fold: usize,
    opts: &ProtocolOptions,
) -> Result<FoldResult> {
    let (train, test) = folds.split(fold);
    if test.is_empty() {
        return Err(Error::InvalidFold(format!(
            "fold {fold} has no test samples"
        )));
    }
    let fit = select_on_train(x, labels, &train, opts, fold)?;
    let xs = fit.scaler.transform(x);
    let k = rbf_kernel(xs.view(), xs.view(), fit.gamma);
    let tr_y: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let te_y: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
    let svm = Svm::fit(k.view(), &train, &tr_y, fit.c)?;
    Ok(FoldResult {
        fold,
        accuracy: accuracy(&svm.predict(k.view(), &test), &te_y),
        c: fit.c,
        gamma: fit.gamma,
        train_size: train.len(),
        test_size: test.len(),
        inner_scores: fit.inner_scores,
    })
}

/// Outer k-fold RBF-SVM evaluation. Per fold: z-score on the training
/// split, median-heuristic gamma, inner grid search over C, refit and score
/// on the held-out fold.
pub fn svm_protocol(
    embeddings: ArrayView2<f64>,
    labels: &[usize],
    folds: &FoldAssignment,
    opts: &ProtocolOptions,
) -> Result<Vec<FoldResult>> {
    if embeddings.nrows() != labels.len() || folds.fold_of.len() != labels.len() {
        return Err(invalid(
            "embeddings, labels and folds must have equal length",
        ));
    }
    if embeddings.iter().any(|v| !v.is_finite()) {
        return Err(invalid("embeddings contain non-finite values"));
    }
    if opts.c_grid.is_empty() || opts.c_grid.iter().any(|c| c.is_nan() || *c <= 0.0) {
        return Err(invalid("C grid must hold positive values"));
    }
    (0..folds.k)
        .into_par_iter()
        .map(|f| run_fold(embeddings, labels, folds, f, opts))
        .collect()
}

/// Runs [`svm_protocol`] with freshly drawn stratified folds and assembles
/// the report.
pub fn evaluate(
    embeddings: ArrayView2<f64>,
    labels: &[usize],
    k: usize,
    fold_seed: u64,
    opts: &ProtocolOptions,
    dataset: &str,
    config_hash: &str,
) -> Result<AccuracyReport> {
    let folds =
        stratified_folds(labels, k, fold_seed).map_err(|e| Error::InvalidFold(e.to_string()))?;
    let results = svm_protocol(embeddings, labels, &folds, opts)?;
    let (mean, std) = mean_std(&results.iter().map(|r| r.accuracy).collect::<Vec<_>>());
    Ok(AccuracyReport {
        dataset: dataset.to_string(),
        config_hash: config_hash.to_string(),
        folds: results,
        mean,
        std,
        std_kind: STD_KIND.to_string(),
        fold_seed,
        options: opts.clone(),
        n_samples: labels.len(),
        dim: embeddings.ncols(),
    })
}

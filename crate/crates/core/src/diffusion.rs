//! Absorbing-state discrete diffusion over binary edge variables.
//!
//! Every edge slot evolves independently: a present edge (1) is deleted at
//! step `t` with probability `beta_t`, and an absent edge (0) stays absent
//! forever. The fully noised graph is therefore the empty graph.
//!
//! Schedule and posterior arithmetic is generic over [`Field`] so the same
//! code runs on `f64` and on exact rationals. Loss terms need logarithms and
//! are evaluated in `f64` regardless of the network scalar.

use ndarray::{Array2, ArrayView2};
use num_traits::{Float, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::{Field, Scalar};

/// Floor applied to every probability before it enters a logarithm.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `beta_t = 1 / (T - t + 1)`: the absorption time is uniform on `1..=T`.
    #[default]
    AbsorbingLinear,
}

/// Per-step deletion probabilities and cumulative survival probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule<T> {
    kind: ScheduleKind,
    /// `beta[t - 1]` is the deletion probability of step `t`.
    beta: Vec<T>,
    /// `alpha_bar[t]` for `t = 0..=T`.
    alpha_bar: Vec<T>,
}

pub fn build_schedule<T: Field>(steps: usize, kind: ScheduleKind) -> Result<NoiseSchedule<T>> {
    NoiseSchedule::new(steps, kind)
}

impl<T: Field> NoiseSchedule<T> {
    pub fn new(steps: usize, kind: ScheduleKind) -> Result<Self> {
        if steps == 0 {
            return Err(invalid("diffusion needs at least one step"));
        }
        let from = |n: usize| T::from_usize(n).expect("step count representable");
        let beta: Vec<T> = match kind {
            ScheduleKind::AbsorbingLinear => (1..=steps)
                .map(|t| T::one() / from(steps - t + 1))
                .collect(),
        };
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(T::one());
        for b in &beta {
            let prev = alpha_bar.last().unwrap().clone();
            alpha_bar.push(prev * (T::one() - b.clone()));
        }
        Ok(Self {
            kind,
            beta,
            alpha_bar,
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    /// Deletion probability of step `t`, `1 <= t <= T`.
    pub fn beta(&self, t: usize) -> &T {
        &self.beta[t - 1]
    }

    /// Survival probability from step 0 to step `t`, `0 <= t <= T`.
    pub fn alpha_bar(&self, t: usize) -> &T {
        &self.alpha_bar[t]
    }

    pub fn betas(&self) -> &[T] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[T] {
        &self.alpha_bar
    }

    fn check_t(&self, t: usize, min: usize) -> Result<()> {
        if t < min || t > self.steps() {
            return Err(invalid(format!(
                "timestep {t} outside [{min}, {}]",
                self.steps()
            )));
        }
        Ok(())
    }
}

/// `q(x_t = 1 | x_0 = a0)`.
pub fn forward_marginal<T: Field>(a0: bool, t: usize, s: &NoiseSchedule<T>) -> Result<T> {
    s.check_t(t, 0)?;
    Ok(if a0 {
        s.alpha_bar(t).clone()
    } else {
        T::zero()
    })
}

/// Probability that the edge slot is 1 at the previous step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgePosterior<T> {
    pub p_prev_one: T,
}

/// `q(x_{t-1} = 1 | x_t = a_t, x_0 = a0)` for `1 <= t <= T`.
pub fn true_posterior<T: Field>(
    a_t: bool,
    a0: bool,
    t: usize,
    s: &NoiseSchedule<T>,
) -> Result<EdgePosterior<T>> {
    s.check_t(t, 1)?;
    let p_prev_one = match (a_t, a0) {
        (true, false) => {
            return Err(Error::InconsistentState(
                "edge present at step t but absent at step 0".into(),
            ))
        }
        (true, true) => T::one(),
        (false, false) => T::zero(),
        (false, true) => {
            s.beta(t).clone() * s.alpha_bar(t - 1).clone() / (T::one() - s.alpha_bar(t).clone())
        }
    };
    Ok(EdgePosterior { p_prev_one })
}

/// `p_theta(x_{t-1} = 1 | x_t)` assembled from an x0 prediction by
/// marginalising the true posterior over the predicted clean bit.
pub fn model_reverse<T: Field>(
    x0_prob: T,
    a_t: bool,
    t: usize,
    s: &NoiseSchedule<T>,
) -> Result<EdgePosterior<T>> {
    s.check_t(t, 1)?;
    if x0_prob < T::zero() || x0_prob > T::one() {
        return Err(invalid(format!(
            "x0 probability {x0_prob:?} outside [0, 1]"
        )));
    }
    if a_t {
        return Ok(EdgePosterior {
            p_prev_one: T::one(),
        });
    }
    let on = true_posterior(false, true, t, s)?.p_prev_one;
    let off = true_posterior(false, false, t, s)?.p_prev_one;
    Ok(EdgePosterior {
        p_prev_one: x0_prob.clone() * on + (T::one() - x0_prob) * off,
    })
}

/// `ln(max(p, eps))` together with its derivative in `p`.
fn floored_ln<F: Float>(p: F, eps: F) -> (F, F) {
    if p > eps {
        (p.ln(), p.recip())
    } else {
        (eps.ln(), F::zero())
    }
}

/// Bernoulli KL `KL(Bern(q) || Bern(m))` and `d/dm`, with `0 ln 0 = 0`.
fn bernoulli_kl_dm<F: Float>(q: F, m: F, eps: F) -> (F, F) {
    let mut kl = F::zero();
    let mut d = F::zero();
    if q > F::zero() {
        let (lm, dlm) = floored_ln(m, eps);
        kl = kl + q * (q.ln() - lm);
        d = d - q * dlm;
    }
    let q1 = F::one() - q;
    if q1 > F::zero() {
        let (lm, dlm) = floored_ln(F::one() - m, eps);
        kl = kl + q1 * (q1.ln() - lm);
        d = d + q1 * dlm;
    }
    (kl, d)
}

/// `KL(q(x_{t-1} | x_t, x_0) || p_theta(x_{t-1} | x_t))` for one edge slot
/// and `t >= 2`, plus its derivative with respect to `x0_prob`.
pub fn kl_edge_with_grad<F: Float + Field>(
    a0: bool,
    x0_prob: F,
    a_t: bool,
    t: usize,
    s: &NoiseSchedule<F>,
) -> Result<(F, F)> {
    if t < 2 {
        return Err(invalid("per-step KL term needs t >= 2"));
    }
    let q = true_posterior(a_t, a0, t, s)?.p_prev_one;
    let x = x0_prob.max(F::zero()).min(F::one());
    let m = model_reverse(x, a_t, t, s)?.p_prev_one;
    let dm_dx = if a_t {
        F::zero()
    } else {
        true_posterior(false, true, t, s)?.p_prev_one
    };
    let eps = F::from_f64(PROB_EPS).unwrap();
    let (kl, dkl_dm) = bernoulli_kl_dm(q, m, eps);
    Ok((kl.max(F::zero()), dkl_dm * dm_dx))
}

pub fn kl_edge<F: Float + Field>(
    a0: bool,
    x0_prob: F,
    a_t: bool,
    t: usize,
    s: &NoiseSchedule<F>,
) -> Result<F> {
    kl_edge_with_grad(a0, x0_prob, a_t, t, s).map(|(v, _)| v)
}

/// Bernoulli negative log-likelihood of `a0` under `x0_prob`, and its
/// derivative with respect to `x0_prob`.
pub fn recon_edge_with_grad<F: Float>(a0: bool, x0_prob: F) -> (F, F) {
    let eps = F::from(PROB_EPS).unwrap();
    if a0 {
        let (l, dl) = floored_ln(x0_prob, eps);
        (-l, -dl)
    } else {
        let (l, dl) = floored_ln(F::one() - x0_prob, eps);
        (-l, dl)
    }
}

pub fn recon_edge<F: Float>(a0: bool, x0_prob: F) -> F {
    recon_edge_with_grad(a0, x0_prob).0
}

/// Loss components for one graph at one sampled timestep. All values are
/// mean nats per real upper-triangle edge slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// `L_{t-1}` for `t >= 2`, `L_0` for `t = 1`.
    pub l_vb_term: f64,
    pub aux_ce: f64,
    pub lambda: f64,
    pub total: f64,
    pub t_sampled: usize,
    pub slots: usize,
}

/// Adjacency of a graph at some diffusion step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyAdjacency {
    pub bits: Array2<u8>,
    pub t: usize,
    pub edge_mask: Array2<u8>,
}

impl NoisyAdjacency {
    /// Wraps a clean (`t = 0`) adjacency after validating symmetry, the zero
    /// diagonal and containment in the mask.
    pub fn clean(bits: Array2<u8>, edge_mask: Array2<u8>) -> Result<Self> {
        let n = bits.nrows();
        if bits.dim() != (n, n) || edge_mask.dim() != (n, n) {
            return Err(invalid("adjacency and mask must be square and equal-sized"));
        }
        for i in 0..n {
            if bits[[i, i]] != 0 || edge_mask[[i, i]] != 0 {
                return Err(invalid("diagonal must be zero"));
            }
            for j in 0..n {
                let b = bits[[i, j]];
                if b > 1 || edge_mask[[i, j]] > 1 {
                    return Err(invalid("entries must be 0 or 1"));
                }
                if b != bits[[j, i]] || edge_mask[[i, j]] != edge_mask[[j, i]] {
                    return Err(invalid("adjacency and mask must be symmetric"));
                }
                if b == 1 && edge_mask[[i, j]] == 0 {
                    return Err(invalid("edge outside the real-node mask"));
                }
            }
        }
        Ok(Self {
            bits,
            t: 0,
            edge_mask,
        })
    }

    pub fn size(&self) -> usize {
        self.bits.nrows()
    }
}

/// Samples `A_t ~ q(A_t | A_0)` with a seeded generator.
pub fn corrupt<T: Field + ToPrimitive>(
    a0: &NoisyAdjacency,
    t: usize,
    s: &NoiseSchedule<T>,
    seed: u64,
) -> Result<NoisyAdjacency> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    corrupt_with_rng(a0, t, s, &mut rng)
}

pub fn corrupt_with_rng<T: Field + ToPrimitive, R: Rng + ?Sized>(
    a0: &NoisyAdjacency,
    t: usize,
    s: &NoiseSchedule<T>,
    rng: &mut R,
) -> Result<NoisyAdjacency> {
    if a0.t != 0 {
        return Err(invalid("corrupt expects a clean adjacency (t = 0)"));
    }
    s.check_t(t, 1)?;
    let keep = s.alpha_bar(t).to_f64().unwrap();
    Ok(thin(a0, keep, t, rng))
}

/// One forward transition `q(x_t | x_{t-1})` applied to `prev` (at step `t-1`).
pub fn corrupt_step<T: Field + ToPrimitive, R: Rng + ?Sized>(
    prev: &NoisyAdjacency,
    s: &NoiseSchedule<T>,
    rng: &mut R,
) -> Result<NoisyAdjacency> {
    let t = prev.t + 1;
    s.check_t(t, 1)?;
    let keep = 1.0 - s.beta(t).to_f64().unwrap();
    Ok(thin(prev, keep, t, rng))
}

fn thin<R: Rng + ?Sized>(src: &NoisyAdjacency, keep: f64, t: usize, rng: &mut R) -> NoisyAdjacency {
    let n = src.size();
    let mut bits = Array2::<u8>::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            if src.bits[[i, j]] == 1 && src.edge_mask[[i, j]] == 1 && rng.random::<f64>() < keep {
                bits[[i, j]] = 1;
                bits[[j, i]] = 1;
            }
        }
    }
    NoisyAdjacency {
        bits,
        t,
        edge_mask: src.edge_mask.clone(),
    }
}

/// `L_lambda` for one graph: the sampled variational term plus `lambda` times
/// the auxiliary x0 cross-entropy, together with the gradient with respect
/// to `x0_probs`. Only the strict upper triangle inside `edge_mask` is
/// scored; every other entry of the gradient is exactly zero.
pub fn hybrid_loss_with_grad<T: Scalar>(
    a0: ArrayView2<u8>,
    a_t: ArrayView2<u8>,
    t: usize,
    x0_probs: ArrayView2<T>,
    edge_mask: ArrayView2<u8>,
    lambda: f64,
    s: &NoiseSchedule<f64>,
) -> Result<(LossBreakdown, Array2<T>)> {
    let n = a0.nrows();
    if a0.dim() != (n, n)
        || a_t.dim() != (n, n)
        || x0_probs.dim() != (n, n)
        || edge_mask.dim() != (n, n)
    {
        return Err(invalid("hybrid loss inputs must share one square shape"));
    }
    if lambda.is_nan() || lambda < 0.0 {
        return Err(invalid("lambda must be non-negative"));
    }
    s.check_t(t, 1)?;

    let slots = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .filter(|&(i, j)| edge_mask[[i, j]] == 1)
        .count();
    let mut grad = Array2::<T>::zeros((n, n));
    if slots == 0 {
        let zero = LossBreakdown {
            l_vb_term: 0.0,
            aux_ce: 0.0,
            lambda,
            total: 0.0,
            t_sampled: t,
            slots: 0,
        };
        return Ok((zero, grad));
    }
    let norm = 1.0 / slots as f64;

    let mut vb = 0.0;
    let mut ce = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            if edge_mask[[i, j]] != 1 {
                continue;
            }
            let x0 = a0[[i, j]] == 1;
            let xt = a_t[[i, j]] == 1;
            let p = x0_probs[[i, j]].as_f64();
            let (nll, dnll) = recon_edge_with_grad(x0, p);
            let (term, dterm) = if t == 1 {
                (nll, dnll)
            } else {
                kl_edge_with_grad(x0, p, xt, t, s)?
            };
            vb += term;
            ce += nll;
            grad[[i, j]] = T::lit((dterm + lambda * dnll) * norm);
        }
    }
    let l_vb_term = vb * norm;
    let aux_ce = ce * norm;
    Ok((
        LossBreakdown {
            l_vb_term,
            aux_ce,
            lambda,
            total: l_vb_term + lambda * aux_ce,
            t_sampled: t,
            slots,
        },
        grad,
    ))
}

pub fn hybrid_loss<T: Scalar>(
    a0: ArrayView2<u8>,
    a_t: ArrayView2<u8>,
    t: usize,
    x0_probs: ArrayView2<T>,
    edge_mask: ArrayView2<u8>,
    lambda: f64,
    s: &NoiseSchedule<f64>,
) -> Result<LossBreakdown> {
    hybrid_loss_with_grad(a0, a_t, t, x0_probs, edge_mask, lambda, s).map(|(l, _)| l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    use crate::scalar::Rational;

    fn r(n: i64, d: i64) -> Rational {
        Rational::new(n, d)
    }

    fn sched(t: usize) -> NoiseSchedule<f64> {
        build_schedule(t, ScheduleKind::AbsorbingLinear).unwrap()
    }

    #[test]
    fn schedule_endpoints() {
        let s = sched(32);
        assert_eq!(*s.beta(1), 1.0 / 32.0);
        assert_eq!(*s.beta(32), 1.0);
        assert_eq!(*s.alpha_bar(0), 1.0);
        assert_eq!(*s.alpha_bar(32), 0.0);

        let one = sched(1);
        assert_eq!(*one.beta(1), 1.0);
        assert_eq!(*one.alpha_bar(1), 0.0);
    }

    #[test]
    fn schedule_rejects_zero_steps() {
        assert!(matches!(
            build_schedule::<f64>(0, ScheduleKind::AbsorbingLinear),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn schedule_t4_alpha_bar_exact() {
        // direct multiplication of (1 - beta_s)
        let betas = [r(1, 4), r(1, 3), r(1, 2), r(1, 1)];
        let mut expected = vec![r(1, 1)];
        for b in betas {
            let last = *expected.last().unwrap();
            expected.push(last * (r(1, 1) - b));
        }
        let s = build_schedule::<Rational>(4, ScheduleKind::AbsorbingLinear).unwrap();
        assert_eq!(s.alpha_bars(), expected.as_slice());
        assert_eq!(
            s.alpha_bars(),
            &[r(1, 1), r(3, 4), r(1, 2), r(1, 4), r(0, 1)]
        );
    }

    #[test]
    fn schedule_invariants_f64() {
        for steps in [1usize, 2, 5, 32, 100] {
            let s = sched(steps);
            for t in 1..=steps {
                assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
                let rec = s.alpha_bar(t - 1) * (1.0 - s.beta(t));
                assert!((rec - s.alpha_bar(t)).abs() <= 1e-12);
                assert!(*s.beta(t) > 0.0 && *s.beta(t) <= 1.0);
            }
        }
    }

    #[test]
    fn forward_marginal_examples() {
        let s = sched(4);
        for t in 0..=4 {
            assert_eq!(forward_marginal(false, t, &s).unwrap(), 0.0);
        }
        assert_eq!(forward_marginal(true, 4, &s).unwrap(), 0.0);
        // surviving 2-step paths: (1 - 1/4)(1 - 1/3)
        assert_abs_diff_eq!(
            forward_marginal(true, 2, &s).unwrap(),
            0.75 * (2.0 / 3.0),
            epsilon = 1e-15
        );
        assert!(forward_marginal(true, 5, &s).is_err());
    }

    #[test]
    fn true_posterior_examples() {
        let s = build_schedule::<Rational>(4, ScheduleKind::AbsorbingLinear).unwrap();
        for t in 1..=4 {
            assert_eq!(
                true_posterior(true, true, t, &s).unwrap().p_prev_one,
                r(1, 1)
            );
            assert_eq!(
                true_posterior(false, false, t, &s).unwrap().p_prev_one,
                r(0, 1)
            );
        }
        // Bayes on x_1: P(x1=1, x2=0 | x0=1) = 3/4 * 1/3, P(x2=0 | x0=1) = 1/2
        assert_eq!(
            true_posterior(false, true, 2, &s).unwrap().p_prev_one,
            r(3, 4) * r(1, 3) / r(1, 2)
        );
        assert!(matches!(
            true_posterior(true, false, 2, &s),
            Err(Error::InconsistentState(_))
        ));
        assert!(true_posterior(false, true, 0, &s).is_err());
    }

    #[test]
    fn model_reverse_examples() {
        let s = sched(4);
        for t in 1..=4 {
            for a_t in [false, true] {
                let full = model_reverse(1.0, a_t, t, &s).unwrap();
                assert_eq!(full, true_posterior(a_t, true, t, &s).unwrap());
            }
            assert_eq!(model_reverse(0.3, true, t, &s).unwrap().p_prev_one, 1.0);
        }
        assert_eq!(model_reverse(0.0, false, 2, &s).unwrap().p_prev_one, 0.0);
        assert_abs_diff_eq!(
            model_reverse(0.5, false, 2, &s).unwrap().p_prev_one,
            0.25,
            epsilon = 1e-15
        );
        assert!(model_reverse(1.5, false, 2, &s).is_err());
    }

    #[test]
    fn kl_edge_examples() {
        let s = sched(4);
        assert_eq!(kl_edge(true, 1.0, false, 2, &s).unwrap(), 0.0);
        assert_eq!(kl_edge(false, 0.0, false, 2, &s).unwrap(), 0.0);
        for x in [0.0, 0.2, 0.9, 1.0] {
            assert_eq!(kl_edge(true, x, true, 3, &s).unwrap(), 0.0);
        }
        let oracle = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
        let v = kl_edge(true, 0.5, false, 2, &s).unwrap();
        assert_abs_diff_eq!(v, oracle, epsilon = 1e-14);
        assert_abs_diff_eq!(v, 0.14384, epsilon = 1e-5);
        assert!(kl_edge(true, 0.5, false, 1, &s).is_err());
    }

    #[test]
    fn kl_edge_is_finite_at_zero_model_probability() {
        let s = sched(4);
        let v = kl_edge(true, 0.0, false, 2, &s).unwrap();
        assert!(v.is_finite() && v > 10.0);
    }

    #[test]
    fn recon_edge_examples() {
        assert_eq!(recon_edge(true, 1.0f64), 0.0);
        assert_abs_diff_eq!(
            recon_edge(false, 0.5f64),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(recon_edge(true, (-1.0f64).exp()), 1.0, epsilon = 1e-15);
        assert!(recon_edge(true, 0.0f64).is_finite());
    }

    #[test]
    fn hybrid_loss_two_node_example() {
        let s = sched(4);
        let a0 = array![[0u8, 1], [1, 0]];
        let at = array![[0u8, 0], [0, 0]];
        let mask = array![[0u8, 1], [1, 0]];
        let probs = array![[0.5f64, 0.5], [0.5, 0.5]];
        let l = hybrid_loss(a0.view(), at.view(), 2, probs.view(), mask.view(), 1.0, &s).unwrap();
        let kl = 0.5 * (2.0f64).ln() + 0.5 * (0.5f64 / 0.75).ln();
        assert_abs_diff_eq!(l.total, kl + std::f64::consts::LN_2, epsilon = 1e-12);
        assert_abs_diff_eq!(l.total, 0.83700, epsilon = 1e-4);
        assert_eq!(l.slots, 1);
    }

    #[test]
    fn hybrid_loss_oracle_one_hot_and_lambda_zero() {
        let s = sched(4);
        let a0 = array![[0u8, 1, 0], [1, 0, 1], [0, 1, 0]];
        let mask = array![[0u8, 1, 1], [1, 0, 1], [1, 1, 0]];
        let onehot = a0.mapv(f64::from);
        let at = array![[0u8, 0, 0], [0, 0, 1], [0, 1, 0]];
        for t in 2..=4 {
            for lambda in [0.0, 0.001, 3.0] {
                let l = hybrid_loss(
                    a0.view(),
                    at.view(),
                    t,
                    onehot.view(),
                    mask.view(),
                    lambda,
                    &s,
                )
                .unwrap();
                assert_eq!(l.total, 0.0);
            }
        }
        let probs = array![[0.3, 0.6, 0.1], [0.6, 0.2, 0.4], [0.1, 0.4, 0.9]];
        let l = hybrid_loss(a0.view(), at.view(), 3, probs.view(), mask.view(), 0.0, &s).unwrap();
        assert_eq!(l.total, l.l_vb_term);
    }

    #[test]
    fn hybrid_loss_t1_uses_reconstruction() {
        let s = sched(4);
        let a0 = array![[0u8, 1], [1, 0]];
        let at = array![[0u8, 1], [1, 0]];
        let mask = array![[0u8, 1], [1, 0]];
        let probs = array![[0.0f64, 0.25], [0.25, 0.0]];
        let l = hybrid_loss(a0.view(), at.view(), 1, probs.view(), mask.view(), 0.5, &s).unwrap();
        assert_abs_diff_eq!(l.l_vb_term, -(0.25f64).ln(), epsilon = 1e-15);
        assert_eq!(l.l_vb_term, l.aux_ce);
    }

    #[test]
    fn hybrid_loss_shape_mismatch() {
        let s = sched(4);
        let a = Array2::<u8>::zeros((3, 3));
        let p = Array2::<f64>::zeros((2, 2));
        assert!(matches!(
            hybrid_loss(a.view(), a.view(), 2, p.view(), a.view(), 0.0, &s),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn hybrid_loss_gradient_matches_central_differences() {
        let s = sched(6);
        let a0 = array![[0u8, 1, 1, 0], [1, 0, 0, 1], [1, 0, 0, 1], [0, 1, 1, 0]];
        let at = array![[0u8, 1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]];
        let mut mask = Array2::<u8>::ones((4, 4));
        mask.diag_mut().fill(0);
        let probs = array![
            [0.5, 0.7, 0.2, 0.4],
            [0.7, 0.5, 0.35, 0.6],
            [0.2, 0.35, 0.5, 0.8],
            [0.4, 0.6, 0.8, 0.5]
        ];
        for t in [1, 3, 6] {
            let (_, g) =
                hybrid_loss_with_grad(a0.view(), at.view(), t, probs.view(), mask.view(), 0.3, &s)
                    .unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    let h = 1e-6;
                    let mut up = probs.clone();
                    up[[i, j]] += h;
                    let mut dn = probs.clone();
                    dn[[i, j]] -= h;
                    let f = |p: &Array2<f64>| {
                        hybrid_loss(a0.view(), at.view(), t, p.view(), mask.view(), 0.3, &s)
                            .unwrap()
                            .total
                    };
                    let fd = (f(&up) - f(&dn)) / (2.0 * h);
                    assert_abs_diff_eq!(g[[i, j]], fd, epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn corrupt_fixed_points() {
        let s = sched(4);
        let mut mask = Array2::<u8>::ones((5, 5));
        mask.diag_mut().fill(0);
        let empty = NoisyAdjacency::clean(Array2::zeros((5, 5)), mask.clone()).unwrap();
        for t in 1..=4 {
            assert_eq!(corrupt(&empty, t, &s, 7).unwrap().bits, empty.bits);
        }
        let full = NoisyAdjacency::clean(mask.clone(), mask).unwrap();
        let out = corrupt(&full, 4, &s, 11).unwrap();
        assert!(out.bits.iter().all(|&b| b == 0));
        assert_eq!(out.t, 4);
    }

    #[test]
    fn corrupt_is_seed_deterministic() {
        let s = sched(8);
        let mut mask = Array2::<u8>::ones((6, 6));
        mask.diag_mut().fill(0);
        let full = NoisyAdjacency::clean(mask.clone(), mask).unwrap();
        assert_eq!(
            corrupt(&full, 3, &s, 99).unwrap(),
            corrupt(&full, 3, &s, 99).unwrap()
        );
    }

    #[test]
    fn clean_rejects_asymmetric() {
        let bits = array![[0u8, 1], [0, 0]];
        let mask = array![[0u8, 1], [1, 0]];
        assert!(NoisyAdjacency::clean(bits, mask).is_err());
    }

    proptest! {
        #[test]
        fn kl_edge_nonnegative(a0 in any::<bool>(), keep in any::<bool>(), x in 0.0f64..=1.0, t in 2usize..=12) {
            let s = sched(12);
            let a_t = a0 && keep;
            let v = kl_edge(a0, x, a_t, t, &s).unwrap();
            prop_assert!(v >= 0.0);
        }

        #[test]
        fn corrupt_never_adds_edges(n in 2usize..12, seed in any::<u64>(), t in 1usize..=8, density in 0.0f64..1.0) {
            let s = sched(8);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let mut bits = Array2::<u8>::zeros((n, n));
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.random::<f64>() < density {
                        bits[[i, j]] = 1;
                        bits[[j, i]] = 1;
                    }
                }
            }
            let mut mask = Array2::<u8>::ones((n, n));
            mask.diag_mut().fill(0);
            let a0 = NoisyAdjacency::clean(bits, mask).unwrap();
            let out = corrupt(&a0, t, &s, seed).unwrap();
            for (o, i) in out.bits.iter().zip(a0.bits.iter()) {
                prop_assert!(o <= i);
            }
            prop_assert_eq!(&out.bits, &out.bits.t().to_owned());
        }
    }

    fn complete(n: usize) -> NoisyAdjacency {
        let bits = Array2::from_shape_fn((n, n), |(i, j)| u8::from(i != j));
        NoisyAdjacency::clean(bits.clone(), bits).unwrap()
    }

    #[test]
    fn single_edge_keep_rate_matches_alpha_bar() {
        let s = sched(4);
        let a0 = complete(2);
        let trials = 100_000;
        let kept = (0..trials)
            .filter(|&seed| corrupt(&a0, 1, &s, seed).unwrap().bits[[0, 1]] == 1)
            .count();
        let rate = kept as f64 / trials as f64;
        assert!((rate - 0.75).abs() <= 0.01, "keep rate {rate}");
    }

    #[test]
    fn composed_single_steps_match_the_marginal() {
        // Independent chains on a complete graph: every slot is one
        // Bernoulli trial per chain, so the pooled count at step t is binomial.
        let n = 20;
        let chains = 200;
        let trials = (chains * n * (n - 1) / 2) as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for steps in [4, 8, 32] {
            let s = sched(steps);
            let mut kept = vec![0usize; steps + 1];
            for _ in 0..chains {
                let mut a = complete(n);
                for (t, slot) in kept.iter_mut().enumerate().skip(1) {
                    a = corrupt_step(&a, &s, &mut rng).unwrap();
                    assert_eq!(a.t, t);
                    *slot += a.bits.iter().filter(|&&b| b == 1).count() / 2;
                }
            }
            assert_eq!(kept[steps], 0, "absorbing state not reached");
            for t in [1, steps.div_ceil(2), steps - 1] {
                let p = *s.alpha_bar(t);
                let sigma = (trials * p * (1.0 - p)).sqrt();
                let got = kept[t] as f64;
                assert!(
                    (got - trials * p).abs() <= 3.0 * sigma,
                    "T={steps} t={t}: kept {got}, expected {} ± {}",
                    trials * p,
                    3.0 * sigma
                );
            }
        }
    }

    proptest! {
        #[test]
        fn masked_slots_are_neutral(seed in any::<u64>(), real in 2usize..10, extra in 0usize..6, t in 1usize..=6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = real + extra;
            let mut bits = Array2::<u8>::zeros((n, n));
            for i in 0..real {
                for j in (i + 1)..real {
                    if rng.random::<f64>() < 0.5 {
                        bits[[i, j]] = 1;
                        bits[[j, i]] = 1;
                    }
                }
            }
            let mask = Array2::from_shape_fn((n, n), |(i, j)| u8::from(i < real && j < real && i != j));
            let a0 = NoisyAdjacency::clean(bits, mask).unwrap();
            let s = sched(6);
            let a_t = corrupt(&a0, t, &s, seed).unwrap();
            let probs = Array2::from_shape_fn((n, n), |_| rng.random_range(0.05..0.95));
            let mut other = probs.clone();
            for ((i, j), v) in other.indexed_iter_mut() {
                if i >= j || a0.edge_mask[[i, j]] == 0 {
                    *v = rng.random_range(0.0..1.0);
                }
            }
            let run = |q: &Array2<f64>| {
                hybrid_loss_with_grad(a0.bits.view(), a_t.bits.view(), t, q.view(), a0.edge_mask.view(), 0.3, &s).unwrap()
            };
            let (l1, g1) = run(&probs);
            let (l2, g2) = run(&other);
            prop_assert_eq!(l1, l2);
            prop_assert_eq!(g1, g2);
        }
    }
}

//! Transition intensities, augmentation policies and the skeleton kernel.
//!
//! A [`RateSpec`] describes the off-diagonal part of an intensity matrix
//! `Q`. Finite models store it densely ([`DenseRates`]); unbounded models
//! such as predator-prey populations compute rates from a rule.

use std::fmt::Debug;
use std::hash::Hash;
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack used when comparing a dominating rate with an exit rate.
const RATE_SLACK: f64 = 1e-12;

/// A state of a Markov jump process.
///
/// States of finite models are dense indices `0..n`; `index` returns that
/// index. Rule-based models on unbounded spaces return `None`.
pub trait State:
    Copy + Eq + Ord + Hash + Debug + Send + Sync + Serialize + DeserializeOwned + 'static
{
    fn index(&self) -> Option<usize>;
}

impl State for usize {
    fn index(&self) -> Option<usize> {
        Some(*self)
    }
}

/// Off-diagonal transition intensities of a time-homogeneous jump process.
///
/// `exit_rate(s)` must equal the sum of `rate(s, t)` over `targets(s)`, and
/// `targets(s)` never contains `s` itself.
pub trait RateSpec: Send + Sync {
    type State: State;

    /// Intensity of a jump `from -> to`; zero when the move is impossible.
    fn rate(&self, from: Self::State, to: Self::State) -> f64;

    /// Total intensity of leaving `s`.
    fn exit_rate(&self, s: Self::State) -> f64;

    /// States reachable in one jump, with their rates, in a fixed order.
    fn targets(&self, s: Self::State) -> Vec<(Self::State, f64)>;

    /// Draws the destination of a jump out of `s` with probability
    /// `rate(s, t) / exit_rate(s)`. Returns `None` for absorbing states.
    fn sample_target(&self, s: Self::State, rng: &mut dyn RngCore) -> Option<Self::State> {
        let total = self.exit_rate(s);
        if total <= 0.0 {
            return None;
        }
        let targets = self.targets(s);
        let mut u = rng.random::<f64>() * total;
        for &(t, r) in &targets {
            if u < r {
                return Some(t);
            }
            u -= r;
        }
        targets.iter().rev().find(|(_, r)| *r > 0.0).map(|(t, _)| *t)
    }

    /// Supremum of the exit rate over all states, when it is finite and known.
    fn max_exit_rate(&self) -> Option<f64> {
        None
    }

    /// All states, for finite models.
    fn states(&self) -> Option<Vec<Self::State>> {
        None
    }
}

impl<R: RateSpec + ?Sized> RateSpec for &R {
    type State = R::State;
    fn rate(&self, from: Self::State, to: Self::State) -> f64 {
        (**self).rate(from, to)
    }
    fn exit_rate(&self, s: Self::State) -> f64 {
        (**self).exit_rate(s)
    }
    fn targets(&self, s: Self::State) -> Vec<(Self::State, f64)> {
        (**self).targets(s)
    }
    fn sample_target(&self, s: Self::State, rng: &mut dyn RngCore) -> Option<Self::State> {
        (**self).sample_target(s, rng)
    }
    fn max_exit_rate(&self) -> Option<f64> {
        (**self).max_exit_rate()
    }
    fn states(&self) -> Option<Vec<Self::State>> {
        (**self).states()
    }
}

impl<R: RateSpec + ?Sized> RateSpec for Arc<R> {
    type State = R::State;
    fn rate(&self, from: Self::State, to: Self::State) -> f64 {
        (**self).rate(from, to)
    }
    fn exit_rate(&self, s: Self::State) -> f64 {
        (**self).exit_rate(s)
    }
    fn targets(&self, s: Self::State) -> Vec<(Self::State, f64)> {
        (**self).targets(s)
    }
    fn sample_target(&self, s: Self::State, rng: &mut dyn RngCore) -> Option<Self::State> {
        (**self).sample_target(s, rng)
    }
    fn max_exit_rate(&self) -> Option<f64> {
        (**self).max_exit_rate()
    }
    fn states(&self) -> Option<Vec<Self::State>> {
        (**self).states()
    }
}

/// Shared, type-erased rates over dense state indices.
pub type SharedRates = Arc<dyn RateSpec<State = usize>>;

/// Dense intensity matrix over states `0..n`.
///
/// Exit rates and per-row cumulative target rates are computed once so that
/// `exit_rate` is a lookup and `sample_target` is a binary search.
#[derive(Debug, Clone)]
pub struct DenseRates {
    n: usize,
    rates: Vec<f64>,
    exit: Vec<f64>,
    rows: Vec<Vec<(usize, f64)>>,
    cumulative: Vec<Vec<f64>>,
    max_exit: f64,
}

impl DenseRates {
    /// Builds the model from a square matrix. Diagonal entries are ignored.
    pub fn new(matrix: Vec<Vec<f64>>) -> Result<Self> {
        let n = matrix.len();
        if n == 0 {
            return Err(Error::InvalidModel("empty intensity matrix".into()));
        }
        let mut rates = vec![0.0; n * n];
        for (i, row) in matrix.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidModel(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (j, &r) in row.iter().enumerate() {
                if i == j {
                    continue;
                }
                if !r.is_finite() || r < 0.0 {
                    return Err(Error::InvalidModel(format!("rate Q({i},{j}) = {r}")));
                }
                rates[i * n + j] = r;
            }
        }
        Ok(Self::from_flat(n, rates))
    }

    /// Builds the model from a rate function; `f(i, i)` is never called.
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let matrix = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 0.0 } else { f(i, j) }).collect())
            .collect();
        Self::new(matrix)
    }

    fn from_flat(n: usize, rates: Vec<f64>) -> Self {
        let mut exit = vec![0.0; n];
        let mut rows = Vec::with_capacity(n);
        let mut cumulative = Vec::with_capacity(n);
        for i in 0..n {
            let row: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i && rates[i * n + j] > 0.0)
                .map(|j| (j, rates[i * n + j]))
                .collect();
            let mut acc = 0.0;
            let cum: Vec<f64> = row
                .iter()
                .map(|&(_, r)| {
                    acc += r;
                    acc
                })
                .collect();
            exit[i] = acc;
            rows.push(row);
            cumulative.push(cum);
        }
        let max_exit = exit.iter().cloned().fold(0.0, f64::max);
        Self {
            n,
            rates,
            exit,
            rows,
            cumulative,
            max_exit,
        }
    }

    pub fn num_states(&self) -> usize {
        self.n
    }

    /// The full generator, with `-exit_rate` on the diagonal.
    pub fn generator(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| {
                (0..self.n)
                    .map(|j| if i == j { -self.exit[i] } else { self.rates[i * self.n + j] })
                    .collect()
            })
            .collect()
    }
}

impl RateSpec for DenseRates {
    type State = usize;

    fn rate(&self, from: usize, to: usize) -> f64 {
        if from == to || from >= self.n || to >= self.n {
            0.0
        } else {
            self.rates[from * self.n + to]
        }
    }

    fn exit_rate(&self, s: usize) -> f64 {
        self.exit.get(s).copied().unwrap_or(0.0)
    }

    fn targets(&self, s: usize) -> Vec<(usize, f64)> {
        self.rows.get(s).cloned().unwrap_or_default()
    }

    fn sample_target(&self, s: usize, rng: &mut dyn RngCore) -> Option<usize> {
        let cum = self.cumulative.get(s)?;
        let total = *cum.last()?;
        let u = rng.random::<f64>() * total;
        let pos = cum.partition_point(|&c| c <= u).min(cum.len() - 1);
        Some(self.rows[s][pos].0)
    }

    fn max_exit_rate(&self) -> Option<f64> {
        Some(self.max_exit)
    }

    fn states(&self) -> Option<Vec<usize>> {
        Some((0..self.n).collect())
    }
}

/// How potential jump times are generated by thinning.
///
/// The dominating intensity is `R(s) = lambda` for uniformization and
/// `R(s) = Q(s) + theta` for homogeneous virtual jumps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AugmentationPolicy {
    Uniformization { lambda: f64 },
    Homogeneous { theta: f64 },
}

impl AugmentationPolicy {
    /// `R(s)` given the exit rate `Q(s)`.
    #[inline]
    pub fn dominating_rate(&self, exit_rate: f64) -> f64 {
        match *self {
            AugmentationPolicy::Uniformization { lambda } => lambda,
            AugmentationPolicy::Homogeneous { theta } => exit_rate + theta,
        }
    }

    /// `R(s)`, or a policy violation naming the state when `R(s) < Q(s)`.
    pub fn checked_dominating_rate<S: Debug>(&self, state: &S, exit_rate: f64) -> Result<f64> {
        let r = self.dominating_rate(exit_rate);
        if !(r >= exit_rate * (1.0 - RATE_SLACK)) || r < 0.0 || !r.is_finite() {
            return Err(Error::PolicyViolation {
                state: format!("{state:?}"),
                exit: exit_rate,
                dominating: r,
            });
        }
        Ok(r)
    }

    /// True when `R` does not depend on the state.
    pub fn is_uniformization(&self) -> bool {
        matches!(self, AugmentationPolicy::Uniformization { .. })
    }

    pub fn validate_parameters(&self) -> Result<()> {
        match *self {
            AugmentationPolicy::Uniformization { lambda } if !(lambda >= 0.0 && lambda.is_finite()) => {
                Err(Error::InvalidConfig(format!("uniformization rate {lambda}")))
            }
            AugmentationPolicy::Homogeneous { theta } if !(theta >= 0.0 && theta.is_finite()) => {
                Err(Error::InvalidConfig(format!("virtual jump rate {theta}")))
            }
            _ => Ok(()),
        }
    }
}

/// Transition kernel of the redundant skeleton produced by thinning:
/// `P(s, s') = Q(s, s') / R(s)` off the diagonal, `1 - Q(s) / R(s)` on it.
pub struct SkeletonKernel<'a, S> {
    rates: &'a dyn RateSpec<State = S>,
    policy: AugmentationPolicy,
}

impl<S> Clone for SkeletonKernel<'_, S> {
    fn clone(&self) -> Self {
        *self
    }
}
impl<S> Copy for SkeletonKernel<'_, S> {}

/// Builds the skeleton kernel, checking `R(s) >= Q(s)` wherever it can be
/// checked up front.
///
/// Uniformization needs a finite bound on the exit rates; models that cannot
/// report one are rejected.
pub fn build_kernel<'a, S: State>(
    q: &'a dyn RateSpec<State = S>,
    policy: AugmentationPolicy,
) -> Result<SkeletonKernel<'a, S>> {
    policy.validate_parameters()?;
    if let AugmentationPolicy::Uniformization { lambda } = policy {
        match q.max_exit_rate() {
            Some(max) if lambda >= max * (1.0 - RATE_SLACK) => {}
            Some(max) => {
                let state = q
                    .states()
                    .and_then(|all| {
                        all.into_iter()
                            .find(|s| q.exit_rate(*s) > lambda * (1.0 + RATE_SLACK))
                    })
                    .map(|s| format!("{s:?}"))
                    .unwrap_or_else(|| "<argmax>".into());
                return Err(Error::PolicyViolation {
                    state,
                    exit: max,
                    dominating: lambda,
                });
            }
            None => {
                return Err(Error::UnsupportedModel(
                    "uniformization needs bounded exit rates".into(),
                ))
            }
        }
    }
    Ok(SkeletonKernel { rates: q, policy })
}

impl<'a, S: State> SkeletonKernel<'a, S> {
    pub(crate) fn unchecked(rates: &'a dyn RateSpec<State = S>, policy: AugmentationPolicy) -> Self {
        Self { rates, policy }
    }

    pub fn policy(&self) -> AugmentationPolicy {
        self.policy
    }

    pub fn rates(&self) -> &'a dyn RateSpec<State = S> {
        self.rates
    }

    /// Probability of staying in `s`.
    #[inline]
    pub fn stay_prob(&self, s: S) -> f64 {
        let exit = self.rates.exit_rate(s);
        let r = self.policy.dominating_rate(exit);
        if r <= 0.0 {
            1.0
        } else {
            (1.0 - exit / r).max(0.0)
        }
    }

    pub fn prob(&self, from: S, to: S) -> f64 {
        if from == to {
            return self.stay_prob(from);
        }
        let exit = self.rates.exit_rate(from);
        let r = self.policy.dominating_rate(exit);
        if r <= 0.0 {
            0.0
        } else {
            self.rates.rate(from, to) / r
        }
    }

    #[inline]
    pub fn log_prob(&self, from: S, to: S) -> f64 {
        self.prob(from, to).ln()
    }

    pub fn sample(&self, from: S, rng: &mut dyn RngCore) -> S {
        let exit = self.rates.exit_rate(from);
        let r = self.policy.dominating_rate(exit);
        if exit <= 0.0 || r <= 0.0 {
            return from;
        }
        if rng.random::<f64>() * r >= exit {
            return from;
        }
        self.rates.sample_target(from, rng).unwrap_or(from)
    }

    /// Nonzero entries of row `from`, the stay probability first.
    pub fn row(&self, from: S) -> Vec<(S, f64)> {
        let exit = self.rates.exit_rate(from);
        let r = self.policy.dominating_rate(exit);
        let mut out = Vec::new();
        let stay = self.stay_prob(from);
        if stay > 0.0 {
            out.push((from, stay));
        }
        if r > 0.0 {
            out.extend(
                self.rates
                    .targets(from)
                    .into_iter()
                    .filter(|(_, q)| *q > 0.0)
                    .map(|(t, q)| (t, q / r)),
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_x() -> DenseRates {
        DenseRates::new(vec![vec![0.0, 10.0], vec![10.0, 0.0]]).unwrap()
    }

    #[test]
    fn uniformized_toy_kernel_is_half_half() {
        let q = toy_x();
        let k = build_kernel(&q, AugmentationPolicy::Uniformization { lambda: 20.0 }).unwrap();
        for s in 0..2 {
            for t in 0..2 {
                assert!((k.prob(s, t) - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn homogeneous_toy_kernel_is_half_half() {
        let q = toy_x();
        let k = build_kernel(&q, AugmentationPolicy::Homogeneous { theta: 10.0 }).unwrap();
        assert!((k.stay_prob(0) - 0.5).abs() < 1e-15);
        assert!((k.prob(0, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn uniformization_below_max_exit_is_rejected() {
        let q = toy_x();
        let err = build_kernel(&q, AugmentationPolicy::Uniformization { lambda: 5.0 })
            .err()
            .unwrap();
        assert!(matches!(err, Error::PolicyViolation { .. }));
    }

    #[test]
    fn dense_targets_sum_to_exit_rate() {
        let q = DenseRates::from_fn(4, |i, j| (i + 2 * j) as f64 * 0.1).unwrap();
        for s in 0..4 {
            let sum: f64 = q.targets(s).iter().map(|(_, r)| r).sum();
            assert!((sum - q.exit_rate(s)).abs() <= 1e-12 * q.exit_rate(s));
            assert!(q.targets(s).iter().all(|(t, _)| *t != s));
        }
    }

    #[test]
    fn dense_sampling_follows_rates() {
        let q = DenseRates::new(vec![
            vec![0.0, 1.0, 3.0],
            vec![1.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0],
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 3];
        for _ in 0..40_000 {
            counts[q.sample_target(0, &mut rng).unwrap()] += 1;
        }
        let frac = counts[2] as f64 / 40_000.0;
        assert!((frac - 0.75).abs() < 0.01, "{frac}");
        assert_eq!(q.sample_target(2, &mut rng), None);
    }

    #[test]
    fn kernel_rows_are_stochastic() {
        let q = DenseRates::from_fn(5, |i, j| ((i * 7 + j * 3) % 5) as f64).unwrap();
        let max = q.max_exit_rate().unwrap();
        for policy in [
            AugmentationPolicy::Uniformization { lambda: max },
            AugmentationPolicy::Uniformization { lambda: 2.0 * max },
            AugmentationPolicy::Homogeneous { theta: 0.3 },
        ] {
            let k = build_kernel(&q, policy).unwrap();
            for s in 0..5 {
                let total: f64 = (0..5).map(|t| k.prob(s, t)).sum();
                assert!((total - 1.0).abs() < 1e-12);
                let row_total: f64 = k.row(s).iter().map(|(_, p)| p).sum();
                assert!((row_total - 1.0).abs() < 1e-12);
                assert!((0..5).all(|t| (0.0..=1.0).contains(&k.prob(s, t))));
            }
        }
    }
}

//! Forward simulation: Gillespie's direct method, thinning of a dominating
//! point process, and resampling of virtual jumps given a path.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Exp, Poisson};

use crate::error::{Error, Result};
use crate::process::PiecewiseProcess;
use crate::rates::{AugmentationPolicy, RateSpec, SkeletonKernel, State};
use crate::trajectory::{AugmentedTrajectory, Trajectory};

/// Default cap on the number of (potential) jumps of one simulated path.
pub const DEFAULT_JUMP_CAP: usize = 1_000_000;

/// Initial distribution `nu` of a jump process.
pub trait InitialDist<S>: Send + Sync {
    fn sample(&self, rng: &mut dyn RngCore) -> S;
    fn log_prob(&self, s: S) -> f64;
    /// States with positive mass, for finite distributions.
    fn support(&self) -> Option<Vec<S>> {
        None
    }
}

/// All mass on one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMass<S>(pub S);

impl<S: State> InitialDist<S> for PointMass<S> {
    fn sample(&self, _rng: &mut dyn RngCore) -> S {
        self.0
    }
    fn log_prob(&self, s: S) -> f64 {
        if s == self.0 {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }
    fn support(&self) -> Option<Vec<S>> {
        Some(vec![self.0])
    }
}

/// A distribution over dense state indices `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl Categorical {
    /// Normalizes nonnegative weights.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if weights.is_empty()
            || !(total > 0.0 && total.is_finite())
            || weights.iter().any(|w| !(*w >= 0.0))
        {
            return Err(Error::InvalidModel(format!("initial weights {weights:?}")));
        }
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self { probs, cumulative })
    }

    pub fn uniform(n: usize) -> Self {
        Self::new(vec![1.0; n]).expect("n > 0")
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

impl InitialDist<usize> for Categorical {
    fn sample(&self, rng: &mut dyn RngCore) -> usize {
        let u = rng.random::<f64>();
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.probs.len() - 1)
    }
    fn log_prob(&self, s: usize) -> f64 {
        self.probs.get(s).map(|p| p.ln()).unwrap_or(f64::NEG_INFINITY)
    }
    fn support(&self) -> Option<Vec<usize>> {
        Some((0..self.probs.len()).filter(|&s| self.probs[s] > 0.0).collect())
    }
}

/// Exponential waiting time with the given rate, strictly positive.
pub(crate) fn exp_wait(rate: f64, rng: &mut dyn RngCore) -> f64 {
    let dist = Exp::new(rate).expect("positive rate");
    loop {
        let w: f64 = dist.sample(rng);
        if w > 0.0 {
            return w;
        }
    }
}

/// Simulates a path on `[0, t_max]` with Gillespie's direct method.
pub fn simulate_gillespie<R, G>(
    q: &R,
    init: &dyn InitialDist<R::State>,
    t_max: f64,
    rng: &mut G,
) -> Result<Trajectory<R::State>>
where
    R: RateSpec + ?Sized,
    G: RngCore,
{
    simulate_gillespie_capped(q, init, t_max, DEFAULT_JUMP_CAP, rng)
}

/// As [`simulate_gillespie`], failing once more than `jump_cap` jumps occur.
pub fn simulate_gillespie_capped<R, G>(
    q: &R,
    init: &dyn InitialDist<R::State>,
    t_max: f64,
    jump_cap: usize,
    rng: &mut G,
) -> Result<Trajectory<R::State>>
where
    R: RateSpec + ?Sized,
    G: RngCore,
{
    let s0 = init.sample(rng);
    let mut s = s0;
    let mut t = 0.0;
    let mut jumps = Vec::new();
    loop {
        let exit = q.exit_rate(s);
        if exit <= 0.0 {
            break;
        }
        t += exp_wait(exit, rng);
        if t >= t_max {
            break;
        }
        let next = match q.sample_target(s, rng) {
            Some(n) => n,
            None => break,
        };
        jumps.push((t, next));
        if jumps.len() > jump_cap {
            return Err(Error::JumpCapExceeded { cap: jump_cap });
        }
        s = next;
    }
    Trajectory::new(s0, t_max, jumps)
}

/// Draws potential jump times from the dominating intensity `R` and moves
/// the skeleton with the thinned kernel. Candidates at or beyond `t_max`
/// are discarded.
pub fn thinning_sample<R, G>(
    q: &R,
    policy: AugmentationPolicy,
    init: &dyn InitialDist<R::State>,
    t_max: f64,
    rng: &mut G,
) -> Result<AugmentedTrajectory<R::State>>
where
    R: RateSpec + Sized,
    G: RngCore,
{
    policy.validate_parameters()?;
    let kernel = SkeletonKernel::unchecked(q as &dyn RateSpec<State = R::State>, policy);
    let s0 = init.sample(rng);
    let mut s = s0;
    let mut t = 0.0;
    let mut grid = Vec::new();
    loop {
        let dominating = policy.checked_dominating_rate(&s, q.exit_rate(s))?;
        if dominating <= 0.0 {
            break;
        }
        t += exp_wait(dominating, rng);
        if t >= t_max {
            break;
        }
        s = kernel.sample(s, rng);
        grid.push((t, s));
        if grid.len() > DEFAULT_JUMP_CAP {
            return Err(Error::JumpCapExceeded {
                cap: DEFAULT_JUMP_CAP,
            });
        }
    }
    AugmentedTrajectory::new(s0, t_max, grid)
}

/// Adds virtual jumps to a homogeneous path: on each holding interval in
/// state `s` they form a Poisson process of rate `R(s) - Q(s)`.
pub fn resample_virtual<R, G>(
    traj: &Trajectory<R::State>,
    q: &R,
    policy: AugmentationPolicy,
    rng: &mut G,
) -> Result<AugmentedTrajectory<R::State>>
where
    R: RateSpec + Sized,
    G: RngCore,
{
    let process = PiecewiseProcess::homogeneous(q, policy, traj.t_max());
    resample_virtual_piecewise(traj, &process, rng)
}

/// Virtual-jump resampling for a piecewise-homogeneous process; the rate on
/// each piece uses that piece's rates and policy.
pub fn resample_virtual_piecewise<S: State>(
    traj: &Trajectory<S>,
    process: &PiecewiseProcess<'_, S>,
    rng: &mut dyn RngCore,
) -> Result<AugmentedTrajectory<S>> {
    let mut grid: Vec<(f64, S)> = Vec::with_capacity(2 * traj.num_jumps() + 8);
    let mut buf = Vec::new();
    let mut times = Vec::new();
    let jumps = traj.jumps();
    for (j, (a, b, state)) in traj.segments().enumerate() {
        buf.clear();
        process.split_interval(a, b, &mut buf);
        for &(start, end, seg_idx) in &buf {
            let seg = &process.segments()[seg_idx];
            let exit = seg.rates.exit_rate(state);
            let dominating = seg.policy.checked_dominating_rate(&state, exit)?;
            let rate = (dominating - exit).max(0.0);
            let mean = rate * (end - start);
            if mean <= 0.0 {
                continue;
            }
            let count = Poisson::new(mean)
                .map_err(|e| Error::InvalidModel(format!("virtual jump rate: {e}")))?
                .sample(rng) as usize;
            if grid.len() + count > DEFAULT_JUMP_CAP {
                return Err(Error::JumpCapExceeded {
                    cap: DEFAULT_JUMP_CAP,
                });
            }
            times.clear();
            for _ in 0..count {
                times.push(uniform_open(start, end, rng));
            }
            times.sort_by(f64::total_cmp);
            dedup_strict(&mut times, start, end, rng);
            grid.extend(times.iter().map(|&t| (t, state)));
        }
        if j < jumps.len() {
            grid.push(jumps[j]);
        }
    }
    AugmentedTrajectory::new(traj.s0(), traj.t_max(), grid)
}

/// Uniform draw in the open interval `(a, b)`.
fn uniform_open(a: f64, b: f64, rng: &mut dyn RngCore) -> f64 {
    loop {
        let t = a + (b - a) * rng.random::<f64>();
        if t > a && t < b {
            return t;
        }
    }
}

/// Replaces exact duplicates among sorted times, keeping them sorted.
fn dedup_strict(times: &mut Vec<f64>, a: f64, b: f64, rng: &mut dyn RngCore) {
    while times.windows(2).any(|w| w[0] >= w[1]) {
        for i in 1..times.len() {
            if times[i] <= times[i - 1] {
                times[i] = uniform_open(a, b, rng);
            }
        }
        times.sort_by(f64::total_cmp);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::DenseRates;
    use crate::trajectory::strip_virtual;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_x() -> DenseRates {
        DenseRates::new(vec![vec![0.0, 10.0], vec![10.0, 0.0]]).unwrap()
    }

    #[test]
    fn absorbing_initial_state_never_jumps() {
        let q = DenseRates::new(vec![vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let traj = simulate_gillespie(&q, &PointMass(0), 5.0, &mut rng).unwrap();
        assert_eq!(traj.num_jumps(), 0);
    }

    #[test]
    fn jump_cap_is_enforced() {
        let q = toy_x();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = simulate_gillespie_capped(&q, &PointMass(0), 100.0, 10, &mut rng).unwrap_err();
        assert!(matches!(err, Error::JumpCapExceeded { cap: 10 }));
    }

    #[test]
    fn gillespie_jump_count_mean_is_poisson_mean() {
        let q = toy_x();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let runs = 10_000;
        let total: usize = (0..runs)
            .map(|_| simulate_gillespie(&q, &PointMass(0), 1.0, &mut rng).unwrap().num_jumps())
            .sum();
        let mean = total as f64 / runs as f64;
        assert!((mean - 10.0).abs() < 3.0 * (10.0f64 / runs as f64).sqrt(), "{mean}");
    }

    #[test]
    fn thinning_at_the_boundary_has_no_virtual_jumps() {
        let q = toy_x();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let aug = thinning_sample(
                &q,
                AugmentationPolicy::Uniformization { lambda: 10.0 },
                &PointMass(0),
                1.0,
                &mut rng,
            )
            .unwrap();
            assert_eq!(aug.num_virtual(), 0);
        }
    }

    #[test]
    fn thinning_rejects_small_dominating_rate() {
        let q = toy_x();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let err = thinning_sample(
            &q,
            AugmentationPolicy::Uniformization { lambda: 9.0 },
            &PointMass(1),
            1.0,
            &mut rng,
        )
        .unwrap_err();
        match err {
            Error::PolicyViolation { state, .. } => assert_eq!(state, "1"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn resampling_keeps_true_jumps() {
        let q = toy_x();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let traj = Trajectory::new(0usize, 1.0, vec![(0.3, 1), (0.4, 0)]).unwrap();
        for policy in [
            AugmentationPolicy::Uniformization { lambda: 20.0 },
            AugmentationPolicy::Homogeneous { theta: 4.0 },
            AugmentationPolicy::Uniformization { lambda: 10.0 },
        ] {
            let aug = resample_virtual(&traj, &q, policy, &mut rng).unwrap();
            assert_eq!(strip_virtual(&aug), traj);
            if policy == (AugmentationPolicy::Uniformization { lambda: 10.0 }) {
                assert_eq!(aug.num_virtual(), 0);
            }
        }
    }
}

//! Evidence models and the discrete-time view of the conditioned skeleton.
//!
//! Once the potential jump times are fixed, the skeleton `s_0..s_n` given
//! the evidence is a hidden Markov model with initial law `nu`, transition
//! kernel `P` and potentials `g_k`:
//!
//! ```text
//! p(S | T, V, Y) ∝ nu(s_0) g_0(s_0) ∏_{k=1..n} P(s_{k-1}, s_k) g_k(s_k)
//! ```
//!
//! [`HmmFactors`] holds that factorization. Potentials are evaluated lazily
//! so that unbounded state spaces work.

use std::sync::Arc;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::process::PiecewiseProcess;
use crate::rates::{AugmentationPolicy, SharedRates, State};
use crate::simulate::InitialDist;
use crate::trajectory::Trajectory;

/// Log-likelihood of one observation as a function of the hidden state.
pub type LogLik<S> = Arc<dyn Fn(S) -> f64 + Send + Sync>;

/// A noisy observation of `X(t)` at a fixed time.
#[derive(Clone)]
pub struct PointObservation<S> {
    pub time: f64,
    pub loglik: LogLik<S>,
}

impl<S: State> PointObservation<S> {
    pub fn new(time: f64, loglik: impl Fn(S) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            time,
            loglik: Arc::new(loglik),
        }
    }

    /// Exact observation: likelihood one at `state`, zero elsewhere.
    pub fn exact(time: f64, state: S) -> Self {
        Self::new(time, move |s| if s == state { 0.0 } else { f64::NEG_INFINITY })
    }
}

impl PointObservation<usize> {
    /// Log-likelihood given as a table over state indices; states past the
    /// end of the table are impossible.
    pub fn table(time: f64, table: Vec<f64>) -> Self {
        Self::new(time, move |s| table.get(s).copied().unwrap_or(f64::NEG_INFINITY))
    }
}

impl<S> std::fmt::Debug for PointObservation<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PointObservation").field("time", &self.time).finish()
    }
}

/// Observations of the path at deterministic times, sorted by time.
#[derive(Clone, Debug)]
pub struct PointEvidence<S> {
    observations: Vec<PointObservation<S>>,
}

impl<S> Default for PointEvidence<S> {
    fn default() -> Self {
        Self {
            observations: Vec::new(),
        }
    }
}

impl<S: State> PointEvidence<S> {
    pub fn new(mut observations: Vec<PointObservation<S>>) -> Result<Self> {
        if let Some(o) = observations.iter().find(|o| !o.time.is_finite()) {
            return Err(Error::InvalidEvidence(format!("observation time {}", o.time)));
        }
        observations.sort_by(|a, b| a.time.total_cmp(&b.time));
        Ok(Self { observations })
    }

    pub fn observations(&self) -> &[PointObservation<S>] {
        &self.observations
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn push(&mut self, obs: PointObservation<S>) {
        let pos = self.observations.partition_point(|o| o.time <= obs.time);
        self.observations.insert(pos, obs);
    }

    /// Total log-likelihood of a path.
    pub fn log_likelihood(&self, traj: &Trajectory<S>) -> f64 {
        self.observations
            .iter()
            .map(|o| (o.loglik)(traj.state_at(o.time)))
            .sum()
    }
}

/// A fully observed child process `Y` whose intensities depend on the hidden
/// process `X` (and possibly on other, fixed co-parents).
///
/// The intensity matrix of `Y` at time `t` is `cims[base(t) + stride * x]`,
/// where `x` is the index of `X(t)` and `base` is a piecewise-constant code
/// contributed by the co-parents.
#[derive(Clone)]
pub struct ChildProcessEvidence {
    trajectory: Trajectory<usize>,
    cims: Vec<SharedRates>,
    stride: usize,
    base: Vec<(f64, usize)>,
}

impl ChildProcessEvidence {
    /// A child whose only parent is the hidden process: `cims[x]` applies
    /// while `X = x`.
    pub fn new(trajectory: Trajectory<usize>, cims: Vec<SharedRates>) -> Self {
        Self {
            trajectory,
            cims,
            stride: 1,
            base: vec![(0.0, 0)],
        }
    }

    /// A child with co-parents; `base` lists `(from_time, code)` pairs, the
    /// first at time 0.
    pub fn with_co_parents(
        trajectory: Trajectory<usize>,
        cims: Vec<SharedRates>,
        stride: usize,
        base: Vec<(f64, usize)>,
    ) -> Result<Self> {
        match base.first() {
            Some((t, _)) if *t == 0.0 => {}
            _ => return Err(Error::InvalidEvidence("co-parent codes must start at 0".into())),
        }
        if base.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::InvalidEvidence("co-parent code times out of order".into()));
        }
        Ok(Self {
            trajectory,
            cims,
            stride,
            base,
        })
    }

    pub fn trajectory(&self) -> &Trajectory<usize> {
        &self.trajectory
    }

    #[inline]
    fn rates(&self, base: usize, parent: usize) -> &SharedRates {
        &self.cims[base + self.stride * parent]
    }

    /// Log-density of the child path given the whole parent path.
    pub fn log_likelihood(&self, parent: &Trajectory<usize>) -> f64 {
        let grid: Vec<f64> = parent.jump_times().collect();
        let pots = child_process_potentials(self, &grid);
        let mut state = parent.s0();
        let mut total = pots.log_potential(0, state);
        for (k, (_, s)) in parent.jumps().iter().enumerate() {
            state = *s;
            total += pots.log_potential(k + 1, state);
        }
        total
    }
}

#[derive(Debug, Clone, Copy)]
enum ChildTerm {
    Hold { dt: f64, y: usize, base: usize },
    Jump { from: usize, to: usize, base: usize },
}

/// Per-interval likelihood contributions of a child process.
///
/// Interval `k` is `[t_k, t_{k+1})` with `t_0 = 0` and `t_{n+1} = t_max`.
#[derive(Clone)]
pub struct ChildPotentials {
    evidence: ChildProcessEvidence,
    offsets: Vec<usize>,
    terms: Vec<ChildTerm>,
}

impl ChildPotentials {
    pub fn intervals(&self) -> usize {
        self.offsets.len() - 1
    }

    /// `log g_k(x)` contributed by the child while the parent is in `x`.
    pub fn log_potential(&self, k: usize, parent: usize) -> f64 {
        let mut total = 0.0;
        for term in &self.terms[self.offsets[k]..self.offsets[k + 1]] {
            match *term {
                ChildTerm::Hold { dt, y, base } => {
                    total -= self.evidence.rates(base, parent).exit_rate(y) * dt;
                }
                ChildTerm::Jump { from, to, base } => {
                    let r = self.evidence.rates(base, parent).rate(from, to);
                    if r <= 0.0 {
                        return f64::NEG_INFINITY;
                    }
                    total += r.ln();
                }
            }
        }
        total
    }
}

/// Splits the child's log-density over the grid intervals.
///
/// A child jump falling exactly on a grid time is attributed to the earlier
/// interval.
pub fn child_process_potentials(child: &ChildProcessEvidence, grid_times: &[f64]) -> ChildPotentials {
    #[derive(Clone, Copy)]
    enum Event {
        Jump(usize),
        Base(usize),
        Grid,
    }
    let traj = &child.trajectory;
    let t_max = traj.t_max();
    let mut events: Vec<(f64, u8, Event)> = Vec::with_capacity(
        grid_times.len() + traj.num_jumps() + child.base.len(),
    );
    events.extend(traj.jumps().iter().map(|&(t, y)| (t, 0, Event::Jump(y))));
    events.extend(child.base.iter().skip(1).map(|&(t, b)| (t, 1, Event::Base(b))));
    events.extend(grid_times.iter().map(|&t| (t, 2, Event::Grid)));
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut offsets = Vec::with_capacity(grid_times.len() + 2);
    let mut terms = Vec::with_capacity(events.len() * 2 + 1);
    offsets.push(0);
    let mut now = 0.0;
    let mut y = traj.s0();
    let mut base = child.base[0].1;
    let mut grid_set = grid_times.iter().peekable();
    for &(t, _, event) in &events {
        if t > now {
            terms.push(ChildTerm::Hold { dt: t - now, y, base });
            now = t;
        }
        match event {
            Event::Jump(next) => {
                if grid_set.peek().is_some_and(|&&g| g == t) {
                    log::warn!("child jump at t = {t} coincides with a grid time");
                }
                terms.push(ChildTerm::Jump { from: y, to: next, base });
                y = next;
            }
            Event::Base(b) => base = b,
            Event::Grid => {
                grid_set.next();
                offsets.push(terms.len());
            }
        }
    }
    if t_max > now {
        terms.push(ChildTerm::Hold {
            dt: t_max - now,
            y,
            base,
        });
    }
    offsets.push(terms.len());
    ChildPotentials {
        evidence: child.clone(),
        offsets,
        terms,
    }
}

/// Everything observed about one hidden process.
#[derive(Clone)]
pub struct Evidence<S> {
    pub points: PointEvidence<S>,
    pub children: Vec<ChildProcessEvidence>,
}

impl<S> Default for Evidence<S> {
    fn default() -> Self {
        Self {
            points: PointEvidence::default(),
            children: Vec::new(),
        }
    }
}

impl<S: State> Evidence<S> {
    pub fn points(points: PointEvidence<S>) -> Self {
        Self {
            points,
            children: Vec::new(),
        }
    }
}

/// Maps each observation time to the index of the last grid point at or
/// before it (0 when it precedes every grid point).
pub fn locate_observation_steps(grid_times: &[f64], observation_times: &[f64], t_max: f64) -> Result<Vec<usize>> {
    observation_times
        .iter()
        .map(|&t| {
            if !(0.0..=t_max).contains(&t) {
                Err(Error::ObservationOutOfRange { time: t, t_max })
            } else {
                Ok(grid_times.partition_point(|&g| g <= t))
            }
        })
        .collect()
}

/// A discrete-time hidden Markov model over skeletons `s_0..s_n`, the
/// interface shared by SMC, particle Gibbs and forward filtering.
pub trait SkeletonHmm {
    type State: State;

    /// Number of transitions `n`.
    fn steps(&self) -> usize;
    fn sample_initial(&self, rng: &mut dyn RngCore) -> Self::State;
    fn log_initial(&self, s: Self::State) -> f64;
    /// `log g_k(s)` for `k` in `0..=n`.
    fn log_potential(&self, k: usize, s: Self::State) -> f64;
    /// Draws `s_k` given `s_{k-1}`, for `k` in `1..=n`.
    fn sample_transition(&self, k: usize, from: Self::State, rng: &mut dyn RngCore) -> Self::State;
    fn log_transition(&self, k: usize, from: Self::State, to: Self::State) -> f64;
    /// Nonzero entries of the transition row at step `k`.
    fn transition_row(&self, k: usize, from: Self::State) -> Vec<(Self::State, f64)>;
    /// All states, when the space is finite.
    fn state_space(&self) -> Option<Vec<Self::State>>;
}

/// The factorization of the skeleton's conditional law for fixed potential
/// jump times.
pub struct HmmFactors<'a, S> {
    process: PiecewiseProcess<'a, S>,
    initial: &'a dyn InitialDist<S>,
    times: Vec<f64>,
    step_segment: Vec<usize>,
    hold_offsets: Vec<usize>,
    hold: Vec<(usize, f64)>,
    needs_holding: bool,
    obs_offsets: Vec<usize>,
    obs: Vec<LogLik<S>>,
    children: Vec<ChildPotentials>,
}

/// Builds `nu`, `P` and the potentials `g_k` for fixed grid times.
///
/// Potentials combine the point observations grouped by grid interval, the
/// child-process likelihoods, and for homogeneous virtual jumps the holding
/// factors `(Q(s) + theta) exp(-(Q(s) + theta) Δ)`. Under uniformization the
/// holding factors do not depend on the skeleton and are dropped.
pub fn build_hmm_factors<'a, S: State>(
    process: &PiecewiseProcess<'a, S>,
    initial: &'a dyn InitialDist<S>,
    grid_times: &[f64],
    evidence: &Evidence<S>,
) -> Result<HmmFactors<'a, S>> {
    let t_max = process.t_max();
    let mut prev = 0.0;
    for &t in grid_times {
        if !(t > prev && t < t_max) {
            return Err(Error::InvalidTrajectory(format!("grid time {t} out of order")));
        }
        prev = t;
    }
    for seg in process.segments() {
        seg.policy.validate_parameters()?;
    }
    if !evidence.children.is_empty() && process.segments()[0].rates.states().is_none() {
        return Err(Error::UnsupportedModel(
            "child-process evidence needs a finite parent".into(),
        ));
    }
    let n = grid_times.len();
    let step_segment: Vec<usize> = grid_times.iter().map(|&t| process.segment_index_at(t)).collect();

    let needs_holding = process
        .segments()
        .iter()
        .any(|s| !s.policy.is_uniformization());
    let mut hold_offsets = Vec::with_capacity(n + 2);
    let mut hold = Vec::new();
    hold_offsets.push(0);
    if needs_holding {
        let mut buf = Vec::new();
        for k in 0..=n {
            let a = if k == 0 { 0.0 } else { grid_times[k - 1] };
            let b = if k == n { t_max } else { grid_times[k] };
            buf.clear();
            process.split_interval(a, b, &mut buf);
            hold.extend(buf.iter().map(|&(x, y, seg)| (seg, y - x)));
            hold_offsets.push(hold.len());
        }
    }

    let obs_list = evidence.points.observations();
    let times: Vec<f64> = obs_list.iter().map(|o| o.time).collect();
    let steps = locate_observation_steps(grid_times, &times, t_max)?;
    let mut obs_offsets = vec![0usize; n + 2];
    for &k in &steps {
        obs_offsets[k + 1] += 1;
    }
    for k in 0..=n {
        obs_offsets[k + 1] += obs_offsets[k];
    }
    // observations are sorted by time, so their steps are nondecreasing
    let obs: Vec<LogLik<S>> = obs_list.iter().map(|o| o.loglik.clone()).collect();

    let children = evidence
        .children
        .iter()
        .map(|c| child_process_potentials(c, grid_times))
        .collect();

    Ok(HmmFactors {
        process: process.clone(),
        initial,
        times: grid_times.to_vec(),
        step_segment,
        hold_offsets,
        hold,
        needs_holding,
        obs_offsets,
        obs,
        children,
    })
}

impl<'a, S: State> HmmFactors<'a, S> {
    pub fn grid_times(&self) -> &[f64] {
        &self.times
    }

    pub fn process(&self) -> &PiecewiseProcess<'a, S> {
        &self.process
    }

    pub fn initial(&self) -> &'a dyn InitialDist<S> {
        self.initial
    }

    /// Potentials at step `k` from the point observations only.
    pub fn observation_log_potential(&self, k: usize, s: S) -> f64 {
        self.obs[self.obs_offsets[k]..self.obs_offsets[k + 1]]
            .iter()
            .map(|f| f(s))
            .sum()
    }

    fn holding_log_potential(&self, k: usize, s: S) -> f64 {
        let segments = self.process.segments();
        let mut total = 0.0;
        for &(seg_idx, dt) in &self.hold[self.hold_offsets[k]..self.hold_offsets[k + 1]] {
            let seg = &segments[seg_idx];
            if let AugmentationPolicy::Homogeneous { theta } = seg.policy {
                total -= (seg.rates.exit_rate(s) + theta) * dt;
            }
        }
        if k < self.times.len() {
            let seg = &segments[self.step_segment[k]];
            if let AugmentationPolicy::Homogeneous { theta } = seg.policy {
                total += (seg.rates.exit_rate(s) + theta).ln();
            }
        }
        total
    }

    /// Checks that every step has a state with finite potential. Only
    /// possible for finite state spaces.
    pub fn check_nondegenerate(&self) -> Result<()> {
        let states = self
            .state_space()
            .ok_or_else(|| Error::UnsupportedModel("degeneracy check needs a finite space".into()))?;
        for k in 0..=self.steps() {
            if !states.iter().any(|&s| self.log_potential(k, s) > f64::NEG_INFINITY) {
                return Err(Error::DegeneratePotential { step: k });
            }
        }
        Ok(())
    }

    #[inline]
    fn kernel(&self, k: usize) -> crate::rates::SkeletonKernel<'a, S> {
        let seg = &self.process.segments()[self.step_segment[k - 1]];
        crate::rates::SkeletonKernel::unchecked(seg.rates, seg.policy)
    }
}

impl<S: State> SkeletonHmm for HmmFactors<'_, S> {
    type State = S;

    fn steps(&self) -> usize {
        self.times.len()
    }

    fn sample_initial(&self, rng: &mut dyn RngCore) -> S {
        self.initial.sample(rng)
    }

    fn log_initial(&self, s: S) -> f64 {
        self.initial.log_prob(s)
    }

    fn log_potential(&self, k: usize, s: S) -> f64 {
        let mut total = self.observation_log_potential(k, s);
        if total == f64::NEG_INFINITY {
            return total;
        }
        if self.needs_holding {
            total += self.holding_log_potential(k, s);
        }
        if !self.children.is_empty() {
            let idx = s.index().expect("finite parent");
            for child in &self.children {
                total += child.log_potential(k, idx);
            }
        }
        total
    }

    fn sample_transition(&self, k: usize, from: S, rng: &mut dyn RngCore) -> S {
        self.kernel(k).sample(from, rng)
    }

    fn log_transition(&self, k: usize, from: S, to: S) -> f64 {
        self.kernel(k).log_prob(from, to)
    }

    fn transition_row(&self, k: usize, from: S) -> Vec<(S, f64)> {
        self.kernel(k).row(from)
    }

    fn state_space(&self) -> Option<Vec<S>> {
        self.process.segments()[0].rates.states()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{log_density_augmented, log_density_path};
    use crate::rates::DenseRates;
    use crate::simulate::{thinning_sample, Categorical, PointMass};
    use crate::trajectory::AugmentedTrajectory;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shared(m: Vec<Vec<f64>>) -> SharedRates {
        Arc::new(DenseRates::new(m).unwrap())
    }

    #[test]
    fn observation_steps_follow_weak_inequality() {
        let grid = [0.2, 0.6];
        assert_eq!(locate_observation_steps(&grid, &[0.5], 1.0).unwrap(), vec![1]);
        assert_eq!(locate_observation_steps(&grid, &[0.1], 1.0).unwrap(), vec![0]);
        assert_eq!(locate_observation_steps(&grid, &[0.6], 1.0).unwrap(), vec![2]);
        assert_eq!(locate_observation_steps(&grid, &[0.0, 1.0], 1.0).unwrap(), vec![0, 2]);
        assert!(locate_observation_steps(&grid, &[1.5], 1.0).is_err());
    }

    #[test]
    fn child_holding_only_interval() {
        let y = Trajectory::constant(1usize, 1.0);
        let child = ChildProcessEvidence::new(
            y,
            vec![
                shared(vec![vec![0.0, 10.0], vec![10.0, 0.0]]),
                shared(vec![vec![0.0, 100.0], vec![100.0, 0.0]]),
            ],
        );
        let pots = child_process_potentials(&child, &[0.4]);
        assert!((pots.log_potential(0, 0) + 10.0 * 0.4).abs() < 1e-12);
        assert!((pots.log_potential(1, 1) + 100.0 * 0.6).abs() < 1e-12);
    }

    #[test]
    fn child_jump_interval_matches_toy_numbers() {
        let y = Trajectory::new(0usize, 1.0, vec![(0.505, 1)]).unwrap();
        let child = ChildProcessEvidence::new(
            y,
            vec![
                shared(vec![vec![0.0, 10.0], vec![10.0, 0.0]]),
                shared(vec![vec![0.0, 100.0], vec![100.0, 0.0]]),
            ],
        );
        let pots = child_process_potentials(&child, &[0.5, 0.51]);
        let fast = pots.log_potential(1, 1);
        let slow = pots.log_potential(1, 0);
        assert!((fast - (100f64.ln() - 1.0)).abs() < 1e-9);
        assert!((slow - (10f64.ln() - 0.1)).abs() < 1e-9);
    }

    #[test]
    fn child_potentials_sum_to_conditional_density() {
        let cims = vec![
            shared(vec![vec![0.0, 2.0, 1.0], vec![1.0, 0.0, 3.0], vec![0.5, 0.5, 0.0]]),
            shared(vec![vec![0.0, 6.0, 1.0], vec![4.0, 0.0, 0.3], vec![2.0, 1.0, 0.0]]),
        ];
        let qx = DenseRates::new(vec![vec![0.0, 3.0], vec![2.0, 0.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let x = crate::simulate::simulate_gillespie(&qx, &PointMass(0), 2.0, &mut rng).unwrap();
            // simulate the child segment by segment under the parent path
            let mut y_jumps = Vec::new();
            let mut y = 0usize;
            for (a, b, xs) in x.segments() {
                let seg = crate::simulate::simulate_gillespie(&*cims[xs], &PointMass(y), b - a, &mut rng)
                    .unwrap();
                for &(t, s) in seg.jumps() {
                    y_jumps.push((a + t, s));
                }
                y = seg.final_state();
            }
            let ytraj = Trajectory::new(0usize, 2.0, y_jumps).unwrap();
            let child = ChildProcessEvidence::new(ytraj.clone(), cims.clone());

            let segs: Vec<crate::process::Segment<usize>> = x
                .segments()
                .map(|(a, _, xs)| crate::process::Segment {
                    start: a,
                    rates: &*cims[xs],
                    policy: AugmentationPolicy::Homogeneous { theta: 0.0 },
                })
                .collect();
            let proc = PiecewiseProcess::new(2.0, segs).unwrap();
            let direct = log_density_path(&proc, &ytraj).unwrap();
            assert!((child.log_likelihood(&x) - direct).abs() < 1e-10);
        }
    }

    /// Changing the skeleton on a fixed grid changes the factorized density
    /// and the augmented density by the same amount.
    #[test]
    fn factorization_matches_augmented_density_up_to_constant() {
        let q = DenseRates::new(vec![vec![0.0, 2.0, 1.0], vec![1.0, 0.0, 3.0], vec![2.0, 2.0, 0.0]])
            .unwrap();
        let init = Categorical::new(vec![0.2, 0.5, 0.3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let obs = PointEvidence::new(vec![
            PointObservation::table(0.3, vec![-0.1, -2.0, -1.0]),
            PointObservation::table(0.8, vec![-3.0, -0.2, -0.7]),
            PointObservation::table(1.0, vec![-0.5, -0.5, -4.0]),
        ])
        .unwrap();
        let evidence = Evidence::points(obs.clone());
        for policy in [
            AugmentationPolicy::Uniformization { lambda: 6.0 },
            AugmentationPolicy::Homogeneous { theta: 1.5 },
        ] {
            let process = PiecewiseProcess::homogeneous(&q, policy, 1.0);
            let aug = thinning_sample(&q, policy, &init, 1.0, &mut rng).unwrap();
            let times = aug.times();
            let factors = build_hmm_factors(&process, &init, &times, &evidence).unwrap();
            let mut diffs = Vec::new();
            for _ in 0..12 {
                let skel: Vec<usize> = (0..=times.len()).map(|_| rng.random_range(0..3)).collect();
                let mut lhs = factors.log_initial(skel[0]) + factors.log_potential(0, skel[0]);
                for k in 1..=times.len() {
                    lhs += factors.log_transition(k, skel[k - 1], skel[k]) + factors.log_potential(k, skel[k]);
                }
                let a = AugmentedTrajectory::from_skeleton(&times, &skel, 1.0).unwrap();
                let rhs = log_density_augmented(&q, policy, &init, &a).unwrap()
                    + obs.log_likelihood(&crate::trajectory::strip_virtual(&a));
                if lhs.is_finite() && rhs.is_finite() {
                    diffs.push(lhs - rhs);
                } else {
                    assert_eq!(lhs.is_finite(), rhs.is_finite());
                }
            }
            assert!(diffs.len() >= 2);
            for d in &diffs {
                assert!((d - diffs[0]).abs() < 1e-9, "{diffs:?}");
            }
        }
    }

}

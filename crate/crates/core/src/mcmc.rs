//! Outer samplers: the trajectory update for a single jump process, the
//! node-wise Gibbs sweep for networks, and chain drivers.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ctbn::{node_full_conditional, simulate_ctbn_from, log_density_ctbn, CtbnModel, CtbnPath};
use crate::diagnostics::{sufficient_stats, StatRow};
use crate::error::{Error, Result};
use crate::observation::{build_hmm_factors, Evidence, PointEvidence};
use crate::process::PiecewiseProcess;
use crate::rates::{AugmentationPolicy, RateSpec, State};
use crate::simulate::{resample_virtual_piecewise, simulate_gillespie, InitialDist};
use crate::smc::{ffbs_sample, pgas_step};
use crate::trajectory::{strip_virtual, AugmentedTrajectory, Trajectory};

/// Skeleton update used inside each trajectory step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    Pgas { particles: usize },
    Ffbs,
}

/// How the dominating rate is chosen for a process or a network node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PolicySpec {
    Uniformization { lambda: f64 },
    Homogeneous { theta: f64 },
    /// Uniformization at `factor` times the largest exit rate of the rate
    /// specification in force, chosen separately on each parent segment.
    ScaledExit { factor: f64 },
}

impl PolicySpec {
    pub fn resolve<S: crate::rates::State>(&self, rates: &dyn RateSpec<State = S>) -> Result<AugmentationPolicy> {
        Ok(match *self {
            PolicySpec::Uniformization { lambda } => AugmentationPolicy::Uniformization { lambda },
            PolicySpec::Homogeneous { theta } => AugmentationPolicy::Homogeneous { theta },
            PolicySpec::ScaledExit { factor } => {
                let max = rates.max_exit_rate().ok_or_else(|| {
                    Error::UnsupportedModel("scaled uniformization needs bounded exit rates".into())
                })?;
                AugmentationPolicy::Uniformization { lambda: factor * max }
            }
        })
    }
}

impl From<AugmentationPolicy> for PolicySpec {
    fn from(p: AugmentationPolicy) -> Self {
        match p {
            AugmentationPolicy::Uniformization { lambda } => PolicySpec::Uniformization { lambda },
            AugmentationPolicy::Homogeneous { theta } => PolicySpec::Homogeneous { theta },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeOrder {
    #[default]
    Fixed,
    RandomPermutation,
}

fn default_thin() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub method: Method,
    pub policy: PolicySpec,
    /// Per-node overrides of `policy` for networks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_policies: Option<Vec<PolicySpec>>,
    pub iterations: usize,
    pub burn_in: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
    pub seed: u64,
    #[serde(default)]
    pub node_order: NodeOrder,
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations <= self.burn_in {
            return Err(Error::InvalidConfig(format!(
                "iterations ({}) must exceed burn-in ({})",
                self.iterations, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidConfig("thinning interval must be positive".into()));
        }
        if let Method::Pgas { particles } = self.method {
            if particles < 2 {
                return Err(Error::InvalidConfig(format!("{particles} particles; at least 2 needed")));
            }
        }
        Ok(())
    }

    pub fn node_policy(&self, w: usize) -> PolicySpec {
        self.node_policies
            .as_ref()
            .and_then(|v| v.get(w).copied())
            .unwrap_or(self.policy)
    }

    /// Number of recorded iterations.
    pub fn recorded(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }

    fn records(&self, it: usize) -> bool {
        it >= self.burn_in && (it - self.burn_in) % self.thin == 0
    }
}

/// Checks that the chain will be irreducible and aperiodic: uniformization
/// needs `lambda` strictly above every exit rate, homogeneous virtual jumps
/// need `theta > 0`.
pub fn validate_ergodicity<S: State>(rates: &dyn RateSpec<State = S>, policy: &PolicySpec) -> Result<()> {
    match *policy {
        PolicySpec::Uniformization { lambda } => {
            let max = rates.max_exit_rate().ok_or_else(|| {
                Error::Ergodicity("exit rates are unbounded, so uniformization is impossible".into())
            })?;
            if !(lambda > max) {
                let state = rates
                    .states()
                    .and_then(|all| all.into_iter().find(|s| rates.exit_rate(*s) >= lambda))
                    .map(|s| format!(" at state {s:?}"))
                    .unwrap_or_default();
                return Err(Error::Ergodicity(format!(
                    "uniformization rate {lambda} does not exceed the maximal exit rate {max}{state}"
                )));
            }
        }
        PolicySpec::Homogeneous { theta } => {
            if !(theta > 0.0 && theta.is_finite()) {
                return Err(Error::Ergodicity(format!("virtual jump rate {theta} must be positive")));
            }
        }
        PolicySpec::ScaledExit { factor } => {
            if !(factor > 1.0 && factor.is_finite()) {
                return Err(Error::Ergodicity(format!("scale factor {factor} must exceed 1")));
            }
            if rates.max_exit_rate().is_none() {
                return Err(Error::Ergodicity("exit rates are unbounded, so uniformization is impossible".into()));
            }
        }
    }
    Ok(())
}

/// Validates a network configuration for the nodes that get resampled.
pub fn validate_ctbn_config(model: &CtbnModel, config: &ChainConfig, hidden: &[usize]) -> Result<()> {
    config.validate()?;
    if let Some(v) = &config.node_policies {
        if v.len() != model.num_nodes() {
            return Err(Error::InvalidConfig("one policy per node is needed".into()));
        }
    }
    for &w in hidden {
        let policy = config.node_policy(w);
        for rates in model.cims(w) {
            validate_ergodicity(&**rates, &policy).map_err(|e| match e {
                Error::Ergodicity(msg) => Error::Ergodicity(format!("node {} ({}): {msg}", w, model.names()[w])),
                other => other,
            })?;
        }
        if matches!(config.method, Method::Ffbs) && model.cims(w).iter().any(|r| r.states().is_none()) {
            return Err(Error::UnsupportedModel(format!("node {w} has an unbounded state space")));
        }
    }
    Ok(())
}

/// Outcome of one trajectory update.
#[derive(Debug, Clone)]
pub struct StepOutcome<S> {
    pub trajectory: Trajectory<S>,
    /// Potential jump times `T ∪ V` used by the skeleton update.
    pub grid: Vec<f64>,
    /// True when the skeleton came back unchanged.
    pub unchanged: bool,
    pub ancestor_switch_rate: Option<f64>,
}

/// One trajectory update: add virtual jumps, redraw the skeleton on the
/// fixed grid by particle Gibbs or forward filtering, drop virtual jumps.
pub fn mjp_mcmc_step<S: State>(
    traj: &Trajectory<S>,
    process: &PiecewiseProcess<'_, S>,
    initial: &dyn InitialDist<S>,
    evidence: &Evidence<S>,
    method: Method,
    rng: &mut dyn RngCore,
) -> Result<StepOutcome<S>> {
    let aug = resample_virtual_piecewise(traj, process, rng)?;
    let times = aug.times();
    let hmm = build_hmm_factors(process, initial, &times, evidence)?;
    let reference = aug.skeleton();
    let (skeleton, switch) = match method {
        Method::Pgas { particles } => {
            let out = pgas_step(&hmm, &reference, particles, rng)?;
            (out.skeleton, Some(out.diagnostics.ancestor_switch_rate))
        }
        Method::Ffbs => (ffbs_sample(&hmm, rng)?, None),
    };
    let unchanged = skeleton == reference;
    let next = AugmentedTrajectory::from_skeleton(&times, &skeleton, traj.t_max())?;
    Ok(StepOutcome {
        trajectory: strip_virtual(&next),
        grid: times,
        unchanged,
        ancestor_switch_rate: switch,
    })
}

/// Evidence about a network: point observations per node and, for fully
/// observed nodes, their whole path.
#[derive(Clone)]
pub struct CtbnEvidence {
    pub points: Vec<PointEvidence<usize>>,
    pub observed: Vec<Option<Trajectory<usize>>>,
}

impl CtbnEvidence {
    pub fn none(nodes: usize) -> Self {
        Self {
            points: vec![PointEvidence::default(); nodes],
            observed: vec![None; nodes],
        }
    }

    pub fn hidden_nodes(&self) -> Vec<usize> {
        (0..self.observed.len()).filter(|&w| self.observed[w].is_none()).collect()
    }

    pub fn log_likelihood(&self, path: &CtbnPath) -> f64 {
        self.points
            .iter()
            .enumerate()
            .map(|(w, p)| p.log_likelihood(path.node(w)))
            .sum()
    }
}

/// Summary of one Gibbs sweep.
#[derive(Debug, Clone, Default)]
pub struct SweepOutcome {
    pub grid_sizes: Vec<usize>,
    pub unchanged: usize,
}

/// Updates every hidden node once, each against the current paths of the
/// others.
pub fn ctbn_gibbs_sweep(
    model: &CtbnModel,
    path: &mut CtbnPath,
    evidence: &CtbnEvidence,
    config: &ChainConfig,
    rng: &mut dyn RngCore,
) -> Result<SweepOutcome> {
    let mut order = evidence.hidden_nodes();
    if config.node_order == NodeOrder::RandomPermutation {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
        order.shuffle(&mut shuffle_rng);
    }
    let mut outcome = SweepOutcome::default();
    for w in order {
        let cond = node_full_conditional(model, w, path)?;
        let spec = config.node_policy(w);
        let process = cond.process(|r| spec.resolve(r))?;
        let node_evidence = Evidence {
            points: evidence.points[w].clone(),
            children: cond.children,
        };
        let step = mjp_mcmc_step(path.node(w), &process, cond.initial, &node_evidence, config.method, rng)?;
        outcome.grid_sizes.push(step.grid.len());
        outcome.unchanged += step.unchanged as usize;
        *path = path.with_node(w, step.trajectory)?;
    }
    Ok(outcome)
}

/// Run bookkeeping written next to the statistics.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata {
    pub config: ChainConfig,
    pub replication: usize,
    pub initialization: String,
    pub recorded: usize,
    pub completed_iterations: usize,
    pub unchanged_skeleton_steps: usize,
    pub mean_grid_size: f64,
    /// Wall time per phase in milliseconds, when timing is enabled.
    pub phase_ms: Option<PhaseTimes>,
    /// 10%, 50% and 90% quantiles of the per-iteration wall time.
    pub iteration_ms_quantiles: Option<[f64; 3]>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PhaseTimes {
    pub initialization: f64,
    pub burn_in: f64,
    pub sampling: f64,
}

/// Result of a chain run; on failure the rows recorded so far are kept and
/// `error` is set.
pub struct ChainRun<P> {
    pub stats: Vec<StatRow>,
    pub metadata: RunMetadata,
    pub final_state: Option<P>,
    pub iteration_ms: Vec<f64>,
    pub error: Option<Error>,
}

/// The random stream of replication `r` under `seed`.
pub fn replication_rng(seed: u64, replication: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication as u64);
    rng
}

fn quantiles(xs: &[f64]) -> [f64; 3] {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        if v.is_empty() {
            0.0
        } else {
            v[((v.len() - 1) as f64 * p).round() as usize]
        }
    };
    [q(0.1), q(0.5), q(0.9)]
}

/// Draws an initial state of a finite node in proportion to `nu` times the
/// likelihood of observations at time 0.
fn initial_state_given_evidence(
    initial: &dyn InitialDist<usize>,
    points: &PointEvidence<usize>,
    states: usize,
    rng: &mut dyn RngCore,
) -> Result<usize> {
    let at_zero: Vec<_> = points.observations().iter().filter(|o| o.time == 0.0).collect();
    if at_zero.is_empty() {
        return Ok(initial.sample(rng));
    }
    let logs: Vec<f64> = (0..states)
        .map(|s| initial.log_prob(s) + at_zero.iter().map(|o| (o.loglik)(s)).sum::<f64>())
        .collect();
    let probs = crate::smc::normalize_log_weights(&logs)
        .ok_or_else(|| Error::InvalidEvidence("observations at time 0 have zero prior probability".into()))?;
    Ok(crate::smc::multinomial_resample(&probs, 1, rng)[0])
}

/// Piecewise-constant path through the most likely state of each
/// observation time, switching a fraction `offset` of the way between
/// consecutive observation times.
fn bridge_path(points: &PointEvidence<usize>, states: usize, t_max: f64, offset: f64, fallback: usize) -> Result<Trajectory<usize>> {
    let mut times: Vec<f64> = points.observations().iter().map(|o| o.time).collect();
    times.dedup();
    let best = |t: f64| -> usize {
        (0..states)
            .map(|s| {
                let l: f64 = points.observations().iter().filter(|o| o.time == t).map(|o| (o.loglik)(s)).sum();
                (s, l)
            })
            .fold((fallback, f64::NEG_INFINITY), |acc, (s, l)| if l > acc.1 { (s, l) } else { acc })
            .0
    };
    let Some(&first) = times.first() else {
        return Ok(Trajectory::constant(fallback, t_max));
    };
    let s0 = best(first);
    let mut current = s0;
    let mut jumps = Vec::new();
    for pair in times.windows(2) {
        let next = best(pair[1]);
        if next != current {
            jumps.push((pair[0] + (pair[1] - pair[0]) * offset, next));
            current = next;
        }
    }
    Trajectory::new(s0, t_max, jumps)
}

/// A starting path with positive posterior density: a prior draw with the
/// observed nodes substituted, redrawn up to 100 times, then a bridge that
/// jumps once per hidden node toward its later observations.
pub fn initial_ctbn_path(
    model: &CtbnModel,
    evidence: &CtbnEvidence,
    t_max: f64,
    rng: &mut dyn RngCore,
) -> Result<(CtbnPath, String)> {
    let m = model.num_nodes();
    let valid = |p: &CtbnPath| -> bool {
        evidence.log_likelihood(p) > f64::NEG_INFINITY
            && log_density_ctbn(model, p).map(|l| l > f64::NEG_INFINITY).unwrap_or(false)
    };
    for attempt in 0..100 {
        let mut x0 = Vec::with_capacity(m);
        for w in 0..m {
            x0.push(match &evidence.observed[w] {
                Some(t) => t.s0(),
                None => initial_state_given_evidence(model.node_initial(w), &evidence.points[w], model.sizes()[w], rng)?,
            });
        }
        let draw = simulate_ctbn_from(model, &x0, t_max, rng)?;
        let mut paths = draw.nodes().to_vec();
        for (w, obs) in evidence.observed.iter().enumerate() {
            if let Some(t) = obs {
                paths[w] = t.clone();
            }
        }
        if let Ok(path) = CtbnPath::new(paths) {
            if valid(&path) {
                let how = if attempt == 0 { "prior".to_string() } else { format!("prior after {} redraws", attempt) };
                return Ok((path, how));
            }
        }
    }
    let mut paths = Vec::with_capacity(m);
    for w in 0..m {
        if let Some(t) = &evidence.observed[w] {
            paths.push(t.clone());
            continue;
        }
        let offset = (w + 1) as f64 / (m + 1) as f64;
        paths.push(bridge_path(&evidence.points[w], model.sizes()[w], t_max, offset, 0)?);
    }
    let path = CtbnPath::new(paths)?;
    if !valid(&path) {
        return Err(Error::InvalidEvidence("no starting path with positive posterior density was found".into()));
    }
    Ok((path, "bridge".into()))
}

fn ctbn_rows(
    model: &CtbnModel,
    hidden: &[usize],
    path: &CtbnPath,
    replication: usize,
    iteration: usize,
    wall_ms: f64,
    out: &mut Vec<StatRow>,
) {
    for &w in hidden {
        let stats = sufficient_stats(path.node(w), model.sizes()[w]);
        for s in 0..model.sizes()[w] {
            out.push(StatRow {
                replication,
                iteration,
                node: w,
                state: s as i64,
                occupation_time: stats.occupation[s],
                jump_count: stats.jumps[s],
                wall_ms,
            });
        }
    }
}

/// Runs a network chain. `sink` sees every recorded sample with its
/// iteration index.
pub fn run_ctbn_chain(
    model: &CtbnModel,
    evidence: &CtbnEvidence,
    t_max: f64,
    config: &ChainConfig,
    replication: usize,
    timing: bool,
    sink: &mut dyn FnMut(usize, &CtbnPath),
) -> ChainRun<CtbnPath> {
    let mut metadata = RunMetadata {
        config: config.clone(),
        replication,
        initialization: String::new(),
        recorded: 0,
        completed_iterations: 0,
        unchanged_skeleton_steps: 0,
        mean_grid_size: 0.0,
        phase_ms: None,
        iteration_ms_quantiles: None,
        error: None,
    };
    let mut stats = Vec::new();
    let mut iteration_ms = Vec::with_capacity(config.iterations);
    let fail = |mut metadata: RunMetadata, stats, iteration_ms, state, e: Error| {
        metadata.error = Some(e.to_string());
        ChainRun {
            stats,
            metadata,
            final_state: state,
            iteration_ms,
            error: Some(e),
        }
    };
    let hidden = evidence.hidden_nodes();
    if let Err(e) = validate_ctbn_config(model, config, &hidden) {
        return fail(metadata, stats, iteration_ms, None, e);
    }
    let mut rng = replication_rng(config.seed, replication);
    let start = Instant::now();
    let (mut path, how) = match initial_ctbn_path(model, evidence, t_max, &mut rng) {
        Ok(p) => p,
        Err(e) => return fail(metadata, stats, iteration_ms, None, e),
    };
    metadata.initialization = how;
    let init_ms = start.elapsed().as_secs_f64() * 1e3;
    let mut burn_ms = 0.0;
    let mut sample_ms = 0.0;
    let mut grid_total = 0usize;
    let mut grid_count = 0usize;
    for it in 0..config.iterations {
        let t0 = Instant::now();
        let sweep = match ctbn_gibbs_sweep(model, &mut path, evidence, config, &mut rng) {
            Ok(s) => s,
            Err(e) => return fail(metadata, stats, iteration_ms, Some(path), e),
        };
        let ms = t0.elapsed().as_secs_f64() * 1e3;
        iteration_ms.push(ms);
        if it < config.burn_in {
            burn_ms += ms;
        } else {
            sample_ms += ms;
        }
        grid_total += sweep.grid_sizes.iter().sum::<usize>();
        grid_count += sweep.grid_sizes.len();
        metadata.unchanged_skeleton_steps += sweep.unchanged;
        metadata.completed_iterations = it + 1;
        if config.records(it) {
            ctbn_rows(model, &hidden, &path, replication, it, if timing { ms } else { 0.0 }, &mut stats);
            metadata.recorded += 1;
            sink(it, &path);
        }
    }
    metadata.mean_grid_size = if grid_count > 0 { grid_total as f64 / grid_count as f64 } else { 0.0 };
    if timing {
        metadata.phase_ms = Some(PhaseTimes {
            initialization: init_ms,
            burn_in: burn_ms,
            sampling: sample_ms,
        });
        metadata.iteration_ms_quantiles = Some(quantiles(&iteration_ms));
    }
    ChainRun {
        stats,
        metadata,
        final_state: Some(path),
        iteration_ms,
        error: None,
    }
}

/// Starting path of a single process: a prior draw, redrawn up to 100
/// times while it contradicts the evidence.
pub fn initial_mjp_path<R>(
    rates: &R,
    initial: &dyn InitialDist<R::State>,
    evidence: &Evidence<R::State>,
    t_max: f64,
    rng: &mut dyn RngCore,
) -> Result<(Trajectory<R::State>, String)>
where
    R: RateSpec + Sized,
{
    for attempt in 0..100 {
        let draw = simulate_gillespie(rates, initial, t_max, &mut &mut *rng)?;
        let ok = evidence.points.log_likelihood(&draw) > f64::NEG_INFINITY
            && evidence.children.iter().all(|c| {
                draw.s0().index().is_some() && {
                    let idx: Vec<(f64, usize)> = draw.jumps().iter().map(|&(t, s)| (t, s.index().unwrap())).collect();
                    Trajectory::new(draw.s0().index().unwrap(), t_max, idx)
                        .map(|p| c.log_likelihood(&p) > f64::NEG_INFINITY)
                        .unwrap_or(false)
                }
            });
        if ok {
            let how = if attempt == 0 { "prior".to_string() } else { format!("prior after {} redraws", attempt) };
            return Ok((draw, how));
        }
    }
    Err(Error::InvalidEvidence("no prior draw is compatible with the evidence".into()))
}

/// Runs a chain for a single jump process.
pub fn run_mjp_chain<R>(
    rates: &R,
    initial: &dyn InitialDist<R::State>,
    evidence: &Evidence<R::State>,
    t_max: f64,
    config: &ChainConfig,
    replication: usize,
    timing: bool,
    sink: &mut dyn FnMut(usize, &Trajectory<R::State>),
) -> ChainRun<Trajectory<R::State>>
where
    R: RateSpec + Sized,
{
    let mut metadata = RunMetadata {
        config: config.clone(),
        replication,
        initialization: String::new(),
        recorded: 0,
        completed_iterations: 0,
        unchanged_skeleton_steps: 0,
        mean_grid_size: 0.0,
        phase_ms: None,
        iteration_ms_quantiles: None,
        error: None,
    };
    let mut stats = Vec::new();
    let mut iteration_ms = Vec::with_capacity(config.iterations);
    let fail = |mut metadata: RunMetadata, stats, iteration_ms, state, e: Error| {
        metadata.error = Some(e.to_string());
        ChainRun {
            stats,
            metadata,
            final_state: state,
            iteration_ms,
            error: Some(e),
        }
    };
    let checks = config
        .validate()
        .and_then(|_| validate_ergodicity(rates, &config.policy))
        .and_then(|_| match config.method {
            Method::Ffbs if rates.states().is_none() => Err(Error::UnsupportedModel(
                "forward filtering needs a finite state space".into(),
            )),
            _ => Ok(()),
        });
    if let Err(e) = checks {
        return fail(metadata, stats, iteration_ms, None, e);
    }
    let policy = match config.policy.resolve(rates) {
        Ok(p) => p,
        Err(e) => return fail(metadata, stats, iteration_ms, None, e),
    };
    let process = PiecewiseProcess::homogeneous(rates, policy, t_max);
    let num_states = rates.states().map(|s| s.len());
    let mut rng = replication_rng(config.seed, replication);
    let start = Instant::now();
    let (mut path, how) = match initial_mjp_path(rates, initial, evidence, t_max, &mut rng) {
        Ok(p) => p,
        Err(e) => return fail(metadata, stats, iteration_ms, None, e),
    };
    metadata.initialization = how;
    let init_ms = start.elapsed().as_secs_f64() * 1e3;
    let (mut burn_ms, mut sample_ms, mut grid_total) = (0.0, 0.0, 0usize);
    for it in 0..config.iterations {
        let t0 = Instant::now();
        let step = match mjp_mcmc_step(&path, &process, initial, evidence, config.method, &mut rng) {
            Ok(s) => s,
            Err(e) => return fail(metadata, stats, iteration_ms, Some(path), e),
        };
        path = step.trajectory;
        let ms = t0.elapsed().as_secs_f64() * 1e3;
        iteration_ms.push(ms);
        if it < config.burn_in {
            burn_ms += ms;
        } else {
            sample_ms += ms;
        }
        grid_total += step.grid.len();
        metadata.unchanged_skeleton_steps += step.unchanged as usize;
        metadata.completed_iterations = it + 1;
        if config.records(it) {
            let wall_ms = if timing { ms } else { 0.0 };
            match num_states {
                Some(d) => {
                    let idx: Vec<(f64, usize)> =
                        path.jumps().iter().map(|&(t, s)| (t, s.index().expect("finite"))).collect();
                    let flat = Trajectory::new(path.s0().index().expect("finite"), t_max, idx)
                        .expect("same jump times");
                    let ss = sufficient_stats(&flat, d);
                    for s in 0..d {
                        stats.push(StatRow {
                            replication,
                            iteration: it,
                            node: 0,
                            state: s as i64,
                            occupation_time: ss.occupation[s],
                            jump_count: ss.jumps[s],
                            wall_ms,
                        });
                    }
                }
                None => stats.push(StatRow {
                    replication,
                    iteration: it,
                    node: 0,
                    state: -1,
                    occupation_time: t_max,
                    jump_count: path.num_jumps() as u64,
                    wall_ms,
                }),
            }
            metadata.recorded += 1;
            sink(it, &path);
        }
    }
    metadata.mean_grid_size = grid_total as f64 / config.iterations as f64;
    if timing {
        metadata.phase_ms = Some(PhaseTimes {
            initialization: init_ms,
            burn_in: burn_ms,
            sampling: sample_ms,
        });
        metadata.iteration_ms_quantiles = Some(quantiles(&iteration_ms));
    }
    ChainRun {
        stats,
        metadata,
        final_state: Some(path),
        iteration_ms,
        error: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::PointObservation;
    use crate::rates::DenseRates;
    use crate::simulate::{Categorical, PointMass};

    fn toy_x() -> DenseRates {
        DenseRates::new(vec![vec![0.0, 10.0], vec![10.0, 0.0]]).unwrap()
    }

    #[test]
    fn ergodicity_checks() {
        let q = toy_x();
        assert!(validate_ergodicity(&q, &PolicySpec::Uniformization { lambda: 20.0 }).is_ok());
        let err = validate_ergodicity(&q, &PolicySpec::Uniformization { lambda: 10.0 }).unwrap_err();
        assert!(err.to_string().contains("state 0"), "{err}");
        assert!(validate_ergodicity(&q, &PolicySpec::Homogeneous { theta: 0.0 }).is_err());
        assert!(validate_ergodicity(&q, &PolicySpec::Homogeneous { theta: 1e-3 }).is_ok());
        let lv = crate::lotka_volterra::LotkaVolterraRates {
            alpha: 5e-4,
            beta: 1e-4,
            delta: 1e-4,
            gamma: 5e-4,
        };
        assert!(matches!(
            validate_ergodicity(&lv, &PolicySpec::Uniformization { lambda: 1e9 }),
            Err(Error::Ergodicity(_))
        ));
    }

    #[test]
    fn recorded_sample_count() {
        let cfg = ChainConfig {
            method: Method::Ffbs,
            policy: PolicySpec::Uniformization { lambda: 20.0 },
            node_policies: None,
            iterations: 1000,
            burn_in: 100,
            thin: 1,
            seed: 0,
            node_order: NodeOrder::Fixed,
        };
        assert_eq!(cfg.recorded(), 900);
        assert_eq!((0..1000).filter(|&i| cfg.records(i)).count(), 900);
        let thin = ChainConfig { thin: 7, ..cfg };
        assert_eq!((0..1000).filter(|&i| thin.records(i)).count(), thin.recorded());
    }

    #[test]
    fn grid_is_conserved_and_endpoint_honoured() {
        let q = toy_x();
        let policy = AugmentationPolicy::Uniformization { lambda: 20.0 };
        let process = PiecewiseProcess::homogeneous(&q, policy, 1.0);
        let init = PointMass(0usize);
        let evidence = Evidence::points(PointEvidence::new(vec![PointObservation::exact(1.0, 1)]).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut traj = Trajectory::new(0usize, 1.0, vec![(0.5, 1)]).unwrap();
        let mut unchanged = 0;
        for i in 0..1000 {
            let method = if i % 2 == 0 { Method::Ffbs } else { Method::Pgas { particles: 3 } };
            let step = mjp_mcmc_step(&traj, &process, &init, &evidence, method, &mut rng).unwrap();
            for t in step.trajectory.jump_times() {
                assert!(step.grid.contains(&t));
            }
            assert_eq!(step.trajectory.final_state(), 1);
            unchanged += step.unchanged as usize;
            traj = step.trajectory;
        }
        assert!(unchanged > 0);
    }

    #[test]
    fn prior_is_recovered_without_evidence() {
        let q = DenseRates::new(vec![vec![0.0, 2.0, 1.0], vec![1.0, 0.0, 1.0], vec![3.0, 0.5, 0.0]]).unwrap();
        let init = Categorical::new(vec![0.2, 0.3, 0.5]).unwrap();
        let cfg = ChainConfig {
            method: Method::Ffbs,
            policy: PolicySpec::Uniformization { lambda: 4.0 },
            node_policies: None,
            iterations: 20000,
            burn_in: 100,
            thin: 1,
            seed: 3,
            node_order: NodeOrder::Fixed,
        };
        let run = run_mjp_chain(&q, &init, &Evidence::default(), 1.0, &cfg, 0, false, &mut |_, _| {});
        assert!(run.error.is_none());
        let occ0: Vec<f64> = run.stats.iter().filter(|r| r.state == 0).map(|r| r.occupation_time).collect();
        let chain_mean = occ0.iter().sum::<f64>() / occ0.len() as f64;
        let ess = crate::diagnostics::ess(&occ0).unwrap().ess;
        let chain_var = occ0.iter().map(|x| (x - chain_mean).powi(2)).sum::<f64>() / occ0.len() as f64;

        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 20000;
        let mc: Vec<f64> = (0..n)
            .map(|_| {
                let p = simulate_gillespie(&q, &init, 1.0, &mut rng).unwrap();
                sufficient_stats(&p, 3).occupation[0]
            })
            .collect();
        let mc_mean = mc.iter().sum::<f64>() / n as f64;
        let mc_var = mc.iter().map(|x| (x - mc_mean).powi(2)).sum::<f64>() / n as f64;
        let se = (chain_var / ess + mc_var / n as f64).sqrt();
        assert!((chain_mean - mc_mean).abs() < 3.0 * se, "{chain_mean} vs {mc_mean}, se {se}");
    }

    #[test]
    fn ffbs_on_unbounded_model_is_rejected() {
        let lv = crate::lotka_volterra::LotkaVolterraRates {
            alpha: 5e-4,
            beta: 1e-4,
            delta: 1e-4,
            gamma: 5e-4,
        };
        let cfg = ChainConfig {
            method: Method::Ffbs,
            policy: PolicySpec::Homogeneous { theta: 30.0 },
            node_policies: None,
            iterations: 10,
            burn_in: 1,
            thin: 1,
            seed: 3,
            node_order: NodeOrder::Fixed,
        };
        let init = PointMass(crate::lotka_volterra::Population::new(20, 5));
        let run = run_mjp_chain(&lv, &init, &Evidence::default(), 10.0, &cfg, 0, false, &mut |_, _| {});
        assert!(matches!(run.error, Some(Error::UnsupportedModel(_))));
    }
}

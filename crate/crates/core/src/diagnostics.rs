//! Sufficient statistics, effective sample size, posterior summaries and
//! brute-force oracles.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::observation::{PointEvidence, SkeletonHmm};
use crate::rates::{DenseRates, RateSpec, State};
use crate::smc::log_sum_exp;
use crate::trajectory::Trajectory;

/// Occupation time and number of jumps out of each state.
#[derive(Debug, Clone, PartialEq)]
pub struct SuffStats {
    pub occupation: Vec<f64>,
    pub jumps: Vec<u64>,
}

impl SuffStats {
    pub fn total_jumps(&self) -> u64 {
        self.jumps.iter().sum()
    }
}

pub fn sufficient_stats(traj: &Trajectory<usize>, num_states: usize) -> SuffStats {
    let mut occupation = vec![0.0; num_states];
    let mut jumps = vec![0u64; num_states];
    for (a, b, s) in traj.segments() {
        occupation[s] += b - a;
    }
    let mut prev = traj.s0();
    for &(_, s) in traj.jumps() {
        jumps[prev] += 1;
        prev = s;
    }
    SuffStats { occupation, jumps }
}

/// One line of the statistics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub replication: usize,
    pub iteration: usize,
    pub node: usize,
    /// State index, or -1 for a whole-path summary of an unbounded process.
    pub state: i64,
    pub occupation_time: f64,
    pub jump_count: u64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ess {
    pub ess: f64,
    /// The series had zero variance; `ess` is then the series length.
    pub constant: bool,
}

/// Effective sample size with Geyer's initial positive sequence estimator:
/// autocorrelations are summed in adjacent pairs until a pair sum is not
/// positive. The result lies in `(0, n]`.
pub fn ess(series: &[f64]) -> Result<Ess> {
    let n = series.len();
    if n < 10 {
        return Err(Error::Statistic(format!("series of length {n} is too short")));
    }
    if series.iter().any(|x| !x.is_finite()) {
        return Err(Error::Statistic("series has non-finite values".into()));
    }
    if series.iter().all(|x| *x == series[0]) {
        return Ok(Ess {
            ess: n as f64,
            constant: true,
        });
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let autocov = |lag: usize| -> f64 {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let gamma0 = autocov(0);
    if gamma0 <= 0.0 {
        return Ok(Ess {
            ess: n as f64,
            constant: true,
        });
    }
    let mut sum_pairs = 0.0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = autocov(2 * m) + autocov(2 * m + 1);
        if pair <= 0.0 {
            break;
        }
        sum_pairs += pair;
        m += 1;
    }
    let tau = (-gamma0 + 2.0 * sum_pairs) / gamma0;
    let ess = if tau > 0.0 { (n as f64 / tau).min(n as f64) } else { n as f64 };
    Ok(Ess { ess, constant: false })
}

/// Pointwise mean and standard deviation of a functional of the state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSummary {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

pub fn grid_summary<S: State>(samples: &[Trajectory<S>], grid: &[f64], value: impl Fn(S) -> f64) -> GridSummary {
    let n = samples.len().max(1) as f64;
    let mut mean = vec![0.0; grid.len()];
    let mut sq = vec![0.0; grid.len()];
    for traj in samples {
        for (i, &t) in grid.iter().enumerate() {
            let v = value(traj.state_at(t));
            mean[i] += v;
            sq[i] += v * v;
        }
    }
    let mean: Vec<f64> = mean.iter().map(|m| m / n).collect();
    let sd = sq
        .iter()
        .zip(&mean)
        .map(|(s, m)| (s / n - m * m).max(0.0).sqrt())
        .collect();
    GridSummary {
        times: grid.to_vec(),
        mean,
        sd,
    }
}

/// Empirical quantiles of a functional of the state at each grid time, one
/// row per requested probability.
pub fn grid_quantiles<S: State>(
    samples: &[Trajectory<S>],
    grid: &[f64],
    value: impl Fn(S) -> f64,
    probs: &[f64],
) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::with_capacity(grid.len()); probs.len()];
    let mut column = Vec::with_capacity(samples.len());
    for &t in grid {
        column.clear();
        column.extend(samples.iter().map(|s| value(s.state_at(t))));
        column.sort_by(f64::total_cmp);
        for (row, &p) in out.iter_mut().zip(probs) {
            row.push(quantile_sorted(&column, p));
        }
    }
    out
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

/// Default size guard for skeleton enumeration.
pub const ENUMERATION_LIMIT: usize = 1_000_000;

/// Exact conditional law of the skeleton by enumerating every sequence.
pub fn exact_skeleton_posterior<H: SkeletonHmm>(hmm: &H, limit: usize) -> Result<Vec<(Vec<H::State>, f64)>> {
    let mut states = hmm
        .state_space()
        .ok_or_else(|| Error::UnsupportedModel("enumeration needs a finite state space".into()))?;
    states.sort();
    let d = states.len();
    let n = hmm.steps();
    let size = (d as f64).powi(n as i32 + 1);
    if size > limit as f64 {
        return Err(Error::EnumerationTooLarge { size, limit });
    }
    let total = size as usize;
    let mut digits = vec![0usize; n + 1];
    let mut seqs = Vec::with_capacity(total);
    let mut logs = Vec::with_capacity(total);
    for _ in 0..total {
        let seq: Vec<H::State> = digits.iter().map(|&i| states[i]).collect();
        let mut lp = hmm.log_initial(seq[0]) + hmm.log_potential(0, seq[0]);
        for k in 1..=n {
            if lp == f64::NEG_INFINITY {
                break;
            }
            lp += hmm.log_transition(k, seq[k - 1], seq[k]) + hmm.log_potential(k, seq[k]);
        }
        seqs.push(seq);
        logs.push(lp);
        for digit in digits.iter_mut() {
            *digit += 1;
            if *digit < d {
                break;
            }
            *digit = 0;
        }
    }
    let z = log_sum_exp(&logs);
    if !z.is_finite() {
        return Err(Error::DegeneratePotential { step: n });
    }
    Ok(seqs.into_iter().zip(logs).map(|(s, l)| (s, (l - z).exp())).collect())
}

/// Posterior expected occupation time per state from an Euler-discretized
/// chain with transition matrix `I + hQ` and forward–backward smoothing.
///
/// The step is adjusted so that it divides `t_max`; observations act on the
/// nearest grid point.
pub fn discretized_smoother(
    q: &DenseRates,
    initial: &[f64],
    evidence: &PointEvidence<usize>,
    t_max: f64,
    h: f64,
) -> Result<Vec<f64>> {
    let d = q.num_states();
    if initial.len() != d {
        return Err(Error::InvalidModel("initial law has the wrong size".into()));
    }
    let steps = (t_max / h).round().max(1.0) as usize;
    let h = t_max / steps as f64;
    let mut a = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            a[i][j] = if i == j { 1.0 - h * q.exit_rate(i) } else { h * q.rate(i, j) };
            if a[i][j] < 0.0 {
                return Err(Error::UnstableStep {
                    h,
                    reason: format!("entry ({i}, {j}) is {}", a[i][j]),
                });
            }
        }
    }
    let mut lik = vec![vec![1.0; d]; steps + 1];
    for o in evidence.observations() {
        if !(0.0..=t_max).contains(&o.time) {
            return Err(Error::ObservationOutOfRange { time: o.time, t_max });
        }
        let j = (o.time / h).round() as usize;
        for s in 0..d {
            lik[j.min(steps)][s] *= (o.loglik)(s).exp();
        }
    }
    let normalize = |v: &mut Vec<f64>| -> Result<()> {
        let z: f64 = v.iter().sum();
        if !(z > 0.0) {
            return Err(Error::DegeneratePotential { step: 0 });
        }
        v.iter_mut().for_each(|x| *x /= z);
        Ok(())
    };
    let mut alpha = vec![vec![0.0; d]; steps + 1];
    for s in 0..d {
        alpha[0][s] = initial[s] * lik[0][s];
    }
    normalize(&mut alpha[0])?;
    for j in 1..=steps {
        for t in 0..d {
            let mut acc = 0.0;
            for s in 0..d {
                acc += alpha[j - 1][s] * a[s][t];
            }
            alpha[j][t] = acc * lik[j][t];
        }
        normalize(&mut alpha[j])?;
    }
    let mut beta = vec![1.0; d];
    let mut occupation = vec![0.0; d];
    for j in (0..=steps).rev() {
        if j < steps {
            let mut next = vec![0.0; d];
            for s in 0..d {
                for t in 0..d {
                    next[s] += a[s][t] * lik[j + 1][t] * beta[t];
                }
            }
            normalize(&mut next)?;
            beta = next;
            let mut gamma: Vec<f64> = (0..d).map(|s| alpha[j][s] * beta[s]).collect();
            normalize(&mut gamma)?;
            for s in 0..d {
                occupation[s] += gamma[s] * h;
            }
        }
    }
    Ok(occupation)
}

/// Result of a hypothesis test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub dof: f64,
    pub p_value: f64,
}

fn pool_small_bins(observed: &[f64], expected: &[f64], min_expected: f64) -> (Vec<f64>, Vec<f64>) {
    let mut order: Vec<usize> = (0..expected.len()).collect();
    order.sort_by(|&a, &b| expected[b].total_cmp(&expected[a]));
    let mut obs = Vec::new();
    let mut exp = Vec::new();
    let (mut po, mut pe) = (0.0, 0.0);
    for i in order {
        if expected[i] >= min_expected {
            obs.push(observed[i]);
            exp.push(expected[i]);
        } else {
            po += observed[i];
            pe += expected[i];
        }
    }
    if pe > 0.0 || po > 0.0 {
        if pe >= min_expected || exp.is_empty() {
            obs.push(po);
            exp.push(pe);
        } else {
            let last = exp.len() - 1;
            obs[last] += po;
            exp[last] += pe;
        }
    }
    (obs, exp)
}

/// Pearson chi-square goodness of fit of counts against probabilities.
/// Bins with expected count below 5 are pooled.
pub fn chi_square_gof(counts: &[u64], probs: &[f64]) -> Result<TestResult> {
    if counts.len() != probs.len() {
        return Err(Error::Statistic("counts and probabilities differ in length".into()));
    }
    let n: f64 = counts.iter().map(|&c| c as f64).sum();
    let total_p: f64 = probs.iter().sum();
    let observed: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let expected: Vec<f64> = probs.iter().map(|p| n * p / total_p).collect();
    for (o, e) in observed.iter().zip(&expected) {
        if *e == 0.0 && *o > 0.0 {
            return Ok(TestResult {
                statistic: f64::INFINITY,
                dof: 1.0,
                p_value: 0.0,
            });
        }
    }
    let (obs, exp) = pool_small_bins(&observed, &expected, 5.0);
    if obs.len() < 2 {
        return Err(Error::Statistic("fewer than two usable bins".into()));
    }
    let statistic: f64 = obs.iter().zip(&exp).map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = (obs.len() - 1) as f64;
    Ok(TestResult {
        statistic,
        dof,
        p_value: chi_square_sf(statistic, dof),
    })
}

/// Chi-square test that two count vectors come from the same distribution.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> Result<TestResult> {
    if a.len() != b.len() {
        return Err(Error::Statistic("count vectors differ in length".into()));
    }
    let na: f64 = a.iter().map(|&c| c as f64).sum();
    let nb: f64 = b.iter().map(|&c| c as f64).sum();
    let n = na + nb;
    let mut statistic = 0.0;
    let mut bins = 0;
    let (mut pool_a, mut pool_b) = (0.0, 0.0);
    let mut add = |oa: f64, ob: f64| {
        let tot = oa + ob;
        let ea = tot * na / n;
        let eb = tot * nb / n;
        statistic += (oa - ea).powi(2) / ea + (ob - eb).powi(2) / eb;
        bins += 1;
    };
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        let tot = x + y;
        if tot * na.min(nb) / n >= 5.0 {
            add(x, y);
        } else {
            pool_a += x;
            pool_b += y;
        }
    }
    if pool_a + pool_b > 0.0 {
        add(pool_a, pool_b);
    }
    if bins < 2 {
        return Err(Error::Statistic("fewer than two usable bins".into()));
    }
    let dof = (bins - 1) as f64;
    Ok(TestResult {
        statistic,
        dof,
        p_value: chi_square_sf(statistic, dof),
    })
}

fn chi_square_sf(x: f64, dof: f64) -> f64 {
    if !x.is_finite() {
        return 0.0;
    }
    ChiSquared::new(dof).map(|d| d.sf(x)).unwrap_or(f64::NAN)
}

/// Survival function of the Kolmogorov distribution.
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as i64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_p_value(d: f64, n_eff: f64) -> f64 {
    let s = n_eff.sqrt();
    kolmogorov_sf((s + 0.12 + 0.11 / s) * d)
}

/// One-sample Kolmogorov–Smirnov test against a continuous c.d.f.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<TestResult> {
    if samples.is_empty() {
        return Err(Error::Statistic("empty sample".into()));
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Ok(TestResult {
        statistic: d,
        dof: n,
        p_value: ks_p_value(d, n),
    })
}

/// Two-sample Kolmogorov–Smirnov test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Statistic("empty sample".into()));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let t = x[i].min(y[j]);
        while i < x.len() && x[i] <= t {
            i += 1;
        }
        while j < y.len() && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok(TestResult {
        statistic: d,
        dof: n * m / (n + m),
        p_value: ks_p_value(d, n * m / (n + m)),
    })
}

/// Across-replication standard deviation of the running posterior-mean
/// estimate after the first `k` recorded values, for each budget `k`.
pub fn running_mean_sd(replications: &[Vec<f64>], budgets: &[usize]) -> Vec<f64> {
    budgets
        .iter()
        .map(|&k| {
            let means: Vec<f64> = replications
                .iter()
                .map(|r| {
                    let k = k.min(r.len()).max(1);
                    r[..k].iter().sum::<f64>() / k as f64
                })
                .collect();
            let n = means.len() as f64;
            let mu = means.iter().sum::<f64>() / n;
            (means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
        })
        .collect()
}

/// Replication-level summary of one posterior statistic.
#[derive(Debug, Clone, Serialize)]
pub struct StatisticSummary {
    /// Mean over all recorded samples of all replications.
    pub mean: f64,
    /// Posterior-mean estimate of each replication.
    pub replication_means: Vec<f64>,
    /// Standard deviation of the replication means; `None` with a single
    /// replication.
    pub replication_sd: Option<f64>,
    /// `replication_sd / sqrt(replications)`.
    pub standard_error: Option<f64>,
    /// `(budget, sd of the running means after budget samples)`.
    pub running_sd: Vec<(usize, f64)>,
}

/// Per-replication series of every statistic in a table, keyed by
/// `node<w>/state<s>/occupation_time` and `node<w>/jumps` (total jumps of
/// the node), each ordered by iteration.
pub fn statistic_series(rows: &[StatRow]) -> BTreeMap<String, BTreeMap<usize, Vec<f64>>> {
    let mut by_key: BTreeMap<String, BTreeMap<usize, BTreeMap<usize, f64>>> = BTreeMap::new();
    for r in rows {
        if r.state >= 0 {
            *by_key
                .entry(format!("node{}/state{}/occupation_time", r.node, r.state))
                .or_default()
                .entry(r.replication)
                .or_default()
                .entry(r.iteration)
                .or_default() += r.occupation_time;
        }
        *by_key
            .entry(format!("node{}/jumps", r.node))
            .or_default()
            .entry(r.replication)
            .or_default()
            .entry(r.iteration)
            .or_default() += r.jump_count as f64;
    }
    by_key
        .into_iter()
        .map(|(k, reps)| (k, reps.into_iter().map(|(r, it)| (r, it.into_values().collect())).collect()))
        .collect()
}

/// Posterior means and their spread across replications for every
/// statistic of [`statistic_series`].
pub fn replication_statistics(rows: &[StatRow], budgets: &[usize]) -> BTreeMap<String, StatisticSummary> {
    statistic_series(rows)
        .into_iter()
        .map(|(key, reps)| {
            let series: Vec<Vec<f64>> = reps.into_values().collect();
            let means: Vec<f64> = series.iter().map(|s| s.iter().sum::<f64>() / s.len() as f64).collect();
            let total: usize = series.iter().map(Vec::len).sum();
            let mean = series.iter().flatten().sum::<f64>() / total as f64;
            let r = means.len();
            let sd = (r > 1).then(|| {
                let mu = means.iter().sum::<f64>() / r as f64;
                (means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / (r - 1) as f64).sqrt()
            });
            let running = if r > 1 {
                budgets.iter().copied().zip(running_mean_sd(&series, budgets)).collect()
            } else {
                Vec::new()
            };
            (
                key,
                StatisticSummary {
                    mean,
                    replication_means: means,
                    replication_sd: sd,
                    standard_error: sd.map(|s| s / (r as f64).sqrt()),
                    running_sd: running,
                },
            )
        })
        .collect()
}

/// ESS of every statistic series in a table plus their median.
#[derive(Debug, Clone, Serialize)]
pub struct EssSummary {
    /// Keyed by `rep<r>/node<w>/state<s>/<statistic>`.
    pub ess: BTreeMap<String, f64>,
    pub constant: Vec<String>,
    pub median_ess: f64,
    /// Milliseconds needed for an ESS of 100, when timings were recorded.
    pub time_to_ess_100_ms: Option<f64>,
}

/// Groups rows by replication, node and state, and computes the ESS of the
/// occupation times and jump counts along the iteration order. For each
/// replication the median is taken over all its series; the reported median
/// is the median of those.
pub fn summarize_rows(rows: &[StatRow]) -> Result<EssSummary> {
    let mut series: BTreeMap<(usize, usize, i64), (Vec<(usize, f64)>, Vec<(usize, f64)>, f64)> = BTreeMap::new();
    for r in rows {
        let e = series.entry((r.replication, r.node, r.state)).or_default();
        e.0.push((r.iteration, r.occupation_time));
        e.1.push((r.iteration, r.jump_count as f64));
        e.2 += r.wall_ms;
    }
    let mut ess_map = BTreeMap::new();
    let mut constant = Vec::new();
    let mut per_rep: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut wall: BTreeMap<usize, f64> = BTreeMap::new();
    for ((rep, node, state), (mut occ, mut jumps, ms)) in series {
        occ.sort_by_key(|p| p.0);
        jumps.sort_by_key(|p| p.0);
        wall.insert(rep, ms);
        for (name, data) in [("occupation_time", occ), ("jump_count", jumps)] {
            // whole-path rows of unbounded processes carry no occupation information
            if state < 0 && name == "occupation_time" {
                continue;
            }
            let values: Vec<f64> = data.iter().map(|p| p.1).collect();
            let e = ess(&values)?;
            let key = format!("rep{rep}/node{node}/state{state}/{name}");
            if e.constant {
                constant.push(key.clone());
            }
            per_rep.entry(rep).or_default().push(e.ess);
            ess_map.insert(key, e.ess);
        }
    }
    if per_rep.is_empty() {
        return Err(Error::Statistic("no statistics rows".into()));
    }
    let medians: Vec<f64> = per_rep.values().map(|v| median(v)).collect();
    let median_ess = median(&medians);
    let total_ms: f64 = wall.values().sum::<f64>() / wall.len() as f64;
    let time_to_ess_100_ms = if total_ms > 0.0 && median_ess > 0.0 {
        Some(total_ms * 100.0 / median_ess)
    } else {
        None
    };
    Ok(EssSummary {
        ess: ess_map,
        constant,
        median_ess,
        time_to_ess_100_ms,
    })
}

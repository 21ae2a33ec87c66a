//! Particle methods over a skeleton hidden Markov model: bootstrap SMC,
//! particle Gibbs with ancestor sampling, and exact forward filtering /
//! backward sampling for finite state spaces.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::observation::SkeletonHmm;
use crate::simulate::InitialDist;

/// `log Σ exp(x_i)`, or `-inf` for an empty or all-`-inf` slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Normalized probabilities from log-weights, or `None` if all are `-inf`.
pub fn normalize_log_weights(log_weights: &[f64]) -> Option<Vec<f64>> {
    let m = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return None;
    }
    let mut w: Vec<f64> = log_weights.iter().map(|x| (x - m).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    Some(w)
}

/// Index drawn from unnormalized nonnegative weights.
fn draw_index(weights: &[f64], total: f64, rng: &mut dyn RngCore) -> usize {
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // rounding: fall back to the last index with positive weight
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

/// Draws `count` ancestor indices from normalized probabilities.
pub fn multinomial_resample(probs: &[f64], count: usize, rng: &mut dyn RngCore) -> Vec<usize> {
    let mut cumulative = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for p in probs {
        acc += p;
        cumulative.push(acc);
    }
    let last = probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    (0..count)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            cumulative.partition_point(|&c| c <= u).min(last)
        })
        .collect()
}

/// Particles, log-weights and ancestry for every step.
#[derive(Debug, Clone)]
pub struct ParticleSystem<S> {
    pub particles: Vec<Vec<S>>,
    pub log_weights: Vec<Vec<f64>>,
    /// `ancestors[k][i]` is the index at step `k` of the parent of particle
    /// `i` at step `k + 1`.
    pub ancestors: Vec<Vec<u32>>,
}

impl<S: Copy> ParticleSystem<S> {
    pub fn num_particles(&self) -> usize {
        self.particles.first().map(Vec::len).unwrap_or(0)
    }

    /// Skeleton of particle `i` at the final step, traced back through its
    /// ancestors.
    pub fn trace(&self, mut i: usize) -> Vec<S> {
        let n = self.particles.len();
        let mut out = Vec::with_capacity(n);
        for k in (0..n).rev() {
            out.push(self.particles[k][i]);
            if k > 0 {
                i = self.ancestors[k - 1][i] as usize;
            }
        }
        out.reverse();
        out
    }
}

/// Bootstrap particle filter with multinomial resampling at every step.
///
/// Returns the particle system and the estimate of the log marginal
/// likelihood `Σ_k log mean_i w_k^i`.
pub fn smc_run<H: SkeletonHmm>(
    hmm: &H,
    num_particles: usize,
    rng: &mut dyn RngCore,
) -> Result<(ParticleSystem<H::State>, f64)> {
    if num_particles == 0 {
        return Err(Error::InvalidConfig("at least one particle is needed".into()));
    }
    let n = hmm.steps();
    let mut particles = Vec::with_capacity(n + 1);
    let mut log_weights = Vec::with_capacity(n + 1);
    let mut ancestors = Vec::with_capacity(n);
    let log_n = (num_particles as f64).ln();

    let first: Vec<H::State> = (0..num_particles).map(|_| hmm.sample_initial(rng)).collect();
    let lw: Vec<f64> = first.iter().map(|&s| hmm.log_potential(0, s)).collect();
    let mut log_z = log_sum_exp(&lw) - log_n;
    particles.push(first);
    log_weights.push(lw);
    for k in 1..=n {
        let probs = normalize_log_weights(&log_weights[k - 1]).ok_or(Error::WeightCollapse { step: k - 1 })?;
        let anc = multinomial_resample(&probs, num_particles, rng);
        let prev = &particles[k - 1];
        let next: Vec<H::State> = anc
            .iter()
            .map(|&a| hmm.sample_transition(k, prev[a], rng))
            .collect();
        let lw: Vec<f64> = next.iter().map(|&s| hmm.log_potential(k, s)).collect();
        log_z += log_sum_exp(&lw) - log_n;
        ancestors.push(anc.into_iter().map(|a| a as u32).collect());
        particles.push(next);
        log_weights.push(lw);
    }
    if log_z == f64::NEG_INFINITY {
        return Err(Error::WeightCollapse { step: n });
    }
    Ok((
        ParticleSystem {
            particles,
            log_weights,
            ancestors,
        },
        log_z,
    ))
}

/// Per-sweep summaries of a particle Gibbs step.
#[derive(Debug, Clone, Default)]
pub struct PgasDiagnostics {
    /// Variance of `N * w_k^i` over particles at each step.
    pub weight_variance: Vec<f64>,
    /// Fraction of steps at which the reference took another ancestor.
    pub ancestor_switch_rate: f64,
}

/// Output of one conditional SMC sweep.
#[derive(Debug, Clone)]
pub struct PgasOutput<S> {
    pub skeleton: Vec<S>,
    pub diagnostics: PgasDiagnostics,
}

fn weight_variance(log_weights: &[f64]) -> f64 {
    match normalize_log_weights(log_weights) {
        Some(p) => {
            let n = p.len() as f64;
            p.iter().map(|w| (n * w - 1.0).powi(2)).sum::<f64>() / n
        }
        None => f64::NAN,
    }
}

/// One conditional SMC sweep with ancestor sampling.
///
/// The reference skeleton occupies the last slot. At each step the other
/// `N - 1` particles pick ancestors in proportion to the previous weights,
/// the reference picks its ancestor with probability proportional to
/// `w_{k-1}^i P(ξ_{k-1}^i, s_k)`, and the returned skeleton is traced back
/// from an index drawn in proportion to the final weights.
pub fn pgas_step<H: SkeletonHmm>(
    hmm: &H,
    reference: &[H::State],
    num_particles: usize,
    rng: &mut dyn RngCore,
) -> Result<PgasOutput<H::State>> {
    pgas_step_with_proposal(hmm, reference, num_particles, None, rng)
}

/// As [`pgas_step`], drawing initial particles from `proposal` and
/// correcting the first weights by `nu / proposal`.
pub fn pgas_step_with_proposal<H: SkeletonHmm>(
    hmm: &H,
    reference: &[H::State],
    num_particles: usize,
    proposal: Option<&dyn InitialDist<H::State>>,
    rng: &mut dyn RngCore,
) -> Result<PgasOutput<H::State>> {
    let n = hmm.steps();
    if num_particles < 2 {
        return Err(Error::InvalidConfig("particle Gibbs needs at least 2 particles".into()));
    }
    if reference.len() != n + 1 {
        return Err(Error::InvalidReference(format!(
            "reference of length {} for {} steps",
            reference.len(),
            n
        )));
    }
    let slot = num_particles - 1;
    let mut particles: Vec<Vec<H::State>> = Vec::with_capacity(n + 1);
    let mut ancestors: Vec<Vec<u32>> = Vec::with_capacity(n);
    let mut variance = Vec::with_capacity(n + 1);
    let mut switches = 0usize;

    let mut first = Vec::with_capacity(num_particles);
    for _ in 0..slot {
        first.push(match proposal {
            Some(p) => p.sample(rng),
            None => hmm.sample_initial(rng),
        });
    }
    first.push(reference[0]);
    let mut lw: Vec<f64> = first
        .iter()
        .map(|&s| {
            let g = hmm.log_potential(0, s);
            match proposal {
                Some(p) => g + hmm.log_initial(s) - p.log_prob(s),
                None => g,
            }
        })
        .collect();
    if lw[slot] == f64::NEG_INFINITY {
        return Err(Error::InvalidReference("reference has zero weight at step 0".into()));
    }
    variance.push(weight_variance(&lw));
    particles.push(first);

    let mut scratch = vec![0.0; num_particles];
    for k in 1..=n {
        let prev = &particles[k - 1];
        let probs = normalize_log_weights(&lw).ok_or(Error::WeightCollapse { step: k - 1 })?;
        let mut anc = multinomial_resample(&probs, slot, rng);

        let target = reference[k];
        let mut total = 0.0;
        for i in 0..num_particles {
            let w = if probs[i] > 0.0 {
                probs[i] * hmm.log_transition(k, prev[i], target).exp()
            } else {
                0.0
            };
            scratch[i] = w;
            total += w;
        }
        let ref_anc = if total > 0.0 && total.is_finite() {
            draw_index(&scratch, total, rng)
        } else {
            // transition probabilities underflowed: redo in log space
            let logs: Vec<f64> = (0..num_particles)
                .map(|i| lw[i] + hmm.log_transition(k, prev[i], target))
                .collect();
            let p = normalize_log_weights(&logs).ok_or_else(|| {
                Error::InvalidReference(format!("reference unreachable at step {k}"))
            })?;
            draw_index(&p, 1.0, rng)
        };
        if ref_anc != slot {
            switches += 1;
        }
        anc.push(ref_anc);

        let mut next = Vec::with_capacity(num_particles);
        for &a in &anc[..slot] {
            next.push(hmm.sample_transition(k, prev[a], rng));
        }
        next.push(target);
        for (w, &s) in lw.iter_mut().zip(&next) {
            *w = hmm.log_potential(k, s);
        }
        if lw[slot] == f64::NEG_INFINITY {
            return Err(Error::InvalidReference(format!("reference has zero weight at step {k}")));
        }
        variance.push(weight_variance(&lw));
        ancestors.push(anc.into_iter().map(|a| a as u32).collect());
        particles.push(next);
    }
    let probs = normalize_log_weights(&lw).ok_or(Error::WeightCollapse { step: n })?;
    let pick = draw_index(&probs, 1.0, rng);
    let system = ParticleSystem {
        particles,
        log_weights: Vec::new(),
        ancestors,
    };
    Ok(PgasOutput {
        skeleton: system.trace(pick),
        diagnostics: PgasDiagnostics {
            weight_variance: variance,
            ancestor_switch_rate: if n == 0 { 0.0 } else { switches as f64 / n as f64 },
        },
    })
}

/// Normalized filtering distributions `p(s_k | g_0..g_k)` over an enumerated
/// finite state space.
#[derive(Debug, Clone)]
pub struct ForwardFilter<S> {
    pub states: Vec<S>,
    pub filters: Vec<Vec<f64>>,
    /// `log Σ_S nu(s_0) g_0(s_0) ∏ P(s_{k-1}, s_k) g_k(s_k)`.
    pub log_evidence: f64,
}

/// Forward recursion of the exact filter. Fails on unbounded spaces and on
/// steps where no state has positive mass.
pub fn forward_filter<H: SkeletonHmm>(hmm: &H) -> Result<ForwardFilter<H::State>> {
    let mut states = hmm
        .state_space()
        .ok_or_else(|| Error::UnsupportedModel("forward filtering needs a finite state space".into()))?;
    states.sort();
    let d = states.len();
    let pos = |s: &H::State| states.binary_search(s).ok();
    let n = hmm.steps();
    let mut filters = Vec::with_capacity(n + 1);
    let mut log_evidence = 0.0;

    let mut logs: Vec<f64> = states
        .iter()
        .map(|&s| hmm.log_initial(s) + hmm.log_potential(0, s))
        .collect();
    let mut pred = vec![0.0; d];
    for k in 0..=n {
        if k > 0 {
            let prev: &Vec<f64> = filters.last().expect("previous filter");
            pred.iter_mut().for_each(|x| *x = 0.0);
            for (i, &from) in states.iter().enumerate() {
                if prev[i] == 0.0 {
                    continue;
                }
                for (to, p) in hmm.transition_row(k, from) {
                    let j = pos(&to).ok_or_else(|| {
                        Error::InvalidModel(format!("transition to {to:?} outside the state space"))
                    })?;
                    pred[j] += prev[i] * p;
                }
            }
            for (j, &s) in states.iter().enumerate() {
                logs[j] = if pred[j] > 0.0 {
                    pred[j].ln() + hmm.log_potential(k, s)
                } else {
                    f64::NEG_INFINITY
                };
            }
        }
        let lse = log_sum_exp(&logs);
        if !lse.is_finite() {
            return Err(Error::DegeneratePotential { step: k });
        }
        log_evidence += lse;
        filters.push(logs.iter().map(|x| (x - lse).exp()).collect());
    }
    Ok(ForwardFilter {
        states,
        filters,
        log_evidence,
    })
}

/// Exact draw of the skeleton by forward filtering and backward sampling.
pub fn ffbs_sample<H: SkeletonHmm>(hmm: &H, rng: &mut dyn RngCore) -> Result<Vec<H::State>> {
    let ff = forward_filter(hmm)?;
    Ok(backward_sample(hmm, &ff, rng))
}

/// Backward pass given a completed forward filter.
pub fn backward_sample<H: SkeletonHmm>(hmm: &H, ff: &ForwardFilter<H::State>, rng: &mut dyn RngCore) -> Vec<H::State> {
    let n = hmm.steps();
    let d = ff.states.len();
    let mut out = Vec::with_capacity(n + 1);
    let last = &ff.filters[n];
    let mut idx = draw_index(last, last.iter().sum(), rng);
    out.push(ff.states[idx]);
    let mut w = vec![0.0; d];
    for k in (0..n).rev() {
        let next = ff.states[idx];
        let filt = &ff.filters[k];
        let mut total = 0.0;
        for i in 0..d {
            w[i] = if filt[i] > 0.0 {
                filt[i] * hmm.log_transition(k + 1, ff.states[i], next).exp()
            } else {
                0.0
            };
            total += w[i];
        }
        idx = draw_index(&w, total, rng);
        out.push(ff.states[idx]);
    }
    out.reverse();
    out
}

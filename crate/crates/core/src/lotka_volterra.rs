//! Stochastic Lotka–Volterra predator–prey process on the unbounded lattice
//! `{0, 1, ...}²`.

use std::fmt;

use rand::{Rng, RngCore};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::rates::{RateSpec, State};

/// Prey and predator counts.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Population {
    pub prey: u32,
    pub predator: u32,
}

impl Population {
    pub fn new(prey: u32, predator: u32) -> Self {
        Self { prey, predator }
    }
}

impl fmt::Debug for Population {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.prey, self.predator)
    }
}

impl Serialize for Population {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.prey, self.predator].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Population {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [prey, predator] = <[u32; 2]>::deserialize(d)?;
        Ok(Self { prey, predator })
    }
}

impl State for Population {
    fn index(&self) -> Option<usize> {
        None
    }
}

/// Birth of prey at `alpha x`, predation at `beta x y` (prey death) and
/// `delta x y` (predator birth), predator death at `gamma y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LotkaVolterraRates {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub gamma: f64,
}

impl LotkaVolterraRates {
    fn moves(&self, s: Population) -> [(Population, f64); 4] {
        let x = s.prey as f64;
        let y = s.predator as f64;
        [
            (Population::new(s.prey.saturating_add(1), s.predator), self.alpha * x),
            (Population::new(s.prey.saturating_sub(1), s.predator), self.beta * x * y),
            (Population::new(s.prey, s.predator.saturating_add(1)), self.delta * x * y),
            (Population::new(s.prey, s.predator.saturating_sub(1)), self.gamma * y),
        ]
    }
}

impl RateSpec for LotkaVolterraRates {
    type State = Population;

    fn rate(&self, from: Population, to: Population) -> f64 {
        if from == to {
            return 0.0;
        }
        self.moves(from)
            .iter()
            .find(|(s, r)| *s == to && *r > 0.0)
            .map(|(_, r)| *r)
            .unwrap_or(0.0)
    }

    fn exit_rate(&self, s: Population) -> f64 {
        let x = s.prey as f64;
        let y = s.predator as f64;
        self.alpha * x + (self.beta + self.delta) * x * y + self.gamma * y
    }

    fn targets(&self, s: Population) -> Vec<(Population, f64)> {
        self.moves(s).into_iter().filter(|(_, r)| *r > 0.0).collect()
    }

    fn sample_target(&self, s: Population, rng: &mut dyn RngCore) -> Option<Population> {
        let moves = self.moves(s);
        let total: f64 = moves.iter().map(|(_, r)| r).sum();
        if total <= 0.0 {
            return None;
        }
        let mut u = rng.random::<f64>() * total;
        for (t, r) in moves {
            if r > 0.0 && u < r {
                return Some(t);
            }
            u -= r;
        }
        moves.iter().rev().find(|(_, r)| *r > 0.0).map(|(t, _)| *t)
    }
}

/// `-log(2^d + 1e-6)` for a nonnegative integer distance `d`, stable for
/// large `d`.
pub fn log_two_pow_penalty(d: u32) -> f64 {
    let d = d as f64;
    let ln2 = std::f64::consts::LN_2;
    // log(2^d + c) = d ln 2 + log1p(c 2^-d)
    -(d * ln2 + (1e-6 * (-d * ln2).exp()).ln_1p())
}

/// Log-likelihood of an observed pair under the noise model
/// `p(y | x) ∝ (2^{|x - y|} + 1e-6)^{-1}`, applied to each population.
pub fn observation_loglik(state: Population, observed: [u32; 2]) -> f64 {
    log_two_pow_penalty(state.prey.abs_diff(observed[0]))
        + log_two_pow_penalty(state.predator.abs_diff(observed[1]))
}

/// Draws a noisy observation of one population: the offset `d` has weight
/// `(2^|d| + 1e-6)^{-1}`, truncated so the observation stays nonnegative.
pub fn sample_observation(value: u32, rng: &mut dyn RngCore) -> u32 {
    let lo = -(value as i64).min(60);
    let weights: Vec<(i64, f64)> = (lo..=60).map(|d| (d, log_two_pow_penalty(d.unsigned_abs() as u32).exp())).collect();
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    let mut u = rng.random::<f64>() * total;
    for (d, w) in &weights {
        if u < *w {
            return (value as i64 + d) as u32;
        }
        u -= w;
    }
    value
}

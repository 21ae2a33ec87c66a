//! Piecewise-constant sample paths on `[0, t_max]`.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::rates::State;

/// A path of a jump process: the initial state and the true jumps.
///
/// Jump times are strictly increasing inside `(0, t_max)` and consecutive
/// states differ.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    s0: S,
    t_max: f64,
    jumps: Vec<(f64, S)>,
}

fn check_times<S>(t_max: f64, points: &[(f64, S)]) -> Result<()> {
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(Error::InvalidTrajectory(format!("horizon {t_max}")));
    }
    let mut prev = 0.0;
    for (k, (t, _)) in points.iter().enumerate() {
        if !(*t > prev && *t < t_max) {
            return Err(Error::InvalidTrajectory(format!(
                "time {t} at position {k} is not inside ({prev}, {t_max})"
            )));
        }
        prev = *t;
    }
    Ok(())
}

impl<S: State> Trajectory<S> {
    pub fn new(s0: S, t_max: f64, jumps: Vec<(f64, S)>) -> Result<Self> {
        check_times(t_max, &jumps)?;
        let mut prev = s0;
        for (t, s) in &jumps {
            if *s == prev {
                return Err(Error::InvalidTrajectory(format!(
                    "jump at {t} does not change the state {s:?}"
                )));
            }
            prev = *s;
        }
        Ok(Self { s0, t_max, jumps })
    }

    /// The path that stays in `s0` on the whole horizon.
    pub fn constant(s0: S, t_max: f64) -> Self {
        Self {
            s0,
            t_max,
            jumps: Vec::new(),
        }
    }

    pub fn s0(&self) -> S {
        self.s0
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn jumps(&self) -> &[(f64, S)] {
        &self.jumps
    }

    pub fn num_jumps(&self) -> usize {
        self.jumps.len()
    }

    pub fn jump_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.jumps.iter().map(|(t, _)| *t)
    }

    pub fn final_state(&self) -> S {
        self.jumps.last().map(|(_, s)| *s).unwrap_or(self.s0)
    }

    /// `X(t)` for the right-continuous path.
    pub fn state_at(&self, t: f64) -> S {
        let idx = self.jumps.partition_point(|(tj, _)| *tj <= t);
        if idx == 0 {
            self.s0
        } else {
            self.jumps[idx - 1].1
        }
    }

    /// Holding intervals `(start, end, state)` covering `[0, t_max]`.
    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, S)> + '_ {
        let n = self.jumps.len();
        (0..=n).map(move |j| {
            let (start, state) = if j == 0 {
                (0.0, self.s0)
            } else {
                self.jumps[j - 1]
            };
            let end = if j < n { self.jumps[j].0 } else { self.t_max };
            (start, end, state)
        })
    }
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRepr<S> {
    s0: S,
    t_max: f64,
    jumps: Vec<(f64, S)>,
}

impl<S: State> Serialize for Trajectory<S> {
    fn serialize<Z: Serializer>(&self, serializer: Z) -> std::result::Result<Z::Ok, Z::Error> {
        TrajectoryRepr {
            s0: self.s0,
            t_max: self.t_max,
            jumps: self.jumps.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de, S: State> Deserialize<'de> for Trajectory<S> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = TrajectoryRepr::<S>::deserialize(deserializer)?;
        Trajectory::new(raw.s0, raw.t_max, raw.jumps).map_err(D::Error::custom)
    }
}

/// A path together with virtual jumps: every potential jump time of the
/// thinning construction and the (redundant) skeleton at those times.
///
/// Grid times are strictly increasing inside `(0, t_max)`; the skeleton may
/// repeat a state, and those repeats are the virtual jumps.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedTrajectory<S> {
    s0: S,
    t_max: f64,
    grid: Vec<(f64, S)>,
}

impl<S: State> AugmentedTrajectory<S> {
    pub fn new(s0: S, t_max: f64, grid: Vec<(f64, S)>) -> Result<Self> {
        check_times(t_max, &grid)?;
        Ok(Self { s0, t_max, grid })
    }

    /// Pairs grid times with a skeleton `s_0..s_n`.
    pub fn from_skeleton(times: &[f64], skeleton: &[S], t_max: f64) -> Result<Self> {
        if skeleton.len() != times.len() + 1 {
            return Err(Error::InvalidTrajectory(format!(
                "skeleton of length {} for {} grid times",
                skeleton.len(),
                times.len()
            )));
        }
        let grid = times.iter().copied().zip(skeleton[1..].iter().copied()).collect();
        Self::new(skeleton[0], t_max, grid)
    }

    pub fn s0(&self) -> S {
        self.s0
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn grid(&self) -> &[(f64, S)] {
        &self.grid
    }

    /// Number of potential jumps `n`.
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.grid.iter().map(|(t, _)| *t).collect()
    }

    /// `s_0, s_1, ..., s_n`.
    pub fn skeleton(&self) -> Vec<S> {
        std::iter::once(self.s0)
            .chain(self.grid.iter().map(|(_, s)| *s))
            .collect()
    }

    /// Indices `k` (1-based) of true jumps, where `s_k != s_{k-1}`.
    pub fn true_jump_indices(&self) -> Vec<usize> {
        let mut prev = self.s0;
        let mut out = Vec::new();
        for (k, (_, s)) in self.grid.iter().enumerate() {
            if *s != prev {
                out.push(k + 1);
            }
            prev = *s;
        }
        out
    }

    pub fn num_virtual(&self) -> usize {
        self.grid.len() - self.true_jump_indices().len()
    }
}

/// Drops the virtual jumps, keeping exactly the grid points where the
/// skeleton changes state.
pub fn strip_virtual<S: State>(aug: &AugmentedTrajectory<S>) -> Trajectory<S> {
    let mut prev = aug.s0;
    let mut jumps = Vec::new();
    for &(t, s) in &aug.grid {
        if s != prev {
            jumps.push((t, s));
        }
        prev = s;
    }
    Trajectory {
        s0: aug.s0,
        t_max: aug.t_max,
        jumps,
    }
}

#[derive(Serialize, Deserialize)]
struct AugmentedRepr<S> {
    s0: S,
    t_max: f64,
    jumps: Vec<(f64, S)>,
    grid: Vec<(f64, S)>,
}

impl<S: State> Serialize for AugmentedTrajectory<S> {
    fn serialize<Z: Serializer>(&self, serializer: Z) -> std::result::Result<Z::Ok, Z::Error> {
        AugmentedRepr {
            s0: self.s0,
            t_max: self.t_max,
            jumps: strip_virtual(self).jumps,
            grid: self.grid.clone(),
        }
        .serialize(serializer)
    }
}

impl<'de, S: State> Deserialize<'de> for AugmentedTrajectory<S> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = AugmentedRepr::<S>::deserialize(deserializer)?;
        let aug = AugmentedTrajectory::new(raw.s0, raw.t_max, raw.grid).map_err(D::Error::custom)?;
        if strip_virtual(&aug).jumps != raw.jumps {
            return Err(D::Error::custom("jumps do not match the grid skeleton"));
        }
        Ok(aug)
    }
}

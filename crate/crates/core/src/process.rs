//! Piecewise-homogeneous jump processes.
//!
//! A node of a continuous-time Bayesian network is homogeneous between
//! jumps of its parents. [`PiecewiseProcess`] holds one rate specification
//! and one augmentation policy per such segment; a plain homogeneous process
//! is the single-segment case.

use crate::error::{Error, Result};
use crate::rates::{AugmentationPolicy, RateSpec, SkeletonKernel, State};
use crate::trajectory::Trajectory;

/// Rates and augmentation policy in force from `start` until the next
/// segment starts.
pub struct Segment<'a, S> {
    pub start: f64,
    pub rates: &'a dyn RateSpec<State = S>,
    pub policy: AugmentationPolicy,
}

impl<S> Clone for Segment<'_, S> {
    fn clone(&self) -> Self {
        *self
    }
}
impl<S> Copy for Segment<'_, S> {}

/// A time-segmented jump process on `[0, t_max]`.
pub struct PiecewiseProcess<'a, S> {
    t_max: f64,
    segments: Vec<Segment<'a, S>>,
}

impl<S> Clone for PiecewiseProcess<'_, S> {
    fn clone(&self) -> Self {
        Self {
            t_max: self.t_max,
            segments: self.segments.clone(),
        }
    }
}

/// A maximal interval on which both the path state and the segment are fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece<S> {
    pub start: f64,
    pub end: f64,
    pub state: S,
    pub segment: usize,
}

impl<'a, S: State> PiecewiseProcess<'a, S> {
    pub fn homogeneous(
        rates: &'a dyn RateSpec<State = S>,
        policy: AugmentationPolicy,
        t_max: f64,
    ) -> Self {
        Self {
            t_max,
            segments: vec![Segment {
                start: 0.0,
                rates,
                policy,
            }],
        }
    }

    /// A homogeneous process without virtual jumps (`R = Q`), for density
    /// evaluation and simulation.
    pub fn rates_only(rates: &'a dyn RateSpec<State = S>, t_max: f64) -> Self {
        Self::homogeneous(rates, AugmentationPolicy::Homogeneous { theta: 0.0 }, t_max)
    }

    pub fn new(t_max: f64, segments: Vec<Segment<'a, S>>) -> Result<Self> {
        if !(t_max > 0.0 && t_max.is_finite()) {
            return Err(Error::InvalidModel(format!("horizon {t_max}")));
        }
        match segments.first() {
            Some(first) if first.start == 0.0 => {}
            _ => return Err(Error::InvalidModel("first segment must start at 0".into())),
        }
        for pair in segments.windows(2) {
            if !(pair[1].start > pair[0].start && pair[1].start < t_max) {
                return Err(Error::InvalidModel(format!(
                    "segment start {} out of order",
                    pair[1].start
                )));
            }
        }
        Ok(Self { t_max, segments })
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn segments(&self) -> &[Segment<'a, S>] {
        &self.segments
    }

    pub fn segment_end(&self, i: usize) -> f64 {
        self.segments.get(i + 1).map(|s| s.start).unwrap_or(self.t_max)
    }

    /// Index of the segment containing `t` (segments are closed on the left).
    #[inline]
    pub fn segment_index_at(&self, t: f64) -> usize {
        if self.segments.len() == 1 {
            return 0;
        }
        self.segments.partition_point(|s| s.start <= t).saturating_sub(1)
    }

    pub fn segment_at(&self, t: f64) -> &Segment<'a, S> {
        &self.segments[self.segment_index_at(t)]
    }

    /// Skeleton kernel for a potential jump at time `t`.
    pub fn kernel_at(&self, t: f64) -> SkeletonKernel<'a, S> {
        let seg = self.segment_at(t);
        SkeletonKernel::unchecked(seg.rates, seg.policy)
    }

    /// True when `t` is the start of a segment other than the first.
    pub fn is_breakpoint(&self, t: f64) -> bool {
        let i = self.segment_index_at(t);
        i > 0 && self.segments[i].start == t
    }

    /// Splits `[a, b)` at segment boundaries, yielding `(start, end, segment)`.
    pub fn split_interval(&self, a: f64, b: f64, out: &mut Vec<(f64, f64, usize)>) {
        if b <= a {
            return;
        }
        let mut i = self.segment_index_at(a);
        let mut start = a;
        loop {
            let end = self.segment_end(i).min(b);
            if end > start {
                out.push((start, end, i));
            }
            if end >= b || i + 1 >= self.segments.len() {
                break;
            }
            start = end;
            i += 1;
        }
    }

    /// Pieces of `traj` refined by the segment boundaries, in time order.
    pub fn pieces(&self, traj: &Trajectory<S>) -> Vec<Piece<S>> {
        let mut out = Vec::with_capacity(traj.num_jumps() + self.segments.len());
        let mut buf = Vec::new();
        for (a, b, state) in traj.segments() {
            buf.clear();
            self.split_interval(a, b, &mut buf);
            out.extend(buf.iter().map(|&(start, end, segment)| Piece {
                start,
                end,
                state,
                segment,
            }));
        }
        out
    }

    /// `R(s)` at time `t`, or a policy violation.
    pub fn dominating_rate_at(&self, t: f64, s: S) -> Result<f64> {
        let seg = self.segment_at(t);
        seg.policy.checked_dominating_rate(&s, seg.rates.exit_rate(s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::DenseRates;

    #[test]
    fn pieces_partition_the_horizon() {
        let a = DenseRates::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let b = DenseRates::new(vec![vec![0.0, 2.0], vec![3.0, 0.0]]).unwrap();
        let pol = AugmentationPolicy::Homogeneous { theta: 1.0 };
        let proc = PiecewiseProcess::new(
            2.0,
            vec![
                Segment { start: 0.0, rates: &a, policy: pol },
                Segment { start: 0.5, rates: &b, policy: pol },
                Segment { start: 1.5, rates: &a, policy: pol },
            ],
        )
        .unwrap();
        let traj = Trajectory::new(0usize, 2.0, vec![(0.2, 1), (1.0, 0)]).unwrap();
        let pieces = proc.pieces(&traj);
        let total: f64 = pieces.iter().map(|p| p.end - p.start).sum();
        assert!((total - 2.0).abs() < 1e-12);
        let shape: Vec<_> = pieces.iter().map(|p| (p.start, p.end, p.state, p.segment)).collect();
        assert_eq!(
            shape,
            vec![
                (0.0, 0.2, 0, 0),
                (0.2, 0.5, 1, 0),
                (0.5, 1.0, 1, 1),
                (1.0, 1.5, 0, 1),
                (1.5, 2.0, 0, 2)
            ]
        );
        assert_eq!(proc.segment_index_at(0.5), 1);
        assert!(proc.is_breakpoint(1.5));
        assert!(!proc.is_breakpoint(1.0));
    }
}

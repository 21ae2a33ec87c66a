//! Log-densities of paths, with and without virtual jumps.
//!
//! All densities are with respect to the natural reference measure on jump
//! times and states, and are computed in log space.

use crate::error::{Error, Result};
use crate::process::PiecewiseProcess;
use crate::rates::{AugmentationPolicy, RateSpec, State};
use crate::simulate::InitialDist;
use crate::trajectory::{AugmentedTrajectory, Trajectory};

/// Log-density of a path of a homogeneous process, including `log nu(s_0)`
/// and the survival factor after the last jump.
///
/// A jump along a zero-rate transition gives `-inf`.
pub fn log_density_trajectory<R>(
    q: &R,
    init: &dyn InitialDist<R::State>,
    traj: &Trajectory<R::State>,
) -> f64
where
    R: RateSpec + Sized,
{
    let process = PiecewiseProcess::rates_only(q, traj.t_max());
    init.log_prob(traj.s0())
        + log_density_path(&process, traj).expect("a single segment has no breakpoints")
}

/// Log-density of `traj` under a piecewise-homogeneous process, without the
/// initial-distribution term.
///
/// Fails when a jump of the path coincides with a segment boundary.
pub fn log_density_path<S: State>(process: &PiecewiseProcess<'_, S>, traj: &Trajectory<S>) -> Result<f64> {
    let segments = process.segments();
    let mut total = 0.0;
    for piece in process.pieces(traj) {
        total -= segments[piece.segment].rates.exit_rate(piece.state) * (piece.end - piece.start);
    }
    let mut prev = traj.s0();
    for &(t, s) in traj.jumps() {
        if process.is_breakpoint(t) {
            return Err(Error::SimultaneousJump { time: t });
        }
        let r = process.segment_at(t).rates.rate(prev, s);
        if r <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        total += r.ln();
        prev = s;
    }
    Ok(total)
}

/// Log-density of the virtual jumps of `aug` given its stripped path: an
/// independent Poisson process of rate `R(s) - Q(s)` on every piece.
pub fn log_density_virtual<S: State>(
    process: &PiecewiseProcess<'_, S>,
    aug: &AugmentedTrajectory<S>,
) -> Result<f64> {
    let traj = crate::trajectory::strip_virtual(aug);
    let segments = process.segments();
    let mut total = 0.0;
    for piece in process.pieces(&traj) {
        let seg = &segments[piece.segment];
        let exit = seg.rates.exit_rate(piece.state);
        let r = seg.policy.checked_dominating_rate(&piece.state, exit)?;
        total -= (r - exit).max(0.0) * (piece.end - piece.start);
    }
    let mut prev = aug.s0();
    for &(t, s) in aug.grid() {
        if s == prev {
            let seg = process.segment_at(t);
            let exit = seg.rates.exit_rate(s);
            let excess = seg.policy.checked_dominating_rate(&s, exit)? - exit;
            if excess <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            total += excess.ln();
        }
        prev = s;
    }
    Ok(total)
}

/// Log-density of potential jump times and redundant skeleton under
/// thinning, including `log nu(s_0)`.
pub fn log_density_augmented<R>(
    q: &R,
    policy: AugmentationPolicy,
    init: &dyn InitialDist<R::State>,
    aug: &AugmentedTrajectory<R::State>,
) -> Result<f64>
where
    R: RateSpec + Sized,
{
    let process = PiecewiseProcess::homogeneous(q, policy, aug.t_max());
    Ok(init.log_prob(aug.s0()) + log_density_augmented_path(&process, aug)?)
}

/// Augmented log-density under a piecewise process, without `log nu`.
///
/// A stay contributes `log(R - Q)`, a jump `log Q(s, s')`, and each holding
/// interval `-R(s) * duration`.
pub fn log_density_augmented_path<S: State>(
    process: &PiecewiseProcess<'_, S>,
    aug: &AugmentedTrajectory<S>,
) -> Result<f64> {
    let segments = process.segments();
    let mut total = 0.0;
    let mut prev = aug.s0();
    for &(t, s) in aug.grid() {
        let seg = process.segment_at(t);
        let exit = seg.rates.exit_rate(prev);
        let r = seg.policy.checked_dominating_rate(&prev, exit)?;
        let factor = if s == prev { r - exit } else { seg.rates.rate(prev, s) };
        if factor <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        total += factor.ln();
        prev = s;
    }
    let mut buf = Vec::new();
    let mut start = 0.0;
    let mut state = aug.s0();
    let grid = aug.grid();
    for k in 0..=grid.len() {
        let end = if k < grid.len() { grid[k].0 } else { aug.t_max() };
        buf.clear();
        process.split_interval(start, end, &mut buf);
        for &(a, b, seg_idx) in &buf {
            let seg = &segments[seg_idx];
            let r = seg.policy.dominating_rate(seg.rates.exit_rate(state));
            total -= r * (b - a);
        }
        if k < grid.len() {
            start = grid[k].0;
            state = grid[k].1;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rates::DenseRates;
    use crate::simulate::{resample_virtual, thinning_sample, PointMass};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_x() -> DenseRates {
        DenseRates::new(vec![vec![0.0, 10.0], vec![10.0, 0.0]]).unwrap()
    }

    #[test]
    fn constant_path_density() {
        let q = toy_x();
        let traj = Trajectory::constant(0usize, 1.0);
        assert!((log_density_trajectory(&q, &PointMass(0), &traj) + 10.0).abs() < 1e-14);
    }

    #[test]
    fn single_jump_density() {
        let q = toy_x();
        let traj = Trajectory::new(0usize, 1.0, vec![(0.5, 1)]).unwrap();
        let lp = log_density_trajectory(&q, &PointMass(0), &traj);
        assert!((lp - (10f64.ln() - 10.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_rate_jump_is_impossible() {
        let q = DenseRates::new(vec![vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]])
            .unwrap();
        let traj = Trajectory::new(0usize, 1.0, vec![(0.5, 1)]).unwrap();
        assert_eq!(log_density_trajectory(&q, &PointMass(0), &traj), f64::NEG_INFINITY);
    }

    #[test]
    fn empty_grid_augmented_density() {
        let q = toy_x();
        let aug = AugmentedTrajectory::new(1usize, 2.0, vec![]).unwrap();
        let pol = AugmentationPolicy::Uniformization { lambda: 20.0 };
        let lp = log_density_augmented(&q, pol, &PointMass(1), &aug).unwrap();
        assert!((lp + 40.0).abs() < 1e-12);
    }

    #[test]
    fn uniformized_self_transition_contributes_log_ten() {
        let q = toy_x();
        let pol = AugmentationPolicy::Uniformization { lambda: 20.0 };
        let stay = AugmentedTrajectory::new(0usize, 1.0, vec![(0.5, 0)]).unwrap();
        let lp = log_density_augmented(&q, pol, &PointMass(0), &stay).unwrap();
        assert!((lp - (10f64.ln() - 20.0)).abs() < 1e-12);
    }

    #[test]
    fn augmented_density_splits_into_path_and_virtual_parts() {
        let q = DenseRates::new(vec![vec![0.0, 3.0, 1.0], vec![2.0, 0.0, 2.0], vec![0.5, 4.0, 0.0]])
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for policy in [
            AugmentationPolicy::Uniformization { lambda: 9.0 },
            AugmentationPolicy::Homogeneous { theta: 2.5 },
        ] {
            for _ in 0..50 {
                let aug = thinning_sample(&q, policy, &PointMass(0), 2.0, &mut rng).unwrap();
                let traj = crate::trajectory::strip_virtual(&aug);
                let process = PiecewiseProcess::homogeneous(&q, policy, 2.0);
                let lhs = log_density_augmented(&q, policy, &PointMass(0), &aug).unwrap();
                let rhs = log_density_trajectory(&q, &PointMass(0), &traj)
                    + log_density_virtual(&process, &aug).unwrap();
                assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
                let again = resample_virtual(&traj, &q, policy, &mut rng).unwrap();
                let lhs = log_density_augmented(&q, policy, &PointMass(0), &again).unwrap();
                let rhs = log_density_trajectory(&q, &PointMass(0), &traj)
                    + log_density_virtual(&process, &again).unwrap();
                assert!((lhs - rhs).abs() < 1e-10);
            }
        }
    }
}

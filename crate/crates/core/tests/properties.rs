use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mjp_pgas::ctbn::{parent_segments, simulate_ctbn};
use mjp_pgas::density::{log_density_augmented, log_density_trajectory, log_density_virtual};
use mjp_pgas::diagnostics::{exact_skeleton_posterior, sufficient_stats, StatRow, ENUMERATION_LIMIT};
use mjp_pgas::io::{read_stats_csv, to_canonical_json, write_stats_csv};
use mjp_pgas::mcmc::{mjp_mcmc_step, Method};
use mjp_pgas::observation::{build_hmm_factors, Evidence, PointEvidence, PointObservation, SkeletonHmm};
use mjp_pgas::presets::preset_chain;
use mjp_pgas::process::PiecewiseProcess;
use mjp_pgas::rates::{build_kernel, AugmentationPolicy, DenseRates, RateSpec};
use mjp_pgas::simulate::{resample_virtual, simulate_gillespie, thinning_sample, Categorical};
use mjp_pgas::smc::{forward_filter, pgas_step};
use mjp_pgas::trajectory::{strip_virtual, AugmentedTrajectory};

fn rates() -> impl Strategy<Value = DenseRates> {
    (2usize..5).prop_flat_map(|n| {
        prop::collection::vec(0.05f64..4.0, n * n).prop_map(move |v| {
            DenseRates::from_fn(n, |i, j| if i == j { 0.0 } else { v[i * n + j] }).unwrap()
        })
    })
}

/// Either scheme, with the dominating rate at or above the largest exit rate.
fn policy_for(q: &DenseRates, pick: bool, scale: f64) -> AugmentationPolicy {
    if pick {
        AugmentationPolicy::Uniformization {
            lambda: q.max_exit_rate().unwrap() * (1.0 + scale),
        }
    } else {
        AugmentationPolicy::Homogeneous { theta: 0.1 + 5.0 * scale }
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn random_evidence(n: usize, rng: &mut ChaCha8Rng) -> PointEvidence<usize> {
    let obs = (0..3)
        .map(|_| {
            let t = rng.random_range(0.0..1.0);
            PointObservation::table(t, (0..n).map(|_| -rng.random_range(0.0..3.0)).collect())
        })
        .collect();
    PointEvidence::new(obs).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_rows_are_probability_vectors(q in rates(), pick: bool, scale in 0.0f64..2.0) {
        let policy = policy_for(&q, pick, scale);
        let kernel = build_kernel(&q, policy).unwrap();
        for s in 0..q.num_states() {
            let total: f64 = (0..q.num_states()).map(|t| kernel.prob(s, t)).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            for t in 0..q.num_states() {
                let p = kernel.prob(s, t);
                prop_assert!((0.0..=1.0).contains(&p));
            }
        }
    }

    #[test]
    fn stripping_resampled_virtual_jumps_is_identity(q in rates(), pick: bool, scale in 0.0f64..2.0, seed: u64) {
        let policy = policy_for(&q, pick, scale);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init = Categorical::uniform(q.num_states());
        let traj = simulate_gillespie(&q, &init, 1.5, &mut rng).unwrap();
        let aug = resample_virtual(&traj, &q, policy, &mut rng).unwrap();
        prop_assert_eq!(strip_virtual(&aug), traj);
    }

    #[test]
    fn augmented_density_is_path_plus_virtual(q in rates(), pick: bool, scale in 0.0f64..2.0, seed: u64) {
        let policy = policy_for(&q, pick, scale);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init = Categorical::uniform(q.num_states());
        let aug = thinning_sample(&q, policy, &init, 1.0, &mut rng).unwrap();
        let process = PiecewiseProcess::homogeneous(&q, policy, 1.0);
        let joint = log_density_augmented(&q, policy, &init, &aug).unwrap();
        let virt = log_density_virtual(&process, &aug).unwrap();
        let path = log_density_trajectory(&q, &init, &strip_virtual(&aug));
        prop_assert!(close(joint - virt, path, 1e-10), "{} vs {}", joint - virt, path);
    }

    #[test]
    fn hmm_factors_match_augmented_density_up_to_a_constant(q in rates(), pick: bool, scale in 0.0f64..2.0, seed: u64) {
        let policy = policy_for(&q, pick, scale);
        let n = q.num_states();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init = Categorical::uniform(n);
        let points = random_evidence(n, &mut rng);
        let evidence = Evidence::points(points.clone());
        let process = PiecewiseProcess::homogeneous(&q, policy, 1.0);
        let times = thinning_sample(&q, policy, &init, 1.0, &mut rng).unwrap().times();
        let hmm = build_hmm_factors(&process, &init, &times, &evidence).unwrap();
        let mut diffs = Vec::new();
        for _ in 0..8 {
            let sk: Vec<usize> = (0..=times.len()).map(|_| rng.random_range(0..n)).collect();
            let mut lhs = hmm.log_initial(sk[0]) + hmm.log_potential(0, sk[0]);
            for k in 1..sk.len() {
                lhs += hmm.log_transition(k, sk[k - 1], sk[k]) + hmm.log_potential(k, sk[k]);
            }
            let aug = AugmentedTrajectory::from_skeleton(&times, &sk, 1.0).unwrap();
            let rhs = log_density_augmented(&q, policy, &init, &aug).unwrap()
                + points.log_likelihood(&strip_virtual(&aug));
            prop_assert_eq!(lhs.is_finite(), rhs.is_finite());
            if lhs.is_finite() {
                diffs.push(lhs - rhs);
            }
        }
        for d in &diffs {
            prop_assert!((d - diffs[0]).abs() < 1e-9, "{:?}", diffs);
        }
    }

    #[test]
    fn enumeration_matches_forward_filter(q in rates(), pick: bool, scale in 0.0f64..2.0, seed: u64) {
        let policy = policy_for(&q, pick, scale);
        let n = q.num_states();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init = Categorical::uniform(n);
        let evidence = Evidence::points(random_evidence(n, &mut rng));
        let process = PiecewiseProcess::homogeneous(&q, policy, 1.0);
        let k = rng.random_range(0..4);
        let mut times: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..0.99)).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let hmm = build_hmm_factors(&process, &init, &times, &evidence).unwrap();
        let table = exact_skeleton_posterior(&hmm, ENUMERATION_LIMIT).unwrap();
        let filter = forward_filter(&hmm).unwrap();
        let last = filter.filters.last().unwrap();
        for (i, &s) in filter.states.iter().enumerate() {
            let marginal: f64 = table.iter().filter(|(sk, _)| *sk.last().unwrap() == s).map(|e| e.1).sum();
            prop_assert!((marginal - last[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn pgas_is_deterministic_given_the_seed(q in rates(), seed: u64, particles in 2usize..8) {
        let policy = policy_for(&q, true, 0.5);
        let n = q.num_states();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init = Categorical::uniform(n);
        let evidence = Evidence::points(random_evidence(n, &mut rng));
        let process = PiecewiseProcess::homogeneous(&q, policy, 1.0);
        let aug = thinning_sample(&q, policy, &init, 1.0, &mut rng).unwrap();
        let hmm = build_hmm_factors(&process, &init, &aug.times(), &evidence).unwrap();
        let reference = aug.skeleton();
        if hmm.check_nondegenerate().is_ok() && (0..=hmm.steps()).all(|k| hmm.log_potential(k, reference[k]).is_finite()) {
            let a = pgas_step(&hmm, &reference, particles, &mut ChaCha8Rng::seed_from_u64(seed ^ 1)).unwrap();
            let b = pgas_step(&hmm, &reference, particles, &mut ChaCha8Rng::seed_from_u64(seed ^ 1)).unwrap();
            prop_assert_eq!(a.skeleton, b.skeleton);
        }
    }

    #[test]
    fn sampler_step_only_jumps_on_its_grid(q in rates(), pick: bool, scale in 0.0f64..2.0, seed: u64, ffbs: bool) {
        let policy = policy_for(&q, pick, scale);
        let init = Categorical::uniform(q.num_states());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = simulate_gillespie(&q, &init, 1.0, &mut rng).unwrap();
        let process = PiecewiseProcess::homogeneous(&q, policy, 1.0);
        let method = if ffbs { Method::Ffbs } else { Method::Pgas { particles: 4 } };
        let evidence = Evidence::points(PointEvidence::new(Vec::new()).unwrap());
        let step = mjp_mcmc_step(&start, &process, &init, &evidence, method, &mut rng).unwrap();
        for t in start.jump_times() {
            prop_assert!(step.grid.contains(&t));
        }
        for t in step.trajectory.jump_times() {
            prop_assert!(step.grid.contains(&t));
        }
    }

    #[test]
    fn occupation_times_sum_to_horizon(q in rates(), seed: u64, t_max in 0.1f64..5.0) {
        let n = q.num_states();
        let traj = simulate_gillespie(&q, &Categorical::uniform(n), t_max, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let ss = sufficient_stats(&traj, n);
        prop_assert!(ss.occupation.iter().all(|&o| o >= 0.0));
        prop_assert!((ss.occupation.iter().sum::<f64>() - t_max).abs() < 1e-9);
        prop_assert_eq!(ss.jumps.iter().sum::<u64>() as usize, traj.num_jumps());
    }

    #[test]
    fn parent_segments_track_the_parent_path(nodes in 2usize..5, states in 2usize..6, seed: u64) {
        let preset = preset_chain(nodes, states, 3.0, seed).unwrap();
        let path = simulate_ctbn(&preset.model, 3.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for w in 0..nodes {
            let segs = parent_segments(&preset.model, w, &path);
            prop_assert_eq!(segs[0].0, 0.0);
            for pair in segs.windows(2) {
                prop_assert!(pair[0].0 <= pair[1].0 && pair[1].0 < 3.0);
            }
            for &(start, code) in &segs {
                prop_assert_eq!(code, preset.model.parent_code(w, &path.state_at(start)));
            }
        }
    }

    #[test]
    fn chain_presets_regenerate_identically(nodes in 1usize..5, states in 2usize..20, seed: u64) {
        let a = preset_chain(nodes, states, 4.0, seed).unwrap();
        let b = preset_chain(nodes, states, 4.0, seed).unwrap();
        prop_assert_eq!(to_canonical_json(&a.spec).unwrap(), to_canonical_json(&b.spec).unwrap());
        prop_assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn stats_rows_survive_csv(rows in prop::collection::vec(
        (0usize..50, 0usize..2000, 0usize..8, -1i64..60, 0.0f64..1e3, 0u64..500, 0.0f64..1e2),
        1..40,
    )) {
        let rows: Vec<StatRow> = rows
            .into_iter()
            .map(|(replication, iteration, node, state, occupation_time, jump_count, wall_ms)| StatRow {
                replication,
                iteration,
                node,
                state,
                occupation_time,
                jump_count,
                wall_ms,
            })
            .collect();
        let mut buf = Vec::new();
        write_stats_csv(&mut buf, &rows).unwrap();
        prop_assert_eq!(read_stats_csv(buf.as_slice()).unwrap(), rows);
    }
}

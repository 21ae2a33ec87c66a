//! Checking a sampler against an independent answer: a two-state process
//! with two noisy observations, the occupation time of state 0 estimated by
//! MCMC, and the same quantity from a fine-step discretized smoother.

use mjp_pgas::diagnostics::{discretized_smoother, ess};
use mjp_pgas::mcmc::{run_mjp_chain, ChainConfig, Method, NodeOrder, PolicySpec};
use mjp_pgas::observation::{Evidence, PointEvidence, PointObservation};
use mjp_pgas::rates::DenseRates;
use mjp_pgas::simulate::Categorical;

fn main() -> mjp_pgas::Result<()> {
    let q = DenseRates::new(vec![vec![0.0, 1.5], vec![0.5, 0.0]])?;
    let points = PointEvidence::new(vec![
        PointObservation::table(0.3, vec![0.9f64.ln(), 0.1f64.ln()]),
        PointObservation::table(0.9, vec![0.3f64.ln(), 0.7f64.ln()]),
    ])?;
    let oracle = discretized_smoother(&q, &[0.5, 0.5], &points, 1.0, 1e-3)?[0];
    println!("smoother: {oracle:.4}");

    let config = ChainConfig {
        method: Method::Pgas { particles: 5 },
        policy: PolicySpec::ScaledExit { factor: 2.0 },
        node_policies: None,
        iterations: 5_000,
        burn_in: 500,
        thin: 1,
        seed: 11,
        node_order: NodeOrder::Fixed,
    };
    let run = run_mjp_chain(&q, &Categorical::uniform(2), &Evidence::points(points), 1.0, &config, 0, false, &mut |_, _| {});
    if let Some(e) = run.error {
        return Err(e);
    }
    let series: Vec<f64> = run.stats.iter().filter(|r| r.state == 0).map(|r| r.occupation_time).collect();
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    let e = ess(&series)?;
    println!("pgas(5): {mean:.4} from {} samples, effective sample size {:.0}", series.len(), e.ess);
    Ok(())
}

//! The two-node toy network: a hidden binary parent observed only at both
//! ends, and a fully observed child whose switching rate depends on it.
//! Runs one PGAS chain and prints the posterior probability that the parent
//! is in state 0 on a coarse grid, next to the path that generated the data.

use mjp_pgas::mcmc::{run_ctbn_chain, Method};
use mjp_pgas::presets::preset_toy;

fn main() -> mjp_pgas::Result<()> {
    let preset = preset_toy(3)?;
    let config = mjp_pgas::mcmc::ChainConfig {
        method: Method::Pgas { particles: 4 },
        ..preset.config.clone()
    };
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let mut hits = vec![0usize; grid.len()];
    let mut kept = 0;
    let run = run_ctbn_chain(&preset.model, &preset.evidence, preset.t_max, &config, 0, false, &mut |_, path| {
        kept += 1;
        for (h, &t) in hits.iter_mut().zip(&grid) {
            *h += (path.node(0).state_at(t) == 0) as usize;
        }
    });
    if let Some(e) = run.error {
        return Err(e);
    }
    println!("{kept} samples after burn-in");
    println!("   t  P(X=0)  truth");
    for (i, &t) in grid.iter().enumerate() {
        println!("{t:4.1}  {:6.3}  {}", hits[i] as f64 / kept as f64, preset.truth.node(0).state_at(t));
    }
    Ok(())
}

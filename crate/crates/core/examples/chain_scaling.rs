//! Per-sweep cost on the chain network as the per-node state count grows.
//! The particle update touches only the sampled states, so its cost stays
//! flat, while forward filtering pays for every pair of states.

use mjp_pgas::diagnostics::median;
use mjp_pgas::mcmc::{run_ctbn_chain, ChainConfig, Method};
use mjp_pgas::presets::preset_chain;

fn sweep_ms(states: usize, method: Method) -> mjp_pgas::Result<f64> {
    let preset = preset_chain(3, states, 5.0, 1)?;
    let config = ChainConfig { method, iterations: 200, burn_in: 20, ..preset.config.clone() };
    let run = run_ctbn_chain(&preset.model, &preset.evidence, preset.t_max, &config, 0, true, &mut |_, _| {});
    match run.error {
        Some(e) => Err(e),
        None => Ok(median(&run.iteration_ms[config.burn_in..])),
    }
}

fn main() -> mjp_pgas::Result<()> {
    println!("states  pgas(10) ms  ffbs ms");
    for states in [2, 5, 10, 20, 50, 100] {
        let p = sweep_ms(states, Method::Pgas { particles: 10 })?;
        let f = sweep_ms(states, Method::Ffbs)?;
        println!("{states:6}  {p:11.4}  {f:7.4}");
    }
    Ok(())
}

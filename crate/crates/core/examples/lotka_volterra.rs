//! Predator-prey inference on an unbounded state space. Observations cover
//! the first half of the horizon; the second half is prediction. Prints the
//! posterior mean and a 90% band for both populations.

use mjp_pgas::diagnostics::{grid_quantiles, grid_summary};
use mjp_pgas::lotka_volterra::Population;
use mjp_pgas::mcmc::{run_mjp_chain, ChainConfig};
use mjp_pgas::presets::{preset_lotka_volterra, LotkaVolterraSetup};

fn main() -> mjp_pgas::Result<()> {
    let setup = LotkaVolterraSetup {
        horizon: 300.0,
        observed_until: 150.0,
        observations: 20,
        ..LotkaVolterraSetup::default()
    };
    let preset = preset_lotka_volterra(setup, 0)?;
    let config = ChainConfig { iterations: 120, burn_in: 20, ..preset.config.clone() };
    let mut samples = Vec::new();
    let run = run_mjp_chain(&preset.rates, &preset.initial, &preset.evidence, setup.horizon, &config, 0, false, &mut |_, p| {
        samples.push(p.clone())
    });
    if let Some(e) = run.error {
        return Err(e);
    }
    let grid: Vec<f64> = (0..=10).map(|i| 30.0 * i as f64).collect();
    for (name, pick) in [("prey", 0), ("predator", 1)] {
        let f = move |s: Population| if pick == 0 { s.prey as f64 } else { s.predator as f64 };
        let mean = grid_summary(&samples, &grid, f).mean;
        let band = grid_quantiles(&samples, &grid, f, &[0.05, 0.95]);
        println!("{name}");
        for (i, &t) in grid.iter().enumerate() {
            let truth = f(preset.truth.state_at(t));
            println!("  t={t:5.0}  mean {:6.2}  band [{:3.0}, {:3.0}]  truth {truth:3.0}", mean[i], band[0][i], band[1][i]);
        }
    }
    Ok(())
}

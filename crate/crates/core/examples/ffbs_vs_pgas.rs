//! Replicated chains on the toy network with both skeleton updates. Prints
//! the across-replication spread of the running posterior mean of the
//! parent's jump count at a few iteration budgets.

use mjp_pgas::diagnostics::{replication_statistics, StatRow};
use mjp_pgas::mcmc::{run_ctbn_chain, ChainConfig, Method};
use mjp_pgas::presets::preset_toy;
use rayon::prelude::*;

fn main() -> mjp_pgas::Result<()> {
    let preset = preset_toy(0)?;
    let budgets = [100, 200, 400, 900];
    for (name, method) in [
        ("ffbs", Method::Ffbs),
        ("pgas(2)", Method::Pgas { particles: 2 }),
        ("pgas(4)", Method::Pgas { particles: 4 }),
    ] {
        let config = ChainConfig { method, ..preset.config.clone() };
        let runs: Vec<_> = (0..40)
            .into_par_iter()
            .map(|r| run_ctbn_chain(&preset.model, &preset.evidence, preset.t_max, &config, r, false, &mut |_, _| {}))
            .collect();
        let mut rows: Vec<StatRow> = Vec::new();
        for run in runs {
            if let Some(e) = run.error {
                return Err(e);
            }
            rows.extend(run.stats);
        }
        let stats = replication_statistics(&rows, &budgets);
        let jumps = &stats["node0/jumps"];
        let spread: Vec<String> = jumps.running_sd.iter().map(|(k, sd)| format!("{k}:{sd:.3}")).collect();
        println!("{name:8} mean jumps {:.3}  sd by budget {}", jumps.mean, spread.join(" "));
    }
    Ok(())
}

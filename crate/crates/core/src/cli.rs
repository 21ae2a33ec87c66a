//! The `mjp-pgas` command line: forward simulation, inference from model
//! and evidence files, the preset experiments and ESS summaries.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::ctbn::{simulate_ctbn, CtbnModel, CtbnPath};
use crate::diagnostics::{grid_quantiles, grid_summary, median, replication_statistics, summarize_rows, StatRow};
use crate::error::{Error, Result};
use crate::io::{
    ctbn_evidence, dense_rates, lotka_volterra_evidence, mjp_evidence, read_json, read_stats_csv,
    write_canonical_json, write_stats_csv, EvidenceEntry, ModelFile,
};
use crate::lotka_volterra::Population;
use crate::mcmc::{run_ctbn_chain, run_mjp_chain, ChainConfig, ChainRun, CtbnEvidence, Method, NodeOrder, PolicySpec, RunMetadata};
use crate::observation::Evidence;
use crate::presets::{preset_chain, preset_lotka_volterra, preset_toy, CtbnPreset, LotkaVolterraSetup};
use crate::rates::RateSpec;
use crate::simulate::{simulate_gillespie, thinning_sample, Categorical, InitialDist, PointMass};
use crate::trajectory::Trajectory;

#[derive(Debug, Parser)]
#[command(name = "mjp-pgas", version, about = "Posterior sampling of hidden jump-process paths")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Pgas,
    Ffbs,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Seed of the sampler (and of forward simulation).
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Directory receiving all output files.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, global = true, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long, global = true)]
    pub particles: Option<usize>,
    /// `uniformization:<lambda>`, `homogeneous:<theta>` or `scaled:<factor>`.
    #[arg(long = "virtual", global = true, value_parser = parse_policy)]
    pub virtual_jumps: Option<PolicySpec>,
    #[arg(long, global = true)]
    pub iters: Option<usize>,
    #[arg(long, global = true)]
    pub burnin: Option<usize>,
    #[arg(long, global = true)]
    pub thin: Option<usize>,
    #[arg(long, global = true)]
    pub replications: Option<usize>,
    /// Worker threads for replications.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Record wall-clock times. Outputs are then no longer reproducible
    /// byte for byte.
    #[arg(long, global = true)]
    pub timing: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draws a path from the prior of a model file.
    Simulate {
        #[arg(long)]
        model: PathBuf,
    },
    /// Runs the sampler on a model file and an evidence file.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        evidence: PathBuf,
    },
    /// Runs a preset experiment on synthetic data.
    Experiment {
        /// Seed of the synthetic data.
        #[arg(long, default_value_t = 0)]
        data_seed: u64,
        #[command(subcommand)]
        preset: PresetCommand,
    },
    /// Recomputes ESS summaries from a statistics CSV.
    Diag {
        #[arg(long)]
        stats: PathBuf,
    },
}

#[derive(Debug, Clone, Subcommand)]
pub enum PresetCommand {
    Toy,
    Chain {
        #[arg(long = "M", default_value_t = 3)]
        nodes: usize,
        #[arg(long = "S", default_value_t = 2)]
        states: usize,
        #[arg(long = "T", default_value_t = 5.0)]
        horizon: f64,
    },
    LotkaVolterra {
        #[arg(long, default_value_t = 3000.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1500.0)]
        observed_until: f64,
        #[arg(long, default_value_t = 50)]
        observations: usize,
        /// Grid points of the posterior band.
        #[arg(long, default_value_t = 301)]
        band_points: usize,
    },
}

fn parse_policy(text: &str) -> std::result::Result<PolicySpec, String> {
    let (mode, value) = text
        .split_once(':')
        .ok_or_else(|| format!("expected <mode>:<value>, got {text}"))?;
    let v: f64 = value.parse().map_err(|e| format!("{value}: {e}"))?;
    match mode {
        "uniformization" => Ok(PolicySpec::Uniformization { lambda: v }),
        "homogeneous" => Ok(PolicySpec::Homogeneous { theta: v }),
        "scaled" => Ok(PolicySpec::ScaledExit { factor: v }),
        other => Err(format!("unknown mode {other}")),
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
/// Failures are reported as one JSON object on stderr.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            report(&json!({"error": "invalid_arguments", "message": e.to_string(), "exit_code": 2}));
            return 2;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            report(&json!({"error": e.kind(), "message": e.to_string(), "exit_code": code}));
            code
        }
    }
}

fn report(v: &serde_json::Value) {
    eprintln!("{v}");
}

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    if g.threads == 0 {
        return Err(Error::InvalidConfig("--threads must be positive".into()));
    }
    fs::create_dir_all(&g.out_dir)?;
    match &cli.command {
        Command::Simulate { model } => simulate_command(g, &read_json(model)?),
        Command::Infer { model, evidence } => {
            let model: ModelFile = read_json(model)?;
            let entries: Vec<EvidenceEntry> = read_json(evidence)?;
            infer_command(g, &model, &entries)
        }
        Command::Experiment { data_seed, preset } => experiment_command(g, *data_seed, preset),
        Command::Diag { stats } => diag_command(g, stats),
    }
}

fn simulate_command(g: &GlobalArgs, model: &ModelFile) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
    let out = g.out_dir.join("trajectory.json");
    match model {
        ModelFile::Ctbn { t_max, network } => {
            let m = network.build()?;
            write_canonical_json(&out, &simulate_ctbn(&m, *t_max, &mut rng)?)
        }
        ModelFile::Mjp { t_max, rates, initial } => {
            let q = dense_rates(rates, initial)?;
            let init = Categorical::new(initial.clone())?;
            match g.virtual_jumps {
                Some(spec) => {
                    let policy = spec.resolve(&q)?;
                    write_canonical_json(&out, &thinning_sample(&q, policy, &init, *t_max, &mut rng)?)
                }
                None => write_canonical_json(&out, &simulate_gillespie(&q, &init, *t_max, &mut rng)?),
            }
        }
        ModelFile::LotkaVolterra { t_max, rates, initial } => {
            let init = PointMass(*initial);
            match g.virtual_jumps {
                Some(spec) => {
                    let policy = spec.resolve(rates)?;
                    write_canonical_json(&out, &thinning_sample(rates, policy, &init, *t_max, &mut rng)?)
                }
                None => write_canonical_json(&out, &simulate_gillespie(rates, &init, *t_max, &mut rng)?),
            }
        }
    }
}

/// Chain settings from command-line overrides on top of `base`.
fn chain_config(g: &GlobalArgs, base: ChainConfig) -> Result<ChainConfig> {
    let default_particles = match base.method {
        Method::Pgas { particles } => particles,
        Method::Ffbs => 10,
    };
    let method = match (g.method, g.particles) {
        (Some(MethodArg::Ffbs), _) => Method::Ffbs,
        (Some(MethodArg::Pgas), p) => Method::Pgas {
            particles: p.unwrap_or(default_particles),
        },
        (None, Some(p)) => match base.method {
            Method::Ffbs => {
                return Err(Error::InvalidConfig("--particles needs --method pgas for this preset".into()))
            }
            Method::Pgas { .. } => Method::Pgas { particles: p },
        },
        (None, None) => base.method,
    };
    let config = ChainConfig {
        method,
        policy: g.virtual_jumps.unwrap_or(base.policy),
        node_policies: base.node_policies,
        iterations: g.iters.unwrap_or(base.iterations),
        burn_in: g.burnin.unwrap_or(base.burn_in),
        thin: g.thin.unwrap_or(base.thin),
        seed: g.seed,
        node_order: base.node_order,
    };
    config.validate()?;
    Ok(config)
}

fn default_config(policy: PolicySpec) -> ChainConfig {
    ChainConfig {
        method: Method::Pgas { particles: 10 },
        policy,
        node_policies: None,
        iterations: 1000,
        burn_in: 100,
        thin: 1,
        seed: 0,
        node_order: NodeOrder::Fixed,
    }
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

/// Output of a batch of replications, merged in replication order.
struct Batch<P> {
    runs: Vec<ChainRun<P>>,
    samples: Vec<Vec<P>>,
}

fn run_batch<P: Send>(
    threads: usize,
    replications: usize,
    keep_samples: bool,
    chain: impl Fn(usize, &mut dyn FnMut(usize, &P)) -> ChainRun<P> + Sync,
) -> Result<Batch<P>>
where
    P: Clone,
{
    let pool = thread_pool(threads)?;
    let results: Vec<(ChainRun<P>, Vec<P>)> = pool.install(|| {
        (0..replications)
            .into_par_iter()
            .map(|r| {
                let mut kept = Vec::new();
                let run = chain(r, &mut |_, p: &P| {
                    if keep_samples {
                        kept.push(p.clone());
                    }
                });
                (run, kept)
            })
            .collect()
    });
    let (runs, samples) = results.into_iter().unzip();
    Ok(Batch { runs, samples })
}

#[derive(Serialize)]
struct RunReport<'a> {
    command: &'a str,
    parameters: serde_json::Value,
    config: &'a ChainConfig,
    replications: Vec<&'a RunMetadata>,
}

/// Writes `stats.csv`, `metadata.json` and `summary.json`; returns the first
/// replication error, if any.
fn write_run_outputs<P>(
    g: &GlobalArgs,
    command: &str,
    parameters: serde_json::Value,
    config: &ChainConfig,
    runs: &mut [ChainRun<P>],
) -> Result<()> {
    let rows: Vec<StatRow> = runs.iter().flat_map(|r| r.stats.iter().cloned()).collect();
    write_stats_csv(fs::File::create(g.out_dir.join("stats.csv"))?, &rows)?;
    let report = RunReport {
        command,
        parameters,
        config,
        replications: runs.iter().map(|r| &r.metadata).collect(),
    };
    write_canonical_json(&g.out_dir.join("metadata.json"), &report)?;
    let recorded = config.recorded();
    let budgets: Vec<usize> = (1..=5).map(|k| (recorded * k).div_ceil(5).max(1)).collect();
    let mut summary = serde_json::Map::new();
    summary.insert("statistics".into(), serde_json::to_value(replication_statistics(&rows, &budgets))?);
    match summarize_rows(&rows) {
        Ok(ess) => {
            summary.insert("ess".into(), serde_json::to_value(ess)?);
        }
        Err(e) => {
            summary.insert("ess_error".into(), json!(e.to_string()));
        }
    }
    if g.timing {
        let sweeps: Vec<f64> = runs.iter().flat_map(|r| r.iteration_ms.iter().copied()).collect();
        if !sweeps.is_empty() {
            summary.insert("median_sweep_ms".into(), json!(median(&sweeps)));
        }
    }
    write_canonical_json(&g.out_dir.join("summary.json"), &summary)?;
    match runs.iter_mut().find_map(|r| r.error.take()) {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn run_ctbn(
    g: &GlobalArgs,
    command: &str,
    parameters: serde_json::Value,
    model: &CtbnModel,
    evidence: &CtbnEvidence,
    t_max: f64,
    config: &ChainConfig,
    replications: usize,
) -> Result<()> {
    let mut batch = run_batch::<CtbnPath>(g.threads, replications, false, |r, sink| {
        run_ctbn_chain(model, evidence, t_max, config, r, g.timing, sink)
    })?;
    if let Some(last) = batch.runs.first().and_then(|r| r.final_state.as_ref()) {
        write_canonical_json(&g.out_dir.join("final_sample.json"), last)?;
    }
    write_run_outputs(g, command, parameters, config, &mut batch.runs)
}

fn run_single<R>(
    g: &GlobalArgs,
    command: &str,
    parameters: serde_json::Value,
    rates: &R,
    initial: &dyn InitialDist<R::State>,
    evidence: &Evidence<R::State>,
    t_max: f64,
    config: &ChainConfig,
    replications: usize,
    band: Option<usize>,
) -> Result<()>
where
    R: RateSpec + Sized,
    R::State: BandValues,
{
    let mut batch = run_batch::<Trajectory<R::State>>(g.threads, replications, band.is_some(), |r, sink| {
        run_mjp_chain(rates, initial, evidence, t_max, config, r, g.timing, sink)
    })?;
    if let Some(last) = batch.runs.first().and_then(|r| r.final_state.as_ref()) {
        write_canonical_json(&g.out_dir.join("final_sample.json"), last)?;
    }
    if let Some(points) = band {
        let samples: Vec<Trajectory<R::State>> = batch.samples.concat();
        write_band(&g.out_dir.join("band.csv"), &samples, t_max, points)?;
    }
    write_run_outputs(g, command, parameters, config, &mut batch.runs)
}

/// Per-state coordinates summarized in the posterior band.
trait BandValues: Copy {
    fn band_names() -> Vec<&'static str>;
    fn band_values(self) -> Vec<f64>;
}

impl BandValues for usize {
    fn band_names() -> Vec<&'static str> {
        vec!["state"]
    }
    fn band_values(self) -> Vec<f64> {
        vec![self as f64]
    }
}

impl BandValues for Population {
    fn band_names() -> Vec<&'static str> {
        vec!["prey", "predator"]
    }
    fn band_values(self) -> Vec<f64> {
        vec![self.prey as f64, self.predator as f64]
    }
}

/// Posterior mean and 5%/95% quantiles on an even grid over `[0, t_max]`.
fn write_band<S: crate::rates::State + BandValues>(
    path: &Path,
    samples: &[Trajectory<S>],
    t_max: f64,
    points: usize,
) -> Result<()> {
    if samples.is_empty() || points < 2 {
        return Ok(());
    }
    let grid: Vec<f64> = (0..points).map(|i| t_max * i as f64 / (points - 1) as f64).collect();
    let names = S::band_names();
    let mut columns = Vec::new();
    for c in 0..names.len() {
        let quantiles = grid_quantiles(samples, &grid, |s| s.band_values()[c], &[0.05, 0.5, 0.95]);
        let mean = grid_summary(samples, &grid, |s| s.band_values()[c]).mean;
        columns.push((quantiles, mean));
    }
    let mut w = csv::Writer::from_writer(fs::File::create(path)?);
    let mut header = vec!["t".to_string()];
    for n in &names {
        for suffix in ["q05", "median", "q95", "mean"] {
            header.push(format!("{n}_{suffix}"));
        }
    }
    w.write_record(&header)?;
    for (i, t) in grid.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        for (quantiles, mean) in &columns {
            rec.extend(quantiles.iter().map(|q| q[i].to_string()));
            rec.push(mean[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn infer_command(g: &GlobalArgs, model: &ModelFile, entries: &[EvidenceEntry]) -> Result<()> {
    let reps = g.replications.unwrap_or(1);
    let t_max = model.t_max();
    match model {
        ModelFile::Ctbn { network, .. } => {
            let m = network.build()?;
            let evidence = ctbn_evidence(entries, &m, t_max)?;
            let config = chain_config(g, default_config(PolicySpec::ScaledExit { factor: 2.0 }))?;
            run_ctbn(g, "infer", json!({"model": "ctbn"}), &m, &evidence, t_max, &config, reps)
        }
        ModelFile::Mjp { rates, initial, .. } => {
            let q = dense_rates(rates, initial)?;
            let init = Categorical::new(initial.clone())?;
            let evidence = mjp_evidence(entries, q.num_states(), t_max)?;
            let config = chain_config(g, default_config(PolicySpec::ScaledExit { factor: 2.0 }))?;
            run_single(g, "infer", json!({"model": "mjp"}), &q, &init, &evidence, t_max, &config, reps, None)
        }
        ModelFile::LotkaVolterra { rates, initial, .. } => {
            let evidence = lotka_volterra_evidence(entries, t_max)?;
            let config = chain_config(g, default_config(PolicySpec::Homogeneous { theta: 30.0 }))?;
            let init = PointMass(*initial);
            run_single(
                g,
                "infer",
                json!({"model": "lotka_volterra"}),
                rates,
                &init,
                &evidence,
                t_max,
                &config,
                reps,
                Some(301),
            )
        }
    }
}

fn write_ctbn_preset(g: &GlobalArgs, p: &CtbnPreset) -> Result<()> {
    write_canonical_json(
        &g.out_dir.join("model.json"),
        &ModelFile::Ctbn {
            t_max: p.t_max,
            network: p.spec.clone(),
        },
    )?;
    write_canonical_json(&g.out_dir.join("evidence.json"), &p.evidence_entries)?;
    write_canonical_json(&g.out_dir.join("truth.json"), &p.truth)
}

fn experiment_command(g: &GlobalArgs, data_seed: u64, preset: &PresetCommand) -> Result<()> {
    match preset {
        PresetCommand::Toy => {
            let p = preset_toy(data_seed)?;
            write_ctbn_preset(g, &p)?;
            let config = chain_config(g, p.config.clone())?;
            let params = json!({"preset": "toy", "data_seed": data_seed});
            run_ctbn(g, "experiment", params, &p.model, &p.evidence, p.t_max, &config, g.replications.unwrap_or(p.replications))
        }
        PresetCommand::Chain { nodes, states, horizon } => {
            let p = preset_chain(*nodes, *states, *horizon, data_seed)?;
            write_ctbn_preset(g, &p)?;
            let config = chain_config(g, p.config.clone())?;
            let params = json!({"preset": "chain", "M": nodes, "S": states, "T": horizon, "data_seed": data_seed});
            run_ctbn(g, "experiment", params, &p.model, &p.evidence, p.t_max, &config, g.replications.unwrap_or(p.replications))
        }
        PresetCommand::LotkaVolterra {
            horizon,
            observed_until,
            observations,
            band_points,
        } => {
            let setup = LotkaVolterraSetup {
                horizon: *horizon,
                observed_until: *observed_until,
                observations: *observations,
                ..LotkaVolterraSetup::default()
            };
            let p = preset_lotka_volterra(setup, data_seed)?;
            write_canonical_json(
                &g.out_dir.join("model.json"),
                &ModelFile::LotkaVolterra {
                    t_max: setup.horizon,
                    rates: p.rates,
                    initial: setup.initial,
                },
            )?;
            write_canonical_json(&g.out_dir.join("evidence.json"), &p.evidence_entries)?;
            write_canonical_json(&g.out_dir.join("truth.json"), &p.truth)?;
            let config = chain_config(g, p.config.clone())?;
            let params = json!({
                "preset": "lotka_volterra",
                "horizon": horizon,
                "observed_until": observed_until,
                "observations": observations,
                "initial": setup.initial,
                "data_seed": data_seed,
            });
            run_single(
                g,
                "experiment",
                params,
                &p.rates,
                &p.initial,
                &p.evidence,
                setup.horizon,
                &config,
                g.replications.unwrap_or(1),
                Some(*band_points),
            )
        }
    }
}

fn diag_command(g: &GlobalArgs, stats: &Path) -> Result<()> {
    let rows = read_stats_csv(fs::File::open(stats)?)?;
    let ess = summarize_rows(&rows)?;
    let mut per_rep: BTreeMap<usize, usize> = BTreeMap::new();
    for r in &rows {
        per_rep.entry(r.replication).or_default();
    }
    let summary = json!({
        "ess": ess,
        "replications": per_rep.len(),
        "statistics": replication_statistics(&rows, &[]),
    });
    write_canonical_json(&g.out_dir.join("diag.json"), &summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_flag_parses() {
        assert_eq!(parse_policy("uniformization:20"), Ok(PolicySpec::Uniformization { lambda: 20.0 }));
        assert_eq!(parse_policy("homogeneous:10"), Ok(PolicySpec::Homogeneous { theta: 10.0 }));
        assert_eq!(parse_policy("scaled:2"), Ok(PolicySpec::ScaledExit { factor: 2.0 }));
        assert!(parse_policy("uniform:2").is_err());
        assert!(parse_policy("homogeneous").is_err());
    }

    #[test]
    fn overrides_apply_on_top_of_presets() {
        let cli = Cli::try_parse_from([
            "mjp-pgas", "experiment", "toy", "--method", "pgas", "--particles", "2", "--iters", "50", "--burnin", "5",
        ])
        .unwrap();
        let base = preset_toy(0).unwrap().config;
        let c = chain_config(&cli.global, base).unwrap();
        assert_eq!(c.method, Method::Pgas { particles: 2 });
        assert_eq!((c.iterations, c.burn_in), (50, 5));
        assert_eq!(c.policy, PolicySpec::Uniformization { lambda: 20.0 });
    }

    #[test]
    fn chain_flags_are_uppercase() {
        let cli = Cli::try_parse_from(["mjp-pgas", "experiment", "chain", "--S", "10", "--M", "4", "--T", "2.5"]).unwrap();
        match cli.command {
            Command::Experiment {
                preset: PresetCommand::Chain { nodes, states, horizon },
                ..
            } => assert_eq!((nodes, states, horizon), (4, 10, 2.5)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_arguments_exit_with_two() {
        assert_eq!(cli_main(["mjp-pgas", "experiment", "toy", "--virtual", "bogus:1"]), 2);
        assert_eq!(cli_main(["mjp-pgas", "frobnicate"]), 2);
    }
}

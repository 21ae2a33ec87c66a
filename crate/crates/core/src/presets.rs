//! Ready-made experiments: the two-node toy network, the chain network and
//! the Lotka–Volterra predator–prey process.

use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ctbn::{simulate_ctbn, CimRule, CimSpec, CtbnInitial, CtbnModel, CtbnPath, CtbnSpec, NodeSpec};
use crate::error::{Error, Result};
use crate::io::{ctbn_evidence, lotka_volterra_evidence, EvidenceEntry, LoglikSpec, NamedLikelihood};
use crate::lotka_volterra::{sample_observation, LotkaVolterraRates, Population};
use crate::mcmc::{ChainConfig, CtbnEvidence, Method, NodeOrder, PolicySpec};
use crate::observation::Evidence;
use crate::rates::RateSpec;
use crate::simulate::{simulate_gillespie, PointMass};
use crate::trajectory::Trajectory;

/// Head node of the chain network: rate 1/2 to `(x + 1) mod S` and
/// `1 / (2 (S - 2))` to every other state.
#[derive(Debug, Clone, Copy)]
pub struct ChainHeadRates {
    states: usize,
}

impl ChainHeadRates {
    pub fn new(states: usize) -> Result<Self> {
        if states < 2 {
            return Err(Error::InvalidModel("chain nodes need at least 2 states".into()));
        }
        Ok(Self { states })
    }

    fn other(&self) -> f64 {
        if self.states > 2 {
            0.5 / (self.states - 2) as f64
        } else {
            0.0
        }
    }
}

impl RateSpec for ChainHeadRates {
    type State = usize;

    fn rate(&self, from: usize, to: usize) -> f64 {
        if from == to || to >= self.states {
            0.0
        } else if to == (from + 1) % self.states {
            0.5
        } else {
            self.other()
        }
    }

    fn exit_rate(&self, _s: usize) -> f64 {
        if self.states > 2 {
            1.0
        } else {
            0.5
        }
    }

    fn targets(&self, s: usize) -> Vec<(usize, f64)> {
        (0..self.states)
            .filter(|&t| t != s)
            .map(|t| (t, self.rate(s, t)))
            .filter(|(_, r)| *r > 0.0)
            .collect()
    }

    fn sample_target(&self, s: usize, rng: &mut dyn RngCore) -> Option<usize> {
        let next = (s + 1) % self.states;
        if self.states == 2 || rng.random::<f64>() < 0.5 {
            return Some(next);
        }
        // uniform over the S - 2 states other than s and next
        let mut t = rng.random_range(0..self.states - 2);
        let (lo, hi) = if s < next { (s, next) } else { (next, s) };
        if t >= lo {
            t += 1;
        }
        if t >= hi {
            t += 1;
        }
        Some(t)
    }

    fn max_exit_rate(&self) -> Option<f64> {
        Some(self.exit_rate(0))
    }

    fn states(&self) -> Option<Vec<usize>> {
        Some((0..self.states).collect())
    }
}

/// Follower node of the chain network given its parent's state `p`: from
/// `x = p` rate `1 / (S - 1)` to every other state; from `x != p` rate 1
/// to `p` and `1 / (S - 2)` to the rest. With two states the move back to
/// the parent has rate 2, so the exit rate away from the parent stays 2.
#[derive(Debug, Clone, Copy)]
pub struct ChainFollowerRates {
    states: usize,
    parent: usize,
}

impl ChainFollowerRates {
    pub fn new(states: usize, parent: usize) -> Result<Self> {
        if states < 2 || parent >= states {
            return Err(Error::InvalidModel(format!("follower with {states} states and parent {parent}")));
        }
        Ok(Self { states, parent })
    }
}

impl RateSpec for ChainFollowerRates {
    type State = usize;

    fn rate(&self, from: usize, to: usize) -> f64 {
        let s = self.states;
        if from == to || to >= s {
            0.0
        } else if from == self.parent {
            1.0 / (s - 1) as f64
        } else if to == self.parent {
            if s == 2 {
                2.0
            } else {
                1.0
            }
        } else {
            1.0 / (s - 2) as f64
        }
    }

    fn exit_rate(&self, x: usize) -> f64 {
        if x == self.parent {
            1.0
        } else {
            2.0
        }
    }

    fn targets(&self, x: usize) -> Vec<(usize, f64)> {
        (0..self.states)
            .filter(|&t| t != x)
            .map(|t| (t, self.rate(x, t)))
            .collect()
    }

    fn sample_target(&self, x: usize, rng: &mut dyn RngCore) -> Option<usize> {
        let s = self.states;
        if x == self.parent {
            let mut t = rng.random_range(0..s - 1);
            if t >= x {
                t += 1;
            }
            return Some(t);
        }
        if s == 2 || rng.random::<f64>() < 0.5 {
            return Some(self.parent);
        }
        let mut t = rng.random_range(0..s - 2);
        let (lo, hi) = if x < self.parent { (x, self.parent) } else { (self.parent, x) };
        if t >= lo {
            t += 1;
        }
        if t >= hi {
            t += 1;
        }
        Some(t)
    }

    fn max_exit_rate(&self) -> Option<f64> {
        Some(2.0)
    }

    fn states(&self) -> Option<Vec<usize>> {
        Some((0..self.states).collect())
    }
}

/// A network experiment: model, synthetic evidence, the path it was drawn
/// from and default run settings.
#[derive(Clone)]
pub struct CtbnPreset {
    pub name: String,
    pub spec: CtbnSpec,
    pub model: CtbnModel,
    pub t_max: f64,
    pub truth: CtbnPath,
    pub evidence_entries: Vec<EvidenceEntry>,
    pub evidence: CtbnEvidence,
    pub config: ChainConfig,
    pub replications: usize,
}

fn exact_endpoints(w: usize, path: &Trajectory<usize>) -> [EvidenceEntry; 2] {
    [(0.0, path.s0()), (path.t_max(), path.final_state())].map(|(t, state)| EvidenceEntry::Point {
        t,
        node: Some(w),
        loglik: LoglikSpec::Rule(NamedLikelihood::Exact { state }),
    })
}

/// Stream reserved for generating data, so that no chain replication ever
/// replays the draw that produced its evidence.
fn data_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    rng
}

fn table(m: &[[f64; 2]; 2]) -> Vec<Vec<f64>> {
    m.iter().map(|r| r.to_vec()).collect()
}

/// Two binary nodes `X -> Y` on `[0, 1]`. `X` flips at rate 10; `Y` flips at
/// rate 10 while `X` is in its first state and at rate 100 otherwise. `Y` is
/// observed throughout, `X` only at both ends. The evidence is drawn from
/// the prior with `seed`.
pub fn preset_toy(seed: u64) -> Result<CtbnPreset> {
    let spec = CtbnSpec {
        nodes: vec![
            NodeSpec {
                name: "X".into(),
                states: 2,
                cim: CimSpec::Table(BTreeMap::from([("0".into(), table(&[[-10.0, 10.0], [10.0, -10.0]]))])),
            },
            NodeSpec {
                name: "Y".into(),
                states: 2,
                cim: CimSpec::Table(BTreeMap::from([
                    ("0".into(), table(&[[-10.0, 10.0], [10.0, -10.0]])),
                    ("1".into(), table(&[[-100.0, 100.0], [100.0, -100.0]])),
                ])),
            },
        ],
        edges: vec![(0, 1)],
        initial: CtbnInitial::Product(vec![vec![0.5, 0.5], vec![0.5, 0.5]]),
    };
    let model = spec.build()?;
    let t_max = 1.0;
    let mut rng = data_rng(seed);
    let truth = simulate_ctbn(&model, t_max, &mut rng)?;
    let mut evidence_entries = exact_endpoints(0, truth.node(0)).to_vec();
    evidence_entries.push(EvidenceEntry::ChildProcess {
        node: Some(1),
        trajectory: truth.node(1).clone(),
        cim: None,
    });
    let evidence = ctbn_evidence(&evidence_entries, &model, t_max)?;
    Ok(CtbnPreset {
        name: "toy".into(),
        spec,
        model,
        t_max,
        truth,
        evidence_entries,
        evidence,
        config: ChainConfig {
            method: Method::Pgas { particles: 4 },
            policy: PolicySpec::Uniformization { lambda: 20.0 },
            node_policies: None,
            iterations: 1000,
            burn_in: 100,
            thin: 1,
            seed,
            node_order: NodeOrder::Fixed,
        },
        replications: 100,
    })
}

/// The chain network `1 -> 2 -> ... -> M` with `S` states per node on
/// `[0, T]`, every node observed exactly at both ends. Uniformization on
/// each parent segment runs at twice the largest exit rate.
pub fn preset_chain(nodes: usize, states: usize, horizon: f64, seed: u64) -> Result<CtbnPreset> {
    if nodes == 0 || states < 2 || !(horizon > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "chain needs M >= 1, S >= 2, T > 0 (got {nodes}, {states}, {horizon})"
        )));
    }
    let spec = CtbnSpec {
        nodes: (0..nodes)
            .map(|m| NodeSpec {
                name: format!("node{}", m + 1),
                states,
                cim: CimSpec::Rule(if m == 0 { CimRule::ChainHead } else { CimRule::ChainFollower }),
            })
            .collect(),
        edges: (1..nodes).map(|m| (m - 1, m)).collect(),
        initial: CtbnInitial::Product(vec![vec![1.0 / states as f64; states]; nodes]),
    };
    let model = spec.build()?;
    let mut rng = data_rng(seed);
    let truth = simulate_ctbn(&model, horizon, &mut rng)?;
    let evidence_entries: Vec<EvidenceEntry> = (0..nodes).flat_map(|w| exact_endpoints(w, truth.node(w))).collect();
    let evidence = ctbn_evidence(&evidence_entries, &model, horizon)?;
    Ok(CtbnPreset {
        name: "chain".into(),
        spec,
        model,
        t_max: horizon,
        truth,
        evidence_entries,
        evidence,
        config: ChainConfig {
            method: Method::Pgas { particles: 10 },
            policy: PolicySpec::ScaledExit { factor: 2.0 },
            node_policies: None,
            iterations: 1000,
            burn_in: 100,
            thin: 1,
            seed,
            node_order: NodeOrder::Fixed,
        },
        replications: 20,
    })
}

/// Settings of the predator–prey experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LotkaVolterraSetup {
    pub horizon: f64,
    /// Observations are evenly spaced on `[0, observed_until]`, both ends
    /// included.
    pub observed_until: f64,
    pub observations: usize,
    pub initial: Population,
}

impl Default for LotkaVolterraSetup {
    fn default() -> Self {
        Self {
            horizon: 3000.0,
            observed_until: 1500.0,
            observations: 50,
            initial: Population::new(20, 5),
        }
    }
}

pub struct LotkaVolterraPreset {
    pub setup: LotkaVolterraSetup,
    pub rates: LotkaVolterraRates,
    pub initial: PointMass<Population>,
    pub truth: Trajectory<Population>,
    pub observations: Vec<(f64, [u32; 2])>,
    pub evidence_entries: Vec<EvidenceEntry>,
    pub evidence: Evidence<Population>,
    pub config: ChainConfig,
}

pub fn lotka_volterra_rates() -> LotkaVolterraRates {
    LotkaVolterraRates {
        alpha: 5e-4,
        beta: 1e-4,
        delta: 1e-4,
        gamma: 5e-4,
    }
}

pub fn preset_lotka_volterra(setup: LotkaVolterraSetup, seed: u64) -> Result<LotkaVolterraPreset> {
    if !(setup.horizon > 0.0 && setup.observed_until <= setup.horizon && setup.observed_until >= 0.0) {
        return Err(Error::InvalidConfig("observation window must lie inside the horizon".into()));
    }
    let rates = lotka_volterra_rates();
    let initial = PointMass(setup.initial);
    let mut rng = data_rng(seed);
    let truth = simulate_gillespie(&rates, &initial, setup.horizon, &mut rng)?;
    let times: Vec<f64> = match setup.observations {
        0 => vec![],
        1 => vec![0.0],
        n => (0..n).map(|i| setup.observed_until * i as f64 / (n - 1) as f64).collect(),
    };
    let observations: Vec<(f64, [u32; 2])> = times
        .iter()
        .map(|&t| {
            let s = truth.state_at(t);
            (t, [sample_observation(s.prey, &mut rng), sample_observation(s.predator, &mut rng)])
        })
        .collect();
    let evidence_entries: Vec<EvidenceEntry> = observations
        .iter()
        .map(|&(t, obs)| EvidenceEntry::Point {
            t,
            node: None,
            loglik: LoglikSpec::Rule(NamedLikelihood::RaoTehLv { obs }),
        })
        .collect();
    let evidence = lotka_volterra_evidence(&evidence_entries, setup.horizon)?;
    Ok(LotkaVolterraPreset {
        setup,
        rates,
        initial,
        truth,
        observations,
        evidence_entries,
        evidence,
        config: ChainConfig {
            method: Method::Pgas { particles: 100 },
            policy: PolicySpec::Homogeneous { theta: 30.0 },
            node_policies: None,
            iterations: 1000,
            burn_in: 100,
            thin: 1,
            seed,
            node_order: NodeOrder::Fixed,
        },
    })
}

//! File formats: canonical JSON, the statistics CSV, model files and
//! evidence files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ctbn::{CtbnModel, CtbnSpec};
use crate::diagnostics::StatRow;
use crate::error::{Error, Result};
use crate::lotka_volterra::{observation_loglik, LotkaVolterraRates, Population};
use crate::mcmc::CtbnEvidence;
use crate::observation::{ChildProcessEvidence, Evidence, PointEvidence, PointObservation};
use crate::rates::{DenseRates, RateSpec, SharedRates};
use crate::trajectory::Trajectory;

/// Serializes with sorted object keys and every float written with 17
/// significant digits. Non-finite floats become `null`.
pub fn to_canonical_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&v, &mut out);
    out.push('\n');
    Ok(out)
}

fn write_value(v: &Value, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                let x = n.as_f64().expect("f64 number");
                if x.is_finite() {
                    let _ = write!(out, "{x:.16e}");
                } else {
                    out.push_str("null");
                }
            } else {
                let _ = write!(out, "{n}");
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let sorted: BTreeMap<&String, &Value> = map.iter().collect();
            out.push('{');
            for (i, (k, item)) in sorted.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_value(item, out);
            }
            out.push('}');
        }
    }
}

pub fn write_canonical_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_canonical_json(value)?)?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let mut text = String::new();
    fs::File::open(path)?.read_to_string(&mut text)?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes statistics rows with the header
/// `replication,iteration,node,state,occupation_time,jump_count,wall_ms`.
pub fn write_stats_csv<W: Write>(writer: W, rows: &[StatRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if rows.is_empty() {
        w.write_record(["replication", "iteration", "node", "state", "occupation_time", "jump_count", "wall_ms"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_stats_csv<R: Read>(reader: R) -> Result<Vec<StatRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

/// A model file. `kind` selects the model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelFile {
    /// A network of jump processes.
    Ctbn { t_max: f64, network: CtbnSpec },
    /// A single process on `0..n` with a dense rate matrix (diagonal
    /// ignored) and an initial distribution.
    Mjp {
        t_max: f64,
        rates: Vec<Vec<f64>>,
        initial: Vec<f64>,
    },
    /// Predator–prey process started at a known population.
    LotkaVolterra {
        t_max: f64,
        rates: LotkaVolterraRates,
        initial: Population,
    },
}

impl ModelFile {
    pub fn t_max(&self) -> f64 {
        match self {
            ModelFile::Ctbn { t_max, .. } | ModelFile::Mjp { t_max, .. } | ModelFile::LotkaVolterra { t_max, .. } => {
                *t_max
            }
        }
    }
}

/// Named likelihood rules usable in point observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum NamedLikelihood {
    /// The state is known exactly.
    Exact { state: usize },
    /// Noisy predator–prey count pair: `-log(2^|x - o| + 1e-6)` summed over
    /// both populations.
    RaoTehLv { obs: [u32; 2] },
}

/// A log-likelihood given as a table over states (`null` meaning `-inf`) or
/// a named rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LoglikSpec {
    Table(Vec<Option<f64>>),
    Rule(NamedLikelihood),
}

/// One entry of an evidence file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvidenceEntry {
    Point {
        t: f64,
        /// Observed node of a network; absent for single processes.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        node: Option<usize>,
        loglik: LoglikSpec,
    },
    /// A fully observed process. In a network file `node` names the
    /// observed node and its rates come from the model; for a single
    /// process `cim` holds the child's rate matrices keyed by the parent
    /// state.
    ChildProcess {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        node: Option<usize>,
        trajectory: Trajectory<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cim: Option<BTreeMap<String, Vec<Vec<f64>>>>,
    },
}

fn finite_loglik(spec: &LoglikSpec, t: f64) -> Result<PointObservation<usize>> {
    Ok(match spec {
        LoglikSpec::Table(v) => {
            PointObservation::table(t, v.iter().map(|x| x.unwrap_or(f64::NEG_INFINITY)).collect())
        }
        LoglikSpec::Rule(NamedLikelihood::Exact { state }) => PointObservation::exact(t, *state),
        LoglikSpec::Rule(rule) => {
            return Err(Error::InvalidEvidence(format!("rule {rule:?} does not apply to a finite state space")))
        }
    })
}

/// Evidence for a network model.
pub fn ctbn_evidence(entries: &[EvidenceEntry], model: &CtbnModel, t_max: f64) -> Result<CtbnEvidence> {
    let m = model.num_nodes();
    let mut points: Vec<Vec<PointObservation<usize>>> = vec![Vec::new(); m];
    let mut evidence = CtbnEvidence::none(m);
    for e in entries {
        match e {
            EvidenceEntry::Point { t, node, loglik } => {
                let w = node.ok_or_else(|| Error::InvalidEvidence("network observation without a node".into()))?;
                if w >= m {
                    return Err(Error::InvalidEvidence(format!("node {w} does not exist")));
                }
                if !(0.0..=t_max).contains(t) {
                    return Err(Error::ObservationOutOfRange { time: *t, t_max });
                }
                points[w].push(finite_loglik(loglik, *t)?);
            }
            EvidenceEntry::ChildProcess { node, trajectory, .. } => {
                let w = node.ok_or_else(|| Error::InvalidEvidence("observed path without a node".into()))?;
                if w >= m {
                    return Err(Error::InvalidEvidence(format!("node {w} does not exist")));
                }
                if trajectory.t_max() != t_max {
                    return Err(Error::InvalidEvidence(format!("observed path of node {w} has another horizon")));
                }
                if trajectory.jumps().iter().any(|&(_, s)| s >= model.sizes()[w]) || trajectory.s0() >= model.sizes()[w] {
                    return Err(Error::InvalidEvidence(format!("observed path of node {w} leaves its state space")));
                }
                evidence.observed[w] = Some(trajectory.clone());
            }
        }
    }
    for (w, obs) in points.into_iter().enumerate() {
        evidence.points[w] = PointEvidence::new(obs)?;
    }
    Ok(evidence)
}

/// Evidence for a single finite process.
pub fn mjp_evidence(entries: &[EvidenceEntry], states: usize, t_max: f64) -> Result<Evidence<usize>> {
    let mut points = Vec::new();
    let mut children = Vec::new();
    for e in entries {
        match e {
            EvidenceEntry::Point { t, loglik, .. } => {
                if !(0.0..=t_max).contains(t) {
                    return Err(Error::ObservationOutOfRange { time: *t, t_max });
                }
                points.push(finite_loglik(loglik, *t)?);
            }
            EvidenceEntry::ChildProcess { trajectory, cim, .. } => {
                let table = cim
                    .as_ref()
                    .ok_or_else(|| Error::InvalidEvidence("observed child needs a `cim` table".into()))?;
                let cims = (0..states)
                    .map(|p| {
                        let m = table
                            .get(&p.to_string())
                            .ok_or(Error::UnknownParentConfig { node: 1, code: p })?;
                        Ok(Arc::new(DenseRates::new(m.clone())?) as SharedRates)
                    })
                    .collect::<Result<Vec<_>>>()?;
                if trajectory.t_max() != t_max {
                    return Err(Error::InvalidEvidence("observed child has another horizon".into()));
                }
                children.push(ChildProcessEvidence::new(trajectory.clone(), cims));
            }
        }
    }
    Ok(Evidence {
        points: PointEvidence::new(points)?,
        children,
    })
}

/// Evidence for the predator–prey model.
pub fn lotka_volterra_evidence(entries: &[EvidenceEntry], t_max: f64) -> Result<Evidence<Population>> {
    let mut points = Vec::new();
    for e in entries {
        match e {
            EvidenceEntry::Point {
                t,
                loglik: LoglikSpec::Rule(NamedLikelihood::RaoTehLv { obs }),
                ..
            } => {
                if !(0.0..=t_max).contains(t) {
                    return Err(Error::ObservationOutOfRange { time: *t, t_max });
                }
                let obs = *obs;
                points.push(PointObservation::new(*t, move |s: Population| observation_loglik(s, obs)));
            }
            other => {
                return Err(Error::InvalidEvidence(format!(
                    "predator–prey evidence takes only rao_teh_lv point observations, got {other:?}"
                )))
            }
        }
    }
    Ok(Evidence::points(PointEvidence::new(points)?))
}

/// Rate matrix of a single-process model file, checked for shape.
pub fn dense_rates(rates: &[Vec<f64>], initial: &[f64]) -> Result<DenseRates> {
    let q = DenseRates::new(rates.to_vec())?;
    if initial.len() != q.num_states() {
        return Err(Error::InvalidModel(format!(
            "initial distribution has {} entries for {} states",
            initial.len(),
            q.num_states()
        )));
    }
    let _ = q.max_exit_rate();
    Ok(q)
}

//! Continuous-time Bayesian networks.
//!
//! Each node is a jump process whose intensity matrix depends on the
//! current configuration of its parents. Parent configurations are encoded
//! as mixed-radix integers (first parent least significant), and every node
//! stores one rate specification per code.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::density::log_density_path;
use crate::error::{Error, Result};
use crate::observation::ChildProcessEvidence;
use crate::process::{PiecewiseProcess, Segment};
use crate::rates::{AugmentationPolicy, DenseRates, RateSpec, SharedRates};
use crate::simulate::{exp_wait, Categorical, InitialDist, PointMass, DEFAULT_JUMP_CAP};
use crate::trajectory::Trajectory;

/// Initial distribution on the product space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CtbnInitial {
    /// Independent node marginals.
    Product(Vec<Vec<f64>>),
    /// A fixed joint state.
    PointMass(Vec<usize>),
}

#[derive(Clone)]
pub struct CtbnModel {
    names: Vec<String>,
    sizes: Vec<usize>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
    cims: Vec<Vec<SharedRates>>,
    initial: CtbnInitial,
    node_initials: Vec<Arc<dyn InitialDist<usize>>>,
}

impl std::fmt::Debug for CtbnModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CtbnModel")
            .field("names", &self.names)
            .field("sizes", &self.sizes)
            .field("parents", &self.parents)
            .finish()
    }
}

impl CtbnModel {
    /// `parents[w]` lists the parents of `w` in code order; `cims[w][c]` is
    /// the rate specification of `w` under parent code `c`.
    pub fn new(
        names: Vec<String>,
        sizes: Vec<usize>,
        parents: Vec<Vec<usize>>,
        cims: Vec<Vec<SharedRates>>,
        initial: CtbnInitial,
    ) -> Result<Self> {
        let m = sizes.len();
        if names.len() != m || parents.len() != m || cims.len() != m {
            return Err(Error::InvalidModel("per-node lists differ in length".into()));
        }
        let mut children = vec![Vec::new(); m];
        for (w, pa) in parents.iter().enumerate() {
            let mut seen = pa.clone();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != pa.len() || pa.iter().any(|&p| p >= m || p == w) {
                return Err(Error::InvalidModel(format!("bad parent list for node {w}")));
            }
            for &p in pa {
                children[p].push(w);
            }
            let configs: usize = pa.iter().map(|&p| sizes[p]).product();
            if cims[w].len() != configs {
                return Err(Error::InvalidModel(format!(
                    "node {w} has {} intensity matrices for {configs} parent configurations",
                    cims[w].len()
                )));
            }
            for (c, r) in cims[w].iter().enumerate() {
                if let Some(states) = r.states() {
                    if states.len() != sizes[w] {
                        return Err(Error::InvalidModel(format!(
                            "node {w}, parent code {c}: {} states, expected {}",
                            states.len(),
                            sizes[w]
                        )));
                    }
                }
            }
        }
        let node_initials: Vec<Arc<dyn InitialDist<usize>>> = match &initial {
            CtbnInitial::Product(ps) => {
                if ps.len() != m || ps.iter().zip(&sizes).any(|(p, &s)| p.len() != s) {
                    return Err(Error::InvalidModel("initial marginals do not match the nodes".into()));
                }
                ps.iter()
                    .map(|p| Categorical::new(p.clone()).map(|c| Arc::new(c) as Arc<dyn InitialDist<usize>>))
                    .collect::<Result<_>>()?
            }
            CtbnInitial::PointMass(v) => {
                if v.len() != m || v.iter().zip(&sizes).any(|(&x, &s)| x >= s) {
                    return Err(Error::InvalidModel("initial state does not match the nodes".into()));
                }
                v.iter()
                    .map(|&x| Arc::new(PointMass(x)) as Arc<dyn InitialDist<usize>>)
                    .collect()
            }
        };
        Ok(Self {
            names,
            sizes,
            parents,
            children,
            cims,
            initial,
            node_initials,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.sizes.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn parents(&self, w: usize) -> &[usize] {
        &self.parents[w]
    }

    pub fn children(&self, w: usize) -> &[usize] {
        &self.children[w]
    }

    pub fn cims(&self, w: usize) -> &[SharedRates] {
        &self.cims[w]
    }

    pub fn initial(&self) -> &CtbnInitial {
        &self.initial
    }

    /// Marginal initial law of node `w`.
    pub fn node_initial(&self, w: usize) -> &dyn InitialDist<usize> {
        &*self.node_initials[w]
    }

    pub fn log_initial(&self, state: &[usize]) -> f64 {
        state
            .iter()
            .enumerate()
            .map(|(w, &x)| self.node_initials[w].log_prob(x))
            .sum()
    }

    /// Multiplier of the `j`-th parent of `w` in the parent code.
    pub fn parent_stride(&self, w: usize, j: usize) -> usize {
        self.parents[w][..j].iter().map(|&p| self.sizes[p]).product()
    }

    /// Parent code of `w` in the joint state `x`.
    pub fn parent_code(&self, w: usize, x: &[usize]) -> usize {
        let mut code = 0;
        let mut stride = 1;
        for &p in &self.parents[w] {
            code += x[p] * stride;
            stride *= self.sizes[p];
        }
        code
    }

    pub fn rates(&self, w: usize, code: usize) -> Result<&SharedRates> {
        self.cims[w].get(code).ok_or(Error::UnknownParentConfig { node: w, code })
    }

    /// Number of joint states.
    pub fn joint_size(&self) -> f64 {
        self.sizes.iter().map(|&s| s as f64).product()
    }
}

/// Joint path of all nodes on a common horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CtbnPath {
    paths: Vec<Trajectory<usize>>,
}

impl CtbnPath {
    /// Rejects differing horizons and jumps of two nodes at the same time.
    pub fn new(paths: Vec<Trajectory<usize>>) -> Result<Self> {
        let t_max = paths
            .first()
            .map(|p| p.t_max())
            .ok_or_else(|| Error::InvalidTrajectory("empty network path".into()))?;
        if paths.iter().any(|p| p.t_max() != t_max) {
            return Err(Error::InvalidTrajectory("node paths have different horizons".into()));
        }
        let mut times: Vec<f64> = paths.iter().flat_map(|p| p.jump_times()).collect();
        times.sort_by(f64::total_cmp);
        if let Some(w) = times.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::SimultaneousJump { time: w[0] });
        }
        Ok(Self { paths })
    }

    pub fn t_max(&self) -> f64 {
        self.paths[0].t_max()
    }

    pub fn node(&self, w: usize) -> &Trajectory<usize> {
        &self.paths[w]
    }

    pub fn nodes(&self) -> &[Trajectory<usize>] {
        &self.paths
    }

    pub fn initial_state(&self) -> Vec<usize> {
        self.paths.iter().map(|p| p.s0()).collect()
    }

    pub fn state_at(&self, t: f64) -> Vec<usize> {
        self.paths.iter().map(|p| p.state_at(t)).collect()
    }

    /// Replaces the path of node `w`, re-checking for simultaneous jumps.
    pub fn with_node(&self, w: usize, path: Trajectory<usize>) -> Result<Self> {
        let mut paths = self.paths.clone();
        paths[w] = path;
        Self::new(paths)
    }
}

impl<'de> Deserialize<'de> for CtbnPath {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            paths: Vec<Trajectory<usize>>,
        }
        let raw = Raw::deserialize(d)?;
        CtbnPath::new(raw.paths).map_err(serde::de::Error::custom)
    }
}

/// Piecewise-constant code of a subset of the parents of `w`, as
/// `(from_time, code)` pairs starting at 0. Parents listed in `skip` are
/// left out of the code.
fn code_segments(model: &CtbnModel, w: usize, path: &CtbnPath, skip: Option<usize>) -> Vec<(f64, usize)> {
    let pa = model.parents(w);
    let strides: Vec<usize> = (0..pa.len()).map(|j| model.parent_stride(w, j)).collect();
    let mut events: Vec<(f64, usize, usize)> = Vec::new();
    let mut code = 0;
    for (j, &p) in pa.iter().enumerate() {
        if Some(p) == skip {
            continue;
        }
        let traj = path.node(p);
        code += traj.s0() * strides[j];
        events.extend(traj.jumps().iter().map(|&(t, s)| (t, j, s)));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut current: Vec<usize> = pa.iter().map(|&p| path.node(p).s0()).collect();
    let mut out = vec![(0.0, code)];
    for (t, j, s) in events {
        code = code + s * strides[j] - current[j] * strides[j];
        current[j] = s;
        out.push((t, code));
    }
    out
}

/// Parent-configuration segments of node `w`: `(start, code)` pairs.
pub fn parent_segments(model: &CtbnModel, w: usize, path: &CtbnPath) -> Vec<(f64, usize)> {
    code_segments(model, w, path, None)
}

/// The node process of `w` given its parents' paths, with one policy per
/// segment chosen from that segment's rates.
pub fn node_process<'m>(
    model: &'m CtbnModel,
    w: usize,
    segments: &[(f64, usize)],
    t_max: f64,
    mut policy: impl FnMut(&dyn RateSpec<State = usize>) -> Result<AugmentationPolicy>,
) -> Result<PiecewiseProcess<'m, usize>> {
    let segs = segments
        .iter()
        .map(|&(start, code)| {
            let rates: &dyn RateSpec<State = usize> = &**model.rates(w, code)?;
            Ok(Segment {
                start,
                rates,
                policy: policy(rates)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PiecewiseProcess::new(t_max, segs)
}

/// Log-density of node `w`'s path given its parents' paths.
pub fn log_density_node_given_parents(model: &CtbnModel, w: usize, path: &CtbnPath) -> Result<f64> {
    let segments = parent_segments(model, w, path);
    let process = node_process(model, w, &segments, path.t_max(), |_| {
        Ok(AugmentationPolicy::Homogeneous { theta: 0.0 })
    })?;
    log_density_path(&process, path.node(w))
}

/// Log-density of a joint path: `log nu(X(0))` plus the per-node terms.
pub fn log_density_ctbn(model: &CtbnModel, path: &CtbnPath) -> Result<f64> {
    let mut total = model.log_initial(&path.initial_state());
    for w in 0..model.num_nodes() {
        total += log_density_node_given_parents(model, w, path)?;
    }
    Ok(total)
}

/// The conditional law of one node's path given all other nodes: a
/// piecewise process over the parent segments, the node's initial law, and
/// one child-process likelihood per child.
pub struct NodeConditional<'m> {
    pub node: usize,
    pub t_max: f64,
    pub segments: Vec<(f64, usize)>,
    pub children: Vec<ChildProcessEvidence>,
    pub initial: &'m dyn InitialDist<usize>,
    model: &'m CtbnModel,
}

impl<'m> NodeConditional<'m> {
    pub fn process(
        &self,
        policy: impl FnMut(&dyn RateSpec<State = usize>) -> Result<AugmentationPolicy>,
    ) -> Result<PiecewiseProcess<'m, usize>> {
        node_process(self.model, self.node, &self.segments, self.t_max, policy)
    }
}

/// Builds the full conditional of node `w` given the rest of `path`.
pub fn node_full_conditional<'m>(model: &'m CtbnModel, w: usize, path: &CtbnPath) -> Result<NodeConditional<'m>> {
    let segments = parent_segments(model, w, path);
    for &(_, code) in &segments {
        model.rates(w, code)?;
    }
    let mut children = Vec::with_capacity(model.children(w).len());
    for &u in model.children(w) {
        let j = model.parents(u).iter().position(|&p| p == w).expect("child lists its parent");
        let stride = model.parent_stride(u, j);
        let base = code_segments(model, u, path, Some(w));
        children.push(ChildProcessEvidence::with_co_parents(
            path.node(u).clone(),
            model.cims(u).to_vec(),
            stride,
            base,
        )?);
    }
    Ok(NodeConditional {
        node: w,
        t_max: path.t_max(),
        segments,
        children,
        initial: model.node_initial(w),
        model,
    })
}

/// Forward simulation of the joint process.
pub fn simulate_ctbn(model: &CtbnModel, t_max: f64, rng: &mut dyn RngCore) -> Result<CtbnPath> {
    let x0: Vec<usize> = (0..model.num_nodes()).map(|w| model.node_initial(w).sample(rng)).collect();
    simulate_ctbn_from(model, &x0, t_max, rng)
}

/// Forward simulation from a given joint state.
pub fn simulate_ctbn_from(model: &CtbnModel, x0: &[usize], t_max: f64, rng: &mut dyn RngCore) -> Result<CtbnPath> {
    let m = model.num_nodes();
    if x0.len() != m || x0.iter().zip(model.sizes()).any(|(&x, &s)| x >= s) {
        return Err(Error::InvalidModel("initial state does not match the nodes".into()));
    }
    let mut x = x0.to_vec();
    let mut jumps: Vec<Vec<(f64, usize)>> = vec![Vec::new(); m];
    let s0 = x.clone();
    let mut t = 0.0;
    let mut count = 0usize;
    let mut exits = vec![0.0; m];
    loop {
        let mut total = 0.0;
        for w in 0..m {
            exits[w] = model.rates(w, model.parent_code(w, &x))?.exit_rate(x[w]);
            total += exits[w];
        }
        if total <= 0.0 {
            break;
        }
        t += exp_wait(total, rng);
        if t >= t_max {
            break;
        }
        let mut u = rng.random::<f64>() * total;
        let mut node = m - 1;
        for (w, &e) in exits.iter().enumerate() {
            if u < e {
                node = w;
                break;
            }
            u -= e;
        }
        while exits[node] <= 0.0 {
            node -= 1;
        }
        let rates = model.rates(node, model.parent_code(node, &x))?;
        if let Some(next) = rates.sample_target(x[node], rng) {
            x[node] = next;
            jumps[node].push((t, next));
            count += 1;
            if count > DEFAULT_JUMP_CAP {
                return Err(Error::JumpCapExceeded { cap: DEFAULT_JUMP_CAP });
            }
        }
    }
    let paths = s0
        .into_iter()
        .zip(jumps)
        .map(|(s, j)| Trajectory::new(s, t_max, j))
        .collect::<Result<Vec<_>>>()?;
    CtbnPath::new(paths)
}

/// Joint state index with node 0 as the least significant digit.
pub fn encode_joint(sizes: &[usize], x: &[usize]) -> usize {
    let mut code = 0;
    let mut stride = 1;
    for (&s, &v) in sizes.iter().zip(x) {
        code += v * stride;
        stride *= s;
    }
    code
}

pub fn decode_joint(sizes: &[usize], mut code: usize) -> Vec<usize> {
    sizes
        .iter()
        .map(|&s| {
            let v = code % s;
            code /= s;
            v
        })
        .collect()
}

/// The intensity matrix of the joint process on the product space.
pub fn flatten(model: &CtbnModel, limit: usize) -> Result<DenseRates> {
    let size = model.joint_size();
    if size > limit as f64 {
        return Err(Error::EnumerationTooLarge { size, limit });
    }
    let n = size as usize;
    let sizes = model.sizes().to_vec();
    let mut matrix = vec![vec![0.0; n]; n];
    for (from, row) in matrix.iter_mut().enumerate() {
        let x = decode_joint(&sizes, from);
        for w in 0..model.num_nodes() {
            let rates = model.rates(w, model.parent_code(w, &x))?;
            for (to_w, r) in rates.targets(x[w]) {
                let mut y = x.clone();
                y[w] = to_w;
                row[encode_joint(&sizes, &y)] += r;
            }
        }
    }
    DenseRates::new(matrix)
}

/// The joint path as a single path on the product space.
pub fn flatten_path(model: &CtbnModel, path: &CtbnPath) -> Result<Trajectory<usize>> {
    let sizes = model.sizes();
    let mut events: Vec<(f64, usize, usize)> = path
        .nodes()
        .iter()
        .enumerate()
        .flat_map(|(w, p)| p.jumps().iter().map(move |&(t, s)| (t, w, s)))
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut x = path.initial_state();
    let s0 = encode_joint(sizes, &x);
    let mut jumps = Vec::with_capacity(events.len());
    for (t, w, s) in events {
        x[w] = s;
        jumps.push((t, encode_joint(sizes, &x)));
    }
    Trajectory::new(s0, path.t_max(), jumps)
}

/// Rule-based intensity families available in model files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum CimRule {
    /// Head of the chain network.
    ChainHead,
    /// Follower in the chain network; its single parent must have the same
    /// number of states.
    ChainFollower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CimSpec {
    /// Rate matrices keyed by parent code.
    Table(BTreeMap<String, Vec<Vec<f64>>>),
    Rule(CimRule),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub states: usize,
    pub cim: CimSpec,
}

/// Serializable CTBN description. Edges are `(parent, child)` pairs; the
/// parents of a node are coded in ascending node order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtbnSpec {
    pub nodes: Vec<NodeSpec>,
    pub edges: Vec<(usize, usize)>,
    pub initial: CtbnInitial,
}

impl CtbnSpec {
    pub fn build(&self) -> Result<CtbnModel> {
        let m = self.nodes.len();
        let mut parents = vec![Vec::new(); m];
        for &(p, c) in &self.edges {
            if p >= m || c >= m {
                return Err(Error::InvalidModel(format!("edge ({p}, {c}) names a missing node")));
            }
            parents[c].push(p);
        }
        parents.iter_mut().for_each(|pa| pa.sort_unstable());
        let sizes: Vec<usize> = self.nodes.iter().map(|n| n.states).collect();
        let mut cims = Vec::with_capacity(m);
        for (w, node) in self.nodes.iter().enumerate() {
            let configs: usize = parents[w].iter().map(|&p| sizes[p]).product();
            let list: Vec<SharedRates> = match &node.cim {
                CimSpec::Table(table) => (0..configs)
                    .map(|c| {
                        let mat = table.get(&c.to_string()).ok_or(Error::UnknownParentConfig { node: w, code: c })?;
                        if mat.len() != node.states {
                            return Err(Error::InvalidModel(format!("node {w}: matrix size {}", mat.len())));
                        }
                        Ok(Arc::new(DenseRates::new(mat.clone())?) as SharedRates)
                    })
                    .collect::<Result<_>>()?,
                CimSpec::Rule(CimRule::ChainHead) => {
                    if !parents[w].is_empty() {
                        return Err(Error::InvalidModel(format!("chain head {w} has parents")));
                    }
                    vec![Arc::new(crate::presets::ChainHeadRates::new(node.states)?) as SharedRates]
                }
                CimSpec::Rule(CimRule::ChainFollower) => {
                    if parents[w].len() != 1 || sizes[parents[w][0]] != node.states {
                        return Err(Error::InvalidModel(format!(
                            "chain follower {w} needs one parent with {} states",
                            node.states
                        )));
                    }
                    (0..node.states)
                        .map(|p| {
                            crate::presets::ChainFollowerRates::new(node.states, p).map(|r| Arc::new(r) as SharedRates)
                        })
                        .collect::<Result<_>>()?
                }
            };
            cims.push(list);
        }
        CtbnModel::new(
            self.nodes.iter().map(|n| n.name.clone()).collect(),
            sizes,
            parents,
            cims,
            self.initial.clone(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::log_density_trajectory;
    use crate::simulate::simulate_gillespie;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dense(m: Vec<Vec<f64>>) -> SharedRates {
        Arc::new(DenseRates::new(m).unwrap())
    }

    fn toy() -> CtbnModel {
        CtbnModel::new(
            vec!["X".into(), "Y".into()],
            vec![2, 2],
            vec![vec![], vec![0]],
            vec![
                vec![dense(vec![vec![0.0, 10.0], vec![10.0, 0.0]])],
                vec![
                    dense(vec![vec![0.0, 10.0], vec![10.0, 0.0]]),
                    dense(vec![vec![0.0, 100.0], vec![100.0, 0.0]]),
                ],
            ],
            CtbnInitial::Product(vec![vec![0.5, 0.5], vec![0.5, 0.5]]),
        )
        .unwrap()
    }

    /// Three binary nodes with a cycle 0 -> 1 -> 2 -> 0 and an extra edge 0 -> 2.
    fn three_node() -> CtbnModel {
        let spec = CtbnSpec {
            nodes: vec![
                NodeSpec {
                    name: "a".into(),
                    states: 2,
                    cim: CimSpec::Table(BTreeMap::from([
                        ("0".into(), vec![vec![0.0, 1.0], vec![2.0, 0.0]]),
                        ("1".into(), vec![vec![0.0, 3.0], vec![0.5, 0.0]]),
                    ])),
                },
                NodeSpec {
                    name: "b".into(),
                    states: 2,
                    cim: CimSpec::Table(BTreeMap::from([
                        ("0".into(), vec![vec![0.0, 0.7], vec![1.1, 0.0]]),
                        ("1".into(), vec![vec![0.0, 2.5], vec![0.2, 0.0]]),
                    ])),
                },
                NodeSpec {
                    name: "c".into(),
                    states: 2,
                    cim: CimSpec::Table(BTreeMap::from([
                        ("0".into(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]),
                        ("1".into(), vec![vec![0.0, 4.0], vec![0.3, 0.0]]),
                        ("2".into(), vec![vec![0.0, 0.1], vec![2.0, 0.0]]),
                        ("3".into(), vec![vec![0.0, 1.5], vec![1.5, 0.0]]),
                    ])),
                },
            ],
            edges: vec![(0, 1), (1, 2), (2, 0), (0, 2)],
            initial: CtbnInitial::Product(vec![vec![0.3, 0.7], vec![0.5, 0.5], vec![0.9, 0.1]]),
        };
        spec.build().unwrap()
    }

    #[test]
    fn parentless_node_matches_homogeneous_density() {
        let model = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let path = simulate_ctbn(&model, 1.0, &mut rng).unwrap();
        let direct = log_density_trajectory(&model.cims(0)[0], &PointMass(path.node(0).s0()), path.node(0));
        let via = log_density_node_given_parents(&model, 0, &path).unwrap();
        assert!((direct - via).abs() < 1e-12);
    }

    #[test]
    fn constant_node_with_one_parent_jump() {
        let model = toy();
        let x = Trajectory::new(0usize, 1.0, vec![(0.3, 1)]).unwrap();
        let y = Trajectory::constant(0usize, 1.0);
        let path = CtbnPath::new(vec![x, y]).unwrap();
        let lp = log_density_node_given_parents(&model, 1, &path).unwrap();
        assert!((lp - (-10.0 * 0.3 - 100.0 * 0.7)).abs() < 1e-12);
    }

    #[test]
    fn simultaneous_jumps_are_rejected() {
        let x = Trajectory::new(0usize, 1.0, vec![(0.3, 1)]).unwrap();
        let y = Trajectory::new(0usize, 1.0, vec![(0.3, 1)]).unwrap();
        assert!(matches!(CtbnPath::new(vec![x, y]), Err(Error::SimultaneousJump { .. })));
    }

    #[test]
    fn node_density_sums_per_segment_densities() {
        let model = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let path = simulate_ctbn(&model, 1.0, &mut rng).unwrap();
            let mut oracle = 0.0;
            for (a, b, xs) in path.node(0).segments() {
                let rates = &model.cims(1)[xs];
                let y0 = path.node(1).state_at(a);
                let jumps: Vec<(f64, usize)> = path
                    .node(1)
                    .jumps()
                    .iter()
                    .filter(|(t, _)| *t > a && *t < b)
                    .map(|&(t, s)| (t - a, s))
                    .collect();
                let piece = Trajectory::new(y0, b - a, jumps).unwrap();
                oracle += log_density_trajectory(rates, &PointMass(y0), &piece);
            }
            let lp = log_density_node_given_parents(&model, 1, &path).unwrap();
            assert!((lp - oracle).abs() < 1e-10, "{lp} vs {oracle}");
        }
    }

    #[test]
    fn factorized_density_matches_product_space() {
        for model in [toy(), three_node()] {
            let flat = flatten(&model, 64).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(12);
            for _ in 0..40 {
                let path = simulate_ctbn(&model, 1.5, &mut rng).unwrap();
                let joint_traj = flatten_path(&model, &path).unwrap();
                let lp_flat = log_density_trajectory(&flat, &PointMass(joint_traj.s0()), &joint_traj)
                    + model.log_initial(&path.initial_state());
                let lp = log_density_ctbn(&model, &path).unwrap();
                assert!(((lp_flat - lp).exp() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn joint_simulation_matches_product_space_jump_counts() {
        let model = three_node();
        let flat = flatten(&model, 64).unwrap();
        let init = crate::simulate::Categorical::new(
            (0..8)
                .map(|c| model.log_initial(&decode_joint(model.sizes(), c)).exp())
                .collect(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 20000;
        let a: f64 = (0..n)
            .map(|_| simulate_ctbn(&model, 1.0, &mut rng).unwrap().nodes().iter().map(|p| p.num_jumps()).sum::<usize>() as f64)
            .sum::<f64>()
            / n as f64;
        let b: f64 = (0..n)
            .map(|_| simulate_gillespie(&flat, &init, 1.0, &mut rng).unwrap().num_jumps() as f64)
            .sum::<f64>()
            / n as f64;
        assert!((a - b).abs() < 0.06, "{a} vs {b}");
    }

    #[test]
    fn full_conditional_child_term_is_conditional_density() {
        let model = three_node();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let path = simulate_ctbn(&model, 2.0, &mut rng).unwrap();
            for w in 0..3 {
                let cond = node_full_conditional(&model, w, &path).unwrap();
                assert_eq!(cond.children.len(), model.children(w).len());
                for (child, &u) in cond.children.iter().zip(model.children(w)) {
                    let direct = log_density_node_given_parents(&model, u, &path).unwrap();
                    let via = child.log_likelihood(path.node(w));
                    assert!((direct - via).abs() < 1e-10, "node {w} child {u}: {direct} vs {via}");
                }
            }
        }
    }

    #[test]
    fn parent_segments_partition_horizon() {
        let model = three_node();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let path = simulate_ctbn(&model, 3.0, &mut rng).unwrap();
        let segs = parent_segments(&model, 2, &path);
        let total: f64 = segs
            .iter()
            .enumerate()
            .map(|(i, (s, _))| segs.get(i + 1).map(|n| n.0).unwrap_or(3.0) - s)
            .sum();
        assert!((total - 3.0).abs() < 1e-12);
        for &(t, code) in &segs {
            let x = path.state_at(t);
            assert_eq!(code, model.parent_code(2, &x));
        }
    }

    #[test]
    fn spec_round_trips_through_json() {
        let model = three_node();
        let json = serde_json::json!({
            "nodes": [{"name": "a", "states": 2, "cim": {"0": [[0.0, 1.0], [1.0, 0.0]]}}],
            "edges": [],
            "initial": {"point_mass": [1]}
        });
        let spec: CtbnSpec = serde_json::from_value(json).unwrap();
        let single = spec.build().unwrap();
        assert_eq!(single.num_nodes(), 1);
        assert_eq!(model.parents(2), &[0, 1]);
        assert_eq!(model.children(0), &[1, 2]);
    }
}

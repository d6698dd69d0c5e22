//! Hierarchical ADMM engine.
//!
//! Every iteration runs four phases separated by barriers:
//!
//! 1. forward pass: each branching node sends its children the reference
//!    signals of its own constraints together with those received from its
//!    parent;
//! 2. every leaf solves its local subproblem (concurrently in parallel mode);
//! 3. backward pass: each node sends its parent one aggregate per ancestor
//!    constraint, so no profile travels further than one level;
//! 4. each constraint projects `S_B x + N_B λ̄_B` into its set (after the
//!    proximal step of the system objective at the root) and updates λ̄_B.
//!
//! Constraint bounds are shifted by the uncontrolled aggregate `S_B P_u`
//! once, so the engine works in battery-action units throughout.

mod sequential;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{self, Reference, ReferenceBundle};
use crate::error::{Error, Result};
use crate::grid::{project_box, ConstraintId, ConstraintKind, CouplingConstraint};
use crate::qp::QpSettings;
use crate::scenario::Scenario;
use crate::tree::{NodeId, Tree};

/// `w‖y − target‖²` on the root aggregate `y = S_∅x`.
#[derive(Clone, Debug, PartialEq)]
pub struct RootObjective {
    pub target: Vec<f64>,
    pub weight: f64,
}

/// Running ADMM state of one constraint.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchState {
    /// `"<branch>/<k>"` for the k-th constraint of a branch, `"root/obj"`
    /// for the channel that only carries the system objective.
    pub label: String,
    /// Constraint with bounds in battery-action units.
    pub constraint: CouplingConstraint,
    pub objective: Option<RootObjective>,
    /// Index into the scenario's constraint list.
    pub source: Option<usize>,
    pub y_bar: Vec<f64>,
    pub lambda_bar: Vec<f64>,
    pub n_leaves: usize,
}

impl BranchState {
    pub fn new(label: String, constraint: CouplingConstraint) -> Self {
        let horizon = constraint.horizon();
        let n_leaves = constraint.weights.len();
        BranchState {
            label,
            constraint,
            objective: None,
            source: None,
            y_bar: vec![0.0; horizon],
            lambda_bar: vec![0.0; horizon],
            n_leaves,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Parallel,
    Sequential,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parallel" => Ok(Mode::Parallel),
            "sequential" => Ok(Mode::Sequential),
            _ => Err(Error::Config(format!("unknown mode {s:?}, expected parallel or sequential"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub rho: f64,
    /// Stop once every primal residual is at most `tol`.
    pub tol: f64,
    pub max_iter: usize,
    pub mode: Mode,
    /// Settings of the local subproblem solver.
    pub agent: QpSettings,
    /// Keep every forward and backward message in the report.
    pub record_messages: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rho: 1.0,
            tol: 1e-2,
            max_iter: 5000,
            mode: Mode::Parallel,
            agent: QpSettings {
                tol: 1e-8,
                ..QpSettings::default()
            },
            record_messages: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Payload of one message between a node and its parent.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    /// Parent to child: reference signals, one per constraint at or above
    /// the parent.
    References(Vec<(ConstraintId, Vec<f64>)>),
    /// Child to parent: `Σ a x` over the leaves below the child, one per
    /// constraint at or above the parent.
    Aggregates(Vec<(ConstraintId, Vec<f64>)>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub iteration: usize,
    pub from: NodeId,
    pub to: NodeId,
    pub payload: Payload,
}

/// Accumulated seconds per phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub forward: f64,
    /// Wall time of the agent phase.
    pub agents_wall: f64,
    /// Sum of every agent's solve time.
    pub agents_cpu: f64,
    /// Sum over iterations of the slowest agent's solve time.
    pub agents_critical: f64,
    pub backward: f64,
    pub update: f64,
}

impl PhaseTimings {
    pub fn wall(&self) -> f64 {
        self.forward + self.agents_wall + self.backward + self.update
    }

    /// Total processor time with the agent phase counted per agent.
    pub fn cpu(&self) -> f64 {
        self.forward + self.agents_cpu + self.backward + self.update
    }

    /// Time on the critical path if every agent had its own processor.
    pub fn critical_path(&self) -> f64 {
        self.forward + self.agents_critical + self.backward + self.update
    }
}

#[derive(Clone, Debug)]
pub struct ChannelInfo {
    pub label: String,
    pub branch: NodeId,
    pub kind: ConstraintKind,
    pub source: Option<usize>,
    pub has_objective: bool,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub x_star: BTreeMap<NodeId, Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    pub channels: Vec<ChannelInfo>,
    /// `‖S_B x − ȳ_B‖∞` per iteration and channel.
    pub primal_history: Vec<Vec<f64>>,
    /// `ρ‖ȳ_B^{k+1} − ȳ_B^k‖∞` per iteration and channel.
    pub dual_history: Vec<Vec<f64>>,
    /// Final ȳ per channel.
    pub y_bar: Vec<Vec<f64>>,
    pub timings: PhaseTimings,
    pub messages: Vec<Message>,
}

impl SolveReport {
    /// Largest primal residual at iteration `k` (1-based).
    pub fn max_primal(&self, k: usize) -> f64 {
        self.primal_history[k - 1].iter().copied().fold(0.0, f64::max)
    }

    pub fn final_primal(&self) -> f64 {
        if self.iterations == 0 {
            0.0
        } else {
            self.max_primal(self.iterations)
        }
    }

    /// Mean over channels of the primal residual, per iteration.
    pub fn mean_primal_curve(&self) -> Vec<f64> {
        self.primal_history
            .iter()
            .map(|row| {
                if row.is_empty() {
                    0.0
                } else {
                    row.iter().sum::<f64>() / row.len() as f64
                }
            })
            .collect()
    }
}

/// `(S_B x − ȳ_B)/N_B + λ̄_B`.
pub fn reference_signal(state: &BranchState, sx: &[f64]) -> Vec<f64> {
    let n = state.n_leaves as f64;
    sx.iter()
        .zip(&state.y_bar)
        .zip(&state.lambda_bar)
        .map(|((s, y), l)| (s - y) / n + l)
        .collect()
}

/// `argmin_y w‖y − target‖² + (1/2ρ)‖y − z‖²`, elementwise.
pub fn prox_tracking(z: &[f64], rho: f64, obj: &RootObjective) -> Vec<f64> {
    let k = 2.0 * rho * obj.weight;
    z.iter()
        .zip(&obj.target)
        .map(|(zi, ti)| (zi + k * ti) / (1.0 + k))
        .collect()
}

/// Clamp into the constraint's bounds.
pub fn project_branch(constraint: &CouplingConstraint, z: &[f64]) -> Vec<f64> {
    constraint.project(z)
}

/// `λ̄ ← λ̄ + (step/N_B)(S_B x − ȳ_B)`. The engine uses a unit step, which
/// is the scaled-dual form of the update for the penalty used in the
/// local subproblems.
pub fn dual_update(state: &mut BranchState, sx: &[f64], step: f64) {
    let n = state.n_leaves as f64;
    for ((l, s), y) in state.lambda_bar.iter_mut().zip(sx).zip(&state.y_bar) {
        *l += step / n * (s - y);
    }
}

/// `‖S_B x − ȳ_B‖∞`.
pub fn primal_residual(state: &BranchState, sx: &[f64]) -> f64 {
    sx.iter()
        .zip(&state.y_bar)
        .map(|(s, y)| (s - y).abs())
        .fold(0.0, f64::max)
}

/// Root-side update of one channel: proximal step when the channel carries
/// the system objective, then projection. `kappa = ρ·N_B`.
fn y_update(state: &BranchState, z: &[f64], kappa: f64) -> Vec<f64> {
    let z = match &state.objective {
        Some(obj) if obj.weight > 0.0 => prox_tracking(z, kappa, obj),
        _ => z.to_vec(),
    };
    project_box(&z, &state.constraint.lower, &state.constraint.upper)
}

/// Scenario compiled into ADMM channels.
#[derive(Clone, Debug)]
pub struct Problem {
    pub tree: Tree,
    pub states: Vec<BranchState>,
    /// Channels owned by each branching node.
    channels_at: BTreeMap<NodeId, Vec<ConstraintId>>,
    /// `(channel, weight)` pairs of each leaf, root first.
    leaf_channels: Vec<Vec<(ConstraintId, f64)>>,
}

impl Problem {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let tree = scenario.tree.clone();
        let mut states = Vec::new();
        let mut per_branch: BTreeMap<NodeId, usize> = BTreeMap::new();
        for (k, c) in scenario.constraints.iter().enumerate() {
            let su = scenario.uncontrolled_aggregate(c);
            let shift = |b: &[f64]| -> Vec<f64> {
                b.iter()
                    .zip(&su)
                    .map(|(v, u)| if v.is_finite() { v - u } else { *v })
                    .collect()
            };
            let mut shifted = c.clone();
            shifted.upper = shift(&c.upper);
            shifted.lower = shift(&c.lower);
            let local = per_branch.entry(c.branch.clone()).or_insert(0);
            let mut state = BranchState::new(format!("{}/{local}", c.branch.label()), shifted);
            *local += 1;
            state.source = Some(k);
            states.push(state);
        }

        let objective = scenario.root_objective();
        if objective.weight > 0.0 {
            let root = NodeId::root();
            let host = states.iter_mut().find(|s| {
                s.constraint.branch == root
                    && s.constraint.kind == ConstraintKind::Power
                    && s.constraint.weights.values().all(|&a| a == 1.0)
            });
            match host {
                Some(s) => s.objective = Some(objective),
                None => {
                    let horizon = scenario.horizon;
                    let c = CouplingConstraint {
                        branch: root.clone(),
                        kind: ConstraintKind::Power,
                        weights: tree.leaves().iter().map(|l| (l.clone(), 1.0)).collect(),
                        upper: vec![f64::INFINITY; horizon],
                        lower: vec![f64::NEG_INFINITY; horizon],
                    };
                    let mut s = BranchState::new("root/obj".into(), c);
                    s.objective = Some(objective);
                    states.push(s);
                }
            }
        }

        let mut channels_at: BTreeMap<NodeId, Vec<ConstraintId>> = BTreeMap::new();
        for (k, s) in states.iter().enumerate() {
            channels_at
                .entry(s.constraint.branch.clone())
                .or_default()
                .push(ConstraintId(k));
        }
        let leaf_channels = tree
            .leaves()
            .iter()
            .map(|leaf| {
                let mut out = Vec::new();
                for anc in tree.ancestors(leaf).expect("leaf is in the tree") {
                    for &cid in channels_at.get(&anc).map(Vec::as_slice).unwrap_or(&[]) {
                        if let Some(&a) = states[cid.0].constraint.weights.get(leaf) {
                            out.push((cid, a));
                        }
                    }
                }
                out
            })
            .collect();
        Ok(Problem {
            tree,
            states,
            channels_at,
            leaf_channels,
        })
    }

    pub fn channel_info(&self) -> Vec<ChannelInfo> {
        self.states
            .iter()
            .map(|s| ChannelInfo {
                label: s.label.clone(),
                branch: s.constraint.branch.clone(),
                kind: s.constraint.kind,
                source: s.source,
                has_objective: s.objective.is_some(),
            })
            .collect()
    }

    fn own_channels(&self, node: &NodeId) -> &[ConstraintId] {
        self.channels_at.get(node).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Forward pass from the given aggregates. Returns one bundle per leaf
    /// in leaf order and appends the messages to `log` when given.
    fn forward(
        &self,
        sx: &[Vec<f64>],
        iteration: usize,
        mut log: Option<&mut Vec<Message>>,
    ) -> Vec<ReferenceBundle> {
        let mut inbox: BTreeMap<NodeId, Vec<(ConstraintId, Vec<f64>)>> = BTreeMap::new();
        inbox.insert(NodeId::root(), Vec::new());
        let mut bundles: BTreeMap<NodeId, ReferenceBundle> = BTreeMap::new();
        // lexicographic order visits parents before children
        for node in self.tree.nodes() {
            let received = inbox.remove(node).unwrap_or_default();
            let children = self.tree.children(node).expect("node is in the tree");
            if children.is_empty() {
                let leaf_index = self.leaf_index(node);
                let entries = self.leaf_channels[leaf_index]
                    .iter()
                    .map(|&(cid, weight)| {
                        let signal = received
                            .iter()
                            .find(|(c, _)| *c == cid)
                            .map(|(_, r)| r.clone())
                            .expect("every ancestor channel reaches the leaf");
                        Reference {
                            constraint: cid,
                            weight,
                            signal,
                        }
                    })
                    .collect();
                bundles.insert(node.clone(), ReferenceBundle { entries });
                continue;
            }
            let mut outgoing = received;
            for &cid in self.own_channels(node) {
                outgoing.push((cid, reference_signal(&self.states[cid.0], &sx[cid.0])));
            }
            for child in children {
                if let Some(log) = log.as_deref_mut() {
                    log.push(Message {
                        iteration,
                        from: node.clone(),
                        to: child.clone(),
                        payload: Payload::References(outgoing.clone()),
                    });
                }
                inbox.insert(child.clone(), outgoing.clone());
            }
        }
        self.tree
            .leaves()
            .iter()
            .map(|l| bundles.remove(l).expect("every leaf gets a bundle"))
            .collect()
    }

    /// Backward pass. `x` is in leaf order. Returns `S_B x` per channel.
    fn backward(
        &self,
        x: &[Vec<f64>],
        iteration: usize,
        mut log: Option<&mut Vec<Message>>,
    ) -> Vec<Vec<f64>> {
        let horizon = self.states.first().map_or(0, |s| s.constraint.horizon());
        let mut sx = vec![vec![0.0; horizon]; self.states.len()];
        let mut inbox: BTreeMap<NodeId, Vec<Vec<(ConstraintId, Vec<f64>)>>> = BTreeMap::new();
        let nodes: Vec<&NodeId> = self.tree.nodes().collect();
        // reverse lexicographic order visits children before parents
        for node in nodes.into_iter().rev() {
            let received = inbox.remove(node).unwrap_or_default();
            let mut upward: Vec<(ConstraintId, Vec<f64>)> = Vec::new();
            if self.tree.is_leaf(node).expect("node is in the tree") {
                let k = self.leaf_index(node);
                for &(cid, a) in &self.leaf_channels[k] {
                    upward.push((cid, x[k].iter().map(|v| a * v).collect()));
                }
            } else {
                let own = self.own_channels(node);
                let mut sums: BTreeMap<ConstraintId, Vec<f64>> = BTreeMap::new();
                for msg in received {
                    for (cid, v) in msg {
                        let acc = sums.entry(cid).or_insert_with(|| vec![0.0; horizon]);
                        acc.iter_mut().zip(&v).for_each(|(a, b)| *a += b);
                    }
                }
                for (cid, v) in sums {
                    if own.contains(&cid) {
                        sx[cid.0] = v;
                    } else {
                        upward.push((cid, v));
                    }
                }
            }
            if let Some(parent) = node.parent() {
                if let Some(log) = log.as_deref_mut() {
                    log.push(Message {
                        iteration,
                        from: node.clone(),
                        to: parent.clone(),
                        payload: Payload::Aggregates(upward.clone()),
                    });
                }
                inbox.entry(parent).or_default().push(upward);
            }
        }
        sx
    }

    fn leaf_index(&self, leaf: &NodeId) -> usize {
        self.tree
            .leaves()
            .binary_search(leaf)
            .expect("node is a leaf of the tree")
    }

    fn profiles_in_leaf_order(&self, x: &BTreeMap<NodeId, Vec<f64>>) -> Result<Vec<Vec<f64>>> {
        self.tree
            .leaves()
            .iter()
            .map(|l| x.get(l).cloned().ok_or_else(|| Error::MissingProfile(l.clone())))
            .collect()
    }
}

/// Reference bundles every leaf receives for the profiles `x_current`.
pub fn forward_pass(
    problem: &Problem,
    x_current: &BTreeMap<NodeId, Vec<f64>>,
) -> Result<BTreeMap<NodeId, ReferenceBundle>> {
    let x = problem.profiles_in_leaf_order(x_current)?;
    let sx = problem.backward(&x, 0, None);
    let bundles = problem.forward(&sx, 0, None);
    Ok(problem.tree.leaves().iter().cloned().zip(bundles).collect())
}

/// `S_B x_new` for every channel, computed by bottom-up aggregation.
pub fn backward_pass(problem: &Problem, x_new: &BTreeMap<NodeId, Vec<f64>>) -> Result<Vec<Vec<f64>>> {
    let x = problem.profiles_in_leaf_order(x_new)?;
    Ok(problem.backward(&x, 0, None))
}

/// Runs the coordination loop on `scenario`.
pub fn run(scenario: &Scenario, config: &SolverConfig) -> Result<SolveReport> {
    config.validate()?;
    let problem = Problem::new(scenario)?;
    match config.mode {
        Mode::Parallel => run_parallel(scenario, problem, config),
        Mode::Sequential => sequential::run(scenario, problem, config),
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn run_parallel(scenario: &Scenario, mut problem: Problem, config: &SolverConfig) -> Result<SolveReport> {
    let horizon = scenario.horizon;
    let n_agents = scenario.num_agents();
    let mut x = vec![vec![0.0; horizon]; n_agents];
    let mut sx = vec![vec![0.0; horizon]; problem.states.len()];
    let mut timings = PhaseTimings::default();
    let mut messages = Vec::new();
    let mut primal_history = Vec::new();
    let mut dual_history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iter {
        iterations += 1;
        let log = config.record_messages.then_some(&mut messages);

        let t0 = Instant::now();
        let bundles = problem.forward(&sx, iterations, log);
        timings.forward += secs(t0.elapsed());

        let t0 = Instant::now();
        let solved: Vec<Result<(Vec<f64>, Duration)>> = scenario
            .prosumers
            .par_iter()
            .zip(x.par_iter())
            .zip(bundles.par_iter())
            .map(|((p, prev), refs)| {
                let start = Instant::now();
                agent::local_update(p, prev, refs, config.rho, &config.agent)
                    .map(|xi| (xi, start.elapsed()))
                    .map_err(|e| Error::Agent {
                        leaf: p.id.clone(),
                        source: Box::new(e),
                    })
            })
            .collect();
        timings.agents_wall += secs(t0.elapsed());
        let mut slowest = Duration::ZERO;
        for (k, r) in solved.into_iter().enumerate() {
            let (xi, took) = r?;
            timings.agents_cpu += secs(took);
            slowest = slowest.max(took);
            x[k] = xi;
        }
        timings.agents_critical += secs(slowest);

        let t0 = Instant::now();
        let log = config.record_messages.then_some(&mut messages);
        sx = problem.backward(&x, iterations, log);
        timings.backward += secs(t0.elapsed());

        let t0 = Instant::now();
        let mut primal = Vec::with_capacity(problem.states.len());
        let mut dual = Vec::with_capacity(problem.states.len());
        for (state, s) in problem.states.iter_mut().zip(&sx) {
            let n = state.n_leaves as f64;
            let z: Vec<f64> = s.iter().zip(&state.lambda_bar).map(|(a, l)| a + n * l).collect();
            let y_new = y_update(state, &z, config.rho * n);
            let change = y_new
                .iter()
                .zip(&state.y_bar)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            state.y_bar = y_new;
            dual_update(state, s, 1.0);
            primal.push(primal_residual(state, s));
            dual.push(config.rho * change);
        }
        timings.update += secs(t0.elapsed());

        let worst = primal.iter().copied().fold(0.0, f64::max);
        primal_history.push(primal);
        dual_history.push(dual);
        if worst <= config.tol {
            converged = true;
            break;
        }
    }

    Ok(SolveReport {
        x_star: problem.tree.leaves().iter().cloned().zip(x).collect(),
        iterations,
        converged,
        channels: problem.channel_info(),
        primal_history,
        dual_history,
        y_bar: problem.states.iter().map(|s| s.y_bar.clone()).collect(),
        timings,
        messages,
    })
}

//! Problem instances: the tree, one prosumer per leaf, the branch
//! constraints and the system objective at the root.

mod file;
mod generate;

use std::collections::BTreeMap;

use serde_json::{Map, Value};

use crate::agent::{self, Prosumer};
use crate::coordinator::RootObjective;
use crate::error::{Error, Result};
use crate::grid::CouplingConstraint;
use crate::tree::{NodeId, Tree};

pub use file::{from_json, load, save, to_json, FORMAT_VERSION};
pub use generate::{example_case, generate, GeneratorParams, Range};

/// Tracking target of the root objective.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    /// `−S_∅P_u`, which turns the objective into `w‖S_∅(x + P_u)‖²`.
    PeakShaving,
    /// Explicit target for `S_∅x`.
    Profile(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveSpec {
    pub target: Target,
    pub weight: f64,
}

impl ObjectiveSpec {
    pub fn peak_shaving() -> Self {
        ObjectiveSpec {
            target: Target::PeakShaving,
            weight: 1.0,
        }
    }

    pub fn none() -> Self {
        ObjectiveSpec {
            target: Target::PeakShaving,
            weight: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub tree: Tree,
    pub horizon: usize,
    /// Step length in hours.
    pub dt: f64,
    /// One prosumer per leaf, in leaf order.
    pub prosumers: Vec<Prosumer>,
    pub constraints: Vec<CouplingConstraint>,
    pub objective: ObjectiveSpec,
    pub metadata: Map<String, Value>,
}

impl Scenario {
    /// Checks every structural invariant. Errors name the offending leaf,
    /// branch or field.
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::validation("horizon", "must be at least 1"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::validation("dt_hours", "must be positive"));
        }
        let by_id: BTreeMap<&NodeId, usize> = self
            .prosumers
            .iter()
            .enumerate()
            .map(|(k, p)| (&p.id, k))
            .collect();
        if by_id.len() != self.prosumers.len() {
            return Err(Error::validation("prosumers", "duplicate prosumer id"));
        }
        for p in &self.prosumers {
            if !self.tree.contains(&p.id) || !self.tree.is_leaf(&p.id)? {
                return Err(Error::validation(
                    format!("prosumers[{}]", p.id.label()),
                    "prosumer is not attached to a leaf of the tree",
                ));
            }
        }
        for (k, leaf) in self.tree.leaves().iter().enumerate() {
            match self.prosumers.get(k) {
                Some(p) if &p.id == leaf => {}
                _ if by_id.contains_key(leaf) => {
                    return Err(Error::validation("prosumers", "prosumers must be listed in leaf order"))
                }
                _ => {
                    return Err(Error::validation(
                        format!("prosumers[{}]", leaf.label()),
                        format!("missing prosumer for leaf {leaf}"),
                    ))
                }
            }
        }
        for p in &self.prosumers {
            let path = format!("prosumers[{}]", p.id.label());
            if p.horizon() != self.horizon {
                return Err(Error::validation(
                    format!("{path}.p_uncontrolled"),
                    format!("expected {} entries, got {}", self.horizon, p.horizon()),
                ));
            }
            if p.battery.dt != self.dt {
                return Err(Error::validation(path, "battery step length differs from dt_hours"));
            }
            if p.price_buy < p.price_sell {
                return Err(Error::validation(path, "price_buy must be at least price_sell"));
            }
            let b = &p.battery;
            if b.capacity < 0.0 || b.p_charge_max < 0.0 || b.p_discharge_max < 0.0 {
                return Err(Error::validation(path, "battery limits must be non-negative"));
            }
            if b.soc0 < 0.0 || b.soc0 > b.capacity {
                return Err(Error::validation(path, "soc0_kwh must lie in [0, capacity_kwh]"));
            }
        }
        for (k, c) in self.constraints.iter().enumerate() {
            let path = format!("constraints[{k}]");
            if !self.tree.contains(&c.branch) {
                return Err(Error::validation(path, format!("branch {} not in tree", c.branch)));
            }
            if self.tree.is_leaf(&c.branch)? {
                return Err(Error::validation(
                    path,
                    format!("branch {} is a leaf, not a branching node", c.branch),
                ));
            }
            if c.horizon() != self.horizon {
                return Err(Error::validation(
                    path,
                    format!("bounds have {} entries, expected {}", c.horizon(), self.horizon),
                ));
            }
            c.validate(&self.tree).map_err(|e| Error::validation(format!("constraints[{k}]"), e.to_string()))?;
        }
        if !(self.objective.weight >= 0.0) {
            return Err(Error::validation("root_objective.weight", "must be non-negative"));
        }
        if let Target::Profile(t) = &self.objective.target {
            if t.len() != self.horizon {
                return Err(Error::validation(
                    "root_objective.target",
                    format!("expected {} entries, got {}", self.horizon, t.len()),
                ));
            }
        }
        Ok(())
    }

    pub fn num_agents(&self) -> usize {
        self.prosumers.len()
    }

    pub fn prosumer(&self, leaf: &NodeId) -> Option<&Prosumer> {
        self.prosumers.iter().find(|p| &p.id == leaf)
    }

    /// Unweighted sum of the uncontrolled profiles below `branch`.
    pub fn uncontrolled_sum(&self, branch: &NodeId) -> Vec<f64> {
        let mut out = vec![0.0; self.horizon];
        for p in self.prosumers.iter().filter(|p| p.id.descends_from(branch)) {
            for (o, v) in out.iter_mut().zip(&p.p_uncontrolled) {
                *o += v;
            }
        }
        out
    }

    /// `S_B P_u` for constraint `c`.
    pub fn uncontrolled_aggregate(&self, c: &CouplingConstraint) -> Vec<f64> {
        let mut out = vec![0.0; self.horizon];
        for p in &self.prosumers {
            if let Some(a) = c.weights.get(&p.id) {
                for (o, v) in out.iter_mut().zip(&p.p_uncontrolled) {
                    *o += a * v;
                }
            }
        }
        out
    }

    pub fn root_objective(&self) -> RootObjective {
        let target = match &self.objective.target {
            Target::PeakShaving => self
                .uncontrolled_sum(&NodeId::root())
                .into_iter()
                .map(|v| -v)
                .collect(),
            Target::Profile(t) => t.clone(),
        };
        RootObjective {
            target,
            weight: self.objective.weight,
        }
    }

    /// System objective `w‖S_∅x − target‖² + Σ_i cost_i(x_i)`.
    pub fn objective(&self, x: &BTreeMap<NodeId, Vec<f64>>) -> Result<f64> {
        let obj = self.root_objective();
        let mut sum = vec![0.0; self.horizon];
        let mut bill = 0.0;
        for p in &self.prosumers {
            let xi = x.get(&p.id).ok_or_else(|| Error::MissingProfile(p.id.clone()))?;
            bill += agent::cost(p, xi)?;
            for (s, v) in sum.iter_mut().zip(xi) {
                *s += v;
            }
        }
        let track: f64 = sum
            .iter()
            .zip(&obj.target)
            .map(|(s, t)| (s - t) * (s - t))
            .sum();
        Ok(obj.weight * track + bill)
    }

    /// Objective with every battery idle.
    pub fn no_action_objective(&self) -> f64 {
        self.objective(&self.zero_profiles())
            .expect("zero profiles cover every leaf")
    }

    pub fn zero_profiles(&self) -> BTreeMap<NodeId, Vec<f64>> {
        self.prosumers
            .iter()
            .map(|p| (p.id.clone(), vec![0.0; self.horizon]))
            .collect()
    }

    /// Largest violation of any branch constraint, in the constraint's own
    /// units, evaluated on the physical profiles `x + P_u`.
    pub fn constraint_violation(&self, x: &BTreeMap<NodeId, Vec<f64>>) -> Result<f64> {
        let mut worst = 0.0_f64;
        for c in &self.constraints {
            let sx = c.aggregate(x)?;
            let su = self.uncontrolled_aggregate(c);
            let total: Vec<f64> = sx.iter().zip(&su).map(|(a, b)| a + b).collect();
            worst = worst.max(c.violation(&total));
        }
        Ok(worst)
    }

    /// Largest violation of any battery limit.
    pub fn battery_violation(&self, x: &BTreeMap<NodeId, Vec<f64>>) -> Result<f64> {
        let mut worst = 0.0_f64;
        for p in &self.prosumers {
            let xi = x.get(&p.id).ok_or_else(|| Error::MissingProfile(p.id.clone()))?;
            worst = worst.max(p.battery.violation(xi));
        }
        Ok(worst)
    }

    /// Levels of the tree, counting the root and the leaves.
    pub fn levels(&self) -> usize {
        self.tree.depth()
    }
}

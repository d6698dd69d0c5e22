//! Linear coupling constraints on weighted aggregates of leaf power profiles.
//!
//! A constraint at branch `B` reads `lower ≤ Σ_i a_{B,i} x_i ≤ upper` per time
//! step, summed over the leaves below `B`. Unit weights give a power cap on
//! the branch; voltage-sensitivity weights give a linearised voltage band
//! `V0 + Σ_i ∂|V|/∂P_i · P_i ≤ Vmax`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::{NodeId, Tree};

/// Index of a constraint within a compiled problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConstraintId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintKind {
    Power,
    Voltage,
}

/// `lower ≤ S_B x ≤ upper`. Missing sides are stored as ±∞.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingConstraint {
    pub branch: NodeId,
    pub kind: ConstraintKind,
    pub weights: BTreeMap<NodeId, f64>,
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
}

impl CouplingConstraint {
    pub fn horizon(&self) -> usize {
        self.upper.len()
    }

    /// Checks the weight keys against the tree and the bound ordering.
    pub fn validate(&self, tree: &Tree) -> Result<()> {
        let leaves = tree.leaf_descendants(&self.branch)?;
        if leaves.len() != self.weights.len() || leaves.iter().any(|l| !self.weights.contains_key(l))
        {
            return Err(Error::validation(
                format!("constraint at {}", self.branch),
                "weights must be keyed exactly by the leaf descendants of the branch",
            ));
        }
        if self.lower.len() != self.upper.len() {
            return Err(Error::length(
                format!("bounds of constraint at {}", self.branch),
                self.upper.len(),
                self.lower.len(),
            ));
        }
        if let Some(t) = (0..self.upper.len()).find(|&t| self.lower[t] > self.upper[t]) {
            return Err(Error::validation(
                format!("constraint at {}", self.branch),
                format!("lower bound exceeds upper bound at t={t}"),
            ));
        }
        Ok(())
    }

    /// Weighted aggregate `S_B x`, one entry per time step.
    pub fn aggregate(&self, x: &BTreeMap<NodeId, Vec<f64>>) -> Result<Vec<f64>> {
        let horizon = self.horizon();
        let mut out = vec![0.0; horizon];
        for (leaf, &a) in &self.weights {
            let profile = x.get(leaf).ok_or_else(|| Error::MissingProfile(leaf.clone()))?;
            if profile.len() != horizon {
                return Err(Error::length(
                    format!("profile of leaf {leaf}"),
                    horizon,
                    profile.len(),
                ));
            }
            for (o, p) in out.iter_mut().zip(profile) {
                *o += a * p;
            }
        }
        Ok(out)
    }

    /// Clamps `z` into `[lower, upper]` elementwise.
    pub fn project(&self, z: &[f64]) -> Vec<f64> {
        project_box(z, &self.lower, &self.upper)
    }

    /// Largest elementwise violation of the bounds by `sx` (0 when satisfied).
    pub fn violation(&self, sx: &[f64]) -> f64 {
        sx.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&lo, &hi))| (v - hi).max(lo - v).max(0.0))
            .fold(0.0, f64::max)
    }
}

pub(crate) fn project_box(z: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    z.iter()
        .zip(lower.iter().zip(upper))
        .map(|(&v, (&lo, &hi))| v.max(lo).min(hi))
        .collect()
}

/// Linearised voltage model at one grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityModel {
    /// Reference voltage (pu).
    pub v0: f64,
    /// Upper voltage limit (pu).
    pub vmax: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vmin: Option<f64>,
    /// ∂|V|/∂P per leaf (pu/kW).
    pub grad_p: BTreeMap<NodeId, f64>,
    /// ∂|V|/∂Q per leaf (pu/kvar).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub grad_q: BTreeMap<NodeId, f64>,
}

impl SensitivityModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.vmax >= self.v0 && self.vmin.map_or(true, |lo| lo <= self.v0);
        if ok {
            Ok(())
        } else {
            Err(Error::validation(
                "sensitivity",
                "voltage limits must satisfy vmin ≤ v0 ≤ vmax",
            ))
        }
    }
}

/// Builds the linearised voltage band at `branch` as one two-sided constraint.
///
/// The weight of each leaf is `∂|V|/∂P + tan φ · ∂|V|/∂Q`, where `tan φ`
/// comes from `reactive_ratio` (leaves at unity power factor may be omitted).
/// The upper bound is `Vmax − V0`, the lower bound `Vmin − V0` when present.
pub fn voltage_constraint(
    tree: &Tree,
    branch: &NodeId,
    model: &SensitivityModel,
    horizon: usize,
    reactive_ratio: Option<&BTreeMap<NodeId, f64>>,
) -> Result<CouplingConstraint> {
    model.validate()?;
    let mut weights = BTreeMap::new();
    for leaf in tree.leaf_descendants(branch)? {
        let gp = *model
            .grad_p
            .get(&leaf)
            .ok_or_else(|| Error::MissingSensitivity(leaf.clone()))?;
        let tan_phi = reactive_ratio.and_then(|r| r.get(&leaf)).copied().unwrap_or(0.0);
        let gq = model.grad_q.get(&leaf).copied().unwrap_or(0.0);
        weights.insert(leaf, gp + tan_phi * gq);
    }
    let lower = match model.vmin {
        Some(lo) => vec![lo - model.v0; horizon],
        None => vec![f64::NEG_INFINITY; horizon],
    };
    Ok(CouplingConstraint {
        branch: branch.clone(),
        kind: ConstraintKind::Voltage,
        weights,
        upper: vec![model.vmax - model.v0; horizon],
        lower,
    })
}

/// Unit-weight power limit on the summed profiles below `branch`.
pub fn power_constraint(
    tree: &Tree,
    branch: &NodeId,
    upper: Vec<f64>,
    lower: Option<Vec<f64>>,
) -> Result<CouplingConstraint> {
    let weights = tree
        .leaf_descendants(branch)?
        .into_iter()
        .map(|l| (l, 1.0))
        .collect();
    let lower = match lower {
        Some(lo) => {
            if lo.len() != upper.len() {
                return Err(Error::length("lower bound", upper.len(), lo.len()));
            }
            lo
        }
        None => vec![f64::NEG_INFINITY; upper.len()],
    };
    let c = CouplingConstraint {
        branch: branch.clone(),
        kind: ConstraintKind::Power,
        weights,
        upper,
        lower,
    };
    c.validate(tree)?;
    Ok(c)
}

//! JSON scenario documents. The layout is described in
//! `docs/scenario.schema.json` at the repository root.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{ObjectiveSpec, Scenario, Target};
use crate::agent::{Battery, Prosumer};
use crate::error::{Error, Result};
use crate::grid::{self, ConstraintKind, CouplingConstraint, SensitivityModel};
use crate::tree::{NodeId, Tree};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    version: u32,
    horizon: usize,
    dt_hours: f64,
    tree: Vec<NodeEntry>,
    prosumers: Vec<ProsumerEntry>,
    #[serde(default)]
    constraints: Vec<ConstraintEntry>,
    #[serde(default = "default_objective")]
    root_objective: ObjectiveEntry,
    #[serde(default)]
    metadata: Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeEntry {
    id: NodeId,
    parent: Option<NodeId>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProsumerEntry {
    id: NodeId,
    capacity_kwh: f64,
    soc0_kwh: f64,
    p_charge_max_kw: f64,
    p_discharge_max_kw: f64,
    price_buy: f64,
    price_sell: f64,
    p_uncontrolled: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstraintEntry {
    branch: NodeId,
    kind: ConstraintKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<LeafValue>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sensitivity: Option<SensitivityEntry>,
    #[serde(default)]
    upper: Bound,
    #[serde(default)]
    lower: Bound,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LeafValue {
    leaf: NodeId,
    value: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SensitivityEntry {
    v0: f64,
    vmax: f64,
    #[serde(default)]
    vmin: Option<f64>,
    grad_p: Vec<LeafValue>,
    #[serde(default)]
    grad_q: Vec<LeafValue>,
    /// tan φ per leaf; omitted leaves run at unity power factor.
    #[serde(default)]
    reactive_ratio: Vec<LeafValue>,
}

/// `null` (unbounded), a scalar broadcast over the horizon, or one entry
/// per step where `null` leaves that step unbounded.
#[derive(Serialize, Deserialize, Default)]
#[serde(untagged)]
enum Bound {
    #[default]
    Unbounded,
    Scalar(f64),
    Profile(Vec<Option<f64>>),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectiveEntry {
    target: TargetEntry,
    weight: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TargetEntry {
    Named(String),
    Profile(Vec<f64>),
}

fn default_objective() -> ObjectiveEntry {
    ObjectiveEntry {
        target: TargetEntry::Named("peak_shaving".into()),
        weight: 0.0,
    }
}

fn leaf_map(entries: &[LeafValue]) -> BTreeMap<NodeId, f64> {
    entries.iter().map(|e| (e.leaf.clone(), e.value)).collect()
}

fn leaf_list(map: &BTreeMap<NodeId, f64>) -> Vec<LeafValue> {
    map.iter()
        .map(|(leaf, &value)| LeafValue {
            leaf: leaf.clone(),
            value,
        })
        .collect()
}

impl Bound {
    fn expand(&self, horizon: usize, missing: f64, path: &str) -> Result<Vec<f64>> {
        match self {
            Bound::Unbounded => Ok(vec![missing; horizon]),
            Bound::Scalar(v) => Ok(vec![*v; horizon]),
            Bound::Profile(p) if p.len() == horizon => {
                Ok(p.iter().map(|v| v.unwrap_or(missing)).collect())
            }
            Bound::Profile(p) => Err(Error::validation(
                path,
                format!("expected {horizon} entries, got {}", p.len()),
            )),
        }
    }

    fn compress(v: &[f64]) -> Self {
        if v.iter().all(|x| x.is_infinite()) {
            Bound::Unbounded
        } else if v.windows(2).all(|w| w[0] == w[1]) {
            Bound::Scalar(v[0])
        } else {
            Bound::Profile(v.iter().map(|x| x.is_finite().then_some(*x)).collect())
        }
    }
}

impl Document {
    fn into_scenario(self) -> Result<Scenario> {
        if self.version != FORMAT_VERSION {
            return Err(Error::validation(
                "version",
                format!("unsupported version {}, expected {FORMAT_VERSION}", self.version),
            ));
        }
        for (k, n) in self.tree.iter().enumerate() {
            if n.parent != n.id.parent() {
                return Err(Error::validation(
                    format!("tree[{k}].parent"),
                    format!("parent of {} must be {:?}", n.id, n.id.parent()),
                ));
            }
        }
        let tree = Tree::new(self.tree.into_iter().map(|n| n.id))
            .map_err(|e| Error::validation("tree", e.to_string()))?;
        let horizon = self.horizon;
        let dt = self.dt_hours;

        let mut by_leaf: BTreeMap<NodeId, Prosumer> = BTreeMap::new();
        for (k, p) in self.prosumers.into_iter().enumerate() {
            if !tree.contains(&p.id) || !tree.is_leaf(&p.id)? {
                return Err(Error::validation(
                    format!("prosumers[{k}].id"),
                    format!("{} is not a leaf of the tree", p.id),
                ));
            }
            let id = p.id.clone();
            let prosumer = Prosumer {
                id: p.id,
                battery: Battery {
                    capacity: p.capacity_kwh,
                    soc0: p.soc0_kwh,
                    p_charge_max: p.p_charge_max_kw,
                    p_discharge_max: p.p_discharge_max_kw,
                    dt,
                },
                p_uncontrolled: p.p_uncontrolled,
                price_buy: p.price_buy,
                price_sell: p.price_sell,
            };
            if by_leaf.insert(id.clone(), prosumer).is_some() {
                return Err(Error::validation(
                    format!("prosumers[{k}].id"),
                    format!("duplicate prosumer for leaf {id}"),
                ));
            }
        }
        let mut prosumers = Vec::with_capacity(tree.leaves().len());
        for leaf in tree.leaves() {
            match by_leaf.remove(leaf) {
                Some(p) => prosumers.push(p),
                None => {
                    return Err(Error::validation(
                        "prosumers",
                        format!("missing prosumer for leaf {leaf}"),
                    ))
                }
            }
        }

        let mut constraints = Vec::with_capacity(self.constraints.len());
        for (k, c) in self.constraints.into_iter().enumerate() {
            let path = format!("constraints[{k}]");
            if !tree.contains(&c.branch) {
                return Err(Error::validation(
                    format!("{path}.branch"),
                    format!("{} is not in the tree", c.branch),
                ));
            }
            if tree.is_leaf(&c.branch)? {
                return Err(Error::validation(
                    format!("{path}.branch"),
                    format!("{} is a leaf, not a branching node", c.branch),
                ));
            }
            let built = match (c.weights, c.sensitivity) {
                (Some(_), Some(_)) => {
                    return Err(Error::validation(
                        path,
                        "give either weights or a sensitivity block, not both",
                    ))
                }
                (None, Some(s)) => {
                    if c.kind != ConstraintKind::Voltage {
                        return Err(Error::validation(
                            format!("{path}.sensitivity"),
                            "a sensitivity block requires kind \"voltage\"",
                        ));
                    }
                    if !matches!(c.upper, Bound::Unbounded) || !matches!(c.lower, Bound::Unbounded) {
                        return Err(Error::validation(
                            path,
                            "bounds of a sensitivity constraint come from v0, vmax and vmin",
                        ));
                    }
                    let model = SensitivityModel {
                        v0: s.v0,
                        vmax: s.vmax,
                        vmin: s.vmin,
                        grad_p: leaf_map(&s.grad_p),
                        grad_q: leaf_map(&s.grad_q),
                    };
                    let ratio = leaf_map(&s.reactive_ratio);
                    grid::voltage_constraint(&tree, &c.branch, &model, horizon, Some(&ratio))
                        .map_err(|e| Error::validation(format!("{path}.sensitivity"), e.to_string()))?
                }
                (weights, None) => {
                    let weights = match weights {
                        Some(w) => leaf_map(&w),
                        None if c.kind == ConstraintKind::Power => tree
                            .leaf_descendants(&c.branch)?
                            .into_iter()
                            .map(|l| (l, 1.0))
                            .collect(),
                        None => {
                            return Err(Error::validation(
                                path,
                                "a voltage constraint needs weights or a sensitivity block",
                            ))
                        }
                    };
                    CouplingConstraint {
                        branch: c.branch,
                        kind: c.kind,
                        weights,
                        upper: c.upper.expand(horizon, f64::INFINITY, &format!("{path}.upper"))?,
                        lower: c.lower.expand(horizon, f64::NEG_INFINITY, &format!("{path}.lower"))?,
                    }
                }
            };
            built
                .validate(&tree)
                .map_err(|e| Error::validation(path.clone(), e.to_string()))?;
            constraints.push(built);
        }

        let target = match self.root_objective.target {
            TargetEntry::Named(name) if name == "peak_shaving" => Target::PeakShaving,
            TargetEntry::Named(name) => {
                return Err(Error::validation(
                    "root_objective.target",
                    format!("unknown target {name:?}, expected \"peak_shaving\" or an array"),
                ))
            }
            TargetEntry::Profile(p) => Target::Profile(p),
        };

        let scenario = Scenario {
            tree,
            horizon,
            dt,
            prosumers,
            constraints,
            objective: ObjectiveSpec {
                target,
                weight: self.root_objective.weight,
            },
            metadata: self.metadata,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    fn from_scenario(s: &Scenario) -> Self {
        Document {
            version: FORMAT_VERSION,
            horizon: s.horizon,
            dt_hours: s.dt,
            tree: s
                .tree
                .nodes()
                .map(|n| NodeEntry {
                    id: n.clone(),
                    parent: n.parent(),
                })
                .collect(),
            prosumers: s
                .prosumers
                .iter()
                .map(|p| ProsumerEntry {
                    id: p.id.clone(),
                    capacity_kwh: p.battery.capacity,
                    soc0_kwh: p.battery.soc0,
                    p_charge_max_kw: p.battery.p_charge_max,
                    p_discharge_max_kw: p.battery.p_discharge_max,
                    price_buy: p.price_buy,
                    price_sell: p.price_sell,
                    p_uncontrolled: p.p_uncontrolled.clone(),
                })
                .collect(),
            constraints: s
                .constraints
                .iter()
                .map(|c| ConstraintEntry {
                    branch: c.branch.clone(),
                    kind: c.kind,
                    weights: Some(leaf_list(&c.weights)),
                    sensitivity: None,
                    upper: Bound::compress(&c.upper),
                    lower: Bound::compress(&c.lower),
                })
                .collect(),
            root_objective: ObjectiveEntry {
                target: match &s.objective.target {
                    Target::PeakShaving => TargetEntry::Named("peak_shaving".into()),
                    Target::Profile(p) => TargetEntry::Profile(p.clone()),
                },
                weight: s.objective.weight,
            },
            metadata: s.metadata.clone(),
        }
    }
}

/// Parses a scenario document. Schema errors carry the JSON path of the
/// offending field.
pub fn from_json(text: &str) -> Result<Scenario> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: Document = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::validation(path, e.into_inner().to_string())
    })?;
    doc.into_scenario()
}

/// Pretty-printed JSON with a trailing newline.
pub fn to_json(s: &Scenario) -> String {
    let mut out = serde_json::to_string_pretty(&Document::from_scenario(s))
        .expect("scenario documents always serialize");
    out.push('\n');
    out
}

pub fn load(path: impl AsRef<Path>) -> Result<Scenario> {
    from_json(&std::fs::read_to_string(path)?)
}

pub fn save(s: &Scenario, path: impl AsRef<Path>) -> Result<()> {
    s.validate()?;
    std::fs::write(path, to_json(s))?;
    Ok(())
}

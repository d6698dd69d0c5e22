//! Seeded random scenarios.
//!
//! Trees have a fixed number of levels. Every branching node above the
//! last aggregator level has between one and `max_branch_children`
//! branching children, and every branching node carries between
//! `min_leaves_per_branch` and `max_leaves_per_branch` prosumers.
//!
//! Bounds are drawn first and then widened, if needed, so that a simple
//! valley-filling battery schedule satisfies every constraint with a margin.
//! Every generated scenario is therefore feasible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map};

use super::{ObjectiveSpec, Scenario};
use crate::agent::{Battery, Prosumer};
use crate::error::{Error, Result};
use crate::grid::{self, SensitivityModel};
use crate::tree::{NodeId, Tree};

/// Closed interval sampled uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.hi > self.lo {
            rng.random_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorParams {
    pub seed: u64,
    /// Node levels including the root and the leaves, in `[2, 5]`.
    pub levels: usize,
    pub horizon: usize,
    /// Step length in hours.
    pub dt: f64,
    pub max_branch_children: u32,
    pub min_leaves_per_branch: u32,
    pub max_leaves_per_branch: u32,
    /// Scale of the daily consumption shape (kW).
    pub base_load: Range,
    /// Peak of the midday PV bell (kW).
    pub pv_peak: Range,
    /// Standard deviation of the additive load noise (kW).
    pub noise_std: f64,
    pub capacity: Range,
    /// Charge and discharge limit (kW), equal for both directions.
    pub power_limit: Range,
    /// Initial state of charge as a fraction of capacity.
    pub soc0_fraction: Range,
    pub price_buy: f64,
    pub price_sell: f64,
    /// ∂|V|/∂P per leaf (pu/kW).
    pub grad_p: Range,
    pub v0: f64,
    pub vmax: f64,
    pub vmin: f64,
    /// Power cap as a fraction of the peak uncontrolled aggregate.
    pub cap_fraction: Range,
    /// Probability that a branching node also gets a voltage band.
    pub voltage_probability: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            seed: 0,
            levels: 3,
            horizon: 96,
            dt: 0.25,
            max_branch_children: 2,
            min_leaves_per_branch: 1,
            max_leaves_per_branch: 10,
            base_load: Range::new(0.2, 2.0),
            pv_peak: Range::new(0.0, 3.0),
            noise_std: 0.05,
            capacity: Range::new(5.0, 15.0),
            power_limit: Range::new(2.0, 5.0),
            soc0_fraction: Range::new(0.2, 0.8),
            price_buy: 0.25,
            price_sell: 0.10,
            grad_p: Range::new(0.002, 0.01),
            v0: 1.0,
            vmax: 1.05,
            vmin: 0.95,
            cap_fraction: Range::new(0.4, 0.8),
            voltage_probability: 0.5,
        }
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(2..=5).contains(&self.levels) {
            return bad(&format!("levels must lie in [2, 5], got {}", self.levels));
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if self.levels > 2 && self.max_branch_children == 0 {
            return bad("max_branch_children must be at least 1 for more than two levels");
        }
        if self.min_leaves_per_branch == 0 || self.min_leaves_per_branch > self.max_leaves_per_branch {
            return bad("leaf counts must satisfy 1 ≤ min_leaves_per_branch ≤ max_leaves_per_branch");
        }
        let ranges = [
            ("base_load", self.base_load),
            ("pv_peak", self.pv_peak),
            ("capacity", self.capacity),
            ("power_limit", self.power_limit),
            ("soc0_fraction", self.soc0_fraction),
            ("grad_p", self.grad_p),
            ("cap_fraction", self.cap_fraction),
        ];
        for (name, r) in ranges {
            if !(r.lo <= r.hi) || r.lo < 0.0 {
                return bad(&format!("{name} must satisfy 0 ≤ lo ≤ hi"));
            }
        }
        if self.soc0_fraction.hi > 1.0 {
            return bad("soc0_fraction must lie within [0, 1]");
        }
        if self.price_buy < self.price_sell {
            return bad("price_buy must be at least price_sell");
        }
        if !(self.vmin <= self.v0 && self.v0 <= self.vmax) {
            return bad("voltage limits must satisfy vmin ≤ v0 ≤ vmax");
        }
        if !(0.0..=1.0).contains(&self.voltage_probability) || self.noise_std < 0.0 {
            return bad("voltage_probability must lie in [0, 1] and noise_std be non-negative");
        }
        Ok(())
    }
}

enum Shape {
    Random,
    /// One branching node per level, with the given leaf count at each.
    Chain(Vec<u32>),
}

/// Random scenario, a pure function of `params`.
pub fn generate(params: &GeneratorParams) -> Result<Scenario> {
    params.validate()?;
    build(params, Shape::Random)
}

/// Four-level scenario with a single branching node in each of the first
/// three levels, carrying 3, 3 and 4 prosumers.
pub fn example_case(seed: u64, horizon: usize, dt: f64) -> Result<Scenario> {
    let params = GeneratorParams {
        seed,
        levels: 4,
        horizon,
        dt,
        ..GeneratorParams::default()
    };
    params.validate()?;
    build(&params, Shape::Chain(vec![3, 3, 4]))
}

fn build(params: &GeneratorParams, shape: Shape) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (levels, nodes) = match &shape {
        Shape::Random => (params.levels, random_tree(params, &mut rng)),
        Shape::Chain(leaves) => (leaves.len() + 1, chain_tree(leaves)),
    };
    let tree = Tree::new(nodes)?;

    let prosumers: Vec<Prosumer> = tree
        .leaves()
        .iter()
        .map(|leaf| random_prosumer(leaf.clone(), params, &mut rng))
        .collect();
    let heuristic: Vec<Vec<f64>> = prosumers.iter().map(valley_fill).collect();

    let mut constraints = Vec::new();
    for branch in tree.branching_nodes() {
        let members: Vec<usize> = prosumers
            .iter()
            .enumerate()
            .filter(|(_, p)| p.id.descends_from(&branch))
            .map(|(k, _)| k)
            .collect();
        // Σ w_j (P_u + x̃) over the members, or Σ w_j P_u without batteries
        let sum_over = |weights: &[f64], with_battery: bool| -> Vec<f64> {
            let mut out = vec![0.0; params.horizon];
            for (&k, &w) in members.iter().zip(weights) {
                for t in 0..params.horizon {
                    let x = if with_battery { heuristic[k][t] } else { 0.0 };
                    out[t] += w * (prosumers[k].p_uncontrolled[t] + x);
                }
            }
            out
        };

        let ones = vec![1.0; members.len()];
        let uncontrolled = sum_over(&ones, false);
        let planned = sum_over(&ones, true);
        let peak = uncontrolled.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let cap = params.cap_fraction.sample(&mut rng) * peak;
        let margin = 0.05 * peak + 0.05;
        let hi = planned.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lo = planned.iter().fold(f64::INFINITY, |m, &v| m.min(v));
        let upper = cap.max(hi + margin);
        let lower = (-cap).min(lo - margin);
        constraints.push(grid::power_constraint(
            &tree,
            &branch,
            vec![upper; params.horizon],
            Some(vec![lower; params.horizon]),
        )?);

        if rng.random_bool(params.voltage_probability) {
            let mut grads: Vec<f64> = members.iter().map(|_| params.grad_p.sample(&mut rng)).collect();
            let excursion = sum_over(&grads, true)
                .iter()
                .fold(0.0_f64, |m, v| m.max(v.abs()));
            let band = (params.vmax - params.v0).min(params.v0 - params.vmin);
            if excursion > 0.95 * band {
                let scale = 0.95 * band / excursion;
                grads.iter_mut().for_each(|g| *g *= scale);
            }
            let model = SensitivityModel {
                v0: params.v0,
                vmax: params.vmax,
                vmin: Some(params.vmin),
                grad_p: members
                    .iter()
                    .zip(&grads)
                    .map(|(&k, &g)| (prosumers[k].id.clone(), g))
                    .collect(),
                grad_q: Default::default(),
            };
            constraints.push(grid::voltage_constraint(&tree, &branch, &model, params.horizon, None)?);
        }
    }

    let mut metadata = Map::new();
    metadata.insert("seed".into(), json!(params.seed));
    metadata.insert("levels".into(), json!(levels));
    metadata.insert(
        "generator".into(),
        serde_json::to_value(params).expect("generator parameters serialize"),
    );
    let scenario = Scenario {
        tree,
        horizon: params.horizon,
        dt: params.dt,
        prosumers,
        constraints,
        objective: ObjectiveSpec::peak_shaving(),
        metadata,
    };
    scenario.validate()?;
    Ok(scenario)
}

fn random_tree(params: &GeneratorParams, rng: &mut ChaCha8Rng) -> Vec<NodeId> {
    let mut nodes = vec![NodeId::root()];
    let mut stack = vec![NodeId::root()];
    // depth-first so the draw order follows the pre-order of the tree
    while let Some(branch) = stack.pop() {
        let branches = if branch.level() + 2 < params.levels {
            rng.random_range(1..=params.max_branch_children)
        } else {
            0
        };
        let leaves = rng.random_range(params.min_leaves_per_branch..=params.max_leaves_per_branch);
        for k in 1..=branches + leaves {
            nodes.push(branch.child(k));
        }
        for k in (1..=branches).rev() {
            stack.push(branch.child(k));
        }
    }
    nodes
}

fn chain_tree(leaves: &[u32]) -> Vec<NodeId> {
    let mut nodes = vec![NodeId::root()];
    let mut branch = NodeId::root();
    for (level, &n) in leaves.iter().enumerate() {
        let has_branch = level + 1 < leaves.len();
        let first_leaf = if has_branch { 2 } else { 1 };
        for k in first_leaf..first_leaf + n {
            nodes.push(branch.child(k));
        }
        if has_branch {
            branch = branch.child(1);
            nodes.push(branch.clone());
        }
    }
    nodes
}

fn random_prosumer(id: NodeId, params: &GeneratorParams, rng: &mut ChaCha8Rng) -> Prosumer {
    let base = params.base_load.sample(rng);
    let pv = params.pv_peak.sample(rng);
    let noise = Normal::new(0.0, params.noise_std).expect("noise_std is non-negative");
    let p_uncontrolled = (0..params.horizon)
        .map(|t| {
            let h = (t as f64 * params.dt) % 24.0;
            let shape = 0.6
                + 0.4 * (-((h - 8.0) / 2.0).powi(2)).exp()
                + 0.8 * (-((h - 19.0) / 2.5).powi(2)).exp();
            let solar = pv * (-((h - 13.0) / 3.0).powi(2)).exp();
            base * shape - solar + noise.sample(rng)
        })
        .collect();
    let capacity = params.capacity.sample(rng);
    let power = params.power_limit.sample(rng);
    let soc0 = params.soc0_fraction.sample(rng) * capacity;
    Prosumer {
        id,
        battery: Battery {
            capacity,
            soc0,
            p_charge_max: power,
            p_discharge_max: power,
            dt: params.dt,
        },
        p_uncontrolled,
        price_buy: params.price_buy,
        price_sell: params.price_sell,
    }
}

/// Battery-feasible schedule pushing the net profile toward its mean.
fn valley_fill(p: &Prosumer) -> Vec<f64> {
    let b = &p.battery;
    let mean = p.p_uncontrolled.iter().sum::<f64>() / p.horizon().max(1) as f64;
    let mut soc = b.soc0;
    p.p_uncontrolled
        .iter()
        .map(|pu| {
            let want = (mean - pu).clamp(-b.p_discharge_max, b.p_charge_max);
            let next = (soc + want * b.dt).clamp(0.0, b.capacity);
            let x = (next - soc) / b.dt;
            soc = next;
            x
        })
        .collect()
}

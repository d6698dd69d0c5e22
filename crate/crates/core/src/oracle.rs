//! Centralised reference solution of the whole problem as one dense QP.
//!
//! Unlike the agents, which work in state-of-charge variables, the oracle
//! keeps the battery actions themselves as unknowns and writes the state of
//! charge as a cumulative sum.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::qp::{self, QpSettings, QpStatus, QuadraticProgram};
use crate::scenario::Scenario;
use crate::tree::NodeId;

/// Suggested upper bound on `N·T` for dense assembly.
pub const SIZE_GUIDELINE: usize = 2000;

#[derive(Clone, Debug)]
pub struct MonolithicSolution {
    pub x: BTreeMap<NodeId, Vec<f64>>,
    /// `w‖S_∅x − target‖² + Σ_i cost_i(x_i)` at the optimum.
    pub objective: f64,
    pub qp_iterations: usize,
}

/// Dense QP over `[x_1, …, x_N, c_1, …, c_N]`, where `c_i` bounds the
/// per-step cost of leaf `i` from above.
pub fn build(scenario: &Scenario) -> Result<QuadraticProgram> {
    scenario.validate()?;
    let t_len = scenario.horizon;
    let n_leaves = scenario.num_agents();
    let nx = n_leaves * t_len;
    let n = 2 * nx;
    let xi = |leaf: usize, t: usize| leaf * t_len + t;
    let ci = |leaf: usize, t: usize| nx + leaf * t_len + t;
    let dt = scenario.dt;

    let obj = scenario.root_objective();
    let mut h = vec![0.0; n * n];
    let mut g = vec![0.0; n];
    for t in 0..t_len {
        for i in 0..n_leaves {
            g[xi(i, t)] = -2.0 * obj.weight * obj.target[t];
            for j in 0..n_leaves {
                h[xi(i, t) * n + xi(j, t)] = 2.0 * obj.weight;
            }
            g[ci(i, t)] = dt;
        }
    }

    let mut rows: Vec<(Vec<(usize, f64)>, f64, f64)> = Vec::new();
    for (i, p) in scenario.prosumers.iter().enumerate() {
        let b = &p.battery;
        for t in 0..t_len {
            let pu = p.p_uncontrolled[t];
            rows.push((vec![(xi(i, t), 1.0)], -b.p_discharge_max, b.p_charge_max));
            let soc: Vec<(usize, f64)> = (0..=t).map(|tau| (xi(i, tau), dt)).collect();
            rows.push((soc, -b.soc0, b.capacity - b.soc0));
            rows.push((
                vec![(ci(i, t), 1.0), (xi(i, t), -p.price_buy)],
                p.price_buy * pu,
                f64::INFINITY,
            ));
            rows.push((
                vec![(ci(i, t), 1.0), (xi(i, t), -p.price_sell)],
                p.price_sell * pu,
                f64::INFINITY,
            ));
        }
    }
    for c in &scenario.constraints {
        let su = scenario.uncontrolled_aggregate(c);
        for t in 0..t_len {
            let (lo, hi) = (c.lower[t] - su[t], c.upper[t] - su[t]);
            if lo.is_infinite() && hi.is_infinite() {
                continue;
            }
            let entries = scenario
                .prosumers
                .iter()
                .enumerate()
                .filter_map(|(i, p)| c.weights.get(&p.id).map(|&a| (xi(i, t), a)))
                .collect();
            rows.push((entries, lo, hi));
        }
    }

    let m = rows.len();
    let mut a = vec![0.0; m * n];
    let mut lb = Vec::with_capacity(m);
    let mut ub = Vec::with_capacity(m);
    for (r, (entries, lo, hi)) in rows.into_iter().enumerate() {
        for (col, v) in entries {
            a[r * n + col] += v;
        }
        lb.push(lo);
        ub.push(hi);
    }
    QuadraticProgram::new(h, g, a, lb, ub)
}

/// Solves the whole problem centrally.
///
/// An infeasible instance is reported as [`Error::Infeasible`] naming the
/// class of constraint at fault: a battery whose own limits admit no
/// schedule, or else the coupling constraints.
pub fn solve_monolithic(scenario: &Scenario, settings: &QpSettings) -> Result<MonolithicSolution> {
    let qp = build(scenario)?;
    let sol = qp::solve(&qp, settings);
    match sol.status {
        QpStatus::Solved => {}
        QpStatus::Infeasible => return Err(Error::Infeasible(infeasibility_class(scenario))),
        QpStatus::NotConverged => return sol.into_result().map(|_| unreachable!()),
    }
    let t_len = scenario.horizon;
    let x: BTreeMap<NodeId, Vec<f64>> = scenario
        .prosumers
        .iter()
        .enumerate()
        .map(|(i, p)| (p.id.clone(), sol.z[i * t_len..(i + 1) * t_len].to_vec()))
        .collect();
    let objective = scenario.objective(&x)?;
    Ok(MonolithicSolution {
        x,
        objective,
        qp_iterations: sol.iterations,
    })
}

fn infeasibility_class(scenario: &Scenario) -> String {
    for p in &scenario.prosumers {
        if let Err(e) = p.battery.check() {
            return format!("battery limits of leaf {}: {e}", p.id);
        }
    }
    "coupling constraints admit no schedule within the battery limits".into()
}

/// `|J_h − J_o| / max(|J_o|, 1e-9)`.
pub fn relative_gap(hierarchical: f64, oracle: f64) -> f64 {
    (hierarchical - oracle).abs() / oracle.abs().max(1e-9)
}

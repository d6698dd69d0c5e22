//! Validation mode with one auxiliary copy `y_{B,i}` and one dual
//! `λ_{B,i}` per constraint and leaf. Leaves are updated one at a time in
//! leaf order; each leaf sees only its own copies.

use std::time::Instant;

use super::{secs, y_update, PhaseTimings, Problem, SolveReport, SolverConfig};
use crate::agent::{self, Reference, ReferenceBundle};
use crate::error::{Error, Result};
use crate::grid::ConstraintId;
use crate::scenario::Scenario;

struct Copies {
    /// Leaf indices with their weights.
    members: Vec<(usize, f64)>,
    y: Vec<Vec<f64>>,
    lambda: Vec<Vec<f64>>,
}

pub(super) fn run(scenario: &Scenario, mut problem: Problem, config: &SolverConfig) -> Result<SolveReport> {
    let horizon = scenario.horizon;
    let n_agents = scenario.num_agents();
    let leaf_pos = |id| problem.tree.leaves().binary_search(id).expect("weights are keyed by leaves");
    let mut copies: Vec<Copies> = problem
        .states
        .iter()
        .map(|s| {
            let members: Vec<(usize, f64)> =
                s.constraint.weights.iter().map(|(l, &a)| (leaf_pos(l), a)).collect();
            let n = members.len();
            Copies {
                members,
                y: vec![vec![0.0; horizon]; n],
                lambda: vec![vec![0.0; horizon]; n],
            }
        })
        .collect();
    // (channel, slot within the channel) for each leaf
    let mut slots: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_agents];
    for (c, cp) in copies.iter().enumerate() {
        for (slot, &(leaf, _)) in cp.members.iter().enumerate() {
            slots[leaf].push((c, slot));
        }
    }

    let mut x = vec![vec![0.0; horizon]; n_agents];
    let zero = vec![0.0; horizon];
    let mut timings = PhaseTimings::default();
    let mut primal_history = Vec::new();
    let mut dual_history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iter {
        iterations += 1;

        let t0 = Instant::now();
        let mut slowest = 0.0_f64;
        for (k, p) in scenario.prosumers.iter().enumerate() {
            let entries = slots[k]
                .iter()
                .map(|&(c, slot)| {
                    let cp = &copies[c];
                    Reference {
                        constraint: ConstraintId(c),
                        weight: cp.members[slot].1,
                        signal: cp.lambda[slot].iter().zip(&cp.y[slot]).map(|(l, y)| l - y).collect(),
                    }
                })
                .collect();
            let start = Instant::now();
            x[k] = agent::local_update(p, &zero, &ReferenceBundle { entries }, config.rho, &config.agent)
                .map_err(|e| Error::Agent {
                    leaf: p.id.clone(),
                    source: Box::new(e),
                })?;
            let took = secs(start.elapsed());
            timings.agents_cpu += took;
            slowest = slowest.max(took);
        }
        timings.agents_wall += secs(t0.elapsed());
        timings.agents_critical += slowest;

        let t0 = Instant::now();
        let mut primal = Vec::with_capacity(copies.len());
        let mut dual = Vec::with_capacity(copies.len());
        for (state, cp) in problem.states.iter_mut().zip(copies.iter_mut()) {
            let n = cp.members.len() as f64;
            let v: Vec<Vec<f64>> = cp
                .members
                .iter()
                .zip(&cp.lambda)
                .map(|(&(leaf, a), l)| x[leaf].iter().zip(l).map(|(xi, li)| a * xi + li).collect())
                .collect();
            let mut sum_v = vec![0.0; horizon];
            let mut sx = vec![0.0; horizon];
            for (vi, &(leaf, a)) in v.iter().zip(&cp.members) {
                for t in 0..horizon {
                    sum_v[t] += vi[t];
                    sx[t] += a * x[leaf][t];
                }
            }
            let y_new = y_update(state, &sum_v, config.rho * n);
            for (slot, vi) in v.iter().enumerate() {
                let (leaf, a) = cp.members[slot];
                for t in 0..horizon {
                    let yi = vi[t] + (y_new[t] - sum_v[t]) / n;
                    cp.y[slot][t] = yi;
                    cp.lambda[slot][t] += a * x[leaf][t] - yi;
                }
            }
            let change = y_new
                .iter()
                .zip(&state.y_bar)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            state.y_bar = y_new;
            state.lambda_bar = (0..horizon)
                .map(|t| cp.lambda.iter().map(|l| l[t]).sum::<f64>() / n)
                .collect();
            primal.push(super::primal_residual(state, &sx));
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
        messages: Vec::new(),
    })
}

//! CSV result files. Headers are fixed; floats use the shortest
//! representation that round-trips, and infinite bounds are written `inf`.

use std::path::Path;

use serde::Serialize;

use crate::coordinator::{PhaseTimings, SolveReport};
use crate::error::Result;
use crate::scenario::Scenario;

#[derive(Clone, Debug, Serialize)]
pub struct TimingRecord {
    pub run: usize,
    pub agents: usize,
    pub wall_s: f64,
    pub cpu_s: f64,
    pub critical_path_s: f64,
    pub forward_s: f64,
    pub agents_wall_s: f64,
    pub agents_cpu_s: f64,
    pub backward_s: f64,
    pub update_s: f64,
    pub cpu_per_agent_s: f64,
}

impl TimingRecord {
    pub fn new(run: usize, agents: usize, t: &PhaseTimings) -> Self {
        TimingRecord {
            run,
            agents,
            wall_s: t.wall(),
            cpu_s: t.cpu(),
            critical_path_s: t.critical_path(),
            forward_s: t.forward,
            agents_wall_s: t.agents_wall,
            agents_cpu_s: t.agents_cpu,
            backward_s: t.backward,
            update_s: t.update,
            cpu_per_agent_s: t.cpu() / agents.max(1) as f64,
        }
    }
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// `iter,branch_id,primal_inf,dual_inf`
pub fn write_trace(path: &Path, report: &SolveReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iter", "branch_id", "primal_inf", "dual_inf"])?;
    for (k, (primal, dual)) in report.primal_history.iter().zip(&report.dual_history).enumerate() {
        for (c, info) in report.channels.iter().enumerate() {
            w.write_record([
                (k + 1).to_string(),
                info.label.clone(),
                primal[c].to_string(),
                dual[c].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `leaf_id,t,x,soc`
pub fn write_solution(path: &Path, scenario: &Scenario, report: &SolveReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["leaf_id", "t", "x", "soc"])?;
    for p in &scenario.prosumers {
        let x = &report.x_star[&p.id];
        let soc = crate::agent::soc_trajectory(&p.battery, x);
        for t in 0..scenario.horizon {
            w.write_record([p.id.label(), t.to_string(), x[t].to_string(), soc[t].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Physical aggregates `S_B P_u` and `S_B(x* + P_u)` with their bounds.
pub struct AggregateSeries {
    pub label: String,
    pub branch: String,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

pub fn aggregate_series(scenario: &Scenario, report: &SolveReport) -> Result<Vec<AggregateSeries>> {
    let mut out = Vec::new();
    for info in &report.channels {
        let Some(k) = info.source else { continue };
        let c = &scenario.constraints[k];
        let before = scenario.uncontrolled_aggregate(c);
        let sx = c.aggregate(&report.x_star)?;
        out.push(AggregateSeries {
            label: info.label.clone(),
            branch: c.branch.label(),
            after: sx.iter().zip(&before).map(|(a, b)| a + b).collect(),
            before,
            lower: c.lower.clone(),
            upper: c.upper.clone(),
        });
    }
    Ok(out)
}

/// `constraint,branch,t,sx_before,sx_after,lower,upper`
pub fn write_aggregates(path: &Path, series: &[AggregateSeries]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["constraint", "branch", "t", "sx_before", "sx_after", "lower", "upper"])?;
    for s in series {
        for t in 0..s.before.len() {
            w.write_record([
                s.label.clone(),
                s.branch.clone(),
                t.to_string(),
                s.before[t].to_string(),
                s.after[t].to_string(),
                s.lower[t].to_string(),
                s.upper[t].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

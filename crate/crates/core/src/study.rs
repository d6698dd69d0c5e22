//! Batches of seeded scenarios and their per-level statistics.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::coordinator::{self, PhaseTimings, SolverConfig};
use crate::error::{Error, Result};
use crate::scenario::{self, GeneratorParams};
use crate::tree::NodeId;

#[derive(Clone, Debug)]
pub struct BatchConfig {
    pub count: usize,
    pub levels_min: usize,
    pub levels_max: usize,
    pub seed: u64,
    /// Template for every scenario; `seed` and `levels` are overwritten.
    pub generator: GeneratorParams,
    pub solver: SolverConfig,
    /// Scenarios solved concurrently.
    pub jobs: usize,
}

impl BatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("count must be at least 1".into()));
        }
        if self.levels_min > self.levels_max || self.levels_min < 2 || self.levels_max > 5 {
            return Err(Error::Config(
                "levels must satisfy 2 ≤ levels_min ≤ levels_max ≤ 5".into(),
            ));
        }
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        self.solver.validate()
    }

    /// Generator parameters of run `k`: seed `seed + k`, levels assigned
    /// round-robin over `[levels_min, levels_max]`.
    pub fn params(&self, k: usize) -> GeneratorParams {
        let span = self.levels_max - self.levels_min + 1;
        GeneratorParams {
            seed: self.seed.wrapping_add(k as u64),
            levels: self.levels_min + k % span,
            ..self.generator.clone()
        }
    }
}

/// One solve, without timings, so the record is reproducible.
#[derive(Clone, Debug, Serialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: Option<u64>,
    pub levels: usize,
    pub agents: usize,
    pub iterations: usize,
    pub converged: bool,
    pub final_primal: f64,
    pub objective: f64,
    pub no_action_objective: f64,
    /// `converged`, `max_iter` or the error message.
    pub status: String,
}

#[derive(Clone, Debug)]
pub struct BatchRun {
    pub record: RunRecord,
    pub timings: Option<PhaseTimings>,
    /// Mean primal residual over channels, per iteration.
    pub curve: Vec<f64>,
    /// Largest primal residual over channels, per iteration.
    pub max_curve: Vec<f64>,
    /// Final profiles; empty when the run failed.
    pub x_star: BTreeMap<NodeId, Vec<f64>>,
}

impl BatchRun {
    pub fn ok(&self) -> bool {
        self.timings.is_some()
    }

    pub fn cpu_per_agent(&self) -> Option<f64> {
        self.timings
            .map(|t| t.cpu() / self.record.agents.max(1) as f64)
    }
}

pub fn run_one(cfg: &BatchConfig, k: usize) -> BatchRun {
    let params = cfg.params(k);
    let mut record = RunRecord {
        run: k,
        seed: Some(params.seed),
        levels: params.levels,
        agents: 0,
        iterations: 0,
        converged: false,
        final_primal: f64::NAN,
        objective: f64::NAN,
        no_action_objective: f64::NAN,
        status: String::new(),
    };
    let outcome = scenario::generate(&params).and_then(|s| {
        record.agents = s.num_agents();
        record.no_action_objective = s.no_action_objective();
        let report = coordinator::run(&s, &cfg.solver)?;
        let objective = s.objective(&report.x_star)?;
        Ok((report, objective))
    });
    match outcome {
        Ok((report, objective)) => {
            record.iterations = report.iterations;
            record.converged = report.converged;
            record.final_primal = report.final_primal();
            record.objective = objective;
            record.status = if report.converged { "converged" } else { "max_iter" }.into();
            BatchRun {
                record,
                timings: Some(report.timings),
                curve: report.mean_primal_curve(),
                max_curve: (1..=report.iterations).map(|k| report.max_primal(k)).collect(),
                x_star: report.x_star,
            }
        }
        Err(e) => {
            record.status = format!("error: {e}");
            BatchRun {
                record,
                timings: None,
                curve: Vec::new(),
                max_curve: Vec::new(),
                x_star: BTreeMap::new(),
            }
        }
    }
}

/// Runs the whole batch. Results are in run order whatever `jobs` is.
pub fn run_batch(cfg: &BatchConfig) -> Result<Vec<BatchRun>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| (0..cfg.count).into_par_iter().map(|k| run_one(cfg, k)).collect()))
}

/// Linear-interpolation quantile of `v` (`q ∈ [0, 1]`). NaN when empty.
pub fn quantile(v: &[f64], q: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < s.len() {
        s[i] + frac * (s[i + 1] - s[i])
    } else {
        s[i]
    }
}

/// Mean of several residual curves. A finished run keeps contributing its
/// final value, so every curve spans the longest run.
pub fn mean_curve<'a>(curves: impl IntoIterator<Item = &'a [f64]>) -> Vec<f64> {
    let curves: Vec<&[f64]> = curves.into_iter().filter(|c| !c.is_empty()).collect();
    let len = curves.iter().map(|c| c.len()).max().unwrap_or(0);
    (0..len)
        .map(|k| {
            curves
                .iter()
                .map(|c| c[k.min(c.len() - 1)])
                .sum::<f64>()
                / curves.len() as f64
        })
        .collect()
}

/// Per-level statistics. Timing fields are the only non-reproducible ones.
#[derive(Clone, Debug, Serialize)]
pub struct LevelSummary {
    pub levels: usize,
    pub runs: usize,
    pub converged: usize,
    pub failed: usize,
    pub median_agents: f64,
    pub median_iterations: f64,
    /// Growth of naive level-by-level nesting relative to one aggregator
    /// level, `N_i^(A−1) · N_b^((A+A²)/2 − 1)` with `A = levels − 1`.
    pub naive_nesting_factor: f64,
    pub median_cpu_per_agent_s: f64,
    pub q1_cpu_per_agent_s: f64,
    pub q3_cpu_per_agent_s: f64,
    pub median_wall_per_agent_s: f64,
    pub median_critical_path_per_agent_s: f64,
}

/// Groups successful runs by level count. `branching` is the number of
/// branches per level assumed by the naive-nesting estimate.
pub fn summarize(runs: &[BatchRun], branching: f64) -> Vec<LevelSummary> {
    let mut levels: Vec<usize> = runs.iter().map(|r| r.record.levels).collect();
    levels.sort_unstable();
    levels.dedup();
    let single_level_iterations = {
        let it: Vec<f64> = runs
            .iter()
            .filter(|r| r.ok() && r.record.levels == 2)
            .map(|r| r.record.iterations as f64)
            .collect();
        quantile(&it, 0.5)
    };
    levels
        .into_iter()
        .map(|l| {
            let group: Vec<&BatchRun> = runs.iter().filter(|r| r.record.levels == l).collect();
            let ok: Vec<&&BatchRun> = group.iter().filter(|r| r.ok()).collect();
            let per_agent = |f: fn(&PhaseTimings) -> f64| -> Vec<f64> {
                ok.iter()
                    .map(|r| f(r.timings.as_ref().unwrap()) / r.record.agents.max(1) as f64)
                    .collect()
            };
            let cpu = per_agent(PhaseTimings::cpu);
            let a = (l - 1) as f64;
            LevelSummary {
                levels: l,
                runs: group.len(),
                converged: group.iter().filter(|r| r.record.converged).count(),
                failed: group.len() - ok.len(),
                median_agents: quantile(
                    &ok.iter().map(|r| r.record.agents as f64).collect::<Vec<_>>(),
                    0.5,
                ),
                median_iterations: quantile(
                    &ok.iter().map(|r| r.record.iterations as f64).collect::<Vec<_>>(),
                    0.5,
                ),
                naive_nesting_factor: single_level_iterations.powf(a - 1.0)
                    * branching.powf((a + a * a) / 2.0 - 1.0),
                median_cpu_per_agent_s: quantile(&cpu, 0.5),
                q1_cpu_per_agent_s: quantile(&cpu, 0.25),
                q3_cpu_per_agent_s: quantile(&cpu, 0.75),
                median_wall_per_agent_s: quantile(&per_agent(PhaseTimings::wall), 0.5),
                median_critical_path_per_agent_s: quantile(&per_agent(PhaseTimings::critical_path), 0.5),
            }
        })
        .collect()
}

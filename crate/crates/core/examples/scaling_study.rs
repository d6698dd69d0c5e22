//! A small batch over two to five levels, summarised per level.
//!
//! `cargo run --release --example scaling_study -- 40` runs 40 scenarios.

use hier_admm::coordinator::SolverConfig;
use hier_admm::scenario::GeneratorParams;
use hier_admm::study::{mean_curve, run_batch, summarize, BatchConfig};

fn main() -> hier_admm::Result<()> {
    let count = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(8);
    let generator = GeneratorParams {
        horizon: 24,
        dt: 1.0,
        ..GeneratorParams::default()
    };
    let cfg = BatchConfig {
        count,
        levels_min: 2,
        levels_max: 5,
        seed: 0,
        solver: SolverConfig::default(),
        jobs: 1,
        generator,
    };
    let runs = run_batch(&cfg)?;
    println!("levels runs agents iterations cpu/agent[s] naive-nesting");
    for s in summarize(&runs, cfg.generator.max_branch_children as f64) {
        println!(
            "{:6} {:4} {:6.1} {:10.1} {:12.4} {:13.3e}",
            s.levels, s.runs, s.median_agents, s.median_iterations, s.median_cpu_per_agent_s, s.naive_nesting_factor
        );
    }
    let curve = mean_curve(runs.iter().map(|r| r.curve.as_slice()));
    for k in [0, 9, 49, 99, 199].into_iter().filter(|&k| k < curve.len()) {
        println!("mean primal residual at iteration {:4}: {:.3e}", k + 1, curve[k]);
    }
    Ok(())
}

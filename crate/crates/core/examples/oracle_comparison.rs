//! Compares the hierarchical solution with the centralised one on a few
//! small generated scenarios.

use hier_admm::coordinator::{run, SolverConfig};
use hier_admm::oracle::{relative_gap, solve_monolithic};
use hier_admm::qp::QpSettings;
use hier_admm::scenario::{generate, GeneratorParams};

fn main() -> hier_admm::Result<()> {
    let oracle_settings = QpSettings {
        tol: 1e-7,
        ..QpSettings::default()
    };
    println!("seed levels agents iters  hierarchical    centralised   gap       violation");
    for seed in 0..6 {
        let params = GeneratorParams {
            seed,
            levels: 2 + (seed as usize % 2),
            horizon: 24,
            dt: 1.0,
            max_branch_children: 1,
            max_leaves_per_branch: 3,
            ..GeneratorParams::default()
        };
        let scenario = generate(&params)?;
        let report = run(&scenario, &SolverConfig::default())?;
        let j_h = scenario.objective(&report.x_star)?;
        let oracle = solve_monolithic(&scenario, &oracle_settings)?;
        println!(
            "{seed:4} {:6} {:6} {:5}  {j_h:13.5} {:13.5}   {:.2e}  {:.2e}",
            params.levels,
            scenario.num_agents(),
            report.iterations,
            oracle.objective,
            relative_gap(j_h, oracle.objective),
            scenario.constraint_violation(&report.x_star)?
        );
    }
    Ok(())
}

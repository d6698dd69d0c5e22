//! Runs the four-level example case and prints the residual history and the
//! effect on the root aggregate.

use hier_admm::coordinator::{run, SolverConfig};
use hier_admm::scenario::example_case;
use hier_admm::tree::NodeId;

fn main() -> hier_admm::Result<()> {
    let scenario = example_case(7, 24, 1.0)?;
    println!(
        "{} prosumers over {} levels, {} coupling constraints",
        scenario.num_agents(),
        scenario.levels(),
        scenario.constraints.len()
    );
    let report = run(&scenario, &SolverConfig::default())?;
    println!("converged {} after {} iterations", report.converged, report.iterations);
    for k in (1..=report.iterations).step_by((report.iterations / 10).max(1)) {
        println!("  iter {k:4}  max primal {:.3e}", report.max_primal(k));
    }
    println!("  iter {:4}  max primal {:.3e}", report.iterations, report.final_primal());

    let before = scenario.uncontrolled_sum(&NodeId::root());
    let after: Vec<f64> = (0..scenario.horizon)
        .map(|t| before[t] + report.x_star.values().map(|x| x[t]).sum::<f64>())
        .collect();
    let peak = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let energy = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
    println!("root peak {:.2} kW → {:.2} kW", peak(&before), peak(&after));
    println!("‖S P_u‖² {:.2} → ‖S(x*+P_u)‖² {:.2}", energy(&before), energy(&after));
    println!(
        "objective {:.3} (no action {:.3}), worst constraint violation {:.2e}",
        scenario.objective(&report.x_star)?,
        scenario.no_action_objective(),
        scenario.constraint_violation(&report.x_star)?
    );
    Ok(())
}

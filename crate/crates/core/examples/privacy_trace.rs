//! Records every message of a three-level run and checks what crosses each
//! edge of the tree.

use hier_admm::coordinator::{run, Payload, SolverConfig};
use hier_admm::scenario::{generate, GeneratorParams};

fn main() -> hier_admm::Result<()> {
    let scenario = generate(&GeneratorParams {
        seed: 11,
        levels: 3,
        horizon: 24,
        dt: 1.0,
        max_leaves_per_branch: 3,
        ..GeneratorParams::default()
    })?;
    let cfg = SolverConfig {
        record_messages: true,
        ..SolverConfig::default()
    };
    let report = run(&scenario, &cfg)?;
    let (mut down, mut up) = (0, 0);
    for m in &report.messages {
        match &m.payload {
            Payload::References(_) => down += 1,
            Payload::Aggregates(_) => up += 1,
        }
    }
    println!("{} iterations, {down} downward and {up} upward messages", report.iterations);
    for m in report.messages.iter().filter(|m| m.iteration == 1) {
        let (kind, entries) = match &m.payload {
            Payload::References(e) => ("refs", e),
            Payload::Aggregates(e) => ("aggr", e),
        };
        let ids: Vec<usize> = entries.iter().map(|(c, _)| c.0).collect();
        println!("  {:>8} → {:<8} {kind} channels {ids:?}", m.from.label(), m.to.label());
    }
    Ok(())
}

//! Turns voltage sensitivities into a coupling constraint and projects onto
//! it.

use std::collections::BTreeMap;

use hier_admm::coordinator::project_branch;
use hier_admm::grid::{power_constraint, voltage_constraint, SensitivityModel};
use hier_admm::tree::{NodeId, Tree};

fn main() -> hier_admm::Result<()> {
    let root = NodeId::root();
    let leaves: Vec<NodeId> = (1..=3).map(|k| root.child(k)).collect();
    let tree = Tree::new(std::iter::once(root.clone()).chain(leaves.iter().cloned()))?;

    let grad_p: BTreeMap<NodeId, f64> = leaves.iter().cloned().zip([0.004, 0.006, 0.009]).collect();
    let grad_q: BTreeMap<NodeId, f64> = leaves.iter().cloned().zip([0.002, 0.002, 0.003]).collect();
    let tan_phi: BTreeMap<NodeId, f64> = [(leaves[2].clone(), 0.3)].into_iter().collect();
    let model = SensitivityModel {
        v0: 1.0,
        vmax: 1.05,
        vmin: Some(0.95),
        grad_p,
        grad_q,
    };
    let horizon = 4;
    let voltage = voltage_constraint(&tree, &root, &model, horizon, Some(&tan_phi))?;
    println!("voltage weights {:?}", voltage.weights);
    println!("band [{}, {}]", voltage.lower[0], voltage.upper[0]);

    // Σ a_i x_i for a schedule that charges hard in the second step
    let x: BTreeMap<NodeId, Vec<f64>> = leaves
        .iter()
        .map(|l| (l.clone(), vec![0.5, 4.0, -1.0, 0.0]))
        .collect();
    let sx = voltage.aggregate(&x)?;
    println!("Σ a x   {sx:?}");
    println!("Π(Σ a x) {:?}", project_branch(&voltage, &sx));
    println!("violation {:.4}", voltage.violation(&sx));

    let cap = power_constraint(&tree, &root, vec![6.0; horizon], None)?;
    let sum = cap.aggregate(&x)?;
    println!("power {sum:?} capped to {:?}", project_branch(&cap, &sum));
    Ok(())
}

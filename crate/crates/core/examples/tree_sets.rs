//! Builds a small hierarchy and prints the node sets the coordinator uses.

use hier_admm::tree::{NodeId, Tree};

fn id(path: &[u32]) -> NodeId {
    NodeId::new(path.to_vec()).expect("valid path")
}

fn main() -> hier_admm::Result<()> {
    // ∅ ── (1,1) ── (1,1,1), (1,1,2)
    //   └─ (1,2)
    let tree = Tree::new([
        NodeId::root(),
        id(&[1, 1]),
        id(&[1, 2]),
        id(&[1, 1, 1]),
        id(&[1, 1, 2]),
    ])?;

    println!("{} node levels", tree.depth());
    println!("leaves {:?}", tree.leaves());
    println!("branching nodes {:?}", tree.branching_nodes());
    for level in 0..tree.depth() {
        println!("level {level}: {:?}", tree.nodes_at_level(level));
    }
    let node = id(&[1, 1, 2]);
    println!("ancestors of {node}: {:?}", tree.ancestors(&node)?);
    println!("leaves below {}: {:?}", id(&[1, 1]), tree.leaf_descendants(&id(&[1, 1]))?);
    println!("bottom-up branch order {:?}", tree.bottom_up_branches());

    match tree.leaf_descendants(&id(&[1, 2])) {
        Err(e) => println!("asking a leaf for its leaves: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}

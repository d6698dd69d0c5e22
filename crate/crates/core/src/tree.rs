//! Rooted-tree topology with tuple node identifiers.
//!
//! The root is the empty tuple `∅`. Every other node carries the full path of
//! enumeration indices from the root, with a leading `1`: first-level nodes
//! are `(1,1), (1,2), …`, their children `(1,1,1), (1,1,2), …`. The parent of
//! a node is obtained by dropping the last entry, and `(1,k)` hangs directly
//! below the root.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tuple address of a node in the hierarchy.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct NodeId(Vec<u32>);

impl NodeId {
    pub fn root() -> Self {
        NodeId(Vec::new())
    }

    pub fn new(path: Vec<u32>) -> Result<Self> {
        if path.is_empty() {
            return Ok(NodeId(path));
        }
        if path[0] != 1 {
            return Err(Error::InvalidNodeId(path, "first entry must be 1"));
        }
        if path.len() == 1 {
            return Err(Error::InvalidNodeId(
                path,
                "a single-entry path is reserved for the root, use []",
            ));
        }
        if path.iter().any(|&d| d == 0) {
            return Err(Error::InvalidNodeId(path, "entries must be positive"));
        }
        Ok(NodeId(path))
    }

    pub fn path(&self) -> &[u32] {
        &self.0
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    /// Level in the hierarchy; the root is level 0.
    pub fn level(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    pub fn parent(&self) -> Option<NodeId> {
        match self.0.len() {
            0 => None,
            2 => Some(NodeId::root()),
            n => Some(NodeId(self.0[..n - 1].to_vec())),
        }
    }

    /// The `k`-th child (1-based) of this node.
    pub fn child(&self, k: u32) -> NodeId {
        assert!(k >= 1, "child enumeration is 1-based");
        let mut path = if self.is_root() { vec![1] } else { self.0.clone() };
        path.push(k);
        NodeId(path)
    }

    /// True when `self` lies strictly below `other`.
    pub fn descends_from(&self, other: &NodeId) -> bool {
        if other.is_root() {
            return !self.is_root();
        }
        self.0.len() > other.0.len() && self.0.starts_with(&other.0)
    }

    /// Compact label for CSV output: `root` or dotted path `1.1.2`.
    pub fn label(&self) -> String {
        if self.is_root() {
            "root".to_string()
        } else {
            self.0
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(".")
        }
    }
}

impl TryFrom<Vec<u32>> for NodeId {
    type Error = Error;

    fn try_from(path: Vec<u32>) -> Result<Self> {
        NodeId::new(path)
    }
}

impl From<NodeId> for Vec<u32> {
    fn from(id: NodeId) -> Self {
        id.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_root() {
            return write!(f, "∅");
        }
        write!(f, "(")?;
        for (k, d) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, ")")
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Immutable rooted tree. Node sets are computed once at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    nodes: BTreeSet<NodeId>,
    children: BTreeMap<NodeId, Vec<NodeId>>,
    leaves: Vec<NodeId>,
}

impl Tree {
    /// Builds a tree from its node set. The root must be present and every
    /// other node's parent must be present too.
    pub fn new(nodes: impl IntoIterator<Item = NodeId>) -> Result<Self> {
        let nodes: BTreeSet<NodeId> = nodes.into_iter().collect();
        if !nodes.contains(&NodeId::root()) {
            return Err(Error::InvalidTree("root node is missing".into()));
        }
        let mut children: BTreeMap<NodeId, Vec<NodeId>> =
            nodes.iter().map(|n| (n.clone(), Vec::new())).collect();
        for node in &nodes {
            if let Some(parent) = node.parent() {
                match children.get_mut(&parent) {
                    Some(list) => list.push(node.clone()),
                    None => {
                        return Err(Error::InvalidTree(format!(
                            "parent {parent} of node {node} is missing"
                        )))
                    }
                }
            }
        }
        // BTreeSet iteration already yields children in lexicographic order.
        let leaves = children
            .iter()
            .filter(|(_, c)| c.is_empty())
            .map(|(n, _)| n.clone())
            .collect();
        Ok(Tree {
            nodes,
            children,
            leaves,
        })
    }

    pub fn single() -> Self {
        Tree::new([NodeId::root()]).expect("root-only tree is valid")
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, node: &NodeId) -> bool {
        self.nodes.contains(node)
    }

    /// All nodes in lexicographic (pre-order) order.
    pub fn nodes(&self) -> impl Iterator<Item = &NodeId> {
        self.nodes.iter()
    }

    fn check(&self, node: &NodeId) -> Result<()> {
        if self.contains(node) {
            Ok(())
        } else {
            Err(Error::UnknownNode(node.clone()))
        }
    }

    pub fn children(&self, node: &NodeId) -> Result<&[NodeId]> {
        self.children
            .get(node)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownNode(node.clone()))
    }

    pub fn is_leaf(&self, node: &NodeId) -> Result<bool> {
        Ok(self.children(node)?.is_empty())
    }

    pub fn descendants(&self, node: &NodeId) -> Result<BTreeSet<NodeId>> {
        self.check(node)?;
        Ok(self
            .nodes
            .iter()
            .filter(|n| n.descends_from(node))
            .cloned()
            .collect())
    }

    /// Proper ancestors, root first.
    pub fn ancestors(&self, node: &NodeId) -> Result<Vec<NodeId>> {
        self.check(node)?;
        let mut out = Vec::with_capacity(node.level());
        let mut cur = node.parent();
        while let Some(p) = cur {
            cur = p.parent();
            out.push(p);
        }
        out.reverse();
        Ok(out)
    }

    /// Leaves in lexicographic order.
    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    /// Branching nodes (everything that is not a leaf), lexicographic order.
    pub fn branching_nodes(&self) -> Vec<NodeId> {
        self.children
            .iter()
            .filter(|(_, c)| !c.is_empty())
            .map(|(n, _)| n.clone())
            .collect()
    }

    /// Leaves below `branch`, lexicographic order.
    pub fn leaf_descendants(&self, branch: &NodeId) -> Result<Vec<NodeId>> {
        if self.is_leaf(branch)? {
            return Err(Error::NotBranch(branch.clone()));
        }
        Ok(self
            .leaves
            .iter()
            .filter(|l| l.descends_from(branch))
            .cloned()
            .collect())
    }

    pub fn nodes_at_level(&self, level: usize) -> BTreeSet<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.level() == level)
            .cloned()
            .collect()
    }

    /// Number of node levels, counting the root level (a root-only tree has 1).
    pub fn depth(&self) -> usize {
        self.nodes.iter().map(NodeId::level).max().unwrap_or(0) + 1
    }

    /// Branching nodes ordered deepest first, so that children are visited
    /// before their parents.
    pub fn bottom_up_branches(&self) -> Vec<NodeId> {
        let mut b = self.branching_nodes();
        b.sort_by(|x, y| y.level().cmp(&x.level()).then_with(|| x.cmp(y)));
        b
    }
}

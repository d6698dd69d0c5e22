//! Hierarchical ADMM coordination of battery prosumers arranged in a tree of
//! aggregators, with per-branch power and voltage limits.
//!
//! Start with [`scenario::generate`] or [`scenario::load`], then call
//! [`coordinator::run`]. [`oracle::solve_monolithic`] gives the centralised
//! optimum of small instances for comparison.

pub mod agent;
pub mod cli;
pub mod coordinator;
pub mod error;
pub mod grid;
pub mod oracle;
pub mod qp;
pub mod scenario;
pub mod study;
pub mod tree;

pub use error::{Error, Result};

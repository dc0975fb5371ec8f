//! Node-injection fairness attacks on graph neural networks.
//!
//! The crate builds and poisons attributed graphs, trains GCN/SGC surrogates
//! and victims with hand-derived gradients, estimates MC-dropout
//! uncertainty, optimizes injected node features against group-fairness
//! objectives, and measures the damage.

pub mod attack;
pub mod audit;
pub mod error;
pub mod eval;
pub mod graph;
pub mod injection;
pub mod io;
pub mod model;
pub mod rng;
pub mod synth;
pub mod uncertainty;

pub use error::{Error, Result};
pub use graph::{apply_plan, node_homophily, Graph, InjectionPlan, Split};

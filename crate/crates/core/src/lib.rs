//! Alpha-fair traffic aggregation across multiple radio access technologies.
//!
//! The optimizer works on the dual of the network utility problem: each RAT
//! keeps a load indicator, users pick the RAT with the best rate per unit of
//! load, and subgradient steps move the indicators until the loads balance.
//! Fractions are then recovered from the optimality conditions, with users
//! that tie between RATs splitting their traffic.
//!
//! ```
//! use traffic_agg::{model::Scenario, pipeline::solve, dual_solver::SolverConfig};
//!
//! let s = Scenario::new(vec![vec![10e6, 1e6], vec![5e6, 5e6], vec![1e6, 10e6]], 1.0).unwrap();
//! let report = solve(&s, &SolverConfig::default()).unwrap();
//! assert_eq!(report.splitter_count, 1);
//! assert!(report.kkt_residual < 1e-9);
//! ```

// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cli;
pub mod decentralized;
pub mod dual_solver;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod polish;
pub mod primal_recovery;
pub mod pipeline;
pub mod scenarios;
pub mod utility;

pub use error::{Error, Result};

//! Distributed resource allocation over directed graphs with quantized
//! communication.
//!
//! The crate solves problems of the form
//!
//! ```text
//! minimize   sum_i f_i(x_i)
//! subject to sum_i A_i x_i = b
//! ```
//!
//! with a proximal Jacobian ADMM whose only global quantity, the coupling
//! residual, is estimated by a finite-time quantized average consensus
//! protocol run over a strongly connected digraph. Centralized proximal
//! Jacobian ADMM baselines, a KKT oracle, seeded instance generation and an
//! experiment driver are included.

pub mod admm;
pub mod consensus;
pub mod digraph;
pub mod error;
pub mod experiment;
pub mod local_solver;
pub mod metrics;
pub mod probgen;
pub mod quantize;

pub use admm::{
    centralized_pj_admm_run, qdpj_admm_run, validate_parameters, AdmmConfig, AveragingMode,
    CommMode, IterationTrace, NodeVariables, RunOutput,
};
pub use consensus::{run_dfqac, ConsensusNodeState, ConsensusResult, ConsensusSim};
pub use digraph::Digraph;
pub use error::{Error, Result};
pub use local_solver::{prox_step, spectral_norm, LocalProblem, ProxWeight, QuadraticObjective};
pub use metrics::{kkt_oracle, SaddlePoint};
pub use probgen::{generate, CouplingSpec, Instance, InstanceSpec};
pub use quantize::{QuantizationLevel, QuantizedVector};

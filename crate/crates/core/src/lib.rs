//! Federated learning contribution estimation from class prototypes.
//!
//! Clients upload per-class prototypes each round. The server scores every
//! upload by how close it is to the consensus (mass) and how far it moves the
//! previous global prototype (velocity), combines both into a momentum
//! weight, aggregates with it, and records the weights in a
//! round × client × class tensor. Missing entries are filled by low-rank
//! completion and the completed tensor is collapsed to one share per client.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod completion;
pub mod data;
pub mod engine;
pub mod evaluation;
pub mod io;
pub mod model;
pub mod momentum;
pub mod numerics;
pub mod prototypes;
pub mod store;

pub use completion::{complete_tensor, CompletionConfig, ContributionTensor};
pub use engine::{run_federation, run_federation_with_threads, Method, RunConfig, RunRecord};
pub use evaluation::{final_contributions, kl_divergence, ContributionResult};
pub use numerics::{SeededRng, SimplexVector};
pub use store::{load_run, persist_run};

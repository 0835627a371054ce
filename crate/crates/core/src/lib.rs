//! Deterministic, seedable simulator for federated contextual combinatorial
//! cascading bandits.
//!
//! A population of users, partitioned into unknown preference clusters, is
//! served by per-user agents that recommend ranked item lists under a cascade
//! click model. Agents learn ridge-regression estimates from partial cascade
//! feedback and communicate asynchronously with a central server, which
//! maintains a deletion-only heterogeneity graph over users and aggregates
//! connected-component models for download. The crate provides:
//!
//! - [`numerics`]: dense symmetric-positive-definite kernels (Cholesky
//!   factorization, solves, log-determinants, Mahalanobis norms).
//! - [`environment`]: synthetic and ratings-derived worlds, cascade feedback
//!   sampling, the exact top-K oracle, and per-round pseudo-regret.
//! - [`agent`]: UCB action scoring, local Gram buffers, and the
//!   communication-trigger rules for all five protocol variants.
//! - [`server`]: per-agent summaries, the pairwise heterogeneity test, and
//!   connected-component aggregation.
//! - [`protocol`]: the round-by-round state machine wiring the above.
//! - [`runner`]: seeded replications, mean/stddev aggregation, CSV output.
//! - [`ingest`]: ratings-matrix preprocessing (top-N filter, truncated SVD,
//!   k-means user clustering) producing an embedding bundle.
//!
//! Every run is a pure function of its configuration and seed. With the
//! `parallel` feature (default) replications and the dense SVD inner loops
//! run on rayon; disabling the feature yields a bit-identical sequential
//! build.

pub mod agent;
pub mod environment;
pub mod ingest;
pub mod numerics;
pub mod protocol;
pub mod runner;
pub mod server;

pub use agent::{AgentState, AlgorithmParams, CommOrder, GramSummary, Protocol};
pub use environment::{Action, Environment, Feedback, GroundTruth, RoundContext, SyntheticConfig, ThetaMode};
pub use protocol::{EnvConfig, RoundRecord, RunResult};
pub use runner::{AggregateSeries, ExperimentConfig};
pub use server::ServerState;

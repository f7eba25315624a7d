//! Desk-scale, fully deterministic simulator for federated learning on
//! node-classification graphs.
//!
//! The crate implements one protocol family end to end: clients holding
//! disjoint local graphs train GraphSAGE-based generators, a server groups
//! clients into clusters by the similarity of their per-class feature
//! centroids, each cluster trains a small discriminator on aggregated
//! centroids, and a mutual-information-guided step rescales every client's
//! generator each round instead of averaging it. Local, FedAvg, and
//! clustered-FedAvg baselines run on the same data and the same accounting
//! so arms are directly comparable.
//!
//! Everything is driven through [`config::ExperimentConfig`] and
//! [`experiment::run_experiment`]; the `fedmig` binary is a thin wrapper
//! over those. The `examples/` directory holds one runnable program per
//! capability and is the best place to start reading:
//!
//! ```text
//! cargo run --example synthetic_dataset     # build a clustered SBM federation
//! cargo run --example gradient_check        # autodiff vs. finite differences
//! cargo run --example cluster_clients       # pretraining + agglomerative merge
//! cargo run --example train_federation      # a short full-protocol run
//! cargo run --example baselines_compare     # all four arms side by side
//! cargo run --example dp_noise              # Gaussian mechanism calibration
//! cargo run --example projection_export     # 2-D PCA of synthesized features
//! ```
//!
//! Design constraints observed throughout:
//!
//! * all numerics are `f64`, summation orders are fixed, and every source of
//!   randomness is a seeded ChaCha stream, so identical configs produce
//!   byte-identical outputs;
//! * reverse-mode gradients come from a single tape ([`tensor::Tape`]) whose
//!   primitives are each validated against central finite differences;
//! * losses and aggregation rules ship with independent brute-force
//!   reference evaluators used by the test suite, never by the runtime.

pub mod error;
pub mod graph;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod pca;
pub mod privacy;
pub mod tensor;

mod seed;

pub use error::{Error, Result};

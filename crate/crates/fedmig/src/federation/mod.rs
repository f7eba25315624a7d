//! The protocol engine: one-time client clustering, the prototype
//! pipeline, per-round orchestration, divergence-guided generator
//! correction, discriminator aggregation, baselines, and communication
//! accounting.
//!
//! A federation is a set of clients with disjoint local graphs grouped
//! into immutable clusters. Each round the clients train locally against
//! the context broadcast at the end of the previous round, upload
//! prototypes (and, depending on configuration, generator parameters),
//! and the server rebuilds the cluster context, retrains the cluster
//! discriminators, and redistributes corrected or averaged models.

pub mod baselines;
pub mod clustering;
pub mod comm;
pub mod prototypes;
pub mod rounds;

use std::fmt;
use std::str::FromStr;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{FederationDataset, LocalGraph};
use crate::losses::{class_frequency_weights, LossBreakdown};
use crate::metrics::MetricsBundle;
use crate::models::{
    AdamSet, DiscriminatorParams, GeneratorParams, ModelDims, ProjectionParams,
};
use crate::privacy::DpConfig;
use crate::seed::derive;

pub use clustering::{pretrain_and_cluster, ClusterAssignment};
pub use prototypes::ClassBlock;

/// Experiment arm selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Graphfedmig,
    Local,
    Fedavg,
    Flhc,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::Graphfedmig => "graphfedmig",
            Arm::Local => "local",
            Arm::Fedavg => "fedavg",
            Arm::Flhc => "flhc",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "graphfedmig" => Ok(Arm::Graphfedmig),
            "local" => Ok(Arm::Local),
            "fedavg" => Ok(Arm::Fedavg),
            "flhc" => Ok(Arm::Flhc),
            other => Err(Error::Config(format!(
                "unknown arm '{other}' (expected graphfedmig, local, fedavg, or flhc)"
            ))),
        }
    }
}

/// Feature switches for the protocol arm. All on reproduces the full
/// method; turning pieces off yields the published ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    /// Cluster-discriminator feedback term in the client objective.
    pub gan: bool,
    /// Contrastive alignment term in the client objective.
    pub mi_loss: bool,
    /// Divergence-guided generator correction replacing within-cluster
    /// averaging.
    pub migma: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            gan: true,
            mi_loss: true,
            migma: true,
        }
    }
}

impl AblationFlags {
    /// The discriminator exists when a client-side feedback term or the
    /// correction pipeline needs its posteriors.
    pub fn discriminator_active(self) -> bool {
        self.gan || self.migma
    }

    /// Generated per-class means are uploaded when anything consumes the
    /// cluster-level synthetic features.
    pub fn generated_means_active(self) -> bool {
        self.gan || self.mi_loss || self.migma
    }
}

/// Everything that parameterizes a protocol run apart from the dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtocolParams {
    /// Clustering similarity threshold; merging stops at or below it.
    pub threshold: f64,
    /// Weight of the discriminator feedback term.
    pub lambda1: f64,
    /// Weight of the contrastive alignment term.
    pub lambda2: f64,
    /// Correction clip radius: weights live in [1-gamma, 1+gamma].
    pub gamma: f64,
    pub local_epochs: usize,
    pub pre_epochs: usize,
    pub d_steps: usize,
    pub learning_rate: f64,
    /// Softmax temperature of the contrastive term.
    pub temperature: f64,
    pub hidden: usize,
    pub ablation: AblationFlags,
    /// When set, bypasses similarity clustering and deals clients into
    /// this many contiguous blocks. Used by equivalence tests.
    pub clusters: Option<usize>,
    pub dp: DpConfig,
    pub seed: u64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        ProtocolParams {
            threshold: 0.8,
            lambda1: 1.0,
            lambda2: 1e-5,
            gamma: 0.5,
            local_epochs: 3,
            pre_epochs: 5,
            d_steps: 1,
            learning_rate: 0.01,
            temperature: 1.0,
            hidden: 64,
            ablation: AblationFlags::default(),
            clusters: None,
            dp: DpConfig::default(),
            seed: 7,
        }
    }
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > -1.0 && self.threshold <= 1.0) {
            return Err(Error::Config(format!(
                "threshold must lie in (-1, 1], got {}",
                self.threshold
            )));
        }
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma must lie in [0, 1], got {}",
                self.gamma
            )));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.local_epochs == 0 || self.pre_epochs == 0 {
            return Err(Error::Config(
                "local_epochs and pre_epochs must be at least 1".into(),
            ));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        if let Some(k) = self.clusters {
            if k == 0 {
                return Err(Error::Config("cluster override must be positive".into()));
            }
        }
        self.dp.validate()?;
        Ok(())
    }
}

/// What a client sends after local training. Rows exist exactly for the
/// classes listed in each block.
#[derive(Debug, Clone)]
pub struct ClientUpload {
    /// Per-class means of real-node embeddings over train nodes.
    pub prototypes: ClassBlock,
    /// Per-class means of embeddings grouped by predicted class, over
    /// all local nodes.
    pub generated: ClassBlock,
}

/// One participant: its private graph, its models, and its optimizer
/// state. Cloneable so a round can be rolled back atomically.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: usize,
    pub graph: LocalGraph,
    pub generator: GeneratorParams,
    pub projection: ProjectionParams,
    pub gen_opt: AdamSet,
    pub proj_opt: AdamSet,
    /// Train-mask label counts, one entry per class.
    pub class_counts: Vec<usize>,
    /// `class_counts` normalized to sum to 1.
    pub class_weights: Vec<f64>,
    /// Most recent upload, populated by local training.
    pub upload: Option<ClientUpload>,
    /// Private stream for privacy noise, disjoint from model init.
    pub noise_rng: ChaCha8Rng,
}

impl ClientState {
    pub fn new(
        client_id: usize,
        graph: LocalGraph,
        dims: &ModelDims,
        params: &ProtocolParams,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive(params.seed, "client-init", client_id as u64));
        let generator = GeneratorParams::init(dims, &mut rng);
        let projection = ProjectionParams::init(dims, &mut rng);
        let gen_opt = AdamSet::for_params(&generator, params.learning_rate);
        let proj_opt = AdamSet::for_params(&projection, params.learning_rate);
        let class_counts = graph.train_class_counts();
        let class_weights = class_frequency_weights(&class_counts);
        let noise_rng =
            ChaCha8Rng::seed_from_u64(derive(params.seed, "dp-noise", client_id as u64));
        ClientState {
            client_id,
            graph,
            generator,
            projection,
            gen_opt,
            proj_opt,
            class_counts,
            class_weights,
            upload: None,
            noise_rng,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }
}

/// Server-held aggregates rebroadcast to a cluster's members. `cp` and
/// `qbar` exist only when the discriminator feedback path is on.
#[derive(Debug, Clone)]
pub struct ClusterContext {
    /// Aggregated real prototypes, weighted by label counts.
    pub cp: Option<ClassBlock>,
    /// Aggregated generated per-class means, weighted by group sizes.
    pub cz: ClassBlock,
    /// Mean member class distribution under the cluster discriminator.
    pub qbar: Option<Vec<f64>>,
}

/// One cluster: membership, its discriminator, and the aggregates and
/// correction weights from the latest completed round.
#[derive(Debug, Clone)]
pub struct ClusterState {
    pub cluster_id: usize,
    /// Client ids, ascending.
    pub members: Vec<usize>,
    pub disc: DiscriminatorParams,
    pub disc_opt: AdamSet,
    /// Broadcast bundle produced by the latest server phase; None before
    /// round 0 completes or when no client-side term consumes it.
    pub ctx: Option<ClusterContext>,
    /// Per-member divergence scores, aligned with `members`.
    pub mi: Vec<f64>,
    /// Per-member correction weights, aligned with `members`.
    pub weights: Vec<f64>,
}

/// Full mutable protocol state for one run.
#[derive(Debug)]
pub struct Federation {
    pub params: ProtocolParams,
    pub dims: ModelDims,
    pub num_classes: usize,
    pub minority_classes: Vec<usize>,
    pub clients: Vec<ClientState>,
    pub assignment: ClusterAssignment,
    pub clusters: Vec<ClusterState>,
    pub phi_global: DiscriminatorParams,
    pub round: usize,
}

/// Per-round record: losses, correction weights, metrics over the union
/// of test sets, and exact per-client traffic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    /// Final-epoch loss breakdown per client.
    pub losses: Vec<LossBreakdown>,
    /// Divergence score per client; zero when the correction path is off.
    pub mi: Vec<f64>,
    /// Correction weight per client; one when the correction path is off.
    pub weights: Vec<f64>,
    pub metrics: MetricsBundle,
    pub bytes_up: Vec<u64>,
    pub bytes_down: Vec<u64>,
}

impl RoundReport {
    pub fn total_bytes_up(&self) -> u64 {
        self.bytes_up.iter().sum()
    }

    pub fn total_bytes_down(&self) -> u64 {
        self.bytes_down.iter().sum()
    }

    pub fn mean_losses(&self) -> (f64, f64, f64) {
        let n = self.losses.len().max(1) as f64;
        let ce = self.losses.iter().map(|l| l.ce).sum::<f64>() / n;
        let gan = self.losses.iter().map(|l| l.gan).sum::<f64>() / n;
        let mi = self.losses.iter().map(|l| l.mi).sum::<f64>() / n;
        (ce, gan, mi)
    }
}

/// Builds per-client state with ids matching dataset order. Shared by
/// the protocol arm and the baselines so equal seeds give equal inits.
pub fn build_clients(
    dataset: &FederationDataset,
    dims: &ModelDims,
    params: &ProtocolParams,
) -> Vec<ClientState> {
    dataset
        .clients
        .iter()
        .cloned()
        .enumerate()
        .map(|(m, graph)| ClientState::new(m, graph, dims, params))
        .collect()
}

impl Federation {
    /// Builds clients, clusters them (or deals them into forced blocks),
    /// and initializes every cluster discriminator from one shared draw.
    pub fn new(dataset: &FederationDataset, params: ProtocolParams) -> Result<Self> {
        params.validate()?;
        let dims = ModelDims::new(dataset.feature_dim(), params.hidden, dataset.num_classes);
        dims.validate()?;
        let clients = build_clients(dataset, &dims, &params);
        let assignment = match params.clusters {
            Some(k) => ClusterAssignment::forced(clients.len(), k, params.threshold)?,
            None => {
                let graphs: Vec<&LocalGraph> = clients.iter().map(|c| &c.graph).collect();
                pretrain_and_cluster(
                    &graphs,
                    &dims,
                    params.threshold,
                    params.pre_epochs,
                    params.learning_rate,
                    params.seed,
                )?
            }
        };
        let mut disc_rng = ChaCha8Rng::seed_from_u64(derive(params.seed, "disc-init", 0));
        let phi_global = DiscriminatorParams::init(&dims, &mut disc_rng);
        let clusters = (0..assignment.num_clusters)
            .map(|k| {
                let members: Vec<usize> = assignment
                    .cluster_of
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c == k)
                    .map(|(m, _)| m)
                    .collect();
                ClusterState {
                    cluster_id: k,
                    members,
                    disc: phi_global.clone(),
                    disc_opt: AdamSet::for_params(&phi_global, params.learning_rate),
                    ctx: None,
                    mi: Vec::new(),
                    weights: Vec::new(),
                }
            })
            .collect();
        Ok(Federation {
            params,
            dims,
            num_classes: dataset.num_classes,
            minority_classes: dataset.minority_classes.clone(),
            clients,
            assignment,
            clusters,
            phi_global,
            round: 0,
        })
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }
}

/// Mutable state captured at round start so a failed round can be undone.
#[derive(Debug, Clone)]
pub struct RoundSnapshot {
    clients: Vec<ClientState>,
    clusters: Vec<ClusterState>,
    phi_global: DiscriminatorParams,
    round: usize,
}

impl Federation {
    pub fn snapshot(&self) -> RoundSnapshot {
        RoundSnapshot {
            clients: self.clients.clone(),
            clusters: self.clusters.clone(),
            phi_global: self.phi_global.clone(),
            round: self.round,
        }
    }

    pub fn restore(&mut self, snap: RoundSnapshot) {
        self.clients = snap.clients;
        self.clusters = snap.clusters;
        self.phi_global = snap.phi_global;
        self.round = snap.round;
    }
}

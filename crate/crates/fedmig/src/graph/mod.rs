//! Graph containers and dataset plumbing: CSR adjacency, per-client local
//! graphs with train/val/test masks, CSV ingestion, a stochastic block
//! model generator, and a stratified partitioner that splits one global
//! graph into a federation.

mod csv_io;
mod partition;
mod sbm;

pub use csv_io::{load_csv_graph, load_dataset, save_dataset, SplitSpec};
pub use partition::{partition_clients, PartitionSpec};
pub use sbm::{generate_sbm, SbmConfig};

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

/// Compressed sparse row adjacency. Construction symmetrizes the edge
/// list, removes self-loops and duplicates, and sorts neighbor lists, so
/// any `Csr` is an undirected simple graph by the time it exists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Csr {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl Csr {
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut pairs = Vec::with_capacity(edges.len() * 2);
        for &(u, v) in edges {
            if u >= num_nodes || v >= num_nodes {
                return Err(Error::Structural(format!(
                    "edge ({u}, {v}) references a node outside 0..{num_nodes}"
                )));
            }
            if u == v {
                continue; // self-loops are dropped
            }
            pairs.push((u, v));
            pairs.push((v, u));
        }
        pairs.sort_unstable();
        pairs.dedup();

        let mut offsets = vec![0usize; num_nodes + 1];
        for &(u, _) in &pairs {
            offsets[u + 1] += 1;
        }
        for i in 0..num_nodes {
            offsets[i + 1] += offsets[i];
        }
        let indices = pairs.into_iter().map(|(_, v)| v).collect();
        Ok(Csr { offsets, indices })
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.indices.len() / 2
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.indices[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    /// Iterates undirected edges as `(u, v)` with `u < v`.
    pub fn undirected_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes()).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .filter(move |&&v| u < v)
                .map(move |&v| (u, v))
        })
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.num_nodes())
            .all(|u| self.neighbors(u).iter().all(|&v| self.neighbors(v).contains(&u)))
    }
}

/// One client's private graph: features, labels, adjacency, and disjoint
/// role masks over the same node set.
#[derive(Debug, Clone)]
pub struct LocalGraph {
    pub adj: Csr,
    /// `N x d_V` node features.
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub train_mask: Vec<bool>,
    pub val_mask: Vec<bool>,
    pub test_mask: Vec<bool>,
    pub num_classes: usize,
}

impl LocalGraph {
    pub fn new(
        adj: Csr,
        features: Tensor,
        labels: Vec<usize>,
        train_mask: Vec<bool>,
        val_mask: Vec<bool>,
        test_mask: Vec<bool>,
        num_classes: usize,
    ) -> Result<Self> {
        let g = LocalGraph {
            adj,
            features,
            labels,
            train_mask,
            val_mask,
            test_mask,
            num_classes,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn num_nodes(&self) -> usize {
        self.adj.num_nodes()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.adj.num_nodes();
        if n == 0 {
            return Err(Error::Structural("graph has no nodes".into()));
        }
        if self.features.rows() != n {
            return Err(Error::Structural(format!(
                "{} feature rows for {n} nodes",
                self.features.rows()
            )));
        }
        if self.labels.len() != n {
            return Err(Error::Structural(format!(
                "{} labels for {n} nodes",
                self.labels.len()
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Structural(
                "at least two classes are required".into(),
            ));
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= self.num_classes) {
            return Err(Error::Structural(format!(
                "label {bad} out of range for {} classes",
                self.num_classes
            )));
        }
        for (name, mask) in [
            ("train", &self.train_mask),
            ("val", &self.val_mask),
            ("test", &self.test_mask),
        ] {
            if mask.len() != n {
                return Err(Error::Structural(format!(
                    "{name} mask covers {} of {n} nodes",
                    mask.len()
                )));
            }
        }
        for i in 0..n {
            let claims =
                self.train_mask[i] as u8 + self.val_mask[i] as u8 + self.test_mask[i] as u8;
            if claims > 1 {
                return Err(Error::Structural(format!(
                    "node {i} appears in more than one split"
                )));
            }
        }
        if !self.train_mask.iter().any(|&m| m) {
            return Err(Error::Structural("empty training mask".into()));
        }
        if !self.features.is_finite() {
            return Err(Error::Structural("non-finite feature value".into()));
        }
        Ok(())
    }

    /// Per-class node counts over the training mask.
    pub fn train_class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            if self.train_mask[i] {
                counts[y] += 1;
            }
        }
        counts
    }

    /// Classes with at least one training node, ascending.
    pub fn present_train_classes(&self) -> Vec<usize> {
        self.train_class_counts()
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(h, _)| h)
            .collect()
    }
}

/// A federation: disjoint client graphs plus global label metadata.
#[derive(Debug, Clone)]
pub struct FederationDataset {
    pub clients: Vec<LocalGraph>,
    pub num_classes: usize,
    /// Sorted, nonempty, strict subset of all classes.
    pub minority_classes: Vec<usize>,
}

impl FederationDataset {
    pub fn new(
        clients: Vec<LocalGraph>,
        num_classes: usize,
        minority_classes: Vec<usize>,
    ) -> Result<Self> {
        let ds = FederationDataset {
            clients,
            num_classes,
            minority_classes,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients.is_empty() {
            return Err(Error::Structural("federation has no clients".into()));
        }
        let d = self.clients[0].feature_dim();
        for (i, c) in self.clients.iter().enumerate() {
            c.validate()?;
            if c.num_classes != self.num_classes {
                return Err(Error::Structural(format!(
                    "client {i} declares {} classes, federation has {}",
                    c.num_classes, self.num_classes
                )));
            }
            if c.feature_dim() != d {
                return Err(Error::Structural(format!(
                    "client {i} feature dim {} differs from {d}",
                    c.feature_dim()
                )));
            }
        }
        if self.minority_classes.is_empty() {
            return Err(Error::Structural("minority class set is empty".into()));
        }
        if self.minority_classes.len() >= self.num_classes {
            return Err(Error::Structural(
                "minority classes must be a strict subset of all classes".into(),
            ));
        }
        if self
            .minority_classes
            .windows(2)
            .any(|w| w[0] >= w[1])
        {
            return Err(Error::Structural(
                "minority classes must be sorted and unique".into(),
            ));
        }
        if self.minority_classes.iter().any(|&h| h >= self.num_classes) {
            return Err(Error::Structural("minority class out of range".into()));
        }
        Ok(())
    }

    pub fn total_nodes(&self) -> usize {
        self.clients.iter().map(|c| c.num_nodes()).sum()
    }

    pub fn feature_dim(&self) -> usize {
        self.clients[0].feature_dim()
    }
}

/// Classes whose global frequency falls strictly below `1 / num_classes`;
/// if none qualifies, the single rarest class (lowest index on ties).
pub fn minority_classes_from_counts(counts: &[usize]) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Vec::new();
    }
    let threshold = 1.0 / counts.len() as f64;
    let minority: Vec<usize> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| (c as f64 / total as f64) < threshold)
        .map(|(h, _)| h)
        .collect();
    if !minority.is_empty() {
        return minority;
    }
    let rarest = counts
        .iter()
        .enumerate()
        .min_by_key(|(_, &c)| c)
        .map(|(h, _)| h)
        .unwrap_or(0);
    vec![rarest]
}

/// Deterministic 60/20/20-style role assignment: each key hashes to a unit
/// uniform, and the fractions carve the unit interval. Stable under node
/// reordering because only `(seed, key)` matters.
pub fn split_masks(
    keys: &[u64],
    train_fraction: f64,
    val_fraction: f64,
    split_seed: u64,
) -> (Vec<bool>, Vec<bool>, Vec<bool>) {
    let mut train = vec![false; keys.len()];
    let mut val = vec![false; keys.len()];
    let mut test = vec![false; keys.len()];
    for (i, &k) in keys.iter().enumerate() {
        let u = seed::unit_hash(split_seed, k);
        if u < train_fraction {
            train[i] = true;
        } else if u < train_fraction + val_fraction {
            val[i] = true;
        } else {
            test[i] = true;
        }
    }
    (train, val, test)
}

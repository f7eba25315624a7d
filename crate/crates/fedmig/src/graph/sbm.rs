//! Synthetic federations from a stochastic block model.
//!
//! Each client draws an independent graph: class sizes follow the global
//! proportions by largest remainder, edges are Bernoulli with separate
//! within-class and between-class rates, and features are a class mean
//! plus isotropic Gaussian noise. Clients can be split into groups whose
//! class means are rotated against each other, which creates the feature
//! heterogeneity the federation arms are meant to cope with: two clients
//! in different groups see the same label with systematically different
//! features.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{minority_classes_from_counts, split_masks, Csr, FederationDataset, LocalGraph};
use crate::seed::derive;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct SbmConfig {
    pub num_clients: usize,
    pub nodes_per_client: usize,
    pub num_classes: usize,
    /// Global class proportions; must be positive and sum to 1.
    pub class_proportions: Vec<f64>,
    pub feature_dim: usize,
    /// Edge probability between same-class nodes.
    pub intra_p: f64,
    /// Edge probability between different-class nodes.
    pub inter_p: f64,
    /// Distance of each class mean from the origin.
    pub separation: f64,
    /// Standard deviation of the per-coordinate feature noise.
    pub noise: f64,
    /// Number of client groups with rotated class means; 1 disables the
    /// heterogeneity entirely.
    pub client_groups: usize,
    /// Angle in radians between consecutive groups' class-mean planes.
    pub group_rotation: f64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        SbmConfig {
            num_clients: 8,
            nodes_per_client: 300,
            num_classes: 4,
            class_proportions: vec![0.3, 0.3, 0.3, 0.1],
            feature_dim: 16,
            intra_p: 0.05,
            inter_p: 0.005,
            separation: 2.0,
            noise: 1.0,
            client_groups: 1,
            group_rotation: 0.0,
            train_fraction: 0.6,
            val_fraction: 0.2,
            seed: 7,
        }
    }
}

impl SbmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::Config("num_clients must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if self.class_proportions.len() != self.num_classes {
            return Err(Error::Config(format!(
                "{} proportions for {} classes",
                self.class_proportions.len(),
                self.num_classes
            )));
        }
        if self.class_proportions.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::Config("class proportions must be positive".into()));
        }
        let total: f64 = self.class_proportions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "class proportions sum to {total}, expected 1"
            )));
        }
        for (name, p) in [("intra_p", self.intra_p), ("inter_p", self.inter_p)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name}={p} outside [0, 1]")));
            }
        }
        if self.nodes_per_client < self.num_classes {
            return Err(Error::Config(
                "nodes_per_client must be at least num_classes".into(),
            ));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        if self.client_groups == 0 {
            return Err(Error::Config("client_groups must be positive".into()));
        }
        if !(self.separation.is_finite() && self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::Config("separation and noise must be finite".into()));
        }
        if !(self.train_fraction > 0.0)
            || self.val_fraction < 0.0
            || self.train_fraction + self.val_fraction >= 1.0
        {
            return Err(Error::Config(
                "train/val fractions must be positive and leave room for test".into(),
            ));
        }
        Ok(())
    }

    /// Class sizes for one client by largest remainder, ties to the lower
    /// class index. Sizes always sum to `nodes_per_client`.
    pub fn class_sizes(&self) -> Vec<usize> {
        let n = self.nodes_per_client;
        let mut sizes: Vec<usize> = self
            .class_proportions
            .iter()
            .map(|&p| (p * n as f64).floor() as usize)
            .collect();
        let assigned: usize = sizes.iter().sum();
        let mut order: Vec<usize> = (0..self.num_classes).collect();
        order.sort_by(|&a, &b| {
            let fa = self.class_proportions[a] * n as f64 - sizes[a] as f64;
            let fb = self.class_proportions[b] * n as f64 - sizes[b] as f64;
            fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
        });
        for i in 0..(n - assigned) {
            sizes[order[i % self.num_classes]] += 1;
        }
        sizes
    }
}

/// The two unit directions spanning class `h`'s mean plane. With room in
/// the feature space each class gets its own coordinate pair, which makes
/// group rotations exactly orthogonal transformations of the means; in
/// cramped spaces the directions are seeded Gaussian unit vectors shared
/// by every client.
fn class_axes(config: &SbmConfig, class: usize) -> (Vec<f64>, Vec<f64>) {
    let d = config.feature_dim;
    if 2 * config.num_classes <= d {
        let mut u = vec![0.0; d];
        let mut v = vec![0.0; d];
        u[2 * class] = 1.0;
        v[2 * class + 1] = 1.0;
        (u, v)
    } else {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let draw = |tag: &str| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive(config.seed, tag, class as u64));
            let mut x: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
            let norm = x.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
            x.iter_mut().for_each(|a| *a /= norm);
            x
        };
        (draw("class-axis-a"), draw("class-axis-b"))
    }
}

/// Mean feature vector for `class` as seen by a client in `group`.
fn class_mean(config: &SbmConfig, class: usize, group: usize) -> Vec<f64> {
    let theta = group as f64 * config.group_rotation;
    let (u, v) = class_axes(config, class);
    u.iter()
        .zip(&v)
        .map(|(&a, &b)| config.separation * (theta.cos() * a + theta.sin() * b))
        .collect()
}

pub fn generate_sbm(config: &SbmConfig) -> Result<FederationDataset> {
    config.validate()?;
    let sizes = config.class_sizes();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut global_counts = vec![0usize; config.num_classes];
    let mut clients = Vec::with_capacity(config.num_clients);

    for m in 0..config.num_clients {
        let mut rng = ChaCha8Rng::seed_from_u64(derive(config.seed, "client-data", m as u64));
        let n = config.nodes_per_client;
        let group = m % config.client_groups;

        // Labels: fixed per-class counts, shuffled so node index carries
        // no class information.
        let mut labels = Vec::with_capacity(n);
        for (h, &s) in sizes.iter().enumerate() {
            labels.extend(std::iter::repeat(h).take(s));
        }
        labels.shuffle(&mut rng);
        for &y in &labels {
            global_counts[y] += 1;
        }

        // Edges: one Bernoulli draw per unordered pair, in index order so
        // the stream consumption is reproducible.
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let p = if labels[i] == labels[j] {
                    config.intra_p
                } else {
                    config.inter_p
                };
                if rng.random::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        let adj = Csr::from_edges(n, &edges)?;

        // Features: rotated class mean plus isotropic noise.
        let means: Vec<Vec<f64>> = (0..config.num_classes)
            .map(|h| class_mean(config, h, group))
            .collect();
        let mut values = Vec::with_capacity(n * config.feature_dim);
        for &y in labels.iter() {
            for j in 0..config.feature_dim {
                values.push(means[y][j] + config.noise * normal.sample(&mut rng));
            }
        }
        let features = Tensor::from_values(&[n, config.feature_dim], values)?;

        let keys: Vec<u64> = (0..n as u64).collect();
        let (train, val, test) = split_masks(
            &keys,
            config.train_fraction,
            config.val_fraction,
            derive(config.seed, "split", m as u64),
        );

        clients.push(LocalGraph::new(
            adj,
            features,
            labels,
            train,
            val,
            test,
            config.num_classes,
        )?);
    }

    let minority = minority_classes_from_counts(&global_counts);
    FederationDataset::new(clients, config.num_classes, minority)
}

//! Splitting one global graph into a federation of disjoint clients.
//!
//! Client sizes are drawn within a configured range, then nodes are
//! assigned stratified by label: each client's per-class quota is its
//! size-proportional share of that class, so every client sees close to
//! the global label distribution. Edges crossing client boundaries are
//! dropped; a federated client only ever observes its own subgraph. When
//! the graph holds more nodes than the clients can absorb at their
//! maximum size, the surplus stays unassigned.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{minority_classes_from_counts, Csr, FederationDataset, LocalGraph};
use crate::seed::{derive, unit_hash};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct PartitionSpec {
    pub num_clients: usize,
    /// Inclusive bounds on every client's node count.
    pub size_range: (usize, usize),
    pub seed: u64,
}

impl PartitionSpec {
    pub fn new(num_clients: usize, seed: u64) -> Self {
        PartitionSpec {
            num_clients,
            size_range: (400, 1200),
            seed,
        }
    }

    pub fn with_size_range(mut self, min: usize, max: usize) -> Self {
        self.size_range = (min, max);
        self
    }
}

/// Largest-remainder rounding of `total * weights[i] / weight_sum`; the
/// results sum to `total` exactly.
fn largest_remainder(total: usize, quotas: &[f64]) -> Vec<usize> {
    let mut floors: Vec<usize> = quotas.iter().map(|&q| q.floor() as usize).collect();
    let assigned: usize = floors.iter().sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    // Largest fractional part first; ties to the lower index.
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        floors[i] += 1;
    }
    floors
}

/// Client target sizes: an even split clamped to the range, plus seeded
/// pairwise transfers so sizes vary rather than all landing on the mean.
fn client_sizes(n: usize, spec: &PartitionSpec) -> Vec<usize> {
    let m = spec.num_clients;
    let (lo, hi) = spec.size_range;
    let total = n.min(m * hi);
    let base = (n / m).min(hi);
    let mut sizes = vec![base; m];
    let mut order: Vec<usize> = (0..m).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive(spec.seed, "partition-sizes", 0));
    order.shuffle(&mut rng);
    for &i in order.iter().take(total - m * base) {
        sizes[i] += 1;
    }
    // Move nodes within each shuffled pair, bounded by both clients'
    // headroom, so the totals and the range are both preserved.
    for (pair, chunk) in order.chunks_exact(2).enumerate() {
        let (a, b) = (chunk[0], chunk[1]);
        let headroom = (sizes[a] - lo).min(hi - sizes[b]);
        let frac = 0.35 * unit_hash(derive(spec.seed, "partition-transfer", 0), pair as u64);
        let shift = (headroom as f64 * frac).floor() as usize;
        sizes[a] -= shift;
        sizes[b] += shift;
    }
    sizes
}

pub fn partition_clients(
    global: &LocalGraph,
    spec: &PartitionSpec,
) -> Result<FederationDataset> {
    let (lo, hi) = spec.size_range;
    if spec.num_clients == 0 {
        return Err(Error::Config("num_clients must be positive".into()));
    }
    if lo == 0 || lo > hi {
        return Err(Error::Config(format!(
            "size range [{lo}, {hi}] is not a valid positive interval"
        )));
    }
    global.validate()?;
    let n = global.num_nodes();
    if spec.num_clients * lo > n {
        return Err(Error::Config(format!(
            "{} clients at minimum size {lo} need {} nodes, graph has {n}",
            spec.num_clients,
            spec.num_clients * lo,
        )));
    }

    let mut global_counts = vec![0usize; global.num_classes];
    for &y in &global.labels {
        global_counts[y] += 1;
    }

    // Per-client class quotas proportional to class prevalence, rounded
    // so each client's total is exactly its target size.
    let sizes = client_sizes(n, spec);
    let mut alloc: Vec<Vec<usize>> = sizes
        .iter()
        .map(|&s| {
            let quotas: Vec<f64> = global_counts
                .iter()
                .map(|&c| s as f64 * c as f64 / n as f64)
                .collect();
            largest_remainder(s, &quotas)
        })
        .collect();

    // Rounding can overdraw a class. Shift single nodes from the largest
    // holder of an overdrawn class into classes with spare supply; client
    // sizes stay fixed and the drift is at most a few nodes per class.
    let mut class_totals = vec![0usize; global.num_classes];
    for row in &alloc {
        for (h, &a) in row.iter().enumerate() {
            class_totals[h] += a;
        }
    }
    while let Some(over) = (0..global.num_classes).find(|&h| class_totals[h] > global_counts[h])
    {
        let donor = (0..spec.num_clients)
            .max_by(|&a, &b| alloc[a][over].cmp(&alloc[b][over]).then(b.cmp(&a)))
            .expect("at least one client");
        let target = (0..global.num_classes)
            .filter(|&h| class_totals[h] < global_counts[h])
            .max_by(|&a, &b| {
                (global_counts[a] - class_totals[a])
                    .cmp(&(global_counts[b] - class_totals[b]))
                    .then(b.cmp(&a))
            })
            .expect("assigned total cannot exceed the node count");
        alloc[donor][over] -= 1;
        alloc[donor][target] += 1;
        class_totals[over] -= 1;
        class_totals[target] += 1;
    }

    // Deal each class's shuffled nodes according to the quotas.
    let mut owner = vec![usize::MAX; n];
    for h in 0..global.num_classes {
        let mut members: Vec<usize> = (0..n).filter(|&i| global.labels[i] == h).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive(spec.seed, "partition-class", h as u64));
        members.shuffle(&mut rng);
        let mut cursor = 0;
        for (m, row) in alloc.iter().enumerate() {
            for &node in &members[cursor..cursor + row[h]] {
                owner[node] = m;
            }
            cursor += row[h];
        }
    }

    let d = global.feature_dim();
    let mut clients = Vec::with_capacity(spec.num_clients);
    for m in 0..spec.num_clients {
        let nodes: Vec<usize> = (0..n).filter(|&i| owner[i] == m).collect();
        if nodes.is_empty() {
            return Err(Error::Structural(format!("client {m} received no nodes")));
        }
        let mut local_index = vec![usize::MAX; n];
        for (li, &gi) in nodes.iter().enumerate() {
            local_index[gi] = li;
        }
        let edges: Vec<(usize, usize)> = global
            .adj
            .undirected_edges()
            .filter(|&(u, v)| owner[u] == m && owner[v] == m)
            .map(|(u, v)| (local_index[u], local_index[v]))
            .collect();
        let adj = Csr::from_edges(nodes.len(), &edges)?;
        let mut values = Vec::with_capacity(nodes.len() * d);
        for &gi in &nodes {
            values.extend_from_slice(global.features.row_slice(gi));
        }
        let features = Tensor::from_values(&[nodes.len(), d], values)?;
        let labels = nodes.iter().map(|&gi| global.labels[gi]).collect();
        let train = nodes.iter().map(|&gi| global.train_mask[gi]).collect();
        let val = nodes.iter().map(|&gi| global.val_mask[gi]).collect();
        let test = nodes.iter().map(|&gi| global.test_mask[gi]).collect();
        clients.push(LocalGraph::new(
            adj,
            features,
            labels,
            train,
            val,
            test,
            global.num_classes,
        )?);
    }

    FederationDataset::new(
        clients,
        global.num_classes,
        minority_classes_from_counts(&global_counts),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::split_masks;

    fn global_graph(n: usize) -> LocalGraph {
        let labels: Vec<usize> = (0..n).map(|i| if i % 9 == 0 { 2 } else { i % 2 }).collect();
        let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        let adj = Csr::from_edges(n, &edges).unwrap();
        let values: Vec<f64> = (0..n * 3).map(|i| i as f64 * 0.01).collect();
        let features = Tensor::from_values(&[n, 3], values).unwrap();
        let keys: Vec<u64> = (0..n as u64).collect();
        let (tr, va, te) = split_masks(&keys, 0.7, 0.15, 11);
        LocalGraph::new(adj, features, labels, tr, va, te, 3).unwrap()
    }

    fn spec(num_clients: usize, lo: usize, hi: usize, seed: u64) -> PartitionSpec {
        PartitionSpec::new(num_clients, seed).with_size_range(lo, hi)
    }

    #[test]
    fn partition_is_disjoint_and_complete_when_capacity_allows() {
        let g = global_graph(90);
        let ds = partition_clients(&g, &spec(3, 10, 90, 5)).unwrap();
        assert_eq!(ds.clients.len(), 3);
        assert_eq!(ds.total_nodes(), g.num_nodes());
        for c in &ds.clients {
            assert!(c.num_nodes() >= 10 && c.num_nodes() <= 90);
        }
    }

    #[test]
    fn sizes_respect_the_range_and_surplus_is_dropped() {
        let g = global_graph(90);
        let ds = partition_clients(&g, &spec(3, 10, 20, 5)).unwrap();
        for c in &ds.clients {
            assert!(c.num_nodes() >= 10 && c.num_nodes() <= 20, "{}", c.num_nodes());
        }
        assert!(ds.total_nodes() <= 60);
    }

    #[test]
    fn infeasible_minimum_is_a_config_error() {
        let g = global_graph(90);
        let err = partition_clients(&g, &spec(13, 10, 20, 5)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn partition_is_stratified() {
        let g = global_graph(180);
        let mut global_counts = vec![0usize; 3];
        for &y in &g.labels {
            global_counts[y] += 1;
        }
        let ds = partition_clients(&g, &spec(3, 40, 80, 5)).unwrap();
        for c in &ds.clients {
            let mut counts = vec![0usize; 3];
            for &y in &c.labels {
                counts[y] += 1;
            }
            for h in 0..3 {
                let global_frac = global_counts[h] as f64 / g.num_nodes() as f64;
                let local_frac = counts[h] as f64 / c.num_nodes() as f64;
                assert!(
                    (local_frac - global_frac).abs() <= 0.05,
                    "class {h}: {local_frac} vs {global_frac}"
                );
            }
        }
    }

    #[test]
    fn cross_client_edges_are_dropped() {
        let g = global_graph(90);
        let total_edges = g.adj.edge_count();
        let ds = partition_clients(&g, &spec(3, 10, 90, 5)).unwrap();
        let kept: usize = ds.clients.iter().map(|c| c.adj.edge_count()).sum();
        // A path graph split across clients must lose some edges.
        assert!(kept < total_edges);
        // And every kept edge joins nodes with feature rows copied from
        // the same client, which LocalGraph::new already validated.
    }

    #[test]
    fn partition_is_deterministic() {
        let g = global_graph(90);
        let a = partition_clients(&g, &spec(4, 10, 40, 9)).unwrap();
        let b = partition_clients(&g, &spec(4, 10, 40, 9)).unwrap();
        for (ca, cb) in a.clients.iter().zip(&b.clients) {
            assert_eq!(ca.labels, cb.labels);
            assert_eq!(ca.adj, cb.adj);
        }
    }
}

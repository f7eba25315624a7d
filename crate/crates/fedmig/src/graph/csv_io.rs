//! CSV ingestion and the on-disk dataset layout.
//!
//! A dataset directory holds one subdirectory per client plus a manifest:
//!
//! ```text
//! dataset.json
//! client_000/edges.csv      src,dst
//! client_000/features.csv   node_id,f0,f1,...
//! client_000/labels.csv     node_id,label
//! client_000/splits.csv     node_id,role        role in {train, val, test}
//! ```
//!
//! Floats are written with Rust's shortest-roundtrip `Display`, so a
//! save/load cycle reproduces every feature bit for bit. Loaders accept
//! files with or without a header row and report the offending line on
//! parse failures.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Csr, FederationDataset, LocalGraph};
use crate::tensor::Tensor;

/// Fractions used to derive masks when a graph arrives without a splits
/// file. The remainder after train and val goes to test.
#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.6,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SplitSpec {
    fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0)
            || !(self.val_fraction >= 0.0)
            || self.train_fraction + self.val_fraction >= 1.0
        {
            return Err(Error::Config(format!(
                "split fractions train={} val={} must be positive and leave room for test",
                self.train_fraction, self.val_fraction
            )));
        }
        Ok(())
    }
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Reads all records of a CSV file, skipping a header row when the first
/// field of the first record does not parse as an integer.
fn read_records(path: &Path) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| parse_err(path, 0, e.to_string()))?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| parse_err(path, 0, e.to_string()))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        out.push((line, record));
    }
    if let Some((_, first)) = out.first() {
        let looks_like_header = first
            .get(0)
            .map(|f| f.trim().parse::<i64>().is_err())
            .unwrap_or(false);
        if looks_like_header {
            out.remove(0);
        }
    }
    Ok(out)
}

fn parse_field<T: std::str::FromStr>(
    path: &Path,
    line: u64,
    record: &csv::StringRecord,
    idx: usize,
    what: &str,
) -> Result<T> {
    let raw = record
        .get(idx)
        .ok_or_else(|| parse_err(path, line, format!("missing {what} column {idx}")))?;
    raw.trim()
        .parse::<T>()
        .map_err(|_| parse_err(path, line, format!("cannot parse {what} from {raw:?}")))
}

fn load_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    read_records(path)?
        .iter()
        .map(|(line, rec)| {
            let u: usize = parse_field(path, *line, rec, 0, "source node")?;
            let v: usize = parse_field(path, *line, rec, 1, "target node")?;
            Ok((u, v))
        })
        .collect()
}

/// Returns rows as `(node_id, payload)` and enforces that ids form the
/// dense range `0..n` after sorting.
fn load_indexed_rows(path: &Path) -> Result<Vec<(usize, u64, csv::StringRecord)>> {
    let mut rows: Vec<(usize, u64, csv::StringRecord)> = read_records(path)?
        .into_iter()
        .map(|(line, rec)| {
            let id: usize = parse_field(path, line, &rec, 0, "node id")?;
            Ok((id, line, rec))
        })
        .collect::<Result<_>>()?;
    rows.sort_by_key(|(id, _, _)| *id);
    for (expect, (id, line, _)) in rows.iter().enumerate() {
        if *id != expect {
            return Err(parse_err(
                path,
                *line,
                format!("node ids must cover 0..n densely; expected {expect}, found {id}"),
            ));
        }
    }
    Ok(rows)
}

fn load_features(path: &Path) -> Result<Tensor> {
    let rows = load_indexed_rows(path)?;
    if rows.is_empty() {
        return Err(parse_err(path, 0, "feature file has no rows"));
    }
    let dim = rows[0].2.len() - 1;
    if dim == 0 {
        return Err(parse_err(path, rows[0].1, "feature rows need at least one value"));
    }
    let mut values = Vec::with_capacity(rows.len() * dim);
    for (_, line, rec) in &rows {
        if rec.len() != dim + 1 {
            return Err(parse_err(
                path,
                *line,
                format!("expected {} columns, found {}", dim + 1, rec.len()),
            ));
        }
        for j in 0..dim {
            let v: f64 = parse_field(path, *line, rec, j + 1, "feature value")?;
            if !v.is_finite() {
                return Err(parse_err(path, *line, "non-finite feature value"));
            }
            values.push(v);
        }
    }
    Tensor::from_values(&[rows.len(), dim], values)
}

fn load_labels(path: &Path) -> Result<Vec<usize>> {
    let rows = load_indexed_rows(path)?;
    rows.iter()
        .map(|(_, line, rec)| parse_field(path, *line, rec, 1, "label"))
        .collect()
}

fn load_splits(path: &Path, n: usize) -> Result<(Vec<bool>, Vec<bool>, Vec<bool>)> {
    let rows = load_indexed_rows(path)?;
    if rows.len() != n {
        return Err(parse_err(
            path,
            0,
            format!("splits cover {} of {n} nodes", rows.len()),
        ));
    }
    let mut train = vec![false; n];
    let mut val = vec![false; n];
    let mut test = vec![false; n];
    for (id, line, rec) in &rows {
        let role = rec
            .get(1)
            .ok_or_else(|| parse_err(path, *line, "missing role column"))?
            .trim();
        match role {
            "train" => train[*id] = true,
            "val" => val[*id] = true,
            "test" => test[*id] = true,
            other => {
                return Err(parse_err(
                    path,
                    *line,
                    format!("unknown role {other:?}, expected train, val, or test"),
                ))
            }
        }
    }
    Ok((train, val, test))
}

/// Loads one client graph from explicit CSV paths. When `splits_path` is
/// absent the masks are derived from `spec` by hashing node ids, so the
/// assignment is reproducible across runs and machines.
pub fn load_csv_graph(
    edges_path: &Path,
    features_path: &Path,
    labels_path: &Path,
    splits_path: Option<&Path>,
    num_classes: usize,
    spec: SplitSpec,
) -> Result<LocalGraph> {
    spec.validate()?;
    let features = load_features(features_path)?;
    let n = features.rows();
    let labels = load_labels(labels_path)?;
    if labels.len() != n {
        return Err(parse_err(
            labels_path,
            0,
            format!("{} labels for {n} feature rows", labels.len()),
        ));
    }
    let edges = load_edges(edges_path)?;
    let adj = Csr::from_edges(n, &edges)?;
    let (train, val, test) = match splits_path {
        Some(p) => load_splits(p, n)?,
        None => {
            let keys: Vec<u64> = (0..n as u64).collect();
            crate::graph::split_masks(&keys, spec.train_fraction, spec.val_fraction, spec.seed)
        }
    };
    LocalGraph::new(adj, features, labels, train, val, test, num_classes)
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    format_version: u32,
    num_clients: usize,
    num_classes: usize,
    feature_dim: usize,
    minority_classes: Vec<usize>,
}

const DATASET_FORMAT_VERSION: u32 = 1;

fn client_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("client_{index:03}"))
}

/// Writes a federation to `root`, creating directories as needed.
pub fn save_dataset(root: &Path, dataset: &FederationDataset) -> Result<()> {
    dataset.validate()?;
    fs::create_dir_all(root)?;
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        num_clients: dataset.clients.len(),
        num_classes: dataset.num_classes,
        feature_dim: dataset.feature_dim(),
        minority_classes: dataset.minority_classes.clone(),
    };
    fs::write(
        root.join("dataset.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;

    for (m, client) in dataset.clients.iter().enumerate() {
        let dir = client_dir(root, m);
        fs::create_dir_all(&dir)?;

        let mut edges = String::from("src,dst\n");
        for (u, v) in client.adj.undirected_edges() {
            edges.push_str(&format!("{u},{v}\n"));
        }
        fs::write(dir.join("edges.csv"), edges)?;

        let d = client.feature_dim();
        let mut feats = String::from("node_id");
        for j in 0..d {
            feats.push_str(&format!(",f{j}"));
        }
        feats.push('\n');
        for i in 0..client.num_nodes() {
            feats.push_str(&i.to_string());
            for &v in client.features.row_slice(i) {
                feats.push(',');
                feats.push_str(&v.to_string());
            }
            feats.push('\n');
        }
        fs::write(dir.join("features.csv"), feats)?;

        let mut labels = String::from("node_id,label\n");
        for (i, &y) in client.labels.iter().enumerate() {
            labels.push_str(&format!("{i},{y}\n"));
        }
        fs::write(dir.join("labels.csv"), labels)?;

        let mut splits = String::from("node_id,role\n");
        for i in 0..client.num_nodes() {
            let role = if client.train_mask[i] {
                "train"
            } else if client.val_mask[i] {
                "val"
            } else {
                "test"
            };
            splits.push_str(&format!("{i},{role}\n"));
        }
        fs::write(dir.join("splits.csv"), splits)?;
    }
    Ok(())
}

/// Loads a federation previously written by [`save_dataset`].
pub fn load_dataset(root: &Path) -> Result<FederationDataset> {
    let manifest_path = root.join("dataset.json");
    let raw = fs::read_to_string(&manifest_path).map_err(|e| {
        Error::Config(format!("cannot read {}: {e}", manifest_path.display()))
    })?;
    let manifest: DatasetManifest = serde_json::from_str(&raw)?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Config(format!(
            "dataset format version {} is not supported (expected {DATASET_FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let mut clients = Vec::with_capacity(manifest.num_clients);
    for m in 0..manifest.num_clients {
        let dir = client_dir(root, m);
        let graph = load_csv_graph(
            &dir.join("edges.csv"),
            &dir.join("features.csv"),
            &dir.join("labels.csv"),
            Some(&dir.join("splits.csv")),
            manifest.num_classes,
            SplitSpec::default(),
        )?;
        clients.push(graph);
    }
    FederationDataset::new(clients, manifest.num_classes, manifest.minority_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::minority_classes_from_counts;

    fn tiny_dataset() -> FederationDataset {
        let mk = |seed: u64| {
            let n = 12;
            let adj = Csr::from_edges(
                n,
                &[(0, 1), (1, 2), (2, 3), (4, 5), (6, 7), (8, 9), (10, 11), (0, 4)],
            )
            .unwrap();
            let mut values = Vec::new();
            for i in 0..n {
                // Awkward constants on purpose: test the shortest-roundtrip claim.
                values.push(0.1 + i as f64 * 0.3);
                values.push((i as f64).sin());
            }
            let features = Tensor::from_values(&[n, 2], values).unwrap();
            let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
            let keys: Vec<u64> = (0..n as u64).map(|k| k + seed * 1000).collect();
            let (tr, va, te) = crate::graph::split_masks(&keys, 0.6, 0.2, seed);
            let mut tr = tr;
            tr[0] = true; // guarantee a nonempty training mask
            let mut va = va;
            va[0] = false;
            let mut te = te;
            te[0] = false;
            LocalGraph::new(adj, features, labels, tr, va, te, 3).unwrap()
        };
        let clients = vec![mk(1), mk(2)];
        let mut counts = vec![0usize; 3];
        for c in &clients {
            for &y in &c.labels {
                counts[y] += 1;
            }
        }
        FederationDataset::new(clients, 3, minority_classes_from_counts(&counts)).unwrap()
    }

    #[test]
    fn save_then_load_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset();
        save_dataset(dir.path(), &ds).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.clients.len(), ds.clients.len());
        assert_eq!(back.num_classes, ds.num_classes);
        assert_eq!(back.minority_classes, ds.minority_classes);
        for (a, b) in ds.clients.iter().zip(&back.clients) {
            assert_eq!(a.adj, b.adj);
            assert_eq!(a.labels, b.labels);
            assert_eq!(a.train_mask, b.train_mask);
            assert_eq!(a.val_mask, b.val_mask);
            assert_eq!(a.test_mask, b.test_mask);
            assert_eq!(a.features.values().len(), b.features.values().len());
            for (x, y) in a.features.values().iter().zip(b.features.values()) {
                assert_eq!(x.to_bits(), y.to_bits(), "feature drifted through CSV");
            }
        }
    }

    #[test]
    fn header_rows_are_optional() {
        let dir = tempfile::tempdir().unwrap();
        // No header anywhere.
        fs::write(dir.path().join("edges.csv"), "0,1\n1,2\n").unwrap();
        fs::write(
            dir.path().join("features.csv"),
            "0,1.5,2.5\n1,0.25,0.5\n2,3.0,4.0\n",
        )
        .unwrap();
        fs::write(dir.path().join("labels.csv"), "0,0\n1,1\n2,0\n").unwrap();
        let g = load_csv_graph(
            &dir.path().join("edges.csv"),
            &dir.path().join("features.csv"),
            &dir.path().join("labels.csv"),
            None,
            2,
            SplitSpec {
                train_fraction: 0.8,
                val_fraction: 0.1,
                seed: 3,
            },
        );
        // Mask derivation may land all three nodes anywhere; only require
        // the loader itself to succeed or fail on mask grounds, not parse.
        match g {
            Ok(g) => assert_eq!(g.num_nodes(), 3),
            Err(Error::Structural(_)) => {}
            Err(e) => panic!("unexpected error kind: {e}"),
        }
    }

    #[test]
    fn parse_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("edges.csv"), "src,dst\n0,1\n").unwrap();
        fs::write(
            dir.path().join("features.csv"),
            "node_id,f0\n0,1.0\n1,oops\n",
        )
        .unwrap();
        fs::write(dir.path().join("labels.csv"), "node_id,label\n0,0\n1,1\n").unwrap();
        let err = load_csv_graph(
            &dir.path().join("edges.csv"),
            &dir.path().join("features.csv"),
            &dir.path().join("labels.csv"),
            None,
            2,
            SplitSpec::default(),
        )
        .unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other}"),
        }
    }
}

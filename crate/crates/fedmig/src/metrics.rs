//! Evaluation over the union of client test sets with each client's own
//! personalized model: accuracy and macro recall, overall and restricted
//! to the minority classes.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::LocalGraph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsBundle {
    pub overall_accuracy: f64,
    pub minority_accuracy: f64,
    pub overall_macro_recall: f64,
    pub minority_macro_recall: f64,
}

/// Index of the row maximum; ties resolve to the lowest class so results
/// never depend on float comparison order.
pub fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Computes the bundle from per-client predicted classes. `predictions[m]`
/// must hold one predicted class per node of client `m`; only test-mask
/// nodes enter any statistic.
pub fn evaluate(
    clients: &[LocalGraph],
    predictions: &[Vec<usize>],
    minority_classes: &[usize],
    num_classes: usize,
) -> Result<MetricsBundle> {
    if clients.len() != predictions.len() {
        return Err(Error::Protocol(format!(
            "{} prediction sets for {} clients",
            predictions.len(),
            clients.len()
        )));
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    let mut minority_correct = 0usize;
    let mut minority_total = 0usize;
    // recall bookkeeping: per true class, (correct, count).
    let mut per_class = vec![(0usize, 0usize); num_classes];

    for (client, preds) in clients.iter().zip(predictions) {
        if preds.len() != client.num_nodes() {
            return Err(Error::Protocol(format!(
                "{} predictions for {} nodes",
                preds.len(),
                client.num_nodes()
            )));
        }
        for i in 0..client.num_nodes() {
            if !client.test_mask[i] {
                continue;
            }
            let y = client.labels[i];
            let p = preds[i];
            let hit = p == y;
            total += 1;
            correct += hit as usize;
            per_class[y].1 += 1;
            per_class[y].0 += hit as usize;
            if minority_classes.contains(&y) {
                minority_total += 1;
                minority_correct += hit as usize;
            }
        }
    }
    if total == 0 {
        return Err(Error::Protocol("no test nodes to evaluate".into()));
    }

    let recall_over = |classes: &mut dyn Iterator<Item = usize>| -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for h in classes {
            let (c, t) = per_class[h];
            if t == 0 {
                warn!("class {h} has no test samples; skipping it in macro recall");
                continue;
            }
            sum += c as f64 / t as f64;
            n += 1;
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    };

    Ok(MetricsBundle {
        overall_accuracy: correct as f64 / total as f64,
        minority_accuracy: if minority_total == 0 {
            0.0
        } else {
            minority_correct as f64 / minority_total as f64
        },
        overall_macro_recall: recall_over(&mut (0..num_classes)),
        minority_macro_recall: recall_over(&mut minority_classes.iter().copied()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Csr;
    use crate::tensor::Tensor;

    fn two_client_setup() -> (Vec<LocalGraph>, Vec<Vec<usize>>) {
        // Client 0: 4 test nodes, labels 0,0,1,2; client 1: 2 test nodes,
        // labels 1,2. Train nodes exist but are excluded from metrics.
        let mk = |labels: Vec<usize>, test: Vec<bool>| {
            let n = labels.len();
            let adj = Csr::from_edges(n, &[(0, 1)]).unwrap();
            let feats = Tensor::zeros(&[n, 2]);
            let mut train = vec![false; n];
            // first non-test node trains
            let idx = test.iter().position(|&t| !t).unwrap();
            train[idx] = true;
            LocalGraph::new(adj, feats, labels, train, vec![false; n], test, 3).unwrap()
        };
        let c0 = mk(
            vec![0, 0, 1, 2, 0],
            vec![true, true, true, true, false],
        );
        let c1 = mk(vec![1, 2, 1], vec![true, true, false]);
        // Predictions: client 0 gets labels 0,1,1,2 on test nodes (3/4),
        // client 1 gets 1,1 (1/2). Non-test entries are ignored.
        let p0 = vec![0, 1, 1, 2, 9 % 3];
        let p1 = vec![1, 1, 0];
        (vec![c0, c1], vec![p0, p1])
    }

    #[test]
    fn accuracy_and_recall_hand_check() {
        let (clients, preds) = two_client_setup();
        let m = evaluate(&clients, &preds, &[2], 3).unwrap();
        // 6 test nodes, hits: c0 nodes 0,2,3 and c1 node 0 -> 4/6.
        assert!((m.overall_accuracy - 4.0 / 6.0).abs() < 1e-15);
        // Minority class 2: test nodes c0#3 (hit) and c1#1 (miss) -> 1/2.
        assert!((m.minority_accuracy - 0.5).abs() < 1e-15);
        // Recalls: class 0 -> 1/2, class 1 -> 2/2, class 2 -> 1/2.
        assert!((m.overall_macro_recall - (0.5 + 1.0 + 0.5) / 3.0).abs() < 1e-15);
        assert!((m.minority_macro_recall - 0.5).abs() < 1e-15);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax_row(&[0.2, 0.5, 0.5]), 1);
        assert_eq!(argmax_row(&[0.7, 0.7]), 0);
        assert_eq!(argmax_row(&[1.0]), 0);
    }

    #[test]
    fn absent_test_class_is_skipped_not_zeroed() {
        let (clients, preds) = two_client_setup();
        // Minority set includes a class with no test samples at all.
        let m = evaluate(&clients, &preds, &[2], 3).unwrap();
        let with_ghost = evaluate(&clients, &preds, &[2], 4);
        // num_classes=4 adds class 3 with zero test nodes; macro recall
        // must not change because the class is skipped.
        assert!(
            (with_ghost.unwrap().overall_macro_recall - m.overall_macro_recall).abs() < 1e-15
        );
    }
}

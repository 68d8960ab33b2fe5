//! Node-level pruning of hidden units with small activation.

use serde::{Deserialize, Serialize};

use crate::error::{KanError, Result};
use crate::kan::{KanLayer, KanModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// A hidden node survives when `min(incoming, outgoing) >= theta`.
    pub theta: f64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self { theta: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeScore {
    /// Largest mean |activation| among edges entering the node.
    pub incoming: f64,
    /// Largest mean |activation| among edges leaving the node.
    pub outgoing: f64,
}

impl NodeScore {
    pub fn score(&self) -> f64 {
        self.incoming.min(self.outgoing)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayerReport {
    /// Index of the node layer (1 = first hidden layer).
    pub layer: usize,
    pub scores: Vec<NodeScore>,
    pub kept: Vec<bool>,
    /// True when every node fell below threshold and the best one was kept.
    pub guard_applied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub theta: f64,
    pub widths_before: Vec<usize>,
    pub widths_after: Vec<usize>,
    pub hidden: Vec<HiddenLayerReport>,
}

/// Scores for every hidden node, grouped by hidden layer.
pub fn node_scores(model: &KanModel, xs: &[Vec<f64>]) -> Result<Vec<Vec<NodeScore>>> {
    let widths = model.widths();
    if widths.len() <= 2 {
        return Ok(Vec::new());
    }
    let stats = model.activation_stats(xs)?;
    let mut out = Vec::with_capacity(widths.len() - 2);
    for node_layer in 1..widths.len() - 1 {
        let incoming = &stats[node_layer - 1];
        let outgoing = &stats[node_layer];
        let scores = (0..widths[node_layer])
            .map(|node| NodeScore {
                incoming: (0..incoming.cols)
                    .map(|i| incoming.get(node, i))
                    .fold(0.0, f64::max),
                outgoing: (0..outgoing.rows)
                    .map(|j| outgoing.get(j, node))
                    .fold(0.0, f64::max),
            })
            .collect();
        out.push(scores);
    }
    Ok(out)
}

/// Removes hidden nodes scoring below `theta`, together with every edge
/// touching them. Surviving edges are copied unchanged.
pub fn prune(model: &KanModel, xs: &[Vec<f64>], cfg: &PruneConfig) -> Result<(KanModel, PruneReport)> {
    if !(cfg.theta > 0.0) {
        return Err(KanError::InvalidArgument(format!(
            "prune threshold must be positive, got {}",
            cfg.theta
        )));
    }
    let widths = model.widths().to_vec();
    let scores = node_scores(model, xs)?;

    let mut hidden = Vec::with_capacity(scores.len());
    // keep[l] is the mask for node layer l; input and output are all-true.
    let mut keep: Vec<Vec<bool>> = vec![vec![true; widths[0]]];
    for (h, layer_scores) in scores.iter().enumerate() {
        let mut kept: Vec<bool> = layer_scores.iter().map(|s| s.score() >= cfg.theta).collect();
        let guard_applied = !kept.iter().any(|&k| k);
        if guard_applied {
            // Highest score wins; ties go to the lowest index.
            let mut best = 0;
            for (i, s) in layer_scores.iter().enumerate() {
                if s.score() > layer_scores[best].score() {
                    best = i;
                }
            }
            kept[best] = true;
        }
        keep.push(kept.clone());
        hidden.push(HiddenLayerReport {
            layer: h + 1,
            scores: layer_scores.clone(),
            kept,
            guard_applied,
        });
    }
    keep.push(vec![true; *widths.last().unwrap()]);

    let layers = model
        .layers()
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            let rows: Vec<usize> = (0..layer.out_dim()).filter(|&j| keep[l + 1][j]).collect();
            let cols: Vec<usize> = (0..layer.in_dim()).filter(|&i| keep[l][i]).collect();
            let edges = rows
                .iter()
                .flat_map(|&j| cols.iter().map(move |&i| (j, i)))
                .map(|(j, i)| layer.edge(j, i).clone())
                .collect();
            KanLayer::new(cols.len(), rows.len(), edges)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut pruned =
        KanModel::from_layers(layers, model.grid_intervals(), model.degree(), model.seed())?;
    pruned.set_normalizer(model.normalizer().cloned());
    let report = PruneReport {
        theta: cfg.theta,
        widths_before: widths,
        widths_after: pruned.widths().to_vec(),
        hidden,
    };
    Ok((pruned, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples() -> Vec<Vec<f64>> {
        vec![
            vec![-0.8, 0.3, 0.5, -0.1, 0.9],
            vec![0.2, -0.6, 0.0, 0.7, -0.4],
            vec![0.5, 0.5, -0.9, 0.1, 0.0],
        ]
    }

    #[test]
    fn zero_network_scores_zero() {
        let m = KanModel::new(&[5, 3, 1], 2, 3, 0).unwrap();
        let m = m.unflatten_params(&vec![0.0; m.param_count()]).unwrap();
        let scores = node_scores(&m, &samples()).unwrap();
        assert_eq!(scores.len(), 1);
        assert!(scores[0].iter().all(|s| s.incoming == 0.0 && s.outgoing == 0.0));
    }

    #[test]
    fn no_hidden_layer_gives_no_scores() {
        let m = KanModel::new(&[5, 1], 2, 3, 0).unwrap();
        assert!(node_scores(&m, &samples()).unwrap().is_empty());
    }

    #[test]
    fn silent_outgoing_edge_scores_zero() {
        let mut m = KanModel::new(&[5, 2, 1], 2, 3, 0).unwrap();
        let e = m.layers_mut()[1].edge_mut(0, 1);
        e.w_base = 0.0;
        e.w_spline = 0.0;
        let scores = node_scores(&m, &samples()).unwrap();
        assert_eq!(scores[0][1].outgoing, 0.0);
        assert!(scores[0][0].outgoing > 0.0);
    }

    #[test]
    fn guard_keeps_one_node() {
        let m = KanModel::new(&[5, 2, 1], 2, 3, 0).unwrap();
        let (p, report) = prune(&m, &samples(), &PruneConfig { theta: 1e9 }).unwrap();
        assert_eq!(p.widths(), &[5, 1, 1]);
        assert!(report.hidden[0].guard_applied);
        assert_eq!(report.widths_after, vec![5, 1, 1]);
    }

    #[test]
    fn threshold_below_all_scores_is_noop() {
        let m = KanModel::new(&[5, 3, 1], 2, 3, 0).unwrap();
        let (p, report) = prune(&m, &samples(), &PruneConfig { theta: 1e-12 }).unwrap();
        assert_eq!(p, m);
        assert!(report.hidden[0].kept.iter().all(|&k| k));
    }

    #[test]
    fn rejects_non_positive_theta() {
        let m = KanModel::new(&[5, 3, 1], 2, 3, 0).unwrap();
        assert!(prune(&m, &samples(), &PruneConfig { theta: 0.0 }).is_err());
    }
}

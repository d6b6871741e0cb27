use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::Hyper;
use crate::util::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => k = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

/// Additive trees on the logit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub base_score: f64,
    pub trees: Vec<Tree>,
}

impl GbtModel {
    pub fn logit(&self, x: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.eval(x)).sum::<f64>()
    }
}

#[derive(Clone, Copy)]
struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

struct Settings {
    depth: usize,
    lambda: f64,
    min_child_weight: f64,
    shrinkage: f64,
}

/// Second-order boosting on log-loss with exact greedy splits. Split points
/// are stored as the largest left-hand training value, so any strictly
/// increasing per-column transform of the inputs produces the same
/// partitions.
pub(super) fn fit(x: &Array2<f64>, y: &[f64], hyper: &Hyper) -> GbtModel {
    let (n, d) = x.dim();
    let prior = y.iter().sum::<f64>() / n as f64;
    let base_score = (prior / (1.0 - prior)).ln();
    let cols: Vec<Vec<f64>> = (0..d).map(|j| x.column(j).to_vec()).collect();
    let order: Vec<Vec<u32>> = cols
        .iter()
        .map(|c| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|a, b| c[*a as usize].total_cmp(&c[*b as usize]).then(a.cmp(b)));
            idx
        })
        .collect();
    let settings = Settings {
        depth: hyper["depth"] as usize,
        lambda: hyper["lambda"],
        min_child_weight: hyper["min_child_weight"],
        shrinkage: hyper["shrinkage"],
    };
    let mut score = vec![base_score; n];
    let mut trees = Vec::new();
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    for _ in 0..hyper["rounds"] as usize {
        for i in 0..n {
            let p = sigmoid(score[i]);
            g[i] = p - y[i];
            h[i] = p * (1.0 - p);
        }
        let tree = grow(&cols, &order, &g, &h, &settings);
        for (i, s) in score.iter_mut().enumerate() {
            let row: Vec<f64> = cols.iter().map(|c| c[i]).collect();
            *s += tree.eval(&row);
        }
        trees.push(tree);
    }
    GbtModel { base_score, trees }
}

const CLOSED: usize = usize::MAX;

fn grow(cols: &[Vec<f64>], order: &[Vec<u32>], g: &[f64], h: &[f64], s: &Settings) -> Tree {
    let n = g.len();
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    // open node index per row, CLOSED once the row sits in a finished leaf
    let mut node_of = vec![0usize; n];
    let mut open = vec![0usize];
    let leaf_value = |gs: f64, hs: f64| -gs / (hs + s.lambda) * s.shrinkage;
    for level in 0..=s.depth {
        let m = nodes.len();
        let mut gs = vec![0.0; m];
        let mut hs = vec![0.0; m];
        for i in 0..n {
            if node_of[i] != CLOSED {
                gs[node_of[i]] += g[i];
                hs[node_of[i]] += h[i];
            }
        }
        if level == s.depth {
            for &k in &open {
                nodes[k] = Node::Leaf {
                    value: leaf_value(gs[k], hs[k]),
                };
            }
            break;
        }
        let mut best: Vec<Option<Best>> = vec![None; m];
        let mut gl = vec![0.0; m];
        let mut hl = vec![0.0; m];
        let mut last: Vec<Option<f64>> = vec![None; m];
        for (j, col) in cols.iter().enumerate() {
            gl.iter_mut().for_each(|v| *v = 0.0);
            hl.iter_mut().for_each(|v| *v = 0.0);
            last.iter_mut().for_each(|v| *v = None);
            for &i in &order[j] {
                let i = i as usize;
                let k = node_of[i];
                if k == CLOSED {
                    continue;
                }
                let v = col[i];
                if let Some(prev) = last[k] {
                    if v > prev {
                        let (gr, hr) = (gs[k] - gl[k], hs[k] - hl[k]);
                        if hl[k] >= s.min_child_weight && hr >= s.min_child_weight {
                            let gain = gl[k] * gl[k] / (hl[k] + s.lambda) + gr * gr / (hr + s.lambda)
                                - gs[k] * gs[k] / (hs[k] + s.lambda);
                            if best[k].is_none_or(|b| gain > b.gain) {
                                best[k] = Some(Best {
                                    gain,
                                    feature: j,
                                    threshold: prev,
                                });
                            }
                        }
                    }
                }
                gl[k] += g[i];
                hl[k] += h[i];
                last[k] = Some(v);
            }
        }
        let mut next_open = Vec::new();
        let mut children = vec![(CLOSED, CLOSED); m];
        for &k in &open {
            match best[k].filter(|b| b.gain > 1e-12) {
                Some(b) => {
                    let left = nodes.len();
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes.push(Node::Leaf { value: 0.0 });
                    nodes[k] = Node::Split {
                        feature: b.feature,
                        threshold: b.threshold,
                        left,
                        right: left + 1,
                    };
                    children[k] = (left, left + 1);
                    next_open.extend([left, left + 1]);
                }
                None => {
                    nodes[k] = Node::Leaf {
                        value: leaf_value(gs[k], hs[k]),
                    };
                }
            }
        }
        for i in 0..n {
            let k = node_of[i];
            if k == CLOSED {
                continue;
            }
            node_of[i] = match (&nodes[k], children[k]) {
                (Node::Split { feature, threshold, .. }, (l, r)) => {
                    if cols[*feature][i] <= *threshold {
                        l
                    } else {
                        r
                    }
                }
                _ => CLOSED,
            };
        }
        open = next_open;
        if open.is_empty() {
            break;
        }
    }
    Tree { nodes }
}

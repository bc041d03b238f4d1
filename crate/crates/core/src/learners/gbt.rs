//! Gradient-boosted shallow regression trees on quantile-binned features.
//!
//! Classification boosts the logistic loss with Newton leaf values;
//! regression boosts squared error. Training is fully deterministic: no row
//! or column subsampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::poly::sigmoid;
use crate::matrix::Matrix;

const MAX_BINS: usize = 32;
const MIN_LEAF: usize = 10;
const LEAF_L2: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Leaf(v) => return *v,
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    base: f64,
    trees: Vec<Tree>,
    logistic: bool,
}

impl GbtModel {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let raw = self.base + self.trees.iter().map(|t| t.predict(x)).sum::<f64>();
        if self.logistic {
            sigmoid(raw)
        } else {
            raw
        }
    }
}

/// Per-feature cut points (at most `MAX_BINS - 1`) taken from empirical
/// quantiles; bin `b` holds values in `(edges[b-1], edges[b]]`.
fn bin_edges(x: &Matrix) -> Vec<Vec<f64>> {
    (0..x.cols())
        .map(|j| {
            let mut col = x.column(j);
            col.sort_by(|a, b| a.total_cmp(b));
            let mut edges = Vec::new();
            for q in 1..MAX_BINS {
                let pos = (q * col.len()) / MAX_BINS;
                if pos == 0 || pos >= col.len() {
                    continue;
                }
                let e = 0.5 * (col[pos - 1] + col[pos]);
                if col[pos - 1] < col[pos] && edges.last().is_none_or(|&l| e > l) {
                    edges.push(e);
                }
            }
            edges
        })
        .collect()
}

struct Binned {
    bins: Vec<u8>, // row-major n x p
    p: usize,
}

impl Binned {
    fn new(x: &Matrix, edges: &[Vec<f64>]) -> Self {
        let p = x.cols();
        let mut bins = Vec::with_capacity(x.rows() * p);
        for i in 0..x.rows() {
            for (j, &v) in x.row(i).iter().enumerate() {
                bins.push(edges[j].partition_point(|&e| e < v) as u8);
            }
        }
        Binned { bins, p }
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> usize {
        self.bins[i * self.p + j] as usize
    }
}

struct Grower<'a> {
    binned: &'a Binned,
    edges: &'a [Vec<f64>],
    grad: &'a [f64],
    hess: &'a [f64],
    max_depth: usize,
    learning_rate: f64,
}

impl Grower<'_> {
    fn leaf_value(&self, rows: &[usize]) -> f64 {
        let (g, h) = rows
            .iter()
            .fold((0.0, 0.0), |(g, h), &i| (g + self.grad[i], h + self.hess[i]));
        -self.learning_rate * g / (h + LEAF_L2)
    }

    fn grow(&self, rows: Vec<usize>, depth: usize, nodes: &mut Vec<Node>, out: &mut [f64]) -> usize {
        let id = nodes.len();
        nodes.push(Node::Leaf(0.0));
        let split = if depth < self.max_depth && rows.len() >= 2 * MIN_LEAF {
            self.best_split(&rows)
        } else {
            None
        };
        match split {
            None => {
                let v = self.leaf_value(&rows);
                for &i in &rows {
                    out[i] = v;
                }
                nodes[id] = Node::Leaf(v);
            }
            Some((feature, bin)) => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.into_iter().partition(|&i| self.binned.get(i, feature) <= bin);
                let left = self.grow(l, depth + 1, nodes, out);
                let right = self.grow(r, depth + 1, nodes, out);
                nodes[id] = Node::Split {
                    feature,
                    threshold: self.edges[feature][bin],
                    left,
                    right,
                };
            }
        }
        id
    }

    fn best_split(&self, rows: &[usize]) -> Option<(usize, usize)> {
        let mut best: Option<(f64, usize, usize)> = None;
        let (gt, ht) = rows
            .iter()
            .fold((0.0, 0.0), |(g, h), &i| (g + self.grad[i], h + self.hess[i]));
        let parent = gt * gt / (ht + LEAF_L2);
        for j in 0..self.binned.p {
            let nb = self.edges[j].len() + 1;
            if nb < 2 {
                continue;
            }
            let mut hg = [0.0f64; MAX_BINS];
            let mut hh = [0.0f64; MAX_BINS];
            let mut hc = [0usize; MAX_BINS];
            for &i in rows {
                let b = self.binned.get(i, j);
                hg[b] += self.grad[i];
                hh[b] += self.hess[i];
                hc[b] += 1;
            }
            let (mut gl, mut hl, mut cl) = (0.0, 0.0, 0usize);
            for b in 0..nb - 1 {
                gl += hg[b];
                hl += hh[b];
                cl += hc[b];
                let cr = rows.len() - cl;
                if cl < MIN_LEAF {
                    continue;
                }
                if cr < MIN_LEAF {
                    break;
                }
                let gr = gt - gl;
                let hr = ht - hl;
                let gain = gl * gl / (hl + LEAF_L2) + gr * gr / (hr + LEAF_L2) - parent;
                if gain > 1e-12 && best.is_none_or(|(bg, _, _)| gain > bg) {
                    best = Some((gain, j, b));
                }
            }
        }
        best.map(|(_, j, b)| (j, b))
    }
}

/// Fits a boosted ensemble. `logistic` selects log-loss boosting on targets
/// in `[0,1]`; otherwise squared error.
pub fn fit_gbt(
    x: &Matrix,
    y: &[f64],
    trees: usize,
    depth: usize,
    learning_rate: f64,
    logistic: bool,
) -> Result<GbtModel> {
    if !(learning_rate > 0.0 && learning_rate <= 1.0) || depth == 0 {
        return Err(Error::Learner(format!(
            "invalid boosting parameters: depth {depth}, learning rate {learning_rate}"
        )));
    }
    let n = x.rows();
    let mean = y.iter().sum::<f64>() / n as f64;
    let base = if logistic {
        let m = mean.clamp(1e-6, 1.0 - 1e-6);
        (m / (1.0 - m)).ln()
    } else {
        mean
    };
    let edges = bin_edges(x);
    let binned = Binned::new(x, &edges);
    let mut raw = vec![base; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![1.0; n];
    let mut step = vec![0.0; n];
    let mut model = GbtModel {
        base,
        trees: Vec::with_capacity(trees),
        logistic,
    };
    let all: Vec<usize> = (0..n).collect();
    for _ in 0..trees {
        for i in 0..n {
            if logistic {
                let p = sigmoid(raw[i]);
                grad[i] = p - y[i];
                hess[i] = (p * (1.0 - p)).max(1e-6);
            } else {
                grad[i] = raw[i] - y[i];
            }
        }
        let grower = Grower {
            binned: &binned,
            edges: &edges,
            grad: &grad,
            hess: &hess,
            max_depth: depth,
            learning_rate,
        };
        let mut nodes = Vec::new();
        grower.grow(all.clone(), 0, &mut nodes, &mut step);
        for i in 0..n {
            raw[i] += step[i];
        }
        model.trees.push(Tree { nodes });
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Learner("boosting diverged".into()));
    }
    Ok(model)
}

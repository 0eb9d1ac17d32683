//! Histogram-binned regression trees shared by the forests and the booster.
//!
//! Split search is greedy variance reduction over pre-binned features. Ties
//! go to the lowest feature index, then the lowest threshold, because
//! candidates are scanned in that order and only a strictly larger gain
//! replaces the incumbent.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seeds::SimRng;

/// Column-major binned copy of a dense feature matrix.
#[derive(Debug, Clone)]
pub struct BinnedMatrix {
    n_rows: usize,
    bins: Vec<Vec<u8>>,
    /// `thresholds[f][k]` separates bin `k` (value ≤ threshold) from `k + 1`.
    thresholds: Vec<Vec<f64>>,
}

impl BinnedMatrix {
    pub fn from_rows(rows: &[Vec<f64>], max_bins: usize) -> Self {
        let n_rows = rows.len();
        let n_features = rows.first().map_or(0, Vec::len);
        let max_bins = max_bins.clamp(2, 256);
        let mut bins = Vec::with_capacity(n_features);
        let mut thresholds = Vec::with_capacity(n_features);
        for f in 0..n_features {
            let column: Vec<f64> = rows.iter().map(|r| r[f]).collect();
            let thr = bin_thresholds(&column, max_bins);
            bins.push(column.iter().map(|&x| bin_of(&thr, x)).collect());
            thresholds.push(thr);
        }
        Self {
            n_rows,
            bins,
            thresholds,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.bins.len()
    }
}

fn bin_of(thresholds: &[f64], x: f64) -> u8 {
    thresholds.partition_point(|&t| t < x) as u8
}

/// Midpoints between consecutive distinct values; when there are too many,
/// keep the ones nearest the frequency quantiles.
fn bin_thresholds(column: &[f64], max_bins: usize) -> Vec<f64> {
    let mut sorted = column.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() <= 1 {
        return Vec::new();
    }
    if distinct.len() <= max_bins {
        return distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    }
    let n = sorted.len();
    let mut out: Vec<f64> = Vec::with_capacity(max_bins - 1);
    for q in 1..max_bins {
        let v = sorted[q * n / max_bins];
        let pos = distinct.partition_point(|&d| d < v);
        if pos == 0 {
            continue;
        }
        let thr = 0.5 * (distinct[pos - 1] + distinct[pos]);
        if out.last().is_none_or(|&last| thr > last) {
            out.push(thr);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Node-level value, kept as the fallback for empty children.
        value: f64,
    },
}

impl Node {
    pub fn value(&self) -> f64 {
        match self {
            Node::Leaf { value } | Node::Split { value, .. } => *value,
        }
    }

    fn set_value(&mut self, v: f64) {
        match self {
            Node::Leaf { value } | Node::Split { value, .. } => *value = v,
        }
    }
}

/// Arena-allocated binary tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn constant(value: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf { .. } => return id,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => id = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.nodes[self.leaf_index(x)].value()
    }

    /// Node ids from the root down to the leaf reached by `x`.
    fn path(&self, x: &[f64], out: &mut Vec<usize>) {
        out.clear();
        let mut id = 0;
        loop {
            out.push(id);
            match &self.nodes[id] {
                Node::Leaf { .. } => return,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => id = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub(crate) fn set_leaf_value(&mut self, id: usize, value: f64) {
        self.nodes[id].set_value(value);
    }

    /// Re-estimate every node value as the mean of `target` over the rows in
    /// `rows` that pass through it. A node no row reaches inherits its
    /// parent's value; the root falls back to `fallback`.
    pub(crate) fn reestimate(&mut self, features: &[Vec<f64>], target: &[f64], rows: &[usize], fallback: f64) {
        let mut sums = vec![0.0; self.nodes.len()];
        let mut counts = vec![0usize; self.nodes.len()];
        let mut path = Vec::new();
        for &i in rows {
            self.path(&features[i], &mut path);
            for &id in &path {
                sums[id] += target[i];
                counts[id] += 1;
            }
        }
        // Children always have larger ids than their parent.
        let mut values = vec![0.0; self.nodes.len()];
        let mut parent_value = vec![fallback; self.nodes.len()];
        for id in 0..self.nodes.len() {
            let v = if counts[id] > 0 {
                sums[id] / counts[id] as f64
            } else {
                parent_value[id]
            };
            values[id] = v;
            if let Node::Split { left, right, .. } = self.nodes[id] {
                parent_value[left] = v;
                parent_value[right] = v;
            }
        }
        for (node, v) in self.nodes.iter_mut().zip(values) {
            node.set_value(v);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features considered per split; values ≥ the feature count mean all.
    pub max_features: usize,
}

/// A grown tree plus the training rows that ended in each leaf.
pub struct GrownTree {
    pub tree: Tree,
    pub leaves: Vec<(usize, Vec<u32>)>,
}

struct Grower<'a> {
    data: &'a BinnedMatrix,
    target: &'a [f64],
    params: GrowParams,
    rng: &'a mut SimRng,
    nodes: Vec<Node>,
    leaves: Vec<(usize, Vec<u32>)>,
    counts: Vec<f64>,
    sums: Vec<f64>,
    features: Vec<usize>,
}

/// Grow a variance-reduction tree on `rows` (repeats allowed). Node values
/// are in-sample target means.
pub fn grow(data: &BinnedMatrix, target: &[f64], rows: Vec<u32>, params: GrowParams, rng: &mut SimRng) -> GrownTree {
    let mut grower = Grower {
        data,
        target,
        params,
        rng,
        nodes: Vec::new(),
        leaves: Vec::new(),
        counts: vec![0.0; 256],
        sums: vec![0.0; 256],
        features: (0..data.n_features()).collect(),
    };
    grower.build(rows, 0);
    GrownTree {
        tree: Tree { nodes: grower.nodes },
        leaves: grower.leaves,
    }
}

impl Grower<'_> {
    fn build(&mut self, rows: Vec<u32>, depth: usize) -> usize {
        let id = self.nodes.len();
        let n = rows.len() as f64;
        let (sum, sum_sq) = rows.iter().fold((0.0, 0.0), |(s, q), &i| {
            let y = self.target[i as usize];
            (s + y, q + y * y)
        });
        let mean = if rows.is_empty() { 0.0 } else { sum / n };
        self.nodes.push(Node::Leaf { value: mean });

        let sse = sum_sq - sum * mean;
        let splittable = depth < self.params.max_depth
            && rows.len() >= 2 * self.params.min_leaf.max(1)
            && sse > 1e-12 * n.max(1.0);
        let best = if splittable { self.best_split(&rows, sum) } else { None };

        match best {
            None => {
                self.leaves.push((id, rows));
                id
            }
            Some((feature, bin)) => {
                let column = &self.data.bins[feature];
                let (left_rows, right_rows): (Vec<u32>, Vec<u32>) =
                    rows.into_iter().partition(|&i| column[i as usize] <= bin);
                let threshold = self.data.thresholds[feature][bin as usize];
                let left = self.build(left_rows, depth + 1);
                let right = self.build(right_rows, depth + 1);
                self.nodes[id] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    value: mean,
                };
                id
            }
        }
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let m = self.features.len();
        let k = self.params.max_features.max(1);
        if k >= m {
            return self.features.clone();
        }
        // Partial Fisher-Yates, then scan in ascending index order.
        for i in 0..k {
            let j = self.rng.random_range(i..m);
            self.features.swap(i, j);
        }
        let mut chosen = self.features[..k].to_vec();
        chosen.sort_unstable();
        chosen
    }

    fn best_split(&mut self, rows: &[u32], total: f64) -> Option<(usize, u8)> {
        let n = rows.len() as f64;
        let min_leaf = self.params.min_leaf.max(1) as f64;
        let base = total * total / n;
        let mut best: Option<(usize, u8)> = None;
        let mut best_gain = f64::NEG_INFINITY;
        for f in self.candidate_features() {
            let n_bins = self.data.thresholds[f].len() + 1;
            if n_bins < 2 {
                continue;
            }
            let column = &self.data.bins[f];
            self.counts[..n_bins].fill(0.0);
            self.sums[..n_bins].fill(0.0);
            for &i in rows {
                let b = column[i as usize] as usize;
                self.counts[b] += 1.0;
                self.sums[b] += self.target[i as usize];
            }
            let (mut cl, mut sl) = (0.0, 0.0);
            for k in 0..n_bins - 1 {
                cl += self.counts[k];
                sl += self.sums[k];
                let cr = n - cl;
                if cl < min_leaf {
                    continue;
                }
                if cr < min_leaf {
                    break;
                }
                let sr = total - sl;
                let gain = sl * sl / cl + sr * sr / cr - base;
                if gain > best_gain {
                    best_gain = gain;
                    best = Some((f, k as u8));
                }
            }
        }
        best
    }
}

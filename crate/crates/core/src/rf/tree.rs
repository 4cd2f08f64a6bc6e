//! Multi-output CART regression tree.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Criterion, RfHyperparams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

/// Borrowed training matrix: row-major features and targets.
pub(crate) struct TrainView<'a> {
    pub x: &'a [Vec<f64>],
    pub y: &'a [Vec<f64>],
    pub n_features: usize,
    pub n_outputs: usize,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> &[f64] {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right } as usize,
                Node::Leaf { values } => return values,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => 1 + go(nodes, *left as usize).max(go(nodes, *right as usize)),
                Node::Leaf { .. } => 0,
            }
        }
        go(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub(crate) fn fit<R: Rng>(data: &TrainView, rows: Vec<usize>, hp: &RfHyperparams, rng: &mut R) -> Self {
        let mut tree = RegressionTree { nodes: Vec::new() };
        tree.grow(data, rows, 0, hp, rng);
        tree
    }

    fn grow<R: Rng>(
        &mut self,
        data: &TrainView,
        rows: Vec<usize>,
        depth: usize,
        hp: &RfHyperparams,
        rng: &mut R,
    ) -> u32 {
        let id = self.nodes.len() as u32;
        self.nodes.push(Node::Leaf { values: Vec::new() });

        let split = if depth < hp.max_depth && rows.len() >= hp.min_samples_split && !is_pure(data, &rows) {
            let n_try = hp.max_features.count(data.n_features);
            let mut features: Vec<usize> = sample_indices(rng, data.n_features, n_try).into_vec();
            features.sort_unstable();
            best_split(data, &rows, &features, hp)
        } else {
            None
        };

        match split {
            Some(s) => {
                let (l_rows, r_rows): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&r| data.x[r][s.feature] <= s.threshold);
                let left = self.grow(data, l_rows, depth + 1, hp, rng);
                let right = self.grow(data, r_rows, depth + 1, hp, rng);
                self.nodes[id as usize] = Node::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left,
                    right,
                };
            }
            None => {
                self.nodes[id as usize] = Node::Leaf {
                    values: leaf_values(data, &rows),
                };
            }
        }
        id
    }
}

fn is_pure(data: &TrainView, rows: &[usize]) -> bool {
    let first = &data.y[rows[0]];
    rows.iter().all(|&r| data.y[r] == *first)
}

fn leaf_values(data: &TrainView, rows: &[usize]) -> Vec<f64> {
    if is_pure(data, rows) {
        return data.y[rows[0]].clone();
    }
    let mut acc = vec![0.0; data.n_outputs];
    for &r in rows {
        for (a, v) in acc.iter_mut().zip(&data.y[r]) {
            *a += v;
        }
    }
    let n = rows.len() as f64;
    acc.iter().map(|a| a / n).collect()
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub impurity: f64,
}

/// Exhaustive split search over midpoints of consecutive distinct feature
/// values. Impurity is summed over outputs; ties keep the earliest candidate
/// (lowest feature index, then lowest threshold).
pub(crate) fn best_split(
    data: &TrainView,
    rows: &[usize],
    features: &[usize],
    hp: &RfHyperparams,
) -> Option<SplitChoice> {
    let n = rows.len();
    let min_leaf = hp.min_samples_leaf.max(1);
    if n < 2 * min_leaf {
        return None;
    }
    let parent = node_impurity(data, rows, hp.criterion);
    let mut best: Option<SplitChoice> = None;

    for &f in features {
        let mut sorted = rows.to_vec();
        sorted.sort_by(|&a, &b| data.x[a][f].total_cmp(&data.x[b][f]));
        let costs = split_costs(data, &sorted, hp.criterion);
        for p in min_leaf..=(n - min_leaf) {
            let (lo, hi) = (data.x[sorted[p - 1]][f], data.x[sorted[p]][f]);
            if lo >= hi {
                continue;
            }
            let imp = costs[p];
            if best.is_none_or(|b| imp < b.impurity) {
                let mut threshold = lo + (hi - lo) / 2.0;
                if threshold >= hi {
                    threshold = lo;
                }
                best = Some(SplitChoice {
                    feature: f,
                    threshold,
                    impurity: imp,
                });
            }
        }
    }
    best.filter(|b| b.impurity < parent - 1e-12 * (1.0 + parent.abs()))
}

/// Total impurity of the node as a single group.
pub(crate) fn node_impurity(data: &TrainView, rows: &[usize], criterion: Criterion) -> f64 {
    split_costs(data, rows, criterion)[rows.len()]
}

/// `costs[p]` = impurity(first p rows) + impurity(remaining rows), for rows
/// in the given order, p = 0..=n.
fn split_costs(data: &TrainView, sorted: &[usize], criterion: Criterion) -> Vec<f64> {
    match criterion {
        Criterion::Squared => squared_costs(data, sorted),
        Criterion::Absolute => absolute_costs(data, sorted),
    }
}

fn squared_costs(data: &TrainView, sorted: &[usize]) -> Vec<f64> {
    let n = sorted.len();
    let m = data.n_outputs;
    let mut total = vec![0.0; m];
    let mut sq_total = 0.0;
    for &r in sorted {
        for (t, v) in total.iter_mut().zip(&data.y[r]) {
            *t += v;
            sq_total += v * v;
        }
    }
    let mut left = vec![0.0; m];
    let mut sq_left = 0.0;
    let mut costs = vec![0.0; n + 1];
    for p in 0..=n {
        if p > 0 {
            for (l, v) in left.iter_mut().zip(&data.y[sorted[p - 1]]) {
                *l += v;
                sq_left += v * v;
            }
        }
        let mut sse = 0.0;
        if p > 0 {
            let ss: f64 = left.iter().map(|l| l * l).sum();
            sse += sq_left - ss / p as f64;
        }
        if p < n {
            let ss: f64 = left.iter().zip(&total).map(|(l, t)| (t - l) * (t - l)).sum();
            sse += (sq_total - sq_left) - ss / (n - p) as f64;
        }
        costs[p] = sse.max(0.0);
    }
    costs
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Ord64(f64);

impl Eq for Ord64 {}

impl PartialOrd for Ord64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ord64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Running Σ|y - median| via two heaps.
#[derive(Default)]
struct MedianDeviation {
    lower: BinaryHeap<Ord64>,
    upper: BinaryHeap<Reverse<Ord64>>,
    sum_lower: f64,
    sum_upper: f64,
}

impl MedianDeviation {
    fn push(&mut self, v: f64) {
        match self.lower.peek() {
            Some(top) if v > top.0 => {
                self.upper.push(Reverse(Ord64(v)));
                self.sum_upper += v;
            }
            _ => {
                self.lower.push(Ord64(v));
                self.sum_lower += v;
            }
        }
        if self.lower.len() > self.upper.len() + 1 {
            let x = self.lower.pop().expect("nonempty").0;
            self.sum_lower -= x;
            self.upper.push(Reverse(Ord64(x)));
            self.sum_upper += x;
        } else if self.upper.len() > self.lower.len() {
            let x = self.upper.pop().expect("nonempty").0 .0;
            self.sum_upper -= x;
            self.lower.push(Ord64(x));
            self.sum_lower += x;
        }
    }

    fn cost(&self) -> f64 {
        match self.lower.peek() {
            None => 0.0,
            Some(m) => {
                let m = m.0;
                (self.sum_upper - m * self.upper.len() as f64) + (m * self.lower.len() as f64 - self.sum_lower)
            }
        }
    }
}

fn absolute_costs(data: &TrainView, sorted: &[usize]) -> Vec<f64> {
    let n = sorted.len();
    let mut costs = vec![0.0; n + 1];
    for o in 0..data.n_outputs {
        let mut acc = MedianDeviation::default();
        for p in 1..=n {
            acc.push(data.y[sorted[p - 1]][o]);
            costs[p] += acc.cost();
        }
        let mut acc = MedianDeviation::default();
        for p in (0..n).rev() {
            acc.push(data.y[sorted[p]][o]);
            costs[p] += acc.cost();
        }
    }
    costs.iter().map(|c| c.max(0.0)).collect()
}

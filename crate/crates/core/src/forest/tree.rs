//! Greedy CART with squared-error impurity over one or more outputs.
//!
//! Candidate thresholds are midpoints between consecutive distinct feature
//! values; a row goes left when `x[feature] <= threshold`. Among splits of
//! equal gain the lowest feature index wins, then the smallest threshold.

use ndarray::ArrayView2;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// `value` indexes the first of `n_outputs` entries in the leaf values.
    Leaf { value: usize, n_samples: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub(crate) nodes: Vec<TreeNode>,
    pub(crate) values: Vec<f64>,
    pub(crate) n_outputs: usize,
    pub(crate) n_features: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// `None` searches every feature at every node.
    pub features_per_split: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_samples_leaf: 1,
            features_per_split: None,
        }
    }
}

impl Tree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Index of the leaf reached by `x`.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { .. } => return i,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn predict_outputs(&self, x: &[f64]) -> &[f64] {
        match self.nodes[self.leaf_index(x)] {
            TreeNode::Leaf { value, .. } => &self.values[value..value + self.n_outputs],
            TreeNode::Split { .. } => unreachable!("leaf_index returns a leaf"),
        }
    }

    /// First output; the whole prediction of a regression tree.
    #[inline]
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.predict_outputs(x)[0]
    }

    /// `(feature, rows routed left)` for every split in depth-first order,
    /// used to compare tree structure.
    pub fn split_partition(&self, x: ArrayView2<f64>) -> Vec<(usize, Vec<usize>)> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, (0..x.nrows()).collect::<Vec<_>>())];
        while let Some((i, rows)) = stack.pop() {
            if let TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } = self.nodes[i]
            {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&row| x[[row, feature]] <= threshold);
                out.push((feature, l.clone()));
                stack.push((right, r));
                stack.push((left, l));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Format("tree has no nodes".into()));
        }
        for node in &self.nodes {
            match *node {
                TreeNode::Split {
                    feature,
                    left,
                    right,
                    ..
                } => {
                    if feature >= self.n_features || left >= self.nodes.len() || right >= self.nodes.len() {
                        return Err(Error::Format("split node references out of range".into()));
                    }
                }
                TreeNode::Leaf { value, n_samples } => {
                    if n_samples == 0 || value + self.n_outputs > self.values.len() {
                        return Err(Error::Format("malformed leaf".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Fitted tree plus the per-feature impurity decrease it achieved, weighted by
/// node size and divided by the number of training rows.
pub(crate) struct FitOutput {
    pub tree: Tree,
    pub importances: Vec<f64>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
    n_left: usize,
}

/// Builds a tree on the rows listed in `samples` (repeats allowed, as produced
/// by bootstrapping). `y` is row-major `n_rows × n_outputs`.
pub(crate) fn build(
    x: ArrayView2<f64>,
    y: &[f64],
    n_outputs: usize,
    samples: &[usize],
    params: &TreeParams,
    seed: u64,
) -> Result<FitOutput> {
    let (n_rows, n_features) = x.dim();
    if samples.is_empty() || n_rows == 0 {
        return Err(Error::Empty("training rows"));
    }
    if n_features == 0 {
        return Err(Error::InvalidArgument("at least one feature is required".into()));
    }
    if y.len() != n_rows * n_outputs {
        return Err(Error::ShapeMismatch {
            expected: n_rows * n_outputs,
            got: y.len(),
        });
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("training data contains NaN".into()));
    }
    if params.min_samples_leaf == 0 {
        return Err(Error::InvalidArgument("min_samples_leaf must be >= 1".into()));
    }
    let mtry = params.features_per_split.unwrap_or(n_features).clamp(1, n_features);

    let columns: Vec<Vec<f64>> = (0..n_features).map(|f| x.column(f).to_vec()).collect();

    // sorted[f] holds the node's rows ordered by feature f; every node owns the
    // same [lo, hi) window in each of them.
    let mut sorted: Vec<Vec<usize>> = columns
        .iter()
        .map(|col| {
            let mut s = samples.to_vec();
            s.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
            s
        })
        .collect();

    let mut rng = rng::stream(seed, 7);
    let mut nodes: Vec<TreeNode> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut importances = vec![0.0; n_features];
    let mut goes_left = vec![false; n_rows];
    let mut scratch: Vec<usize> = Vec::with_capacity(samples.len());
    let mut sum_left = vec![0.0; n_outputs];

    nodes.push(TreeNode::Leaf { value: 0, n_samples: 0 });
    let mut stack = vec![(0usize, 0usize, samples.len(), 0usize)];

    while let Some((node_id, lo, hi, depth)) = stack.pop() {
        let rows = &sorted[0][lo..hi];
        let n = rows.len();

        let mut total = vec![0.0; n_outputs];
        let mut pure = true;
        for o in 0..n_outputs {
            let first = y[rows[0] * n_outputs + o];
            for &r in rows {
                let v = y[r * n_outputs + o];
                total[o] += v;
                pure &= v == first;
            }
        }

        let can_split = !pure
            && n >= 2 * params.min_samples_leaf
            && params.max_depth.is_none_or(|d| depth < d);

        let best = if can_split {
            let features: Vec<usize> = if mtry == n_features {
                (0..n_features).collect()
            } else {
                let mut f = index::sample(&mut rng, n_features, mtry).into_vec();
                f.sort_unstable();
                f
            };
            let mut best: Option<Candidate> = None;
            for &f in &features {
                let col = &columns[f];
                let order = &sorted[f][lo..hi];
                sum_left.iter_mut().for_each(|s| *s = 0.0);
                for i in 0..n - 1 {
                    let r = order[i];
                    for o in 0..n_outputs {
                        sum_left[o] += y[r * n_outputs + o];
                    }
                    let n_left = i + 1;
                    let n_right = n - n_left;
                    if n_left < params.min_samples_leaf || n_right < params.min_samples_leaf {
                        continue;
                    }
                    let (xa, xb) = (col[r], col[order[i + 1]]);
                    if xa >= xb {
                        continue;
                    }
                    // SSE(parent) - SSE(left) - SSE(right) = nL·nR/n · |mean_L - mean_R|²
                    let mut diff2 = 0.0;
                    for o in 0..n_outputs {
                        let d = sum_left[o] / n_left as f64 - (total[o] - sum_left[o]) / n_right as f64;
                        diff2 += d * d;
                    }
                    let gain = (n_left * n_right) as f64 / n as f64 * diff2;
                    let better = match &best {
                        None => gain > 0.0,
                        Some(b) => gain > b.gain * (1.0 + 1e-12),
                    };
                    if better {
                        let mut threshold = 0.5 * (xa + xb);
                        if threshold >= xb {
                            threshold = xa;
                        }
                        best = Some(Candidate {
                            feature: f,
                            threshold,
                            gain,
                            n_left,
                        });
                    }
                }
            }
            best
        } else {
            None
        };

        match best {
            None => {
                let value = values.len();
                values.extend(total.iter().map(|s| s / n as f64));
                nodes[node_id] = TreeNode::Leaf { value, n_samples: n };
            }
            Some(c) => {
                importances[c.feature] += c.gain;
                for &r in &sorted[c.feature][lo..hi] {
                    goes_left[r] = columns[c.feature][r] <= c.threshold;
                }
                for s in sorted.iter_mut() {
                    stable_partition(&mut s[lo..hi], &goes_left, &mut scratch);
                }
                let mid = lo + c.n_left;
                debug_assert!(sorted[0][lo..mid].iter().all(|&r| goes_left[r]));
                let left = nodes.len();
                let right = left + 1;
                nodes.push(TreeNode::Leaf { value: 0, n_samples: 0 });
                nodes.push(TreeNode::Leaf { value: 0, n_samples: 0 });
                nodes[node_id] = TreeNode::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left,
                    right,
                };
                stack.push((right, mid, hi, depth + 1));
                stack.push((left, lo, mid, depth + 1));
            }
        }
    }

    let scale = samples.len() as f64;
    importances.iter_mut().for_each(|v| *v /= scale);
    Ok(FitOutput {
        tree: Tree {
            nodes,
            values,
            n_outputs,
            n_features,
        },
        importances,
    })
}

fn stable_partition(slice: &mut [usize], goes_left: &[bool], scratch: &mut Vec<usize>) {
    scratch.clear();
    let mut w = 0;
    for i in 0..slice.len() {
        let r = slice[i];
        if goes_left[r] {
            slice[w] = r;
            w += 1;
        } else {
            scratch.push(r);
        }
    }
    slice[w..].copy_from_slice(scratch);
}

/// Single regression tree on every row, no resampling.
pub fn fit_tree(x: ArrayView2<f64>, y: &[f64], params: &TreeParams, seed: u64) -> Result<Tree> {
    check_rows(x, y.len())?;
    let samples: Vec<usize> = (0..x.nrows()).collect();
    Ok(build(x, y, 1, &samples, params, seed)?.tree)
}

pub(crate) fn check_rows(x: ArrayView2<f64>, n_targets: usize) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::Empty("training rows"));
    }
    if x.nrows() != n_targets {
        return Err(Error::ShapeMismatch {
            expected: x.nrows(),
            got: n_targets,
        });
    }
    Ok(())
}

/// Depth-limited tree over class labels: squared error on one-hot targets,
/// which equals Gini impurity; prediction is the majority class of the leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationTree {
    tree: Tree,
}

impl ClassificationTree {
    pub fn fit(x: ArrayView2<f64>, labels: &[usize], n_classes: usize, max_depth: usize) -> Result<Self> {
        check_rows(x, labels.len())?;
        if n_classes == 0 || labels.iter().any(|&l| l >= n_classes) {
            return Err(Error::InvalidArgument("label out of range".into()));
        }
        let mut onehot = vec![0.0; labels.len() * n_classes];
        for (i, &l) in labels.iter().enumerate() {
            onehot[i * n_classes + l] = 1.0;
        }
        let params = TreeParams {
            max_depth: Some(max_depth),
            ..TreeParams::default()
        };
        let samples: Vec<usize> = (0..x.nrows()).collect();
        let tree = build(x, &onehot, n_classes, &samples, &params, 0)?.tree;
        Ok(Self { tree })
    }

    /// Majority class; ties go to the lowest label.
    pub fn predict(&self, x: &[f64]) -> usize {
        let probs = self.tree.predict_outputs(x);
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn n_features(&self) -> usize {
        self.tree.n_features
    }

    pub fn tree(&self) -> &Tree {
        &self.tree
    }
}

//! Extremely randomized trees for (multi-output) regression.
//!
//! Every tree sees the whole training set. At each node up to
//! `max_features` non-constant features are visited in random order, one
//! threshold is drawn uniformly inside each feature's range at that node,
//! and the candidate with the largest reduction in summed squared error
//! (added over the output dimensions) becomes the split. Growth stops at
//! `min_samples_split`, `min_samples_leaf`, `max_depth`, or when the
//! node's targets are all identical.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    All,
    Count(usize),
    Sqrt,
}

impl MaxFeatures {
    fn resolve(self, n_features: usize) -> usize {
        match self {
            MaxFeatures::All => n_features,
            MaxFeatures::Count(c) => c.min(n_features),
            MaxFeatures::Sqrt => ((n_features as f64).sqrt().floor() as usize).max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_features: MaxFeatures,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    #[serde(default)]
    pub max_depth: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_features: MaxFeatures::All,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_depth: None,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidParameter("n_trees must be at least 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(Error::InvalidParameter("min_samples_split must be at least 2".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::InvalidParameter("min_samples_leaf must be at least 1".into()));
        }
        if self.max_features == MaxFeatures::Count(0) {
            return Err(Error::InvalidParameter("max_features must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        samples: usize,
        /// Reduction in summed squared error achieved by this split.
        gain: f64,
    },
    Leaf {
        value: Vec<f64>,
        samples: usize,
    },
}

/// Flat node arena; node 0 is the root. Rows with `x[feature] <= threshold`
/// go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_for(&self, row: &[f64]) -> &Node {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if row[*feature] <= *threshold { *left } else { *right },
                leaf @ Node::Leaf { .. } => return leaf,
            }
        }
    }

    pub fn predict_row(&self, row: &[f64]) -> &[f64] {
        match self.leaf_for(row) {
            Node::Leaf { value, .. } => value,
            Node::Split { .. } => unreachable!("leaf_for returns leaves"),
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = (&[f64], usize)> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf { value, samples } => Some((value.as_slice(), *samples)),
            Node::Split { .. } => None,
        })
    }

    pub fn depth(&self) -> usize {
        let mut max = 0;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((i, d)) = stack.pop() {
            max = max.max(d);
            if let Node::Split { left, right, .. } = &self.nodes[i] {
                stack.push((*left, d + 1));
                stack.push((*right, d + 1));
            }
        }
        max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub params: ForestParams,
    pub seed: u64,
    pub n_features: usize,
    pub output_dim: usize,
    pub trees: Vec<Tree>,
}

/// Grows `params.n_trees` trees; tree `t` uses the RNG stream derived from
/// `(seed, "tree/t")`, so the result does not depend on thread scheduling.
pub fn fit_extratrees(x: &Matrix, y: &Matrix, params: &ForestParams, seed: u64) -> Result<ForestModel> {
    params.validate()?;
    if x.rows() == 0 {
        return Err(Error::Empty("training set"));
    }
    if x.rows() != y.rows() {
        return Err(Error::DimensionMismatch {
            expected: x.rows(),
            got: y.rows(),
        });
    }
    if x.cols() == 0 || y.cols() == 0 {
        return Err(Error::InvalidParameter(
            "features and targets need at least one column".into(),
        ));
    }
    if !x.all_finite() {
        return Err(Error::NonFinite("training features"));
    }
    if !y.all_finite() {
        return Err(Error::NonFinite("training targets"));
    }
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let rng = seed::rng(seed::derive_indexed(seed, "tree", t as u64));
            TreeBuilder::new(x, y, params, rng).build()
        })
        .collect();
    Ok(ForestModel {
        params: params.clone(),
        seed,
        n_features: x.cols(),
        output_dim: y.cols(),
        trees,
    })
}

impl ForestModel {
    /// Mean of the reached leaf values over all trees.
    pub fn predict_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: row.len(),
            });
        }
        let mut out = vec![0.0; self.output_dim];
        self.accumulate(row, &mut out);
        Ok(out)
    }

    fn accumulate(&self, row: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for tree in &self.trees {
            for (o, v) in out.iter_mut().zip(tree.predict_row(row)) {
                *o += v;
            }
        }
        let n = self.trees.len() as f64;
        out.iter_mut().for_each(|v| *v /= n);
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.cols(),
            });
        }
        let mut out = Matrix::zeros(x.rows(), self.output_dim);
        if self.output_dim == 0 || x.rows() == 0 {
            return Ok(out);
        }
        // Tree-major within a block of rows keeps each tree hot in cache; every
        // row still sums its trees in index order, matching `predict_row`.
        const BLOCK: usize = 256;
        let dim = self.output_dim;
        let n = self.trees.len() as f64;
        out.data.par_chunks_mut(BLOCK * dim).enumerate().for_each(|(b, block)| {
            let first = b * BLOCK;
            for tree in &self.trees {
                for (r, buf) in block.chunks_mut(dim).enumerate() {
                    for (o, v) in buf.iter_mut().zip(tree.predict_row(x.row(first + r))) {
                        *o += v;
                    }
                }
            }
            block.iter_mut().for_each(|v| *v /= n);
        });
        Ok(out)
    }
}

struct TreeBuilder<'a> {
    x: &'a Matrix,
    y: &'a Matrix,
    params: &'a ForestParams,
    rng: ChaCha8Rng,
    indices: Vec<usize>,
    features: Vec<usize>,
    n_candidates: usize,
    nodes: Vec<Node>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl<'a> TreeBuilder<'a> {
    fn new(x: &'a Matrix, y: &'a Matrix, params: &'a ForestParams, rng: ChaCha8Rng) -> Self {
        TreeBuilder {
            x,
            y,
            params,
            rng,
            indices: (0..x.rows()).collect(),
            features: (0..x.cols()).collect(),
            n_candidates: params.max_features.resolve(x.cols()),
            nodes: Vec::new(),
        }
    }

    fn build(mut self) -> Tree {
        let placeholder = || Node::Leaf {
            value: Vec::new(),
            samples: 0,
        };
        self.nodes.push(placeholder());
        // (slot, start, end, depth) over `indices`
        let mut stack = vec![(0usize, 0usize, self.x.rows(), 0usize)];
        while let Some((slot, start, end, depth)) = stack.pop() {
            match self.find_split(start, end, depth) {
                Some(c) => {
                    let mid = self.partition(start, end, c.feature, c.threshold);
                    let left = self.nodes.len();
                    self.nodes.push(placeholder());
                    let right = self.nodes.len();
                    self.nodes.push(placeholder());
                    self.nodes[slot] = Node::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        left,
                        right,
                        samples: end - start,
                        gain: c.gain,
                    };
                    stack.push((right, mid, end, depth + 1));
                    stack.push((left, start, mid, depth + 1));
                }
                None => self.nodes[slot] = self.leaf(start, end),
            }
        }
        Tree { nodes: self.nodes }
    }

    fn leaf(&self, start: usize, end: usize) -> Node {
        let dim = self.y.cols();
        let mut value = vec![0.0; dim];
        for &i in &self.indices[start..end] {
            for (v, t) in value.iter_mut().zip(self.y.row(i)) {
                *v += t;
            }
        }
        let n = (end - start) as f64;
        value.iter_mut().for_each(|v| *v /= n);
        Node::Leaf {
            value,
            samples: end - start,
        }
    }

    fn targets_constant(&self, start: usize, end: usize) -> bool {
        let first = self.y.row(self.indices[start]);
        self.indices[start + 1..end].iter().all(|&i| self.y.row(i) == first)
    }

    fn find_split(&mut self, start: usize, end: usize, depth: usize) -> Option<Candidate> {
        let n = end - start;
        let p = self.params;
        if n < p.min_samples_split
            || n < 2 * p.min_samples_leaf
            || p.max_depth.is_some_and(|d| depth >= d)
            || self.targets_constant(start, end)
        {
            return None;
        }
        let dim = self.y.cols();
        let mut total = vec![0.0; dim];
        for &i in &self.indices[start..end] {
            for (s, t) in total.iter_mut().zip(self.y.row(i)) {
                *s += t;
            }
        }

        self.features.shuffle(&mut self.rng);
        let mut best: Option<Candidate> = None;
        let mut visited = 0;
        let mut left_sum = vec![0.0; dim];
        for fi in 0..self.features.len() {
            if visited == self.n_candidates {
                break;
            }
            let feature = self.features[fi];
            let (lo, hi) = self.range(start, end, feature);
            if !(hi > lo) {
                continue;
            }
            visited += 1;
            let threshold = lo + self.rng.random::<f64>() * (hi - lo);
            if !(threshold > lo && threshold < hi) {
                continue;
            }
            left_sum.iter_mut().for_each(|v| *v = 0.0);
            let mut n_left = 0usize;
            for &i in &self.indices[start..end] {
                if self.x.get(i, feature) <= threshold {
                    n_left += 1;
                    for (s, t) in left_sum.iter_mut().zip(self.y.row(i)) {
                        *s += t;
                    }
                }
            }
            let n_right = n - n_left;
            if n_left < p.min_samples_leaf || n_right < p.min_samples_leaf {
                continue;
            }
            // SSE(parent) - SSE(left) - SSE(right) = n_l n_r / n * |mean_l - mean_r|^2
            let (nl, nr) = (n_left as f64, n_right as f64);
            let gain = nl * nr / n as f64
                * left_sum
                    .iter()
                    .zip(&total)
                    .map(|(l, t)| {
                        let diff = l / nl - (t - l) / nr;
                        diff * diff
                    })
                    .sum::<f64>();
            if best.as_ref().is_none_or(|b| gain > b.gain) {
                best = Some(Candidate {
                    feature,
                    threshold,
                    gain,
                });
            }
        }
        best
    }

    fn range(&self, start: usize, end: usize, feature: usize) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &i in &self.indices[start..end] {
            let v = self.x.get(i, feature);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// Moves rows going left to the front of the slice; returns the split point.
    fn partition(&mut self, start: usize, end: usize, feature: usize, threshold: f64) -> usize {
        let x = self.x;
        let slice = &mut self.indices[start..end];
        let mut mid = 0;
        for j in 0..slice.len() {
            if x.get(slice[j], feature) <= threshold {
                slice.swap(mid, j);
                mid += 1;
            }
        }
        start + mid
    }
}

//! Soft tree ensemble in tensor form.
//!
//! Hyperplanes are stored as a `(p, m, |I|)` tensor so that the slice for
//! feature `k` is one contiguous block of `m·|I|` weights. Nodes of each
//! perfect binary tree are numbered in level order: node `i` has children
//! `2i + 1` (left) and `2i + 2` (right), and leaf `l` is node `|I| + l`.
//! A split node sends a sample left with probability `S(w·x + b)`.

use ndarray::{Array2, Array3, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::activation::{step_derivative_unchecked, step_unchecked};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub num_trees: usize,
    pub depth: usize,
    pub num_features: usize,
    pub num_outputs: usize,
    pub activation_threshold: f64,
    pub use_bias: bool,
}

/// Depth cap keeping `2^depth` well inside `usize` and memory.
pub const MAX_DEPTH: usize = 20;

impl EnsembleConfig {
    pub fn new(num_trees: usize, depth: usize, num_features: usize, num_outputs: usize) -> Self {
        Self {
            num_trees,
            depth,
            num_features,
            num_outputs,
            activation_threshold: 1.0,
            use_bias: false,
        }
    }

    pub fn with_threshold(mut self, theta: f64) -> Self {
        self.activation_threshold = theta;
        self
    }

    pub fn with_bias(mut self, use_bias: bool) -> Self {
        self.use_bias = use_bias;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_trees", self.num_trees),
            ("depth", self.depth),
            ("num_features", self.num_features),
            ("num_outputs", self.num_outputs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.depth > MAX_DEPTH {
            return Err(Error::Config(format!("depth {} exceeds {MAX_DEPTH}", self.depth)));
        }
        let theta = self.activation_threshold;
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::Config(format!(
                "activation_threshold must be positive and finite, got {theta}"
            )));
        }
        Ok(())
    }

    /// `|I| = 2^d − 1`.
    pub fn internal_nodes(&self) -> usize {
        (1usize << self.depth) - 1
    }

    /// `|L| = 2^d`.
    pub fn leaves(&self) -> usize {
        1usize << self.depth
    }

    /// Number of weights in one feature group, `m·|I|`.
    pub fn group_len(&self) -> usize {
        self.num_trees * self.internal_nodes()
    }

    pub(crate) fn nodes_per_tree(&self) -> usize {
        2 * self.internal_nodes() + 1
    }
}

/// Split-node weights `(p, m, |I|)` plus optional per-node biases `(m, |I|)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperplaneTensor {
    pub weights: Array3<f64>,
    pub biases: Option<Array2<f64>>,
}

impl HyperplaneTensor {
    pub fn num_features(&self) -> usize {
        self.weights.dim().0
    }

    pub fn group(&self, k: usize) -> &[f64] {
        let len = self.group_len();
        &self.flat()[k * len..(k + 1) * len]
    }

    pub fn group_norm(&self, k: usize) -> f64 {
        l2_norm(self.group(k))
    }

    /// Exact test; the prox writes literal zeros.
    pub fn is_selected(&self, k: usize) -> bool {
        self.group(k).iter().any(|&w| w != 0.0)
    }

    fn group_len(&self) -> usize {
        let (_, m, i) = self.weights.dim();
        m * i
    }

    pub(crate) fn flat(&self) -> &[f64] {
        self.weights
            .as_slice()
            .expect("hyperplane tensor is kept in standard layout")
    }

    pub(crate) fn flat_mut(&mut self) -> &mut [f64] {
        self.weights
            .as_slice_mut()
            .expect("hyperplane tensor is kept in standard layout")
    }
}

/// Leaf weights `(m, c, |L|)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LeafTensor {
    pub values: Array3<f64>,
}

impl LeafTensor {
    pub(crate) fn flat(&self) -> &[f64] {
        self.values
            .as_slice()
            .expect("leaf tensor is kept in standard layout")
    }

    pub(crate) fn flat_mut(&mut self) -> &mut [f64] {
        self.values
            .as_slice_mut()
            .expect("leaf tensor is kept in standard layout")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportMask {
    pub selected: Vec<bool>,
}

impl SupportMask {
    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.selected
            .iter()
            .enumerate()
            .filter_map(|(k, &s)| s.then_some(k))
            .collect()
    }

    pub fn from_indices(p: usize, indices: &[usize]) -> Self {
        let mut selected = vec![false; p];
        for &k in indices {
            selected[k] = true;
        }
        Self { selected }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleModel {
    pub config: EnsembleConfig,
    pub hyperplanes: HyperplaneTensor,
    pub leaves: LeafTensor,
}

/// Per-sample forward quantities reused by the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct ForwardCache {
    /// Pre-activations `w·x + b`, indexed `j·|I| + i`.
    pub pre: Vec<f64>,
    /// `S(pre)`.
    pub act: Vec<f64>,
    /// Reach probability of every node, indexed `j·(2|I|+1) + node`.
    pub reach: Vec<f64>,
    pub output: Vec<f64>,
}

impl ForwardCache {
    pub fn new(config: &EnsembleConfig) -> Self {
        let g = config.group_len();
        Self {
            pre: vec![0.0; g],
            act: vec![0.0; g],
            reach: vec![0.0; config.num_trees * config.nodes_per_tree()],
            output: vec![0.0; config.num_outputs],
        }
    }
}

impl EnsembleModel {
    /// All-zero model.
    pub fn zeros(config: EnsembleConfig) -> Result<Self> {
        config.validate()?;
        let (p, m, ni, nl, c) = (
            config.num_features,
            config.num_trees,
            config.internal_nodes(),
            config.leaves(),
            config.num_outputs,
        );
        let biases = config.use_bias.then(|| Array2::zeros((m, ni)));
        Ok(Self {
            hyperplanes: HyperplaneTensor {
                weights: Array3::zeros((p, m, ni)),
                biases,
            },
            leaves: LeafTensor {
                values: Array3::zeros((m, c, nl)),
            },
            config,
        })
    }

    /// Hyperplane weights i.i.d. uniform on `[−0.1, 0.1] / √p`, leaves and
    /// biases zero.
    pub fn init<R: Rng + ?Sized>(config: EnsembleConfig, rng: &mut R) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let scale = 0.1 / (model.config.num_features as f64).sqrt();
        for w in model.hyperplanes.flat_mut() {
            *w = rng.random_range(-scale..=scale);
        }
        Ok(model)
    }

    /// Builds a model from raw tensors, checking every shape.
    pub fn from_parts(
        config: EnsembleConfig,
        weights: Array3<f64>,
        biases: Option<Array2<f64>>,
        leaves: Array3<f64>,
    ) -> Result<Self> {
        config.validate()?;
        let (p, m, ni, nl, c) = (
            config.num_features,
            config.num_trees,
            config.internal_nodes(),
            config.leaves(),
            config.num_outputs,
        );
        if weights.dim() != (p, m, ni) {
            return Err(Error::Config(format!(
                "hyperplane shape {:?} does not match ({p}, {m}, {ni})",
                weights.dim()
            )));
        }
        if leaves.dim() != (m, c, nl) {
            return Err(Error::Config(format!(
                "leaf shape {:?} does not match ({m}, {c}, {nl})",
                leaves.dim()
            )));
        }
        match (&biases, config.use_bias) {
            (Some(b), true) if b.dim() == (m, ni) => {}
            (None, false) => {}
            _ => return Err(Error::Config("bias tensor does not match use_bias".into())),
        }
        // Re-materialise in standard layout; slices of the flat buffers are
        // used throughout.
        let weights = weights.as_standard_layout().into_owned();
        let leaves = leaves.as_standard_layout().into_owned();
        let biases = biases.map(|b| b.as_standard_layout().into_owned());
        let model = Self {
            config,
            hyperplanes: HyperplaneTensor { weights, biases },
            leaves: LeafTensor { values: leaves },
        };
        if !model.is_finite() {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(model)
    }

    pub fn is_finite(&self) -> bool {
        self.hyperplanes.flat().iter().all(|v| v.is_finite())
            && self.leaves.flat().iter().all(|v| v.is_finite())
            && self
                .hyperplanes
                .biases
                .as_ref()
                .is_none_or(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn support_mask(&self) -> SupportMask {
        SupportMask {
            selected: (0..self.config.num_features)
                .map(|k| self.hyperplanes.is_selected(k))
                .collect(),
        }
    }

    pub fn selected_count(&self) -> usize {
        (0..self.config.num_features)
            .filter(|&k| self.hyperplanes.is_selected(k))
            .count()
    }

    /// Number of stored parameters when unselected feature groups are dropped.
    pub fn sparse_parameter_count(&self) -> usize {
        let c = &self.config;
        let bias = if c.use_bias { c.group_len() } else { 0 };
        self.selected_count() * c.group_len() + bias + c.num_trees * c.num_outputs * c.leaves()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.num_features {
            return Err(Error::Dimension {
                what: "feature vector length",
                expected: self.config.num_features,
                got: x.len(),
            });
        }
        if let Some(k) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature {k} of input")));
        }
        Ok(())
    }

    /// Runs the forward pass for one sample, reading only the hyperplane
    /// groups listed in `features`.
    pub(crate) fn forward_into<I>(&self, x: &[f64], features: I, cache: &mut ForwardCache)
    where
        I: IntoIterator<Item = usize>,
    {
        let cfg = &self.config;
        let g = cfg.group_len();
        let ni = cfg.internal_nodes();
        let nl = cfg.leaves();
        let nodes = cfg.nodes_per_tree();
        let c = cfg.num_outputs;
        let theta = cfg.activation_threshold;

        match &self.hyperplanes.biases {
            Some(b) => cache.pre.copy_from_slice(b.as_slice().expect("standard layout")),
            None => cache.pre.fill(0.0),
        }
        let w = self.hyperplanes.flat();
        for k in features {
            let xk = x[k];
            let group = &w[k * g..(k + 1) * g];
            for (a, &wk) in cache.pre.iter_mut().zip(group) {
                *a += xk * wk;
            }
        }
        for (s, &a) in cache.act.iter_mut().zip(&cache.pre) {
            *s = step_unchecked(a, theta);
        }

        cache.output.fill(0.0);
        let o = self.leaves.flat();
        for j in 0..cfg.num_trees {
            let reach = &mut cache.reach[j * nodes..(j + 1) * nodes];
            let act = &cache.act[j * ni..(j + 1) * ni];
            reach[0] = 1.0;
            for i in 0..ni {
                let r = reach[i];
                reach[2 * i + 1] = r * act[i];
                reach[2 * i + 2] = r * (1.0 - act[i]);
            }
            let leaf_reach = &reach[ni..];
            for (out, ci) in cache.output.iter_mut().zip(0..c) {
                let row = &o[(j * c + ci) * nl..(j * c + ci + 1) * nl];
                *out += row.iter().zip(leaf_reach).map(|(ol, p)| ol * p).sum::<f64>();
            }
        }
    }

    pub(crate) fn active_features(&self) -> Vec<usize> {
        (0..self.config.num_features)
            .filter(|&k| self.hyperplanes.is_selected(k))
            .collect()
    }

    pub(crate) fn activation_derivatives(&self, cache: &ForwardCache, out: &mut [f64]) {
        let theta = self.config.activation_threshold;
        for (d, &a) in out.iter_mut().zip(&cache.pre) {
            *d = step_derivative_unchecked(a, theta);
        }
    }

    /// Probability that `x` reaches `leaf` of tree `tree`.
    pub fn leaf_reach_probability(&self, x: &[f64], tree: usize, leaf: usize) -> Result<f64> {
        self.check_input(x)?;
        if tree >= self.config.num_trees {
            return Err(Error::Dimension {
                what: "tree index bound",
                expected: self.config.num_trees,
                got: tree,
            });
        }
        if leaf >= self.config.leaves() {
            return Err(Error::Dimension {
                what: "leaf index bound",
                expected: self.config.leaves(),
                got: leaf,
            });
        }
        let mut cache = ForwardCache::new(&self.config);
        self.forward_into(x, 0..self.config.num_features, &mut cache);
        let nodes = self.config.nodes_per_tree();
        Ok(cache.reach[tree * nodes + self.config.internal_nodes() + leaf])
    }

    /// Reach probabilities of all leaves, `(m, |L|)`.
    pub fn leaf_probabilities(&self, x: &[f64]) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut cache = ForwardCache::new(&self.config);
        self.forward_into(x, 0..self.config.num_features, &mut cache);
        let (m, ni, nl) = (
            self.config.num_trees,
            self.config.internal_nodes(),
            self.config.leaves(),
        );
        let nodes = self.config.nodes_per_tree();
        Ok(Array2::from_shape_fn((m, nl), |(j, l)| {
            cache.reach[j * nodes + ni + l]
        }))
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cache = ForwardCache::new(&self.config);
        self.forward_into(x, 0..self.config.num_features, &mut cache);
        Ok(cache.output)
    }

    /// Row-wise [`predict`](Self::predict). With a mask, hyperplane groups of
    /// unselected features are never read.
    pub fn predict_batch(
        &self,
        x: ArrayView2<'_, f64>,
        mask: Option<&SupportMask>,
    ) -> Result<Array2<f64>> {
        let p = self.config.num_features;
        if x.ncols() != p {
            return Err(Error::Dimension {
                what: "design matrix columns",
                expected: p,
                got: x.ncols(),
            });
        }
        let indices = match mask {
            Some(m) if m.len() != p => {
                return Err(Error::Dimension {
                    what: "support mask length",
                    expected: p,
                    got: m.len(),
                });
            }
            Some(m) => Some(m.indices()),
            None => None,
        };
        let mut out = Array2::zeros((x.nrows(), self.config.num_outputs));
        let mut cache = ForwardCache::new(&self.config);
        let mut row_buf = vec![0.0; p];
        for (n, row) in x.outer_iter().enumerate() {
            let row = match row.as_slice() {
                Some(r) => r,
                None => {
                    row_buf.iter_mut().zip(row.iter()).for_each(|(d, s)| *d = *s);
                    &row_buf[..]
                }
            };
            if let Some(k) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("row {n}, feature {k}")));
            }
            match &indices {
                Some(idx) => self.forward_into(row, idx.iter().copied(), &mut cache),
                None => self.forward_into(row, 0..p, &mut cache),
            }
            out.row_mut(n)
                .iter_mut()
                .zip(&cache.output)
                .for_each(|(d, s)| *d = *s);
        }
        Ok(out)
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

//! The reticulum: a binary tree of sigmoid gates whose leaves carry Beta
//! posterior pseudo-counts.
//!
//! Nodes use implicit heap numbering (root 0, children 2j+1 and 2j+2), so the
//! left child of any node has an odd id and the level of a node is
//! ⌊log₂(j+1)⌋. Gates route mass `g(x)` to the left child and `1 − g(x)` to
//! the right child.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{log_beta_unchecked, sigmoid, PositiveReal};
use crate::parallel;

/// Deepest leaf level the heap numbering supports.
pub const MAX_SUPPORTED_DEPTH: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    pub fn left(self) -> NodeId {
        NodeId(2 * self.0 + 1)
    }

    pub fn right(self) -> NodeId {
        NodeId(2 * self.0 + 2)
    }

    pub fn parent(self) -> Option<NodeId> {
        (self.0 > 0).then(|| NodeId((self.0 - 1) / 2))
    }

    pub fn sibling(self) -> Option<NodeId> {
        self.parent()
            .map(|p| if self.is_left() { p.right() } else { p.left() })
    }

    /// Left children carry odd ids.
    pub fn is_left(self) -> bool {
        self.0 % 2 == 1
    }

    pub fn level(self) -> usize {
        (usize::BITS - 1 - (self.0 + 1).leading_zeros()) as usize
    }

    /// True when `self` lies in the subtree rooted at `ancestor` (inclusive).
    pub fn descends_from(self, ancestor: NodeId) -> bool {
        let mut cur = self;
        loop {
            if cur == ancestor {
                return true;
            }
            if cur.0 < ancestor.0 {
                return false;
            }
            match cur.parent() {
                Some(p) => cur = p,
                None => return false,
            }
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Affine hyperplane `intercept + normal · x` defining one gate.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeWeights {
    pub intercept: f64,
    pub normal: Vec<f64>,
}

impl NodeWeights {
    pub fn new(intercept: f64, normal: Vec<f64>) -> Result<Self> {
        if normal.is_empty() {
            return Err(Error::Structure("hyperplane needs at least one dimension".into()));
        }
        if !intercept.is_finite() || normal.iter().any(|w| !w.is_finite()) {
            return Err(Error::Domain("hyperplane weights must be finite".into()));
        }
        Ok(Self { intercept, normal })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            intercept: 0.0,
            normal: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.normal.len()
    }

    /// Weights as one vector `(w₀, w₁, …, w_d)`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim() + 1);
        v.push(self.intercept);
        v.extend_from_slice(&self.normal);
        v
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        match values.split_first() {
            Some((&w0, rest)) => Self::new(w0, rest.to_vec()),
            None => Err(Error::Structure("empty weight vector".into())),
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            intercept: self.intercept * factor,
            normal: self.normal.iter().map(|w| w * factor).collect(),
        }
    }

    #[inline]
    pub(crate) fn signed_distance_unchecked(&self, x: &[f64]) -> f64 {
        self.intercept + self.normal.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    /// `w₀ + Σ w_k x_k`.
    pub fn signed_distance(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.signed_distance_unchecked(x))
    }

    /// Probability mass routed to the left child.
    pub fn gate(&self, x: &[f64]) -> Result<f64> {
        self.signed_distance(x).map(sigmoid)
    }
}

/// Beta prior shared by every leaf.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaPrior {
    pub alpha: PositiveReal,
    pub beta: PositiveReal,
}

impl BetaPrior {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        Ok(Self {
            alpha: PositiveReal::new(alpha)?,
            beta: PositiveReal::new(beta)?,
        })
    }

    pub fn uniform() -> Self {
        Self::new(1.0, 1.0).expect("unit prior is valid")
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.get()
    }

    pub fn beta(&self) -> f64 {
        self.beta.get()
    }

    pub(crate) fn log_beta(&self) -> f64 {
        log_beta_unchecked(self.alpha(), self.beta())
    }
}

/// Posterior pseudo-counts of a leaf and its unexplained potential.
///
/// `alpha` accumulates class-0 mass and `beta` class-1 mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafStats {
    pub alpha: f64,
    pub beta: f64,
    pub potential: f64,
}

impl LeafStats {
    pub fn from_counts(prior: &BetaPrior, alpha: f64, beta: f64) -> Self {
        Self {
            alpha,
            beta,
            potential: log_beta_unchecked(alpha, beta) - prior.log_beta(),
        }
    }

    pub fn empty(prior: &BetaPrior) -> Self {
        Self::from_counts(prior, prior.alpha(), prior.beta())
    }

    pub fn proba_one(&self) -> f64 {
        self.beta / (self.alpha + self.beta)
    }
}

/// Row-major `m × |leaves|` matrix of leaf membership probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipMatrix {
    pub leaves: Vec<NodeId>,
    pub values: Vec<f64>,
}

impl MembershipMatrix {
    pub fn rows(&self) -> usize {
        if self.leaves.is_empty() {
            0
        } else {
            self.values.len() / self.leaves.len()
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.leaves.len();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn column(&self, leaf: NodeId) -> Option<Vec<f64>> {
        let col = self.leaves.iter().position(|&l| l == leaf)?;
        Some(
            self.values
                .chunks_exact(self.leaves.len())
                .map(|row| row[col])
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Slot {
    Internal(usize),
    Leaf(usize),
}

#[derive(Debug, Clone)]
pub(crate) struct InternalSlot {
    pub id: NodeId,
    pub left: Slot,
    pub right: Slot,
}

/// Dense, index-based view of a tree used by the forward and backward passes.
/// Internal nodes are sorted by id, so every parent precedes its children.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub dim: usize,
    pub internal: Vec<InternalSlot>,
    pub leaves: Vec<NodeId>,
    /// `(dim + 1)` weights per internal node, intercept first.
    pub weights: Vec<f64>,
}

impl Layout {
    fn slot_of(tree: &Reticulum, id: NodeId, internal: &[NodeId], leaves: &[NodeId]) -> Slot {
        if tree.nodes.contains_key(&id) {
            Slot::Internal(internal.binary_search(&id).expect("internal id indexed"))
        } else {
            Slot::Leaf(leaves.binary_search(&id).expect("leaf id indexed"))
        }
    }

    pub fn new(tree: &Reticulum) -> Self {
        let internal_ids: Vec<NodeId> = tree.nodes.keys().copied().collect();
        let leaves: Vec<NodeId> = tree.leaves.keys().copied().collect();
        let internal = internal_ids
            .iter()
            .map(|&id| InternalSlot {
                id,
                left: Self::slot_of(tree, id.left(), &internal_ids, &leaves),
                right: Self::slot_of(tree, id.right(), &internal_ids, &leaves),
            })
            .collect();
        let weights = tree
            .nodes
            .values()
            .flat_map(|w| std::iter::once(w.intercept).chain(w.normal.iter().copied()))
            .collect();
        Self {
            dim: tree.dim,
            internal,
            leaves,
            weights,
        }
    }

    pub fn stride(&self) -> usize {
        self.dim + 1
    }

    /// Evaluates gates, the mass entering each internal node, and leaf
    /// memberships for one point.
    #[inline]
    pub fn forward(&self, x: &[f64], gates: &mut [f64], incoming: &mut [f64], leaf_mass: &mut [f64]) {
        if self.internal.is_empty() {
            leaf_mass[0] = 1.0;
            return;
        }
        let stride = self.stride();
        incoming[0] = 1.0;
        for (k, node) in self.internal.iter().enumerate() {
            let w = &self.weights[k * stride..(k + 1) * stride];
            let t = w[0] + w[1..].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            let s = sigmoid(t);
            gates[k] = s;
            let p = incoming[k];
            for (slot, mass) in [(node.left, p * s), (node.right, p * (1.0 - s))] {
                match slot {
                    Slot::Internal(c) => incoming[c] = mass,
                    Slot::Leaf(l) => leaf_mass[l] = mass,
                }
            }
        }
    }
}

/// Binary tree of sigmoid gates (`nodes`) and Beta-posterior leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct Reticulum {
    dim: usize,
    prior: BetaPrior,
    nodes: BTreeMap<NodeId, NodeWeights>,
    leaves: BTreeMap<NodeId, LeafStats>,
    stale: bool,
}

impl Reticulum {
    /// A root-only tree whose single leaf holds the prior.
    pub fn new(dim: usize, prior: BetaPrior) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Structure("dimension must be at least 1".into()));
        }
        let mut leaves = BTreeMap::new();
        leaves.insert(NodeId::ROOT, LeafStats::empty(&prior));
        Ok(Self {
            dim,
            prior,
            nodes: BTreeMap::new(),
            leaves,
            stale: false,
        })
    }

    /// Assembles a tree from explicit parts. Leaf statistics are taken as
    /// given (and treated as fresh).
    pub fn from_parts(
        dim: usize,
        prior: BetaPrior,
        nodes: BTreeMap<NodeId, NodeWeights>,
        leaves: BTreeMap<NodeId, LeafStats>,
    ) -> Result<Self> {
        let tree = Self {
            dim,
            prior,
            nodes,
            leaves,
            stale: false,
        };
        tree.validate()?;
        Ok(tree)
    }

    /// A tree with the given internal nodes; leaves are inferred and hold
    /// the prior until refreshed.
    pub fn with_nodes(dim: usize, prior: BetaPrior, nodes: BTreeMap<NodeId, NodeWeights>) -> Result<Self> {
        let mut leaves = BTreeMap::new();
        if nodes.is_empty() {
            leaves.insert(NodeId::ROOT, LeafStats::empty(&prior));
        }
        for id in nodes.keys() {
            for child in [id.left(), id.right()] {
                if !nodes.contains_key(&child) {
                    leaves.insert(child, LeafStats::empty(&prior));
                }
            }
        }
        let mut tree = Self::from_parts(dim, prior, nodes, leaves)?;
        tree.stale = true;
        Ok(tree)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Structure("dimension must be at least 1".into()));
        }
        if self.leaves.is_empty() {
            return Err(Error::Structure("tree has no leaves".into()));
        }
        let has_root = self.nodes.contains_key(&NodeId::ROOT) || self.leaves.contains_key(&NodeId::ROOT);
        if !has_root {
            return Err(Error::Structure("root is missing".into()));
        }
        for (id, w) in &self.nodes {
            if self.leaves.contains_key(id) {
                return Err(Error::Structure(format!("node {id} is both internal and a leaf")));
            }
            if w.dim() != self.dim {
                return Err(Error::Dimension {
                    expected: self.dim,
                    got: w.dim(),
                });
            }
            for child in [id.left(), id.right()] {
                if !self.nodes.contains_key(&child) && !self.leaves.contains_key(&child) {
                    return Err(Error::Structure(format!("node {id} is missing child {child}")));
                }
            }
        }
        for id in self.nodes.keys().chain(self.leaves.keys()) {
            if id.level() > MAX_SUPPORTED_DEPTH {
                return Err(Error::Structure(format!("node {id} exceeds the supported depth")));
            }
            if let Some(p) = id.parent() {
                if !self.nodes.contains_key(&p) {
                    return Err(Error::Structure(format!("parent of {id} is not an internal node")));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn prior(&self) -> &BetaPrior {
        &self.prior
    }

    pub fn nodes(&self) -> &BTreeMap<NodeId, NodeWeights> {
        &self.nodes
    }

    pub fn leaves(&self) -> &BTreeMap<NodeId, LeafStats> {
        &self.leaves
    }

    pub fn internal_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn depth(&self) -> usize {
        self.leaves.keys().map(|l| l.level()).max().unwrap_or(0)
    }

    pub fn is_stale(&self) -> bool {
        self.stale
    }

    pub fn weights(&self, id: NodeId) -> Option<&NodeWeights> {
        self.nodes.get(&id)
    }

    pub fn set_weights(&mut self, id: NodeId, weights: NodeWeights) -> Result<()> {
        if weights.dim() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: weights.dim(),
            });
        }
        let slot = self
            .nodes
            .get_mut(&id)
            .ok_or_else(|| Error::Structure(format!("{id} is not an internal node")))?;
        *slot = weights;
        self.stale = true;
        Ok(())
    }

    /// Turns `leaf` into an internal node with two fresh leaf children.
    pub fn split(&mut self, leaf: NodeId, weights: NodeWeights) -> Result<()> {
        if !self.leaves.contains_key(&leaf) {
            return Err(Error::Structure(format!("{leaf} is not a leaf")));
        }
        if weights.dim() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: weights.dim(),
            });
        }
        if leaf.level() + 1 > MAX_SUPPORTED_DEPTH {
            return Err(Error::Structure(format!("splitting {leaf} exceeds the supported depth")));
        }
        self.leaves.remove(&leaf);
        self.nodes.insert(leaf, weights);
        self.leaves.insert(leaf.left(), LeafStats::empty(&self.prior));
        self.leaves.insert(leaf.right(), LeafStats::empty(&self.prior));
        self.stale = true;
        Ok(())
    }

    /// Replaces the subtree rooted at internal node `id` by a single leaf
    /// with the given statistics.
    pub fn collapse(&mut self, id: NodeId, stats: LeafStats) -> Result<()> {
        if !self.nodes.contains_key(&id) {
            return Err(Error::Structure(format!("{id} is not an internal node")));
        }
        self.nodes.retain(|n, _| !n.descends_from(id));
        self.leaves.retain(|l, _| !l.descends_from(id));
        self.leaves.insert(id, stats);
        Ok(())
    }

    /// Leaves inside the subtree rooted at `id`.
    pub fn subtree_leaves(&self, id: NodeId) -> Vec<NodeId> {
        self.leaves.keys().copied().filter(|l| l.descends_from(id)).collect()
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout::new(self)
    }

    fn check_points(&self, points: &[f64]) -> Result<usize> {
        if points.len() % self.dim != 0 {
            return Err(Error::Dimension {
                expected: self.dim,
                got: points.len() % self.dim,
            });
        }
        Ok(points.len() / self.dim)
    }

    /// Membership probabilities `p(xᵢ ∈ ℓ)` for row-major points, leaves in
    /// ascending id order.
    pub fn memberships(&self, points: &[f64]) -> Result<MembershipMatrix> {
        let m = self.check_points(points)?;
        let layout = self.layout();
        let n_int = layout.internal.len();
        let n_leaf = layout.leaves.len();
        let mut values = vec![0.0; m * n_leaf];
        let mut gates = vec![0.0; n_int];
        let mut incoming = vec![0.0; n_int];
        for (x, row) in points.chunks_exact(self.dim).zip(values.chunks_exact_mut(n_leaf)) {
            layout.forward(x, &mut gates, &mut incoming, row);
        }
        Ok(MembershipMatrix {
            leaves: layout.leaves,
            values,
        })
    }

    /// Expected posterior pseudo-counts per leaf, in ascending leaf order.
    pub(crate) fn expected_counts(&self, data: &Dataset) -> Result<Vec<(f64, f64)>> {
        if data.dim() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: data.dim(),
            });
        }
        let layout = self.layout();
        let n_int = layout.internal.len();
        let n_leaf = layout.leaves.len();
        // [class-0 mass per leaf, class-1 mass per leaf]
        let sums = parallel::chunked_sum(data.len(), 2 * n_leaf, |range, acc| {
            let mut gates = vec![0.0; n_int];
            let mut incoming = vec![0.0; n_int];
            let mut mass = vec![0.0; n_leaf];
            for i in range {
                layout.forward(data.point(i), &mut gates, &mut incoming, &mut mass);
                let offset = if data.label(i) == 1 { n_leaf } else { 0 };
                for (a, p) in acc[offset..offset + n_leaf].iter_mut().zip(&mass) {
                    *a += p;
                }
            }
        });
        let (a, b) = (self.prior.alpha(), self.prior.beta());
        Ok((0..n_leaf).map(|l| (a + sums[l], b + sums[n_leaf + l])).collect())
    }

    /// Recomputes every leaf's posterior pseudo-counts and potential.
    pub fn refresh_leaf_stats(&mut self, data: &Dataset) -> Result<()> {
        let counts = self.expected_counts(data)?;
        self.install_counts(&counts);
        Ok(())
    }

    /// Sets every leaf's pseudo-counts, in ascending leaf order.
    pub(crate) fn install_counts(&mut self, counts: &[(f64, f64)]) {
        let prior = self.prior;
        for (stats, &(alpha, beta)) in self.leaves.values_mut().zip(counts) {
            *stats = LeafStats::from_counts(&prior, alpha, beta);
        }
        self.stale = false;
    }

    /// Sum of leaf potentials; the training objective for fresh statistics.
    pub fn potential_sum(&self) -> f64 {
        self.leaves.values().map(|s| s.potential).sum()
    }

    /// `p(y = 1 | x) = Σ_ℓ p(x ∈ ℓ) β'_ℓ / (α'_ℓ + β'_ℓ)`.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        if self.stale {
            return Err(Error::StaleStats);
        }
        if x.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        let layout = self.layout();
        let n_int = layout.internal.len();
        let mut gates = vec![0.0; n_int];
        let mut incoming = vec![0.0; n_int];
        let mut mass = vec![0.0; layout.leaves.len()];
        layout.forward(x, &mut gates, &mut incoming, &mut mass);
        Ok(self
            .leaves
            .values()
            .zip(&mass)
            .map(|(s, p)| p * s.proba_one())
            .sum())
    }

    /// Predictions for row-major points.
    pub fn predict_many(&self, points: &[f64]) -> Result<Vec<f64>> {
        self.check_points(points)?;
        points.chunks_exact(self.dim).map(|x| self.predict_proba(x)).collect()
    }
}

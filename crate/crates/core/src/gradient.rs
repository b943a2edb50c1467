//! Analytic gradient of the bound with respect to every gate weight.
//!
//! For a point xᵢ write Pⱼ for the mass reaching internal node j (the product
//! of gate factors on the path from the root, excluding j's own gate) and
//! sⱼ for j's gate. The bound depends on memberships only through the leaf
//! factor
//!
//! ```text
//! Dℓ(i) = (1 − yᵢ)[ψ(α'ℓ) − ψ(α'ℓ + β'ℓ)] + yᵢ[ψ(β'ℓ) − ψ(α'ℓ + β'ℓ)]
//! ```
//!
//! and the backward pass folds these upward as
//! `Vⱼ = sⱼ V_left + (1 − sⱼ) V_right`. The derivative of the bound with
//! respect to sⱼ is then `Pⱼ (V_left − V_right)`, and the chain rule through
//! the sigmoid contributes `sⱼ(1 − sⱼ) x_k` (with x₀ = 1 for the intercept).
//! Nothing is ever divided by a gate value, so saturated gates are safe.

use std::collections::BTreeMap;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::likelihood::bound;
use crate::numerics::{digamma_unchecked, log_beta_unchecked};
use crate::parallel;
use crate::reticulum::{Layout, NodeId, NodeWeights, Reticulum, Slot};

/// `∂c/∂(w₀, w₁, …, w_d)` per internal node.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTable {
    pub entries: BTreeMap<NodeId, Vec<f64>>,
}

impl GradientTable {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.entries.get(&id).map(Vec::as_slice)
    }

    /// Largest absolute component over every node.
    pub fn max_abs(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|g| g.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Bound, leaf pseudo-counts and flat gradient for one set of weights.
pub(crate) struct Evaluation {
    pub bound: f64,
    /// `(α', β')` per leaf in layout order.
    pub counts: Vec<(f64, f64)>,
    /// `(dim + 1)` entries per internal node in layout order.
    pub gradient: Vec<f64>,
}

/// One forward pass filling gates, incoming mass and leaf pseudo-counts,
/// then the digamma leaf factors, then one backward pass.
pub(crate) fn evaluate(layout: &Layout, data: &Dataset, prior_alpha: f64, prior_beta: f64) -> Evaluation {
    let n_int = layout.internal.len();
    let n_leaf = layout.leaves.len();
    let stride = layout.stride();
    let m = data.len();

    // cache per point: [gates (n_int), incoming (n_int)]
    let cache_stride = 2 * n_int;
    let mut cache = vec![0.0; m * cache_stride];
    let sums = parallel::chunked_fill_sum(m, cache_stride, &mut cache, 2 * n_leaf, |range, slab, acc| {
        let mut mass = vec![0.0; n_leaf];
        for (i, point_cache) in range.zip(slab.chunks_exact_mut(cache_stride.max(1))) {
            let (gates, incoming) = point_cache.split_at_mut(n_int);
            layout.forward(data.point(i), gates, incoming, &mut mass);
            let offset = if data.label(i) == 1 { n_leaf } else { 0 };
            for (a, p) in acc[offset..offset + n_leaf].iter_mut().zip(&mass) {
                *a += p;
            }
        }
    });
    // root-only trees fill no cache; count their single leaf directly
    let sums = if n_int == 0 {
        let (zeros, ones) = data.label_counts();
        vec![zeros as f64, ones as f64]
    } else {
        sums
    };

    let counts: Vec<(f64, f64)> = (0..n_leaf)
        .map(|l| (prior_alpha + sums[l], prior_beta + sums[n_leaf + l]))
        .collect();
    let base = log_beta_unchecked(prior_alpha, prior_beta);
    let bound = counts.iter().map(|&(a, b)| log_beta_unchecked(a, b) - base).sum();
    if n_int == 0 {
        return Evaluation {
            bound,
            counts,
            gradient: Vec::new(),
        };
    }

    // leaf factors for y = 0 and y = 1
    let factors: Vec<[f64; 2]> = counts
        .iter()
        .map(|&(a, b)| {
            let total = digamma_unchecked(a + b);
            [digamma_unchecked(a) - total, digamma_unchecked(b) - total]
        })
        .collect();

    let gradient = parallel::chunked_sum(m, n_int * stride, |range, acc| {
        let mut values = vec![0.0; n_int];
        for i in range {
            let point_cache = &cache[i * cache_stride..(i + 1) * cache_stride];
            let (gates, incoming) = point_cache.split_at(n_int);
            let y = usize::from(data.label(i));
            let x = data.point(i);
            for k in (0..n_int).rev() {
                let node = &layout.internal[k];
                let value = |slot: Slot| match slot {
                    Slot::Internal(c) => values[c],
                    Slot::Leaf(l) => factors[l][y],
                };
                let (vl, vr) = (value(node.left), value(node.right));
                let s = gates[k];
                values[k] = s * vl + (1.0 - s) * vr;
                let coef = incoming[k] * (vl - vr) * s * (1.0 - s);
                let g = &mut acc[k * stride..(k + 1) * stride];
                g[0] += coef;
                for (gk, xk) in g[1..].iter_mut().zip(x) {
                    *gk += coef * xk;
                }
            }
        }
    });

    Evaluation {
        bound,
        counts,
        gradient,
    }
}

fn check_dim(tree: &Reticulum, data: &Dataset) -> Result<()> {
    if tree.dim() != data.dim() {
        return Err(Error::Dimension {
            expected: tree.dim(),
            got: data.dim(),
        });
    }
    Ok(())
}

fn table(layout: &Layout, flat: &[f64]) -> GradientTable {
    let stride = layout.stride();
    GradientTable {
        entries: layout
            .internal
            .iter()
            .enumerate()
            .map(|(k, node)| (node.id, flat[k * stride..(k + 1) * stride].to_vec()))
            .collect(),
    }
}

/// Gradient of the bound by backpropagation.
pub fn backprop(tree: &Reticulum, data: &Dataset) -> Result<GradientTable> {
    check_dim(tree, data)?;
    let layout = tree.layout();
    let prior = tree.prior();
    let eval = evaluate(&layout, data, prior.alpha(), prior.beta());
    Ok(table(&layout, &eval.gradient))
}

/// Central finite differences of the bound, one weight at a time.
pub fn finite_diff_gradient(tree: &Reticulum, data: &Dataset, step: f64) -> Result<GradientTable> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Domain(format!("finite-difference step must be positive, got {step}")));
    }
    check_dim(tree, data)?;
    let mut entries = BTreeMap::new();
    let mut probe = tree.clone();
    for (&id, weights) in tree.nodes() {
        let base = weights.to_vec();
        let mut grad = vec![0.0; base.len()];
        for (k, g) in grad.iter_mut().enumerate() {
            let mut shifted = base.clone();
            shifted[k] = base[k] + step;
            probe.set_weights(id, NodeWeights::from_slice(&shifted)?)?;
            let up = bound(&probe, data)?;
            shifted[k] = base[k] - step;
            probe.set_weights(id, NodeWeights::from_slice(&shifted)?)?;
            let down = bound(&probe, data)?;
            *g = (up - down) / (2.0 * step);
        }
        probe.set_weights(id, weights.clone())?;
        entries.insert(id, grad);
    }
    Ok(GradientTable { entries })
}

/// Product of the gate factors on the path from the root to `leaf`, skipping
/// the factor contributed by `node`'s gate. This is `p(x ∈ ℓ)` divided by
/// that factor, computed without dividing.
pub fn omitted_factor(tree: &Reticulum, x: &[f64], leaf: NodeId, node: NodeId) -> Result<f64> {
    if !tree.leaves().contains_key(&leaf) {
        return Err(Error::Structure(format!("{leaf} is not a leaf")));
    }
    let mut product = 1.0;
    let mut child = leaf;
    while let Some(parent) = child.parent() {
        if parent != node {
            let w = tree
                .weights(parent)
                .ok_or_else(|| Error::Structure(format!("{parent} is not internal")))?;
            let g = w.gate(x)?;
            product *= if child.is_left() { g } else { 1.0 - g };
        }
        child = parent;
    }
    Ok(product)
}

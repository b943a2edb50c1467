//! The training objective and its exhaustive reference.
//!
//! [`bound`] is the sum of leaf potentials computed from expected posterior
//! pseudo-counts. Because ln B is convex, it lower-bounds the expectation of
//! the hard-assignment log marginal likelihood over every way of assigning
//! points to leaves, which [`exact_expected_loglike`] enumerates directly on
//! small instances.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{log_beta, log_beta_unchecked};
use crate::reticulum::{NodeId, Reticulum};

/// Largest number of configurations the exhaustive routines will visit.
pub const ENUMERATION_LIMIT: u64 = 1_000_000;

/// `ln B(α', β') − ln B(α, β)`.
pub fn unexplained_potential(alpha_post: f64, beta_post: f64, prior_alpha: f64, prior_beta: f64) -> Result<f64> {
    Ok(log_beta(alpha_post, beta_post)? - log_beta(prior_alpha, prior_beta)?)
}

/// Sum of leaf potentials for the tree's current weights.
pub fn bound(tree: &Reticulum, data: &Dataset) -> Result<f64> {
    let prior = tree.prior();
    let base = log_beta_unchecked(prior.alpha(), prior.beta());
    Ok(tree
        .expected_counts(data)?
        .into_iter()
        .map(|(a, b)| log_beta_unchecked(a, b) - base)
        .sum())
}

/// One hard assignment of points to leaves and its probability.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactConfiguration {
    /// Leaf of every point, by index.
    pub assignment: Vec<NodeId>,
    pub probability: f64,
}

fn configuration_count(leaves: usize, points: usize) -> Result<u64> {
    let mut total: u64 = 1;
    for _ in 0..points {
        total = total.saturating_mul(leaves as u64);
        if total > ENUMERATION_LIMIT {
            return Err(Error::TooLarge {
                leaves,
                points,
                limit: ENUMERATION_LIMIT,
            });
        }
    }
    Ok(total)
}

/// Visits every configuration as `(leaf index per point, probability)`.
fn for_each_configuration<F>(tree: &Reticulum, data: &Dataset, mut visit: F) -> Result<()>
where
    F: FnMut(&[usize], f64),
{
    if data.dim() != tree.dim() {
        return Err(Error::Dimension {
            expected: tree.dim(),
            got: data.dim(),
        });
    }
    let memberships = tree.memberships(data.features())?;
    let n_leaf = memberships.leaves.len();
    let m = data.len();
    configuration_count(n_leaf, m)?;
    let mut digits = vec![0usize; m];
    loop {
        let probability: f64 = digits
            .iter()
            .enumerate()
            .map(|(i, &l)| memberships.row(i)[l])
            .product();
        visit(&digits, probability);
        // mixed-radix increment
        let mut pos = 0;
        loop {
            if pos == m {
                return Ok(());
            }
            digits[pos] += 1;
            if digits[pos] < n_leaf {
                break;
            }
            digits[pos] = 0;
            pos += 1;
        }
    }
}

/// Every configuration with its probability (at most [`ENUMERATION_LIMIT`]).
pub fn enumerate_configurations(tree: &Reticulum, data: &Dataset) -> Result<Vec<ExactConfiguration>> {
    let leaves: Vec<NodeId> = tree.leaves().keys().copied().collect();
    let mut out = Vec::new();
    for_each_configuration(tree, data, |digits, probability| {
        out.push(ExactConfiguration {
            assignment: digits.iter().map(|&l| leaves[l]).collect(),
            probability,
        });
    })?;
    Ok(out)
}

fn hard_counts(tree: &Reticulum, data: &Dataset, digits: &[usize], n_leaf: usize) -> Vec<(f64, f64)> {
    let prior = tree.prior();
    let mut counts = vec![(prior.alpha(), prior.beta()); n_leaf];
    for (i, &l) in digits.iter().enumerate() {
        if data.label(i) == 1 {
            counts[l].1 += 1.0;
        } else {
            counts[l].0 += 1.0;
        }
    }
    counts
}

/// Expected hard-assignment log marginal likelihood, by full enumeration.
/// Verification oracle for [`bound`]; refuses instances above the limit.
pub fn exact_expected_loglike(tree: &Reticulum, data: &Dataset) -> Result<f64> {
    let n_leaf = tree.leaf_count();
    let prior = tree.prior();
    let base = log_beta_unchecked(prior.alpha(), prior.beta());
    let mut total = 0.0;
    for_each_configuration(tree, data, |digits, probability| {
        if probability == 0.0 {
            return;
        }
        let ll: f64 = hard_counts(tree, data, digits, n_leaf)
            .into_iter()
            .map(|(a, b)| log_beta_unchecked(a, b) - base)
            .sum();
        total += ll * probability;
    })?;
    Ok(total)
}

/// Exact expected leaf class probabilities `(p(y=0|ℓ), p(y=1|ℓ))`.
pub fn exact_leaf_proba(tree: &Reticulum, data: &Dataset, leaf: NodeId) -> Result<(f64, f64)> {
    let col = tree
        .leaves()
        .keys()
        .position(|&l| l == leaf)
        .ok_or_else(|| Error::Structure(format!("{leaf} is not a leaf")))?;
    let n_leaf = tree.leaf_count();
    let (mut p0, mut p1) = (0.0, 0.0);
    for_each_configuration(tree, data, |digits, probability| {
        let (a, b) = hard_counts(tree, data, digits, n_leaf)[col];
        p0 += probability * a / (a + b);
        p1 += probability * b / (a + b);
    })?;
    Ok((p0, p1))
}

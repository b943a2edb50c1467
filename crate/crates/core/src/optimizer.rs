//! Full-batch Adam ascent on the bound.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gradient::evaluate;
use crate::polar::{pullback_gradient, to_cartesian, to_polar, PolarWeights};
use crate::reticulum::{Layout, NodeId, NodeWeights, Reticulum};

/// Smallest stiffness the polar mode lets a node reach.
pub const MIN_POLAR_STIFFNESS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(step_size: f64) -> Result<Self> {
        Self::with_betas(step_size, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(step_size: f64, beta1: f64, beta2: f64, epsilon: f64) -> Result<Self> {
        if !(step_size > 0.0 && step_size.is_finite()) {
            return Err(Error::Config(format!("step size must be positive, got {step_size}")));
        }
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(epsilon > 0.0) {
            return Err(Error::Config("Adam needs 0 <= beta < 1 and epsilon > 0".into()));
        }
        Ok(Self {
            step_size,
            beta1,
            beta2,
            epsilon,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            step_count: 0,
        })
    }

    /// Clears the moments; called whenever the parameter set changes shape.
    pub fn reset(&mut self, n: usize) {
        self.first_moment = vec![0.0; n];
        self.second_moment = vec![0.0; n];
        self.step_count = 0;
    }

    /// One ascent step: `params += step · m̂ / (√v̂ + ε)`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        if self.first_moment.len() != params.len() {
            self.reset(params.len());
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p += self.step_size * (*m / bias1) / ((*v / bias2).sqrt() + self.epsilon);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizeScope {
    Node(NodeId),
    All,
}

impl OptimizeScope {
    /// Layout indices of the internal nodes being optimized.
    fn indices(self, tree: &Reticulum, layout: &Layout) -> Result<Vec<usize>> {
        match self {
            OptimizeScope::All => Ok((0..layout.internal.len()).collect()),
            OptimizeScope::Node(id) => layout
                .internal
                .iter()
                .position(|n| n.id == id)
                .map(|k| vec![k])
                .ok_or_else(|| {
                    let kind = if tree.leaves().contains_key(&id) { "a leaf" } else { "not in the tree" };
                    Error::Structure(format!("cannot optimize {id}: it is {kind}"))
                }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coordinates {
    #[default]
    Cartesian,
    Polar,
}

fn check(tree: &Reticulum, data: &Dataset) -> Result<()> {
    if tree.dim() != data.dim() {
        return Err(Error::Dimension {
            expected: tree.dim(),
            got: data.dim(),
        });
    }
    Ok(())
}

/// Writes layout weights back into the tree and refreshes leaf statistics
/// from one last evaluation; returns its bound.
fn finish(tree: &mut Reticulum, data: &Dataset, layout: &Layout, indices: &[usize]) -> Result<f64> {
    let stride = layout.stride();
    for &k in indices {
        let w = NodeWeights::from_slice(&layout.weights[k * stride..(k + 1) * stride])?;
        tree.set_weights(layout.internal[k].id, w)?;
    }
    let prior = *tree.prior();
    let eval = evaluate(layout, data, prior.alpha(), prior.beta());
    tree.install_counts(&eval.counts);
    Ok(eval.bound)
}

fn gradient_for(layout: &Layout, data: &Dataset, alpha: f64, beta: f64, indices: &[usize], step: usize) -> Result<Vec<f64>> {
    let stride = layout.stride();
    let eval = evaluate(layout, data, alpha, beta);
    let mut grad = Vec::with_capacity(indices.len() * stride);
    for &k in indices {
        let g = &eval.gradient[k * stride..(k + 1) * stride];
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                node: layout.internal[k].id,
                step,
            });
        }
        grad.extend_from_slice(g);
    }
    Ok(grad)
}

/// Runs `steps` Adam updates on the weights in `scope`, maximizing the
/// bound. Weights outside the scope are untouched. Leaf statistics are
/// refreshed on return and the final bound is returned.
pub fn ascend(tree: &mut Reticulum, data: &Dataset, scope: OptimizeScope, steps: usize, state: &mut AdamState) -> Result<f64> {
    check(tree, data)?;
    let mut layout = tree.layout();
    let indices = scope.indices(tree, &layout)?;
    let stride = layout.stride();
    let prior = *tree.prior();
    let mut params: Vec<f64> = indices
        .iter()
        .flat_map(|&k| layout.weights[k * stride..(k + 1) * stride].iter().copied())
        .collect();
    if state.first_moment.len() != params.len() {
        state.reset(params.len());
    }
    for step in 0..steps {
        let grad = gradient_for(&layout, data, prior.alpha(), prior.beta(), &indices, step)?;
        state.step(&mut params, &grad);
        for (j, &k) in indices.iter().enumerate() {
            layout.weights[k * stride..(k + 1) * stride].copy_from_slice(&params[j * stride..(j + 1) * stride]);
        }
    }
    finish(tree, data, &layout, &indices)
}

/// Like [`ascend`], but the nodes in scope move in polar coordinates
/// `(q, r, φ)`. The stiffness is kept at or above [`MIN_POLAR_STIFFNESS`].
pub fn ascend_polar(
    tree: &mut Reticulum,
    data: &Dataset,
    scope: OptimizeScope,
    steps: usize,
    state: &mut AdamState,
) -> Result<f64> {
    check(tree, data)?;
    let mut layout = tree.layout();
    let indices = scope.indices(tree, &layout)?;
    let stride = layout.stride();
    let prior = *tree.prior();
    let mut polar: Vec<PolarWeights> = indices
        .iter()
        .map(|&k| to_polar(&NodeWeights::from_slice(&layout.weights[k * stride..(k + 1) * stride])?))
        .collect::<Result<_>>()?;
    let mut params: Vec<f64> = polar.iter().flat_map(|p| p.to_params()).collect();
    if state.first_moment.len() != params.len() {
        state.reset(params.len());
    }
    for step in 0..steps {
        let cart = gradient_for(&layout, data, prior.alpha(), prior.beta(), &indices, step)?;
        let mut grad = Vec::with_capacity(params.len());
        for (j, p) in polar.iter().enumerate() {
            grad.extend(pullback_gradient(p, &cart[j * stride..(j + 1) * stride])?);
        }
        state.step(&mut params, &grad);
        for (j, &k) in indices.iter().enumerate() {
            let chunk = &mut params[j * stride..(j + 1) * stride];
            chunk[1] = chunk[1].max(MIN_POLAR_STIFFNESS);
            polar[j] = PolarWeights::from_params(chunk, polar[j].reversed);
            layout.weights[k * stride..(k + 1) * stride].copy_from_slice(&to_cartesian(&polar[j]).to_vec());
        }
    }
    finish(tree, data, &layout, &indices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_sphere, SphereLabel};
    use crate::likelihood::bound;
    use crate::reticulum::BetaPrior;

    fn tree_from(dim: usize, nodes: &[(usize, &[f64])]) -> Reticulum {
        let nodes = nodes
            .iter()
            .map(|&(id, w)| (NodeId(id), NodeWeights::from_slice(w).unwrap()))
            .collect();
        Reticulum::with_nodes(dim, BetaPrior::uniform(), nodes).unwrap()
    }

    #[test]
    fn adam_first_step_has_step_size_magnitude() {
        let mut state = AdamState::new(0.1).unwrap();
        let mut p = vec![0.0, 0.0, 0.0];
        state.step(&mut p, &[3.0, -1e-3, 0.0]);
        assert!((p[0] - 0.1).abs() < 1e-8);
        assert!((p[1] + 0.1).abs() < 1e-4);
        assert_eq!(p[2], 0.0);
    }

    #[test]
    fn adam_rejects_bad_settings() {
        assert!(AdamState::new(0.0).is_err());
        assert!(AdamState::with_betas(0.1, 1.0, 0.9, 1e-8).is_err());
        assert!(AdamState::with_betas(0.1, 0.9, 0.9, 0.0).is_err());
    }

    #[test]
    fn stationary_point_does_not_drift() {
        let mut tree = tree_from(1, &[(0, &[0.0, 0.0])]);
        let data = Dataset::new(1, vec![-2.0, -1.0, 1.0, 3.0], vec![0, 0, 1, 1]).unwrap();
        let mut state = AdamState::new(0.05).unwrap();
        ascend(&mut tree, &data, OptimizeScope::All, 20, &mut state).unwrap();
        let w = tree.weights(NodeId::ROOT).unwrap();
        assert!(w.to_vec().iter().all(|v| v.abs() < 20.0 * 1e-6));
    }

    #[test]
    fn separable_line_is_learned() {
        let data = Dataset::new(1, vec![-1.0, 1.0], vec![0, 1]).unwrap();
        let mut tree = tree_from(1, &[(0, &[0.1, 0.3])]);
        let start = bound(&tree, &data).unwrap();
        let mut state = AdamState::new(0.05).unwrap();
        let end = ascend(&mut tree, &data, OptimizeScope::Node(NodeId::ROOT), 500, &mut state).unwrap();
        assert!(end > start);
        assert!((end - bound(&tree, &data).unwrap()).abs() < 1e-12);
        let m = tree.memberships(data.features()).unwrap();
        // the classes land in different leaves, each with > 0.99 of its mass
        let (a, b) = (m.row(0), m.row(1));
        let side_a = if a[0] > a[1] { 0 } else { 1 };
        assert!(a[side_a] > 0.99 && b[1 - side_a] > 0.99, "{a:?} {b:?}");
    }

    #[test]
    fn grid_scan_agrees_on_the_optimum_region() {
        // brute-force: the best grid point separates the classes as well
        let data = Dataset::new(1, vec![-1.0, 1.0], vec![0, 1]).unwrap();
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for i in -40..=40 {
            for j in -40..=40 {
                let (w0, w1) = (i as f64 * 0.25, j as f64 * 0.25);
                let t = tree_from(1, &[(0, &[w0, w1])]);
                let c = bound(&t, &data).unwrap();
                if c > best.0 {
                    best = (c, w0, w1);
                }
            }
        }
        assert!(best.2.abs() >= 5.0 && best.1.abs() < best.2.abs());
        let mut tree = tree_from(1, &[(0, &[0.1, 0.3])]);
        let mut state = AdamState::new(0.05).unwrap();
        let end = ascend(&mut tree, &data, OptimizeScope::All, 500, &mut state).unwrap();
        assert!(end > best.0 - 0.05, "{end} vs grid {}", best.0);
    }

    #[test]
    fn local_scope_leaves_other_nodes_bit_identical() {
        let data = generate_sphere(300, 3, SphereLabel::default());
        let mut tree = tree_from(
            2,
            &[(0, &[0.2, 1.0, 0.3]), (1, &[-0.5, 0.1, 1.2]), (2, &[0.4, -0.8, 0.2])],
        );
        let before = tree.clone();
        let mut state = AdamState::new(0.05).unwrap();
        ascend(&mut tree, &data, OptimizeScope::Node(NodeId(1)), 30, &mut state).unwrap();
        assert_eq!(tree.weights(NodeId(0)), before.weights(NodeId(0)));
        assert_eq!(tree.weights(NodeId(2)), before.weights(NodeId(2)));
        assert_ne!(tree.weights(NodeId(1)), before.weights(NodeId(1)));
    }

    #[test]
    fn global_scope_moves_every_node() {
        let data = generate_sphere(1000, 11, SphereLabel::default());
        let mut tree = tree_from(
            2,
            &[(0, &[0.2, 1.0, 0.3]), (1, &[-0.5, 0.1, 1.2]), (2, &[0.4, -0.8, 0.2])],
        );
        let before = tree.clone();
        let mut state = AdamState::new(0.05).unwrap();
        ascend(&mut tree, &data, OptimizeScope::All, 50, &mut state).unwrap();
        for id in [0, 1, 2] {
            let (a, b) = (before.weights(NodeId(id)).unwrap(), tree.weights(NodeId(id)).unwrap());
            let moved: f64 = a.to_vec().iter().zip(b.to_vec()).map(|(x, y)| (x - y).abs()).sum();
            assert!(moved > 0.0, "node {id} did not move");
        }
    }

    #[test]
    fn ascent_is_deterministic() {
        let data = generate_sphere(2000, 5, SphereLabel::default());
        let run = || {
            let mut tree = tree_from(2, &[(0, &[0.2, 1.0, 0.3]), (2, &[0.4, -0.8, 0.2])]);
            let mut state = AdamState::new(0.05).unwrap();
            let c = ascend(&mut tree, &data, OptimizeScope::All, 25, &mut state).unwrap();
            (tree, c)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn bad_scope_is_rejected() {
        let data = Dataset::new(1, vec![0.0], vec![1]).unwrap();
        let mut tree = tree_from(1, &[(0, &[0.0, 1.0])]);
        let mut state = AdamState::new(0.05).unwrap();
        assert!(matches!(
            ascend(&mut tree, &data, OptimizeScope::Node(NodeId(1)), 1, &mut state),
            Err(Error::Structure(_))
        ));
        assert!(ascend(&mut tree, &data, OptimizeScope::Node(NodeId(5)), 1, &mut state).is_err());
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let data = Dataset::new(2, vec![1e10, 1e10], vec![1]).unwrap();
        let mut tree = tree_from(2, &[(0, &[0.0, 1e300, -1e300])]);
        let mut state = AdamState::new(0.05).unwrap();
        let err = ascend(&mut tree, &data, OptimizeScope::All, 3, &mut state).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { node: NodeId(0), step: 0 }));
    }

    #[test]
    fn zero_steps_only_refreshes() {
        let data = generate_sphere(100, 1, SphereLabel::default());
        let mut tree = tree_from(2, &[(0, &[0.2, 1.0, 0.3])]);
        let before = tree.clone();
        let mut state = AdamState::new(0.05).unwrap();
        let c = ascend(&mut tree, &data, OptimizeScope::All, 0, &mut state).unwrap();
        assert_eq!(tree.nodes(), before.nodes());
        assert!((c - bound(&before, &data).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn polar_mode_improves_and_respects_floor() {
        let data = Dataset::new(2, vec![-1.0, 0.3, 1.0, -0.2, -0.8, -0.5, 0.9, 0.4], vec![0, 1, 0, 1]).unwrap();
        let mut tree = tree_from(2, &[(0, &[0.1, 0.3, 0.2])]);
        let start = bound(&tree, &data).unwrap();
        let mut state = AdamState::new(0.05).unwrap();
        let end = ascend_polar(&mut tree, &data, OptimizeScope::All, 300, &mut state).unwrap();
        assert!(end > start);
        let r = to_polar(tree.weights(NodeId::ROOT).unwrap()).unwrap().r;
        assert!(r >= MIN_POLAR_STIFFNESS);
    }

    #[test]
    fn polar_mode_rejects_flat_node() {
        let data = Dataset::new(1, vec![0.0, 1.0], vec![0, 1]).unwrap();
        let mut tree = tree_from(1, &[(0, &[0.5, 0.0])]);
        let mut state = AdamState::new(0.05).unwrap();
        assert!(matches!(
            ascend_polar(&mut tree, &data, OptimizeScope::All, 5, &mut state),
            Err(Error::DegenerateHyperplane)
        ));
    }
}

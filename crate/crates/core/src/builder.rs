//! Growing a reticulum: choose a leaf, seed a hyperplane there, train it
//! locally and then globally, prune, repeat.

use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::optimizer::{ascend, ascend_polar, AdamState, Coordinates, OptimizeScope};
use crate::reticulum::{BetaPrior, LeafStats, NodeId, NodeWeights, Reticulum, MAX_SUPPORTED_DEPTH};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_attempts: usize,
    /// Deepest level a leaf may sit at; leaves at this level are never split.
    pub max_depth: usize,
    pub prior_alpha: f64,
    pub prior_beta: f64,
    pub initial_stiffness: f64,
    pub step_size: f64,
    /// Split between the local and the global phase, the extra step of an
    /// odd total going to the local phase.
    pub total_gradient_steps: usize,
    pub pruning_factor: f64,
    pub rng_seed: u64,
    pub coordinates: Coordinates,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_attempts: 50,
            max_depth: 6,
            prior_alpha: 1.0,
            prior_beta: 1.0,
            initial_stiffness: 1.0,
            step_size: 0.02,
            total_gradient_steps: 400,
            pruning_factor: 1.05,
            rng_seed: 0,
            coordinates: Coordinates::Cartesian,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be a positive finite number, got {v}")))
            }
        };
        positive("prior_alpha", self.prior_alpha)?;
        positive("prior_beta", self.prior_beta)?;
        positive("initial_stiffness", self.initial_stiffness)?;
        positive("step_size", self.step_size)?;
        if !(1.0..=1.2).contains(&self.pruning_factor) {
            return Err(Error::Config(format!(
                "pruning_factor must lie in [1, 1.2], got {}",
                self.pruning_factor
            )));
        }
        if self.max_depth == 0 || self.max_depth > MAX_SUPPORTED_DEPTH {
            return Err(Error::Config(format!(
                "max_depth must be between 1 and {MAX_SUPPORTED_DEPTH}, got {}",
                self.max_depth
            )));
        }
        if self.total_gradient_steps == 0 {
            return Err(Error::Config("total_gradient_steps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn prior(&self) -> Result<BetaPrior> {
        BetaPrior::new(self.prior_alpha, self.prior_beta)
    }

    pub fn local_steps(&self) -> usize {
        self.total_gradient_steps.div_ceil(2)
    }

    pub fn global_steps(&self) -> usize {
        self.total_gradient_steps / 2
    }
}

/// Serializable copy of a tree at one moment of construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSnapshot {
    pub nodes: Vec<SnapshotNode>,
    pub leaves: Vec<SnapshotLeaf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotNode {
    pub id: NodeId,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotLeaf {
    pub id: NodeId,
    pub alpha: f64,
    pub beta: f64,
    pub potential: f64,
}

impl TreeSnapshot {
    pub fn of(tree: &Reticulum) -> Self {
        Self {
            nodes: tree
                .nodes()
                .iter()
                .map(|(&id, w)| SnapshotNode { id, weights: w.to_vec() })
                .collect(),
            leaves: tree
                .leaves()
                .iter()
                .map(|(&id, s)| SnapshotLeaf {
                    id,
                    alpha: s.alpha,
                    beta: s.beta,
                    potential: s.potential,
                })
                .collect(),
        }
    }

    pub fn restore(&self, dim: usize, prior: BetaPrior) -> Result<Reticulum> {
        let nodes = self
            .nodes
            .iter()
            .map(|n| Ok((n.id, NodeWeights::from_slice(&n.weights)?)))
            .collect::<Result<_>>()?;
        let leaves = self
            .leaves
            .iter()
            .map(|l| {
                (
                    l.id,
                    LeafStats {
                        alpha: l.alpha,
                        beta: l.beta,
                        potential: l.potential,
                    },
                )
            })
            .collect();
        Reticulum::from_parts(dim, prior, nodes, leaves)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Extended {
        attempt: usize,
        leaf: NodeId,
        initial_weights: Vec<f64>,
        bound_initial: f64,
        bound_after_local: f64,
        bound_after_global: f64,
        bound_after_prune: f64,
        pruned: Vec<NodeId>,
        after_init: TreeSnapshot,
        after_local: TreeSnapshot,
        after_global: TreeSnapshot,
        after_prune: TreeSnapshot,
    },
    /// Too few points reach the chosen leaf to seed a hyperplane.
    Skipped { attempt: usize, leaf: NodeId, points: usize },
    /// Every leaf sits at the depth cap: the attempt only retrains the whole
    /// tree and prunes.
    Exhausted {
        attempt: usize,
        bound_before: f64,
        bound_after_global: f64,
        bound_after_prune: f64,
        pruned: Vec<NodeId>,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConstructionTrace {
    pub events: Vec<TraceEvent>,
}

impl ConstructionTrace {
    pub fn extensions(&self) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(|e| matches!(e, TraceEvent::Extended { .. }))
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Picks a leaf with probability proportional to its unexplained potential
/// among leaves above `max_depth`. Returns `None` when no leaf qualifies.
pub fn select_leaf<R: Rng + ?Sized>(tree: &Reticulum, max_depth: usize, rng: &mut R) -> Result<Option<NodeId>> {
    if tree.is_stale() {
        return Err(Error::StaleStats);
    }
    let eligible: Vec<(NodeId, f64)> = tree
        .leaves()
        .iter()
        .filter(|(id, _)| id.level() < max_depth)
        .map(|(&id, s)| (id, s.potential))
        .collect();
    if eligible.is_empty() {
        return Ok(None);
    }
    let total: f64 = eligible.iter().map(|(_, c)| c).sum();
    if total == 0.0 {
        return Ok(Some(eligible[rng.random_range(0..eligible.len())].0));
    }
    // both the potentials and their total are negative; the ratio is a distribution
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    for &(id, c) in &eligible {
        cumulative += c / total;
        if u < cumulative {
            return Ok(Some(id));
        }
    }
    Ok(eligible.iter().rev().find(|(_, c)| *c != 0.0).map(|(id, _)| *id))
}

/// Type-7 quantile of sorted values.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Uniform direction on the unit sphere in `dim` dimensions.
pub fn sample_direction<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Seeds a hyperplane for `leaf` from the points that reach it with
/// probability above one half: a random direction, scaled per dimension by
/// the interquartile range and passing through the coordinate-wise median.
///
/// Returns `None` when fewer than two points qualify.
pub fn sample_initial_weights<R: Rng + ?Sized>(
    tree: &Reticulum,
    leaf: NodeId,
    data: &Dataset,
    stiffness: f64,
    rng: &mut R,
) -> Result<Option<NodeWeights>> {
    if !tree.leaves().contains_key(&leaf) {
        return Err(Error::Structure(format!("{leaf} is not a leaf")));
    }
    if data.is_empty() {
        return Err(Error::Dataset("cannot seed weights from an empty dataset".into()));
    }
    let incoming = tree
        .memberships(data.features())?
        .column(leaf)
        .expect("leaf present in membership matrix");
    let restricted: Vec<usize> = (0..data.len()).filter(|&i| incoming[i] > 0.5).collect();
    if restricted.len() < 2 {
        return Ok(None);
    }
    let direction = sample_direction(data.dim(), rng);
    let mut normal = Vec::with_capacity(data.dim());
    let mut intercept = 0.0;
    let mut column = Vec::with_capacity(restricted.len());
    for (k, u) in direction.into_iter().enumerate() {
        column.clear();
        column.extend(restricted.iter().map(|&i| data.point(i)[k]));
        column.sort_by(f64::total_cmp);
        let spread = quantile(&column, 0.75) - quantile(&column, 0.25);
        let spread = if spread > 0.0 { spread } else { 1.0 };
        let w = stiffness * u / spread;
        intercept -= w * quantile(&column, 0.5);
        normal.push(w);
    }
    Ok(Some(NodeWeights::new(intercept, normal)?))
}

/// Pools the statistics of two sibling leaves into their parent's.
fn pooled(prior: &BetaPrior, left: &LeafStats, right: &LeafStats) -> LeafStats {
    // add the smaller data mass onto the larger side so an empty child pools exactly
    let merge = |l: f64, r: f64, base: f64| {
        let (ml, mr) = (l - base, r - base);
        if mr <= ml {
            l + mr
        } else {
            r + ml
        }
    };
    LeafStats::from_counts(
        prior,
        merge(left.alpha, right.alpha, prior.alpha()),
        merge(left.beta, right.beta, prior.beta()),
    )
}

/// Collapses, bottom-up until nothing changes, every split whose two leaf
/// children do not beat the pooled parent by more than
/// `(level + 1) ln(pruning_factor)`. Returns the collapsed node ids in order.
pub fn prune(tree: &mut Reticulum, data: &Dataset, pruning_factor: f64) -> Result<Vec<NodeId>> {
    if !(pruning_factor >= 1.0 && pruning_factor.is_finite()) {
        return Err(Error::Domain(format!("pruning factor must be >= 1, got {pruning_factor}")));
    }
    if tree.is_stale() {
        tree.refresh_leaf_stats(data)?;
    }
    let prior = *tree.prior();
    let log_factor = pruning_factor.ln();
    let mut pruned = Vec::new();
    loop {
        let candidates: Vec<NodeId> = tree
            .nodes()
            .keys()
            .rev()
            .copied()
            .filter(|id| tree.leaves().contains_key(&id.left()) && tree.leaves().contains_key(&id.right()))
            .collect();
        let mut changed = false;
        for id in candidates {
            let (l, r) = (tree.leaves()[&id.left()], tree.leaves()[&id.right()]);
            let parent = pooled(&prior, &l, &r);
            let penalty = (id.level() + 1) as f64 * log_factor;
            if l.potential + r.potential <= parent.potential + penalty {
                tree.collapse(id, parent)?;
                pruned.push(id);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    if !pruned.is_empty() {
        tree.refresh_leaf_stats(data)?;
    }
    Ok(pruned)
}

fn train(tree: &mut Reticulum, data: &Dataset, scope: OptimizeScope, steps: usize, config: &TrainConfig) -> Result<f64> {
    let mut state = AdamState::new(config.step_size)?;
    match config.coordinates {
        Coordinates::Cartesian => ascend(tree, data, scope, steps, &mut state),
        Coordinates::Polar => ascend_polar(tree, data, scope, steps, &mut state),
    }
}

/// Builds a reticulum for `data` and records every step of construction.
pub fn fit(data: &Dataset, config: &TrainConfig) -> Result<(Reticulum, ConstructionTrace)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Dataset("cannot fit an empty dataset".into()));
    }
    let mut tree = Reticulum::new(data.dim(), config.prior()?)?;
    tree.refresh_leaf_stats(data)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut trace = ConstructionTrace::default();

    for attempt in 0..config.max_attempts {
        let Some(leaf) = select_leaf(&tree, config.max_depth, &mut rng)? else {
            let bound_before = tree.potential_sum();
            let bound_after_global = train(&mut tree, data, OptimizeScope::All, config.global_steps(), config)?;
            let pruned = prune(&mut tree, data, config.pruning_factor)?;
            trace.events.push(TraceEvent::Exhausted {
                attempt,
                bound_before,
                bound_after_global,
                bound_after_prune: tree.potential_sum(),
                pruned,
            });
            continue;
        };
        let Some(weights) = sample_initial_weights(&tree, leaf, data, config.initial_stiffness, &mut rng)? else {
            let incoming = tree.memberships(data.features())?.column(leaf).unwrap_or_default();
            let points = incoming.iter().filter(|&&p| p > 0.5).count();
            trace.events.push(TraceEvent::Skipped { attempt, leaf, points });
            continue;
        };
        let initial_weights = weights.to_vec();
        tree.split(leaf, weights)?;
        tree.refresh_leaf_stats(data)?;
        let bound_initial = tree.potential_sum();
        let after_init = TreeSnapshot::of(&tree);

        let bound_after_local = train(&mut tree, data, OptimizeScope::Node(leaf), config.local_steps(), config)?;
        let after_local = TreeSnapshot::of(&tree);
        let bound_after_global = train(&mut tree, data, OptimizeScope::All, config.global_steps(), config)?;
        let after_global = TreeSnapshot::of(&tree);

        let pruned = prune(&mut tree, data, config.pruning_factor)?;
        trace.events.push(TraceEvent::Extended {
            attempt,
            leaf,
            initial_weights,
            bound_initial,
            bound_after_local,
            bound_after_global,
            bound_after_prune: tree.potential_sum(),
            pruned,
            after_init,
            after_local,
            after_global,
            after_prune: TreeSnapshot::of(&tree),
        });
    }
    Ok((tree, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_cross, generate_sphere, SphereLabel};
    use crate::likelihood::bound;
    use crate::numerics::log_beta;

    fn tree_from(dim: usize, nodes: &[(usize, &[f64])]) -> Reticulum {
        let nodes = nodes
            .iter()
            .map(|&(id, w)| (NodeId(id), NodeWeights::from_slice(w).unwrap()))
            .collect();
        Reticulum::with_nodes(dim, BetaPrior::uniform(), nodes).unwrap()
    }

    fn with_potentials(potentials: &[(usize, f64)]) -> Reticulum {
        // a frozen tree whose leaves carry the given potentials
        let prior = BetaPrior::uniform();
        let leaves = potentials
            .iter()
            .map(|&(id, c)| {
                (
                    NodeId(id),
                    LeafStats {
                        alpha: 1.0,
                        beta: 1.0,
                        potential: c,
                    },
                )
            })
            .collect();
        let mut nodes = std::collections::BTreeMap::new();
        for &(id, _) in potentials {
            let mut n = NodeId(id);
            while let Some(p) = n.parent() {
                nodes.insert(p, NodeWeights::zeros(1));
                n = p;
            }
        }
        Reticulum::from_parts(1, prior, nodes, leaves).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { pruning_factor: 0.99, ..Default::default() },
            TrainConfig { pruning_factor: 1.21, ..Default::default() },
            TrainConfig { max_depth: 0, ..Default::default() },
            TrainConfig { max_depth: MAX_SUPPORTED_DEPTH + 1, ..Default::default() },
            TrainConfig { step_size: 0.0, ..Default::default() },
            TrainConfig { prior_alpha: -1.0, ..Default::default() },
            TrainConfig { total_gradient_steps: 0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
    }

    #[test]
    fn odd_step_totals_favour_the_local_phase() {
        let c = TrainConfig { total_gradient_steps: 401, ..Default::default() };
        assert_eq!((c.local_steps(), c.global_steps()), (201, 200));
        let c = TrainConfig { total_gradient_steps: 1, ..Default::default() };
        assert_eq!((c.local_steps(), c.global_steps()), (1, 0));
    }

    #[test]
    fn single_leaf_is_always_selected() {
        let mut tree = Reticulum::new(1, BetaPrior::uniform()).unwrap();
        tree.refresh_leaf_stats(&Dataset::new(1, vec![0.0, 1.0], vec![0, 1]).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(select_leaf(&tree, 6, &mut rng).unwrap(), Some(NodeId::ROOT));
        }
    }

    #[test]
    fn selection_frequencies_follow_potentials() {
        let tree = with_potentials(&[(1, -2.0), (2, -1.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let left = (0..n)
            .filter(|_| select_leaf(&tree, 6, &mut rng).unwrap() == Some(NodeId(1)))
            .count();
        assert!((left as f64 / n as f64 - 2.0 / 3.0).abs() < 0.01);
    }

    #[test]
    fn selection_chi_square_on_four_leaves() {
        let potentials = [(3, -4.0), (4, -1.0), (5, -2.5), (6, -0.5)];
        let tree = with_potentials(&potentials);
        let total: f64 = potentials.iter().map(|p| p.1).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let id = select_leaf(&tree, 6, &mut rng).unwrap().unwrap();
            counts[id.0 - 3] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .zip(&potentials)
            .map(|(&o, &(_, c))| {
                let e = n as f64 * c / total;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        // 3 degrees of freedom, upper 1% point
        assert!(chi2 < 11.345, "chi2 = {chi2}");
    }

    #[test]
    fn zero_potentials_fall_back_to_uniform() {
        let tree = with_potentials(&[(1, 0.0), (2, 0.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let left = (0..20_000)
            .filter(|_| select_leaf(&tree, 6, &mut rng).unwrap() == Some(NodeId(1)))
            .count();
        assert!((left as f64 / 20_000.0 - 0.5).abs() < 0.02);
    }

    #[test]
    fn depth_cap_excludes_deep_leaves() {
        // leaf levels: 2 → 1, 4 → 2, 7 and 8 → 3
        let tree = with_potentials(&[(2, -1.0), (7, -5.0), (8, -5.0), (4, -3.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let id = select_leaf(&tree, 3, &mut rng).unwrap().unwrap();
            assert!(id == NodeId(2) || id == NodeId(4), "{id}");
        }
        let capped = with_potentials(&[(1, -1.0), (2, -1.0)]);
        assert_eq!(select_leaf(&capped, 1, &mut rng).unwrap(), None);
    }

    #[test]
    fn stale_tree_cannot_select() {
        let tree = tree_from(1, &[(0, &[0.0, 1.0])]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(select_leaf(&tree, 6, &mut rng), Err(Error::StaleStats)));
    }

    #[test]
    fn quantiles_are_type_seven() {
        let v = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(quantile(&v, 0.25), 0.75);
        assert_eq!(quantile(&v, 0.75), 2.25);
        assert_eq!(quantile(&v, 0.5), 1.5);
        assert_eq!(quantile(&[4.0], 0.3), 4.0);
    }

    #[test]
    fn initial_weights_by_hand() {
        let data = Dataset::new(1, vec![0.0, 1.0, 2.0, 3.0], vec![0, 1, 0, 1]).unwrap();
        let mut tree = Reticulum::new(1, BetaPrior::uniform()).unwrap();
        tree.refresh_leaf_stats(&data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let w = sample_initial_weights(&tree, NodeId::ROOT, &data, 2.0, &mut rng).unwrap().unwrap();
            // the direction is ±1 in one dimension
            assert!((w.normal[0].abs() - 2.0 / 1.5).abs() < 1e-15);
            assert!((w.intercept + w.normal[0] * 1.5).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_dimension_uses_unit_range() {
        let data = Dataset::new(2, vec![3.0, 0.0, 3.0, 1.0, 3.0, 2.0], vec![0, 1, 1]).unwrap();
        let tree = Reticulum::new(2, BetaPrior::uniform()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = sample_initial_weights(&tree, NodeId::ROOT, &data, 1.0, &mut rng).unwrap().unwrap();
        assert!(w.to_vec().iter().all(|v| v.is_finite()));
        // first coordinate: range 1.0, median 3; second: range 1.0, median 1
        let unit = w.normal[0].hypot(w.normal[1]);
        assert!((unit - 1.0).abs() < 1e-12);
        assert!((w.intercept + 3.0 * w.normal[0] + w.normal[1]).abs() < 1e-12);
    }

    #[test]
    fn restriction_uses_incoming_mass() {
        // root sends x < 0 left almost surely; the right child sees only x > 0
        let data = Dataset::new(1, vec![-3.0, -2.0, -1.0, 1.0, 5.0, 9.0], vec![0; 6]).unwrap();
        let tree = tree_from(1, &[(0, &[0.0, -100.0])]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = sample_initial_weights(&tree, NodeId(2), &data, 1.0, &mut rng).unwrap().unwrap();
        // points {1, 5, 9}: q25 = 3, q75 = 7, median 5
        assert!((w.normal[0].abs() - 0.25).abs() < 1e-15);
        assert!((w.intercept + 5.0 * w.normal[0]).abs() < 1e-15);
    }

    #[test]
    fn too_few_points_is_unextendable() {
        let data = Dataset::new(1, vec![-3.0, -2.0, 4.0], vec![0; 3]).unwrap();
        let tree = tree_from(1, &[(0, &[0.0, -100.0])]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        assert_eq!(sample_initial_weights(&tree, NodeId(2), &data, 1.0, &mut rng).unwrap(), None);
        // exactly one half is excluded
        let data = Dataset::new(1, vec![0.0, 0.0, -1.0], vec![0; 3]).unwrap();
        let tree = tree_from(1, &[(0, &[0.0, 1.0])]);
        let w = sample_initial_weights(&tree, NodeId(1), &data, 1.0, &mut rng).unwrap();
        assert_eq!(w, None);
    }

    #[test]
    fn directions_are_uniform_on_the_circle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let bins = 20;
        let n = 10_000;
        let mut counts = vec![0usize; bins];
        for _ in 0..n {
            let u = sample_direction(2, &mut rng);
            let a = u[1].atan2(u[0]).rem_euclid(2.0 * std::f64::consts::PI);
            counts[((a / (2.0 * std::f64::consts::PI)) * bins as f64) as usize % bins] += 1;
        }
        let e = n as f64 / bins as f64;
        let chi2: f64 = counts.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
        // 19 degrees of freedom, upper 1% point
        assert!(chi2 < 36.191, "chi2 = {chi2}");
    }

    #[test]
    fn empty_child_is_pruned_at_unit_factor() {
        let prior = BetaPrior::uniform();
        let nodes = [(NodeId::ROOT, NodeWeights::zeros(1))].into_iter().collect();
        let leaves = [
            (NodeId(1), LeafStats::from_counts(&prior, 4.0, 7.0)),
            (NodeId(2), LeafStats::empty(&prior)),
        ]
        .into_iter()
        .collect();
        let mut tree = Reticulum::from_parts(1, prior, nodes, leaves).unwrap();
        let data = Dataset::new(1, vec![0.0; 9], vec![0, 0, 0, 1, 1, 1, 1, 1, 1]).unwrap();
        let pruned = prune(&mut tree, &data, 1.0).unwrap();
        assert_eq!(pruned, vec![NodeId::ROOT]);
        assert_eq!(tree.internal_count(), 0);
    }

    #[test]
    fn separating_split_survives() {
        let k = 10usize;
        let mut x: Vec<f64> = (0..k).map(|i| -1.0 - i as f64).collect();
        x.extend((0..k).map(|i| 1.0 + i as f64));
        let mut y = vec![0u8; k];
        y.extend(vec![1u8; k]);
        let data = Dataset::new(1, x, y).unwrap();
        let mut tree = tree_from(1, &[(0, &[0.0, -60.0])]);
        tree.refresh_leaf_stats(&data).unwrap();
        // closed form: children ln B(1+k,1) + ln B(1,1+k) against pooled ln B(1+k,1+k)
        let kf = k as f64;
        let split = 2.0 * log_beta(1.0 + kf, 1.0).unwrap();
        let pool = log_beta(1.0 + kf, 1.0 + kf).unwrap();
        assert!(split > pool + 5.0);
        assert!((tree.potential_sum() - split).abs() < 1e-9);
        assert!(prune(&mut tree, &data, 1.0).unwrap().is_empty());
        assert_eq!(tree.internal_count(), 1);
    }

    #[test]
    fn pruning_cascades() {
        // a pure dataset: no split can beat the pooled parent
        let data = Dataset::new(1, vec![-2.0, -1.0, 1.0, 2.0, 3.0], vec![1; 5]).unwrap();
        let mut tree = tree_from(1, &[(0, &[0.0, 1.0]), (1, &[0.5, 1.0])]);
        tree.refresh_leaf_stats(&data).unwrap();
        let pruned = prune(&mut tree, &data, 1.0).unwrap();
        assert_eq!(pruned, vec![NodeId(1), NodeId::ROOT]);
        assert_eq!(tree.leaf_count(), 1);
        assert!(!tree.is_stale());
    }

    #[test]
    fn pruning_respects_the_penalized_objective() {
        let data = generate_sphere(400, 21, SphereLabel::default());
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..30 {
            let mut nodes = Vec::new();
            for id in [0usize, 1, 2, 3, 5] {
                let w: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
                nodes.push((id, w));
            }
            let refs: Vec<(usize, &[f64])> = nodes.iter().map(|(i, w)| (*i, w.as_slice())).collect();
            let mut tree = tree_from(2, &refs);
            tree.refresh_leaf_stats(&data).unwrap();
            let before = tree.potential_sum();
            let factor = rng.random_range(1.0..1.2f64);
            let pruned = prune(&mut tree, &data, factor).unwrap();
            let credit: f64 = pruned.iter().map(|id| (id.level() + 1) as f64 * factor.ln()).sum();
            assert!(tree.potential_sum() + credit >= before - 1e-9);
            tree.validate().unwrap();
        }
    }

    #[test]
    fn zero_attempts_gives_root_only() {
        let data = generate_cross(100, 1);
        let (tree, trace) = fit(&data, &TrainConfig { max_attempts: 0, ..Default::default() }).unwrap();
        assert_eq!(tree.internal_count(), 0);
        assert!(trace.events.is_empty());
        assert!(!tree.is_stale());
    }

    #[test]
    fn pure_data_stays_root_only() {
        let x: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64 / 50.0 - 1.0).collect();
        let data = Dataset::new(2, x, vec![0; 100]).unwrap();
        for seed in 0..20 {
            let config = TrainConfig {
                max_attempts: 5,
                total_gradient_steps: 60,
                rng_seed: seed,
                ..Default::default()
            };
            let (tree, _) = fit(&data, &config).unwrap();
            assert_eq!(tree.internal_count(), 0, "seed {seed}");
        }
    }

    #[test]
    fn fit_is_deterministic_and_valid() {
        let data = generate_cross(300, 2);
        let config = TrainConfig {
            max_attempts: 6,
            total_gradient_steps: 80,
            rng_seed: 3,
            ..Default::default()
        };
        let (a, ta) = fit(&data, &config).unwrap();
        let (b, tb) = fit(&data, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        for e in &ta.events {
            if let TraceEvent::Extended {
                after_init,
                after_local,
                after_global,
                after_prune,
                ..
            } = e
            {
                for s in [after_init, after_local, after_global, after_prune] {
                    s.restore(2, BetaPrior::uniform()).unwrap().validate().unwrap();
                }
            }
        }
        assert!((a.potential_sum() - bound(&a, &data).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn exhausted_attempts_keep_training() {
        let data = generate_cross(300, 5);
        let config = TrainConfig {
            max_depth: 1,
            max_attempts: 6,
            total_gradient_steps: 40,
            rng_seed: 1,
            ..Default::default()
        };
        let (tree, trace) = fit(&data, &config).unwrap();
        assert_eq!(trace.events.len(), 6);
        let mut exhausted = 0;
        for e in &trace.events {
            if let TraceEvent::Exhausted {
                bound_after_global,
                bound_after_prune,
                pruned,
                ..
            } = e
            {
                exhausted += 1;
                let credit: f64 = pruned.iter().map(|id| (id.level() + 1) as f64 * config.pruning_factor.ln()).sum();
                assert!(bound_after_prune + credit >= bound_after_global - 1e-9);
            }
        }
        assert!(exhausted > 0);
        assert!(tree.depth() <= 1);
        assert!(!tree.is_stale());
    }

    #[test]
    fn empty_data_is_rejected() {
        assert!(matches!(
            fit(&Dataset::empty(2), &TrainConfig::default()),
            Err(Error::Dataset(_))
        ));
        assert!(fit(&generate_cross(10, 0), &TrainConfig { pruning_factor: 2.0, ..Default::default() }).is_err());
    }

    #[test]
    fn trace_serializes_line_by_line() {
        let data = generate_cross(100, 4);
        let config = TrainConfig {
            max_attempts: 3,
            total_gradient_steps: 20,
            ..Default::default()
        };
        let (_, trace) = fit(&data, &config).unwrap();
        let text = trace.to_jsonl().unwrap();
        assert_eq!(text.lines().count(), trace.events.len());
        for (line, event) in text.lines().zip(&trace.events) {
            let back: TraceEvent = serde_json::from_str(line).unwrap();
            assert_eq!(&back, event);
        }
    }
}

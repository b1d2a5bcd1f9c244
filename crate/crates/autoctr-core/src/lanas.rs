//! Tree-partitioning MCTS baseline: ridge regressors split the encoded
//! space into a fixed-depth binary partition, UCB walks it, an
//! evolutionary rollout mutates the best of a leaf's members, and
//! virtual losses let several evaluations run in flight.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::{derive_seed, ArchEvaluator, EvalJob, EvalPool, EvalRecord};
use crate::search_space::{mutate_with, random_arch_with, Architecture, SpaceOptions};
use crate::searcher::{RecordSink, SearchResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LanasConfig {
    pub depth: usize,
    pub ridge: f64,
    pub ucb_c: f64,
    /// Tree refit cadence in completed evaluations past initialization.
    pub refit_every: usize,
    pub rollout_retries: usize,
    /// Fraction of a leaf's members entering the parent tournament.
    pub candidate_fraction: f64,
    pub init_size: usize,
    pub budget: usize,
    pub workers: usize,
    pub space: SpaceOptions,
}

impl Default for LanasConfig {
    fn default() -> Self {
        LanasConfig {
            depth: 5,
            ridge: 0.1,
            ucb_c: 0.5,
            refit_every: 20,
            rollout_retries: 50,
            candidate_fraction: 0.5,
            init_size: 100,
            budget: 1500,
            workers: 3,
            space: SpaceOptions::default(),
        }
    }
}

/// Linear model with an unpenalized intercept, fitted by centered normal
/// equations with an L2 penalty on the weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RidgeModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
}

impl RidgeModel {
    pub fn fit(features: &[&[f64]], targets: &[f64], alpha: f64) -> Result<RidgeModel> {
        let n = features.len();
        if n < 1 || n != targets.len() {
            return Err(Error::TooFewRecords { got: n, need: 1 });
        }
        let d = features[0].len();
        let mut x_mean = vec![0.0; d];
        for x in features {
            for (m, &v) in x_mean.iter_mut().zip(*x) {
                *m += v;
            }
        }
        for m in &mut x_mean {
            *m /= n as f64;
        }
        let y_mean: f64 = targets.iter().sum::<f64>() / n as f64;

        // A = Xc' Xc + alpha I, b = Xc' yc.
        let mut a = vec![0.0; d * d];
        let mut b = vec![0.0; d];
        for (x, &y) in features.iter().zip(targets) {
            let yc = y - y_mean;
            for i in 0..d {
                let xi = x[i] - x_mean[i];
                if xi == 0.0 {
                    continue;
                }
                b[i] += xi * yc;
                let row = &mut a[i * d..(i + 1) * d];
                for (j, cell) in row.iter_mut().enumerate().skip(i) {
                    *cell += xi * (x[j] - x_mean[j]);
                }
            }
        }
        for i in 0..d {
            a[i * d + i] += alpha;
            for j in 0..i {
                a[i * d + j] = a[j * d + i];
            }
        }
        let weights = cholesky_solve(&mut a, &b, d)?;
        let intercept = y_mean - weights.iter().zip(&x_mean).map(|(w, m)| w * m).sum::<f64>();
        Ok(RidgeModel { weights, intercept })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }
}

/// In-place Cholesky factorization and solve of an SPD system.
fn cholesky_solve(a: &mut [f64], b: &[f64], d: usize) -> Result<Vec<f64>> {
    for i in 0..d {
        for j in 0..=i {
            let mut sum = a[i * d + j];
            for k in 0..j {
                sum -= a[i * d + k] * a[j * d + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::ShapeMismatch(
                        "ridge system is not positive definite".into(),
                    ));
                }
                a[i * d + i] = sum.sqrt();
            } else {
                a[i * d + j] = sum / a[j * d + j];
            }
        }
    }
    let mut y = vec![0.0; d];
    for i in 0..d {
        let mut sum = b[i];
        for k in 0..i {
            sum -= a[i * d + k] * y[k];
        }
        y[i] = sum / a[i * d + i];
    }
    let mut x = vec![0.0; d];
    for i in (0..d).rev() {
        let mut sum = y[i];
        for k in (i + 1)..d {
            sum -= a[k * d + i] * x[k];
        }
        x[i] = sum / a[i * d + i];
    }
    Ok(x)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PartitionNode {
    /// Present on internal nodes with enough members to fit.
    pub regressor: Option<RidgeModel>,
    pub threshold: f64,
    /// Record indices (into the completed log) assigned to this node.
    pub members: Vec<usize>,
    pub visits: f64,
    pub loss_sum: f64,
}

/// Complete binary tree over the encoded space. Node 0 is the root;
/// children of `i` are `2i + 1` and `2i + 2`; leaves sit at the last
/// level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionTree {
    pub depth: usize,
    pub nodes: Vec<PartitionNode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

/// A root-to-leaf selection: the visited node indices (for backprop) and
/// the regressor-side constraints collected on the way down.
#[derive(Debug, Clone)]
pub struct SelectedPath {
    pub nodes: Vec<usize>,
    pub constraints: Vec<(usize, Side)>,
}

impl PartitionTree {
    pub fn n_nodes(depth: usize) -> usize {
        (1 << (depth + 1)) - 1
    }

    pub fn first_leaf(&self) -> usize {
        (1 << self.depth) - 1
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        node >= self.first_leaf()
    }

    pub fn leaf_member_counts(&self) -> Vec<usize> {
        (self.first_leaf()..self.nodes.len())
            .map(|i| self.nodes[i].members.len())
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("partition tree serialization cannot fail")
    }
}

/// Fits the partition top-down: each internal node ridge-regresses the
/// validation logloss of its members on their encodings, thresholds at
/// the mean prediction, and routes members left (prediction at or below
/// the threshold) or right. One-sided or too-small nodes degenerate:
/// everything routes left and the right child stays unvisited.
pub fn fit_tree(records: &[EvalRecord], depth: usize, ridge: f64) -> Result<PartitionTree> {
    let finite: Vec<usize> = (0..records.len())
        .filter(|&i| !records[i].is_failed())
        .collect();
    if finite.len() < 2 {
        return Err(Error::TooFewRecords {
            got: finite.len(),
            need: 2,
        });
    }
    let features: Vec<Vec<f64>> = records
        .iter()
        .map(|r| {
            crate::search_space::encode(&r.arch).map(crate::search_space::ArchVector::into_vec)
        })
        .collect::<Result<_>>()?;

    let mut tree = PartitionTree {
        depth,
        nodes: vec![PartitionNode::default(); PartitionTree::n_nodes(depth)],
    };
    let mut stack = vec![(0usize, 0usize, finite)];
    while let Some((node, level, members)) = stack.pop() {
        tree.nodes[node].visits = members.len() as f64;
        tree.nodes[node].loss_sum = members.iter().map(|&i| records[i].val_logloss).sum();
        if level == depth {
            tree.nodes[node].members = members;
            continue;
        }
        let (left, right) = (2 * node + 1, 2 * node + 2);
        if members.len() >= 2 {
            let x: Vec<&[f64]> = members.iter().map(|&i| features[i].as_slice()).collect();
            let y: Vec<f64> = members.iter().map(|&i| records[i].val_logloss).collect();
            let model = RidgeModel::fit(&x, &y, ridge)?;
            let preds: Vec<f64> = x.iter().map(|xi| model.predict(xi)).collect();
            let threshold = preds.iter().sum::<f64>() / preds.len() as f64;
            let mut left_members = Vec::new();
            let mut right_members = Vec::new();
            for (&idx, &p) in members.iter().zip(&preds) {
                if p <= threshold {
                    left_members.push(idx);
                } else {
                    right_members.push(idx);
                }
            }
            if left_members.is_empty() || right_members.is_empty() {
                // Degenerate split: keep the node total by routing left.
                left_members = members.clone();
                right_members.clear();
            }
            tree.nodes[node].regressor = Some(model);
            tree.nodes[node].threshold = threshold;
            tree.nodes[node].members = members;
            stack.push((right, level + 1, right_members));
            stack.push((left, level + 1, left_members));
        } else {
            tree.nodes[node].members = members.clone();
            stack.push((right, level + 1, Vec::new()));
            stack.push((left, level + 1, members));
        }
    }
    Ok(tree)
}

#[derive(Debug, Clone)]
struct VirtualSlot {
    nodes: Vec<usize>,
    value: f64,
}

/// Search-time tree state: the fitted partition plus real visit
/// statistics and the outstanding virtual-loss slots. Virtual
/// contributions are kept separately and recomputed on demand, so once a
/// slot clears the real statistics are exactly those of a serial run.
pub struct TreeState {
    pub tree: PartitionTree,
    slots: HashMap<u64, VirtualSlot>,
    next_slot: u64,
}

impl TreeState {
    pub fn new(tree: PartitionTree) -> Self {
        TreeState {
            tree,
            slots: HashMap::new(),
            next_slot: 0,
        }
    }

    /// Replaces the partition after a refit; visit statistics reset to
    /// the member counts. Outstanding virtual slots keep overlaying their
    /// recorded paths.
    pub fn refit(&mut self, tree: PartitionTree) {
        self.tree = tree;
    }

    pub fn outstanding_slots(&self) -> usize {
        self.slots.len()
    }

    /// Effective (visits, loss sum) including in-flight virtual losses.
    pub fn effective(&self, node: usize) -> (f64, f64) {
        let mut visits = self.tree.nodes[node].visits;
        let mut loss = self.tree.nodes[node].loss_sum;
        for slot in self.slots.values() {
            if slot.nodes.contains(&node) {
                visits += 1.0;
                loss += slot.value;
            }
        }
        (visits, loss)
    }

    /// UCB walk from the root: each step picks the child maximizing
    /// `-mean_loss + c * sqrt(2 ln(n_parent) / n_child)`, an unvisited
    /// child scoring infinity; ties go left.
    pub fn select_leaf(&self, ucb_c: f64) -> SelectedPath {
        let mut nodes = vec![0usize];
        let mut constraints = Vec::new();
        let mut node = 0usize;
        while !self.tree.is_leaf(node) {
            let (parent_visits, _) = self.effective(node);
            let ucb = |child: usize| -> f64 {
                let (visits, loss) = self.effective(child);
                if visits == 0.0 {
                    return f64::INFINITY;
                }
                let value = -(loss / visits);
                let explore = if parent_visits > 0.0 {
                    ucb_c * (2.0 * parent_visits.ln() / visits).sqrt()
                } else {
                    0.0
                };
                value + explore
            };
            let (left, right) = (2 * node + 1, 2 * node + 2);
            let side = if ucb(right) > ucb(left) {
                Side::Right
            } else {
                Side::Left
            };
            constraints.push((node, side));
            node = if side == Side::Left { left } else { right };
            nodes.push(node);
        }
        SelectedPath { nodes, constraints }
    }

    /// Whether an encoded candidate falls on the path's side of every
    /// regressor along it; nodes without a regressor impose nothing.
    pub fn satisfies(&self, encoded: &[f64], path: &SelectedPath) -> bool {
        path.constraints.iter().all(|&(node, side)| {
            let n = &self.tree.nodes[node];
            match &n.regressor {
                Some(model) => {
                    let pred = model.predict(encoded);
                    match side {
                        Side::Left => pred <= n.threshold,
                        Side::Right => pred > n.threshold,
                    }
                }
                None => true,
            }
        })
    }

    /// Pads the path with the leaf's mean member logloss (the tree-wide
    /// mean when the leaf is empty) and registers the in-flight slot.
    pub fn virtual_backprop(&mut self, path: &SelectedPath) -> u64 {
        let leaf = *path.nodes.last().unwrap();
        let leaf_node = &self.tree.nodes[leaf];
        let value = if !leaf_node.members.is_empty() && leaf_node.visits > 0.0 {
            leaf_node.loss_sum / leaf_node.visits
        } else {
            let root = &self.tree.nodes[0];
            if root.visits > 0.0 {
                root.loss_sum / root.visits
            } else {
                0.0
            }
        };
        let id = self.next_slot;
        self.next_slot += 1;
        self.slots.insert(
            id,
            VirtualSlot {
                nodes: path.nodes.clone(),
                value,
            },
        );
        id
    }

    /// Removes an in-flight slot, returning its recorded path for the
    /// real backprop. Clearing twice is an error.
    pub fn clear_virtual(&mut self, id: u64) -> Result<Vec<usize>> {
        self.slots
            .remove(&id)
            .map(|s| s.nodes)
            .ok_or(Error::UnknownSlot(id))
    }

    pub fn real_backprop(&mut self, nodes: &[usize], loss: f64) {
        for &n in nodes {
            self.tree.nodes[n].visits += 1.0;
            self.tree.nodes[n].loss_sum += loss;
        }
    }
}

/// Outcome of one evolutionary rollout.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub candidate: Architecture,
    /// Birth index of the mutated parent, when the leaf had members.
    pub parent_birth: Option<usize>,
    /// Whether the candidate passed every path constraint (false after
    /// the retry cap falls back to the last unconstrained candidate).
    pub constrained: bool,
}

/// Rollout inside the selected subspace: the parent is the best of a
/// random half of the leaf's members, the candidate a mutation of it that
/// satisfies the path constraints; after the retry cap the last candidate
/// is accepted unconstrained. An empty leaf falls back to a random
/// architecture.
pub fn rollout_evolutionary<R: Rng>(
    state: &TreeState,
    records: &[EvalRecord],
    path: &SelectedPath,
    rng: &mut R,
    opts: &SpaceOptions,
    retries: usize,
    candidate_fraction: f64,
) -> Rollout {
    let leaf = *path.nodes.last().unwrap();
    let members = &state.tree.nodes[leaf].members;
    if members.is_empty() {
        return Rollout {
            candidate: random_arch_with(rng, opts),
            parent_birth: None,
            constrained: false,
        };
    }
    let k = ((members.len() as f64 * candidate_fraction).ceil() as usize)
        .clamp(1, members.len());
    let chosen = rand::seq::index::sample(rng, members.len(), k);
    let parent_idx = chosen
        .iter()
        .map(|i| members[i])
        .min_by(|&a, &b| {
            records[a]
                .val_logloss
                .total_cmp(&records[b].val_logloss)
                .then(records[a].birth_index.cmp(&records[b].birth_index))
        })
        .unwrap();
    let parent = &records[parent_idx];

    let mut last: Option<Architecture> = None;
    for _ in 0..retries {
        let Ok(candidate) = mutate_with(&parent.arch, rng, opts) else {
            continue;
        };
        if let Ok(encoded) = crate::search_space::encode(&candidate) {
            if state.satisfies(encoded.as_slice(), path) {
                return Rollout {
                    candidate,
                    parent_birth: Some(parent.birth_index),
                    constrained: true,
                };
            }
        }
        last = Some(candidate);
    }
    Rollout {
        candidate: last.unwrap_or_else(|| random_arch_with(rng, opts)),
        parent_birth: Some(parent.birth_index),
        constrained: false,
    }
}

/// The full baseline: evaluate `init_size` random architectures, fit the
/// initial partition, then loop UCB selection, evolutionary rollout, and
/// evaluation with virtual-loss padding for in-flight candidates,
/// refitting the tree every `refit_every` completed evaluations.
pub fn lanas_search(
    evaluator: Arc<dyn ArchEvaluator>,
    config: &LanasConfig,
    run_seed: u64,
) -> Result<SearchResult> {
    lanas_search_with_sink(evaluator, config, run_seed, None)
}

pub fn lanas_search_with_sink(
    evaluator: Arc<dyn ArchEvaluator>,
    config: &LanasConfig,
    run_seed: u64,
    mut sink: Option<RecordSink<'_>>,
) -> Result<SearchResult> {
    if config.budget < config.init_size || config.init_size == 0 {
        return Err(Error::ShapeMismatch(format!(
            "need budget >= init_size >= 1, got {} and {}",
            config.budget, config.init_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    let pool = EvalPool::new(evaluator, config.workers);
    let workers = config.workers.max(1);

    // Initialization phase.
    let mut log: Vec<EvalRecord> = Vec::with_capacity(config.budget);
    let mut timings_ms = Vec::with_capacity(config.budget);
    let mut dispatched = 0usize;
    let mut in_flight = 0usize;
    while dispatched < config.init_size || in_flight > 0 {
        if in_flight < workers && dispatched < config.init_size {
            let arch = random_arch_with(&mut rng, &config.space);
            pool.submit(EvalJob {
                dispatch_index: dispatched,
                arch,
                seed: derive_seed(run_seed, dispatched),
            });
            dispatched += 1;
            in_flight += 1;
        } else {
            let result = pool.recv();
            in_flight -= 1;
            let birth = log.len();
            let duration = result.duration_ms;
            let record = EvalRecord::from_job_result(result, birth);
            if let Some(sink) = sink.as_mut() {
                sink(&record, duration);
            }
            timings_ms.push(duration);
            log.push(record);
        }
    }
    if log.iter().all(EvalRecord::is_failed) {
        return Err(Error::InitFailed);
    }

    let mut state = TreeState::new(fit_tree(&log, config.depth, config.ridge)?);
    let mut slot_of_dispatch: HashMap<usize, u64> = HashMap::new();
    let mut completed_post_init = 0usize;

    while log.len() < config.budget {
        while in_flight < workers && dispatched < config.budget {
            let path = state.select_leaf(config.ucb_c);
            let rollout = rollout_evolutionary(
                &state,
                &log,
                &path,
                &mut rng,
                &config.space,
                config.rollout_retries,
                config.candidate_fraction,
            );
            let slot = state.virtual_backprop(&path);
            slot_of_dispatch.insert(dispatched, slot);
            pool.submit(EvalJob {
                dispatch_index: dispatched,
                arch: rollout.candidate,
                seed: derive_seed(run_seed, dispatched),
            });
            dispatched += 1;
            in_flight += 1;
        }
        let result = pool.recv();
        in_flight -= 1;
        let slot = slot_of_dispatch
            .remove(&result.dispatch_index)
            .expect("every dispatch registers a slot");
        let nodes = state.clear_virtual(slot)?;
        let birth = log.len();
        let duration = result.duration_ms;
        let record = EvalRecord::from_job_result(result, birth);
        if !record.is_failed() {
            state.real_backprop(&nodes, record.val_logloss);
        }
        if let Some(sink) = sink.as_mut() {
            sink(&record, duration);
        }
        timings_ms.push(duration);
        log.push(record);
        completed_post_init += 1;
        if completed_post_init % config.refit_every == 0 && log.len() < config.budget {
            state.refit(fit_tree(&log, config.depth, config.ridge)?);
        }
    }

    let mut curve = Vec::with_capacity(log.len());
    let mut best_so_far = f64::INFINITY;
    let mut best: Option<&EvalRecord> = None;
    for r in &log {
        if r.val_logloss < best_so_far {
            best_so_far = r.val_logloss;
            best = Some(r);
        }
        curve.push(best_so_far);
    }
    let best = best.ok_or(Error::InitFailed)?.clone();
    Ok(SearchResult {
        log,
        best,
        curve,
        timings_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::OracleEvaluator;
    use crate::search_space::{encode, preset, random_arch, PresetName};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn record(arch: Architecture, logloss: f64, birth: usize) -> EvalRecord {
        EvalRecord {
            arch,
            val_logloss: logloss,
            val_auc: 0.5,
            flops: 1,
            n_params: 1,
            birth_index: birth,
            seed: 0,
        }
    }

    #[test]
    fn ridge_matches_analytic_two_feature_solution() {
        // Centered normal equations in two dimensions, solved by hand:
        // features (0,0), (1,0), (0,1), (1,1); y = 2 x0 - x1 + 1.
        let features: Vec<Vec<f64>> = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
        ];
        let y = [1.0, 3.0, 0.0, 2.0];
        let alpha = 0.1;
        let refs: Vec<&[f64]> = features.iter().map(Vec::as_slice).collect();
        let model = RidgeModel::fit(&refs, &y, alpha).unwrap();
        // Xc'Xc = I (after centering each column has variance 1), so
        // w = Xc'y / (1 + alpha).
        assert!((model.weights[0] - 2.0 / 1.1).abs() < 1e-9);
        assert!((model.weights[1] - (-1.0) / 1.1).abs() < 1e-9);

        // Huge regularization shrinks weights toward zero and the
        // intercept toward the target mean.
        let heavy = RidgeModel::fit(&refs, &y, 1e9).unwrap();
        assert!(heavy.weights.iter().all(|w| w.abs() < 1e-6));
        assert!((heavy.intercept - 1.5).abs() < 1e-6);
    }

    #[test]
    fn root_regressor_recovers_planted_slope() {
        // Logloss linear in the block-1 units ordinal with negative slope.
        let mut r = rng(3);
        let mut records = Vec::new();
        let mut birth = 0;
        while records.len() < 120 {
            let arch = random_arch(&mut r, true);
            let Ok(vec) = encode(&arch) else { continue };
            let c = vec.as_slice()[14];
            records.push(record(arch, 0.6 - 0.02 * c, birth));
            birth += 1;
        }
        let tree = fit_tree(&records, 5, 0.1).unwrap();
        let root = tree.nodes[0].regressor.as_ref().unwrap();
        assert!(root.weights[14] < 0.0, "slope {}", root.weights[14]);

        // Partition property: leaf members cover every finite record once.
        let total: usize = tree.leaf_member_counts().iter().sum();
        assert_eq!(total, records.len());
        let mut seen = vec![false; records.len()];
        for leaf in tree.first_leaf()..tree.nodes.len() {
            for &m in &tree.nodes[leaf].members {
                assert!(!seen[m], "record {m} in two leaves");
                seen[m] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    fn manual_tree() -> PartitionTree {
        // Depth-1 tree with hand-set statistics.
        let mut nodes = vec![PartitionNode::default(); 3];
        nodes[0].visits = 10.0;
        nodes[0].loss_sum = 5.0;
        nodes[1].visits = 6.0;
        nodes[1].loss_sum = 3.6; // mean 0.6
        nodes[2].visits = 4.0;
        nodes[2].loss_sum = 1.6; // mean 0.4
        PartitionTree { depth: 1, nodes }
    }

    #[test]
    fn ucb_selection_matches_hand_computation() {
        let state = TreeState::new(manual_tree());
        // c = 0: pure exploitation picks the lower-mean right child.
        let path = state.select_leaf(0.0);
        assert_eq!(path.nodes, vec![0, 2]);
        // Hand UCB at c = 0.5:
        // left:  -0.6 + 0.5 * sqrt(2 ln 10 / 6) = -0.6 + 0.4380...
        // right: -0.4 + 0.5 * sqrt(2 ln 10 / 4) = -0.4 + 0.5365...
        let path = state.select_leaf(0.5);
        assert_eq!(path.nodes, vec![0, 2]);
        // Large exploration with a massively visited right child flips to
        // the left.
        let mut tree = manual_tree();
        tree.nodes[2].visits = 10_000.0;
        tree.nodes[2].loss_sum = 4_000.0;
        tree.nodes[0].visits = 10_006.0;
        tree.nodes[0].loss_sum = 4_003.6;
        let state = TreeState::new(tree);
        let path = state.select_leaf(0.5);
        assert_eq!(path.nodes, vec![0, 1]);
    }

    #[test]
    fn unvisited_child_and_ties_prefer_documented_order() {
        // Unvisited right child scores infinity.
        let mut tree = manual_tree();
        tree.nodes[2].visits = 0.0;
        tree.nodes[2].loss_sum = 0.0;
        tree.nodes[2].members.clear();
        let state = TreeState::new(tree);
        assert_eq!(state.select_leaf(0.5).nodes, vec![0, 2]);

        // All-equal statistics walk the leftmost path.
        let mut nodes = vec![PartitionNode::default(); 7];
        for n in &mut nodes {
            n.visits = 4.0;
            n.loss_sum = 2.0;
        }
        let state = TreeState::new(PartitionTree { depth: 2, nodes });
        assert_eq!(state.select_leaf(0.5).nodes, vec![0, 1, 3]);
    }

    #[test]
    fn virtual_loss_accounting() {
        let mut state = TreeState::new(manual_tree());
        let path = state.select_leaf(0.5);
        let before: Vec<(f64, f64)> = (0..3).map(|n| (state.tree.nodes[n].visits, state.tree.nodes[n].loss_sum)).collect();

        // Virtual then clear with the real loss equal to the padding is
        // identical to a single real backprop.
        let slot = state.virtual_backprop(&path);
        let leaf = *path.nodes.last().unwrap();
        let virtual_value = state.tree.nodes[leaf].loss_sum / state.tree.nodes[leaf].visits;
        // While outstanding, effective counts exceed the real ones by one
        // along the path.
        for &n in &path.nodes {
            let (v, _) = state.effective(n);
            assert_eq!(v, state.tree.nodes[n].visits + 1.0);
        }
        let nodes = state.clear_virtual(slot).unwrap();
        state.real_backprop(&nodes, virtual_value);
        let mut serial = TreeState::new(manual_tree());
        serial.real_backprop(&path.nodes, virtual_value);
        for n in 0..3 {
            assert_eq!(state.tree.nodes[n].visits, serial.tree.nodes[n].visits);
            assert_eq!(state.tree.nodes[n].loss_sum, serial.tree.nodes[n].loss_sum);
        }
        let _ = before;

        // Double clear errors.
        assert!(matches!(
            state.clear_virtual(slot),
            Err(Error::UnknownSlot(_))
        ));

        // N outstanding slots: effective visits exceed real by exactly N.
        let p1 = state.select_leaf(0.5);
        let s1 = state.virtual_backprop(&p1);
        let p2 = state.select_leaf(0.5);
        let s2 = state.virtual_backprop(&p2);
        let (v, _) = state.effective(0);
        assert_eq!(v, state.tree.nodes[0].visits + 2.0);
        state.clear_virtual(s1).unwrap();
        state.clear_virtual(s2).unwrap();
        assert_eq!(state.outstanding_slots(), 0);
    }

    #[test]
    fn rollout_respects_constraints_and_small_leaves() {
        let mut r = rng(5);
        let mut records = Vec::new();
        for birth in 0..80 {
            records.push(record(
                random_arch(&mut r, true),
                0.4 + (birth as f64) * 0.002,
                birth,
            ));
        }
        let tree = fit_tree(&records, 3, 0.1).unwrap();
        let state = TreeState::new(tree);
        let path = state.select_leaf(0.5);
        for _ in 0..30 {
            let rollout = rollout_evolutionary(
                &state,
                &records,
                &path,
                &mut r,
                &SpaceOptions::default(),
                50,
                0.5,
            );
            if rollout.constrained {
                let encoded = encode(&rollout.candidate).unwrap();
                assert!(state.satisfies(encoded.as_slice(), &path));
            }
        }

        // A single-member leaf always mutates that record.
        let single = vec![record(preset(PresetName::DlrmLike), 0.5, 0)];
        let mut nodes = vec![PartitionNode::default(); 3];
        nodes[1].members = vec![0];
        nodes[1].visits = 1.0;
        nodes[1].loss_sum = 0.5;
        nodes[0].visits = 1.0;
        nodes[0].loss_sum = 0.5;
        let state = TreeState::new(PartitionTree { depth: 1, nodes });
        let path = SelectedPath {
            nodes: vec![0, 1],
            constraints: vec![(0, Side::Left)],
        };
        let rollout = rollout_evolutionary(
            &state,
            &single,
            &path,
            &mut r,
            &SpaceOptions::default(),
            50,
            0.5,
        );
        assert_eq!(rollout.parent_birth, Some(0));
        // No regressor on the path: the first mutation is accepted.
        assert!(rollout.constrained);
    }

    #[test]
    fn lanas_search_replays_and_respects_budget() {
        let evaluator = Arc::new(OracleEvaluator::with_default_spec());
        let config = LanasConfig {
            init_size: 20,
            budget: 50,
            refit_every: 10,
            workers: 1,
            ..LanasConfig::default()
        };
        let a = lanas_search(Arc::clone(&evaluator) as _, &config, 11).unwrap();
        let b = lanas_search(evaluator as _, &config, 11).unwrap();
        assert_eq!(a.log.len(), 50);
        assert_eq!(
            serde_json::to_string(&a.log).unwrap(),
            serde_json::to_string(&b.log).unwrap()
        );
        assert!(a.curve.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn tree_snapshot_roundtrips_as_json() {
        let mut r = rng(7);
        let records: Vec<EvalRecord> = (0..30)
            .map(|b| record(random_arch(&mut r, true), 0.4 + b as f64 * 0.01, b))
            .collect();
        let tree = fit_tree(&records, 2, 0.1).unwrap();
        let json = tree.to_json();
        let back: PartitionTree = serde_json::from_str(&json).unwrap();
        assert_eq!(back.depth, tree.depth);
        assert_eq!(back.leaf_member_counts(), tree.leaf_member_counts());
    }
}

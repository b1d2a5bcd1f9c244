//! The learning-to-rank surrogate guiding mutation: a gradient-boosted
//! tree ensemble trained with pairwise lambda pseudo-gradients on encoded
//! architectures, plus the regression-mode variant used in ablations and
//! for block-importance extraction.

pub mod tree;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::EvalRecord;
use crate::metrics::{ndcg_at_k, relevance_grade};
use crate::search_space::{coordinate_label, encode, Architecture, VEC_LEN};
use tree::{fit_tree, Tree};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GuiderConfig {
    pub max_rounds: usize,
    pub max_leaves: usize,
    pub shrinkage: f64,
    pub min_leaf: usize,
    /// Fraction of records held out for early stopping.
    pub holdout_frac: f64,
    /// Boosting rounds without holdout improvement before stopping.
    pub patience: usize,
    /// Position cutoff for the |delta NDCG| pair weights; positions
    /// beyond it carry zero discount. The full-list default keeps
    /// gradient flowing to deep pairs, which a short cutoff provably
    /// starves once the top of the list saturates.
    pub ndcg_truncation: usize,
    /// NDCG cutoff of the early-stop metric.
    pub ndcg_eval_k: usize,
    pub sigma: f64,
    /// Seed of the holdout split.
    pub seed: u64,
}

impl Default for GuiderConfig {
    fn default() -> Self {
        GuiderConfig {
            max_rounds: 100,
            max_leaves: 31,
            shrinkage: 0.1,
            min_leaf: 5,
            holdout_frac: 0.2,
            patience: 10,
            ndcg_truncation: usize::MAX,
            ndcg_eval_k: 3,
            sigma: 1.0,
            seed: 0,
        }
    }
}

/// One global query group of encoded architectures with integer relevance
/// grades (higher is better, 0..=31).
#[derive(Debug, Clone)]
pub struct RankTrainingSet {
    pub features: Vec<Vec<f64>>,
    pub relevance: Vec<u32>,
}

impl RankTrainingSet {
    pub fn distinct_grades(&self) -> usize {
        let mut seen = [false; 32];
        for &g in &self.relevance {
            seen[g.min(31) as usize] = true;
        }
        seen.iter().filter(|&&s| s).count()
    }
}

/// Converts evaluation records into the guider's training set: records
/// sorted by validation logloss get 32-bucket grades, the best grade 31.
/// Records tied on logloss share a grade (their rank is the shared
/// minimum), so an all-tied log yields a single grade and rank training
/// then fails with a degenerate-labels error.
pub fn make_relevance(records: &[EvalRecord]) -> Result<RankTrainingSet> {
    let mut finite: Vec<&EvalRecord> = records.iter().filter(|r| !r.is_failed()).collect();
    if finite.len() < 2 {
        return Err(Error::TooFewRecords {
            got: finite.len(),
            need: 2,
        });
    }
    finite.sort_by(|a, b| {
        a.val_logloss
            .total_cmp(&b.val_logloss)
            .then(a.birth_index.cmp(&b.birth_index))
    });
    let n = finite.len();
    let mut features = Vec::with_capacity(n);
    let mut relevance = Vec::with_capacity(n);
    let mut shared_rank = 0usize;
    for (pos, record) in finite.iter().enumerate() {
        if pos > 0 && record.val_logloss != finite[pos - 1].val_logloss {
            shared_rank = pos;
        }
        features.push(encode(&record.arch)?.into_vec());
        relevance.push(relevance_grade(shared_rank, n));
    }
    Ok(RankTrainingSet {
        features,
        relevance,
    })
}

/// A boosted tree ensemble: prediction is
/// `base_score + shrinkage * sum of tree outputs`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GuiderModel {
    pub trees: Vec<Tree>,
    pub shrinkage: f64,
    pub base_score: f64,
    /// Accumulated split gain per encoded coordinate, over kept trees.
    pub feature_gain: Vec<f64>,
}

impl GuiderModel {
    pub fn constant(base_score: f64, shrinkage: f64) -> Self {
        GuiderModel {
            trees: Vec::new(),
            shrinkage,
            base_score,
            feature_gain: vec![0.0; VEC_LEN],
        }
    }

    pub fn score_features(&self, x: &[f64]) -> f64 {
        self.base_score
            + self.shrinkage * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn score_arch(&self, arch: &Architecture) -> Result<f64> {
        Ok(self.score_features(encode(arch)?.as_slice()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("guider serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Anything that scores architectures for offspring selection; only the
/// argmax is ever consumed.
pub trait ArchScorer {
    fn score(&self, archs: &[Architecture]) -> Result<Vec<f64>>;
}

impl ArchScorer for GuiderModel {
    fn score(&self, archs: &[Architecture]) -> Result<Vec<f64>> {
        archs.iter().map(|a| self.score_arch(a)).collect()
    }
}

fn holdout_split(n: usize, cfg: &GuiderConfig) -> (Vec<usize>, Vec<usize>) {
    let holdout_size = ((n as f64) * cfg.holdout_frac).floor() as usize;
    if holdout_size == 0 || n - holdout_size < 2 {
        return ((0..n).collect(), Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng);
    let holdout = indices[..holdout_size].to_vec();
    let train = indices[holdout_size..].to_vec();
    (train, holdout)
}

/// Ranks `scores` descending with index tiebreak and reads off the
/// relevance grades in that predicted order.
fn predicted_order_relevance(scores: &[f64], relevance: &[u32], subset: &[usize]) -> Vec<f64> {
    let mut order: Vec<usize> = subset.to_vec();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.iter().map(|&i| relevance[i] as f64).collect()
}

/// Replaces each leaf's least-squares value with the Newton step
/// `sum of member lambdas / sum of member curvatures`, the standard
/// boosted-ranking leaf update.
fn newton_leaf_values(
    tree: &mut Tree,
    features: &[Vec<f64>],
    lambdas: &[f64],
    hessians: &[f64],
    subset: &[usize],
) {
    use tree::TreeNode;
    let mut leaf_of: Vec<usize> = Vec::with_capacity(subset.len());
    for &i in subset {
        let mut node = 0usize;
        loop {
            match &tree.nodes[node] {
                TreeNode::Leaf { .. } => break,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    node = if features[i][*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
        leaf_of.push(node);
    }
    let n_nodes = tree.nodes.len();
    let mut num = vec![0.0; n_nodes];
    let mut den = vec![0.0; n_nodes];
    for (pos, &i) in subset.iter().enumerate() {
        num[leaf_of[pos]] += lambdas[i];
        den[leaf_of[pos]] += hessians[i];
    }
    for (node_idx, node) in tree.nodes.iter_mut().enumerate() {
        if let TreeNode::Leaf { value } = node {
            if den[node_idx] > 1e-12 {
                *value = num[node_idx] / den[node_idx];
            }
        }
    }
}

/// Pairwise lambda pseudo-gradients, one per training record. For a pair
/// `(i, j)` with `rel_i > rel_j` the push is
/// `sigma / (1 + exp(sigma * (s_i - s_j))) * |delta NDCG@T|`,
/// added to record `i` and subtracted from record `j`; positions beyond
/// the truncation contribute zero discount.
fn lambda_gradients(
    scores: &[f64],
    relevance: &[u32],
    subset: &[usize],
    cfg: &GuiderConfig,
) -> (Vec<f64>, Vec<f64>) {
    let n = scores.len();
    let mut order: Vec<usize> = subset.to_vec();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut position = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        position[i] = pos + 1;
    }
    let discount = |pos: usize| -> f64 {
        if pos <= cfg.ndcg_truncation {
            1.0 / ((pos + 1) as f64).log2()
        } else {
            0.0
        }
    };
    // Ideal DCG at the truncation over the subset's grades.
    let mut ideal: Vec<f64> = subset.iter().map(|&i| relevance[i] as f64).collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let max_dcg: f64 = ideal
        .iter()
        .take(cfg.ndcg_truncation)
        .enumerate()
        .map(|(i, &r)| (r.exp2() - 1.0) * discount(i + 1))
        .sum();
    let mut lambdas = vec![0.0; n];
    let mut hessians = vec![0.0; n];
    if max_dcg == 0.0 {
        return (lambdas, hessians);
    }
    for (a, &i) in subset.iter().enumerate() {
        for &j in &subset[a + 1..] {
            let (hi, lo) = match relevance[i].cmp(&relevance[j]) {
                std::cmp::Ordering::Greater => (i, j),
                std::cmp::Ordering::Less => (j, i),
                std::cmp::Ordering::Equal => continue,
            };
            let gain_diff =
                ((relevance[hi] as f64).exp2() - (relevance[lo] as f64).exp2()).abs();
            let disc_diff = (discount(position[hi]) - discount(position[lo])).abs();
            let delta = gain_diff * disc_diff / max_dcg;
            if delta == 0.0 {
                continue;
            }
            let rho = 1.0 / (1.0 + (cfg.sigma * (scores[hi] - scores[lo])).exp());
            let push = cfg.sigma * rho * delta;
            lambdas[hi] += push;
            lambdas[lo] -= push;
            let curvature = cfg.sigma * cfg.sigma * rho * (1.0 - rho) * delta;
            hessians[hi] += curvature;
            hessians[lo] += curvature;
        }
    }
    (lambdas, hessians)
}

fn assemble(trees: Vec<Tree>, base_score: f64, cfg: &GuiderConfig) -> GuiderModel {
    let mut feature_gain = vec![0.0; VEC_LEN];
    for t in &trees {
        t.accumulate_gains(&mut feature_gain);
    }
    GuiderModel {
        trees,
        shrinkage: cfg.shrinkage,
        base_score,
        feature_gain,
    }
}

/// Boosted LambdaRank: each round one tree is structured by a
/// least-squares fit to the aggregated lambdas, its leaf values replaced
/// by the Newton step (leaf lambda sum over leaf curvature sum), and
/// added with shrinkage; a 20% holdout stops training once NDCG at the
/// configured cutoff fails to improve for `patience` rounds.
pub fn train_rank_guider(set: &RankTrainingSet, cfg: &GuiderConfig) -> Result<GuiderModel> {
    let n = set.features.len();
    if n < 2 {
        return Err(Error::TooFewRecords { got: n, need: 2 });
    }
    if set.distinct_grades() < 2 {
        return Err(Error::DegenerateLabels);
    }
    let (train_idx, holdout_idx) = holdout_split(n, cfg);
    // The holdout draw can strip the training side of grade diversity.
    let (train_idx, holdout_idx) = {
        let grades: std::collections::HashSet<u32> =
            train_idx.iter().map(|&i| set.relevance[i]).collect();
        if grades.len() < 2 {
            ((0..n).collect(), Vec::new())
        } else {
            (train_idx, holdout_idx)
        }
    };

    let mut scores = vec![0.0; n];
    let mut trees: Vec<Tree> = Vec::new();
    let mut best_metric = f64::NEG_INFINITY;
    let mut stale = 0usize;

    for _round in 0..cfg.max_rounds {
        let (lambdas, hessians) = lambda_gradients(&scores, &set.relevance, &train_idx, cfg);
        let mut tree = fit_tree(
            &set.features,
            &lambdas,
            &train_idx,
            cfg.max_leaves,
            cfg.min_leaf,
        );
        newton_leaf_values(&mut tree, &set.features, &lambdas, &hessians, &train_idx);
        for i in 0..n {
            scores[i] += cfg.shrinkage * tree.predict(&set.features[i]);
        }
        trees.push(tree);
        if holdout_idx.is_empty() {
            continue;
        }
        let rels = predicted_order_relevance(&scores, &set.relevance, &holdout_idx);
        let metric = ndcg_at_k(&rels, cfg.ndcg_eval_k);
        // The cutoff metric is coarse and can plateau early; matching the
        // best counts as holding steady rather than failing to improve.
        if metric >= best_metric {
            best_metric = metric;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(assemble(trees, 0.0, cfg))
}

/// Least-squares boosting on `-val_logloss` (higher score is better),
/// with the same tree machinery and a holdout MSE stop.
pub fn train_regression_guider(records: &[EvalRecord], cfg: &GuiderConfig) -> Result<GuiderModel> {
    let finite: Vec<&EvalRecord> = records.iter().filter(|r| !r.is_failed()).collect();
    if finite.len() < 2 {
        return Err(Error::TooFewRecords {
            got: finite.len(),
            need: 2,
        });
    }
    let features: Vec<Vec<f64>> = finite
        .iter()
        .map(|r| Ok(encode(&r.arch)?.into_vec()))
        .collect::<Result<_>>()?;
    let targets: Vec<f64> = finite.iter().map(|r| -r.val_logloss).collect();
    let n = targets.len();
    let (train_idx, holdout_idx) = holdout_split(n, cfg);

    let base: f64 = train_idx.iter().map(|&i| targets[i]).sum::<f64>() / train_idx.len() as f64;
    let mut preds = vec![base; n];
    let mut trees: Vec<Tree> = Vec::new();
    let mut best_rounds = 0usize;
    let mut best_mse = f64::INFINITY;
    let mut stale = 0usize;

    for _round in 0..cfg.max_rounds {
        let residuals: Vec<f64> = (0..n).map(|i| targets[i] - preds[i]).collect();
        let tree = fit_tree(
            &features,
            &residuals,
            &train_idx,
            cfg.max_leaves,
            cfg.min_leaf,
        );
        for i in 0..n {
            preds[i] += cfg.shrinkage * tree.predict(&features[i]);
        }
        trees.push(tree);
        if holdout_idx.is_empty() {
            best_rounds = trees.len();
            continue;
        }
        let mse: f64 = holdout_idx
            .iter()
            .map(|&i| (targets[i] - preds[i]).powi(2))
            .sum::<f64>()
            / holdout_idx.len() as f64;
        if mse <= best_mse {
            best_mse = mse;
            best_rounds = trees.len();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    trees.truncate(best_rounds);
    Ok(assemble(trees, base, cfg))
}

/// Deterministic batch scoring; consumers only use the argmax.
pub fn score(model: &GuiderModel, archs: &[Architecture]) -> Result<Vec<f64>> {
    model.score(archs)
}

/// Top coordinates by normalized split gain, labeled in the `id_type`
/// style (block index plus segment). An untrained model yields an empty
/// ranking.
pub fn feature_importance(model: &GuiderModel, top_k: usize) -> Vec<(String, f64)> {
    let total: f64 = model.feature_gain.iter().sum();
    if total <= 0.0 {
        return Vec::new();
    }
    let mut ranked: Vec<(usize, f64)> = model
        .feature_gain
        .iter()
        .enumerate()
        .filter(|(_, &g)| g > 0.0)
        .map(|(i, &g)| (i, g / total))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
        .into_iter()
        .take(top_k)
        .map(|(i, g)| (coordinate_label(i), g))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::tree::TreeNode;
    use crate::metrics::kendall_tau_b;
    use crate::search_space::{preset, random_arch, PresetName};
    use rand::Rng;

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

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn make_relevance_grades() {
        let mut r = rng(1);
        let two: Vec<EvalRecord> = (0..2)
            .map(|i| record(random_arch(&mut r, true), 0.4 + i as f64 * 0.1, i))
            .collect();
        let set = make_relevance(&two).unwrap();
        assert_eq!(set.relevance, vec![31, 15]);

        let thirty_two: Vec<EvalRecord> = (0..32)
            .map(|i| record(random_arch(&mut r, true), 0.3 + i as f64 * 0.01, i))
            .collect();
        let set = make_relevance(&thirty_two).unwrap();
        let expected: Vec<u32> = (0..32).rev().collect();
        assert_eq!(set.relevance, expected);

        // All-equal logloss collapses to a single shared grade, which the
        // trainer then rejects as degenerate.
        let tied: Vec<EvalRecord> = (0..5)
            .map(|i| record(random_arch(&mut r, true), 0.5, i))
            .collect();
        let set = make_relevance(&tied).unwrap();
        assert!(set.relevance.iter().all(|&g| g == 31));
        assert!(matches!(
            train_rank_guider(&set, &GuiderConfig::default()),
            Err(Error::DegenerateLabels)
        ));

        assert!(matches!(
            make_relevance(&two[..1]),
            Err(Error::TooFewRecords { .. })
        ));
    }

    /// Synthetic feature vectors with relevance a strictly monotone
    /// function of one ordinal coordinate.
    fn monotone_set(n: usize, coord: usize, seed: u64) -> RankTrainingSet {
        let mut r = rng(seed);
        let mut features = Vec::with_capacity(n);
        let mut relevance = Vec::with_capacity(n);
        for _ in 0..n {
            let mut x = vec![0.0; VEC_LEN];
            for v in x.iter_mut() {
                *v = f64::from(r.gen_range(0..2) as u8);
            }
            let c = r.gen_range(0..7) as f64;
            x[coord] = c;
            features.push(x);
            relevance.push((c as u32) * 5);
        }
        RankTrainingSet {
            features,
            relevance,
        }
    }

    #[test]
    fn rank_guider_learns_a_monotone_coordinate() {
        let set = monotone_set(300, 14, 3);
        let model = train_rank_guider(&set, &GuiderConfig::default()).unwrap();
        // A held-out strictly monotone sequence, one point per ordinal
        // value, must be ordered correctly.
        let mut holdout = Vec::new();
        for c in 0..7 {
            let mut x = vec![0.0; VEC_LEN];
            x[14] = c as f64;
            holdout.push(x);
        }
        let scores: Vec<f64> = holdout.iter().map(|x| model.score_features(x)).collect();
        let truth: Vec<f64> = (0..7).map(|c| c as f64).collect();
        let tau = kendall_tau_b(&truth, &scores).unwrap();
        assert!(tau >= 0.9, "tau {tau}");
    }

    #[test]
    fn rank_guider_perfect_ndcg_on_separable_set() {
        // One coordinate perfectly orders relevance; holdout NDCG@3
        // reaches 1 because every top-grade record shares the coordinate.
        let set = monotone_set(300, 29, 7);
        let cfg = GuiderConfig::default();
        let model = train_rank_guider(&set, &cfg).unwrap();
        let (_, holdout_idx) = holdout_split(set.features.len(), &cfg);
        let scores: Vec<f64> = set
            .features
            .iter()
            .map(|x| model.score_features(x))
            .collect();
        let rels = predicted_order_relevance(&scores, &set.relevance, &holdout_idx);
        let ndcg = ndcg_at_k(&rels, 3);
        assert!(
            (ndcg - 1.0).abs() < 1e-12,
            "holdout ndcg@3 {ndcg} below perfect"
        );
    }

    #[test]
    fn zero_rounds_is_a_constant_scorer() {
        let set = monotone_set(50, 14, 9);
        let cfg = GuiderConfig {
            max_rounds: 0,
            ..GuiderConfig::default()
        };
        let model = train_rank_guider(&set, &cfg).unwrap();
        assert!(model.trees.is_empty());
        let scores: Vec<f64> = set.features.iter().map(|x| model.score_features(x)).collect();
        assert!(scores.iter().all(|&s| s == scores[0]));
    }

    #[test]
    fn argmax_invariant_under_monotone_transforms() {
        let set = monotone_set(200, 14, 11);
        let model = train_rank_guider(&set, &GuiderConfig::default()).unwrap();
        let scores: Vec<f64> = set.features.iter().map(|x| model.score_features(x)).collect();
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .unwrap()
                .0
        };
        let shifted: Vec<f64> = scores.iter().map(|s| 3.0 * s + 17.0).collect();
        assert_eq!(argmax(&scores), argmax(&shifted));
    }

    #[test]
    fn regression_guider_constant_and_linear_targets() {
        let mut r = rng(13);
        let constant: Vec<EvalRecord> = (0..20)
            .map(|i| record(random_arch(&mut r, true), 0.5, i))
            .collect();
        let cfg = GuiderConfig::default();
        let model = train_regression_guider(&constant, &cfg).unwrap();
        let arch = preset(PresetName::DlrmLike);
        assert!((model.score_arch(&arch).unwrap() - (-0.5)).abs() < 1e-9);

        // Targets linear in the block-1 units ordinal: holdout R^2 > 0.9.
        let mut records = Vec::new();
        let mut i = 0;
        while records.len() < 300 {
            let arch = random_arch(&mut r, true);
            let Ok(vec) = encode(&arch) else { continue };
            let c = vec.as_slice()[14];
            records.push(record(arch, 0.6 - 0.03 * c, i));
            i += 1;
        }
        let model = train_regression_guider(&records, &cfg).unwrap();
        let (_, holdout_idx) = holdout_split(records.len(), &cfg);
        let targets: Vec<f64> = records.iter().map(|rec| -rec.val_logloss).collect();
        let preds: Vec<f64> = records
            .iter()
            .map(|rec| model.score_arch(&rec.arch).unwrap())
            .collect();
        let mean: f64 =
            holdout_idx.iter().map(|&i| targets[i]).sum::<f64>() / holdout_idx.len() as f64;
        let ss_tot: f64 = holdout_idx.iter().map(|&i| (targets[i] - mean).powi(2)).sum();
        let ss_res: f64 = holdout_idx
            .iter()
            .map(|&i| (targets[i] - preds[i]).powi(2))
            .sum();
        let r2 = 1.0 - ss_res / ss_tot;
        assert!(r2 > 0.9, "holdout r^2 {r2}");
    }

    #[test]
    fn ensemble_prediction_is_shrunken_tree_sum() {
        let set = monotone_set(100, 14, 15);
        let model = train_rank_guider(&set, &GuiderConfig::default()).unwrap();
        let x = &set.features[0];
        let manual: f64 = model.base_score
            + model.shrinkage * model.trees.iter().map(|t| t.predict(x)).sum::<f64>();
        assert_eq!(model.score_features(x), manual);
    }

    #[test]
    fn score_matches_recursive_tree_walk_oracle() {
        fn walk(tree: &Tree, node: usize, x: &[f64]) -> f64 {
            match &tree.nodes[node] {
                TreeNode::Leaf { value } => *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    if x[*feature] <= *threshold {
                        walk(tree, *left, x)
                    } else {
                        walk(tree, *right, x)
                    }
                }
            }
        }
        let set = monotone_set(200, 14, 17);
        let model = train_rank_guider(&set, &GuiderConfig::default()).unwrap();
        let mut r = rng(18);
        for _ in 0..100 {
            let arch = random_arch(&mut r, true);
            let x = encode(&arch).unwrap().into_vec();
            let oracle: f64 = model.base_score
                + model.shrinkage
                    * model.trees.iter().map(|t| walk(t, 0, &x)).sum::<f64>();
            assert!((model.score_features(&x) - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let set = monotone_set(150, 14, 19);
        let cfg = GuiderConfig::default();
        let a = train_rank_guider(&set, &cfg).unwrap();
        let b = train_rank_guider(&set, &cfg).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn gain_accounting_matches_tree_nodes() {
        let set = monotone_set(200, 14, 21);
        let model = train_rank_guider(&set, &GuiderConfig::default()).unwrap();
        let mut recomputed = vec![0.0; VEC_LEN];
        for t in &model.trees {
            for node in &t.nodes {
                if let TreeNode::Split { feature, gain, .. } = node {
                    recomputed[*feature] += gain;
                }
            }
        }
        assert_eq!(model.feature_gain, recomputed);
    }

    #[test]
    fn importance_concentrates_on_the_driving_coordinate() {
        // Only the block-1 units ordinal varies, so every split must land
        // on it and its normalized gain is exactly 1.
        let mut r = rng(23);
        let n = 400;
        let mut features = Vec::with_capacity(n);
        let mut relevance = Vec::with_capacity(n);
        for _ in 0..n {
            let mut x = vec![0.0; VEC_LEN];
            let c = r.gen_range(0..7) as f64;
            x[14] = c;
            features.push(x);
            relevance.push((c as u32) * 5);
        }
        let set = RankTrainingSet {
            features,
            relevance,
        };
        let model = train_rank_guider(&set, &GuiderConfig::default()).unwrap();
        let importance = feature_importance(&model, VEC_LEN);
        let total: f64 = importance.iter().map(|(_, g)| g).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert_eq!(importance.len(), 1);
        assert_eq!(importance[0].0, "1_units");

        let untrained = GuiderModel::constant(0.0, 0.1);
        assert!(feature_importance(&untrained, 20).is_empty());
    }
}


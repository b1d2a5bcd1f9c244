//! Evaluation and rank-consistency mathematics: logloss, AUC, Kendall
//! tau-b with tie correction, NDCG with exponential gain, sliding-window
//! local consistency, and the deterministic synthetic architecture oracle
//! used by the searcher acceptance tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search_space::{validate, Architecture, BlockType};

/// Probability clamp used when computing logloss.
pub const PROB_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy with probabilities clamped to
/// `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub fn logloss(labels: &[u8], probs: &[f64]) -> Result<f64> {
    if labels.len() != probs.len() {
        return Err(Error::LengthMismatch(labels.len(), probs.len()));
    }
    if labels.is_empty() {
        return Err(Error::TooFewRecords { got: 0, need: 1 });
    }
    let mut sum = 0.0;
    for (&y, &p) in labels.iter().zip(probs) {
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        sum -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(sum / labels.len() as f64)
}

/// Area under the ROC curve as the Mann-Whitney statistic, computed from
/// the rank-sum with average ranks for prediction ties (half credit).
pub fn auc(labels: &[u8], probs: &[f64]) -> Result<f64> {
    if labels.len() != probs.len() {
        return Err(Error::LengthMismatch(labels.len(), probs.len()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClassAuc);
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && probs[order[j]] == probs[order[i]] {
            j += 1;
        }
        // Average 1-based rank over the tie group [i, j).
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let n_pos_f = n_pos as f64;
    Ok((rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64))
}

/// Pair classification backing Kendall tau-b: concordant, discordant,
/// tied in x only, tied in y only, and tied in both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankPairStats {
    pub concordant: u64,
    pub discordant: u64,
    pub ties_x: u64,
    pub ties_y: u64,
    pub ties_both: u64,
}

impl RankPairStats {
    pub fn total_pairs(&self) -> u64 {
        self.concordant + self.discordant + self.ties_x + self.ties_y + self.ties_both
    }

    /// Tau-b from the pair counts: `(P - Q) / sqrt((P+Q+T)(P+Q+U))`.
    pub fn tau_b(&self) -> Result<f64> {
        let p = self.concordant as f64;
        let q = self.discordant as f64;
        let d1 = p + q + self.ties_x as f64;
        let d2 = p + q + self.ties_y as f64;
        if d1 == 0.0 || d2 == 0.0 {
            return Err(Error::TauUndefined);
        }
        Ok((p - q) / (d1 * d2).sqrt())
    }
}

fn tie_group_pairs(sorted: &[f64]) -> u64 {
    let mut pairs = 0u64;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as u64;
        pairs += t * (t - 1) / 2;
        i = j;
    }
    pairs
}

/// Merge-sort inversion count: pairs `i < j` with `ys[i] > ys[j]`.
fn count_inversions(ys: &mut [f64]) -> u64 {
    let n = ys.len();
    let mut buf = vec![0.0; n];
    let mut inversions = 0u64;
    let mut width = 1;
    while width < n {
        let mut lo = 0;
        while lo + width < n {
            let mid = lo + width;
            let hi = (mid + width).min(n);
            let (mut a, mut b, mut k) = (lo, mid, lo);
            while a < mid && b < hi {
                if ys[a] <= ys[b] {
                    buf[k] = ys[a];
                    a += 1;
                } else {
                    buf[k] = ys[b];
                    inversions += (mid - a) as u64;
                    b += 1;
                }
                k += 1;
            }
            while a < mid {
                buf[k] = ys[a];
                a += 1;
                k += 1;
            }
            while b < hi {
                buf[k] = ys[b];
                b += 1;
                k += 1;
            }
            ys[lo..hi].copy_from_slice(&buf[lo..hi]);
            lo = hi;
        }
        width *= 2;
    }
    inversions
}

/// Classifies every pair of a bivariate sample in O(n log n): sort by
/// (x, y), count y-inversions for the discordant total, and derive the tie
/// classes from tie-group sizes.
pub fn pair_stats(x: &[f64], y: &[f64]) -> Result<RankPairStats> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len() as u64;
    if n < 2 {
        return Err(Error::TooFewRecords {
            got: x.len(),
            need: 2,
        });
    }
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let mut ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();

    let n0 = n * (n - 1) / 2;
    let n1 = tie_group_pairs(&xs);
    let mut ys_sorted = ys.clone();
    ys_sorted.sort_by(f64::total_cmp);
    let n2 = tie_group_pairs(&ys_sorted);
    // Joint (x, y) tie groups: the sort above already groups them.
    let mut n3 = 0u64;
    let mut i = 0;
    while i < xs.len() {
        let mut j = i;
        while j < xs.len() && xs[j] == xs[i] && ys[j] == ys[i] {
            j += 1;
        }
        let t = (j - i) as u64;
        n3 += t * (t - 1) / 2;
        i = j;
    }
    // Within an x-tie group ys are ascending, so inversions only count
    // pairs with strictly different x: exactly the discordant pairs.
    let discordant = count_inversions(&mut ys);
    // n1 + n2 = T + U + 2B never exceeds n0 + n3, so this stays in range.
    let concordant = n0 + n3 - n1 - n2 - discordant;
    Ok(RankPairStats {
        concordant,
        discordant,
        ties_x: n1 - n3,
        ties_y: n2 - n3,
        ties_both: n3,
    })
}

/// Kendall tau-b with tie correction, in [-1, 1].
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64> {
    pair_stats(x, y)?.tau_b()
}

/// NDCG at cutoff `k` with exponential gain `2^rel - 1`, over relevance
/// grades listed in predicted order. A zero ideal DCG (nothing to rank)
/// is defined as 1.
pub fn ndcg_at_k(relevance_by_predicted_order: &[f64], k: usize) -> f64 {
    assert!(k >= 1, "k must be at least 1");
    let dcg = |rels: &[f64]| -> f64 {
        rels.iter()
            .take(k)
            .enumerate()
            .map(|(i, &r)| (r.exp2() - 1.0) / ((i + 2) as f64).log2())
            .sum()
    };
    let actual = dcg(relevance_by_predicted_order);
    let mut ideal_order = relevance_by_predicted_order.to_vec();
    ideal_order.sort_by(|a, b| b.total_cmp(a));
    let ideal = dcg(&ideal_order);
    if ideal == 0.0 {
        1.0
    } else {
        actual / ideal
    }
}

/// One sliding-window point: the window's center index on the
/// ground-truth-sorted axis and the tau-b inside the window (`None` when
/// the window is degenerate, e.g. all-tied scores).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowPoint {
    pub center: usize,
    pub tau_b: Option<f64>,
}

/// Local rank consistency: tau-b inside each length-`window` slice of the
/// ground-truth-sorted score sequence. `ground_truth` must already be
/// sorted ascending with `estimated` aligned to it; the first window's
/// center is `window / 2`.
pub fn sliding_window_tau(
    ground_truth: &[f64],
    estimated: &[f64],
    window: usize,
) -> Result<Vec<WindowPoint>> {
    if ground_truth.len() != estimated.len() {
        return Err(Error::LengthMismatch(ground_truth.len(), estimated.len()));
    }
    let n = ground_truth.len();
    if window > n || window < 2 {
        return Err(Error::WindowTooLarge { window, len: n });
    }
    let mut out = Vec::with_capacity(n - window + 1);
    for start in 0..=(n - window) {
        let tau = kendall_tau_b(
            &ground_truth[start..start + window],
            &estimated[start..start + window],
        )
        .ok();
        out.push(WindowPoint {
            center: start + window / 2,
            tau_b: tau,
        });
    }
    Ok(out)
}

/// Relevance grading shared by the rank guider and the NDCG consistency
/// curves: records sorted best-first are bucketed into 32 grades, the best
/// record receiving 31. `rank` is the 0-based position in the sorted-by-
/// quality order (0 = best).
pub fn relevance_grade(rank: usize, n: usize) -> u32 {
    debug_assert!(rank < n);
    ((31 * (n - rank)) / n).min(31) as u32
}

const ORACLE_BASE: f64 = 0.55;
const ORACLE_NOISE_AMPLITUDE: f64 = 0.005;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Deterministic pseudo-logloss landscape over architectures, used as a
/// cheap stand-in fitness for searcher tests and ablations.
///
/// The score starts at 0.55 and subtracts a reward for each structural
/// motif, evaluated on the canonical form (empty slots compacted), so
/// architectures that differ only in empty-slot padding score identically:
///
/// * 0.03 per FM or DP block fed raw sparse input, up to three blocks;
/// * 0.02 per MLP block with dense-side input (raw dense or any
///   predecessor), up to two blocks;
/// * 0.03 once if any block fuses two or more predecessors;
/// * 0.05 once for a diamond MLP chain (three chained MLPs whose middle
///   width strictly exceeds both ends);
/// * 0.02 once if the longest block chain reaches depth three.
///
/// A deterministic perturbation in [0, 0.005), derived from an FNV-1a hash
/// of the canonical architecture JSON, breaks ties without reordering
/// distinct motif sets. The range is [0.40, 0.555), so the score is always
/// a positive pseudo-logloss.
pub fn synthetic_arch_oracle(arch: &Architecture) -> Result<f64> {
    let violations = validate(arch);
    if !violations.is_empty() {
        return Err(Error::InvalidArchitecture(violations));
    }
    let canon = arch.canonical_form();
    let mut score = ORACLE_BASE;

    let n_interaction = canon
        .blocks
        .iter()
        .filter(|b| {
            matches!(b.block_type, BlockType::Fm | BlockType::Dp) && b.raw_input.takes_sparse()
        })
        .count()
        .min(3);
    score -= 0.03 * n_interaction as f64;

    let n_dense_mlp = canon
        .blocks
        .iter()
        .filter(|b| {
            b.block_type == BlockType::Mlp
                && (b.raw_input.takes_dense() || !b.predecessors.is_empty())
        })
        .count()
        .min(2);
    score -= 0.02 * n_dense_mlp as f64;

    if canon.blocks.iter().any(|b| b.predecessors.len() >= 2) {
        score -= 0.03;
    }

    if has_diamond_mlp_chain(&canon) {
        score -= 0.05;
    }

    if longest_chain(&canon) >= 3 {
        score -= 0.02;
    }

    let hash = fnv1a64(canon.to_json().as_bytes());
    let noise = (hash as f64 / u64::MAX as f64) * ORACLE_NOISE_AMPLITUDE;
    Ok(score + noise)
}

fn has_diamond_mlp_chain(arch: &Architecture) -> bool {
    let units = |i: usize| -> Option<u32> {
        let b = arch.block(i);
        (b.block_type == BlockType::Mlp).then(|| b.mlp_units.unwrap_or(0))
    };
    for k in 1..=crate::search_space::N_BLOCKS {
        let Some(uk) = units(k) else { continue };
        for &j in &arch.block(k).predecessors {
            let Some(uj) = units(j) else { continue };
            for &i in &arch.block(j).predecessors {
                let Some(ui) = units(i) else { continue };
                if uj > ui && uj > uk {
                    return true;
                }
            }
        }
    }
    false
}

fn longest_chain(arch: &Architecture) -> usize {
    let mut depth = vec![0usize; crate::search_space::N_BLOCKS + 1];
    let mut best = 0;
    for i in 1..=crate::search_space::N_BLOCKS {
        if arch.block(i).is_empty() {
            continue;
        }
        let from_preds = arch
            .block(i)
            .predecessors
            .iter()
            .map(|&p| depth[p])
            .max()
            .unwrap_or(0);
        depth[i] = from_preds + 1;
        best = best.max(depth[i]);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search_space::{
        random_arch, random_arch_with, Architecture, BlockSpec, RawInput, SpaceOptions,
        UNIT_CHOICES,
    };
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// O(n^2) reference: classify every pair directly.
    fn pair_stats_oracle(x: &[f64], y: &[f64]) -> RankPairStats {
        let mut s = RankPairStats {
            concordant: 0,
            discordant: 0,
            ties_x: 0,
            ties_y: 0,
            ties_both: 0,
        };
        for i in 0..x.len() {
            for j in (i + 1)..x.len() {
                let dx = x[i].total_cmp(&x[j]);
                let dy = y[i].total_cmp(&y[j]);
                use std::cmp::Ordering::Equal;
                if dx == Equal && dy == Equal {
                    s.ties_both += 1;
                } else if dx == Equal {
                    s.ties_x += 1;
                } else if dy == Equal {
                    s.ties_y += 1;
                } else if dx == dy {
                    s.concordant += 1;
                } else {
                    s.discordant += 1;
                }
            }
        }
        s
    }

    /// O(n^2) reference AUC: all positive/negative pairs with half credit
    /// for prediction ties.
    fn auc_oracle(labels: &[u8], probs: &[f64]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..labels.len() {
            for j in 0..labels.len() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    if probs[i] > probs[j] {
                        wins += 1.0;
                    } else if probs[i] == probs[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn logloss_analytic_values() {
        let ll = logloss(&[1], &[0.5]).unwrap();
        assert!((ll - std::f64::consts::LN_2).abs() < 1e-12);
        // Perfect prediction clamps to 1 - 1e-7, so the loss is about 1e-7.
        let ll = logloss(&[1], &[1.0 - 1e-7]).unwrap();
        assert!(ll > 0.0 && ll < 2e-7);
        // Clamping keeps the loss finite even for p = 0 on y = 1.
        assert!(logloss(&[1], &[0.0]).unwrap().is_finite());
    }

    #[test]
    fn auc_simple_cases() {
        assert_eq!(auc(&[0, 1], &[0.2, 0.8]).unwrap(), 1.0);
        assert_eq!(auc(&[1, 0], &[0.2, 0.8]).unwrap(), 0.0);
        assert_eq!(auc(&[0, 1], &[0.5, 0.5]).unwrap(), 0.5);
        assert!(matches!(
            auc(&[1, 1], &[0.1, 0.2]),
            Err(Error::SingleClassAuc)
        ));
    }

    #[test]
    fn auc_matches_pair_oracle_with_ties() {
        let mut r = rng(1);
        let mut checked = 0;
        while checked < 100 {
            let n = r.gen_range(5..200);
            let labels: Vec<u8> = (0..n).map(|_| r.gen_range(0..2) as u8).collect();
            if labels.iter().all(|&y| y == 0) || labels.iter().all(|&y| y == 1) {
                continue;
            }
            // Probabilities on a coarse grid to force ties.
            let probs: Vec<f64> = (0..n).map(|_| r.gen_range(0..10) as f64 / 10.0).collect();
            let fast = auc(&labels, &probs).unwrap();
            let slow = auc_oracle(&labels, &probs);
            assert!((fast - slow).abs() < 1e-12, "{fast} vs {slow}");
            checked += 1;
        }
    }

    #[test]
    fn tau_perfect_agreement_and_inversion() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        assert!((kendall_tau_b(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let rev: Vec<f64> = x.iter().rev().copied().collect();
        assert!((kendall_tau_b(&x, &rev).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn tau_matches_pair_oracle_with_ties() {
        let mut r = rng(2);
        for _ in 0..100 {
            let n = r.gen_range(2..80);
            let x: Vec<f64> = (0..n).map(|_| r.gen_range(0..8) as f64).collect();
            let y: Vec<f64> = (0..n).map(|_| r.gen_range(0..8) as f64).collect();
            let fast = pair_stats(&x, &y).unwrap();
            let slow = pair_stats_oracle(&x, &y);
            assert_eq!(fast, slow);
            assert_eq!(fast.total_pairs(), (n * (n - 1) / 2) as u64);
            match (fast.tau_b(), slow.tau_b()) {
                (Ok(a), Ok(b)) => assert!((a - b).abs() < 1e-12),
                (Err(Error::TauUndefined), Err(Error::TauUndefined)) => {}
                other => panic!("mismatched tau outcomes: {other:?}"),
            }
        }
    }

    #[test]
    fn tau_symmetry() {
        let mut r = rng(3);
        for _ in 0..50 {
            let n = r.gen_range(2..60);
            let x: Vec<f64> = (0..n).map(|_| r.gen_range(0..6) as f64).collect();
            let y: Vec<f64> = (0..n).map(|_| r.gen_range(0..6) as f64).collect();
            let (a, b) = (kendall_tau_b(&x, &y), kendall_tau_b(&y, &x));
            match (a, b) {
                (Ok(a), Ok(b)) => assert!((a - b).abs() < 1e-12),
                (Err(_), Err(_)) => {}
                other => panic!("asymmetric outcomes: {other:?}"),
            }
        }
    }

    #[test]
    fn tau_undefined_on_all_ties() {
        assert!(matches!(
            kendall_tau_b(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::TauUndefined)
        ));
        assert!(matches!(
            kendall_tau_b(&[1.0], &[1.0, 2.0]),
            Err(Error::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn ndcg_basics() {
        // Ideal order scores 1.
        assert!((ndcg_at_k(&[3.0, 2.0, 1.0], 3) - 1.0).abs() < 1e-12);
        // All-zero relevance is defined as 1.
        assert_eq!(ndcg_at_k(&[0.0, 0.0, 0.0], 5), 1.0);
        // Hand evaluation for rels (3,2,1) predicted in order (1,2,3):
        // DCG  = (2^1-1)/log2(2) + (2^2-1)/log2(3) + (2^3-1)/log2(4)
        // IDCG = (2^3-1)/log2(2) + (2^2-1)/log2(3) + (2^1-1)/log2(4)
        let dcg = 1.0 / 1.0 + 3.0 / 3f64.log2() + 7.0 / 2.0;
        let idcg = 7.0 / 1.0 + 3.0 / 3f64.log2() + 1.0 / 2.0;
        assert!((ndcg_at_k(&[1.0, 2.0, 3.0], 3) - dcg / idcg).abs() < 1e-12);
    }

    #[test]
    fn ndcg_monotone_under_ideal_swaps() {
        let mut r = rng(4);
        for _ in 0..200 {
            let n = r.gen_range(2..20);
            let mut rels: Vec<f64> = (0..n).map(|_| r.gen_range(0..5) as f64).collect();
            let k = r.gen_range(1..=n);
            let before = ndcg_at_k(&rels, k);
            // Swap one adjacent out-of-order pair into ideal order.
            if let Some(i) = (0..n - 1).find(|&i| rels[i] < rels[i + 1]) {
                rels.swap(i, i + 1);
                let after = ndcg_at_k(&rels, k);
                assert!(
                    after >= before - 1e-12,
                    "swap into ideal order decreased ndcg: {before} -> {after}"
                );
            }
        }
    }

    #[test]
    fn sliding_window_shape() {
        let gt: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let points = sliding_window_tau(&gt, &gt, 30).unwrap();
        assert_eq!(points.len(), 71);
        assert_eq!(points[0].center, 15);
        assert!(points.iter().all(|p| p.tau_b == Some(1.0)));

        let rev: Vec<f64> = gt.iter().rev().copied().collect();
        let points = sliding_window_tau(&gt, &rev, 30).unwrap();
        assert!(points.iter().all(|p| p.tau_b == Some(-1.0)));

        assert!(matches!(
            sliding_window_tau(&gt[..10], &gt[..10], 30),
            Err(Error::WindowTooLarge { .. })
        ));
    }

    #[test]
    fn relevance_grades_match_documented_examples() {
        // Two records: grades (31, 15).
        assert_eq!(relevance_grade(0, 2), 31);
        assert_eq!(relevance_grade(1, 2), 15);
        // Thirty-two records: grades exactly 31, 30, ..., 0.
        let grades: Vec<u32> = (0..32).map(|r| relevance_grade(r, 32)).collect();
        let expected: Vec<u32> = (0..32).rev().collect();
        assert_eq!(grades, expected);
    }

    #[test]
    fn oracle_is_deterministic_and_positive() {
        let mut r = rng(5);
        for _ in 0..500 {
            let arch = random_arch(&mut r, true);
            let a = synthetic_arch_oracle(&arch).unwrap();
            let b = synthetic_arch_oracle(&arch).unwrap();
            assert_eq!(a, b);
            assert!(a > 0.0 && a < 1.0);
        }
    }

    #[test]
    fn oracle_invariant_to_empty_padding() {
        let at_front = Architecture::from_prefix(vec![
            BlockSpec::mlp(64, RawInput::DenseOnly, &[]),
            BlockSpec::dp(RawInput::SparseOnly, &[1]),
        ])
        .unwrap();
        let shifted = Architecture::from_prefix(vec![
            BlockSpec::empty(),
            BlockSpec::mlp(64, RawInput::DenseOnly, &[]),
            BlockSpec::empty(),
            BlockSpec::dp(RawInput::SparseOnly, &[2]),
        ])
        .unwrap();
        assert_eq!(
            synthetic_arch_oracle(&at_front).unwrap(),
            synthetic_arch_oracle(&shifted).unwrap()
        );
    }

    #[test]
    fn oracle_global_minimum_in_restricted_two_block_space() {
        // Enumerate every valid architecture over the first two slots.
        // With two blocks the reachable motif set maxes out at two
        // sparse-fed interaction blocks; the argmin must realize it.
        let mut best: Option<(f64, Architecture)> = None;
        let mut type_units: Vec<(BlockType, Option<u32>)> = UNIT_CHOICES
            .iter()
            .map(|&u| (BlockType::Mlp, Some(u)))
            .collect();
        type_units.push((BlockType::Fm, None));
        type_units.push((BlockType::Dp, None));
        let raws = [RawInput::DenseOnly, RawInput::SparseOnly, RawInput::Both];
        let all_raws = [
            RawInput::None,
            RawInput::DenseOnly,
            RawInput::SparseOnly,
            RawInput::Both,
        ];
        for &(t1, u1) in &type_units {
            for r1 in raws {
                let b1 = BlockSpec {
                    block_type: t1,
                    raw_input: r1,
                    predecessors: Default::default(),
                    mlp_units: u1,
                };
                let arch = Architecture::from_prefix(vec![b1.clone()]).unwrap();
                let score = synthetic_arch_oracle(&arch).unwrap();
                if best.as_ref().map_or(true, |(s, _)| score < *s) {
                    best = Some((score, arch));
                }
                for &(t2, u2) in &type_units {
                    for r2 in all_raws {
                        for preds in [vec![], vec![1usize]] {
                            if r2 == RawInput::None && preds.is_empty() {
                                continue;
                            }
                            let b2 = BlockSpec {
                                block_type: t2,
                                raw_input: r2,
                                predecessors: preds.iter().copied().collect(),
                                mlp_units: u2,
                            };
                            let arch =
                                Architecture::from_prefix(vec![b1.clone(), b2]).unwrap();
                            let score = synthetic_arch_oracle(&arch).unwrap();
                            if best.as_ref().map_or(true, |(s, _)| score < *s) {
                                best = Some((score, arch));
                            }
                        }
                    }
                }
            }
        }
        let (score, argmin) = best.unwrap();
        let interaction_blocks = argmin
            .blocks
            .iter()
            .filter(|b| {
                matches!(b.block_type, BlockType::Fm | BlockType::Dp)
                    && b.raw_input.takes_sparse()
            })
            .count();
        assert_eq!(
            interaction_blocks, 2,
            "argmin {argmin:?} (score {score}) misses the full motif set"
        );
        assert!(score < 0.50);
    }

    #[test]
    fn oracle_rejects_invalid_architectures() {
        let arch = Architecture {
            blocks: vec![BlockSpec::empty(); crate::search_space::N_BLOCKS],
        };
        assert!(matches!(
            synthetic_arch_oracle(&arch),
            Err(Error::InvalidArchitecture(_))
        ));
    }

    #[test]
    fn oracle_total_order_over_finite_sets() {
        let mut r = rng(6);
        let opts = SpaceOptions::default();
        let mut scores: Vec<f64> = (0..50)
            .map(|_| synthetic_arch_oracle(&random_arch_with(&mut r, &opts)).unwrap())
            .collect();
        scores.sort_by(f64::total_cmp);
        assert!(scores.windows(2).all(|w| w[0] <= w[1]));
    }
}

// ---------------------------------------------------------------------------
// Rank-consistency experiment harness.

use crate::data::CtrDataset;
use crate::evaluator::{DatasetEvaluator, EvalJob, EvalPool, FidelityConfig, SubsampleMode};
use crate::model::TrainConfig;
use std::str::FromStr;
use std::sync::Arc;

/// Low-fidelity training strategy under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// Early stopping only.
    Es,
    /// Early stopping plus cardinality hashing.
    EsHash,
    /// Early stopping plus warm-start embeddings.
    EsWarm,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "es" => Ok(Strategy::Es),
            "es+hash" => Ok(Strategy::EsHash),
            "es+warm" => Ok(Strategy::EsWarm),
            other => Err(Error::UnknownPreset(format!("strategy {other}"))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Es => "es",
            Strategy::EsHash => "es+hash",
            Strategy::EsWarm => "es+warm",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsistencyConfig {
    /// Subsample sizes; the largest doubles as the reference fidelity.
    pub sizes: Vec<usize>,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    pub window: usize,
    pub ndcg_ks: Vec<usize>,
    pub hash_cap: u32,
    pub train_cfg: TrainConfig,
    pub workers: usize,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        ConsistencyConfig {
            sizes: vec![5_000, 20_000, 80_000],
            strategies: vec![Strategy::Es],
            seeds: vec![0, 1, 2],
            window: 30,
            ndcg_ks: (1..=30).collect(),
            hash_cap: 10_000,
            train_cfg: TrainConfig::default(),
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GlobalRow {
    pub size: usize,
    pub strategy: Strategy,
    pub seed: u64,
    pub tau_b: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SlidingRow {
    pub strategy: Strategy,
    pub seed: u64,
    pub center: usize,
    pub tau_b: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NdcgRow {
    pub strategy: Strategy,
    pub seed: u64,
    pub k: usize,
    pub ndcg: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// Per-architecture reference logloss: the largest subsample size
    /// under plain early stopping, averaged over the seeds. At desk scale
    /// this reference stands in for full-data ground truth.
    pub reference: Vec<f64>,
    pub global: Vec<GlobalRow>,
    /// Local consistency at the largest size, on the reference-sorted
    /// architecture axis.
    pub sliding: Vec<SlidingRow>,
    /// NDCG-at-k curves at the largest size, with 32-bucket grades over
    /// the reference ranks.
    pub ndcg: Vec<NdcgRow>,
    /// Architecture indices excluded because some evaluation failed.
    pub excluded: Vec<usize>,
}

fn cell_fidelity(size: usize, strategy: Strategy, cfg: &ConsistencyConfig) -> FidelityConfig {
    FidelityConfig {
        subsample_rows: Some(size),
        subsample_mode: SubsampleMode::Head,
        hash_cap: (strategy == Strategy::EsHash).then_some(cfg.hash_cap),
        warm_start: strategy == Strategy::EsWarm,
        split_ratios: (0.8, 0.1, 0.1),
    }
}

fn evaluate_cell(
    archs: &[crate::search_space::Architecture],
    data: &CtrDataset,
    size: usize,
    strategy: Strategy,
    seed: u64,
    cfg: &ConsistencyConfig,
) -> Result<Vec<f64>> {
    let fidelity = cell_fidelity(size, strategy, cfg);
    let evaluator = Arc::new(DatasetEvaluator::new(
        data,
        &fidelity,
        cfg.train_cfg.clone(),
        seed,
    )?);
    let pool = EvalPool::new(evaluator, cfg.workers);
    for (i, arch) in archs.iter().enumerate() {
        pool.submit(EvalJob {
            dispatch_index: i,
            arch: arch.clone(),
            seed: crate::evaluator::derive_seed(seed, i),
        });
    }
    let mut out = vec![f64::INFINITY; archs.len()];
    for _ in 0..archs.len() {
        let result = pool.recv();
        out[result.dispatch_index] = match result.outcome {
            Ok(o) => o.val_logloss,
            Err(_) => f64::INFINITY,
        };
    }
    Ok(out)
}

/// Evaluates every architecture at every (size, strategy, seed) cell,
/// designates the largest size under plain early stopping (seed-averaged)
/// as the reference ranking, and emits the three consistency series:
/// global tau-b per cell, the sliding-window tau-b series, and NDCG-at-k
/// curves, both at the largest size. Architectures with any failed
/// evaluation are excluded and reported.
pub fn rank_consistency_experiment(
    archs: &[crate::search_space::Architecture],
    data: &CtrDataset,
    cfg: &ConsistencyConfig,
) -> Result<ConsistencyReport> {
    if archs.len() < 2 {
        return Err(Error::TooFewRecords {
            got: archs.len(),
            need: 2,
        });
    }
    if cfg.sizes.is_empty() || cfg.strategies.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::ShapeMismatch(
            "sizes, strategies, and seeds must be nonempty".into(),
        ));
    }
    let largest = *cfg.sizes.iter().max().unwrap();

    // Evaluate every requested cell plus the reference cells, caching by
    // (size, strategy, seed).
    let mut cells: std::collections::HashMap<(usize, Strategy, u64), Vec<f64>> =
        std::collections::HashMap::new();
    for &seed in &cfg.seeds {
        for &strategy in cfg
            .strategies
            .iter()
            .chain(std::iter::once(&Strategy::Es))
        {
            for &size in &cfg.sizes {
                let key = (size, strategy, seed);
                if cells.contains_key(&key) {
                    continue;
                }
                if strategy != Strategy::Es && !cfg.strategies.contains(&strategy) {
                    continue;
                }
                if size != largest && strategy == Strategy::Es && !cfg.strategies.contains(&Strategy::Es)
                {
                    // Reference only needs the largest size.
                    continue;
                }
                let values = evaluate_cell(archs, data, size, strategy, seed, cfg)?;
                cells.insert(key, values);
            }
        }
    }

    // Reference: seed-averaged logloss at the largest size, plain early
    // stopping.
    let reference: Vec<f64> = (0..archs.len())
        .map(|i| {
            cfg.seeds
                .iter()
                .map(|&s| cells[&(largest, Strategy::Es, s)][i])
                .sum::<f64>()
                / cfg.seeds.len() as f64
        })
        .collect();

    // Exclude any architecture with a failed evaluation anywhere.
    let mut excluded: Vec<usize> = (0..archs.len())
        .filter(|&i| {
            !reference[i].is_finite()
                || cells.values().any(|v| !v[i].is_finite())
        })
        .collect();
    excluded.dedup();
    let kept: Vec<usize> = (0..archs.len()).filter(|i| !excluded.contains(i)).collect();
    if kept.len() < 2 {
        return Err(Error::TooFewRecords {
            got: kept.len(),
            need: 2,
        });
    }

    let ref_kept: Vec<f64> = kept.iter().map(|&i| reference[i]).collect();
    let mut global = Vec::new();
    for &strategy in &cfg.strategies {
        for &size in &cfg.sizes {
            for &seed in &cfg.seeds {
                let est: Vec<f64> = kept
                    .iter()
                    .map(|&i| cells[&(size, strategy, seed)][i])
                    .collect();
                global.push(GlobalRow {
                    size,
                    strategy,
                    seed,
                    tau_b: kendall_tau_b(&ref_kept, &est).ok(),
                });
            }
        }
    }

    // Reference-sorted axis for the local series.
    let mut order: Vec<usize> = (0..kept.len()).collect();
    order.sort_by(|&a, &b| ref_kept[a].total_cmp(&ref_kept[b]));
    let ref_sorted: Vec<f64> = order.iter().map(|&i| ref_kept[i]).collect();
    let n = kept.len();
    let grades: Vec<f64> = {
        // Grade by reference rank, best first.
        let mut g = vec![0.0; n];
        for (rank, &i) in order.iter().enumerate() {
            g[i] = relevance_grade(rank, n) as f64;
        }
        g
    };

    let mut sliding = Vec::new();
    let mut ndcg = Vec::new();
    for &strategy in &cfg.strategies {
        for &seed in &cfg.seeds {
            let est_kept: Vec<f64> = kept
                .iter()
                .map(|&i| cells[&(largest, strategy, seed)][i])
                .collect();
            let est_sorted: Vec<f64> = order.iter().map(|&i| est_kept[i]).collect();
            if cfg.window >= 2 && cfg.window <= n {
                for point in sliding_window_tau(&ref_sorted, &est_sorted, cfg.window)? {
                    sliding.push(SlidingRow {
                        strategy,
                        seed,
                        center: point.center,
                        tau_b: point.tau_b,
                    });
                }
            }
            // Predicted order: best estimated logloss first.
            let mut pred_order: Vec<usize> = (0..n).collect();
            pred_order.sort_by(|&a, &b| est_kept[a].total_cmp(&est_kept[b]));
            let rels: Vec<f64> = pred_order.iter().map(|&i| grades[i]).collect();
            for &k in &cfg.ndcg_ks {
                if k >= 1 && k <= n {
                    ndcg.push(NdcgRow {
                        strategy,
                        seed,
                        k,
                        ndcg: ndcg_at_k(&rels, k),
                    });
                }
            }
        }
    }

    Ok(ConsistencyReport {
        reference,
        global,
        sliding,
        ndcg,
        excluded,
    })
}

#[cfg(test)]
mod consistency_tests {
    use super::*;
    use crate::data::{synthetic_ctr, SyntheticRecipe};
    use crate::search_space::{random_arch_with, BlockType, SpaceOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_size_single_seed_reference_tau_is_one() {
        let data = synthetic_ctr(&SyntheticRecipe {
            n_rows: 900,
            sparse_cardinalities: vec![10, 10],
            planted_pairs: vec![(0, 1)],
            ..SyntheticRecipe::default()
        });
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let opts = SpaceOptions {
            allowed_types: vec![BlockType::Mlp, BlockType::Fm, BlockType::Dp],
            unit_choices: vec![32, 64],
            ..SpaceOptions::default()
        };
        let archs: Vec<_> = (0..6).map(|_| random_arch_with(&mut rng, &opts)).collect();
        let cfg = ConsistencyConfig {
            sizes: vec![900],
            strategies: vec![Strategy::Es],
            seeds: vec![5],
            window: 3,
            ndcg_ks: vec![1, 3],
            train_cfg: TrainConfig {
                batch_size: 128,
                max_epochs: 1,
                ..TrainConfig::default()
            },
            ..ConsistencyConfig::default()
        };
        let report = rank_consistency_experiment(&archs, &data, &cfg).unwrap();
        // One seed, one size: the estimate is the reference itself.
        assert_eq!(report.global.len(), 1);
        assert_eq!(report.global[0].tau_b, Some(1.0));
        // Output row count contract: |sizes| x |strategies| x |seeds|.
        let kept = archs.len() - report.excluded.len();
        assert_eq!(report.sliding.len(), kept - 3 + 1);
        assert_eq!(report.ndcg.len(), 2);
    }
}

//! Least-squares regression trees with axis-aligned splits, grown
//! leaf-wise. Encoded architecture coordinates take small integer values
//! (0/1 bits and 0..=6 ordinals), so split search uses fixed histograms.

use serde::{Deserialize, Serialize};

/// Coordinate values the tree can split on. Everything the encoder emits
/// lies in 0..=6.
const MAX_BUCKETS: usize = 8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        /// Goes left when `x[feature] <= threshold`.
        threshold: f64,
        gain: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = 0;
        loop {
            match &self.nodes[node] {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    node = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    /// Split gains per feature, in a fixed traversal order.
    pub fn accumulate_gains(&self, gains: &mut [f64]) {
        for node in &self.nodes {
            if let TreeNode::Split { feature, gain, .. } = node {
                gains[*feature] += gain;
            }
        }
    }
}

struct Candidate {
    node: usize,
    members: Vec<usize>,
    feature: usize,
    threshold: f64,
    gain: f64,
}

fn best_split(
    features: &[Vec<f64>],
    targets: &[f64],
    members: &[usize],
    n_features: usize,
    min_leaf: usize,
) -> Option<(usize, f64, f64)> {
    let total_sum: f64 = members.iter().map(|&i| targets[i]).sum();
    let n = members.len() as f64;
    let parent_score = total_sum * total_sum / n;
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..n_features {
        let mut counts = [0usize; MAX_BUCKETS];
        let mut sums = [0.0f64; MAX_BUCKETS];
        for &i in members {
            let v = features[i][f];
            let b = (v as usize).min(MAX_BUCKETS - 1);
            counts[b] += 1;
            sums[b] += targets[i];
        }
        let mut left_count = 0usize;
        let mut left_sum = 0.0;
        for b in 0..MAX_BUCKETS - 1 {
            left_count += counts[b];
            left_sum += sums[b];
            if left_count < min_leaf {
                continue;
            }
            let right_count = members.len() - left_count;
            if right_count < min_leaf {
                break;
            }
            let right_sum = total_sum - left_sum;
            let gain = left_sum * left_sum / left_count as f64
                + right_sum * right_sum / right_count as f64
                - parent_score;
            if gain > best.map_or(1e-12, |(_, _, g)| g) {
                best = Some((f, b as f64 + 0.5, gain));
            }
        }
    }
    best
}

/// Fits one least-squares tree, splitting the highest-gain leaf first
/// until `max_leaves` is reached or no split improves the squared error.
pub fn fit_tree(
    features: &[Vec<f64>],
    targets: &[f64],
    members: &[usize],
    max_leaves: usize,
    min_leaf: usize,
) -> Tree {
    let n_features = features.first().map_or(0, Vec::len);
    let mean = |m: &[usize]| -> f64 {
        m.iter().map(|&i| targets[i]).sum::<f64>() / m.len().max(1) as f64
    };
    let mut nodes = vec![TreeNode::Leaf {
        value: mean(members),
    }];
    if max_leaves < 2 || members.len() < 2 * min_leaf {
        return Tree { nodes };
    }

    let mut candidates: Vec<Candidate> = Vec::new();
    if let Some((feature, threshold, gain)) =
        best_split(features, targets, members, n_features, min_leaf)
    {
        candidates.push(Candidate {
            node: 0,
            members: members.to_vec(),
            feature,
            threshold,
            gain,
        });
    }
    let mut n_leaves = 1;
    while n_leaves < max_leaves && !candidates.is_empty() {
        // Highest gain first; ties resolve to the earliest-created leaf.
        let best_idx = candidates
            .iter()
            .enumerate()
            .max_by(|(ai, a), (bi, b)| {
                a.gain
                    .total_cmp(&b.gain)
                    .then_with(|| bi.cmp(ai))
            })
            .map(|(i, _)| i)
            .unwrap();
        let cand = candidates.swap_remove(best_idx);
        let (mut left_members, mut right_members) = (Vec::new(), Vec::new());
        for &i in &cand.members {
            if features[i][cand.feature] <= cand.threshold {
                left_members.push(i);
            } else {
                right_members.push(i);
            }
        }
        let left = nodes.len();
        nodes.push(TreeNode::Leaf {
            value: mean(&left_members),
        });
        let right = nodes.len();
        nodes.push(TreeNode::Leaf {
            value: mean(&right_members),
        });
        nodes[cand.node] = TreeNode::Split {
            feature: cand.feature,
            threshold: cand.threshold,
            gain: cand.gain,
            left,
            right,
        };
        n_leaves += 1;
        for (node, members) in [(left, left_members), (right, right_members)] {
            if members.len() >= 2 * min_leaf {
                if let Some((feature, threshold, gain)) =
                    best_split(features, targets, &members, n_features, min_leaf)
                {
                    candidates.push(Candidate {
                        node,
                        members,
                        feature,
                        threshold,
                        gain,
                    });
                }
            }
        }
    }
    Tree { nodes }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_feature_step_function() {
        // Target is a step in feature 0; one split recovers it exactly.
        let features: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![if i < 10 { 0.0 } else { 1.0 }])
            .collect();
        let targets: Vec<f64> = (0..20).map(|i| if i < 10 { -1.0 } else { 3.0 }).collect();
        let members: Vec<usize> = (0..20).collect();
        let tree = fit_tree(&features, &targets, &members, 31, 2);
        assert_eq!(tree.predict(&[0.0]), -1.0);
        assert_eq!(tree.predict(&[1.0]), 3.0);
    }

    #[test]
    fn min_leaf_blocks_tiny_splits() {
        let features: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 % 2.0]).collect();
        let targets = vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let members: Vec<usize> = (0..6).collect();
        let tree = fit_tree(&features, &targets, &members, 31, 5);
        // Only the root leaf fits under min_leaf = 5.
        assert_eq!(tree.nodes.len(), 1);
        assert!((tree.predict(&[0.0]) - 0.5).abs() < 1e-12);
    }
}

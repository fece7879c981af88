//! Ordering score over β-subsets and cluster-quality IoU.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{FeatureVector, Permutation};

/// Largest item count accepted by [`ordering_score_bruteforce`].
pub const BRUTEFORCE_MAX_N: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderingResult {
    pub beta: usize,
    /// Number of β-subsets ordered identically by both permutations.
    pub matches: u128,
    /// C(N, β).
    pub total: u128,
}

impl OrderingResult {
    pub fn score(&self) -> f64 {
        self.matches as f64 / self.total as f64
    }
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

fn check_args(gt: &Permutation, pred: &Permutation, beta: usize) -> Result<()> {
    if gt.len() != pred.len() {
        return Err(Error::invalid(format!(
            "permutation lengths differ: {} vs {}",
            gt.len(),
            pred.len()
        )));
    }
    if beta < 2 || beta > gt.len() {
        return Err(Error::invalid(format!(
            "beta must satisfy 2 <= beta <= N (beta={beta}, N={})",
            gt.len()
        )));
    }
    Ok(())
}

/// Counts the β-item subsets whose relative order agrees between `gt` and
/// `pred`.
///
/// Listing items in ground-truth order and replacing each by its predicted
/// position turns a concordant subset into an increasing subsequence, so the
/// count is the number of length-β increasing subsequences of that sequence:
/// `ends[k][i]` counts those of length `k + 1` ending at `i`.
pub fn ordering_score(gt: &Permutation, pred: &Permutation, beta: usize) -> Result<OrderingResult> {
    check_args(gt, pred, beta)?;
    let n = gt.len();
    let pred_pos = pred.inverse();
    let seq: Vec<usize> = gt.as_slice().iter().map(|&item| pred_pos.as_slice()[item]).collect();

    let mut ends = vec![1u128; n];
    for _ in 1..beta {
        let mut next = vec![0u128; n];
        for i in 0..n {
            for j in 0..i {
                if seq[j] < seq[i] {
                    next[i] += ends[j];
                }
            }
        }
        ends = next;
    }
    Ok(OrderingResult {
        beta,
        matches: ends.iter().sum(),
        total: binomial(n, beta),
    })
}

/// Reference implementation enumerating all C(N, β) subsets explicitly.
pub fn ordering_score_bruteforce(
    gt: &Permutation,
    pred: &Permutation,
    beta: usize,
) -> Result<OrderingResult> {
    check_args(gt, pred, beta)?;
    let n = gt.len();
    if n > BRUTEFORCE_MAX_N {
        return Err(Error::invalid(format!(
            "brute-force ordering score limited to N <= {BRUTEFORCE_MAX_N}, got {n}"
        )));
    }
    let gt_pos = gt.inverse();
    let pred_pos = pred.inverse();
    let (gt_pos, pred_pos) = (gt_pos.as_slice(), pred_pos.as_slice());

    let mut matches = 0u128;
    let mut total = 0u128;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != beta {
            continue;
        }
        total += 1;
        let mut items: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        items.sort_by_key(|&i| gt_pos[i]);
        if items.windows(2).all(|w| pred_pos[w[0]] < pred_pos[w[1]]) {
            matches += 1;
        }
    }
    Ok(OrderingResult {
        beta,
        matches,
        total,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterEval {
    pub mean_iou: f64,
    /// `(predicted cluster, ground-truth cluster)` index pairs.
    pub assignment: Vec<(usize, usize)>,
}

fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub(crate) fn mean_of(vectors: &[&[f64]]) -> Vec<f64> {
    let dim = vectors[0].len();
    let mut acc = vec![0.0; dim];
    for v in vectors {
        for (a, x) in acc.iter_mut().zip(v.iter()) {
            *a += x;
        }
    }
    let n = vectors.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Scores a predicted partition against ground truth.
///
/// Predicted centers are matched one-to-one to ground-truth cluster means by
/// maximum total cosine similarity; each matched pair contributes its
/// intersection-over-union and unmatched clusters contribute zero, averaged
/// over `max(|pred|, |gt|)`.
pub fn cluster_iou(
    pred: &[Vec<usize>],
    gt: &[Vec<usize>],
    pred_centers: &[FeatureVector],
    gt_member_features: &[Vec<FeatureVector>],
) -> Result<ClusterEval> {
    if pred.is_empty() || gt.is_empty() || pred.iter().chain(gt).any(|c| c.is_empty()) {
        return Err(Error::invalid("cluster_iou needs non-empty partitions"));
    }
    if pred_centers.len() != pred.len() || gt_member_features.len() != gt.len() {
        return Err(Error::invalid(
            "cluster_iou: center/feature counts must match cluster counts",
        ));
    }
    let mut pred_items: Vec<usize> = pred.iter().flatten().copied().collect();
    let mut gt_items: Vec<usize> = gt.iter().flatten().copied().collect();
    pred_items.sort_unstable();
    gt_items.sort_unstable();
    if pred_items != gt_items || pred_items.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid(
            "cluster_iou: partitions must cover the same positions exactly once",
        ));
    }

    let gt_means: Vec<Vec<f64>> = gt_member_features
        .iter()
        .map(|members| {
            let refs: Vec<&[f64]> = members.iter().map(|f| f.as_slice()).collect();
            if refs.is_empty() {
                Err(Error::invalid("cluster_iou: ground-truth cluster without features"))
            } else {
                Ok(mean_of(&refs))
            }
        })
        .collect::<Result<_>>()?;

    let sim: Vec<Vec<f64>> = pred_centers
        .iter()
        .map(|c| gt_means.iter().map(|m| cosine_similarity(c.as_slice(), m)).collect())
        .collect();
    let assignment = max_weight_assignment(&sim);

    let iou_sum: f64 = assignment
        .iter()
        .map(|&(p, g)| {
            let inter = pred[p].iter().filter(|x| gt[g].contains(x)).count();
            let union = pred[p].len() + gt[g].len() - inter;
            inter as f64 / union as f64
        })
        .sum();
    Ok(ClusterEval {
        mean_iou: iou_sum / pred.len().max(gt.len()) as f64,
        assignment,
    })
}

/// Convenience form of [`cluster_iou`] where every center is the mean of the
/// cluster's members in `features` (indexed by position).
pub fn cluster_iou_from_features(
    pred: &[Vec<usize>],
    gt: &[Vec<usize>],
    features: &[FeatureVector],
) -> Result<ClusterEval> {
    let centers = pred
        .iter()
        .map(|c| {
            let refs: Vec<&[f64]> = c.iter().map(|&i| features[i].as_slice()).collect();
            FeatureVector::new(mean_of(&refs))
        })
        .collect::<Result<Vec<_>>>()?;
    let gt_feats: Vec<Vec<FeatureVector>> = gt
        .iter()
        .map(|c| c.iter().map(|&i| features[i].clone()).collect())
        .collect();
    cluster_iou(pred, gt, &centers, &gt_feats)
}

/// Maximum-weight one-to-one assignment between rows and columns of a
/// rectangular matrix (Hungarian method on the padded square cost matrix).
/// Returns the `(row, col)` pairs that are real on both sides, sorted by row.
pub fn max_weight_assignment(weights: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, |r| r.len());
    let n = rows.max(cols);
    if n == 0 {
        return Vec::new();
    }
    let cost = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            -weights[i][j]
        } else {
            0.0
        }
    };

    // 1-based potentials formulation; way[j] tracks the augmenting path.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=n)
        .filter(|&j| p[j] != 0 && p[j] - 1 < rows && j - 1 < cols)
        .map(|j| (p[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Best total weight of a maximum-cardinality one-to-one assignment, by
/// exhaustive search. Reference for [`max_weight_assignment`] on small inputs.
pub fn max_weight_assignment_bruteforce(w: &[Vec<f64>]) -> f64 {
    fn go(w: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
        if row == w.len() {
            return 0.0;
        }
        let free = used.iter().filter(|u| !**u).count();
        let rows_left = w.len() - row;
        let mut best = if rows_left > free { go(w, row + 1, used) } else { f64::NEG_INFINITY };
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                best = best.max(w[row][j] + go(w, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    match w.first() {
        Some(row) => go(w, 0, &mut vec![false; row.len()]),
        None => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn perm(v: &[usize]) -> Permutation {
        Permutation::new(v.to_vec()).unwrap()
    }

    #[test]
    fn identity_and_reversal() {
        let id = Permutation::identity(4);
        assert_eq!(ordering_score(&id, &id, 2).unwrap().score(), 1.0);
        let rev = id.reversed();
        assert_eq!(ordering_score(&id, &rev, 2).unwrap().score(), 0.0);
        assert_eq!(ordering_score(&id, &rev, 3).unwrap().score(), 0.0);
    }

    #[test]
    fn swapping_first_two_of_four() {
        // Brute-force count: of the 6 pairs only (0,1) is discordant.
        let r = ordering_score(&Permutation::identity(4), &perm(&[1, 0, 2, 3]), 2).unwrap();
        assert_eq!((r.matches, r.total), (5, 6));
        assert_abs_diff_eq!(r.score(), 5.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn invalid_beta_and_lengths() {
        let id = Permutation::identity(3);
        assert!(ordering_score(&id, &id, 1).is_err());
        assert!(ordering_score(&id, &id, 4).is_err());
        assert!(ordering_score(&id, &Permutation::identity(4), 2).is_err());
        assert!(ordering_score_bruteforce(&Permutation::identity(13), &Permutation::identity(13), 2).is_err());
    }

    fn all_perms(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in all_perms(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn dp_matches_enumeration_on_all_perms_of_five() {
        let gt = perm(&[2, 0, 4, 1, 3]);
        for p in all_perms(5) {
            let pred = perm(&p);
            for beta in 2..=4 {
                assert_eq!(
                    ordering_score(&gt, &pred, beta).unwrap(),
                    ordering_score_bruteforce(&gt, &pred, beta).unwrap()
                );
            }
        }
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(4, 2), 6);
        assert_eq!(binomial(20, 3), 1140);
        assert_eq!(binomial(3, 5), 0);
    }

    fn arb_perm_pair() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
        (2usize..=7).prop_flat_map(|n| {
            let base: Vec<usize> = (0..n).collect();
            (Just(base.clone()).prop_shuffle(), Just(base).prop_shuffle())
        })
    }

    proptest! {
        #[test]
        fn dp_equals_bruteforce((g, p) in arb_perm_pair(), beta in 2usize..=4) {
            prop_assume!(beta <= g.len());
            let (g, p) = (perm(&g), perm(&p));
            prop_assert_eq!(ordering_score(&g, &p, beta).unwrap(), ordering_score_bruteforce(&g, &p, beta).unwrap());
        }

        #[test]
        fn self_and_reverse((g, _) in arb_perm_pair(), beta in 2usize..=4) {
            prop_assume!(beta <= g.len());
            let g = perm(&g);
            prop_assert_eq!(ordering_score(&g, &g, beta).unwrap().score(), 1.0);
            prop_assert_eq!(ordering_score(&g, &g.reversed(), beta).unwrap().score(), 0.0);
        }

        #[test]
        fn joint_relabeling_invariance((g, p) in arb_perm_pair(), relabel_seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let n = g.len();
            let mut relabel: Vec<usize> = (0..n).collect();
            relabel.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(relabel_seed));
            let g2: Vec<usize> = g.iter().map(|&i| relabel[i]).collect();
            let p2: Vec<usize> = p.iter().map(|&i| relabel[i]).collect();
            prop_assert_eq!(
                ordering_score(&perm(&g), &perm(&p), 2).unwrap(),
                ordering_score(&perm(&g2), &perm(&p2), 2).unwrap()
            );
        }
    }

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn identical_partitions_score_one() {
        let feats = vec![fv(&[1.0, 0.0]), fv(&[1.0, 0.1]), fv(&[0.0, 1.0]), fv(&[0.1, 1.0])];
        let gt = vec![vec![0, 1], vec![2, 3]];
        let eval = cluster_iou_from_features(&gt, &gt, &feats).unwrap();
        assert_eq!(eval.mean_iou, 1.0);
        assert_eq!(eval.assignment, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn one_cluster_against_two_scores_quarter() {
        // The single predicted cluster matches one 2-item cluster with IoU 2/4;
        // the other ground-truth cluster is unmatched, divisor 2.
        let feats = vec![fv(&[1.0, 0.0]), fv(&[1.0, 0.1]), fv(&[0.0, 1.0]), fv(&[0.1, 1.0])];
        let eval =
            cluster_iou_from_features(&[vec![0, 1, 2, 3]], &[vec![0, 1], vec![2, 3]], &feats).unwrap();
        assert_abs_diff_eq!(eval.mean_iou, 0.25, epsilon = 1e-12);
        assert_eq!(eval.assignment.len(), 1);
    }

    #[test]
    fn relabeled_partition_scores_one() {
        let feats = vec![fv(&[1.0, 0.0]), fv(&[0.0, 1.0]), fv(&[1.0, 1.0]), fv(&[1.0, 0.0])];
        let gt = vec![vec![0, 3], vec![1], vec![2]];
        let pred = vec![vec![2], vec![0, 3], vec![1]];
        let eval = cluster_iou_from_features(&pred, &gt, &feats).unwrap();
        assert_eq!(eval.mean_iou, 1.0);
        assert_eq!(eval.assignment, vec![(0, 2), (1, 0), (2, 1)]);
    }

    #[test]
    fn cluster_iou_rejects_bad_input() {
        let feats = vec![fv(&[1.0]), fv(&[2.0])];
        assert!(cluster_iou_from_features(&[], &[vec![0, 1]], &feats).is_err());
        assert!(cluster_iou_from_features(&[vec![0]], &[vec![0, 1]], &feats).is_err());
    }

    #[test]
    fn assignment_is_optimal_on_small_matrices() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let (r, c) = (rng.gen_range(1..5), rng.gen_range(1..5));
            let w: Vec<Vec<f64>> = (0..r).map(|_| (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let got: f64 = max_weight_assignment(&w).iter().map(|&(i, j)| w[i][j]).sum();
            assert_eq!(max_weight_assignment(&w).len(), r.min(c));
            // Exhaustive optimum over injective maps from the smaller side.
            let best = max_weight_assignment_bruteforce(&w);
            assert!((got - best).abs() < 1e-9, "{got} vs {best}");
        }
    }

    proptest! {
        #[test]
        fn iou_symmetric_under_pred_relabel(seed in any::<u64>()) {
            use rand::{seq::SliceRandom, Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(3..10);
            let feats: Vec<FeatureVector> = (0..n).map(|_| fv(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.5])).collect();
            let k = rng.gen_range(1..=3.min(n));
            let mut pred = vec![Vec::new(); k];
            for i in 0..n { pred[if i < k { i } else { rng.gen_range(0..k) }].push(i); }
            let gt = vec![(0..n / 2).collect::<Vec<_>>(), (n / 2..n).collect()];
            let a = cluster_iou_from_features(&pred, &gt, &feats).unwrap().mean_iou;
            pred.shuffle(&mut rng);
            let b = cluster_iou_from_features(&pred, &gt, &feats).unwrap().mean_iou;
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

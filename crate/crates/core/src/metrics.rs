//! Full-ranking evaluation: HR@K and NDCG@K over the whole catalog (no
//! history filtering, ties broken by ascending item id), the uniformity
//! diagnostic, sequence-length cohorts, and similarity histograms.

use alloc::vec::Vec;

use crate::data::{pad_context, DatasetSplit, ItemId};
use crate::encoder::{encode_value, EncoderParams};
use crate::error::{Error, Result};
use crate::math;
use crate::tensor::{dot, l2_norm, Tensor};

pub const CUTOFFS: [usize; 3] = [5, 10, 20];

/// Rank of `target` when all items are sorted by `h . v_j` descending;
/// ties resolve in favor of the smaller item id. Rank 1 is best.
pub fn rank_target(user_repr: &[f64], table: &Tensor, target: ItemId) -> usize {
    let n = table.rows() - 1;
    debug_assert!(target.0 >= 1 && (target.0 as usize) <= n);
    let target_row = target.0 as usize;
    let target_score = dot(table.row(target_row), user_repr);
    let mut rank = 1;
    for item in 1..=n {
        if item == target_row {
            continue;
        }
        let score = dot(table.row(item), user_repr);
        if score > target_score || (score == target_score && item < target_row) {
            rank += 1;
        }
    }
    rank
}

/// Mean hit ratio and NDCG at cutoff `k` over a multiset of ranks.
pub fn hr_ndcg(ranks: &[usize], k: usize) -> (f64, f64) {
    if ranks.is_empty() {
        return (0.0, 0.0);
    }
    let mut hits = 0.0;
    let mut gain = 0.0;
    for &rank in ranks {
        debug_assert!(rank >= 1);
        if rank <= k {
            hits += 1.0;
            gain += 1.0 / math::log2((rank + 1) as f64);
        }
    }
    let n = ranks.len() as f64;
    (hits / n, gain / n)
}

/// Uniformity of L2-normalized vectors: log mean over unordered pairs of
/// exp(-2 ||x - y||^2). Lower means more uniform.
pub fn uniformity(vectors: &[&[f64]]) -> Result<f64> {
    if vectors.len() < 2 {
        return Err(Error::TooFewVectors {
            got: vectors.len(),
        });
    }
    let normalized: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| {
            let n = l2_norm(v);
            if n <= crate::NORM_EPSILON {
                return Err(Error::DegenerateVector { op: "uniformity" });
            }
            Ok(v.iter().map(|x| x / n).collect())
        })
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..normalized.len() {
        for j in i + 1..normalized.len() {
            let dist_sq: f64 = normalized[i]
                .iter()
                .zip(&normalized[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            total += math::exp(-2.0 * dist_sq);
            pairs += 1;
        }
    }
    Ok(math::ln(total / pairs as f64))
}

/// Sequence-length cohorts used for the per-length breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cohort {
    ShorterThan8,
    From8To20,
    AtLeast20,
}

impl Cohort {
    pub fn of(len: usize) -> Self {
        if len < 8 {
            Cohort::ShorterThan8
        } else if len < 20 {
            Cohort::From8To20
        } else {
            Cohort::AtLeast20
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Cohort::ShorterThan8 => "lt8",
            Cohort::From8To20 => "8to20",
            Cohort::AtLeast20 => "ge20",
        }
    }

    pub const ALL: [Cohort; 3] = [Cohort::ShorterThan8, Cohort::From8To20, Cohort::AtLeast20];
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsAtK {
    pub k: usize,
    pub hr: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortReport {
    pub cohort: &'static str,
    pub n_users: usize,
    pub at_k: Vec<MetricsAtK>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub n_users: usize,
    pub at_k: Vec<MetricsAtK>,
    pub uniformity: f64,
    pub cohorts: Vec<CohortReport>,
}

/// Which leave-one-out target to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalTarget {
    Validation,
    Test,
}

/// Rank every user's held-out target with the given parameters.
pub fn rank_all(
    params: &EncoderParams,
    split: &DatasetSplit,
    which: EvalTarget,
) -> Result<Vec<usize>> {
    let mut ranks = Vec::with_capacity(split.users.len());
    for user in &split.users {
        let (context, target) = match which {
            EvalTarget::Validation => (user.valid_context().to_vec(), user.valid_target),
            EvalTarget::Test => (user.test_context(), user.test_target),
        };
        let padded = pad_context(&context, params.max_len);
        let h = encode_value(params, &padded.prefix)?;
        ranks.push(rank_target(&h, &params.item_embeddings, target));
    }
    Ok(ranks)
}

/// Full report: global and per-cohort HR/NDCG at the standard cutoffs plus
/// item-embedding uniformity.
pub fn evaluate(
    params: &EncoderParams,
    split: &DatasetSplit,
    which: EvalTarget,
) -> Result<MetricsReport> {
    let ranks = rank_all(params, split, which)?;
    let at_k = CUTOFFS
        .iter()
        .map(|&k| {
            let (hr, ndcg) = hr_ndcg(&ranks, k);
            MetricsAtK { k, hr, ndcg }
        })
        .collect();

    let mut cohorts = Vec::new();
    for cohort in Cohort::ALL {
        let cohort_ranks: Vec<usize> = split
            .users
            .iter()
            .zip(&ranks)
            .filter(|(u, _)| Cohort::of(u.full_len) == cohort)
            .map(|(_, &r)| r)
            .collect();
        cohorts.push(CohortReport {
            cohort: cohort.label(),
            n_users: cohort_ranks.len(),
            at_k: CUTOFFS
                .iter()
                .map(|&k| {
                    let (hr, ndcg) = hr_ndcg(&cohort_ranks, k);
                    MetricsAtK { k, hr, ndcg }
                })
                .collect(),
        });
    }

    let item_rows: Vec<&[f64]> = (1..=params.n_items)
        .map(|r| params.item_embeddings.row(r))
        .collect();
    let uniformity = uniformity(&item_rows)?;

    Ok(MetricsReport {
        n_users: split.users.len(),
        at_k,
        uniformity,
        cohorts,
    })
}

/// Similarity histogram of one batch's negatives against a chosen anchor:
/// 40 equal-width bins over the combined value range.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityHistogram {
    pub epoch: usize,
    pub bins: Vec<HistogramBin>,
    pub mean_original: f64,
    pub mean_synthesized: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub count_original: usize,
    pub count_synthesized: usize,
}

pub const HISTOGRAM_BINS: usize = 40;

pub fn similarity_histogram(
    epoch: usize,
    original_sims: &[f64],
    synthesized_sims: &[f64],
) -> SimilarityHistogram {
    let all = original_sims.iter().chain(synthesized_sims);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in all {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(lo.is_finite() && hi.is_finite()) {
        lo = 0.0;
        hi = 1.0;
    }
    if hi - lo < 1e-12 {
        hi = lo + 1e-12;
    }
    let width = (hi - lo) / HISTOGRAM_BINS as f64;
    let mut bins: Vec<HistogramBin> = (0..HISTOGRAM_BINS)
        .map(|i| HistogramBin {
            low: lo + i as f64 * width,
            high: lo + (i + 1) as f64 * width,
            count_original: 0,
            count_synthesized: 0,
        })
        .collect();
    let index = |v: f64| {
        (((v - lo) / width) as usize).min(HISTOGRAM_BINS - 1)
    };
    for &v in original_sims {
        bins[index(v)].count_original += 1;
    }
    for &v in synthesized_sims {
        bins[index(v)].count_synthesized += 1;
    }
    let mean = |xs: &[f64]| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    SimilarityHistogram {
        epoch,
        bins,
        mean_original: mean(original_sims),
        mean_synthesized: mean(synthesized_sims),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use alloc::vec;

    fn table(rows: Vec<Vec<f64>>) -> Tensor {
        let d = rows[0].len();
        let mut data = vec![0.0; d]; // padding row
        for r in &rows {
            data.extend_from_slice(r);
        }
        Tensor::matrix(rows.len() + 1, d, data)
    }

    #[test]
    fn top_scorer_gets_rank_one() {
        let t = table(vec![vec![1.0], vec![0.5], vec![0.1]]);
        assert_eq!(rank_target(&[1.0], &t, ItemId(1)), 1);
        assert_eq!(rank_target(&[1.0], &t, ItemId(3)), 3);
    }

    #[test]
    fn ties_break_by_ascending_item_id() {
        let t = table(vec![vec![0.5], vec![0.5], vec![0.1]]);
        assert_eq!(rank_target(&[1.0], &t, ItemId(2)), 2);
        assert_eq!(rank_target(&[1.0], &t, ItemId(1)), 1);
    }

    #[test]
    fn rank_matches_brute_force_sort_oracle() {
        let mut s = Stream::new(31);
        for _ in 0..100 {
            let n = 2 + s.below(49);
            let d = 1 + s.below(4);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d).map(|_| s.symmetric_f64(1.0)).collect())
                .collect();
            let h: Vec<f64> = (0..d).map(|_| s.symmetric_f64(1.0)).collect();
            let t = table(rows.clone());
            let target = ItemId(1 + s.below(n) as u32);

            // oracle: explicit sort by (-score, id)
            let mut scored: Vec<(usize, f64)> = rows
                .iter()
                .enumerate()
                .map(|(i, r)| (i + 1, dot(r, &h)))
                .collect();
            scored.sort_by(|a, b| {
                b.1.partial_cmp(&a.1)
                    .unwrap()
                    .then_with(|| a.0.cmp(&b.0))
            });
            let expected = scored
                .iter()
                .position(|&(id, _)| id == target.0 as usize)
                .unwrap()
                + 1;
            assert_eq!(rank_target(&h, &t, target), expected);
        }
    }

    #[test]
    fn rank_is_invariant_under_positive_rescaling() {
        let mut s = Stream::new(32);
        for _ in 0..50 {
            let rows: Vec<Vec<f64>> = (0..10)
                .map(|_| (0..4).map(|_| s.symmetric_f64(1.0)).collect())
                .collect();
            let h: Vec<f64> = (0..4).map(|_| s.symmetric_f64(1.0)).collect();
            let h_scaled: Vec<f64> = h.iter().map(|v| v * 7.25).collect();
            let t = table(rows);
            let target = ItemId(1 + s.below(10) as u32);
            assert_eq!(rank_target(&h, &t, target), rank_target(&h_scaled, &t, target));
        }
    }

    #[test]
    fn hr_ndcg_closed_forms() {
        assert_eq!(hr_ndcg(&[1, 1, 1], 10), (1.0, 1.0));
        let (hr, ndcg) = hr_ndcg(&[3], 10);
        assert_eq!(hr, 1.0);
        assert!((ndcg - 0.5).abs() <= 1e-15);
        let (hr, ndcg) = hr_ndcg(&[1, 11], 10);
        assert_eq!(hr, 0.5);
        assert!((ndcg - 0.5).abs() <= 1e-15);
    }

    #[test]
    fn ndcg_never_exceeds_hr() {
        let mut s = Stream::new(33);
        for _ in 0..1000 {
            let ranks: Vec<usize> = (0..1 + s.below(20)).map(|_| 1 + s.below(40)).collect();
            for k in CUTOFFS {
                let (hr, ndcg) = hr_ndcg(&ranks, k);
                assert!(ndcg <= hr + 1e-15);
                assert!((0.0..=1.0).contains(&hr));
            }
        }
    }

    #[test]
    fn nested_cutoffs_are_monotone() {
        let mut s = Stream::new(34);
        for _ in 0..200 {
            let ranks: Vec<usize> = (0..1 + s.below(20)).map(|_| 1 + s.below(40)).collect();
            let (h5, _) = hr_ndcg(&ranks, 5);
            let (h10, _) = hr_ndcg(&ranks, 10);
            let (h20, _) = hr_ndcg(&ranks, 20);
            assert!(h5 <= h10 && h10 <= h20);
        }
    }

    #[test]
    fn uniformity_closed_forms() {
        let a = [1.0, 0.0];
        let b = [1.0, 0.0];
        assert!((uniformity(&[&a, &b]).unwrap() - 0.0).abs() <= 1e-15);
        let c = [-1.0, 0.0];
        assert!((uniformity(&[&a, &c]).unwrap() - (-8.0)).abs() <= 1e-12);
    }

    #[test]
    fn uniformity_matches_pairwise_oracle() {
        let mut s = Stream::new(35);
        let vecs: Vec<Vec<f64>> = (0..10)
            .map(|_| (0..64).map(|_| s.symmetric_f64(1.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = vecs.iter().map(|v| v.as_slice()).collect();
        let got = uniformity(&refs).unwrap();

        // direct O(n^2) computation
        let normed: Vec<Vec<f64>> = vecs
            .iter()
            .map(|v| {
                let n = l2_norm(v);
                v.iter().map(|x| x / n).collect()
            })
            .collect();
        let mut total = 0.0;
        let mut count = 0;
        for i in 0..normed.len() {
            for j in i + 1..normed.len() {
                let d2: f64 = normed[i]
                    .iter()
                    .zip(&normed[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                total += math::exp(-2.0 * d2);
                count += 1;
            }
        }
        let expected = math::ln(total / count as f64);
        assert!((got - expected).abs() <= 1e-12);
    }

    #[test]
    fn uniformity_needs_two_vectors() {
        let a = [1.0, 0.0];
        assert!(matches!(
            uniformity(&[&a]),
            Err(Error::TooFewVectors { got: 1 })
        ));
    }

    #[test]
    fn cohort_boundaries() {
        assert_eq!(Cohort::of(7), Cohort::ShorterThan8);
        assert_eq!(Cohort::of(8), Cohort::From8To20);
        assert_eq!(Cohort::of(19), Cohort::From8To20);
        assert_eq!(Cohort::of(20), Cohort::AtLeast20);
    }

    #[test]
    fn histogram_conserves_counts_and_orders_means() {
        let orig = [0.1, 0.2, 0.3, 0.4];
        let syn = [0.3, 0.4, 0.5, 0.6];
        let h = similarity_histogram(7, &orig, &syn);
        let co: usize = h.bins.iter().map(|b| b.count_original).sum();
        let cs: usize = h.bins.iter().map(|b| b.count_synthesized).sum();
        assert_eq!(co, 4);
        assert_eq!(cs, 4);
        assert_eq!(h.bins.len(), HISTOGRAM_BINS);
        assert!(h.mean_synthesized >= h.mean_original);
        assert_eq!(h.epoch, 7);
    }
}

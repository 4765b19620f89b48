//! Enduring hard negatives: mix the normalized anchor into each normalized
//! in-batch negative, rescale to the negative's norm, and freeze the result
//! behind a stop-gradient. The mixture is at least as aligned with the
//! anchor as the original negative, so synthesized negatives stay hard for
//! the whole run.

use alloc::vec::Vec;

use crate::data::ItemId;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::{dot, l2_norm};
use crate::NORM_EPSILON;

#[derive(Debug, Clone, Copy)]
pub struct MixOutcome {
    pub node: NodeId,
    /// True when the mixture was numerically antipodal and the original
    /// negative was returned instead.
    pub fell_back: bool,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Config {
            name: "lambda",
            message: alloc::format!("must be in (0, 1), got {lambda}"),
        });
    }
    Ok(())
}

/// Synthesize one enduring hard negative from an (anchor, negative) pair.
/// The result keeps the negative's norm and is wrapped in stop-gradient.
pub fn mix_hard_negative(
    g: &mut Graph,
    anchor: NodeId,
    negative: NodeId,
    lambda: f64,
) -> Result<MixOutcome> {
    check_lambda(lambda)?;
    let anchor_hat = g.normalize(anchor)?;
    let negative_hat = g.normalize(negative)?;
    let scaled_anchor = g.scale(anchor_hat, lambda);
    let scaled_negative = g.scale(negative_hat, 1.0 - lambda);
    let mix = g.add(scaled_anchor, scaled_negative)?;
    if l2_norm(g.value(mix).data()) <= NORM_EPSILON {
        // near-antipodal pair at the balancing lambda
        let node = g.stop_gradient(negative);
        return Ok(MixOutcome {
            node,
            fell_back: true,
        });
    }
    let mix_hat = g.normalize(mix)?;
    let negative_norm = g.l2_norm(negative);
    let rescaled = g.mul_by_scalar(mix_hat, negative_norm)?;
    let node = g.stop_gradient(rescaled);
    Ok(MixOutcome {
        node,
        fell_back: false,
    })
}

/// Per-anchor negative pool: the original in-batch rows and, optionally,
/// their synthesized counterparts (row-aligned, stop-gradient).
#[derive(Debug, Clone, Copy)]
pub struct NegativeSet {
    pub originals: NodeId,
    pub synthesized: Option<NodeId>,
    pub count: usize,
    pub fallbacks: usize,
}

#[derive(Debug, Clone)]
pub struct BatchNegatives {
    /// One entry per anchor; `None` when every candidate shared the
    /// anchor's target (no usable negatives).
    pub sets: Vec<Option<NegativeSet>>,
    pub skipped_anchors: usize,
    pub fallbacks: usize,
}

/// Build per-anchor negative sets for a batch. `anchors[i]` and
/// `positives[i]` are the two views of sample `i`; candidates for anchor
/// `i` are both views of every other sample, minus samples sharing the
/// anchor's target item (false negatives). When `synthesize` is set each
/// original row also gets an enduring hard negative mixed with
/// `anchors[i]`.
pub fn build_negative_sets(
    g: &mut Graph,
    anchors: &[NodeId],
    positives: &[NodeId],
    targets: &[ItemId],
    lambda: f64,
    synthesize: bool,
) -> Result<BatchNegatives> {
    let b = anchors.len();
    if b < 2 {
        return Err(Error::BatchTooSmall { size: b });
    }
    assert_eq!(positives.len(), b);
    assert_eq!(targets.len(), b);
    if synthesize {
        check_lambda(lambda)?;
    }

    let mut view_nodes = Vec::with_capacity(2 * b);
    view_nodes.extend_from_slice(anchors);
    view_nodes.extend_from_slice(positives);
    let all_views = g.stack_rows(&view_nodes)?;

    let mut sets = Vec::with_capacity(b);
    let mut skipped = 0;
    let mut fallbacks_total = 0;
    for i in 0..b {
        let mut rows = Vec::with_capacity(2 * (b - 1));
        for j in 0..b {
            if j == i || targets[j] == targets[i] {
                continue;
            }
            rows.push(j);
            rows.push(b + j);
        }
        if rows.is_empty() {
            skipped += 1;
            sets.push(None);
            continue;
        }
        let originals = g.gather_rows(all_views, &rows)?;
        let mut set = NegativeSet {
            originals,
            synthesized: None,
            count: rows.len(),
            fallbacks: 0,
        };
        if synthesize {
            let (node, fallbacks) = synthesize_rows(g, anchors[i], originals, lambda)?;
            set.synthesized = Some(node);
            set.fallbacks = fallbacks;
            fallbacks_total += fallbacks;
        }
        sets.push(Some(set));
    }
    Ok(BatchNegatives {
        sets,
        skipped_anchors: skipped,
        fallbacks: fallbacks_total,
    })
}

/// Row-batched mixing; falls back to per-row construction when a mixture
/// row is numerically degenerate.
fn synthesize_rows(
    g: &mut Graph,
    anchor: NodeId,
    originals: NodeId,
    lambda: f64,
) -> Result<(NodeId, usize)> {
    let norms = g.row_norms(originals);
    let normalized = g.row_normalize(originals)?;
    if l2_norm(g.value(anchor).data()) <= NORM_EPSILON {
        return Err(Error::DegenerateVector {
            op: "mix_hard_negative",
        });
    }
    let anchor_hat = g.normalize(anchor)?;
    let mixed = g.row_affine(normalized, anchor_hat, 1.0 - lambda, lambda)?;

    let degenerate = {
        let m = g.value(mixed);
        (0..m.rows()).any(|r| l2_norm(m.row(r)) <= NORM_EPSILON)
    };
    if degenerate {
        // slow path: per-row mixing with the documented fallback
        let rows = g.value(originals).rows();
        let mut parts = Vec::with_capacity(rows);
        let mut fallbacks = 0;
        for r in 0..rows {
            let row = g.select_row(originals, r);
            let out = mix_hard_negative(g, anchor, row, lambda)?;
            if out.fell_back {
                fallbacks += 1;
            }
            parts.push(out.node);
        }
        let stacked = g.stack_rows(&parts)?;
        let node = g.stop_gradient(stacked);
        return Ok((node, fallbacks));
    }

    let mixed_hat = g.row_normalize(mixed)?;
    let rescaled = g.row_scale(mixed_hat, norms)?;
    Ok((g.stop_gradient(rescaled), 0))
}

/// Count rows violating the dominance guarantee
/// `inner(synthesized, anchor) >= inner(original, anchor) - 1e-9`.
pub fn dominance_violations(g: &Graph, set: &NegativeSet, anchor: NodeId) -> usize {
    let Some(synth) = set.synthesized else {
        return 0;
    };
    let a = g.value(anchor).data();
    let orig = g.value(set.originals);
    let syn = g.value(synth);
    let mut violations = 0;
    for r in 0..orig.rows() {
        if dot(syn.row(r), a) < dot(orig.row(r), a) - 1e-9 {
            violations += 1;
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use crate::Tensor;
    use alloc::vec;
    use alloc::vec::Vec;

    fn rand_vec(s: &mut Stream, d: usize, scale: f64) -> Vec<f64> {
        (0..d).map(|_| s.symmetric_f64(scale)).collect()
    }

    #[test]
    fn tiny_lambda_returns_the_negative() {
        let mut s = Stream::new(1);
        let mut g = Graph::new();
        let a = g.leaf(Tensor::vector(rand_vec(&mut s, 8, 2.0)));
        let nv = rand_vec(&mut s, 8, 2.0);
        let n = g.leaf(Tensor::vector(nv.clone()));
        let out = mix_hard_negative(&mut g, a, n, 1e-12).unwrap();
        assert!(!out.fell_back);
        for (got, want) in g.value(out.node).data().iter().zip(&nv) {
            assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn lambda_near_one_returns_anchor_direction_with_negative_norm() {
        let mut s = Stream::new(2);
        let mut g = Graph::new();
        let av = rand_vec(&mut s, 8, 2.0);
        let nv = rand_vec(&mut s, 8, 2.0);
        let a = g.leaf(Tensor::vector(av.clone()));
        let n = g.leaf(Tensor::vector(nv.clone()));
        let out = mix_hard_negative(&mut g, a, n, 1.0 - 1e-12).unwrap();
        let a_norm = l2_norm(&av);
        let n_norm = l2_norm(&nv);
        for (got, ai) in g.value(out.node).data().iter().zip(&av) {
            let want = ai / a_norm * n_norm;
            assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn lambda_out_of_range_is_rejected() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::vector(vec![1.0, 0.0]));
        let n = g.leaf(Tensor::vector(vec![0.0, 1.0]));
        for bad in [0.0, 1.0, -0.3, 2.0] {
            assert!(matches!(
                mix_hard_negative(&mut g, a, n, bad),
                Err(Error::Config { name: "lambda", .. })
            ));
        }
    }

    #[test]
    fn antipodal_pair_falls_back_to_original() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::vector(vec![2.0, 0.0]));
        let n = g.leaf(Tensor::vector(vec![-3.0, 0.0]));
        let out = mix_hard_negative(&mut g, a, n, 0.5).unwrap();
        assert!(out.fell_back);
        assert_eq!(g.value(out.node).data(), &[-3.0, 0.0]);
    }

    #[test]
    fn degenerate_vectors_are_rejected() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::vector(vec![0.0, 0.0]));
        let n = g.leaf(Tensor::vector(vec![1.0, 0.0]));
        assert!(matches!(
            mix_hard_negative(&mut g, a, n, 0.5),
            Err(Error::DegenerateVector { .. })
        ));
    }

    fn batch(
        g: &mut Graph,
        s: &mut Stream,
        b: usize,
        d: usize,
    ) -> (Vec<NodeId>, Vec<NodeId>) {
        let anchors = (0..b)
            .map(|_| g.leaf(Tensor::vector(rand_vec(s, d, 1.5))))
            .collect();
        let positives = (0..b)
            .map(|_| g.leaf(Tensor::vector(rand_vec(s, d, 1.5))))
            .collect();
        (anchors, positives)
    }

    #[test]
    fn pair_batch_has_two_originals_and_two_synthesized() {
        let mut s = Stream::new(3);
        let mut g = Graph::new();
        let (a, p) = batch(&mut g, &mut s, 2, 8);
        let targets = vec![ItemId(1), ItemId(2)];
        let out = build_negative_sets(&mut g, &a, &p, &targets, 0.3, true).unwrap();
        for set in out.sets.iter() {
            let set = set.as_ref().unwrap();
            assert_eq!(set.count, 2);
            assert_eq!(g.value(set.originals).rows(), 2);
            assert_eq!(g.value(set.synthesized.unwrap()).rows(), 2);
        }
        assert_eq!(out.skipped_anchors, 0);
    }

    #[test]
    fn shared_target_excludes_both_views() {
        let mut s = Stream::new(4);
        let mut g = Graph::new();
        let (a, p) = batch(&mut g, &mut s, 3, 8);
        let targets = vec![ItemId(9), ItemId(9), ItemId(5)];
        let out = build_negative_sets(&mut g, &a, &p, &targets, 0.3, true).unwrap();
        // anchors 0 and 1 share a target: each keeps only sample 2's views
        assert_eq!(out.sets[0].as_ref().unwrap().count, 2);
        assert_eq!(out.sets[1].as_ref().unwrap().count, 2);
        assert_eq!(out.sets[2].as_ref().unwrap().count, 4);
    }

    #[test]
    fn all_shared_targets_empty_every_set() {
        let mut s = Stream::new(5);
        let mut g = Graph::new();
        let (a, p) = batch(&mut g, &mut s, 3, 8);
        let targets = vec![ItemId(1); 3];
        let out = build_negative_sets(&mut g, &a, &p, &targets, 0.3, true).unwrap();
        assert!(out.sets.iter().all(|s| s.is_none()));
        assert_eq!(out.skipped_anchors, 3);
    }

    #[test]
    fn batch_of_one_is_an_error() {
        let mut s = Stream::new(6);
        let mut g = Graph::new();
        let (a, p) = batch(&mut g, &mut s, 1, 8);
        assert!(matches!(
            build_negative_sets(&mut g, &a, &p, &[ItemId(1)], 0.3, true),
            Err(Error::BatchTooSmall { size: 1 })
        ));
    }

    #[test]
    fn batched_mixing_matches_per_pair_op_bitwise() {
        let mut s = Stream::new(7);
        let mut g = Graph::new();
        let (a, p) = batch(&mut g, &mut s, 4, 8);
        let targets = vec![ItemId(1), ItemId(2), ItemId(3), ItemId(4)];
        let out = build_negative_sets(&mut g, &a, &p, &targets, 0.35, true).unwrap();
        for (i, set) in out.sets.iter().enumerate() {
            let set = set.as_ref().unwrap();
            let originals = g.value(set.originals).clone();
            let synth = g.value(set.synthesized.unwrap()).clone();
            for r in 0..originals.rows() {
                let neg = g.leaf(Tensor::vector(originals.row(r).to_vec()));
                let single = mix_hard_negative(&mut g, a[i], neg, 0.35).unwrap();
                let single_bits: Vec<u64> =
                    g.value(single.node).data().iter().map(|v| v.to_bits()).collect();
                let row_bits: Vec<u64> = synth.row(r).iter().map(|v| v.to_bits()).collect();
                assert_eq!(single_bits, row_bits, "anchor {i} row {r}");
            }
        }
    }

    #[test]
    fn synthesized_rows_preserve_norms_and_dominate() {
        let mut s = Stream::new(8);
        let mut g = Graph::new();
        let (a, p) = batch(&mut g, &mut s, 4, 16);
        let targets = vec![ItemId(1), ItemId(2), ItemId(3), ItemId(4)];
        let out = build_negative_sets(&mut g, &a, &p, &targets, 0.3, true).unwrap();
        for (i, set) in out.sets.iter().enumerate() {
            let set = set.as_ref().unwrap();
            assert_eq!(dominance_violations(&g, set, a[i]), 0);
            let orig = g.value(set.originals).clone();
            let syn = g.value(set.synthesized.unwrap()).clone();
            for r in 0..orig.rows() {
                let no = l2_norm(orig.row(r));
                let ns = l2_norm(syn.row(r));
                assert!((ns - no).abs() <= 1e-9 * no, "row {r}: {ns} vs {no}");
            }
        }
    }

    #[test]
    fn synthesized_negatives_carry_no_gradient() {
        // loss = sum of inner(anchor, synth_row): the negative leaves must
        // see zero gradient, the anchor a nonzero one
        let mut s = Stream::new(9);
        let mut g = Graph::new();
        let (a, p) = batch(&mut g, &mut s, 2, 8);
        let targets = vec![ItemId(1), ItemId(2)];
        let out = build_negative_sets(&mut g, &a, &p, &targets, 0.3, true).unwrap();
        let set = out.sets[0].as_ref().unwrap();
        let sims = g.matvec(set.synthesized.unwrap(), a[0]).unwrap();
        let loss = g.sum(sims);
        g.backward(loss).unwrap();
        assert!(g.grad(a[1]).data().iter().all(|&v| v == 0.0));
        assert!(g.grad(p[0]).data().iter().all(|&v| v == 0.0));
        assert!(g.grad(p[1]).data().iter().all(|&v| v == 0.0));
        assert!(g.grad(a[0]).data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn cosine_to_anchor_is_monotone_in_lambda() {
        let mut s = Stream::new(10);
        for _ in 0..20 {
            let av = rand_vec(&mut s, 8, 2.0);
            let nv = rand_vec(&mut s, 8, 2.0);
            let mut last = -2.0;
            for step in 1..20 {
                let lambda = step as f64 * 0.05;
                let mut g = Graph::new();
                let a = g.leaf(Tensor::vector(av.clone()));
                let n = g.leaf(Tensor::vector(nv.clone()));
                let out = mix_hard_negative(&mut g, a, n, lambda).unwrap();
                let hv = g.value(out.node).data();
                let cos = dot(hv, &av) / (l2_norm(hv) * l2_norm(&av));
                assert!(
                    cos >= last - 1e-12,
                    "cosine not monotone at lambda {lambda}: {cos} < {last}"
                );
                last = cos;
            }
        }
    }
}

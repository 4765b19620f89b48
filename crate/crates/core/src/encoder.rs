//! Reference sequence encoder: item + position embeddings, one causal
//! self-attention block (single head), and a d -> 4d -> d feed-forward
//! with tanh activation, residual connections around both sublayers.
//!
//! Positions are indexed over the unpadded prefix from its start, so a
//! one-item prefix always uses position row 0 and padding never enters the
//! computation (row 0 of the embedding table is reserved for padding and
//! receives no gradient).
//!
//! Dropout is model-level (inverted masks, scale 1/(1-p)) at three sites:
//! after the embedding sum, after the attention output projection, and
//! after the feed-forward. All masks for one call come from a single
//! stream seeded by the caller, so a call is fully determined by
//! (params, prefix, dropout_on, seed).

use alloc::string::String;
use alloc::vec::Vec;

use crate::data::ItemId;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::math;
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

pub const PARAM_NAMES: [&str; 10] = [
    "item_embeddings",
    "position_embeddings",
    "attn_query",
    "attn_key",
    "attn_value",
    "attn_output",
    "ff1_weight",
    "ff1_bias",
    "ff2_weight",
    "ff2_bias",
];

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub n_items: usize,
    pub dim: usize,
    pub max_len: usize,
    pub dropout_rate: f64,
    /// (N+1) x d; row 0 is the padding embedding and stays zero.
    pub item_embeddings: Tensor,
    /// max_len x d.
    pub position_embeddings: Tensor,
    pub attn_query: Tensor,
    pub attn_key: Tensor,
    pub attn_value: Tensor,
    pub attn_output: Tensor,
    pub ff1_weight: Tensor,
    pub ff1_bias: Tensor,
    pub ff2_weight: Tensor,
    pub ff2_bias: Tensor,
}

impl EncoderParams {
    /// Xavier-uniform projections, uniform(+-1/sqrt(d)) embeddings, zero
    /// biases and padding row. Fully determined by `master_seed`.
    pub fn init(
        n_items: usize,
        dim: usize,
        max_len: usize,
        dropout_rate: f64,
        master_seed: u64,
    ) -> Self {
        let mut s = Stream::new(rng::derive_seed(master_seed, &[rng::stream::PARAM_INIT]));
        let emb_scale = 1.0 / math::sqrt(dim as f64);
        let mut emb = Tensor::zeros(&[n_items + 1, dim]);
        for r in 1..=n_items {
            for v in emb.row_mut(r) {
                *v = s.symmetric_f64(emb_scale);
            }
        }
        let mut pos = Tensor::zeros(&[max_len, dim]);
        for v in pos.data_mut() {
            *v = s.symmetric_f64(emb_scale);
        }
        let square = |s: &mut Stream| {
            let limit = math::sqrt(6.0 / (dim + dim) as f64);
            let data = (0..dim * dim).map(|_| s.symmetric_f64(limit)).collect();
            Tensor::matrix(dim, dim, data)
        };
        let attn_query = square(&mut s);
        let attn_key = square(&mut s);
        let attn_value = square(&mut s);
        let attn_output = square(&mut s);
        let hidden = 4 * dim;
        let lim1 = math::sqrt(6.0 / (dim + hidden) as f64);
        let ff1_weight = Tensor::matrix(
            dim,
            hidden,
            (0..dim * hidden).map(|_| s.symmetric_f64(lim1)).collect(),
        );
        let ff2_weight = Tensor::matrix(
            hidden,
            dim,
            (0..hidden * dim).map(|_| s.symmetric_f64(lim1)).collect(),
        );
        EncoderParams {
            n_items,
            dim,
            max_len,
            dropout_rate,
            item_embeddings: emb,
            position_embeddings: pos,
            attn_query,
            attn_key,
            attn_value,
            attn_output,
            ff1_weight,
            ff1_bias: Tensor::zeros(&[hidden]),
            ff2_weight,
            ff2_bias: Tensor::zeros(&[dim]),
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        PARAM_NAMES
            .iter()
            .zip([
                &self.item_embeddings,
                &self.position_embeddings,
                &self.attn_query,
                &self.attn_key,
                &self.attn_value,
                &self.attn_output,
                &self.ff1_weight,
                &self.ff1_bias,
                &self.ff2_weight,
                &self.ff2_bias,
            ])
            .map(|(&n, t)| (n, t))
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        alloc::vec![
            &mut self.item_embeddings,
            &mut self.position_embeddings,
            &mut self.attn_query,
            &mut self.attn_key,
            &mut self.attn_value,
            &mut self.attn_output,
            &mut self.ff1_weight,
            &mut self.ff1_bias,
            &mut self.ff2_weight,
            &mut self.ff2_bias,
        ]
    }

    /// Rebuild parameters from named tensors (checkpoint load path).
    pub fn from_named(named: Vec<(String, Tensor)>, dropout_rate: f64) -> Result<Self> {
        let mut lookup: alloc::collections::BTreeMap<String, Tensor> = named.into_iter().collect();
        let mut take = |name: &str| {
            lookup.remove(name).ok_or(Error::BadCheckpoint {
                message: alloc::format!("missing tensor `{name}`"),
            })
        };
        let item_embeddings = take("item_embeddings")?;
        let position_embeddings = take("position_embeddings")?;
        let attn_query = take("attn_query")?;
        let attn_key = take("attn_key")?;
        let attn_value = take("attn_value")?;
        let attn_output = take("attn_output")?;
        let ff1_weight = take("ff1_weight")?;
        let ff1_bias = take("ff1_bias")?;
        let ff2_weight = take("ff2_weight")?;
        let ff2_bias = take("ff2_bias")?;
        if !lookup.is_empty() {
            return Err(Error::BadCheckpoint {
                message: alloc::format!(
                    "unexpected tensors: {:?}",
                    lookup.keys().collect::<Vec<_>>()
                ),
            });
        }
        if item_embeddings.shape().len() != 2 || position_embeddings.shape().len() != 2 {
            return Err(Error::BadCheckpoint {
                message: "embedding tensors must be matrices".into(),
            });
        }
        let dim = item_embeddings.cols();
        let params = EncoderParams {
            n_items: item_embeddings.rows() - 1,
            dim,
            max_len: position_embeddings.rows(),
            dropout_rate,
            item_embeddings,
            position_embeddings,
            attn_query,
            attn_key,
            attn_value,
            attn_output,
            ff1_weight,
            ff1_bias,
            ff2_weight,
            ff2_bias,
        };
        let expect = |cond: bool, what: &str| {
            if cond {
                Ok(())
            } else {
                Err(Error::BadCheckpoint {
                    message: alloc::format!("shape mismatch for {what}"),
                })
            }
        };
        expect(params.position_embeddings.cols() == dim, "position_embeddings")?;
        for t in [
            &params.attn_query,
            &params.attn_key,
            &params.attn_value,
            &params.attn_output,
        ] {
            expect(t.shape() == [dim, dim], "attention projection")?;
        }
        expect(params.ff1_weight.shape() == [dim, 4 * dim], "ff1_weight")?;
        expect(params.ff1_bias.shape() == [4 * dim], "ff1_bias")?;
        expect(params.ff2_weight.shape() == [4 * dim, dim], "ff2_weight")?;
        expect(params.ff2_bias.shape() == [dim], "ff2_bias")?;
        Ok(params)
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.all_finite())
    }
}

/// Parameter leaves registered on one graph, in [`PARAM_NAMES`] order.
#[derive(Debug, Clone, Copy)]
pub struct BoundEncoder {
    pub item_embeddings: NodeId,
    pub position_embeddings: NodeId,
    pub attn_query: NodeId,
    pub attn_key: NodeId,
    pub attn_value: NodeId,
    pub attn_output: NodeId,
    pub ff1_weight: NodeId,
    pub ff1_bias: NodeId,
    pub ff2_weight: NodeId,
    pub ff2_bias: NodeId,
}

impl BoundEncoder {
    pub fn bind(params: &EncoderParams, g: &mut Graph) -> Self {
        BoundEncoder {
            item_embeddings: g.leaf(params.item_embeddings.clone()),
            position_embeddings: g.leaf(params.position_embeddings.clone()),
            attn_query: g.leaf(params.attn_query.clone()),
            attn_key: g.leaf(params.attn_key.clone()),
            attn_value: g.leaf(params.attn_value.clone()),
            attn_output: g.leaf(params.attn_output.clone()),
            ff1_weight: g.leaf(params.ff1_weight.clone()),
            ff1_bias: g.leaf(params.ff1_bias.clone()),
            ff2_weight: g.leaf(params.ff2_weight.clone()),
            ff2_bias: g.leaf(params.ff2_bias.clone()),
        }
    }

    pub fn ids(&self) -> [NodeId; 10] {
        [
            self.item_embeddings,
            self.position_embeddings,
            self.attn_query,
            self.attn_key,
            self.attn_value,
            self.attn_output,
            self.ff1_weight,
            self.ff1_bias,
            self.ff2_weight,
            self.ff2_bias,
        ]
    }
}

fn dropout(
    g: &mut Graph,
    x: NodeId,
    rate: f64,
    stream: &mut Stream,
    active: bool,
) -> Result<NodeId> {
    if !active || rate <= 0.0 {
        return Ok(x);
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let shape = g.value(x).shape().to_vec();
    let mut mask = Tensor::zeros(&shape);
    for v in mask.data_mut() {
        *v = if stream.unit_f64() < rate { 0.0 } else { keep_scale };
    }
    let m = g.constant(mask);
    g.mul(x, m)
}

/// Encode a (possibly padded) prefix into its user representation: the
/// block output at the last real position.
pub fn encode(
    g: &mut Graph,
    params: &EncoderParams,
    bound: &BoundEncoder,
    prefix: &[ItemId],
    dropout_on: bool,
    seed: u64,
) -> Result<NodeId> {
    let items: Vec<usize> = prefix
        .iter()
        .filter(|id| !id.is_padding())
        .map(|id| id.0 as usize)
        .collect();
    if items.is_empty() {
        return Err(Error::AllPaddingPrefix);
    }
    let start = items.len().saturating_sub(params.max_len);
    let items = &items[start..];
    let t = items.len();
    for &r in items {
        if r > params.n_items {
            return Err(Error::ItemOutOfCatalog {
                item: r as u32,
                catalog: params.n_items,
            });
        }
    }
    let mut mask_stream = Stream::new(seed);

    let item_rows = g.gather_rows(bound.item_embeddings, items)?;
    let positions: Vec<usize> = (0..t).collect();
    let pos_rows = g.gather_rows(bound.position_embeddings, &positions)?;
    let x = g.add(item_rows, pos_rows)?;
    let x = dropout(g, x, params.dropout_rate, &mut mask_stream, dropout_on)?;

    // pre-normalized attention sublayer; standardization is parameter-free
    // and keeps representation norms bounded at sqrt(d)
    let attn_in = g.row_standardize(x);
    let q = g.matmul(attn_in, bound.attn_query)?;
    let k = g.matmul(attn_in, bound.attn_key)?;
    let v = g.matmul(attn_in, bound.attn_value)?;
    let raw_scores = g.matmul_trans_b(q, k)?;
    let scores = g.scale(raw_scores, 1.0 / math::sqrt(params.dim as f64));
    let attn = g.causal_row_softmax(scores)?;
    let mixed = g.matmul(attn, v)?;
    let projected = g.matmul(mixed, bound.attn_output)?;
    let projected = dropout(g, projected, params.dropout_rate, &mut mask_stream, dropout_on)?;
    let x1 = g.add(x, projected)?;

    let ff_in = g.row_standardize(x1);
    let f1 = g.matmul(ff_in, bound.ff1_weight)?;
    let f1 = g.add_row_broadcast(f1, bound.ff1_bias)?;
    let h1 = g.tanh(f1);
    let f2 = g.matmul(h1, bound.ff2_weight)?;
    let f2 = g.add_row_broadcast(f2, bound.ff2_bias)?;
    let f2 = dropout(g, f2, params.dropout_rate, &mut mask_stream, dropout_on)?;
    let x2 = g.add(x1, f2)?;
    let x2 = g.row_standardize(x2);

    Ok(g.select_row(x2, t - 1))
}

/// Two dropout-perturbed passes over the same prefix; both carry gradients.
pub fn encode_dual_views(
    g: &mut Graph,
    params: &EncoderParams,
    bound: &BoundEncoder,
    prefix: &[ItemId],
    seed_a: u64,
    seed_b: u64,
) -> Result<(NodeId, NodeId)> {
    let a = encode(g, params, bound, prefix, true, seed_a)?;
    let b = encode(g, params, bound, prefix, true, seed_b)?;
    Ok((a, b))
}

/// Softmax scores of every catalog item for a user representation. The
/// padding row is excluded, so both vectors have length N and `probs`
/// sums to 1.
#[derive(Debug, Clone, Copy)]
pub struct ScoredItems {
    pub scores: NodeId,
    pub probs: NodeId,
    pub log_probs: NodeId,
}

pub fn score_all(g: &mut Graph, emb: NodeId, user_repr: NodeId) -> Result<ScoredItems> {
    let scores = g.score_all(emb, user_repr)?;
    let probs = g.softmax(scores);
    let log_probs = g.log_softmax(scores);
    Ok(ScoredItems {
        scores,
        probs,
        log_probs,
    })
}

/// Forward-only encode used by evaluation (dropout off, throwaway graph).
pub fn encode_value(params: &EncoderParams, prefix: &[ItemId]) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let bound = BoundEncoder::bind(params, &mut g);
    let h = encode(&mut g, params, &bound, prefix, false, 0)?;
    Ok(g.value(h).data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn small_params(seed: u64) -> EncoderParams {
        EncoderParams::init(6, 8, 5, 0.2, seed)
    }

    fn prefix(ids: &[u32]) -> Vec<ItemId> {
        ids.iter().map(|&v| ItemId(v)).collect()
    }

    #[test]
    fn encode_without_dropout_is_deterministic() {
        let p = small_params(3);
        let h1 = encode_value(&p, &prefix(&[0, 0, 1, 2, 3])).unwrap();
        let h2 = encode_value(&p, &prefix(&[0, 0, 1, 2, 3])).unwrap();
        assert_eq!(h1, h2);
    }

    #[test]
    fn dropout_seeds_change_output() {
        let p = small_params(3);
        let mut g = Graph::new();
        let b = BoundEncoder::bind(&p, &mut g);
        let pre = prefix(&[1, 2, 3, 4, 5]);
        let (a, bb) = encode_dual_views(&mut g, &p, &b, &pre, 10, 11).unwrap();
        assert_ne!(g.value(a).data(), g.value(bb).data());
        // same seed pair twice gives identical views
        let (a2, b2) = encode_dual_views(&mut g, &p, &b, &pre, 10, 11).unwrap();
        assert_eq!(g.value(a).data(), g.value(a2).data());
        assert_eq!(g.value(bb).data(), g.value(b2).data());
    }

    #[test]
    fn zero_dropout_rate_gives_identical_views() {
        let mut p = small_params(3);
        p.dropout_rate = 0.0;
        let mut g = Graph::new();
        let b = BoundEncoder::bind(&p, &mut g);
        let (a, bb) = encode_dual_views(&mut g, &p, &b, &prefix(&[1, 2]), 10, 11).unwrap();
        assert_eq!(g.value(a).data(), g.value(bb).data());
    }

    #[test]
    fn all_padding_prefix_is_an_error() {
        let p = small_params(3);
        assert!(matches!(
            encode_value(&p, &prefix(&[0, 0, 0])),
            Err(Error::AllPaddingPrefix)
        ));
    }

    #[test]
    fn encode_is_order_sensitive() {
        let p = small_params(9);
        let h_ab = encode_value(&p, &prefix(&[1, 2])).unwrap();
        let h_ba = encode_value(&p, &prefix(&[2, 1])).unwrap();
        assert_ne!(h_ab, h_ba);
    }

    #[test]
    fn single_item_prefix_matches_hand_rolled_forward() {
        // With one position the attention softmax is the single weight 1,
        // so the block reduces to a chain of small matvecs and row
        // standardizations evaluated here with plain loops.
        let p = small_params(17);
        let item = 4usize;
        let d = p.dim;
        let standardize = |v: &[f64]| -> Vec<f64> {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let sigma = (var + 1e-8).sqrt();
            v.iter().map(|x| (x - mean) / sigma).collect()
        };
        let project = |v: &[f64], w: &Tensor| -> Vec<f64> {
            (0..w.cols())
                .map(|j| (0..v.len()).map(|i| v[i] * w.row(i)[j]).sum())
                .collect()
        };
        let x0: Vec<f64> = (0..d)
            .map(|j| p.item_embeddings.row(item)[j] + p.position_embeddings.row(0)[j])
            .collect();
        let attn_in = standardize(&x0);
        let attn_v = project(&attn_in, &p.attn_value);
        let o = project(&attn_v, &p.attn_output);
        let x1: Vec<f64> = (0..d).map(|j| x0[j] + o[j]).collect();
        let ff_in = standardize(&x1);
        let mut f1 = project(&ff_in, &p.ff1_weight);
        for (j, v) in f1.iter_mut().enumerate() {
            *v = libm::tanh(*v + p.ff1_bias.data()[j]);
        }
        let mut f2 = project(&f1, &p.ff2_weight);
        for (j, v) in f2.iter_mut().enumerate() {
            *v += p.ff2_bias.data()[j];
        }
        let x2: Vec<f64> = (0..d).map(|j| x1[j] + f2[j]).collect();
        let expected = standardize(&x2);

        let h = encode_value(&p, &prefix(&[item as u32])).unwrap();
        for (a, e) in h.iter().zip(&expected) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn score_all_excludes_padding_and_sums_to_one() {
        let p = small_params(5);
        let mut g = Graph::new();
        let b = BoundEncoder::bind(&p, &mut g);
        let h = encode(&mut g, &p, &b, &prefix(&[1, 2, 3]), false, 0).unwrap();
        let scored = score_all(&mut g, b.item_embeddings, h).unwrap();
        let probs = g.value(scored.probs).data();
        assert_eq!(probs.len(), p.n_items);
        let sum: f64 = probs.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn identical_embeddings_score_equally() {
        let mut p = small_params(5);
        let row1 = p.item_embeddings.row(1).to_vec();
        p.item_embeddings.row_mut(2).copy_from_slice(&row1);
        let mut g = Graph::new();
        let b = BoundEncoder::bind(&p, &mut g);
        let h = encode(&mut g, &p, &b, &prefix(&[3]), false, 0).unwrap();
        let scored = score_all(&mut g, b.item_embeddings, h).unwrap();
        let probs = g.value(scored.probs).data();
        assert!((probs[0] - probs[1]).abs() < 1e-15);
    }

    #[test]
    fn named_tensor_round_trip() {
        let p = small_params(23);
        let named: Vec<(String, Tensor)> = p
            .tensors()
            .into_iter()
            .map(|(n, t)| (String::from(n), t.clone()))
            .collect();
        let q = EncoderParams::from_named(named, p.dropout_rate).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn from_named_rejects_missing_and_extra() {
        let p = small_params(23);
        let mut named: Vec<(String, Tensor)> = p
            .tensors()
            .into_iter()
            .map(|(n, t)| (String::from(n), t.clone()))
            .collect();
        let extra = named.clone();
        named.pop();
        assert!(EncoderParams::from_named(named, 0.2).is_err());
        let mut bloated = extra;
        bloated.push((String::from("mystery"), Tensor::scalar(1.0)));
        assert!(EncoderParams::from_named(bloated, 0.2).is_err());
    }

    #[test]
    fn catalog_bounds_are_checked() {
        let p = small_params(3);
        assert!(matches!(
            encode_value(&p, &prefix(&[7])),
            Err(Error::ItemOutOfCatalog { .. })
        ));
    }

    #[test]
    fn long_context_keeps_most_recent_items() {
        let p = small_params(31);
        // max_len 5; a 7-item context must equal its last-5 suffix encoding
        let full = prefix(&[1, 2, 3, 4, 5, 6, 1]);
        let suffix = prefix(&[3, 4, 5, 6, 1]);
        assert_eq!(
            encode_value(&p, &full).unwrap(),
            encode_value(&p, &suffix).unwrap()
        );
    }
}

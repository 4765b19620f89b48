//! Release-gate property suites runnable from the CLI: vector-mixing
//! dominance and norm preservation, loss reduction identities, soft-label
//! algebra, gradient checks against central finite differences, metric
//! closed forms, encoder contracts, and the plain-CE training reduction.
//! Each suite reports its case count and worst observed error; any failure
//! makes the command exit nonzero.

use std::time::Instant;

use fenrec_core::data::ItemId;
use fenrec_core::encoder::{encode, encode_value, score_all, BoundEncoder, EncoderParams};
use fenrec_core::graph::{Graph, NodeId};
use fenrec_core::loss::{self, ContrastiveConfig};
use fenrec_core::metrics::{hr_ndcg, rank_target, uniformity};
use fenrec_core::negatives::{build_negative_sets, mix_hard_negative};
use fenrec_core::rng::Stream;
use fenrec_core::softlabel::{build_soft_label, revised_cross_entropy};
use fenrec_core::tensor::{dot, l2_norm};
use fenrec_core::train::{fit, HyperParams};
use fenrec_core::Tensor;

pub struct SuiteResult {
    pub name: &'static str,
    pub cases: usize,
    pub max_error: f64,
    pub passed: bool,
    pub note: String,
}

impl SuiteResult {
    fn new(name: &'static str, cases: usize, max_error: f64, tolerance: f64) -> Self {
        SuiteResult {
            name,
            cases,
            max_error,
            passed: max_error <= tolerance,
            note: format!("tolerance {tolerance:e}"),
        }
    }
}

pub fn run_all() -> Vec<SuiteResult> {
    vec![
        lemma2_dominance(),
        norm_preservation(),
        lemma1_cosine(),
        lambda_monotonicity(),
        loss_reductions(),
        softlabel_algebra(),
        gradient_checks(),
        metric_closed_forms(),
        encoder_contracts(),
        training_reduction(),
    ]
}

fn rand_vec(s: &mut Stream, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| s.symmetric_f64(scale)).collect()
}

fn lemma2_dominance() -> SuiteResult {
    let start = Instant::now();
    let mut s = Stream::new(0xfe0_001);
    let mut worst = f64::NEG_INFINITY;
    let mut cases = 0;
    for _ in 0..10_000 {
        let anchor = rand_vec(&mut s, 64, 2.0);
        let negative = rand_vec(&mut s, 64, 2.0);
        let base = dot(&negative, &anchor);
        for step in 1..=9 {
            let lambda = step as f64 * 0.1;
            let mut g = Graph::new();
            let a = g.leaf(Tensor::vector(anchor.clone()));
            let n = g.leaf(Tensor::vector(negative.clone()));
            let out = mix_hard_negative(&mut g, a, n, lambda).expect("mix");
            let mixed = dot(g.value(out.node).data(), &anchor);
            worst = worst.max(base - mixed);
            cases += 1;
        }
    }
    let elapsed = start.elapsed();
    let mut result = SuiteResult::new("lemma2-dominance", cases, worst.max(0.0), 1e-9);
    result.note = format!("max deficit {worst:e}, elapsed {elapsed:.2?}");
    result.passed &= elapsed.as_secs_f64() < 5.0;
    result
}

fn norm_preservation() -> SuiteResult {
    let mut s = Stream::new(0xfe0_001); // same pair stream as dominance
    let mut worst = 0.0_f64;
    let mut cases = 0;
    for _ in 0..10_000 {
        let anchor = rand_vec(&mut s, 64, 2.0);
        let negative = rand_vec(&mut s, 64, 2.0);
        let n_norm = l2_norm(&negative);
        for step in 1..=9 {
            let lambda = step as f64 * 0.1;
            let mut g = Graph::new();
            let a = g.leaf(Tensor::vector(anchor.clone()));
            let n = g.leaf(Tensor::vector(negative.clone()));
            let out = mix_hard_negative(&mut g, a, n, lambda).expect("mix");
            let h_norm = l2_norm(g.value(out.node).data());
            worst = worst.max((h_norm - n_norm).abs() / n_norm);
            cases += 1;
        }
    }
    SuiteResult::new("norm-preservation", cases, worst, 1e-9)
}

fn lemma1_cosine() -> SuiteResult {
    let mut s = Stream::new(0xfe0_002);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..10_000 {
        let x = rand_vec(&mut s, 64, 2.0);
        let y = rand_vec(&mut s, 64, 2.0);
        let z: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        let cos_xz = dot(&x, &z) / (l2_norm(&x) * l2_norm(&z));
        let cos_xy = dot(&x, &y) / (l2_norm(&x) * l2_norm(&y));
        worst = worst.max(cos_xy - cos_xz);
    }
    SuiteResult::new("lemma1-cosine", 10_000, worst.max(0.0), 1e-12)
}

fn lambda_monotonicity() -> SuiteResult {
    let mut s = Stream::new(0xfe0_003);
    let mut worst = f64::NEG_INFINITY;
    let mut cases = 0;
    for _ in 0..200 {
        let anchor = rand_vec(&mut s, 64, 2.0);
        let negative = rand_vec(&mut s, 64, 2.0);
        let mut previous = -2.0;
        for step in 1..=19 {
            let lambda = step as f64 * 0.05;
            let mut g = Graph::new();
            let a = g.leaf(Tensor::vector(anchor.clone()));
            let n = g.leaf(Tensor::vector(negative.clone()));
            let out = mix_hard_negative(&mut g, a, n, lambda).expect("mix");
            let hv = g.value(out.node).data();
            let cos = dot(hv, &anchor) / (l2_norm(hv) * l2_norm(&anchor));
            worst = worst.max(previous - cos);
            previous = cos;
            cases += 1;
        }
    }
    SuiteResult::new("lambda-monotonicity", cases, worst.max(0.0), 1e-12)
}

fn loss_reductions() -> SuiteResult {
    let mut s = Stream::new(0xfe0_004);
    let mut worst = 0.0_f64;
    let mut bitwise_ok = true;
    for _ in 0..100 {
        let mut g = Graph::new();
        let anchors: Vec<NodeId> = (0..3)
            .map(|_| {
                let v = rand_vec(&mut s, 16, 1.5);
                g.leaf(Tensor::vector(v))
            })
            .collect();
        let positives: Vec<NodeId> = (0..3)
            .map(|_| {
                let v = rand_vec(&mut s, 16, 1.5);
                g.leaf(Tensor::vector(v))
            })
            .collect();
        let targets = vec![ItemId(1), ItemId(2), ItemId(3)];
        let batch =
            build_negative_sets(&mut g, &anchors, &positives, &targets, 0.3, true).expect("sets");
        let set = batch.sets[0].as_ref().unwrap();
        let disabled = ContrastiveConfig {
            mu: 0.0,
            margin: 0.0,
            upweighting_enabled: false,
            mixing_enabled: false,
            ..ContrastiveConfig::default()
        };
        let full =
            loss::upweighted_loss(&mut g, anchors[0], positives[0], set, &disabled).expect("loss");
        let mixed = loss::mixed_negative_loss(&mut g, anchors[0], positives[0], set, &disabled)
            .expect("loss");
        let plain =
            loss::info_nce(&mut g, anchors[0], positives[0], set, &disabled).expect("loss");
        let (f, m, p) = (
            g.value(full).item(),
            g.value(mixed).item(),
            g.value(plain).item(),
        );
        worst = worst.max((f - p).abs()).max((m - p).abs());
        bitwise_ok &= m.to_bits() == p.to_bits();
    }

    // soft-label limit folded into the same suite
    let n = 6;
    for _ in 0..100 {
        let scores = rand_vec(&mut s, n, 3.0);
        let window = [
            (ItemId(1 + s.below(n) as u32), 0u8),
            (ItemId(1 + s.below(n) as u32), 1),
            (ItemId(1 + s.below(n) as u32), 2),
        ];
        let eval = |label: &fenrec_core::softlabel::SoftLabel| {
            let mut g = Graph::new();
            let sc = g.leaf(Tensor::vector(scores.clone()));
            let lp = g.log_softmax(sc);
            let l = revised_cross_entropy(&mut g, lp, label, n).expect("ce");
            g.value(l).item()
        };
        let soft = build_soft_label(&window, 1e-8).unwrap();
        let hard = build_soft_label(&window[..1], 0.5).unwrap();
        let gap = (eval(&soft) - eval(&hard)).abs() / 1e3; // tolerance 1e-6 scaled to 1e-9 gate
        worst = worst.max(gap);
    }

    let mut result = SuiteResult::new("loss-reductions", 200, worst, 1e-9);
    result.passed &= bitwise_ok;
    if !bitwise_ok {
        result.note = "mu=0 path not bit-identical to InfoNCE".to_string();
    }
    result
}

fn softlabel_algebra() -> SuiteResult {
    let mut worst = 0.0_f64;
    let mut cases = 0;

    let label = build_soft_label(&[(ItemId(7), 0), (ItemId(8), 1), (ItemId(9), 2)], 0.5).unwrap();
    worst = worst.max((label.probability(ItemId(7)) - 4.0 / 7.0).abs());
    worst = worst.max((label.probability(ItemId(8)) - 2.0 / 7.0).abs());
    worst = worst.max((label.probability(ItemId(9)) - 1.0 / 7.0).abs());
    let sum: f64 = label.entries().iter().map(|(_, p)| p).sum();
    worst = worst.max((sum - 1.0).abs());
    let ratio0 = label.probability(ItemId(7)) / label.probability(ItemId(8));
    let ratio1 = label.probability(ItemId(8)) / label.probability(ItemId(9));
    worst = worst.max((ratio0 - 2.0).abs()).max((ratio1 - 2.0).abs());
    cases += 6;

    let mut s = Stream::new(0xfe0_005);
    for _ in 0..100 {
        let gamma = 0.05 + 0.9 * s.unit_f64();
        let l = build_soft_label(
            &[(ItemId(1), 0), (ItemId(2), 1), (ItemId(3), 2)],
            gamma,
        )
        .unwrap();
        let total: f64 = l.entries().iter().map(|(_, p)| p).sum();
        worst = worst.max((total - 1.0).abs());
        let r = l.probability(ItemId(1)) / l.probability(ItemId(2));
        worst = worst.max((r - 1.0 / gamma).abs() / (1.0 / gamma) / 1e3);
        cases += 2;
    }

    // exponentiated-gradient minimizer lands on the label (N = 4 simplex)
    let label = build_soft_label(&[(ItemId(1), 0), (ItemId(2), 1), (ItemId(3), 2)], 0.4).unwrap();
    let target: Vec<f64> = (0..4)
        .map(|i| label.probability(ItemId(i as u32 + 1)))
        .collect();
    let mut q = vec![0.25; 4];
    for _ in 0..5_000 {
        let grad: Vec<f64> = (0..4)
            .map(|i| if target[i] > 0.0 { -target[i] / q[i] } else { 0.0 })
            .collect();
        for i in 0..4 {
            q[i] *= (-0.05 * grad[i]).exp();
        }
        let z: f64 = q.iter().sum();
        for v in q.iter_mut() {
            *v /= z;
        }
    }
    for i in 0..4 {
        worst = worst.max((q[i] - target[i]).abs() / 1e8); // 1e-4 gate scaled to 1e-12
        cases += 1;
    }

    SuiteResult::new("softlabel-algebra", cases, worst, 1e-12)
}

struct GradCheckSetup {
    meta: EncoderParams,
}

impl GradCheckSetup {
    fn new(seed: u64) -> Self {
        GradCheckSetup {
            meta: EncoderParams::init(6, 8, 4, 0.2, seed),
        }
    }

    fn prefixes(&self) -> [Vec<ItemId>; 2] {
        [
            vec![ItemId(1), ItemId(2), ItemId(3)],
            vec![ItemId(4), ItemId(5), ItemId(6)],
        ]
    }

    fn windows(&self) -> [Vec<(ItemId, u8)>; 2] {
        [
            vec![(ItemId(4), 0), (ItemId(5), 1)],
            vec![(ItemId(2), 0), (ItemId(1), 1)],
        ]
    }

    fn frozen_synth(&self, forward: bool) -> Vec<Tensor> {
        let mut g = Graph::new();
        let bound = BoundEncoder::bind(&self.meta, &mut g);
        let (a, p) = self.encode_batch(&mut g, &bound);
        let (a, p) = if forward { (a, p) } else { (p, a) };
        let targets: Vec<ItemId> = self.windows().iter().map(|w| w[0].0).collect();
        let batch = build_negative_sets(&mut g, &a, &p, &targets, 0.3, true).expect("sets");
        batch
            .sets
            .iter()
            .map(|s| g.value(s.as_ref().unwrap().synthesized.unwrap()).clone())
            .collect()
    }

    fn encode_batch(&self, g: &mut Graph, bound: &BoundEncoder) -> (Vec<NodeId>, Vec<NodeId>) {
        let mut anchors = Vec::new();
        let mut positives = Vec::new();
        for (i, prefix) in self.prefixes().iter().enumerate() {
            anchors.push(encode(g, &self.meta, bound, prefix, true, 100 + i as u64).unwrap());
            positives.push(encode(g, &self.meta, bound, prefix, true, 200 + i as u64).unwrap());
        }
        (anchors, positives)
    }
}

fn bind_ids(ids: &[NodeId]) -> BoundEncoder {
    BoundEncoder {
        item_embeddings: ids[0],
        position_embeddings: ids[1],
        attn_query: ids[2],
        attn_key: ids[3],
        attn_value: ids[4],
        attn_output: ids[5],
        ff1_weight: ids[6],
        ff1_bias: ids[7],
        ff2_weight: ids[8],
        ff2_bias: ids[9],
    }
}

/// Worst relative finite-difference error over every parameter entry.
fn fd_worst(
    setup: &GradCheckSetup,
    build: impl Fn(&mut Graph, &BoundEncoder) -> NodeId,
) -> (f64, usize) {
    let inputs: Vec<Tensor> = setup.meta.tensors().into_iter().map(|(_, t)| t.clone()).collect();
    let eval = |tensors: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| g.leaf(t.clone())).collect();
        let bound = bind_ids(&ids);
        let loss = build(&mut g, &bound);
        g.value(loss).item()
    };
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let bound = bind_ids(&ids);
    let loss = build(&mut g, &bound);
    g.backward(loss).expect("backward");
    let grads: Vec<Tensor> = ids.iter().map(|&id| g.grad(id)).collect();

    let step = 1e-5;
    let mut worst = 0.0_f64;
    let mut cases = 0;
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += step;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= step;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * step);
            let ad = grads[i].data()[j];
            let scale = 1.0_f64.max(ad.abs()).max(fd.abs());
            worst = worst.max((ad - fd).abs() / scale);
            cases += 1;
        }
    }
    (worst, cases)
}

fn gradient_checks() -> SuiteResult {
    let setup = GradCheckSetup::new(77);
    let targets: Vec<ItemId> = setup.windows().iter().map(|w| w[0].0).collect();
    let mut worst = 0.0_f64;
    let mut cases = 0;

    // revised cross-entropy
    let windows = setup.windows();
    let (w, c) = fd_worst(&setup, |g, bound| {
        let (anchors, _) = setup.encode_batch(g, bound);
        let mut recs = Vec::new();
        for (i, window) in windows.iter().enumerate() {
            let scored = score_all(g, bound.item_embeddings, anchors[i]).unwrap();
            let label = build_soft_label(window, 0.3).unwrap();
            recs.push(revised_cross_entropy(g, scored.log_probs, &label, 6).unwrap());
        }
        let v = g.concat(&recs);
        g.mean(v)
    });
    worst = worst.max(w);
    cases += c;

    // the three contrastive variants plus the total objective
    let variants: [(&str, ContrastiveConfig, bool); 3] = [
        (
            "info_nce",
            ContrastiveConfig {
                mu: 0.0,
                margin: 0.0,
                upweighting_enabled: false,
                mixing_enabled: false,
                ..ContrastiveConfig::default()
            },
            false,
        ),
        (
            "mixed",
            ContrastiveConfig {
                mu: 0.1,
                margin: 0.0,
                upweighting_enabled: false,
                mixing_enabled: true,
                ..ContrastiveConfig::default()
            },
            true,
        ),
        (
            "upweighted",
            ContrastiveConfig::default(),
            true,
        ),
    ];
    for (_, cfg, synthesize) in variants {
        let frozen = synthesize.then(|| setup.frozen_synth(true));
        let targets = targets.clone();
        let (w, c) = fd_worst(&setup, |g, bound| {
            let (anchors, positives) = setup.encode_batch(g, bound);
            let batch =
                build_negative_sets(g, &anchors, &positives, &targets, 0.3, false).unwrap();
            let mut terms = Vec::new();
            for i in 0..2 {
                let mut set = *batch.sets[i].as_ref().unwrap();
                if let Some(rows) = &frozen {
                    set.synthesized = Some(g.constant(rows[i].clone()));
                }
                terms.push(
                    loss::upweighted_loss(g, anchors[i], positives[i], &set, &cfg).unwrap(),
                );
            }
            let v = g.concat(&terms);
            g.mean(v)
        });
        worst = worst.max(w);
        cases += c;
    }

    // total objective (both contrastive directions plus recommendation)
    let frozen_fwd = setup.frozen_synth(true);
    let frozen_bwd = setup.frozen_synth(false);
    let cfg = ContrastiveConfig::default();
    let windows = setup.windows();
    let targets2 = targets.clone();
    let (w, c) = fd_worst(&setup, |g, bound| {
        let (anchors, positives) = setup.encode_batch(g, bound);
        let fwd = build_negative_sets(g, &anchors, &positives, &targets2, 0.3, false).unwrap();
        let bwd = build_negative_sets(g, &positives, &anchors, &targets2, 0.3, false).unwrap();
        let mut totals = Vec::new();
        for (i, window) in windows.iter().enumerate() {
            let scored = score_all(g, bound.item_embeddings, anchors[i]).unwrap();
            let label = build_soft_label(window, 0.3).unwrap();
            let rec = revised_cross_entropy(g, scored.log_probs, &label, 6).unwrap();
            let mut set_ab = *fwd.sets[i].as_ref().unwrap();
            set_ab.synthesized = Some(g.constant(frozen_fwd[i].clone()));
            let mut set_ba = *bwd.sets[i].as_ref().unwrap();
            set_ba.synthesized = Some(g.constant(frozen_bwd[i].clone()));
            let cl_ab = loss::upweighted_loss(g, anchors[i], positives[i], &set_ab, &cfg).unwrap();
            let cl_ba = loss::upweighted_loss(g, positives[i], anchors[i], &set_ba, &cfg).unwrap();
            totals.push(loss::total_loss(g, rec, cl_ab, cl_ba, cfg.alpha).unwrap());
        }
        let v = g.concat(&totals);
        g.mean(v)
    });
    worst = worst.max(w);
    cases += c;

    // stop-gradient zero-path: loss through SG only leaves negatives' grads at zero
    let mut g = Graph::new();
    let x = g.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let sg = g.stop_gradient(x);
    let l = g.sum(sg);
    g.backward(l).unwrap();
    let sg_leak: f64 = g.grad(x).data().iter().map(|v| v.abs()).sum();
    worst = worst.max(sg_leak);
    cases += 1;

    SuiteResult::new("gradient-checks", cases, worst, 1e-4)
}

fn metric_closed_forms() -> SuiteResult {
    let mut worst = 0.0_f64;
    let mut cases = 0;
    let mut s = Stream::new(0xfe0_006);

    // rank against a brute-force sort
    for _ in 0..100 {
        let n = 2 + s.below(49);
        let d = 1 + s.below(4);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| rand_vec(&mut s, d, 1.0)).collect();
        let h = rand_vec(&mut s, d, 1.0);
        let mut data = vec![0.0; d];
        for r in &rows {
            data.extend_from_slice(r);
        }
        let table = Tensor::matrix(n + 1, d, data);
        let target = ItemId(1 + s.below(n) as u32);
        let mut scored: Vec<(usize, f64)> = rows
            .iter()
            .enumerate()
            .map(|(i, r)| (i + 1, dot(r, &h)))
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        let expected = scored
            .iter()
            .position(|&(id, _)| id == target.0 as usize)
            .unwrap()
            + 1;
        let got = rank_target(&h, &table, target);
        worst = worst.max((got as f64 - expected as f64).abs());
        cases += 1;
    }

    // closed forms
    let (_, ndcg) = hr_ndcg(&[3], 10);
    worst = worst.max((ndcg - 0.5).abs());
    let (hr, ndcg) = hr_ndcg(&[1, 11], 10);
    worst = worst.max((hr - 0.5).abs()).max((ndcg - 0.5).abs());
    cases += 2;

    // ndcg <= hr over random multisets
    for _ in 0..1000 {
        let ranks: Vec<usize> = (0..1 + s.below(20)).map(|_| 1 + s.below(40)).collect();
        for k in [5, 10, 20] {
            let (hr, ndcg) = hr_ndcg(&ranks, k);
            worst = worst.max(ndcg - hr);
        }
        cases += 1;
    }

    // uniformity closed forms and brute-force parity
    let a = [1.0, 0.0];
    let b = [-1.0, 0.0];
    worst = worst.max((uniformity(&[&a, &a.clone()]).unwrap()).abs());
    worst = worst.max((uniformity(&[&a, &b]).unwrap() + 8.0).abs());
    cases += 2;
    let vectors: Vec<Vec<f64>> = (0..10).map(|_| rand_vec(&mut s, 64, 1.0)).collect();
    let refs: Vec<&[f64]> = vectors.iter().map(|v| v.as_slice()).collect();
    let got = uniformity(&refs).unwrap();
    let normed: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| {
            let n = l2_norm(v);
            v.iter().map(|x| x / n).collect()
        })
        .collect();
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..normed.len() {
        for j in i + 1..normed.len() {
            let d2: f64 = normed[i]
                .iter()
                .zip(&normed[j])
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            total += (-2.0 * d2).exp();
            count += 1;
        }
    }
    worst = worst.max((got - (total / count as f64).ln()).abs());
    cases += 1;

    SuiteResult::new("metric-closed-forms", cases, worst, 1e-12)
}

fn encoder_contracts() -> SuiteResult {
    let mut worst = 0.0_f64;
    let mut cases = 0;
    let params = EncoderParams::init(6, 8, 5, 0.2, 99);

    // determinism without dropout
    let h1 = encode_value(&params, &[ItemId(1), ItemId(2)]).unwrap();
    let h2 = encode_value(&params, &[ItemId(1), ItemId(2)]).unwrap();
    let diff: f64 = h1.iter().zip(&h2).map(|(a, b)| (a - b).abs()).sum();
    worst = worst.max(diff);
    cases += 1;

    // score_all against a hand softmax on N = 3
    let small = EncoderParams::init(3, 4, 3, 0.0, 5);
    let mut g = Graph::new();
    let bound = BoundEncoder::bind(&small, &mut g);
    let h = encode(&mut g, &small, &bound, &[ItemId(2)], false, 0).unwrap();
    let scored = score_all(&mut g, bound.item_embeddings, h).unwrap();
    let hv = g.value(h).data().to_vec();
    let raw: Vec<f64> = (1..=3)
        .map(|r| dot(small.item_embeddings.row(r), &hv))
        .collect();
    let mx = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raw.iter().map(|v| (v - mx).exp()).collect();
    let z: f64 = exps.iter().sum();
    for (got, want) in g.value(scored.probs).data().iter().zip(exps.iter().map(|e| e / z)) {
        worst = worst.max((got - want).abs());
        cases += 1;
    }

    // dual views separate under dropout
    let mut dropped = EncoderParams::init(6, 8, 5, 0.5, 13);
    dropped.dropout_rate = 0.5;
    let mut strictly = 0;
    for trial in 0..100 {
        let mut g = Graph::new();
        let bound = BoundEncoder::bind(&dropped, &mut g);
        let prefix = [ItemId(1 + (trial % 6) as u32), ItemId(1 + ((trial + 2) % 6) as u32)];
        let a = encode(&mut g, &dropped, &bound, &prefix, true, 500 + trial).unwrap();
        let b = encode(&mut g, &dropped, &bound, &prefix, true, 900 + trial).unwrap();
        let (av, bv) = (g.value(a).data(), g.value(b).data());
        if dot(av, bv) < l2_norm(av) * l2_norm(bv) - 1e-12 {
            strictly += 1;
        }
        cases += 1;
    }
    if strictly < 99 {
        worst = worst.max(1.0);
    }

    SuiteResult::new("encoder-contracts", cases, worst, 1e-12)
}

fn training_reduction() -> SuiteResult {
    // alpha = 0 with a one-item window must equal the one-hot CE baseline
    // bit for bit across the whole (short) trajectory
    let text = fenrec_core::synth::generate(20, 30, 3, 9).expect("synth");
    let (seqs, remap) = fenrec_core::data::parse_interactions(&text, 3).expect("parse");
    let split = fenrec_core::data::split_leave_one_out(&seqs, remap.catalog_size()).expect("split");
    let base = HyperParams {
        dim: 8,
        max_len: 10,
        batch_size: 32,
        max_epochs: 2,
        warmup_epochs: 1,
        patience: 0,
        ..HyperParams::default()
    };
    let a = fit(
        &split,
        &HyperParams {
            alpha: 0.0,
            future_items: 0,
            soft_labels_enabled: true,
            ..base.clone()
        },
        None,
    )
    .expect("fit");
    let b = fit(
        &split,
        &HyperParams {
            alpha: 0.0,
            future_items: 2,
            soft_labels_enabled: false,
            ..base
        },
        None,
    )
    .expect("fit");
    let mut worst = 0.0_f64;
    let mut cases = 0;
    for (x, y) in a.log.iter().zip(&b.log) {
        if x.mean_rec_loss.to_bits() != y.mean_rec_loss.to_bits() {
            worst = worst.max((x.mean_rec_loss - y.mean_rec_loss).abs().max(1.0));
        }
        cases += 1;
    }
    if a.best_params != b.best_params {
        worst = worst.max(1.0);
    }
    SuiteResult::new("training-reduction", cases, worst, 0.0)
}

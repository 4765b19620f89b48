//! Epoch orchestration: batch assembly, dual-view encoding, the combined
//! objective, Adam updates, the warm-up schedule for synthesized
//! negatives, validation-driven early stopping, and similarity-histogram
//! capture.
//!
//! All randomness is counter-derived from the master seed (see [`crate::rng`]),
//! so a `TrainState` plus the hyperparameters fully determines the rest of
//! a run; resuming from a serialized state replays the exact same batches,
//! masks, and updates.

use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{enumerate_subsequences, DatasetSplit, TrainingSample};
use crate::encoder::{self, BoundEncoder, EncoderParams};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::loss::{self, ContrastiveConfig};
use crate::metrics::{self, EvalTarget, SimilarityHistogram};
use crate::negatives::{build_negative_sets, dominance_violations};
use crate::optim::Adam;
use crate::rng::{self, Stream};
use crate::softlabel::build_soft_label;
use crate::tensor::dot;

#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    /// Soft-label smoothing factor.
    pub gamma: f64,
    /// Anchor proportion when mixing hard negatives.
    pub lambda: f64,
    /// Synthesized-negative weight in the contrastive denominator.
    pub mu: f64,
    /// Margin added to original-negative exponents when upweighting.
    pub margin: f64,
    pub tau1: f64,
    pub tau2: f64,
    /// Contrastive weight in the total objective.
    pub alpha: f64,
    /// Epochs with mu forced to zero before synthesized negatives join.
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub max_len: usize,
    pub dim: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub max_epochs: usize,
    /// Consecutive non-improving validations before stopping; 0 disables.
    pub patience: usize,
    pub seed: u64,
    /// Future items beyond the immediate next one in the label window.
    pub future_items: usize,
    pub soft_labels_enabled: bool,
    pub mixing_enabled: bool,
    pub upweighting_enabled: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            gamma: 0.3,
            lambda: 0.3,
            mu: 0.1,
            margin: 0.2,
            tau1: 1.0,
            tau2: 8.0,
            alpha: 0.1,
            warmup_epochs: 20,
            batch_size: 256,
            max_len: 50,
            dim: 64,
            dropout_rate: 0.2,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            max_epochs: 100,
            patience: 10,
            seed: 42,
            future_items: 2,
            soft_labels_enabled: true,
            mixing_enabled: true,
            upweighting_enabled: true,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let check = |cond: bool, name: &'static str, msg: &str| {
            if cond {
                Ok(())
            } else {
                Err(Error::Config {
                    name,
                    message: String::from(msg),
                })
            }
        };
        check(
            self.gamma > 0.0 && self.gamma <= 1.0,
            "gamma",
            "must be in (0, 1]",
        )?;
        check(
            self.lambda > 0.0 && self.lambda < 1.0,
            "lambda",
            "must be in (0, 1)",
        )?;
        check(self.mu >= 0.0, "mu", "must be >= 0")?;
        check(self.tau1 > 0.0, "tau1", "must be > 0")?;
        check(self.tau2 > 0.0, "tau2", "must be > 0")?;
        check(self.alpha >= 0.0, "alpha", "must be >= 0")?;
        check(self.batch_size >= 2, "batch_size", "must be >= 2")?;
        check(self.max_len >= 1, "max_len", "must be >= 1")?;
        check(self.dim >= 1, "dim", "must be >= 1")?;
        check(
            (0.0..1.0).contains(&self.dropout_rate),
            "dropout_rate",
            "must be in [0, 1)",
        )?;
        check(self.learning_rate > 0.0, "learning_rate", "must be > 0")?;
        check(self.max_epochs >= 1, "max_epochs", "must be >= 1")?;
        Ok(())
    }

    /// Contrastive configuration in effect at `epoch` (mu is zero during
    /// warm-up; upweighting stays active throughout).
    pub fn contrastive_config(&self, epoch: usize) -> ContrastiveConfig {
        ContrastiveConfig {
            tau1: self.tau1,
            tau2: self.tau2,
            mu: if epoch < self.warmup_epochs { 0.0 } else { self.mu },
            margin: self.margin,
            alpha: self.alpha,
            upweighting_enabled: self.upweighting_enabled,
            mixing_enabled: self.mixing_enabled,
        }
    }
}

/// All subsequence samples of a split, in user order (shuffled per epoch).
pub fn training_samples(split: &DatasetSplit, hp: &HyperParams) -> Vec<TrainingSample> {
    let mut samples = Vec::new();
    for user in &split.users {
        samples.extend(enumerate_subsequences(
            &user.train_portion,
            hp.max_len,
            hp.future_items,
        ));
    }
    samples
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    /// Mean recommendation loss per sample.
    pub mean_rec_loss: f64,
    /// Mean contrastive term per evaluated direction (unweighted by alpha).
    pub mean_cl_loss: f64,
    pub batches: usize,
    /// Batches where the contrastive term was skipped entirely.
    pub batches_skipped: usize,
    /// Anchors whose candidate pool emptied out (false-negative exclusion).
    pub anchors_skipped: usize,
    /// Synthesized negatives violating the dominance guarantee (must be 0).
    pub lemma_violations: usize,
    /// Antipodal mixtures that fell back to the original negative.
    pub mix_fallbacks: usize,
    pub mu_in_effect: f64,
    pub histogram: Option<SimilarityHistogram>,
    /// Filled by [`fit`] after the validation pass.
    pub valid_ndcg10: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    /// Number of completed epochs; also the index of the next one.
    pub epoch: usize,
    pub params: EncoderParams,
    pub optimizer: Adam,
    pub best_valid_ndcg: Option<f64>,
    pub best_params: Option<EncoderParams>,
    pub epochs_since_improvement: usize,
}

impl TrainState {
    pub fn new(catalog_size: usize, hp: &HyperParams) -> Self {
        TrainState {
            epoch: 0,
            params: EncoderParams::init(
                catalog_size,
                hp.dim,
                hp.max_len,
                hp.dropout_rate,
                hp.seed,
            ),
            optimizer: Adam::new(
                hp.learning_rate,
                hp.adam_beta1,
                hp.adam_beta2,
                hp.adam_epsilon,
            ),
            best_valid_ndcg: None,
            best_params: None,
            epochs_since_improvement: 0,
        }
    }
}

/// Train one epoch: shuffle samples, process batches, update parameters.
pub fn run_epoch(
    state: &mut TrainState,
    samples: &[TrainingSample],
    hp: &HyperParams,
) -> Result<EpochSummary> {
    hp.validate()?;
    let epoch = state.epoch;
    let cfg = hp.contrastive_config(epoch);
    let synthesize = cfg.mixing_enabled && cfg.mu > 0.0;

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut shuffle_stream = Stream::new(rng::derive_seed(
        hp.seed,
        &[rng::stream::SHUFFLE, epoch as u64],
    ));
    shuffle_stream.shuffle(&mut order);

    let mut batches: Vec<&[usize]> = order.chunks(hp.batch_size).collect();
    if let Some(last) = batches.last() {
        if last.len() < 2 {
            batches.pop();
        }
    }
    let n_batches = batches.len();

    // one logged batch per epoch feeds the similarity histogram
    let mut histogram_stream = Stream::new(rng::derive_seed(
        hp.seed,
        &[rng::stream::HISTOGRAM_ANCHOR, epoch as u64],
    ));
    let logged_batch = if n_batches > 0 {
        histogram_stream.below(n_batches)
    } else {
        0
    };

    let mut summary = EpochSummary {
        epoch,
        mean_rec_loss: 0.0,
        mean_cl_loss: 0.0,
        batches: n_batches,
        batches_skipped: 0,
        anchors_skipped: 0,
        lemma_violations: 0,
        mix_fallbacks: 0,
        mu_in_effect: cfg.mu,
        histogram: None,
        valid_ndcg10: None,
    };
    let mut sample_count = 0usize;
    let mut rec_sum = 0.0;
    let mut cl_sum = 0.0;
    let mut cl_terms = 0usize;

    for (batch_idx, batch) in batches.iter().enumerate() {
        let b = batch.len();
        let mut g = Graph::new();
        let bound = BoundEncoder::bind(&state.params, &mut g);
        let needs_cl = hp.alpha > 0.0 && b >= 2;

        let mut rec_nodes = Vec::with_capacity(b);
        let mut anchor_nodes = Vec::with_capacity(b);
        let mut positive_nodes = Vec::with_capacity(b);
        let mut targets = Vec::with_capacity(b);
        for (slot, &sample_idx) in batch.iter().enumerate() {
            let sample = &samples[sample_idx];
            let seed_a = rng::derive_seed(
                hp.seed,
                &[
                    rng::stream::DROPOUT,
                    epoch as u64,
                    batch_idx as u64,
                    slot as u64,
                    0,
                ],
            );
            let h = encoder::encode(&mut g, &state.params, &bound, &sample.prefix, true, seed_a)?;
            anchor_nodes.push(h);
            if needs_cl {
                let seed_b = rng::derive_seed(
                    hp.seed,
                    &[
                        rng::stream::DROPOUT,
                        epoch as u64,
                        batch_idx as u64,
                        slot as u64,
                        1,
                    ],
                );
                let h_pos =
                    encoder::encode(&mut g, &state.params, &bound, &sample.prefix, true, seed_b)?;
                positive_nodes.push(h_pos);
            }
            let scored = encoder::score_all(&mut g, bound.item_embeddings, h)?;
            let label = if hp.soft_labels_enabled {
                build_soft_label(&sample.future_window, hp.gamma)?
            } else {
                build_soft_label(&sample.future_window[..1], hp.gamma)?
            };
            let rec = crate::softlabel::revised_cross_entropy(
                &mut g,
                scored.log_probs,
                &label,
                state.params.n_items,
            )?;
            rec_nodes.push(rec);
            targets.push(sample.target());
        }

        let rec_vec = g.concat(&rec_nodes);
        let mean_rec = g.mean(rec_vec);

        let mut cl_nodes = Vec::new();
        if needs_cl {
            let forward = build_negative_sets(
                &mut g,
                &anchor_nodes,
                &positive_nodes,
                &targets,
                hp.lambda,
                synthesize,
            )?;
            let backward_dir = build_negative_sets(
                &mut g,
                &positive_nodes,
                &anchor_nodes,
                &targets,
                hp.lambda,
                synthesize,
            )?;
            summary.anchors_skipped += forward.skipped_anchors;
            summary.mix_fallbacks += forward.fallbacks + backward_dir.fallbacks;
            for i in 0..b {
                let (Some(set_ab), Some(set_ba)) = (&forward.sets[i], &backward_dir.sets[i])
                else {
                    continue;
                };
                let cl_ab =
                    loss::upweighted_loss(&mut g, anchor_nodes[i], positive_nodes[i], set_ab, &cfg)?;
                let cl_ba =
                    loss::upweighted_loss(&mut g, positive_nodes[i], anchor_nodes[i], set_ba, &cfg)?;
                cl_nodes.push(cl_ab);
                cl_nodes.push(cl_ba);
                if synthesize {
                    summary.lemma_violations += dominance_violations(&g, set_ab, anchor_nodes[i]);
                    summary.lemma_violations +=
                        dominance_violations(&g, set_ba, positive_nodes[i]);
                }
            }
            if cl_nodes.is_empty() {
                summary.batches_skipped += 1;
            }
            if batch_idx == logged_batch && synthesize {
                summary.histogram =
                    capture_histogram(&g, &forward, &anchor_nodes, epoch, &mut histogram_stream);
            }
        }

        let total = if cl_nodes.is_empty() {
            mean_rec
        } else {
            let cl_vec = g.concat(&cl_nodes);
            let cl_total = g.sum(cl_vec);
            let cl_weighted = g.scale(cl_total, hp.alpha / b as f64);
            g.add(mean_rec, cl_weighted)?
        };

        let total_value = g.value(total).item();
        let rec_value = g.value(mean_rec).item();
        if !total_value.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: batch_idx,
                detail: alloc::format!(
                    "total={total_value}, rec={rec_value}, batch_samples={:?}",
                    batch
                        .iter()
                        .map(|&i| (samples[i].prefix_len, samples[i].target().0))
                        .collect::<Vec<_>>()
                ),
            });
        }

        g.backward(total)?;
        let grads: Vec<crate::Tensor> = bound.ids().iter().map(|&id| g.grad(id)).collect();
        let mut tensors = state.params.tensors_mut();
        state.optimizer.step(&mut tensors, &grads);

        rec_sum += rec_value * b as f64;
        sample_count += b;
        for &node in &cl_nodes {
            cl_sum += g.value(node).item();
        }
        cl_terms += cl_nodes.len();
    }

    if sample_count > 0 {
        summary.mean_rec_loss = rec_sum / sample_count as f64;
    }
    if cl_terms > 0 {
        summary.mean_cl_loss = cl_sum / cl_terms as f64;
    }
    state.epoch += 1;
    Ok(summary)
}

fn capture_histogram(
    g: &Graph,
    batch: &crate::negatives::BatchNegatives,
    anchors: &[NodeId],
    epoch: usize,
    stream: &mut Stream,
) -> Option<SimilarityHistogram> {
    let b = anchors.len();
    let start = stream.below(b);
    for off in 0..b {
        let i = (start + off) % b;
        let Some(set) = &batch.sets[i] else { continue };
        let Some(synth) = set.synthesized else { continue };
        let anchor = g.value(anchors[i]).data();
        let orig = g.value(set.originals);
        let syn = g.value(synth);
        let orig_sims: Vec<f64> = (0..orig.rows()).map(|r| dot(orig.row(r), anchor)).collect();
        let syn_sims: Vec<f64> = (0..syn.rows()).map(|r| dot(syn.row(r), anchor)).collect();
        return Some(metrics::similarity_histogram(epoch, &orig_sims, &syn_sims));
    }
    None
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Parameters at the best validation NDCG@10 (final ones if validation
    /// never improved).
    pub best_params: EncoderParams,
    pub best_valid_ndcg: f64,
    pub log: Vec<EpochSummary>,
    pub stopped_early: bool,
}

/// Full training run with per-epoch validation and early stopping.
pub fn fit(
    split: &DatasetSplit,
    hp: &HyperParams,
    mut observer: Option<&mut dyn FnMut(&EpochSummary)>,
) -> Result<FitOutcome> {
    hp.validate()?;
    let samples = training_samples(split, hp);
    if samples.is_empty() {
        return Err(Error::Config {
            name: "dataset",
            message: String::from("no training subsequences (all train portions shorter than 2)"),
        });
    }
    let mut state = TrainState::new(split.catalog_size, hp);
    let mut log = Vec::new();
    let mut stopped_early = false;
    while state.epoch < hp.max_epochs {
        let mut summary = run_epoch(&mut state, &samples, hp)?;
        let ranks = metrics::rank_all(&state.params, split, EvalTarget::Validation)?;
        let (_, ndcg10) = metrics::hr_ndcg(&ranks, 10);
        summary.valid_ndcg10 = Some(ndcg10);
        let improved = state.best_valid_ndcg.map_or(true, |best| ndcg10 > best);
        if improved {
            state.best_valid_ndcg = Some(ndcg10);
            state.best_params = Some(state.params.clone());
            state.epochs_since_improvement = 0;
        } else {
            state.epochs_since_improvement += 1;
        }
        if let Some(obs) = observer.as_deref_mut() {
            obs(&summary);
        }
        log.push(summary);
        if hp.patience > 0 && state.epochs_since_improvement >= hp.patience {
            stopped_early = true;
            break;
        }
    }
    Ok(FitOutcome {
        best_params: state
            .best_params
            .clone()
            .unwrap_or_else(|| state.params.clone()),
        best_valid_ndcg: state.best_valid_ndcg.unwrap_or(0.0),
        log,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split_leave_one_out, InteractionSequence, ItemId};
    use alloc::format;
    use alloc::vec;

    fn tiny_split(n_users: usize, n_items: u32, len: usize) -> DatasetSplit {
        // user u interacts with item (u mod n_items) repeatedly
        let seqs: Vec<InteractionSequence> = (0..n_users)
            .map(|u| InteractionSequence {
                user_id: format!("u{u}"),
                items: vec![ItemId(1 + (u as u32 % n_items)); len],
            })
            .collect();
        split_leave_one_out(&seqs, n_items as usize).unwrap()
    }

    fn small_hp() -> HyperParams {
        HyperParams {
            dim: 8,
            max_len: 6,
            batch_size: 16,
            max_epochs: 3,
            patience: 0,
            warmup_epochs: 1,
            ..HyperParams::default()
        }
    }

    #[test]
    fn warmup_schedule_controls_mu() {
        let hp = small_hp();
        assert_eq!(hp.contrastive_config(0).mu, 0.0);
        assert_eq!(hp.contrastive_config(hp.warmup_epochs).mu, hp.mu);
    }

    #[test]
    fn epoch_summaries_are_deterministic() {
        let split = tiny_split(8, 3, 6);
        let hp = small_hp();
        let samples = training_samples(&split, &hp);
        let mut s1 = TrainState::new(split.catalog_size, &hp);
        let mut s2 = TrainState::new(split.catalog_size, &hp);
        for _ in 0..2 {
            let a = run_epoch(&mut s1, &samples, &hp).unwrap();
            let b = run_epoch(&mut s2, &samples, &hp).unwrap();
            assert_eq!(a, b);
        }
        assert_eq!(s1.params, s2.params);
    }

    #[test]
    fn repeated_item_dataset_reaches_tiny_rec_loss() {
        let split = tiny_split(12, 3, 8);
        let hp = HyperParams {
            max_epochs: 30,
            patience: 0,
            learning_rate: 2e-2,
            batch_size: 8,
            dropout_rate: 0.0,
            ..small_hp()
        };
        let outcome = fit(&split, &hp, None).unwrap();
        let last = outcome.log.last().unwrap();
        assert!(
            last.mean_rec_loss < 0.01,
            "rec loss {} after {} epochs",
            last.mean_rec_loss,
            outcome.log.len()
        );
    }

    #[test]
    fn early_stopping_counts_consecutive_failures() {
        // patience 1 stops after the second evaluation when the metric
        // never improves past the first
        let split = tiny_split(6, 2, 5);
        let hp = HyperParams {
            patience: 1,
            max_epochs: 50,
            ..small_hp()
        };
        let outcome = fit(&split, &hp, None).unwrap();
        if outcome.stopped_early {
            // stopping takes at least two evaluations
            assert!(outcome.log.len() >= 2);
            let n = outcome.log.len();
            let last = outcome.log[n - 1].valid_ndcg10.unwrap();
            let best = outcome.best_valid_ndcg;
            assert!(last <= best);
        }
    }

    #[test]
    fn max_epochs_caps_the_run() {
        let split = tiny_split(6, 2, 5);
        let hp = HyperParams {
            max_epochs: 1,
            patience: 0,
            ..small_hp()
        };
        let outcome = fit(&split, &hp, None).unwrap();
        assert_eq!(outcome.log.len(), 1);
    }

    #[test]
    fn non_finite_parameters_abort_with_diagnostics() {
        let split = tiny_split(6, 2, 5);
        let hp = small_hp();
        let samples = training_samples(&split, &hp);
        let mut state = TrainState::new(split.catalog_size, &hp);
        // poison one embedding entry; the NaN must surface as a loss error,
        // not a panic
        state.params.item_embeddings.data_mut()[hp.dim + 1] = f64::NAN;
        let err = run_epoch(&mut state, &samples, &hp);
        assert!(matches!(err, Err(Error::NonFiniteLoss { .. })), "{err:?}");
    }

    #[test]
    fn histogram_appears_only_after_warmup() {
        let split = tiny_split(10, 5, 7);
        let hp = HyperParams {
            warmup_epochs: 2,
            max_epochs: 4,
            patience: 0,
            ..small_hp()
        };
        let outcome = fit(&split, &hp, None).unwrap();
        for summary in &outcome.log {
            if summary.epoch < hp.warmup_epochs {
                assert!(summary.histogram.is_none(), "epoch {}", summary.epoch);
                assert_eq!(summary.mu_in_effect, 0.0);
            } else {
                assert_eq!(summary.mu_in_effect, hp.mu);
            }
        }
        assert!(outcome
            .log
            .iter()
            .any(|s| s.epoch >= hp.warmup_epochs && s.histogram.is_some()));
        // lemma counter stays clean over the whole run
        assert!(outcome.log.iter().all(|s| s.lemma_violations == 0));
    }
}

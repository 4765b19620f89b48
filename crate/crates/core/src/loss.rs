//! Contrastive objectives over per-anchor negative sets.
//!
//! One builder realizes the whole family: the baseline in-batch InfoNCE,
//! the mixed-negative variant (synthesized negatives weighted by mu inside
//! the denominator), and the hard-negative-upweighted form where every
//! inner product is multiplied by a tanh-squashed similarity weight and
//! original negatives receive a margin offset. The margin applies only to
//! original negatives, never to the mu-term. All variants share one
//! stabilization path: a single log-sum-exp over every denominator
//! exponent, so the mu = 0 case is bit-identical to plain InfoNCE.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::math;
use crate::negatives::NegativeSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveConfig {
    /// Softmax temperature.
    pub tau1: f64,
    /// Scale inside the tanh similarity weight.
    pub tau2: f64,
    /// Weight of synthesized negatives in the denominator.
    pub mu: f64,
    /// Margin added to original-negative exponents when upweighting.
    pub margin: f64,
    /// Weight of the contrastive term in the total objective.
    pub alpha: f64,
    pub upweighting_enabled: bool,
    pub mixing_enabled: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            tau1: 1.0,
            tau2: 8.0,
            mu: 0.1,
            margin: 0.2,
            alpha: 0.1,
            upweighting_enabled: true,
            mixing_enabled: true,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau1 <= 0.0 {
            return Err(Error::Config {
                name: "tau1",
                message: alloc::format!("must be > 0, got {}", self.tau1),
            });
        }
        if self.tau2 <= 0.0 {
            return Err(Error::Config {
                name: "tau2",
                message: alloc::format!("must be > 0, got {}", self.tau2),
            });
        }
        if self.mu < 0.0 {
            return Err(Error::Config {
                name: "mu",
                message: alloc::format!("must be >= 0, got {}", self.mu),
            });
        }
        if self.alpha < 0.0 {
            return Err(Error::Config {
                name: "alpha",
                message: alloc::format!("must be >= 0, got {}", self.alpha),
            });
        }
        Ok(())
    }

    fn with_upweighting(mut self, on: bool) -> Self {
        self.upweighting_enabled = on;
        self
    }

    fn with_mixing(mut self, on: bool) -> Self {
        self.mixing_enabled = on;
        self
    }
}

/// Exponent of one similarity vector (or scalar): `sim * s(sim) / tau1`
/// when upweighting, else `sim / tau1`; `extra` is a constant shift such
/// as the margin or ln(mu), already divided by tau1 where applicable.
fn exponent(
    g: &mut Graph,
    sims: NodeId,
    cfg: &ContrastiveConfig,
    upweight: bool,
    extra: f64,
) -> Result<NodeId> {
    let base = if upweight {
        let squashed = g.scale(sims, 1.0 / cfg.tau2);
        let weight = g.tanh(squashed);
        let weighted = g.mul(sims, weight)?;
        g.scale(weighted, 1.0 / cfg.tau1)
    } else {
        g.scale(sims, 1.0 / cfg.tau1)
    };
    Ok(if extra != 0.0 {
        g.add_const(base, extra)
    } else {
        base
    })
}

fn contrastive_core(
    g: &mut Graph,
    anchor: NodeId,
    positive: NodeId,
    set: &NegativeSet,
    cfg: &ContrastiveConfig,
) -> Result<NodeId> {
    cfg.validate()?;
    assert!(set.count > 0, "contrastive term needs a non-empty negative set");
    let upweight = cfg.upweighting_enabled;

    let pos_sim = g.inner(anchor, positive)?;
    let pos_exponent = exponent(g, pos_sim, cfg, upweight, 0.0)?;

    let margin = if upweight { cfg.margin / cfg.tau1 } else { 0.0 };
    let original_sims = g.matvec(set.originals, anchor)?;
    let original_exponents = exponent(g, original_sims, cfg, upweight, margin)?;

    let mut denominator_parts = alloc::vec![pos_exponent, original_exponents];
    if cfg.mixing_enabled && cfg.mu > 0.0 {
        let synth = set.synthesized.expect("mixing enabled but no synthesized negatives");
        let synth_sims = g.matvec(synth, anchor)?;
        // mu scales the summed terms: fold ln(mu) into each exponent
        let synth_exponents = exponent(g, synth_sims, cfg, upweight, math::ln(cfg.mu))?;
        denominator_parts.push(synth_exponents);
    }
    let all = g.concat(&denominator_parts);
    let lse = g.logsumexp(all);
    let neg_pos = g.scale(pos_exponent, -1.0);
    g.add(neg_pos, lse)
}

/// Baseline in-batch InfoNCE over the original negatives only.
pub fn info_nce(
    g: &mut Graph,
    anchor: NodeId,
    positive: NodeId,
    set: &NegativeSet,
    cfg: &ContrastiveConfig,
) -> Result<NodeId> {
    let cfg = cfg.with_upweighting(false).with_mixing(false);
    contrastive_core(g, anchor, positive, set, &cfg)
}

/// InfoNCE with synthesized negatives in the denominator (no upweighting).
/// With mu = 0 this is bit-identical to [`info_nce`].
pub fn mixed_negative_loss(
    g: &mut Graph,
    anchor: NodeId,
    positive: NodeId,
    set: &NegativeSet,
    cfg: &ContrastiveConfig,
) -> Result<NodeId> {
    let cfg = cfg.with_upweighting(false).with_mixing(true);
    contrastive_core(g, anchor, positive, set, &cfg)
}

/// The full contrastive objective; honors both mode flags, so it also
/// serves every ablation arm.
pub fn upweighted_loss(
    g: &mut Graph,
    anchor: NodeId,
    positive: NodeId,
    set: &NegativeSet,
    cfg: &ContrastiveConfig,
) -> Result<NodeId> {
    contrastive_core(g, anchor, positive, set, cfg)
}

/// Total objective: recommendation loss plus the symmetric contrastive
/// pair, weighted by alpha. With alpha = 0 the recommendation loss node is
/// returned unchanged.
pub fn total_loss(
    g: &mut Graph,
    rec_loss: NodeId,
    cl_anchor_to_pos: NodeId,
    cl_pos_to_anchor: NodeId,
    alpha: f64,
) -> Result<NodeId> {
    if alpha == 0.0 {
        return Ok(rec_loss);
    }
    let both = g.add(cl_anchor_to_pos, cl_pos_to_anchor)?;
    let weighted = g.scale(both, alpha);
    g.add(rec_loss, weighted)
}

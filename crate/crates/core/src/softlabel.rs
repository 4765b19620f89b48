//! Time-dependent soft labels and the revised cross-entropy.
//!
//! The item at window offset k receives weight gamma^k; weights are
//! normalized over the offsets actually present (the window truncates at
//! the end of the training portion) and duplicate items merge by summing,
//! which keeps the distribution on the simplex.

use alloc::vec::Vec;

use crate::data::ItemId;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::math;

/// Sparse target distribution over at most `window` distinct items.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabel {
    entries: Vec<(ItemId, f64)>,
    gamma: f64,
}

impl SoftLabel {
    pub fn entries(&self) -> &[(ItemId, f64)] {
        &self.entries
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Probability mass on `item` (zero if absent).
    pub fn probability(&self, item: ItemId) -> f64 {
        self.entries
            .iter()
            .find(|(i, _)| *i == item)
            .map(|(_, p)| *p)
            .unwrap_or(0.0)
    }
}

/// Geometric weights gamma^offset, normalized, duplicates merged.
pub fn build_soft_label(window: &[(ItemId, u8)], gamma: f64) -> Result<SoftLabel> {
    if window.is_empty() {
        return Err(Error::EmptyWindow);
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Config {
            name: "gamma",
            message: alloc::format!("must be in (0, 1], got {gamma}"),
        });
    }
    let mut total = 0.0;
    let mut merged: Vec<(ItemId, f64)> = Vec::with_capacity(window.len());
    for &(item, offset) in window {
        let w = math::powf(gamma, offset as f64);
        total += w;
        match merged.iter_mut().find(|(i, _)| *i == item) {
            Some((_, acc)) => *acc += w,
            None => merged.push((item, w)),
        }
    }
    for (_, w) in merged.iter_mut() {
        *w /= total;
    }
    Ok(SoftLabel {
        entries: merged,
        gamma,
    })
}

/// Revised cross-entropy: -sum over label entries of p * log(y_hat). Built
/// from the stabilized log-probabilities so large score gaps cannot
/// produce log(0).
pub fn revised_cross_entropy(
    g: &mut Graph,
    log_probs: NodeId,
    label: &SoftLabel,
    catalog_size: usize,
) -> Result<NodeId> {
    let mut idxs = Vec::with_capacity(label.entries.len());
    let mut weights = Vec::with_capacity(label.entries.len());
    for &(item, p) in &label.entries {
        if item.is_padding() || item.0 as usize > catalog_size {
            return Err(Error::ItemOutOfCatalog {
                item: item.0,
                catalog: catalog_size,
            });
        }
        idxs.push(item.catalog_index());
        weights.push(p);
    }
    let picked = g.gather_elems(log_probs, &idxs);
    let w = g.constant(crate::Tensor::vector(weights));
    let weighted = g.mul(picked, w)?;
    let total = g.sum(weighted);
    Ok(g.scale(total, -1.0))
}

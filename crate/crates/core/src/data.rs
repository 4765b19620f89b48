//! Interaction ingestion, leave-one-out splits, and subsequence
//! enumeration with future-item windows.
//!
//! Input format: one user per line, whitespace-separated integer tokens,
//! first token the user id. Item ids are remapped densely to `1..=N` in
//! first-appearance order; 0 is reserved for padding everywhere.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense item index in `1..=N`; 0 is the padding sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ItemId(pub u32);

impl ItemId {
    pub const PADDING: ItemId = ItemId(0);

    pub fn is_padding(self) -> bool {
        self.0 == 0
    }

    /// Zero-based position of this item in a `1..=N` catalog.
    pub fn catalog_index(self) -> usize {
        debug_assert!(self.0 > 0, "padding has no catalog index");
        (self.0 - 1) as usize
    }
}

/// One user's chronologically ordered interactions (order preserved
/// exactly as read; duplicates kept).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionSequence {
    pub user_id: String,
    pub items: Vec<ItemId>,
}

/// Original-to-dense id mapping, in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RemapTable {
    pub pairs: Vec<(u64, u32)>,
}

impl RemapTable {
    pub fn catalog_size(&self) -> usize {
        self.pairs.len()
    }
}

/// Parse an interaction file body. Sequences shorter than `min_len`
/// (after the user-id token) are dropped; remaining item ids are densely
/// remapped in first-appearance order across the whole file.
pub fn parse_interactions(
    text: &str,
    min_len: usize,
) -> Result<(Vec<InteractionSequence>, RemapTable)> {
    let mut remap = RemapTable::default();
    let mut dense_of: alloc::collections::BTreeMap<u64, u32> = alloc::collections::BTreeMap::new();
    let mut raw: Vec<(String, Vec<u64>)> = Vec::new();

    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let user = tokens.next().expect("non-empty line has a token").to_string();
        let mut items = Vec::new();
        for tok in tokens {
            let id: u64 = tok.parse().map_err(|_| Error::Parse {
                line: lineno + 1,
                message: alloc::format!("non-integer item token `{tok}`"),
            })?;
            items.push(id);
        }
        if items.len() < min_len {
            continue;
        }
        raw.push((user, items));
    }
    if raw.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut sequences = Vec::with_capacity(raw.len());
    for (user_id, items) in raw {
        let mapped = items
            .into_iter()
            .map(|orig| {
                let next = remap.pairs.len() as u32 + 1;
                let dense = *dense_of.entry(orig).or_insert_with(|| {
                    remap.pairs.push((orig, next));
                    next
                });
                ItemId(dense)
            })
            .collect();
        sequences.push(InteractionSequence {
            user_id,
            items: mapped,
        });
    }
    Ok((sequences, remap))
}

/// Per-user leave-one-out split: test target is the last item, validation
/// target the second-to-last, and the training portion everything before.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSplit {
    pub user_id: String,
    pub train_portion: Vec<ItemId>,
    pub valid_target: ItemId,
    pub test_target: ItemId,
    /// Length of the original (filtered) sequence; drives cohort buckets.
    pub full_len: usize,
}

impl UserSplit {
    /// Context for scoring the validation target.
    pub fn valid_context(&self) -> &[ItemId] {
        &self.train_portion
    }

    /// Context for scoring the test target (training portion plus the
    /// validation item).
    pub fn test_context(&self) -> Vec<ItemId> {
        let mut ctx = self.train_portion.clone();
        ctx.push(self.valid_target);
        ctx
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub users: Vec<UserSplit>,
    pub catalog_size: usize,
}

pub fn split_leave_one_out(
    sequences: &[InteractionSequence],
    catalog_size: usize,
) -> Result<DatasetSplit> {
    let mut users = Vec::with_capacity(sequences.len());
    for seq in sequences {
        let n = seq.items.len();
        if n < 3 {
            return Err(Error::SequenceTooShort {
                user: seq.user_id.clone(),
                len: n,
            });
        }
        users.push(UserSplit {
            user_id: seq.user_id.clone(),
            train_portion: seq.items[..n - 2].to_vec(),
            valid_target: seq.items[n - 2],
            test_target: seq.items[n - 1],
            full_len: n,
        });
    }
    Ok(DatasetSplit {
        users,
        catalog_size,
    })
}

/// A prefix of a training portion plus the future items it should predict.
/// `prefix` is left-padded with [`ItemId::PADDING`] to `max_len`; offsets in
/// `future_window` count positions past the prefix (0 = the immediate next
/// item).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingSample {
    pub prefix: Vec<ItemId>,
    pub prefix_len: usize,
    pub future_window: Vec<(ItemId, u8)>,
}

impl TrainingSample {
    /// The target item driving false-negative exclusion: the immediate
    /// next item.
    pub fn target(&self) -> ItemId {
        self.future_window[0].0
    }

    /// Non-padding tail of the prefix.
    pub fn unpadded(&self) -> &[ItemId] {
        let start = self.prefix.len() - self.prefix_len.min(self.prefix.len());
        &self.prefix[start..]
    }
}

/// Emit one sample per prefix length `t` in `1..=len-1`. The window holds
/// the next item plus up to `future_items` further items, truncated at the
/// end of the training portion so targets never leak across the split.
pub fn enumerate_subsequences(
    train_portion: &[ItemId],
    max_len: usize,
    future_items: usize,
) -> Vec<TrainingSample> {
    let len = train_portion.len();
    let mut samples = Vec::new();
    if len < 2 {
        return samples;
    }
    for t in 1..len {
        let kept = t.min(max_len);
        let visible = &train_portion[t - kept..t];
        let mut prefix = alloc::vec![ItemId::PADDING; max_len - kept];
        prefix.extend_from_slice(visible);
        let window_end = (t + 1 + future_items).min(len);
        let future_window = (t..window_end)
            .map(|p| (train_portion[p], (p - t) as u8))
            .collect();
        samples.push(TrainingSample {
            prefix,
            prefix_len: kept,
            future_window,
        });
    }
    samples
}

/// Left-pad an arbitrary context (evaluation helper mirroring the training
/// layout; keeps the most recent `max_len` items).
pub fn pad_context(context: &[ItemId], max_len: usize) -> TrainingSample {
    let kept = context.len().min(max_len);
    let visible = &context[context.len() - kept..];
    let mut prefix = alloc::vec![ItemId::PADDING; max_len - kept];
    prefix.extend_from_slice(visible);
    TrainingSample {
        prefix,
        prefix_len: kept,
        future_window: Vec::new(),
    }
}

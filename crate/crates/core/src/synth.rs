//! Seeded synthetic interaction data with planted cluster structure.
//!
//! Items are partitioned into clusters. Each user has a home cluster and
//! walks a Markov next-item kernel: mostly stay in the current item's
//! cluster, sometimes return home, occasionally jump anywhere. Within a
//! cluster, item popularity follows a mild power law. Sequence lengths are
//! drawn in [5, 50] with a short-skewed geometric profile, matching how
//! real interaction data is dominated by short histories.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

pub const MIN_LEN: usize = 5;
pub const MAX_LEN: usize = 50;

/// Generate the text body of an interaction file (one `u<idx> item...`
/// line per user). Byte-identical for identical arguments.
pub fn generate(n_users: usize, n_items: usize, n_clusters: usize, seed: u64) -> Result<String> {
    if n_users == 0 || n_items == 0 || n_clusters == 0 {
        return Err(Error::Config {
            name: "gen-synthetic",
            message: alloc::format!(
                "users, items, clusters must all be >= 1, got {n_users}/{n_items}/{n_clusters}"
            ),
        });
    }
    if n_clusters > n_items {
        return Err(Error::Config {
            name: "gen-synthetic",
            message: alloc::format!("{n_clusters} clusters but only {n_items} items"),
        });
    }
    let mut stream = Stream::new(rng::derive_seed(seed, &[rng::stream::SYNTH]));

    // contiguous item ranges per cluster; popularity ~ 1/(1 + rank/4)
    let cluster_of = |item: usize| item * n_clusters / n_items;
    let mut cluster_items: Vec<Vec<usize>> = alloc::vec![Vec::new(); n_clusters];
    for item in 0..n_items {
        cluster_items[cluster_of(item)].push(item);
    }
    let cumulative: Vec<Vec<f64>> = cluster_items
        .iter()
        .map(|items| {
            let mut acc = 0.0;
            items
                .iter()
                .enumerate()
                .map(|(rank, _)| {
                    acc += 1.0 / (1.0 + rank as f64 / 4.0);
                    acc
                })
                .collect()
        })
        .collect();

    let mut out = String::new();
    for user in 0..n_users {
        let home = stream.below(n_clusters);
        let len = draw_length(&mut stream);
        let mut current_cluster = home;
        out.push_str(&alloc::format!("u{user}"));
        for _ in 0..len {
            let roll = stream.unit_f64();
            let cluster = if roll < 0.70 {
                current_cluster
            } else if roll < 0.92 {
                home
            } else {
                stream.below(n_clusters)
            };
            let pick = stream.weighted_index(&cumulative[cluster]);
            let item = cluster_items[cluster][pick];
            current_cluster = cluster_of(item);
            // 1-based ids in the file; the loader remaps anyway
            out.push_str(&alloc::format!(" {}", item + 1));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Length in [MIN_LEN, MAX_LEN], geometric with mean about 11.
fn draw_length(stream: &mut Stream) -> usize {
    let mut len = MIN_LEN;
    while len < MAX_LEN && stream.unit_f64() < 0.85 {
        len += 1;
    }
    len
}

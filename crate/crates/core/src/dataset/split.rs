use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DatasetError;

pub const SPLIT_TARGETS: [f64; 3] = [0.70, 0.15, 0.15];
pub const SPLIT_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train = 0,
    Val = 1,
    Test = 2,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn from_u8(v: u8) -> Option<Split> {
        match v {
            0 => Some(Split::Train),
            1 => Some(Split::Val),
            2 => Some(Split::Test),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Group of every TX region and RX block. A link belongs to split `g` only
/// when both of its endpoint regions are in group `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub tx_groups: Vec<Split>,
    pub rx_groups: Vec<Split>,
    /// Fraction of kept links per split.
    pub fractions: [f64; 3],
    pub kept_links: usize,
}

impl SplitPlan {
    /// Split of a link, or `None` for off-diagonal pairs.
    pub fn split_of(&self, tx_region: usize, rx_region: usize) -> Option<Split> {
        let (a, b) = (self.tx_groups[tx_region], self.rx_groups[rx_region]);
        (a == b).then_some(a)
    }

    pub fn max_deviation(&self) -> f64 {
        deviation(&self.fractions)
    }
}

fn deviation(f: &[f64; 3]) -> f64 {
    (0..3).map(|g| (f[g] - SPLIT_TARGETS[g]).abs()).fold(0.0, f64::max)
}

fn fractions(counts: &[usize; 3]) -> [f64; 3] {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return [0.0; 3];
    }
    counts.map(|c| c as f64 / total as f64)
}

/// Assigns the given RX blocks to groups for a fixed TX grouping.
///
/// `weights[r][g]` is how many links block `r` keeps if placed in group `g`.
fn assign_rx(weights: &[[usize; 3]], order: &[usize]) -> (Vec<usize>, [usize; 3]) {
    let mut groups = vec![0usize; weights.len()];
    let mut counts = [0usize; 3];
    let mut used = [0usize; 3];
    // Seed each group with one block so none is empty, then fill the largest deficit.
    for (k, &r) in order.iter().enumerate() {
        let g = if k < 3 {
            k
        } else {
            let total: usize = counts.iter().sum::<usize>().max(1);
            (0..3)
                .max_by(|&a, &b| {
                    let da = SPLIT_TARGETS[a] - counts[a] as f64 / total as f64;
                    let db = SPLIT_TARGETS[b] - counts[b] as f64 / total as f64;
                    da.total_cmp(&db).then(b.cmp(&a))
                })
                .unwrap()
        };
        groups[r] = g;
        counts[g] += weights[r][g];
        used[g] += 1;
    }
    // Local search: move single blocks while the worst deviation improves.
    for _ in 0..8 {
        let mut improved = false;
        for &r in order {
            let from = groups[r];
            if used[from] == 1 {
                continue;
            }
            let mut best = (deviation(&fractions(&counts)), from);
            for to in 0..3 {
                if to == from {
                    continue;
                }
                let mut c = counts;
                c[from] -= weights[r][from];
                c[to] += weights[r][to];
                let d = deviation(&fractions(&c));
                if d + 1e-12 < best.0 {
                    best = (d, to);
                }
            }
            if best.1 != from {
                let to = best.1;
                counts[from] -= weights[r][from];
                counts[to] += weights[r][to];
                used[from] -= 1;
                used[to] += 1;
                groups[r] = to;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    (groups, counts)
}

/// Partitions TX regions and RX blocks into train/val/test groups so the
/// diagonal link fractions approach 70/15/15.
///
/// `links` lists `(tx_region, rx_region)` for every candidate link.
pub fn assign_splits(
    links: &[(usize, usize)],
    n_tx: usize,
    n_rx: usize,
    seed: u64,
) -> Result<SplitPlan, DatasetError> {
    if n_tx < 3 || n_rx < 3 {
        return Err(DatasetError::Split(format!(
            "need at least 3 TX regions and 3 RX blocks, got {n_tx} and {n_rx}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tx_order: Vec<usize> = (0..n_tx).collect();
    tx_order.shuffle(&mut rng);
    let mut rx_order: Vec<usize> = (0..n_rx).collect();
    rx_order.shuffle(&mut rng);

    let mut pair_counts = vec![vec![0usize; n_rx]; n_tx];
    for &(t, r) in links {
        pair_counts[t][r] += 1;
    }

    let mut best: Option<(f64, usize, Vec<Split>, Vec<Split>, [usize; 3])> = None;
    for a in 1..n_tx - 1 {
        for b in 1..n_tx - a {
            let mut tx_groups = vec![0usize; n_tx];
            for (k, &t) in tx_order.iter().enumerate() {
                tx_groups[t] = if k < a {
                    0
                } else if k < a + b {
                    1
                } else {
                    2
                };
            }
            let weights: Vec<[usize; 3]> = (0..n_rx)
                .map(|r| {
                    let mut w = [0usize; 3];
                    for t in 0..n_tx {
                        w[tx_groups[t]] += pair_counts[t][r];
                    }
                    w
                })
                .collect();
            let (rx_groups, counts) = assign_rx(&weights, &rx_order);
            let dev = deviation(&fractions(&counts));
            let kept: usize = counts.iter().sum();
            // Within half the tolerance, more kept links wins; otherwise lower deviation.
            let score = |d: f64, k: usize| {
                if d <= SPLIT_TOLERANCE / 2.0 {
                    (0, -(k as i64), 0.0)
                } else {
                    (1, 0, d)
                }
            };
            let better = match &best {
                None => true,
                Some((d, k, ..)) => {
                    let (a, b) = (score(dev, kept), score(*d, *k));
                    a.0 < b.0 || (a.0 == b.0 && (a.1 < b.1 || (a.1 == b.1 && a.2 + 1e-12 < b.2)))
                }
            };
            if better {
                let to_split = |g: &usize| Split::ALL[*g];
                best = Some((
                    dev,
                    kept,
                    tx_groups.iter().map(to_split).collect(),
                    rx_groups.iter().map(to_split).collect(),
                    counts,
                ));
            }
        }
    }
    let (_, kept, tx_groups, rx_groups, counts) = best.expect("n_tx >= 3 gives a composition");
    Ok(SplitPlan {
        tx_groups,
        rx_groups,
        fractions: fractions(&counts),
        kept_links: kept,
    })
}

//! Transferable one-dimensional statistics.
//!
//! Every feature the estimator consumes is derived from fixed-length
//! [`Distribution`] vectors built here: equal-width histograms for continuous
//! attributes, SpaceSaving summaries for categorical ones, and log-bucketed
//! scaling-factor distributions for each side of each join edge. All of them
//! are built in one scan of their column and can be updated incrementally.

mod space_saving;
mod store;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::catalog::{canonical_bits, Catalog, JoinEdge, Side};
use crate::error::{Error, Result};

pub use space_saving::{Counter, SpaceSaving};
pub use store::{AttributeStats, StatsStore, STATS_VERSION};

/// Length of every distribution vector.
pub const BINS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistKind {
    Histogram,
    CategorySummary,
    ScalingFactor,
}

/// Bucketing rule for scaling factors: bucket 0 holds unmatched tuples,
/// bucket `1 + floor(log2 c)` (capped at the last bin) holds match count `c`.
pub const LOG2_BUCKETS: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DistMeta {
    Histogram {
        lo: f64,
        hi: f64,
        counts: Vec<u64>,
        distinct: u64,
    },
    CategorySummary {
        summary: SpaceSaving,
        /// Retained item ids in bin order.
        items: Vec<u32>,
        epsilon: f64,
    },
    ScalingFactor {
        rule: u32,
        counts: Vec<u64>,
        /// Sum of the per-tuple match counts, i.e. the edge's join size.
        total_matches: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub bins: Vec<f64>,
    /// Number of values folded into the bins (non-null values, or all side
    /// tuples for scaling factors).
    pub observed: u64,
    pub meta: DistMeta,
}

impl Distribution {
    pub fn kind(&self) -> DistKind {
        match self.meta {
            DistMeta::Histogram { .. } => DistKind::Histogram,
            DistMeta::CategorySummary { .. } => DistKind::CategorySummary,
            DistMeta::ScalingFactor { .. } => DistKind::ScalingFactor,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.observed == 0
    }

    /// Histogram bounds, if this is a histogram.
    pub fn bounds(&self) -> Option<(f64, f64)> {
        match self.meta {
            DistMeta::Histogram { lo, hi, .. } => Some((lo, hi)),
            _ => None,
        }
    }

    /// Position of a categorical item among the retained bins.
    pub fn item_rank(&self, item: u32) -> Option<usize> {
        match &self.meta {
            DistMeta::CategorySummary { items, .. } => items.iter().position(|&i| i == item),
            _ => None,
        }
    }

    pub fn total_matches(&self) -> Option<u64> {
        match self.meta {
            DistMeta::ScalingFactor { total_matches, .. } => Some(total_matches),
            _ => None,
        }
    }
}

fn normalized(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return vec![0.0; counts.len()];
    }
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

/// Histogram bounds after the degenerate-range rule: equal bounds `c` widen
/// to `[c, c + 1]`.
pub fn effective_bounds(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        (lo, lo + 1.0)
    }
}

fn bin_of(x: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let pos = (x - lo) / (hi - lo) * bins as f64;
    if pos.is_nan() || pos < 0.0 {
        0
    } else {
        (pos.floor() as usize).min(bins - 1)
    }
}

pub fn build_histogram(values: &[Option<f64>], bounds: (f64, f64)) -> Distribution {
    build_histogram_with_bins(values, bounds, BINS)
}

/// Equal-width histogram over `bounds` with the upper bound inclusive in the
/// last bin. Values outside the bounds land in the edge bins.
pub fn build_histogram_with_bins(
    values: &[Option<f64>],
    bounds: (f64, f64),
    bins: usize,
) -> Distribution {
    let (lo, hi) = effective_bounds(bounds.0, bounds.1);
    let mut counts = vec![0u64; bins];
    let mut seen: HashMap<u64, ()> = HashMap::new();
    let mut observed = 0u64;
    for x in values.iter().flatten() {
        counts[bin_of(*x, lo, hi, bins)] += 1;
        seen.insert(canonical_bits(*x), ());
        observed += 1;
    }
    Distribution {
        bins: normalized(&counts),
        observed,
        meta: DistMeta::Histogram {
            lo,
            hi,
            counts,
            distinct: seen.len() as u64,
        },
    }
}

pub(crate) fn summary_distribution(summary: SpaceSaving) -> Distribution {
    let ranked = summary.ranked();
    let mut counts = vec![0u64; BINS];
    let mut items = Vec::with_capacity(BINS);
    for (slot, c) in ranked.iter().take(BINS).enumerate() {
        counts[slot] = c.count;
        items.push(c.item);
    }
    Distribution {
        bins: normalized(&counts),
        observed: summary.total_seen(),
        meta: DistMeta::CategorySummary {
            epsilon: summary.error_bound(),
            summary,
            items,
        },
    }
}

/// SpaceSaving summary with capacity [`BINS`]; bins hold retained counts in
/// descending order, renormalized when tail mass was dropped.
pub fn build_category_summary(ids: &[Option<u32>]) -> Distribution {
    let mut summary = SpaceSaving::new(BINS);
    for id in ids.iter().flatten() {
        summary.insert(*id);
    }
    summary_distribution(summary)
}

/// Bucket of a match count under [`LOG2_BUCKETS`].
pub fn scaling_bucket(matches: u64) -> usize {
    if matches == 0 {
        0
    } else {
        (1 + matches.ilog2() as usize).min(BINS - 1)
    }
}

/// Scaling-factor distributions of both sides of an edge from the key
/// multiplicities of each column. `rows` are the column lengths including
/// nulls. Only the smaller map is iterated.
pub fn scaling_factors_from_counts(
    rows: [u64; 2],
    counts: [&HashMap<u64, u64>; 2],
) -> [Distribution; 2] {
    let mut buckets = [vec![0u64; BINS], vec![0u64; BINS]];
    let mut matched_rows = [0u64; 2];
    let mut total_matches = 0u64;
    let small = usize::from(counts[1].len() < counts[0].len());
    let large = 1 - small;
    for (k, &m_small) in counts[small] {
        if let Some(&m_large) = counts[large].get(k) {
            buckets[small][scaling_bucket(m_large)] += m_small;
            buckets[large][scaling_bucket(m_small)] += m_large;
            matched_rows[small] += m_small;
            matched_rows[large] += m_large;
            total_matches += m_small * m_large;
        }
    }
    let mut side = |i: usize| {
        let mut b = std::mem::take(&mut buckets[i]);
        b[0] += rows[i] - matched_rows[i];
        Distribution {
            bins: normalized(&b),
            observed: rows[i],
            meta: DistMeta::ScalingFactor {
                rule: LOG2_BUCKETS,
                counts: b,
                total_matches,
            },
        }
    };
    [side(0), side(1)]
}

/// Distribution of per-tuple match counts from `side_keys` into
/// `opposite_keys`. Null keys match nothing.
pub fn scaling_factor_from_keys(
    side_keys: &[Option<u64>],
    opposite_keys: &[Option<u64>],
) -> Distribution {
    let mut multiplicity: HashMap<u64, u64> = HashMap::with_capacity(opposite_keys.len());
    for k in opposite_keys.iter().flatten() {
        *multiplicity.entry(*k).or_insert(0) += 1;
    }
    let mut counts = vec![0u64; BINS];
    let mut total_matches = 0u64;
    for k in side_keys {
        let c = k.and_then(|k| multiplicity.get(&k).copied()).unwrap_or(0);
        counts[scaling_bucket(c)] += 1;
        total_matches += c;
    }
    Distribution {
        bins: normalized(&counts),
        observed: side_keys.len() as u64,
        meta: DistMeta::ScalingFactor {
            rule: LOG2_BUCKETS,
            counts,
            total_matches,
        },
    }
}

pub fn scaling_factor_distribution(
    catalog: &Catalog,
    edge: &JoinEdge,
    side: Side,
) -> Result<Distribution> {
    let (left, right) = catalog.edge_keys(edge)?;
    Ok(match side {
        Side::Left => scaling_factor_from_keys(&left, &right),
        Side::Right => scaling_factor_from_keys(&right, &left),
    })
}

/// A filter region on one attribute, as consumed by [`predicate_selectivity`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selection {
    /// Closed interval; infinite ends are allowed, `lo > hi` is empty.
    Interval {
        lo: f64,
        hi: f64,
    },
    Point(f64),
    /// Categorical equality; `None` when the literal is not in the dictionary.
    Category(Option<u32>),
}

/// Fraction of non-null values inside `selection`, under the piecewise
/// uniform model for histograms.
pub fn predicate_selectivity(dist: &Distribution, selection: Selection) -> Result<f64> {
    if dist.is_empty() {
        return Ok(0.0);
    }
    match (&dist.meta, selection) {
        (DistMeta::Histogram { lo, hi, .. }, Selection::Interval { lo: l, hi: u }) => {
            if l > u {
                return Ok(0.0);
            }
            let n = dist.bins.len();
            let width = (hi - lo) / n as f64;
            let mut sel = 0.0;
            for (i, &mass) in dist.bins.iter().enumerate() {
                if mass == 0.0 {
                    continue;
                }
                let b_lo = lo + width * i as f64;
                let b_hi = if i + 1 == n {
                    *hi
                } else {
                    lo + width * (i + 1) as f64
                };
                let overlap = u.min(b_hi) - l.max(b_lo);
                if overlap <= 0.0 {
                    // A point interval sitting on a bin still selects a sliver
                    // under the uniform model: zero.
                    continue;
                }
                sel += mass * (overlap / (b_hi - b_lo)).min(1.0);
            }
            Ok(sel.clamp(0.0, 1.0))
        }
        (
            DistMeta::Histogram {
                lo, hi, distinct, ..
            },
            Selection::Point(v),
        ) => {
            if v < *lo || v > *hi {
                return Ok(0.0);
            }
            let mass = dist.bins[bin_of(v, *lo, *hi, dist.bins.len())];
            if mass == 0.0 {
                return Ok(0.0);
            }
            Ok(mass.min(1.0 / (*distinct).max(1) as f64))
        }
        (DistMeta::CategorySummary { items, .. }, Selection::Category(item)) => Ok(item
            .and_then(|it| items.iter().position(|&x| x == it))
            .map(|slot| dist.bins[slot])
            .unwrap_or(0.0)),
        (meta, sel) => Err(Error::Stats(format!(
            "selection {sel:?} is incompatible with a {:?} distribution",
            match meta {
                DistMeta::Histogram { .. } => DistKind::Histogram,
                DistMeta::CategorySummary { .. } => DistKind::CategorySummary,
                DistMeta::ScalingFactor { .. } => DistKind::ScalingFactor,
            }
        ))),
    }
}

/// Single-table selectivity heuristics over per-predicate selectivities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Heuristics {
    /// Attribute value independence: product of all selectivities.
    pub avi: f64,
    pub min_sel: f64,
    /// Exponential backoff over the four most selective predicates.
    pub ebo: f64,
}

pub fn heuristic_estimates(selectivities: &[f64]) -> Result<Heuristics> {
    if let Some(bad) = selectivities.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::Stats(format!("selectivity {bad} outside [0, 1]")));
    }
    let mut sorted = selectivities.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let avi = sorted.iter().product();
    let min_sel = sorted.first().copied().unwrap_or(1.0);
    let ebo = sorted
        .iter()
        .take(4)
        .enumerate()
        .map(|(i, s)| s.powf(1.0 / f64::from(1u32 << i)))
        .product();
    Ok(Heuristics { avi, min_sel, ebo })
}

/// New observations to fold into an existing distribution.
#[derive(Debug, Clone, Copy)]
pub enum Observations<'a> {
    Continuous(&'a [f64]),
    Categorical(&'a [u32]),
    /// Per-tuple match counts of newly inserted side tuples.
    MatchCounts(&'a [u64]),
}

/// Fold inserted values into a distribution without touching old data.
/// The histogram's distinct count is left as built.
pub fn update_distribution(
    dist: &Distribution,
    inserted: Observations<'_>,
) -> Result<Distribution> {
    let mut out = dist.clone();
    match (&mut out.meta, inserted) {
        (DistMeta::Histogram { lo, hi, counts, .. }, Observations::Continuous(xs)) => {
            let n = counts.len();
            for &x in xs {
                counts[bin_of(x, *lo, *hi, n)] += 1;
            }
            out.observed += xs.len() as u64;
            out.bins = normalized(counts);
        }
        (DistMeta::CategorySummary { summary, .. }, Observations::Categorical(ids)) => {
            let mut summary = summary.clone();
            for &id in ids {
                summary.insert(id);
            }
            out = summary_distribution(summary);
        }
        (
            DistMeta::ScalingFactor {
                counts,
                total_matches,
                ..
            },
            Observations::MatchCounts(cs),
        ) => {
            for &c in cs {
                counts[scaling_bucket(c)] += 1;
                *total_matches += c;
            }
            out.observed += cs.len() as u64;
            out.bins = normalized(counts);
        }
        (_, obs) => {
            return Err(Error::Stats(format!(
                "cannot fold {obs:?} into a {:?} distribution",
                dist.kind()
            )))
        }
    }
    Ok(out)
}

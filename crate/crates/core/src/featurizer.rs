//! Query featurization: join, filter and table tokens plus query-level
//! scalars, all built from precomputed statistics only.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::catalog::{AttrKind, Catalog, ColumnRef, Side};
use crate::error::{Error, Result};
use crate::query::{CmpOp, Literal, QuerySpec};
use crate::stats::{
    heuristic_estimates, predicate_selectivity, AttributeStats, DistMeta, Selection, StatsStore,
    BINS,
};

pub const JOIN_TOKEN_DIM: usize = 2 * BINS;
pub const FILTER_TOKEN_DIM: usize = BINS + 3;
pub const TABLE_TOKEN_DIM: usize = 4;
pub const QUERY_FEAT_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBundle {
    pub join_tokens: Vec<Vec<f64>>,
    pub filter_tokens: Vec<Vec<f64>>,
    pub table_tokens: Vec<Vec<f64>>,
    pub query_feats: [f64; QUERY_FEAT_DIM],
    pub baseline: f64,
}

impl FeatureBundle {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes")
    }
}

/// Encoded range of one filtered attribute.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredicateEncoding {
    pub lower: f64,
    pub upper: f64,
    /// Estimated fraction of the table's rows passing the filter.
    pub selectivity: f64,
}

enum Folded<'a> {
    /// Bounds with inclusiveness flags.
    Range {
        lo: (f64, bool),
        hi: (f64, bool),
    },
    Category {
        text: Option<&'a str>,
        empty: bool,
    },
}

impl Folded<'_> {
    fn is_empty(&self) -> bool {
        match self {
            Folded::Range { lo, hi } => lo.0 > hi.0 || (lo.0 == hi.0 && !(lo.1 && hi.1)),
            Folded::Category { empty, .. } => *empty,
        }
    }
}

/// Intersect all predicates of the query on each filtered attribute.
fn fold_filters<'a>(q: &'a QuerySpec, catalog: &Catalog) -> BTreeMap<ColumnRef, Folded<'a>> {
    let mut out: BTreeMap<ColumnRef, Folded<'a>> = BTreeMap::new();
    for p in &q.filters {
        let entry = out
            .entry(p.column)
            .or_insert_with(|| match catalog.attribute(p.column).kind {
                AttrKind::Continuous => Folded::Range {
                    lo: (f64::NEG_INFINITY, true),
                    hi: (f64::INFINITY, true),
                },
                AttrKind::Categorical => Folded::Category {
                    text: None,
                    empty: false,
                },
            });
        match (entry, &p.value) {
            (Folded::Range { lo, hi }, Literal::Number(v)) => {
                let v = *v;
                let raise = |lo: &mut (f64, bool), b: (f64, bool)| {
                    if b.0 > lo.0 || (b.0 == lo.0 && !b.1) {
                        *lo = b;
                    }
                };
                let lower = |hi: &mut (f64, bool), b: (f64, bool)| {
                    if b.0 < hi.0 || (b.0 == hi.0 && !b.1) {
                        *hi = b;
                    }
                };
                match p.op {
                    CmpOp::Ge => raise(lo, (v, true)),
                    CmpOp::Gt => raise(lo, (v, false)),
                    CmpOp::Le => lower(hi, (v, true)),
                    CmpOp::Lt => lower(hi, (v, false)),
                    CmpOp::Eq => {
                        raise(lo, (v, true));
                        lower(hi, (v, true));
                    }
                }
            }
            (Folded::Category { text, empty }, Literal::Text(s)) => match text {
                Some(cur) if *cur != s.as_str() => *empty = true,
                _ => *text = Some(s.as_str()),
            },
            _ => {}
        }
    }
    out
}

fn encode(folded: &Folded<'_>, stats: &AttributeStats) -> Result<PredicateEncoding> {
    let non_null = stats.non_null_fraction();
    match folded {
        Folded::Range { lo, hi } => {
            let (lo, hi) = (lo.0, hi.0);
            let (blo, bhi) = stats.dist.bounds().unwrap_or((0.0, 1.0));
            let norm = |x: f64| ((x - blo) / (bhi - blo)).clamp(0.0, 1.0);
            let lower = norm(lo);
            let upper = norm(hi).max(lower);
            let sel = if folded.is_empty() {
                0.0
            } else if lo == hi {
                predicate_selectivity(&stats.dist, Selection::Point(lo))?
            } else {
                predicate_selectivity(&stats.dist, Selection::Interval { lo, hi })?
            };
            Ok(PredicateEncoding {
                lower,
                upper,
                selectivity: sel * non_null,
            })
        }
        Folded::Category { text, .. } => {
            let rank = text.and_then(|t| stats.label_rank(t));
            let pos = rank.map_or(1.0, |r| r as f64 / BINS as f64);
            let sel = if folded.is_empty() || text.is_none() {
                0.0
            } else if let Some(r) = rank {
                stats.dist.bins[r]
            } else {
                untracked_selectivity(stats)
            };
            Ok(PredicateEncoding {
                lower: pos,
                upper: pos,
                selectivity: sel * non_null,
            })
        }
    }
}

/// A value outside the tracked categories is assumed no more frequent than
/// the rarest tracked one, nor than a uniform share of the distinct values.
fn untracked_selectivity(stats: &AttributeStats) -> f64 {
    let DistMeta::CategorySummary { items, .. } = &stats.dist.meta else {
        return 0.0;
    };
    if stats.distinct as usize <= items.len() || items.is_empty() {
        return 0.0;
    }
    let rarest = stats.dist.bins[..items.len()]
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    rarest.min(1.0 / stats.distinct as f64)
}

fn check_coverage(q: &QuerySpec, catalog: &Catalog, stats: &StatsStore) -> Result<()> {
    if !stats.matches(catalog) {
        return Err(Error::Stats(format!(
            "statistics for `{}` do not match catalog `{}`",
            stats.catalog, catalog.name
        )));
    }
    for c in q.filtered_columns() {
        if stats.attributes[c.table].get(c.attribute).is_none() {
            return Err(Error::Stats(format!(
                "no statistics for {}",
                catalog.column_name(c)
            )));
        }
    }
    Ok(())
}

/// Per-table selectivities of the filtered attributes, in column order.
fn table_selectivities(
    q: &QuerySpec,
    catalog: &Catalog,
    stats: &StatsStore,
) -> Result<BTreeMap<ColumnRef, PredicateEncoding>> {
    fold_filters(q, catalog)
        .iter()
        .map(|(c, f)| Ok((*c, encode(f, stats.attribute(*c))?)))
        .collect()
}

fn baseline_from(
    q: &QuerySpec,
    catalog: &Catalog,
    stats: &StatsStore,
    encodings: &BTreeMap<ColumnRef, PredicateEncoding>,
) -> f64 {
    let mut est: f64 = q
        .tables
        .iter()
        .map(|&t| stats.row_counts[t] as f64)
        .product();
    for &e in &q.joins {
        let j = &catalog.joins[e];
        let d = stats
            .attribute(j.left)
            .distinct
            .max(stats.attribute(j.right).distinct)
            .max(1);
        est /= d as f64;
    }
    for enc in encodings.values() {
        est *= enc.selectivity;
    }
    est.max(1.0)
}

/// Independence-assumption estimate from one-dimensional statistics,
/// clamped to at least one row.
pub fn baseline_estimate(q: &QuerySpec, catalog: &Catalog, stats: &StatsStore) -> Result<f64> {
    check_coverage(q, catalog, stats)?;
    let enc = table_selectivities(q, catalog, stats)?;
    Ok(baseline_from(q, catalog, stats, &enc))
}

pub fn featurize(q: &QuerySpec, catalog: &Catalog, stats: &StatsStore) -> Result<FeatureBundle> {
    check_coverage(q, catalog, stats)?;
    let encodings = table_selectivities(q, catalog, stats)?;

    let mut join_tokens = Vec::with_capacity(2 * q.joins.len());
    for &e in &q.joins {
        let edge = &catalog.joins[e];
        for side in [Side::Left, Side::Right] {
            let mut tok = Vec::with_capacity(JOIN_TOKEN_DIM);
            tok.extend_from_slice(&stats.attribute(edge.side(side)).dist.bins);
            tok.extend_from_slice(&stats.scaling(e, side).bins);
            join_tokens.push(tok);
        }
    }

    let mut filter_tokens = Vec::with_capacity(encodings.len());
    for (c, enc) in &encodings {
        let mut tok = Vec::with_capacity(FILTER_TOKEN_DIM);
        tok.extend_from_slice(&stats.attribute(*c).dist.bins);
        tok.extend_from_slice(&[enc.lower, enc.upper, enc.selectivity]);
        filter_tokens.push(tok);
    }

    let mut table_tokens = Vec::with_capacity(q.tables.len());
    for &t in &q.tables {
        let sels: Vec<f64> = encodings
            .iter()
            .filter(|(c, _)| c.table == t)
            .map(|(_, e)| e.selectivity.clamp(0.0, 1.0))
            .collect();
        let h = heuristic_estimates(&sels)?;
        let rows = (stats.row_counts[t] as f64).max(1.0);
        table_tokens.push(vec![h.avi, h.min_sel, h.ebo, rows.log10() / 10.0]);
    }

    let baseline = baseline_from(q, catalog, stats, &encodings);
    Ok(FeatureBundle {
        join_tokens,
        filter_tokens,
        table_tokens,
        query_feats: [
            q.tables.len() as f64 / 16.0,
            q.joins.len() as f64 / 16.0,
            baseline.log10() / 10.0,
        ],
        baseline,
    })
}

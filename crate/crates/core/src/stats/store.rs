use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    bin_of, effective_bounds, normalized, scaling_factor_from_keys, scaling_factors_from_counts,
    summary_distribution, DistMeta, Distribution, SpaceSaving, BINS,
};
use crate::catalog::{canonical_bits, AttrKind, Catalog, ColumnRef, ColumnValues, Side};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PRCSTATS";
pub const STATS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeStats {
    pub dist: Distribution,
    /// Exact number of distinct non-null values at build time.
    pub distinct: u64,
    /// Rows in the owning table, nulls included.
    pub rows: u64,
    /// Text of the tracked categories in bin order; empty for continuous
    /// attributes.
    pub labels: Vec<String>,
}

impl AttributeStats {
    /// Fraction of the table's rows that are non-null in this attribute.
    pub fn non_null_fraction(&self) -> f64 {
        if self.rows == 0 {
            0.0
        } else {
            self.dist.observed as f64 / self.rows as f64
        }
    }

    /// Bin of a tracked category, looked up by its text.
    pub fn label_rank(&self, text: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == text)
    }
}

/// All statistics for one catalog: a distribution per attribute, a scaling
/// distribution per (join edge, side), and table sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsStore {
    pub catalog: String,
    pub tables: Vec<String>,
    pub row_counts: Vec<u64>,
    pub attributes: Vec<Vec<AttributeStats>>,
    /// `[left side, right side]` per join edge, in catalog order.
    pub edges: Vec<[Distribution; 2]>,
}

impl StatsStore {
    pub fn build(catalog: &Catalog) -> Result<StatsStore> {
        Self::build_counted(catalog).map(|(s, _)| s)
    }

    /// Build and report how many column values were visited in total.
    pub fn build_counted(catalog: &Catalog) -> Result<(StatsStore, u64)> {
        let join_columns: HashSet<ColumnRef> = catalog
            .joins
            .iter()
            .flat_map(|e| [e.left, e.right])
            .collect();
        let mut multiplicities: HashMap<ColumnRef, HashMap<u64, u64>> = HashMap::new();
        let mut visited = 0u64;
        let mut attributes = Vec::with_capacity(catalog.tables.len());
        for (t, meta) in catalog.tables.iter().enumerate() {
            let data = catalog.table_data(t)?;
            let mut per_table = Vec::with_capacity(meta.attributes.len());
            for (a, column) in data.columns.iter().enumerate() {
                let c = ColumnRef {
                    table: t,
                    attribute: a,
                };
                let (stats, v, counts) =
                    attribute_stats(catalog, c, &column.values, meta.row_count);
                visited += v;
                per_table.push(stats);
                if let Some(counts) = counts.filter(|_| join_columns.contains(&c)) {
                    multiplicities.insert(c, counts);
                }
            }
            attributes.push(per_table);
        }
        let mut edges = Vec::with_capacity(catalog.joins.len());
        for edge in &catalog.joins {
            let pair = match (
                multiplicities.get(&edge.left),
                multiplicities.get(&edge.right),
            ) {
                (Some(lc), Some(rc)) => {
                    visited += lc.len().min(rc.len()) as u64;
                    let rows = [
                        catalog.column(edge.left)?.len() as u64,
                        catalog.column(edge.right)?.len() as u64,
                    ];
                    scaling_factors_from_counts(rows, [lc, rc])
                }
                _ => {
                    let (left, right) = catalog.edge_keys(edge)?;
                    visited += 2 * (left.len() + right.len()) as u64;
                    [
                        scaling_factor_from_keys(&left, &right),
                        scaling_factor_from_keys(&right, &left),
                    ]
                }
            };
            edges.push(pair);
        }
        Ok((
            StatsStore {
                catalog: catalog.name.clone(),
                tables: catalog.tables.iter().map(|t| t.name.clone()).collect(),
                row_counts: catalog.tables.iter().map(|t| t.row_count).collect(),
                attributes,
                edges,
            },
            visited,
        ))
    }

    pub fn attribute(&self, c: ColumnRef) -> &AttributeStats {
        &self.attributes[c.table][c.attribute]
    }

    pub fn scaling(&self, edge: usize, side: Side) -> &Distribution {
        match side {
            Side::Left => &self.edges[edge][0],
            Side::Right => &self.edges[edge][1],
        }
    }

    /// True if this store was built for a catalog with the same shape.
    pub fn matches(&self, catalog: &Catalog) -> bool {
        self.tables.len() == catalog.tables.len()
            && self
                .tables
                .iter()
                .zip(&catalog.tables)
                .all(|(a, b)| *a == b.name)
            && self
                .attributes
                .iter()
                .zip(&catalog.tables)
                .all(|(a, t)| a.len() == t.attributes.len())
            && self.edges.len() == catalog.joins.len()
    }

    fn distributions(&self) -> impl Iterator<Item = &Distribution> {
        self.attributes
            .iter()
            .flatten()
            .map(|a| &a.dist)
            .chain(self.edges.iter().flatten())
    }

    /// Binary layout: magic, version, table/attribute/edge counts, then
    /// every bin array as little-endian f64 (attributes in table order,
    /// then edges left/right), then a length-prefixed JSON metadata block.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n_attr: usize = self.attributes.iter().map(Vec::len).sum();
        w.write_all(MAGIC)?;
        w.write_all(&STATS_VERSION.to_le_bytes())?;
        w.write_all(&(self.tables.len() as u32).to_le_bytes())?;
        w.write_all(&(n_attr as u32).to_le_bytes())?;
        w.write_all(&(self.edges.len() as u32).to_le_bytes())?;
        for d in self.distributions() {
            for b in &d.bins {
                w.write_all(&b.to_le_bytes())?;
            }
        }
        let meta = serde_json::to_vec(&Metadata::from(self)).map_err(std::io::Error::other)?;
        w.write_all(&(meta.len() as u64).to_le_bytes())?;
        w.write_all(&meta)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<StatsStore> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)
            .map_err(|e| Error::CorruptStats(e.to_string()))?;
        let mut cur = Cursor { buf: &buf, pos: 0 };
        if cur.take(8)? != MAGIC {
            return Err(Error::CorruptStats("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != STATS_VERSION {
            return Err(Error::CorruptStats(format!(
                "unsupported version {version}"
            )));
        }
        let n_tables = cur.u32()? as usize;
        let n_attr = cur.u32()? as usize;
        let n_edges = cur.u32()? as usize;
        let mut bins = Vec::with_capacity(n_attr + 2 * n_edges);
        for _ in 0..n_attr + 2 * n_edges {
            let mut v = Vec::with_capacity(BINS);
            for _ in 0..BINS {
                v.push(f64::from_le_bytes(cur.take(8)?.try_into().unwrap()));
            }
            bins.push(v);
        }
        let len = u64::from_le_bytes(cur.take(8)?.try_into().unwrap()) as usize;
        let meta: Metadata = serde_json::from_slice(cur.take(len)?)
            .map_err(|e| Error::CorruptStats(e.to_string()))?;
        if cur.pos != buf.len() {
            return Err(Error::CorruptStats("trailing bytes".into()));
        }
        meta.into_store(n_tables, n_attr, n_edges, bins)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<StatsStore> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        StatsStore::read_from(std::io::BufReader::new(file))
    }
}

/// Statistics of one column, the number of values visited, and the exact
/// value multiplicities of a continuous column.
fn attribute_stats(
    catalog: &Catalog,
    c: ColumnRef,
    values: &ColumnValues,
    rows: u64,
) -> (AttributeStats, u64, Option<HashMap<u64, u64>>) {
    match values {
        ColumnValues::Continuous(xs) => {
            // One scan collects extrema and exact value multiplicities; the
            // histogram is then filled from the (smaller) multiplicity map.
            let mut counts: HashMap<u64, u64> = HashMap::new();
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            let mut observed = 0u64;
            for x in xs.iter().flatten() {
                lo = lo.min(*x);
                hi = hi.max(*x);
                observed += 1;
                *counts.entry(canonical_bits(*x)).or_insert(0) += 1;
            }
            let declared = match catalog.attribute(c).kind {
                AttrKind::Continuous => catalog.attribute(c).domain,
                AttrKind::Categorical => None,
            };
            let (lo, hi) = match declared {
                Some(d) => effective_bounds(d.0, d.1),
                None if observed > 0 => effective_bounds(lo, hi),
                None => (0.0, 1.0),
            };
            let mut bins = vec![0u64; BINS];
            for (&k, n) in &counts {
                bins[bin_of(f64::from_bits(k), lo, hi, BINS)] += n;
            }
            let visited = xs.len() as u64 + counts.len() as u64;
            (
                AttributeStats {
                    dist: Distribution {
                        bins: normalized(&bins),
                        observed,
                        meta: DistMeta::Histogram {
                            lo,
                            hi,
                            counts: bins,
                            distinct: counts.len() as u64,
                        },
                    },
                    distinct: counts.len() as u64,
                    rows,
                    labels: Vec::new(),
                },
                visited,
                Some(counts),
            )
        }
        ColumnValues::Categorical { ids, dictionary } => {
            let mut summary = SpaceSaving::new(BINS);
            let mut seen = vec![false; dictionary.len()];
            for id in ids.iter().flatten() {
                summary.insert(*id);
                seen[*id as usize] = true;
            }
            let dist = summary_distribution(summary);
            let distinct = seen.iter().filter(|&&s| s).count() as u64;
            let labels = match &dist.meta {
                DistMeta::CategorySummary { items, .. } => items
                    .iter()
                    .map(|&i| dictionary[i as usize].clone())
                    .collect(),
                _ => Vec::new(),
            };
            (
                AttributeStats {
                    dist,
                    distinct,
                    rows,
                    labels,
                },
                ids.len() as u64 + dictionary.len() as u64,
                None,
            )
        }
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::CorruptStats("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[derive(Serialize, Deserialize)]
struct DistHeader {
    observed: u64,
    meta: DistMeta,
}

#[derive(Serialize, Deserialize)]
struct AttrHeader {
    dist: DistHeader,
    distinct: u64,
    rows: u64,
    #[serde(default)]
    labels: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    catalog: String,
    tables: Vec<String>,
    row_counts: Vec<u64>,
    attributes: Vec<Vec<AttrHeader>>,
    edges: Vec<[DistHeader; 2]>,
}

impl From<&StatsStore> for Metadata {
    fn from(s: &StatsStore) -> Self {
        let head = |d: &Distribution| DistHeader {
            observed: d.observed,
            meta: d.meta.clone(),
        };
        Metadata {
            catalog: s.catalog.clone(),
            tables: s.tables.clone(),
            row_counts: s.row_counts.clone(),
            attributes: s
                .attributes
                .iter()
                .map(|t| {
                    t.iter()
                        .map(|a| AttrHeader {
                            dist: head(&a.dist),
                            distinct: a.distinct,
                            rows: a.rows,
                            labels: a.labels.clone(),
                        })
                        .collect()
                })
                .collect(),
            edges: s.edges.iter().map(|[l, r]| [head(l), head(r)]).collect(),
        }
    }
}

impl Metadata {
    fn into_store(
        self,
        n_tables: usize,
        n_attr: usize,
        n_edges: usize,
        bins: Vec<Vec<f64>>,
    ) -> Result<StatsStore> {
        let attr_count: usize = self.attributes.iter().map(Vec::len).sum();
        if self.tables.len() != n_tables
            || self.row_counts.len() != n_tables
            || self.attributes.len() != n_tables
            || attr_count != n_attr
            || self.edges.len() != n_edges
        {
            return Err(Error::CorruptStats(
                "metadata block disagrees with header counts".into(),
            ));
        }
        let mut bins = bins.into_iter();
        let mut restore = |h: DistHeader| {
            let mut meta = h.meta;
            if let DistMeta::CategorySummary { summary, .. } = &mut meta {
                summary.rebuild_index();
            }
            Distribution {
                bins: bins.next().expect("counted above"),
                observed: h.observed,
                meta,
            }
        };
        let attributes = self
            .attributes
            .into_iter()
            .map(|t| {
                t.into_iter()
                    .map(|a| AttributeStats {
                        dist: restore(a.dist),
                        distinct: a.distinct,
                        rows: a.rows,
                        labels: a.labels,
                    })
                    .collect()
            })
            .collect();
        let edges = self
            .edges
            .into_iter()
            .map(|[l, r]| [restore(l), restore(r)])
            .collect();
        Ok(StatsStore {
            catalog: self.catalog,
            tables: self.tables,
            row_counts: self.row_counts,
            attributes,
            edges,
        })
    }
}

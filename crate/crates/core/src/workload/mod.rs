//! Random workload generation over connected join subgraphs, with exact
//! cardinalities for every connected sub-query.

mod executor;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{AttrKind, Catalog, ColumnRef, ColumnValues, JoinGraph};
use crate::error::{Error, Result};
use crate::query::{canonical_order, sub_queries, to_sql, CmpOp, Literal, Predicate, QuerySpec};

pub use executor::{true_cardinality, Executor};

pub const DEFAULT_SUBGRAPH_CAP: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subgraph {
    pub tables: Vec<usize>,
    /// Indices into the graph's edge list.
    pub edges: Vec<usize>,
}

/// All connected induced subgraphs with at least two nodes, ordered by size
/// and then by node list.
pub fn enumerate_connected_subgraphs(g: &JoinGraph, cap: usize) -> Result<Vec<Subgraph>> {
    if g.nodes > cap || g.nodes > 63 {
        return Err(Error::CapExceeded {
            nodes: g.nodes,
            cap: cap.min(63),
        });
    }
    let mut subs: Vec<Subgraph> = crate::query::connected_subsets(g.nodes, &g.edges)
        .into_iter()
        .filter(|m| m.count_ones() >= 2)
        .map(|mask| {
            let tables: Vec<usize> = (0..g.nodes).filter(|i| mask & (1 << i) != 0).collect();
            let edges = g
                .edges
                .iter()
                .enumerate()
                .filter(|(_, &(a, b))| mask & (1 << a) != 0 && mask & (1 << b) != 0)
                .map(|(i, _)| i)
                .collect();
            Subgraph { tables, edges }
        })
        .collect();
    subs.sort_by(|a, b| {
        a.tables
            .len()
            .cmp(&b.tables.len())
            .then_with(|| a.tables.cmp(&b.tables))
    });
    Ok(subs)
}

/// Attributes that may carry generated predicates: not used as a join key
/// by any declared edge, and with a non-empty domain.
pub fn filterable_attributes(catalog: &Catalog, tables: &[usize]) -> Vec<ColumnRef> {
    let mut out = Vec::new();
    for &t in tables {
        for (a, attr) in catalog.tables[t].attributes.iter().enumerate() {
            let c = ColumnRef {
                table: t,
                attribute: a,
            };
            if catalog.joins.iter().any(|e| e.left == c || e.right == c) {
                continue;
            }
            let usable = match attr.kind {
                AttrKind::Continuous => catalog.continuous_domain(c).is_some(),
                AttrKind::Categorical => matches!(
                    catalog.column(c).map(|d| &d.values),
                    Ok(ColumnValues::Categorical { dictionary, .. }) if !dictionary.is_empty()
                ),
            };
            if usable {
                out.push(c);
            }
        }
    }
    out
}

/// Draw one random query over `sub`. The graph's edge indices are the
/// catalog's join indices.
pub fn generate_query<R: Rng>(sub: &Subgraph, catalog: &Catalog, rng: &mut R) -> QuerySpec {
    let candidates = filterable_attributes(catalog, &sub.tables);
    let mut filters = Vec::new();
    if !candidates.is_empty() {
        let m = candidates.len();
        let n = rng.gen_range(1..=m);
        let mut picked: Vec<usize> = sample(rng, m, n).into_vec();
        picked.sort_unstable();
        for i in picked {
            let c = candidates[i];
            match catalog.attribute(c).kind {
                AttrKind::Continuous => {
                    let (lo, hi) = catalog.continuous_domain(c).expect("filterable");
                    let mut l = rng.gen_range(lo..=hi);
                    let mut u = rng.gen_range(lo..=hi);
                    if l > u {
                        std::mem::swap(&mut l, &mut u);
                    }
                    filters.push(Predicate {
                        column: c,
                        op: CmpOp::Ge,
                        value: Literal::Number(l),
                    });
                    filters.push(Predicate {
                        column: c,
                        op: CmpOp::Le,
                        value: Literal::Number(u),
                    });
                }
                AttrKind::Categorical => {
                    let Ok(ColumnValues::Categorical { dictionary, .. }) =
                        catalog.column(c).map(|d| &d.values)
                    else {
                        unreachable!("filterable categorical column has a dictionary")
                    };
                    let v = &dictionary[rng.gen_range(0..dictionary.len())];
                    filters.push(Predicate {
                        column: c,
                        op: CmpOp::Eq,
                        value: Literal::Text(v.clone()),
                    });
                }
            }
        }
    }
    let mut q = QuerySpec {
        tables: sub.tables.clone(),
        joins: sub.edges.clone(),
        filters,
        source_text: String::new(),
    };
    canonical_order(catalog, &mut q);
    q.source_text = to_sql(catalog, &q);
    q
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadRecord {
    pub sql: String,
    pub card: u64,
    /// Table-set key (sorted, comma-joined) to true cardinality.
    pub subs: BTreeMap<String, u64>,
}

/// Exact cardinalities of a query and all of its connected sub-queries.
pub fn label_query(
    exec: &Executor<'_>,
    q: &QuerySpec,
    catalog: &Catalog,
) -> Result<WorkloadRecord> {
    let filtered = exec.filtered_rows(q)?;
    let mut subs = BTreeMap::new();
    for s in sub_queries(q, catalog) {
        subs.insert(s.table_key(catalog), exec.count_filtered(&s, &filtered));
    }
    let card = subs[&q.table_key(catalog)];
    Ok(WorkloadRecord {
        sql: q.source_text.clone(),
        card,
        subs,
    })
}

/// Seed for record `index` of a workload drawn with `seed`.
pub fn record_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadOptions {
    pub subgraph_cap: usize,
    /// Redraw a record until its query returns at least one row.
    pub non_empty: bool,
    pub max_attempts: usize,
}

impl Default for WorkloadOptions {
    fn default() -> Self {
        WorkloadOptions {
            subgraph_cap: DEFAULT_SUBGRAPH_CAP,
            non_empty: false,
            max_attempts: 10_000,
        }
    }
}

pub fn generate_workload(catalog: &Catalog, n: usize, seed: u64) -> Result<Vec<WorkloadRecord>> {
    generate_workload_with(catalog, n, seed, &WorkloadOptions::default())
}

pub fn generate_workload_with(
    catalog: &Catalog,
    n: usize,
    seed: u64,
    opts: &WorkloadOptions,
) -> Result<Vec<WorkloadRecord>> {
    let subgraphs = enumerate_connected_subgraphs(&catalog.join_graph(), opts.subgraph_cap)?;
    if subgraphs.is_empty() {
        return Err(Error::Invalid(format!(
            "catalog `{}` has no joinable table pairs",
            catalog.name
        )));
    }
    let exec = Executor::new(catalog)?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(record_seed(seed, i as u64));
        let mut attempts = 0;
        let record = loop {
            let sub = &subgraphs[rng.gen_range(0..subgraphs.len())];
            let q = generate_query(sub, catalog, &mut rng);
            let record = label_query(&exec, &q, catalog)?;
            attempts += 1;
            if !opts.non_empty || record.card > 0 {
                break record;
            }
            if attempts >= opts.max_attempts {
                return Err(Error::Invalid(format!(
                    "no non-empty query for record {i} after {attempts} attempts"
                )));
            }
        };
        out.push(record);
    }
    Ok(out)
}

pub fn write_workload<W: Write>(records: &[WorkloadRecord], mut sink: W) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut sink, r)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()
}

pub fn save_workload(records: &[WorkloadRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_workload(records, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn read_workload<R: Read>(source: R) -> Result<Vec<WorkloadRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(source).lines().enumerate() {
        let line = line.map_err(|e| Error::Invalid(format!("workload line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: WorkloadRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Invalid(format!("workload line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_workload(path: impl AsRef<Path>) -> Result<Vec<WorkloadRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_workload(file)
}

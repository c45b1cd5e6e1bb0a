//! Exact `COUNT(*)` evaluation for conjunctive equi-join queries.
//!
//! Tables are filtered first, then hash-joined left-deep in canonical order.
//! The intermediate result is never materialized as tuples: it is a map from
//! the join keys still needed by edges to unjoined tables to the number of
//! partial tuples carrying those keys, so cyclic queries and large outputs
//! are handled without blow-up.

use std::collections::{BTreeMap, HashMap};

use crate::catalog::{Catalog, ColumnRef, ColumnValues};
use crate::error::Result;
use crate::query::{canonicalize, QuerySpec, Region};

type Keys = (Vec<Option<u64>>, Vec<Option<u64>>);

pub struct Executor<'a> {
    catalog: &'a Catalog,
    /// Comparable join keys for every catalog edge.
    keys: Vec<Keys>,
}

impl<'a> Executor<'a> {
    pub fn new(catalog: &'a Catalog) -> Result<Self> {
        let keys = catalog
            .joins
            .iter()
            .map(|e| catalog.edge_keys(e))
            .collect::<Result<Vec<_>>>()?;
        Ok(Executor { catalog, keys })
    }

    /// Rows of each query table that satisfy all of its filters.
    pub fn filtered_rows(&self, q: &QuerySpec) -> Result<BTreeMap<usize, Vec<u32>>> {
        let regions = canonicalize(q, self.catalog);
        let filtered = q.filtered_columns();
        let mut out = BTreeMap::new();
        for &t in &q.tables {
            let rows = self.catalog.tables[t].row_count as usize;
            let cols: Vec<(ColumnRef, &Region)> = filtered
                .iter()
                .filter(|c| c.table == t)
                .map(|c| (*c, &regions[c]))
                .collect();
            if cols.iter().any(|(_, r)| r.is_empty()) {
                out.insert(t, Vec::new());
                continue;
            }
            let mut keep: Vec<u32> = (0..rows as u32).collect();
            for (c, region) in cols {
                let data = self.catalog.column(c)?;
                keep.retain(|&r| match &data.values {
                    ColumnValues::Continuous(v) => {
                        v[r as usize].is_some_and(|x| region.contains_number(x))
                    }
                    ColumnValues::Categorical { ids, .. } => {
                        ids[r as usize].is_some_and(|id| region.contains_id(id))
                    }
                });
            }
            out.insert(t, keep);
        }
        Ok(out)
    }

    pub fn count(&self, q: &QuerySpec) -> Result<u64> {
        let filtered = self.filtered_rows(q)?;
        Ok(self.count_filtered(q, &filtered))
    }

    /// Count using precomputed per-table row filters (which may cover more
    /// tables than `q` uses).
    pub fn count_filtered(&self, q: &QuerySpec, filtered: &BTreeMap<usize, Vec<u32>>) -> u64 {
        let Some(&first) = q.tables.first() else {
            return 0;
        };
        let catalog = self.catalog;
        let mut joined = vec![first];
        // Pending edges: exactly one endpoint joined. State keys are the
        // joined side's key for each pending edge, in `pending` order.
        let mut pending: Vec<usize> = Vec::new();
        let side_key = |edge: usize, table: usize, row: u32| -> Option<u64> {
            let e = &catalog.joins[edge];
            if e.left.table == table {
                self.keys[edge].0[row as usize]
            } else {
                self.keys[edge].1[row as usize]
            }
        };
        let outgoing = |table: usize, joined: &[usize]| -> Vec<usize> {
            q.joins
                .iter()
                .copied()
                .filter(|&e| {
                    let j = &catalog.joins[e];
                    let (a, b) = (j.left.table, j.right.table);
                    (a == table && !joined.contains(&b)) || (b == table && !joined.contains(&a))
                })
                .collect()
        };

        pending.extend(outgoing(first, &joined));
        let mut state: HashMap<Vec<u64>, u64> = HashMap::new();
        for &r in &filtered[&first] {
            let key: Option<Vec<u64>> = pending.iter().map(|&e| side_key(e, first, r)).collect();
            if let Some(key) = key {
                let slot = state.entry(key).or_insert(0);
                *slot = slot.saturating_add(1);
            }
        }

        while joined.len() < q.tables.len() {
            let Some(&next) = q.tables.iter().find(|&&t| {
                !joined.contains(&t)
                    && pending.iter().any(|&e| {
                        let j = &catalog.joins[e];
                        j.left.table == t || j.right.table == t
                    })
            }) else {
                // disconnected; cannot happen for validated queries
                return 0;
            };
            let (closing, kept): (Vec<usize>, Vec<usize>) = pending.iter().partition(|&&e| {
                let j = &catalog.joins[e];
                j.left.table == next || j.right.table == next
            });
            let closing_pos: Vec<usize> = closing
                .iter()
                .map(|e| pending.iter().position(|p| p == e).unwrap())
                .collect();
            let kept_pos: Vec<usize> = kept
                .iter()
                .map(|e| pending.iter().position(|p| p == e).unwrap())
                .collect();
            joined.push(next);
            let new_out = outgoing(next, &joined);

            // build side: closing keys -> (new outgoing keys -> count)
            let mut build: HashMap<Vec<u64>, HashMap<Vec<u64>, u64>> = HashMap::new();
            for &r in &filtered[&next] {
                let probe: Option<Vec<u64>> =
                    closing.iter().map(|&e| side_key(e, next, r)).collect();
                let carry: Option<Vec<u64>> =
                    new_out.iter().map(|&e| side_key(e, next, r)).collect();
                if let (Some(p), Some(c)) = (probe, carry) {
                    *build.entry(p).or_default().entry(c).or_insert(0) += 1;
                }
            }
            let mut next_state: HashMap<Vec<u64>, u64> = HashMap::new();
            for (key, count) in &state {
                let probe: Vec<u64> = closing_pos.iter().map(|&i| key[i]).collect();
                let Some(matches) = build.get(&probe) else {
                    continue;
                };
                let base: Vec<u64> = kept_pos.iter().map(|&i| key[i]).collect();
                for (carry, m) in matches {
                    let mut k = base.clone();
                    k.extend_from_slice(carry);
                    let slot = next_state.entry(k).or_insert(0);
                    *slot = slot.saturating_add(count.saturating_mul(*m));
                }
            }
            state = next_state;
            pending = kept;
            pending.extend(new_out);
        }
        state.values().fold(0u64, |acc, &c| acc.saturating_add(c))
    }
}

/// Exact cardinality of `q` on the catalog's loaded data.
pub fn true_cardinality(q: &QuerySpec, catalog: &Catalog) -> Result<u64> {
    Executor::new(catalog)?.count(q)
}

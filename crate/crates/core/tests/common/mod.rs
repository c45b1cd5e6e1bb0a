//! Brute-force reference implementations shared by integration tests.

#![allow(dead_code)]

use price_core::catalog::{Catalog, ColumnRef, ColumnValues};
use price_core::query::{CmpOp, Literal, QuerySpec};
use price_core::synth::{generate, Shape, SynthConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Text(String),
}

/// Raw values of a column; categorical ids are resolved to their strings.
pub fn cells(catalog: &Catalog, c: ColumnRef) -> Vec<Option<Cell>> {
    match &catalog.column(c).expect("column is ingested").values {
        ColumnValues::Continuous(v) => v.iter().map(|x| x.map(Cell::Num)).collect(),
        ColumnValues::Categorical { ids, dictionary } => ids
            .iter()
            .map(|i| i.map(|i| Cell::Text(dictionary[i as usize].clone())))
            .collect(),
    }
}

pub fn table_len(catalog: &Catalog, table: usize) -> usize {
    catalog
        .column(ColumnRef {
            table,
            attribute: 0,
        })
        .expect("table is ingested")
        .len()
}

fn passes(cell: &Option<Cell>, op: CmpOp, lit: &Literal) -> bool {
    match (cell, lit) {
        (None, _) => false,
        (Some(Cell::Num(x)), Literal::Number(v)) => match op {
            CmpOp::Lt => x < v,
            CmpOp::Le => x <= v,
            CmpOp::Gt => x > v,
            CmpOp::Ge => x >= v,
            CmpOp::Eq => x == v,
        },
        (Some(Cell::Text(s)), Literal::Text(v)) => match op {
            CmpOp::Eq => s == v,
            _ => panic!("range predicate on text"),
        },
        _ => panic!("literal type does not match column"),
    }
}

/// Own key column, earlier level, that level's key column.
type Cond = (Vec<Option<Cell>>, usize, Vec<Option<Cell>>);

fn keys_equal(a: &Option<Cell>, b: &Option<Cell>) -> bool {
    matches!((a, b), (Some(x), Some(y)) if x == y)
}

/// COUNT(*) of `q` by nested loops over the raw column values.
pub fn nested_loop_count(catalog: &Catalog, q: &QuerySpec) -> u64 {
    let n = q.tables.len();
    let mut order = vec![q.tables[0]];
    while order.len() < n {
        let next = q
            .joins
            .iter()
            .map(|&j| catalog.joins[j])
            .find_map(|e| {
                let (l, r) = (e.left.table, e.right.table);
                match (order.contains(&l), order.contains(&r)) {
                    (true, false) => Some(r),
                    (false, true) => Some(l),
                    _ => None,
                }
            })
            .expect("query is connected");
        order.push(next);
    }
    let level_of = |t: usize| order.iter().position(|&x| x == t).unwrap();

    let rows: Vec<Vec<usize>> = order
        .iter()
        .map(|&t| {
            let preds: Vec<(Vec<Option<Cell>>, CmpOp, &Literal)> = q
                .filters
                .iter()
                .filter(|f| f.column.table == t)
                .map(|f| (cells(catalog, f.column), f.op, &f.value))
                .collect();
            (0..table_len(catalog, t))
                .filter(|&r| preds.iter().all(|(c, op, v)| passes(&c[r], *op, v)))
                .collect()
        })
        .collect();

    let mut conds: Vec<Vec<Cond>> = vec![Vec::new(); n];
    for &j in &q.joins {
        let e = catalog.joins[j];
        let (a, b) = (level_of(e.left.table), level_of(e.right.table));
        let (late, early) = if a > b {
            (e.left, e.right)
        } else {
            (e.right, e.left)
        };
        conds[a.max(b)].push((cells(catalog, late), a.min(b), cells(catalog, early)));
    }

    fn walk(
        level: usize,
        chosen: &mut Vec<usize>,
        rows: &[Vec<usize>],
        conds: &[Vec<Cond>],
    ) -> u64 {
        if level == rows.len() {
            return 1;
        }
        let mut total = 0u64;
        for &r in &rows[level] {
            let ok = conds[level]
                .iter()
                .all(|(mine, other, theirs)| keys_equal(&mine[r], &theirs[chosen[*other]]));
            if ok {
                chosen[level] = r;
                total += walk(level + 1, chosen, rows, conds);
            }
        }
        total
    }
    walk(0, &mut vec![0; n], &rows, &conds)
}

/// Number of pairs of equal non-null values across two columns.
pub fn pair_join_size(catalog: &Catalog, a: ColumnRef, b: ColumnRef) -> u64 {
    let (x, y) = (cells(catalog, a), cells(catalog, b));
    let mut n = 0;
    for u in &x {
        for v in &y {
            if keys_equal(u, v) {
                n += 1;
            }
        }
    }
    n
}

pub fn fixture(name: &str, shape: Shape, tables: usize, rows: usize, seed: u64) -> Catalog {
    generate(&SynthConfig::new(name, shape, tables, rows, seed)).expect("fixture generates")
}

/// Chain-3, star-4 and cyclic-3 databases.
pub fn fixtures(rows: usize) -> Vec<Catalog> {
    vec![
        fixture("chain3", Shape::Chain, 3, rows, 11),
        fixture("star4", Shape::Star, 4, rows, 12),
        fixture("cycle3", Shape::Cycle, 3, rows, 13),
    ]
}

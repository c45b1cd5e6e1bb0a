//! Canonical representation of `SELECT COUNT(*)` conjunctive equi-join
//! queries: parsing, printing, constraint regions and sub-query enumeration.

mod parser;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use crate::catalog::{AttrKind, Catalog, ColumnRef, ColumnValues};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
}

impl CmpOp {
    fn from_sym(s: &str) -> CmpOp {
        match s {
            "<" => CmpOp::Lt,
            "<=" => CmpOp::Le,
            ">" => CmpOp::Gt,
            ">=" => CmpOp::Ge,
            _ => CmpOp::Eq,
        }
    }

    /// The operator with its operands swapped (`5 < a.v` is `a.v > 5`).
    fn flipped(self) -> CmpOp {
        match self {
            CmpOp::Lt => CmpOp::Gt,
            CmpOp::Le => CmpOp::Ge,
            CmpOp::Gt => CmpOp::Lt,
            CmpOp::Ge => CmpOp::Le,
            CmpOp::Eq => CmpOp::Eq,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Number(f64),
    Text(String),
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Number(x) => write!(f, "{x}"),
            Literal::Text(s) => write!(f, "'{}'", s.replace('\'', "''")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub column: ColumnRef,
    pub op: CmpOp,
    /// `Number` for continuous attributes, `Text` for categorical ones.
    pub value: Literal,
}

/// A resolved query. Tables, joins and filters are kept in canonical
/// (lexicographic by name) order; `joins` index into [`Catalog::joins`].
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySpec {
    pub tables: Vec<usize>,
    pub joins: Vec<usize>,
    pub filters: Vec<Predicate>,
    pub source_text: String,
}

impl QuerySpec {
    /// Sorted, comma-joined table names; the key used in workload files.
    pub fn table_key(&self, catalog: &Catalog) -> String {
        table_set_key(catalog, &self.tables)
    }

    /// Filters grouped by attribute, in canonical order.
    pub fn filtered_columns(&self) -> Vec<ColumnRef> {
        let mut cols: Vec<ColumnRef> = Vec::new();
        for f in &self.filters {
            if !cols.contains(&f.column) {
                cols.push(f.column);
            }
        }
        cols
    }
}

pub fn table_set_key(catalog: &Catalog, tables: &[usize]) -> String {
    let mut names: Vec<&str> = tables
        .iter()
        .map(|&t| catalog.tables[t].name.as_str())
        .collect();
    names.sort_unstable();
    names.join(",")
}

fn sort_tables(catalog: &Catalog, tables: &mut [usize]) {
    tables.sort_by(|&a, &b| catalog.tables[a].name.cmp(&catalog.tables[b].name));
}

/// Printed form of a join edge with its endpoints in lexicographic order.
fn join_text(catalog: &Catalog, edge: usize) -> String {
    let e = &catalog.joins[edge];
    let (l, r) = (catalog.column_name(e.left), catalog.column_name(e.right));
    if l <= r {
        format!("{l} = {r}")
    } else {
        format!("{r} = {l}")
    }
}

fn filter_sort_key(catalog: &Catalog, p: &Predicate) -> (String, String, CmpOp, String) {
    (
        catalog.tables[p.column.table].name.clone(),
        catalog.attribute(p.column).name.clone(),
        p.op,
        p.value.to_string(),
    )
}

pub(crate) fn canonical_order(catalog: &Catalog, q: &mut QuerySpec) {
    sort_tables(catalog, &mut q.tables);
    q.joins.sort_by_key(|&e| join_text(catalog, e));
    q.filters.sort_by(|a, b| {
        filter_sort_key(catalog, a)
            .cmp(&filter_sort_key(catalog, b))
            .then_with(|| match (&a.value, &b.value) {
                (Literal::Number(x), Literal::Number(y)) => x.total_cmp(y),
                _ => std::cmp::Ordering::Equal,
            })
    });
}

/// Canonical SQL text for a query.
pub fn to_sql(catalog: &Catalog, q: &QuerySpec) -> String {
    let mut tables = q.tables.clone();
    sort_tables(catalog, &mut tables);
    let from: Vec<&str> = tables
        .iter()
        .map(|&t| catalog.tables[t].name.as_str())
        .collect();
    let mut conds: Vec<String> = q.joins.iter().map(|&e| join_text(catalog, e)).collect();
    conds.sort();
    conds.extend(q.filters.iter().map(|p| {
        format!(
            "{} {} {}",
            catalog.column_name(p.column),
            p.op.as_str(),
            p.value
        )
    }));
    let mut sql = format!("SELECT COUNT(*) FROM {}", from.join(", "));
    if !conds.is_empty() {
        sql.push_str(" WHERE ");
        sql.push_str(&conds.join(" AND "));
    }
    sql
}

/// Parse and resolve a query against the catalog.
pub fn parse_query(sql: &str, catalog: &Catalog) -> Result<QuerySpec> {
    use parser::Operand;

    let raw = parser::parse(sql)?;
    let mut tables = Vec::with_capacity(raw.tables.len());
    for name in &raw.tables {
        let t = catalog
            .table_index(name)
            .ok_or_else(|| Error::UnknownTable(name.clone()))?;
        if tables.contains(&t) {
            return Err(Error::Sql(format!("table `{name}` listed twice in FROM")));
        }
        tables.push(t);
    }
    let resolve = |t: &str, a: &str| -> Result<ColumnRef> {
        let c = catalog.resolve(t, a)?;
        if !tables.contains(&c.table) {
            return Err(Error::Sql(format!("table `{t}` is not in the FROM list")));
        }
        Ok(c)
    };

    let mut joins = Vec::new();
    let mut filters = Vec::new();
    for cond in raw.conditions {
        let op = CmpOp::from_sym(cond.op);
        let (column, op, value) = match (cond.left, cond.right) {
            (Operand::Column(lt, la), Operand::Column(rt, ra)) => {
                let l = resolve(&lt, &la)?;
                let r = resolve(&rt, &ra)?;
                if op != CmpOp::Eq {
                    return Err(Error::UnsupportedPredicate(format!(
                        "non-equi join {lt}.{la} {} {rt}.{ra}",
                        op.as_str()
                    )));
                }
                let edge = catalog
                    .joins
                    .iter()
                    .position(|e| e.connects(l, r))
                    .ok_or_else(|| Error::JoinNotInSchema(format!("{lt}.{la} = {rt}.{ra}")))?;
                if !joins.contains(&edge) {
                    joins.push(edge);
                }
                continue;
            }
            (Operand::Column(t, a), lit) => (resolve(&t, &a)?, op, lit),
            (lit, Operand::Column(t, a)) => (resolve(&t, &a)?, op.flipped(), lit),
            _ => return Err(Error::Sql("comparison between two literals".to_string())),
        };
        let attr = catalog.attribute(column);
        let value = match (attr.kind, value) {
            (AttrKind::Continuous, Operand::Number(v, _)) => Literal::Number(v),
            (AttrKind::Continuous, Operand::Str(s)) => {
                return Err(Error::UnsupportedPredicate(format!(
                    "string literal '{s}' on continuous attribute {}",
                    catalog.column_name(column)
                )))
            }
            (AttrKind::Categorical, Operand::Number(_, text)) => Literal::Text(text),
            (AttrKind::Categorical, Operand::Str(s)) => Literal::Text(s),
            (_, Operand::Column(..)) => unreachable!("handled above"),
        };
        if attr.kind == AttrKind::Categorical && op != CmpOp::Eq {
            return Err(Error::UnsupportedPredicate(format!(
                "range operator `{}` on categorical attribute {}",
                op.as_str(),
                catalog.column_name(column)
            )));
        }
        filters.push(Predicate { column, op, value });
    }

    let edges: Vec<(usize, usize)> = joins
        .iter()
        .map(|&e| (catalog.joins[e].left.table, catalog.joins[e].right.table))
        .collect();
    if !is_connected(&tables, &edges) {
        let mut t = tables.clone();
        sort_tables(catalog, &mut t);
        return Err(Error::Disconnected(table_set_key(catalog, &t)));
    }

    let mut q = QuerySpec {
        tables,
        joins,
        filters,
        source_text: sql.to_string(),
    };
    canonical_order(catalog, &mut q);
    Ok(q)
}

fn is_connected(nodes: &[usize], edges: &[(usize, usize)]) -> bool {
    let Some(&start) = nodes.first() else {
        return true;
    };
    let mut seen = HashSet::from([start]);
    let mut stack = vec![start];
    while let Some(n) = stack.pop() {
        for &(a, b) in edges {
            let next = if a == n {
                b
            } else if b == n {
                a
            } else {
                continue;
            };
            if nodes.contains(&next) && seen.insert(next) {
                stack.push(next);
            }
        }
    }
    seen.len() == nodes.len()
}

/// Continuous interval bound: value plus whether it is included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound {
    pub value: f64,
    pub inclusive: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Region {
    Interval {
        lo: Bound,
        hi: Bound,
    },
    /// `None` means every category; `Some(set)` restricts to dictionary ids.
    Categories(Option<BTreeSet<u32>>),
}

impl Region {
    pub fn is_empty(&self) -> bool {
        match self {
            Region::Interval { lo, hi } => {
                lo.value > hi.value || (lo.value == hi.value && !(lo.inclusive && hi.inclusive))
            }
            Region::Categories(Some(s)) => s.is_empty(),
            Region::Categories(None) => false,
        }
    }

    pub fn contains_number(&self, x: f64) -> bool {
        match self {
            Region::Interval { lo, hi } => {
                let above = x > lo.value || (lo.inclusive && x == lo.value);
                let below = x < hi.value || (hi.inclusive && x == hi.value);
                above && below
            }
            Region::Categories(_) => false,
        }
    }

    pub fn contains_id(&self, id: u32) -> bool {
        match self {
            Region::Categories(None) => true,
            Region::Categories(Some(s)) => s.contains(&id),
            Region::Interval { .. } => false,
        }
    }

    fn tighten(&mut self, op: CmpOp, value: &Literal, dictionary: Option<&[String]>) {
        match (self, value) {
            (Region::Interval { lo, hi }, Literal::Number(v)) => {
                let v = *v;
                let raise = |lo: &mut Bound, b: Bound| {
                    if b.value > lo.value || (b.value == lo.value && !b.inclusive) {
                        *lo = b;
                    }
                };
                let lower = |hi: &mut Bound, b: Bound| {
                    if b.value < hi.value || (b.value == hi.value && !b.inclusive) {
                        *hi = b;
                    }
                };
                match op {
                    CmpOp::Lt => lower(
                        hi,
                        Bound {
                            value: v,
                            inclusive: false,
                        },
                    ),
                    CmpOp::Le => lower(
                        hi,
                        Bound {
                            value: v,
                            inclusive: true,
                        },
                    ),
                    CmpOp::Gt => raise(
                        lo,
                        Bound {
                            value: v,
                            inclusive: false,
                        },
                    ),
                    CmpOp::Ge => raise(
                        lo,
                        Bound {
                            value: v,
                            inclusive: true,
                        },
                    ),
                    CmpOp::Eq => {
                        raise(
                            lo,
                            Bound {
                                value: v,
                                inclusive: true,
                            },
                        );
                        lower(
                            hi,
                            Bound {
                                value: v,
                                inclusive: true,
                            },
                        );
                    }
                }
            }
            (Region::Categories(set), Literal::Text(s)) => {
                let id = dictionary.and_then(|d| d.iter().position(|x| x == s).map(|i| i as u32));
                let single: BTreeSet<u32> = id.into_iter().collect();
                *set = Some(match set.take() {
                    None => single,
                    Some(cur) => cur.intersection(&single).copied().collect(),
                });
            }
            // kinds are checked at parse time
            _ => {}
        }
    }
}

/// Dictionary id of a categorical literal, if present in the column.
pub fn category_id(catalog: &Catalog, column: ColumnRef, text: &str) -> Option<u32> {
    match &catalog.column(column).ok()?.values {
        ColumnValues::Categorical { dictionary, .. } => {
            dictionary.iter().position(|x| x == text).map(|i| i as u32)
        }
        ColumnValues::Continuous(_) => None,
    }
}

/// Constraint region of every attribute of every table in the query:
/// predicate intervals intersected with the attribute domain, or the full
/// domain when unfiltered.
pub fn canonicalize(q: &QuerySpec, catalog: &Catalog) -> BTreeMap<ColumnRef, Region> {
    let mut regions = BTreeMap::new();
    for &t in &q.tables {
        for (a, attr) in catalog.tables[t].attributes.iter().enumerate() {
            let c = ColumnRef {
                table: t,
                attribute: a,
            };
            let region = match attr.kind {
                AttrKind::Continuous => {
                    let (lo, hi) = catalog
                        .continuous_domain(c)
                        .unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
                    Region::Interval {
                        lo: Bound {
                            value: lo,
                            inclusive: true,
                        },
                        hi: Bound {
                            value: hi,
                            inclusive: true,
                        },
                    }
                }
                AttrKind::Categorical => Region::Categories(None),
            };
            regions.insert(c, region);
        }
    }
    for p in &q.filters {
        let dictionary = match catalog.column(p.column).map(|c| &c.values) {
            Ok(ColumnValues::Categorical { dictionary, .. }) => Some(dictionary.as_slice()),
            _ => None,
        };
        if let Some(r) = regions.get_mut(&p.column) {
            r.tighten(p.op, &p.value, dictionary);
        }
    }
    regions
}

/// Regions restricted to the filtered attributes only.
pub fn filter_regions(q: &QuerySpec, catalog: &Catalog) -> BTreeMap<ColumnRef, Region> {
    let filtered = q.filtered_columns();
    canonicalize(q, catalog)
        .into_iter()
        .filter(|(c, _)| filtered.contains(c))
        .collect()
}

/// All node subsets (as bitmasks over `0..n`) whose induced graph is
/// connected, grown outward from each node so disconnected sets are never
/// visited. Unordered.
pub fn connected_subsets(n: usize, edges: &[(usize, usize)]) -> Vec<u64> {
    assert!(n <= 63, "at most 63 nodes");
    let mut adj = vec![0u64; n];
    for &(a, b) in edges {
        adj[a] |= 1 << b;
        adj[b] |= 1 << a;
    }
    let mut seen: HashSet<u64> = HashSet::new();
    let mut out = Vec::new();
    let mut stack: Vec<u64> = (0..n).map(|i| 1u64 << i).collect();
    while let Some(set) = stack.pop() {
        if !seen.insert(set) {
            continue;
        }
        out.push(set);
        let mut frontier = 0u64;
        let mut rest = set;
        while rest != 0 {
            let i = rest.trailing_zeros() as usize;
            frontier |= adj[i];
            rest &= rest - 1;
        }
        frontier &= !set;
        while frontier != 0 {
            let i = frontier.trailing_zeros();
            frontier &= frontier - 1;
            let grown = set | (1 << i);
            if !seen.contains(&grown) {
                stack.push(grown);
            }
        }
    }
    out
}

/// Every connected sub-query (size >= 1), ordered by size then by the
/// lexicographic table-name list.
pub fn sub_queries(q: &QuerySpec, catalog: &Catalog) -> Vec<QuerySpec> {
    let local: Vec<(usize, usize)> = q
        .joins
        .iter()
        .map(|&e| {
            let j = &catalog.joins[e];
            let pos = |t| q.tables.iter().position(|&x| x == t).unwrap();
            (pos(j.left.table), pos(j.right.table))
        })
        .collect();
    let mut subs: Vec<(Vec<String>, QuerySpec)> = connected_subsets(q.tables.len(), &local)
        .into_iter()
        .map(|mask| {
            let tables: Vec<usize> = (0..q.tables.len())
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| q.tables[i])
                .collect();
            let joins: Vec<usize> = q
                .joins
                .iter()
                .copied()
                .filter(|&e| {
                    let j = &catalog.joins[e];
                    tables.contains(&j.left.table) && tables.contains(&j.right.table)
                })
                .collect();
            let filters: Vec<Predicate> = q
                .filters
                .iter()
                .filter(|p| tables.contains(&p.column.table))
                .cloned()
                .collect();
            let mut sub = QuerySpec {
                tables,
                joins,
                filters,
                source_text: String::new(),
            };
            canonical_order(catalog, &mut sub);
            sub.source_text = to_sql(catalog, &sub);
            let names = sub
                .tables
                .iter()
                .map(|&t| catalog.tables[t].name.clone())
                .collect();
            (names, sub)
        })
        .collect();
    subs.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.0.cmp(&b.0)));
    subs.into_iter().map(|(_, s)| s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn catalog() -> Catalog {
        let mut c = Catalog::from_schema_str(
            r#"{"name":"q","tables":[
                {"name":"b","columns":[{"name":"y","kind":"continuous"},{"name":"k","kind":"continuous"}]},
                {"name":"a","columns":[{"name":"x","kind":"continuous"},{"name":"v","kind":"continuous","min":0,"max":10},{"name":"c","kind":"categorical"}]},
                {"name":"c","columns":[{"name":"k","kind":"continuous"}]}],
               "joins":[{"left":"a.x","right":"b.y","kind":"PK-FK"},{"left":"b.k","right":"c.k","kind":"FK-FK"}]}"#,
        )
        .unwrap();
        c.ingest_table("a", "x,v,c\n1,2,red\n2,3,blue\n".as_bytes())
            .unwrap();
        c
    }

    #[test]
    fn parses_example() {
        let c = catalog();
        let q = parse_query("SELECT COUNT(*) FROM a, b WHERE a.x = b.y AND a.v <= 5", &c).unwrap();
        assert_eq!(q.tables, vec![1, 0]);
        assert_eq!(q.joins, vec![0]);
        assert_eq!(q.filters.len(), 1);
        assert_eq!(q.table_key(&c), "a,b");
    }

    #[test]
    fn join_not_in_schema() {
        let c = catalog();
        let err = parse_query("SELECT COUNT(*) FROM a, b WHERE a.v = b.y", &c).unwrap_err();
        assert!(err.to_string().contains("join not in schema"), "{err}");
    }

    #[test]
    fn disconnected() {
        let c = catalog();
        let err = parse_query("SELECT COUNT(*) FROM a, b WHERE a.v = 1", &c).unwrap_err();
        assert!(err.to_string().contains("disconnected"), "{err}");
    }

    #[test]
    fn other_errors() {
        let c = catalog();
        assert!(matches!(
            parse_query("SELECT COUNT(*) FROM zz", &c),
            Err(Error::UnknownTable(_))
        ));
        assert!(matches!(
            parse_query("SELECT COUNT(*) FROM a WHERE a.q = 1", &c),
            Err(Error::UnknownAttribute { .. })
        ));
        assert!(matches!(
            parse_query("SELECT COUNT(*) FROM a WHERE a.c < 'x'", &c),
            Err(Error::UnsupportedPredicate(_))
        ));
        assert!(parse_query("SELECT COUNT(*) FROM a WHERE b.y = 1", &c).is_err());
    }

    #[test]
    fn print_parse_is_fixed_point() {
        let c = catalog();
        let q = parse_query(
            "select count(*) from b, a where 5 >= a.v and b.y = a.x and a.c = 'red' and a.v > 0.1",
            &c,
        )
        .unwrap();
        let sql = to_sql(&c, &q);
        assert_eq!(
            sql,
            "SELECT COUNT(*) FROM a, b WHERE a.x = b.y AND a.c = 'red' AND a.v <= 5 AND a.v > 0.1"
        );
        let again = parse_query(&sql, &c).unwrap();
        assert_eq!(to_sql(&c, &again), sql);
        assert_eq!(again.filters, q.filters);
    }

    fn av(c: &Catalog) -> ColumnRef {
        c.resolve("a", "v").unwrap()
    }

    #[test]
    fn canonicalize_examples() {
        let c = catalog();
        let q = parse_query("SELECT COUNT(*) FROM a WHERE a.v <= 5 AND a.v > 2", &c).unwrap();
        let r = &canonicalize(&q, &c)[&av(&c)];
        assert_eq!(
            r,
            &Region::Interval {
                lo: Bound {
                    value: 2.0,
                    inclusive: false
                },
                hi: Bound {
                    value: 5.0,
                    inclusive: true
                }
            }
        );
        assert!(!r.contains_number(2.0) && r.contains_number(5.0));

        let q = parse_query("SELECT COUNT(*) FROM a", &c).unwrap();
        assert_eq!(
            canonicalize(&q, &c)[&av(&c)],
            Region::Interval {
                lo: Bound {
                    value: 0.0,
                    inclusive: true
                },
                hi: Bound {
                    value: 10.0,
                    inclusive: true
                }
            }
        );

        let q = parse_query("SELECT COUNT(*) FROM a WHERE a.v = 3 AND a.v = 4", &c).unwrap();
        assert!(canonicalize(&q, &c)[&av(&c)].is_empty());

        let q = parse_query(
            "SELECT COUNT(*) FROM a WHERE a.c = 'red' AND a.c = 'nope'",
            &c,
        )
        .unwrap();
        assert!(canonicalize(&q, &c)[&c.resolve("a", "c").unwrap()].is_empty());
    }

    fn brute_force_connected(n: usize, edges: &[(usize, usize)]) -> BTreeSet<u64> {
        (1u64..(1 << n))
            .filter(|&m| {
                let nodes: Vec<usize> = (0..n).filter(|i| m & (1 << i) != 0).collect();
                is_connected(&nodes, edges)
            })
            .collect()
    }

    #[test]
    fn sub_queries_chain() {
        let c = catalog();
        let q = parse_query(
            "SELECT COUNT(*) FROM a, b, c WHERE a.x = b.y AND b.k = c.k AND a.v < 3",
            &c,
        )
        .unwrap();
        let subs = sub_queries(&q, &c);
        let keys: Vec<String> = subs.iter().map(|s| s.table_key(&c)).collect();
        assert_eq!(keys, vec!["a", "b", "c", "a,b", "b,c", "a,b,c"]);
        assert_eq!(subs[0].filters.len(), 1);
        assert_eq!(subs[1].filters.len(), 0);
        assert_eq!(subs[5].joins.len(), 2);
    }

    #[test]
    fn connected_subsets_match_brute_force() {
        // star hub 0 with leaves 1, 2
        let star = [(0, 1), (0, 2)];
        let got: BTreeSet<u64> = connected_subsets(3, &star).into_iter().collect();
        assert_eq!(got.len(), 6);
        assert!(!got.contains(&0b110));
        assert_eq!(got, brute_force_connected(3, &star));

        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..40 {
            let n = rng.gen_range(1..=8);
            let edges: Vec<(usize, usize)> = (0..rng.gen_range(0..12))
                .map(|_| (rng.gen_range(0..n), rng.gen_range(0..n)))
                .filter(|(a, b)| a != b)
                .collect();
            let got: BTreeSet<u64> = connected_subsets(n, &edges).into_iter().collect();
            assert_eq!(got, brute_force_connected(n, &edges));
        }
    }

    #[test]
    fn single_table_sub_query_is_itself() {
        let c = catalog();
        let q = parse_query("SELECT COUNT(*) FROM a WHERE a.v < 3", &c).unwrap();
        let subs = sub_queries(&q, &c);
        assert_eq!(subs.len(), 1);
        assert_eq!(subs[0].filters, q.filters);
    }
}

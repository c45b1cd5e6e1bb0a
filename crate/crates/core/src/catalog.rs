//! Schemas, ingested column data and the join graph.
//!
//! A [`Catalog`] is built from a JSON schema document and then filled one
//! table at a time from CSV. After ingestion it is treated as immutable and
//! shared by reference with every other module.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttrKind {
    Categorical,
    Continuous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub kind: AttrKind,
    /// Declared `[min, max]` for continuous attributes.
    pub domain: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableMeta {
    pub name: String,
    pub attributes: Vec<Attribute>,
    pub row_count: u64,
}

impl TableMeta {
    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table: usize,
    pub attribute: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum JoinKind {
    #[serde(rename = "PK-FK")]
    PkFk,
    #[serde(rename = "FK-FK")]
    FkFk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JoinEdge {
    pub left: ColumnRef,
    pub right: ColumnRef,
    pub kind: JoinKind,
}

impl JoinEdge {
    pub fn side(&self, side: Side) -> ColumnRef {
        match side {
            Side::Left => self.left,
            Side::Right => self.right,
        }
    }

    /// True if the edge connects columns `a` and `b` in either orientation.
    pub fn connects(&self, a: ColumnRef, b: ColumnRef) -> bool {
        (self.left == a && self.right == b) || (self.left == b && self.right == a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnValues {
    Continuous(Vec<Option<f64>>),
    /// Dictionary-encoded ids, assigned in order of first appearance.
    Categorical {
        ids: Vec<Option<u32>>,
        dictionary: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnData {
    pub table: String,
    pub attribute: String,
    pub values: ColumnValues,
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match &self.values {
            ColumnValues::Continuous(v) => v.len(),
            ColumnValues::Categorical { ids, .. } => ids.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_null(&self, row: usize) -> bool {
        match &self.values {
            ColumnValues::Continuous(v) => v[row].is_none(),
            ColumnValues::Categorical { ids, .. } => ids[row].is_none(),
        }
    }

    pub fn null_count(&self) -> usize {
        (0..self.len()).filter(|&r| self.is_null(r)).count()
    }

    pub fn distinct_count(&self) -> usize {
        match &self.values {
            ColumnValues::Continuous(v) => v
                .iter()
                .flatten()
                .map(|x| canonical_bits(*x))
                .collect::<HashSet<_>>()
                .len(),
            ColumnValues::Categorical { ids, .. } => {
                ids.iter().flatten().collect::<HashSet<_>>().len()
            }
        }
    }

    /// Render a value the way it appeared in the source CSV.
    pub fn render(&self, row: usize) -> String {
        match &self.values {
            ColumnValues::Continuous(v) => v[row].map(|x| x.to_string()).unwrap_or_default(),
            ColumnValues::Categorical { ids, dictionary } => ids[row]
                .map(|id| dictionary[id as usize].clone())
                .unwrap_or_default(),
        }
    }
}

/// Bit pattern used to compare continuous join keys (`-0.0` folds into `0.0`).
pub(crate) fn canonical_bits(x: f64) -> u64 {
    if x == 0.0 {
        0f64.to_bits()
    } else {
        x.to_bits()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableData {
    pub columns: Vec<ColumnData>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub name: String,
    pub tables: Vec<TableMeta>,
    pub joins: Vec<JoinEdge>,
    data: Vec<Option<TableData>>,
}

#[derive(Deserialize)]
struct SchemaDoc {
    name: String,
    tables: Vec<TableDoc>,
    #[serde(default)]
    joins: Vec<JoinDoc>,
}

#[derive(Deserialize)]
struct TableDoc {
    name: String,
    columns: Vec<ColumnDoc>,
}

#[derive(Deserialize)]
struct ColumnDoc {
    name: String,
    kind: AttrKind,
    min: Option<f64>,
    max: Option<f64>,
}

#[derive(Deserialize)]
struct JoinDoc {
    left: String,
    right: String,
    kind: JoinKind,
}

impl Catalog {
    pub fn load_schema(path: impl AsRef<Path>) -> Result<Catalog> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Catalog::from_schema_str(&text)
    }

    pub fn from_schema_str(text: &str) -> Result<Catalog> {
        let doc: SchemaDoc =
            serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        let mut tables = Vec::with_capacity(doc.tables.len());
        let mut seen_tables = HashSet::new();
        for t in doc.tables {
            if !seen_tables.insert(t.name.clone()) {
                return Err(Error::DuplicateTable(t.name));
            }
            let mut seen_attrs = HashSet::new();
            let mut attributes = Vec::with_capacity(t.columns.len());
            for c in t.columns {
                if !seen_attrs.insert(c.name.clone()) {
                    return Err(Error::DuplicateAttribute {
                        table: t.name.clone(),
                        attribute: c.name,
                    });
                }
                let domain = match (c.kind, c.min, c.max) {
                    (AttrKind::Continuous, Some(lo), Some(hi)) => {
                        if lo.is_nan() || hi.is_nan() || lo > hi {
                            return Err(Error::Schema(format!(
                                "domain of {}.{} has min > max",
                                t.name, c.name
                            )));
                        }
                        Some((lo, hi))
                    }
                    (AttrKind::Continuous, None, None) => None,
                    (AttrKind::Continuous, _, _) => {
                        return Err(Error::Schema(format!(
                            "{}.{} declares only one of min/max",
                            t.name, c.name
                        )))
                    }
                    (AttrKind::Categorical, None, None) => None,
                    (AttrKind::Categorical, _, _) => {
                        return Err(Error::Schema(format!(
                            "categorical {}.{} cannot declare a numeric domain",
                            t.name, c.name
                        )))
                    }
                };
                attributes.push(Attribute {
                    name: c.name,
                    kind: c.kind,
                    domain,
                });
            }
            tables.push(TableMeta {
                name: t.name,
                attributes,
                row_count: 0,
            });
        }

        let mut catalog = Catalog {
            name: doc.name,
            data: vec![None; tables.len()],
            tables,
            joins: Vec::new(),
        };
        for j in doc.joins {
            let left = catalog.resolve_dotted(&j.left)?;
            let right = catalog.resolve_dotted(&j.right)?;
            if left.table == right.table {
                return Err(Error::Schema(format!(
                    "self-loop join {} = {}",
                    j.left, j.right
                )));
            }
            if catalog.attribute(left).kind != catalog.attribute(right).kind {
                return Err(Error::Schema(format!(
                    "join {} = {} mixes categorical and continuous keys",
                    j.left, j.right
                )));
            }
            if catalog.joins.iter().any(|e| e.connects(left, right)) {
                return Err(Error::Schema(format!(
                    "duplicate join {} = {}",
                    j.left, j.right
                )));
            }
            catalog.joins.push(JoinEdge {
                left,
                right,
                kind: j.kind,
            });
        }
        Ok(catalog)
    }

    /// Serialize the schema back into the JSON schema document format.
    pub fn schema_json(&self) -> serde_json::Value {
        let tables: Vec<_> = self
            .tables
            .iter()
            .map(|t| {
                let columns: Vec<_> = t
                    .attributes
                    .iter()
                    .map(|a| {
                        let mut c = serde_json::json!({"name": a.name, "kind": a.kind});
                        if let Some((lo, hi)) = a.domain {
                            c["min"] = lo.into();
                            c["max"] = hi.into();
                        }
                        c
                    })
                    .collect();
                serde_json::json!({"name": t.name, "columns": columns})
            })
            .collect();
        let joins: Vec<_> = self
            .joins
            .iter()
            .map(|e| {
                serde_json::json!({
                    "left": self.column_name(e.left),
                    "right": self.column_name(e.right),
                    "kind": e.kind,
                })
            })
            .collect();
        serde_json::json!({"name": self.name, "tables": tables, "joins": joins})
    }

    pub fn table_index(&self, name: &str) -> Option<usize> {
        self.tables.iter().position(|t| t.name == name)
    }

    pub fn resolve(&self, table: &str, attribute: &str) -> Result<ColumnRef> {
        let t = self
            .table_index(table)
            .ok_or_else(|| Error::UnknownTable(table.to_string()))?;
        let a =
            self.tables[t]
                .attribute_index(attribute)
                .ok_or_else(|| Error::UnknownAttribute {
                    table: table.to_string(),
                    attribute: attribute.to_string(),
                })?;
        Ok(ColumnRef {
            table: t,
            attribute: a,
        })
    }

    fn resolve_dotted(&self, dotted: &str) -> Result<ColumnRef> {
        let (t, a) = dotted
            .split_once('.')
            .ok_or_else(|| Error::Schema(format!("join endpoint `{dotted}` is not T.a")))?;
        self.resolve(t, a)
    }

    pub fn attribute(&self, c: ColumnRef) -> &Attribute {
        &self.tables[c.table].attributes[c.attribute]
    }

    pub fn column_name(&self, c: ColumnRef) -> String {
        format!(
            "{}.{}",
            self.tables[c.table].name, self.tables[c.table].attributes[c.attribute].name
        )
    }

    pub fn is_ingested(&self, table: usize) -> bool {
        self.data[table].is_some()
    }

    pub fn table_data(&self, table: usize) -> Result<&TableData> {
        self.data[table]
            .as_ref()
            .ok_or_else(|| Error::NotIngested(self.tables[table].name.clone()))
    }

    pub fn column(&self, c: ColumnRef) -> Result<&ColumnData> {
        Ok(&self.table_data(c.table)?.columns[c.attribute])
    }

    /// Declared domain, or the observed `[min, max]` of the loaded column.
    /// `None` for categorical attributes and for all-null columns.
    pub fn continuous_domain(&self, c: ColumnRef) -> Option<(f64, f64)> {
        let attr = self.attribute(c);
        if attr.kind != AttrKind::Continuous {
            return None;
        }
        if let Some(d) = attr.domain {
            return Some(d);
        }
        match &self.column(c).ok()?.values {
            ColumnValues::Continuous(v) => {
                let mut it = v.iter().flatten();
                let first = *it.next()?;
                Some(it.fold((first, first), |(lo, hi), &x| (lo.min(x), hi.max(x))))
            }
            ColumnValues::Categorical { .. } => None,
        }
    }

    /// Load one table from CSV. The header must list the declared attributes
    /// in declared order; empty fields become nulls.
    pub fn ingest_table<R: Read>(&mut self, table: &str, source: R) -> Result<&TableData> {
        let t = self
            .table_index(table)
            .ok_or_else(|| Error::UnknownTable(table.to_string()))?;
        let meta = &self.tables[t];
        let csv_err = |message: String| Error::Csv {
            table: table.to_string(),
            message,
        };
        let (header, records) = read_csv(source, meta.attributes.len()).map_err(csv_err)?;
        let expected: Vec<&str> = meta.attributes.iter().map(|a| a.name.as_str()).collect();
        if header != expected {
            return Err(csv_err(format!(
                "header mismatch: expected {expected:?}, found {header:?}"
            )));
        }

        enum Builder {
            Cont(Vec<Option<f64>>),
            Cat(Vec<Option<u32>>, Vec<String>, HashMap<String, u32>),
        }
        let mut builders: Vec<Builder> = meta
            .attributes
            .iter()
            .map(|a| match a.kind {
                AttrKind::Continuous => Builder::Cont(Vec::new()),
                AttrKind::Categorical => Builder::Cat(Vec::new(), Vec::new(), HashMap::new()),
            })
            .collect();

        for (n, record) in records.iter().enumerate() {
            let line = n + 2;
            if record.len() != builders.len() {
                return Err(csv_err(format!(
                    "row arity mismatch on line {line}: expected {}, found {}",
                    builders.len(),
                    record.len()
                )));
            }
            for (i, b) in builders.iter_mut().enumerate() {
                let field = record[i].trim();
                match b {
                    Builder::Cont(v) => {
                        if field.is_empty() {
                            v.push(None);
                        } else {
                            let x: f64 = field.parse().map_err(|_| {
                                csv_err(format!(
                                    "unparsable continuous value `{field}` for `{}` on line {line}",
                                    meta.attributes[i].name
                                ))
                            })?;
                            if !x.is_finite() {
                                return Err(csv_err(format!(
                                    "non-finite value `{field}` on line {line}"
                                )));
                            }
                            v.push(Some(x));
                        }
                    }
                    Builder::Cat(ids, dict, index) => {
                        if field.is_empty() {
                            ids.push(None);
                        } else {
                            let id = match index.get(field) {
                                Some(&id) => id,
                                None => {
                                    let id = dict.len() as u32;
                                    dict.push(field.to_string());
                                    index.insert(field.to_string(), id);
                                    id
                                }
                            };
                            ids.push(Some(id));
                        }
                    }
                }
            }
        }

        let columns: Vec<ColumnData> = builders
            .into_iter()
            .zip(&meta.attributes)
            .map(|(b, a)| ColumnData {
                table: meta.name.clone(),
                attribute: a.name.clone(),
                values: match b {
                    Builder::Cont(v) => ColumnValues::Continuous(v),
                    Builder::Cat(ids, dictionary, _) => {
                        ColumnValues::Categorical { ids, dictionary }
                    }
                },
            })
            .collect();
        let rows = records.len();
        self.tables[t].row_count = rows as u64;
        self.data[t] = Some(TableData { columns });
        Ok(self.data[t].as_ref().unwrap())
    }

    /// Ingest every table from `<dir>/<table>.csv`.
    pub fn ingest_dir(&mut self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for name in self
            .tables
            .iter()
            .map(|t| t.name.clone())
            .collect::<Vec<_>>()
        {
            let path = dir.join(format!("{name}.csv"));
            let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
            self.ingest_table(&name, std::io::BufReader::new(file))?;
        }
        Ok(())
    }

    /// Install already-built columns for a table (used by synthetic generators).
    pub fn set_table_data(&mut self, table: usize, columns: Vec<ColumnData>) -> Result<()> {
        let meta = &self.tables[table];
        if columns.len() != meta.attributes.len() {
            return Err(Error::Invalid(format!(
                "table `{}` expects {} columns, got {}",
                meta.name,
                meta.attributes.len(),
                columns.len()
            )));
        }
        let rows = columns.first().map(|c| c.len()).unwrap_or(0);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::Invalid(format!(
                "ragged columns for table `{}`",
                meta.name
            )));
        }
        self.tables[table].row_count = rows as u64;
        self.data[table] = Some(TableData { columns });
        Ok(())
    }

    /// Write a loaded table back out as CSV with a header row.
    pub fn write_table_csv<W: Write>(&self, table: usize, sink: W) -> Result<()> {
        let data = self.table_data(table)?;
        let meta = &self.tables[table];
        let mut w = csv::Writer::from_writer(sink);
        let map_err = |e: csv::Error| Error::Csv {
            table: meta.name.clone(),
            message: e.to_string(),
        };
        w.write_record(meta.attributes.iter().map(|a| a.name.as_str()))
            .map_err(map_err)?;
        for row in 0..meta.row_count as usize {
            w.write_record(data.columns.iter().map(|c| c.render(row)))
                .map_err(map_err)?;
        }
        w.flush().map_err(|e| Error::io("<csv sink>", e))?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Catalog> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }

    pub fn join_graph(&self) -> JoinGraph {
        JoinGraph::new(
            self.tables.len(),
            self.joins
                .iter()
                .map(|e| (e.left.table, e.right.table))
                .collect(),
        )
    }

    /// Comparable join keys for both sides of an edge; `None` for null keys.
    ///
    /// Categorical dictionaries are per column, so the right side's ids are
    /// re-mapped through the left side's dictionary.
    pub fn edge_keys(&self, edge: &JoinEdge) -> Result<(KeyColumn, KeyColumn)> {
        let l = self.column(edge.left)?;
        let r = self.column(edge.right)?;
        match (&l.values, &r.values) {
            (ColumnValues::Continuous(a), ColumnValues::Continuous(b)) => Ok((
                a.iter().map(|x| x.map(canonical_bits)).collect(),
                b.iter().map(|x| x.map(canonical_bits)).collect(),
            )),
            (
                ColumnValues::Categorical {
                    ids: la,
                    dictionary: ld,
                },
                ColumnValues::Categorical {
                    ids: ra,
                    dictionary: rd,
                },
            ) => {
                let index: HashMap<&str, u64> = ld
                    .iter()
                    .enumerate()
                    .map(|(i, s)| (s.as_str(), i as u64))
                    .collect();
                let offset = ld.len() as u64;
                let remap: Vec<u64> = rd
                    .iter()
                    .enumerate()
                    .map(|(i, s)| index.get(s.as_str()).copied().unwrap_or(offset + i as u64))
                    .collect();
                Ok((
                    la.iter().map(|x| x.map(u64::from)).collect(),
                    ra.iter().map(|x| x.map(|id| remap[id as usize])).collect(),
                ))
            }
            _ => Err(Error::Schema(format!(
                "join {} = {} mixes attribute kinds",
                self.column_name(edge.left),
                self.column_name(edge.right)
            ))),
        }
    }
}

/// Split CSV text into a header and records. The csv reader drops blank
/// lines, which for a one-column table are legitimate null fields, so that
/// case is split by line.
fn read_csv<R: Read>(
    mut source: R,
    columns: usize,
) -> Result<(Vec<String>, Vec<Vec<String>>), String> {
    let mut text = String::new();
    source
        .read_to_string(&mut text)
        .map_err(|e| e.to_string())?;
    let parse_line = |line: &str| -> Result<Vec<String>, String> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(line.as_bytes());
        match r.records().next() {
            Some(rec) => Ok(rec
                .map_err(|e| e.to_string())?
                .iter()
                .map(str::to_string)
                .collect()),
            None => Ok(vec![String::new()]),
        }
    };
    if columns == 1 && !text.contains('"') {
        let mut lines = text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l));
        let header = match lines.next() {
            Some(h) => parse_line(h)?,
            None => return Err("missing header row".into()),
        };
        let records = lines.map(|l| vec![l.to_string()]).collect();
        return Ok((
            header.into_iter().map(|h| h.trim().to_string()).collect(),
            records,
        ));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| e.to_string())?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut records = Vec::new();
    for rec in reader.records() {
        records.push(
            rec.map_err(|e| e.to_string())?
                .iter()
                .map(str::to_string)
                .collect(),
        );
    }
    Ok((header, records))
}

/// Join key per row, comparable across the two sides of an edge.
pub type KeyColumn = Vec<Option<u64>>;

/// Undirected multigraph view of the join schema: one node per table, one
/// edge per declared join, edges in schema order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JoinGraph {
    pub nodes: usize,
    /// `(left table, right table)` per edge; the index is the join index.
    pub edges: Vec<(usize, usize)>,
}

impl JoinGraph {
    pub fn new(nodes: usize, edges: Vec<(usize, usize)>) -> Self {
        JoinGraph { nodes, edges }
    }

    pub fn degree(&self, node: usize) -> usize {
        self.edges
            .iter()
            .map(|&(a, b)| usize::from(a == node) + usize::from(b == node))
            .sum()
    }

    pub fn edges_between(&self, a: usize, b: usize) -> usize {
        self.edges
            .iter()
            .filter(|&&(x, y)| (x == a && y == b) || (x == b && y == a))
            .count()
    }

    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter_map(move |&(a, b)| {
            if a == node {
                Some(b)
            } else if b == node {
                Some(a)
            } else {
                None
            }
        })
    }
}

//! Correlated synthetic databases for training corpora and fixtures.
//!
//! Every table has a key `id`, one foreign key per parent, a continuous
//! attribute `x` on `[0, 100]` and a categorical `g` with 8 labels that
//! tracks `x`.
//! Child rows pick a parent with Zipf-skewed preference leaning towards
//! parents with small `x` and inherit part of that parent's `x`, so filters correlate
//! across joins and with fan-out.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::catalog::{Catalog, ColumnData, ColumnValues};
use crate::error::{Error, Result};
use crate::workload::record_seed;

pub const GROUPS: usize = 8;
const BANDS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    /// t0 <- t1 <- t2 ...
    Chain,
    /// t0 is referenced by every other table.
    Star,
    /// A chain whose last table also references t0.
    Cycle,
}

impl std::str::FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Shape> {
        match s {
            "chain" => Ok(Shape::Chain),
            "star" => Ok(Shape::Star),
            "cycle" | "cyclic" => Ok(Shape::Cycle),
            _ => Err(Error::Config(format!("unknown shape `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub name: String,
    pub shape: Shape,
    pub tables: usize,
    pub rows: usize,
    /// Zipf exponent of the foreign-key fan-out.
    pub skew: f64,
    /// Weight in `[0, 1]` of inherited values against fresh noise.
    pub correlation: f64,
    pub null_fraction: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(name: &str, shape: Shape, tables: usize, rows: usize, seed: u64) -> Self {
        SynthConfig {
            name: name.to_string(),
            shape,
            tables,
            rows,
            skew: 1.0,
            correlation: 0.7,
            null_fraction: 0.02,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let min_tables = if self.shape == Shape::Cycle { 3 } else { 2 };
        if self.tables < min_tables || self.tables > 16 {
            return Err(Error::Config(format!(
                "{:?} needs between {min_tables} and 16 tables, got {}",
                self.shape, self.tables
            )));
        }
        if self.rows == 0 {
            return Err(Error::Config("rows must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.correlation) || !(0.0..1.0).contains(&self.null_fraction) {
            return Err(Error::Config(
                "correlation or null_fraction out of range".into(),
            ));
        }
        if !(self.skew.is_finite() && self.skew >= 0.0) {
            return Err(Error::Config(format!("invalid skew {}", self.skew)));
        }
        Ok(())
    }

    /// Parents of each table; the first parent is the primary one.
    fn parents(&self) -> Vec<Vec<usize>> {
        (0..self.tables)
            .map(|t| match (self.shape, t) {
                (_, 0) => vec![],
                (Shape::Star, _) => vec![0],
                (Shape::Cycle, t) if t == self.tables - 1 => vec![t - 1, 0],
                (_, t) => vec![t - 1],
            })
            .collect()
    }

    pub fn schema_json(&self) -> serde_json::Value {
        let parents = self.parents();
        let key_max = (self.rows - 1) as f64;
        let mut tables = Vec::new();
        let mut joins = Vec::new();
        for (t, ps) in parents.iter().enumerate() {
            let mut columns =
                vec![json!({"name": "id", "kind": "continuous", "min": 0.0, "max": key_max})];
            for &p in ps {
                columns.push(json!({"name": format!("t{p}_id"), "kind": "continuous", "min": 0.0, "max": key_max}));
                joins.push(json!({"left": format!("t{p}.id"), "right": format!("t{t}.t{p}_id"), "kind": "PK-FK"}));
            }
            columns.push(json!({"name": "x", "kind": "continuous", "min": 0.0, "max": 100.0}));
            columns.push(json!({"name": "g", "kind": "categorical"}));
            tables.push(json!({"name": format!("t{t}"), "columns": columns}));
        }
        json!({"name": self.name, "tables": tables, "joins": joins})
    }
}

struct Generated {
    x: Vec<f64>,
    /// Row of t0 this row descends from through primary parents.
    root: Vec<u32>,
    /// Rows in popularity order; rank 0 is the most referenced.
    by_rank: Vec<u32>,
}

/// Cumulative Zipf weights over `n` ranks.
fn zipf_cdf(n: usize, s: f64) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = (0..n)
        .map(|r| {
            acc += 1.0 / ((r + 1) as f64).powf(s);
            acc
        })
        .collect();
    for c in &mut cdf {
        *c /= acc;
    }
    cdf
}

fn sample_cdf(cdf: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    cdf.partition_point(|&c| c < u).min(cdf.len() - 1)
}

fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

pub fn generate(cfg: &SynthConfig) -> Result<Catalog> {
    cfg.validate()?;
    let mut catalog = Catalog::from_schema_str(&cfg.schema_json().to_string())?;
    let parents = cfg.parents();
    let cdf = zipf_cdf(cfg.rows, cfg.skew);
    let group_cdf = zipf_cdf(GROUPS / BANDS, 0.5);
    let labels: Vec<String> = (0..GROUPS).map(|g| format!("g{g:02}")).collect();
    let rho = cfg.correlation;
    let mut done: Vec<Generated> = Vec::with_capacity(cfg.tables);

    for (t, ps) in parents.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(record_seed(cfg.seed, t as u64));
        let n = cfg.rows;
        let mut fks: Vec<Vec<Option<f64>>> = vec![Vec::with_capacity(n); ps.len()];
        let mut x = Vec::with_capacity(n);
        let mut g_ids = Vec::with_capacity(n);
        let mut root = Vec::with_capacity(n);
        // Slightly different base mixture per table so databases differ.
        let centre = rng.gen_range(20.0..80.0);
        for row in 0..n {
            let noise = if rng.gen_bool(0.6) {
                (centre + 15.0 * (rng.gen::<f64>() + rng.gen::<f64>() - 1.0)).clamp(0.0, 100.0)
            } else {
                rng.gen_range(0.0..100.0)
            };
            let xv = match ps.first() {
                None => {
                    root.push(row as u32);
                    noise
                }
                Some(&p) => {
                    let parent = &done[p];
                    let pr = parent.by_rank[sample_cdf(&cdf, &mut rng)] as usize;
                    fks[0].push(Some(pr as f64));
                    root.push(parent.root[pr]);
                    rho * parent.x[pr] + (1.0 - rho) * noise
                }
            };
            for (k, &p) in ps.iter().enumerate().skip(1) {
                let target = if p == 0 && rng.gen_bool(rho) {
                    *root.last().unwrap() as usize
                } else {
                    done[p].by_rank[sample_cdf(&cdf, &mut rng)] as usize
                };
                fks[k].push(Some(target as f64));
            }
            let xv = round1(xv.clamp(0.0, 100.0));
            x.push(xv);
            let band = ((xv / 100.0 * BANDS as f64) as usize).min(BANDS - 1);
            let band = if rng.gen_bool(rho) {
                band
            } else {
                rng.gen_range(0..BANDS)
            };
            let g = (band * (GROUPS / BANDS) + sample_cdf(&group_cdf, &mut rng)) as u32;
            g_ids.push(if rng.gen_bool(cfg.null_fraction) {
                None
            } else {
                Some(g)
            });
        }

        let table = format!("t{t}");
        let mut columns = vec![ColumnData {
            table: table.clone(),
            attribute: "id".into(),
            values: ColumnValues::Continuous((0..n).map(|i| Some(i as f64)).collect()),
        }];
        for (&p, values) in ps.iter().zip(fks) {
            columns.push(ColumnData {
                table: table.clone(),
                attribute: format!("t{p}_id"),
                values: ColumnValues::Continuous(values),
            });
        }
        columns.push(ColumnData {
            table: table.clone(),
            attribute: "x".into(),
            values: ColumnValues::Continuous(x.iter().map(|&v| Some(v)).collect()),
        });
        columns.push(ColumnData {
            table,
            attribute: "g".into(),
            values: ColumnValues::Categorical {
                ids: g_ids,
                dictionary: labels.clone(),
            },
        });
        catalog.set_table_data(t, columns)?;

        // Popularity leans towards small `x` without being a function of it.
        let key: Vec<f64> = x.iter().map(|&v| v / 100.0 + rng.gen::<f64>()).collect();
        let mut by_rank: Vec<u32> = (0..n as u32).collect();
        by_rank.sort_by(|&a, &b| key[a as usize].total_cmp(&key[b as usize]).then(a.cmp(&b)));
        done.push(Generated { x, root, by_rank });
    }
    Ok(catalog)
}

/// Write `schema.json` plus one CSV per table into `dir`.
pub fn write_dir(catalog: &Catalog, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let schema = dir.join("schema.json");
    let text = serde_json::to_string_pretty(&catalog.schema_json())?;
    fs::write(&schema, text).map_err(|e| Error::io(&schema, e))?;
    for (t, meta) in catalog.tables.iter().enumerate() {
        let path = dir.join(format!("{}.csv", meta.name));
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        catalog.write_table_csv(t, std::io::BufWriter::new(file))?;
    }
    Ok(())
}

//! Q-ERROR and P-ERROR: a join-order optimizer over connected sub-plans,
//! a simple hash-join cost model, and quantile reports.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::featurizer::baseline_estimate;
use crate::model::Model;
use crate::query::{connected_subsets, parse_query, sub_queries, QuerySpec};
use crate::stats::StatsStore;
use crate::workload::WorkloadRecord;

pub const PLAN_TABLE_CAP: usize = 12;

/// Cardinality per connected table subset, keyed by the sorted,
/// comma-joined table names.
pub type CardMap = BTreeMap<String, f64>;

/// Cheapest cost and split per connected subset.
type Best = HashMap<u64, (f64, Option<(u64, u64)>)>;

pub fn q_error(est: f64, truth: f64) -> Result<f64> {
    if !(est > 0.0 && truth > 0.0) {
        return Err(Error::Invalid(format!(
            "q-error needs positive cardinalities, got {est} and {truth}"
        )));
    }
    Ok((est / truth).max(truth / est))
}

/// Binary join tree over positions in [`JoinProblem::names`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Plan {
    Scan(usize),
    Join(Box<Plan>, Box<Plan>),
}

impl Plan {
    pub fn mask(&self) -> u64 {
        match self {
            Plan::Scan(i) => 1 << i,
            Plan::Join(l, r) => l.mask() | r.mask(),
        }
    }

    pub fn render(&self, names: &[String]) -> String {
        match self {
            Plan::Scan(i) => names[*i].clone(),
            Plan::Join(l, r) => format!("({} ⋈ {})", l.render(names), r.render(names)),
        }
    }
}

/// Tables of a query in name order and the join edges between them.
#[derive(Debug, Clone)]
pub struct JoinProblem {
    pub names: Vec<String>,
    pub edges: Vec<(usize, usize)>,
}

impl JoinProblem {
    pub fn new(mut names: Vec<String>, edges: &[(&str, &str)]) -> Result<Self> {
        names.sort();
        let pos = |n: &str| {
            names
                .iter()
                .position(|x| x == n)
                .ok_or_else(|| Error::UnknownTable(n.to_string()))
        };
        let edges = edges
            .iter()
            .map(|(a, b)| Ok((pos(a)?, pos(b)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(JoinProblem { names, edges })
    }

    pub fn from_query(q: &QuerySpec, catalog: &Catalog) -> Result<Self> {
        let names = q
            .tables
            .iter()
            .map(|&t| catalog.tables[t].name.clone())
            .collect();
        let edges: Vec<(&str, &str)> = q
            .joins
            .iter()
            .map(|&e| {
                let j = &catalog.joins[e];
                (
                    catalog.tables[j.left.table].name.as_str(),
                    catalog.tables[j.right.table].name.as_str(),
                )
            })
            .collect();
        JoinProblem::new(names, &edges)
    }

    pub fn key(&self, mask: u64) -> String {
        self.members(mask).join(",")
    }

    fn members(&self, mask: u64) -> Vec<&str> {
        (0..self.names.len())
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| self.names[i].as_str())
            .collect()
    }

    fn card(&self, cards: &CardMap, mask: u64) -> Result<f64> {
        let key = self.key(mask);
        cards
            .get(&key)
            .copied()
            .ok_or(Error::MissingCardinality(key))
    }

    fn is_connected(&self, mask: u64) -> bool {
        let start = mask & mask.wrapping_neg();
        let mut reach = start;
        loop {
            let mut grown = reach;
            for &(a, b) in &self.edges {
                let (ba, bb) = (1u64 << a, 1u64 << b);
                if mask & ba != 0 && mask & bb != 0 {
                    if reach & ba != 0 {
                        grown |= bb;
                    }
                    if reach & bb != 0 {
                        grown |= ba;
                    }
                }
            }
            if grown == reach {
                return reach == mask;
            }
            reach = grown;
        }
    }
}

/// Sum over leaves of their cardinality plus, per join, the cardinalities
/// of both inputs and the output.
pub fn plan_cost(plan: &Plan, problem: &JoinProblem, cards: &CardMap) -> Result<f64> {
    match plan {
        Plan::Scan(_) => problem.card(cards, plan.mask()),
        Plan::Join(l, r) => Ok(plan_cost(l, problem, cards)?
            + plan_cost(r, problem, cards)?
            + problem.card(cards, l.mask())?
            + problem.card(cards, r.mask())?
            + problem.card(cards, plan.mask())?),
    }
}

/// Minimum-cost bushy plan by dynamic programming over connected subsets.
/// Equal-cost alternatives keep the lexicographically smallest left input.
pub fn optimal_plan(problem: &JoinProblem, cards: &CardMap) -> Result<Plan> {
    let n = problem.names.len();
    if n > PLAN_TABLE_CAP {
        return Err(Error::CapExceeded {
            nodes: n,
            cap: PLAN_TABLE_CAP,
        });
    }
    if n == 0 {
        return Err(Error::Invalid("empty join problem".into()));
    }
    let mut subsets = connected_subsets(n, &problem.edges);
    subsets.sort_by_key(|m| (m.count_ones(), *m));
    let full = (1u64 << n) - 1;
    if subsets.last() != Some(&full) {
        return Err(Error::Disconnected(problem.names.join(",")));
    }
    // best (cost, split) per connected subset
    let mut best: Best = HashMap::new();
    for &s in &subsets {
        if s.count_ones() == 1 {
            best.insert(s, (problem.card(cards, s)?, None));
            continue;
        }
        let out = problem.card(cards, s)?;
        let mut choice: Option<(f64, u64, u64)> = None;
        // proper non-empty subsets of s
        let mut l = (s - 1) & s;
        while l != 0 {
            let r = s & !l;
            if let (Some(&(cl, _)), Some(&(cr, _))) = (best.get(&l), best.get(&r)) {
                let cost = cl + cr + problem.card(cards, l)? + problem.card(cards, r)? + out;
                let better = match &choice {
                    None => true,
                    Some((c, bl, _)) => {
                        cost < *c || (cost == *c && problem.members(l) < problem.members(*bl))
                    }
                };
                if better {
                    choice = Some((cost, l, r));
                }
            }
            l = (l - 1) & s;
        }
        let (cost, l, r) = choice.expect("a connected set splits into connected halves");
        best.insert(s, (cost, Some((l, r))));
    }
    fn rebuild(best: &Best, s: u64) -> Plan {
        match best[&s].1 {
            None => Plan::Scan(s.trailing_zeros() as usize),
            Some((l, r)) => Plan::Join(Box::new(rebuild(best, l)), Box::new(rebuild(best, r))),
        }
    }
    debug_assert!(subsets.iter().all(|&m| problem.is_connected(m)));
    Ok(rebuild(&best, full))
}

fn clamped(cards: &CardMap) -> CardMap {
    cards.iter().map(|(k, v)| (k.clone(), v.max(1.0))).collect()
}

/// Cost of the plan chosen under `est`, relative to the plan chosen under
/// `truth`, both costed with `truth`. Cardinalities are counted as at least 1.
pub fn p_error(problem: &JoinProblem, est: &CardMap, truth: &CardMap) -> Result<f64> {
    let (est, truth) = (clamped(est), clamped(truth));
    let pe = optimal_plan(problem, &est)?;
    let pt = optimal_plan(problem, &truth)?;
    Ok(plan_cost(&pe, problem, &truth)? / plan_cost(&pt, problem, &truth)?)
}

pub trait Estimator {
    fn estimate_card(&self, q: &QuerySpec) -> Result<f64>;
}

impl<F: Fn(&QuerySpec) -> Result<f64>> Estimator for F {
    fn estimate_card(&self, q: &QuerySpec) -> Result<f64> {
        self(q)
    }
}

pub struct ModelEstimator<'a> {
    pub model: &'a Model,
    pub catalog: &'a Catalog,
    pub stats: &'a StatsStore,
}

impl Estimator for ModelEstimator<'_> {
    fn estimate_card(&self, q: &QuerySpec) -> Result<f64> {
        Ok(self.model.estimate(q, self.catalog, self.stats)?.card)
    }
}

/// Independence-assumption histogram estimator.
pub struct BaselineEstimator<'a> {
    pub catalog: &'a Catalog,
    pub stats: &'a StatsStore,
}

impl Estimator for BaselineEstimator<'_> {
    fn estimate_card(&self, q: &QuerySpec) -> Result<f64> {
        baseline_estimate(q, self.catalog, self.stats)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub p50: f64,
    pub p80: f64,
    pub p90: f64,
    pub p95: f64,
    pub p99: f64,
}

/// Nearest-rank percentile: the value at rank ceil(p/100 * n) of the sorted
/// sample.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Option<Quantiles> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Quantiles {
            p50: nearest_rank(&v, 50.0),
            p80: nearest_rank(&v, 80.0),
            p90: nearest_rank(&v, 90.0),
            p95: nearest_rank(&v, 95.0),
            p99: nearest_rank(&v, 99.0),
        })
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.p50, self.p80, self.p90, self.p95, self.p99]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub sql: String,
    pub true_card: u64,
    pub est: f64,
    pub q_error: f64,
    pub p_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// `None` when no query was evaluated.
    pub q_error: Option<Quantiles>,
    pub p_error: Option<Quantiles>,
    pub n: usize,
    pub skipped: usize,
    pub wall_time_ms: f64,
    #[serde(skip)]
    pub rows: Vec<QueryResult>,
}

impl ErrorReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Report without the wall-clock field, for reproducibility checks.
    pub fn timing_free_json(&self) -> String {
        let mut r = self.clone();
        r.wall_time_ms = 0.0;
        r.to_json()
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let err = |e: csv::Error| Error::Invalid(format!("writing report csv: {e}"));
        w.write_record(["sql", "true", "est", "q_error", "p_error"])
            .map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.sql.clone(),
                r.true_card.to_string(),
                r.est.to_string(),
                r.q_error.to_string(),
                r.p_error.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush()
            .map_err(|e| Error::Invalid(format!("writing report csv: {e}")))
    }
}

fn evaluate_one(
    record: &WorkloadRecord,
    catalog: &Catalog,
    estimator: &dyn Estimator,
) -> Result<QueryResult> {
    let q = parse_query(&record.sql, catalog)?;
    let problem = JoinProblem::from_query(&q, catalog)?;
    let mut est = CardMap::new();
    for sub in sub_queries(&q, catalog) {
        let e = estimator.estimate_card(&sub)?;
        if !e.is_finite() {
            return Err(Error::Invalid(format!(
                "non-finite estimate for {}",
                sub.source_text
            )));
        }
        est.insert(sub.table_key(catalog), e.max(1.0));
    }
    let truth: CardMap = record
        .subs
        .iter()
        .map(|(k, &v)| (k.clone(), v as f64))
        .collect();
    let full = q.table_key(catalog);
    let e = est[&full];
    Ok(QueryResult {
        sql: record.sql.clone(),
        true_card: record.card,
        est: e,
        q_error: q_error(e, (record.card.max(1)) as f64)?,
        p_error: p_error(&problem, &est, &truth)?,
    })
}

/// Estimate every sub-query of every record and summarize both metrics.
/// Records whose estimation fails are skipped and counted.
pub fn evaluate(
    records: &[WorkloadRecord],
    catalog: &Catalog,
    estimator: &dyn Estimator,
) -> ErrorReport {
    let start = Instant::now();
    let mut rows = Vec::with_capacity(records.len());
    let mut skipped = 0;
    for r in records {
        match evaluate_one(r, catalog, estimator) {
            Ok(row) => rows.push(row),
            Err(e) => {
                log::warn!("skipping `{}`: {e}", r.sql);
                skipped += 1;
            }
        }
    }
    let qs: Vec<f64> = rows.iter().map(|r| r.q_error).collect();
    let ps: Vec<f64> = rows.iter().map(|r| r.p_error).collect();
    ErrorReport {
        q_error: Quantiles::of(&qs),
        p_error: Quantiles::of(&ps),
        n: rows.len(),
        skipped,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        rows,
    }
}

//! Rank metrics against positive and negative ground truth.
//!
//! Pos metrics score a list against `P`, Neg metrics against `N` (lower is
//! better), and Comb folds the two into one higher-is-better number:
//! `(pos + 100 - neg) / 2`. Everything is on a 0 to 100 scale.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classgen::{Query, UltraClass};
use crate::corpus::EntityId;
use crate::error::{Error, Result};
use crate::ranking::RankedListRecord;

pub const DEFAULT_KS: [usize; 4] = [10, 20, 50, 100];

/// Denominator of AP@K.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApNormalizer {
    /// `min(K, |G|)`: a perfect top-K list scores 100 even when `|G| > K`.
    #[default]
    MinKG,
    /// `|G|`.
    GroundTruth,
    /// Number of hits in the top K (0 hits scores 0).
    Hits,
}

impl std::str::FromStr for ApNormalizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min_k_g" => Ok(Self::MinKG),
            "ground_truth" => Ok(Self::GroundTruth),
            "hits" => Ok(Self::Hits),
            _ => Err(Error::invalid(format!(
                "unknown AP normalizer `{s}` (expected min_k_g, ground_truth or hits)"
            ))),
        }
    }
}

fn check_list(list: &[EntityId], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    let mut seen = HashSet::with_capacity(list.len());
    for id in list {
        if !seen.insert(id) {
            return Err(Error::invalid(format!("duplicate entity `{id}` in ranked list")));
        }
    }
    Ok(())
}

/// `100 * |top-K(L) ∩ G| / K`; a short list counts its missing tail as misses.
pub fn precision_at_k(list: &[EntityId], truth: &BTreeSet<EntityId>, k: usize) -> Result<f64> {
    check_list(list, k)?;
    let hits = list.iter().take(k).filter(|e| truth.contains(*e)).count();
    Ok(100.0 * hits as f64 / k as f64)
}

/// AP@K with the default `min(K, |G|)` normalizer.
pub fn ap_at_k(list: &[EntityId], truth: &BTreeSet<EntityId>, k: usize) -> Result<f64> {
    ap_at_k_with(list, truth, k, ApNormalizer::MinKG)
}

/// `100 * Σ_{i ≤ K} rel(i) · Prec@i / norm`.
pub fn ap_at_k_with(
    list: &[EntityId],
    truth: &BTreeSet<EntityId>,
    k: usize,
    normalizer: ApNormalizer,
) -> Result<f64> {
    check_list(list, k)?;
    if truth.is_empty() {
        return Err(Error::invalid("ground truth is empty"));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, e) in list.iter().take(k).enumerate() {
        if truth.contains(e) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    let norm = match normalizer {
        ApNormalizer::MinKG => k.min(truth.len()),
        ApNormalizer::GroundTruth => truth.len(),
        ApNormalizer::Hits => hits,
    };
    Ok(if norm == 0 { 0.0 } else { 100.0 * sum / norm as f64 })
}

/// Mean AP@K over queries.
pub fn map_at_k(
    runs: &[(Vec<EntityId>, BTreeSet<EntityId>)],
    k: usize,
    normalizer: ApNormalizer,
) -> Result<f64> {
    if runs.is_empty() {
        return Err(Error::invalid("no queries to average"));
    }
    let mut total = 0.0;
    for (list, truth) in runs {
        total += ap_at_k_with(list, truth, k, normalizer)?;
    }
    Ok(total / runs.len() as f64)
}

/// `(pos + 100 - neg) / 2`.
pub fn comb(pos: f64, neg: f64) -> Result<f64> {
    for (name, v) in [("pos", pos), ("neg", neg)] {
        if !(0.0..=100.0).contains(&v) {
            return Err(Error::invalid(format!("{name} metric {v} outside [0, 100]")));
        }
    }
    Ok((pos + 100.0 - neg) / 2.0)
}

/// One polarity's cells: MAP@K and P@K for each configured K, plus their
/// mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub map: Vec<f64>,
    pub p: Vec<f64>,
    pub avg: f64,
}

impl MetricRow {
    fn new(map: Vec<f64>, p: Vec<f64>) -> Self {
        let n = map.len() + p.len();
        let avg = if n == 0 {
            0.0
        } else {
            map.iter().chain(&p).sum::<f64>() / n as f64
        };
        Self { map, p, avg }
    }

    fn comb(pos: &Self, neg: &Self) -> Result<Self> {
        let pair = |a: &[f64], b: &[f64]| -> Result<Vec<f64>> {
            a.iter().zip(b).map(|(&x, &y)| comb(x, y)).collect()
        };
        Ok(Self::new(pair(&pos.map, &neg.map)?, pair(&pos.p, &neg.p)?))
    }

    fn mean(rows: &[&Self]) -> Self {
        let n = rows.len() as f64;
        let col = |f: fn(&Self) -> &Vec<f64>| -> Vec<f64> {
            (0..f(rows[0]).len())
                .map(|i| rows.iter().map(|r| f(r)[i]).sum::<f64>() / n)
                .collect()
        };
        Self::new(col(|r| &r.map), col(|r| &r.p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_index: usize,
    pub pos: MetricRow,
    pub neg: MetricRow,
    pub comb: MetricRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub ks: Vec<usize>,
    pub normalizer: ApNormalizer,
    pub queries_scored: usize,
    /// Queries whose positive or negative ground truth is empty once seeds
    /// are removed.
    pub skipped: Vec<usize>,
    pub pos: MetricRow,
    pub neg: MetricRow,
    pub comb: MetricRow,
    pub per_query: Vec<QueryMetrics>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub normalizer: ApNormalizer,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ks: DEFAULT_KS.to_vec(),
            normalizer: ApNormalizer::default(),
        }
    }
}

/// Queries of `dataset` in file order: class by class, then query by query.
/// Ranked-list files refer to queries by position in this sequence.
pub fn flatten_queries(dataset: &[UltraClass]) -> Vec<(&UltraClass, &Query)> {
    dataset
        .iter()
        .flat_map(|c| c.queries.iter().map(move |q| (c, q)))
        .collect()
}

fn score_query(
    list: &[EntityId],
    truth: &BTreeSet<EntityId>,
    config: &EvalConfig,
) -> Result<MetricRow> {
    let mut map = Vec::with_capacity(config.ks.len());
    let mut p = Vec::with_capacity(config.ks.len());
    for &k in &config.ks {
        map.push(ap_at_k_with(list, truth, k, config.normalizer)?);
        p.push(precision_at_k(list, truth, k)?);
    }
    Ok(MetricRow::new(map, p))
}

/// Scores one method's ranked lists. Seeds are removed from both the list
/// and the ground truth first.
pub fn evaluate(
    method: &str,
    results: &[RankedListRecord],
    dataset: &[UltraClass],
    config: &EvalConfig,
) -> Result<MetricReport> {
    if config.ks.is_empty() || config.ks.contains(&0) {
        return Err(Error::invalid("cutoffs must be a non-empty list of positive integers"));
    }
    let queries = flatten_queries(dataset);
    let mut seen = BTreeSet::new();
    for r in results {
        if r.query_index >= queries.len() {
            return Err(Error::invalid(format!(
                "result for query {} but the dataset has {} queries",
                r.query_index,
                queries.len()
            )));
        }
        if !seen.insert(r.query_index) {
            return Err(Error::invalid(format!("two results for query {}", r.query_index)));
        }
    }

    let scored: Vec<Option<QueryMetrics>> = results
        .par_iter()
        .map(|r| {
            let (class, query) = queries[r.query_index];
            let strip = |set: &BTreeSet<EntityId>| -> BTreeSet<EntityId> {
                set.iter().filter(|e| !query.is_seed(e)).cloned().collect()
            };
            let pos_truth = strip(&class.positives);
            let neg_truth = strip(&class.negatives);
            if pos_truth.is_empty() || neg_truth.is_empty() {
                return Ok(None);
            }
            let list: Vec<EntityId> = r.list.ids().filter(|e| !query.is_seed(e)).cloned().collect();
            let pos = score_query(&list, &pos_truth, config)?;
            let neg = score_query(&list, &neg_truth, config)?;
            let comb = MetricRow::comb(&pos, &neg)?;
            Ok(Some(QueryMetrics {
                query_index: r.query_index,
                pos,
                neg,
                comb,
            }))
        })
        .collect::<Result<_>>()?;

    let mut skipped = Vec::new();
    let mut per_query = Vec::new();
    for (r, m) in results.iter().zip(scored) {
        match m {
            Some(m) => per_query.push(m),
            None => {
                log::warn!("query {} has empty ground truth after removing seeds; skipped", r.query_index);
                skipped.push(r.query_index);
            }
        }
    }
    per_query.sort_by_key(|m| m.query_index);
    skipped.sort_unstable();
    if per_query.is_empty() {
        return Err(Error::invalid("no scorable queries"));
    }
    let pos = MetricRow::mean(&per_query.iter().map(|m| &m.pos).collect::<Vec<_>>());
    let neg = MetricRow::mean(&per_query.iter().map(|m| &m.neg).collect::<Vec<_>>());
    let comb = MetricRow::comb(&pos, &neg)?;
    Ok(MetricReport {
        method: method.to_string(),
        ks: config.ks.clone(),
        normalizer: config.normalizer,
        queries_scored: per_query.len(),
        skipped,
        pos,
        neg,
        comb,
        per_query,
    })
}

/// Plain-text table: one block per polarity, one row per method, MAP@K
/// columns, P@K columns, then Avg.
pub fn render_table(reports: &[MetricReport]) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    let method_w = reports
        .iter()
        .map(|r| r.method.len())
        .chain(["Method".len()])
        .max()
        .unwrap_or(6);
    let mut header = format!("{:<6}  {:<method_w$}", "Metric", "Method");
    for kind in ["MAP", "P"] {
        for k in &first.ks {
            let _ = write!(header, "  {:>7}", format!("{kind}@{k}"));
        }
    }
    let _ = write!(header, "  {:>7}", "Avg");
    let rule = "-".repeat(header.len());
    let mut out = format!("{header}\n{rule}\n");
    type RowOf = fn(&MetricReport) -> &MetricRow;
    let blocks: [(&str, RowOf); 3] = [("Pos", |r| &r.pos), ("Neg", |r| &r.neg), ("Comb", |r| &r.comb)];
    for (label, row_of) in blocks {
        for (i, r) in reports.iter().enumerate() {
            let row = row_of(r);
            let _ = write!(out, "{:<6}  {:<method_w$}", if i == 0 { label } else { "" }, r.method);
            for v in row.map.iter().chain(&row.p) {
                let _ = write!(out, "  {v:>7.2}");
            }
            let _ = writeln!(out, "  {:>7.2}", row.avg);
        }
        let _ = writeln!(out, "{rule}");
    }
    out
}

/// Groups records by framework, in framework order.
pub fn split_by_framework(
    records: &[RankedListRecord],
) -> BTreeMap<crate::ranking::Framework, Vec<RankedListRecord>> {
    let mut out: BTreeMap<_, Vec<_>> = BTreeMap::new();
    for r in records {
        out.entry(r.framework).or_default().push(r.clone());
    }
    out
}

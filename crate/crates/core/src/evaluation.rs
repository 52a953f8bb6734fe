//! Grounding and top-N metrics: HR@K, NDCG@K and the EFD/EPC novelty pair.
//!
//! Novelty is averaged per relevant hit in the top 10 without a rank
//! discount, and the mean is taken over users with at least one hit. With a
//! single held-out item per user, a hit contributes
//! `EFD = -log2(count / total)` and `EPC = max(0, 1 - count / users)`, where
//! counts come from the popularity table and zero counts are smoothed to 0.5.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::{Embedder, ItemIndex, RetrievalError};
use crate::strategies::RunRecord;

pub const DEFAULT_CUTOFFS: [usize; 3] = [5, 10, 20];
pub const NOVELTY_CUTOFF: usize = 10;
/// Catalog items retrieved per generated title.
pub const DEFAULT_GROUNDING_K: usize = 10;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("no run records to evaluate")]
    NoRecords,
    #[error("no test item for user {0}")]
    MissingTruth(String),
}

/// Catalog item ids in rank order after grounding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedList {
    pub user: String,
    pub items: Vec<String>,
    pub source: String,
}

/// Grounds the final recommendation titles of a completed record. `None`
/// when the run failed or produced no titles.
pub fn ground(record: &RunRecord, index: &ItemIndex, embedder: &dyn Embedder, k: usize, source: &str) -> Result<Option<RankedList>, EvalError> {
    if !record.is_completed() || record.final_items().is_empty() {
        return Ok(None);
    }
    let items = index.ground_titles(embedder, record.final_items(), k)?;
    if items.is_empty() {
        return Ok(None);
    }
    Ok(Some(RankedList { user: record.user.clone(), items, source: source.to_string() }))
}

/// 1-based rank of `target`.
pub fn rank_of<S: AsRef<str>>(ranked: &[S], target: &str) -> Option<usize> {
    ranked.iter().position(|i| i.as_ref() == target).map(|p| p + 1)
}

pub fn hr_at_k(rank: Option<usize>, k: usize) -> f64 {
    match rank {
        Some(r) if r <= k => 1.0,
        _ => 0.0,
    }
}

pub fn ndcg_at_k(rank: Option<usize>, k: usize) -> f64 {
    match rank {
        Some(r) if r <= k => 1.0 / ((r + 1) as f64).log2(),
        _ => 0.0,
    }
}

/// Per-item interaction counts and the number of users they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Popularity {
    counts: HashMap<String, u64>,
    total: u64,
    users: u64,
}

impl Popularity {
    pub fn new(counts: HashMap<String, u64>, users: u64) -> Self {
        let total = counts.values().sum();
        Self { counts, total, users }
    }

    pub fn count(&self, item: &str) -> u64 {
        self.counts.get(item).copied().unwrap_or(0)
    }

    fn smoothed(&self, item: &str) -> f64 {
        match self.count(item) {
            0 => 0.5,
            c => c as f64,
        }
    }

    /// `(EFD, EPC)` contribution of a hit on `item`.
    pub fn novelty(&self, item: &str) -> (f64, f64) {
        let c = self.smoothed(item);
        let total = (self.total as f64).max(c);
        let efd = -(c / total).log2();
        let epc = (1.0 - c / self.users.max(1) as f64).max(0.0);
        (efd, epc)
    }

    /// Novelty over the relevant hits in the top `cutoff`, or `None` with no
    /// hit.
    pub fn novelty_at<S: AsRef<str>>(&self, ranked: &[S], relevant: &str, cutoff: usize) -> Option<(f64, f64)> {
        let hits: Vec<(f64, f64)> = ranked.iter().take(cutoff).filter(|i| i.as_ref() == relevant).map(|i| self.novelty(i.as_ref())).collect();
        if hits.is_empty() {
            return None;
        }
        let n = hits.len() as f64;
        Some((hits.iter().map(|h| h.0).sum::<f64>() / n, hits.iter().map(|h| h.1).sum::<f64>() / n))
    }
}

/// One user's scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserScores {
    pub user: String,
    pub rank: Option<usize>,
    pub hr: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub novelty: Option<(f64, f64)>,
}

pub fn score_user(ranked: &RankedList, test_item: &str, cutoffs: &[usize], popularity: &Popularity) -> UserScores {
    let rank = rank_of(&ranked.items, test_item);
    UserScores {
        user: ranked.user.clone(),
        rank,
        hr: cutoffs.iter().map(|&k| hr_at_k(rank, k)).collect(),
        ndcg: cutoffs.iter().map(|&k| ndcg_at_k(rank, k)).collect(),
        novelty: popularity.novelty_at(&ranked.items, test_item, NOVELTY_CUTOFF),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub strategy: String,
    /// Run directories this report averages over.
    pub runs: usize,
    /// Users with a ranked list, summed over runs.
    pub users: usize,
    pub failed_runs: usize,
    /// Completed runs whose list grounded to nothing.
    pub excluded: usize,
    /// Evaluated users over expected users, when the expected count is known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
    pub hr: BTreeMap<String, f64>,
    pub ndcg: BTreeMap<String, f64>,
    pub efd_at_10: Option<f64>,
    pub epc_at_10: Option<f64>,
    pub novelty_users: usize,
    pub mean_latency: f64,
    pub mean_volume: f64,
    pub mean_llm_calls: f64,
}

/// Run-level accounting gathered alongside the scores.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTally {
    pub failed: usize,
    pub excluded: usize,
    pub expected_users: Option<usize>,
    pub latency: Vec<usize>,
    pub volume: Vec<usize>,
    pub llm_calls: Vec<u64>,
}

impl RunTally {
    pub fn add(&mut self, record: &RunRecord) {
        if record.is_completed() {
            self.latency.push(record.latency);
            self.volume.push(record.volume);
        } else {
            self.failed += 1;
        }
        self.llm_calls.push(record.llm_calls);
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Aggregates user scores. Users are reduced in id order, so the result
/// does not depend on the order they were scored in.
pub fn summarize(strategy: &str, scores: &[UserScores], cutoffs: &[usize], tally: &RunTally) -> MetricsReport {
    let mut sorted: Vec<&UserScores> = scores.iter().collect();
    sorted.sort_by(|a, b| a.user.cmp(&b.user));
    let per_k = |pick: fn(&UserScores) -> &Vec<f64>| -> BTreeMap<String, f64> {
        cutoffs
            .iter()
            .enumerate()
            .map(|(i, k)| (format!("@{k}"), mean(sorted.iter().map(|s| pick(s)[i])).unwrap_or(0.0)))
            .collect()
    };
    let novelty: Vec<(f64, f64)> = sorted.iter().filter_map(|s| s.novelty).collect();
    MetricsReport {
        strategy: strategy.to_string(),
        runs: 1,
        users: sorted.len(),
        failed_runs: tally.failed,
        excluded: tally.excluded,
        coverage: tally.expected_users.filter(|&e| e > 0).map(|e| sorted.len() as f64 / e as f64),
        hr: per_k(|s| &s.hr),
        ndcg: per_k(|s| &s.ndcg),
        efd_at_10: mean(novelty.iter().map(|n| n.0)),
        epc_at_10: mean(novelty.iter().map(|n| n.1)),
        novelty_users: novelty.len(),
        mean_latency: mean(tally.latency.iter().map(|&v| v as f64)).unwrap_or(0.0),
        mean_volume: mean(tally.volume.iter().map(|&v| v as f64)).unwrap_or(0.0),
        mean_llm_calls: mean(tally.llm_calls.iter().map(|&v| v as f64)).unwrap_or(0.0),
    }
}

/// Unweighted mean of per-run reports; counts are summed.
pub fn average(reports: &[MetricsReport]) -> Result<MetricsReport, EvalError> {
    let first = reports.first().ok_or(EvalError::NoRecords)?;
    if reports.len() == 1 {
        return Ok(first.clone());
    }
    let avg_map = |pick: fn(&MetricsReport) -> &BTreeMap<String, f64>| -> BTreeMap<String, f64> {
        pick(first).keys().map(|k| (k.clone(), mean(reports.iter().filter_map(|r| pick(r).get(k).copied())).unwrap_or(0.0))).collect()
    };
    Ok(MetricsReport {
        strategy: first.strategy.clone(),
        runs: reports.iter().map(|r| r.runs).sum(),
        users: reports.iter().map(|r| r.users).sum(),
        failed_runs: reports.iter().map(|r| r.failed_runs).sum(),
        excluded: reports.iter().map(|r| r.excluded).sum(),
        coverage: mean(reports.iter().filter_map(|r| r.coverage)),
        hr: avg_map(|r| &r.hr),
        ndcg: avg_map(|r| &r.ndcg),
        efd_at_10: mean(reports.iter().filter_map(|r| r.efd_at_10)),
        epc_at_10: mean(reports.iter().filter_map(|r| r.epc_at_10)),
        novelty_users: reports.iter().map(|r| r.novelty_users).sum(),
        mean_latency: mean(reports.iter().map(|r| r.mean_latency)).unwrap_or(0.0),
        mean_volume: mean(reports.iter().map(|r| r.mean_volume)).unwrap_or(0.0),
        mean_llm_calls: mean(reports.iter().map(|r| r.mean_llm_calls)).unwrap_or(0.0),
    })
}

/// Fixed-width table: one header row, one row per report.
pub fn table(reports: &[MetricsReport]) -> String {
    let keys: Vec<String> = reports.first().map(|r| r.hr.keys().cloned().collect()).unwrap_or_default();
    let mut keys_sorted = keys.clone();
    keys_sorted.sort_by_key(|k| k.trim_start_matches('@').parse::<usize>().unwrap_or(usize::MAX));
    let mut out = format!("{:<12}", "strategy");
    for k in &keys_sorted {
        let _ = write!(out, " {:>8}", format!("HR{k}"));
    }
    for k in &keys_sorted {
        let _ = write!(out, " {:>8}", format!("NDCG{k}"));
    }
    out.push('\n');
    for r in reports {
        let _ = write!(out, "{:<12}", r.strategy);
        for k in &keys_sorted {
            let _ = write!(out, " {:>8.4}", r.hr.get(k).copied().unwrap_or(0.0));
        }
        for k in &keys_sorted {
            let _ = write!(out, " {:>8.4}", r.ndcg.get(k).copied().unwrap_or(0.0));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopularityRow {
    pub item: String,
    pub train_count: u64,
    pub rec_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopularityReport {
    /// Sorted by descending training count, then item id.
    pub rows: Vec<PopularityRow>,
    /// Share of recommendation slots that went to tail items.
    pub tail_coverage: f64,
    pub head_items: usize,
}

/// How often each item was recommended against how often it was trained
/// on. The head is the most-trained `head_fraction` of items (rounded up);
/// everything else, including items never trained on, is tail.
pub fn popularity_report(lists: &[RankedList], train_counts: &HashMap<String, u64>, head_fraction: f64) -> PopularityReport {
    let mut rec: HashMap<&str, u64> = HashMap::new();
    for l in lists {
        for i in &l.items {
            *rec.entry(i.as_str()).or_default() += 1;
        }
    }
    let mut items: Vec<&str> = train_counts.keys().map(String::as_str).chain(rec.keys().copied()).collect();
    items.sort_unstable();
    items.dedup();
    let mut rows: Vec<PopularityRow> = items
        .into_iter()
        .map(|i| PopularityRow {
            item: i.to_string(),
            train_count: train_counts.get(i).copied().unwrap_or(0),
            rec_count: rec.get(i).copied().unwrap_or(0),
        })
        .collect();
    rows.sort_by(|a, b| b.train_count.cmp(&a.train_count).then_with(|| a.item.cmp(&b.item)));
    let trained = rows.iter().filter(|r| r.train_count > 0).count();
    let head_items = ((trained as f64) * head_fraction.clamp(0.0, 1.0)).ceil() as usize;
    let slots: u64 = rows.iter().map(|r| r.rec_count).sum();
    let tail: u64 = rows.iter().skip(head_items).map(|r| r.rec_count).sum();
    PopularityReport { tail_coverage: if slots == 0 { 0.0 } else { tail as f64 / slots as f64 }, rows, head_items }
}

impl PopularityReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("item\ttrain_count\trec_count\n");
        for r in &self.rows {
            let _ = writeln!(out, "{}\t{}\t{}", r.item, r.train_count, r.rec_count);
        }
        out
    }
}

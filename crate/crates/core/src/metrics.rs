//! Raw and filtered ranking metrics for relation prediction.
//!
//! The rank of a query is the position of its ground-truth relation when all
//! relation scores are sorted in descending order. The filtered rank ignores
//! the other relations known to hold for the same ordered pair, so a model
//! is not penalized for scoring an alternative true fact above the query.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg_data::{DatasetSplit, KnowledgeGraphDataset, PairRelationIndex, RelationId, Triple};
use crate::model::{ClassifierState, Logits};
use crate::tokenizer::Vocabulary;
use crate::trainer::encode_triples;

pub const DEFAULT_HITS: [usize; 2] = [1, 5];

/// Queries scored per forward call during evaluation.
const EVAL_CHUNK: usize = 1024;

/// How scores equal to the ground truth's are counted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    /// Ties rank below the ground truth.
    #[default]
    Optimistic,
    /// Ties rank above the ground truth.
    Pessimistic,
    /// Half of the ties (rounded down) rank above the ground truth.
    Mean,
}

impl TiePolicy {
    fn rank(self, greater: usize, ties: usize) -> usize {
        1 + greater
            + match self {
                TiePolicy::Optimistic => 0,
                TiePolicy::Pessimistic => ties,
                TiePolicy::Mean => ties / 2,
            }
    }
}

/// Counts candidates scoring above and equal to the ground truth, skipping `skip`.
fn count_above(scores: &[f64], gt: RelationId, skip: &[RelationId]) -> (usize, usize) {
    let target = scores[gt.index()];
    let mut greater = 0;
    let mut ties = 0;
    for (r, &s) in scores.iter().enumerate() {
        let rel = RelationId(r as u32);
        if rel == gt || skip.contains(&rel) {
            continue;
        }
        if s > target {
            greater += 1;
        } else if s == target {
            ties += 1;
        }
    }
    (greater, ties)
}

/// `1 + |{r ≠ gt : score_r > score_gt}|`.
pub fn rank_of(logits: &Logits, gt: RelationId) -> usize {
    rank_with_policy(logits, gt, TiePolicy::Optimistic)
}

pub fn rank_with_policy(logits: &Logits, gt: RelationId, policy: TiePolicy) -> usize {
    let (greater, ties) = count_above(logits.as_slice(), gt, &[]);
    policy.rank(greater, ties)
}

/// Raw rank minus the other valid relations ranked above the ground truth.
pub fn filtered_rank(logits: &Logits, gt: RelationId, valid: &[RelationId]) -> Result<usize> {
    filtered_rank_with_policy(logits, gt, valid, TiePolicy::Optimistic)
}

pub fn filtered_rank_with_policy(
    logits: &Logits,
    gt: RelationId,
    valid: &[RelationId],
    policy: TiePolicy,
) -> Result<usize> {
    if !valid.contains(&gt) {
        return Err(Error::Consistency(format!(
            "ground-truth relation {} is not among the valid relations",
            gt.0
        )));
    }
    let (greater, ties) = count_above(logits.as_slice(), gt, valid);
    Ok(policy.rank(greater, ties))
}

fn non_empty(ranks: &[usize]) -> Result<()> {
    if ranks.is_empty() {
        return Err(Error::Metric("empty rank list".into()));
    }
    if ranks.contains(&0) {
        return Err(Error::Metric("ranks start at 1".into()));
    }
    Ok(())
}

pub fn mean_rank(ranks: &[usize]) -> Result<f64> {
    non_empty(ranks)?;
    Ok(ranks.iter().map(|&r| r as f64).sum::<f64>() / ranks.len() as f64)
}

pub fn mrr(ranks: &[usize]) -> Result<f64> {
    non_empty(ranks)?;
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

pub fn hits_at_n(ranks: &[usize], n: usize) -> Result<f64> {
    non_empty(ranks)?;
    if n == 0 {
        return Err(Error::Metric("Hits@N needs N ≥ 1".into()));
    }
    Ok(ranks.iter().filter(|&&r| r <= n).count() as f64 / ranks.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankRecord {
    pub query_index: usize,
    pub query: Triple,
    pub raw_rank: usize,
    pub filtered_rank: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HitsAt {
    pub n: usize,
    pub raw: f64,
    pub filtered: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub query_count: usize,
    pub mean_rank: f64,
    pub filtered_mean_rank: f64,
    pub mrr: f64,
    pub filtered_mrr: f64,
    /// Sorted by `n`.
    pub hits: Vec<HitsAt>,
}

impl MetricsReport {
    pub fn from_records(records: &[RankRecord], ns: &[usize]) -> Result<Self> {
        let raw: Vec<usize> = records.iter().map(|r| r.raw_rank).collect();
        let filtered: Vec<usize> = records.iter().map(|r| r.filtered_rank).collect();
        let mut ns = ns.to_vec();
        ns.sort_unstable();
        ns.dedup();
        let hits = ns
            .iter()
            .map(|&n| {
                Ok(HitsAt {
                    n,
                    raw: hits_at_n(&raw, n)?,
                    filtered: hits_at_n(&filtered, n)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            query_count: records.len(),
            mean_rank: mean_rank(&raw)?,
            filtered_mean_rank: mean_rank(&filtered)?,
            mrr: mrr(&raw)?,
            filtered_mrr: mrr(&filtered)?,
            hits,
        })
    }

    pub fn hits(&self, n: usize) -> Option<HitsAt> {
        self.hits.iter().copied().find(|h| h.n == n)
    }

    /// Flat JSON object: `mean_rank`, `filtered_mean_rank`, `mrr`,
    /// `filtered_mrr`, then `hits{N}` / `filtered_hits{N}` per level.
    pub fn to_json(&self) -> String {
        let mut map = serde_json::Map::new();
        map.insert("mean_rank".into(), self.mean_rank.into());
        map.insert("filtered_mean_rank".into(), self.filtered_mean_rank.into());
        map.insert("mrr".into(), self.mrr.into());
        map.insert("filtered_mrr".into(), self.filtered_mrr.into());
        for h in &self.hits {
            map.insert(format!("hits{}", h.n), h.raw.into());
            map.insert(format!("filtered_hits{}", h.n), h.filtered.into());
        }
        serde_json::to_string_pretty(&serde_json::Value::Object(map)).expect("finite metrics")
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<32}{:>10}", "Metric", "Value")?;
        let mut row = |name: String, v: f64| writeln!(f, "{name:<32}{v:>10.4}");
        row("Mean Rank".into(), self.mean_rank)?;
        row("Filtered Mean Rank".into(), self.filtered_mean_rank)?;
        row("Mean Reciprocal Rank".into(), self.mrr)?;
        row("Filtered Mean Reciprocal Rank".into(), self.filtered_mrr)?;
        for h in &self.hits {
            row(format!("Hits@{}", h.n), h.raw)?;
            row(format!("Filtered Hits@{}", h.n), h.filtered)?;
        }
        write!(f, "{:<32}{:>10}", "Queries", self.query_count)
    }
}

/// Ranks each query's ground truth in its logits, raw and filtered by `index`.
pub fn rank_queries(
    queries: &[Triple],
    logits: &[Logits],
    index: &PairRelationIndex,
    policy: TiePolicy,
) -> Result<Vec<RankRecord>> {
    if queries.len() != logits.len() {
        return Err(Error::Input(format!(
            "{} queries but {} logit vectors",
            queries.len(),
            logits.len()
        )));
    }
    queries
        .iter()
        .zip(logits)
        .enumerate()
        .map(|(i, (q, l))| {
            if q.relation.index() >= l.len() {
                return Err(Error::Input(format!(
                    "relation {} out of range for {} logits",
                    q.relation.0,
                    l.len()
                )));
            }
            if l.as_slice().iter().any(|x| !x.is_finite()) {
                return Err(Error::Metric(format!("query {i} has non-finite logits")));
            }
            let valid = index.valid_relations(q.head, q.tail);
            Ok(RankRecord {
                query_index: i,
                query: *q,
                raw_rank: rank_with_policy(l, q.relation, policy),
                filtered_rank: filtered_rank_with_policy(l, q.relation, valid, policy)?,
            })
        })
        .collect()
}

/// Scores every triple of `split` and aggregates raw and filtered metrics.
///
/// `index` should cover training, validation, and testing triples.
pub fn evaluate(
    state: &ClassifierState,
    dataset: &KnowledgeGraphDataset,
    split: &DatasetSplit,
    index: &PairRelationIndex,
    vocab: &Vocabulary,
    pad_len: usize,
    ns: &[usize],
) -> Result<(MetricsReport, Vec<RankRecord>)> {
    evaluate_with_policy(state, dataset, split, index, vocab, pad_len, ns, TiePolicy::Optimistic)
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate_with_policy(
    state: &ClassifierState,
    dataset: &KnowledgeGraphDataset,
    split: &DatasetSplit,
    index: &PairRelationIndex,
    vocab: &Vocabulary,
    pad_len: usize,
    ns: &[usize],
    policy: TiePolicy,
) -> Result<(MetricsReport, Vec<RankRecord>)> {
    if split.is_empty() {
        return Err(Error::Validation(format!("{} split is empty", split.role)));
    }
    let mut logits = Vec::with_capacity(split.len());
    for chunk in split.triples.chunks(EVAL_CHUNK) {
        let seqs = encode_triples(dataset, chunk, vocab, pad_len)?;
        logits.extend(state.forward(&seqs)?);
    }
    let records = rank_queries(&split.triples, &logits, index, policy)?;
    let report = MetricsReport::from_records(&records, ns)?;
    Ok((report, records))
}

/// Writes `query_index,head_name,relation_name,tail_name,raw_rank,filtered_rank`.
pub fn write_rank_csv(path: &Path, records: &[RankRecord], dataset: &KnowledgeGraphDataset) -> Result<()> {
    let io = |e: csv::Error| Error::io(format!("writing {}", path.display()), e.into());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["query_index", "head_name", "relation_name", "tail_name", "raw_rank", "filtered_rank"])
        .map_err(io)?;
    for r in records {
        w.write_record([
            r.query_index.to_string().as_str(),
            dataset.entity_name(r.query.head),
            dataset.relation_key(r.query.relation),
            dataset.entity_name(r.query.tail),
            r.raw_rank.to_string().as_str(),
            r.filtered_rank.to_string().as_str(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

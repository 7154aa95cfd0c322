//! Worst-ranked test predictions, joined with names and how often the
//! relation occurs in training.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg_data::{KnowledgeGraphDataset, RelationId};
use crate::metrics::RankRecord;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankKind {
    #[default]
    Filtered,
    Raw,
}

impl RankKind {
    fn of(self, r: &RankRecord) -> usize {
        match self {
            RankKind::Filtered => r.filtered_rank,
            RankKind::Raw => r.raw_rank,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRow {
    pub id: usize,
    pub rank: usize,
    pub head_name: String,
    pub relation_name: String,
    pub tail_name: String,
    pub relation_train_count: usize,
}

pub fn relation_train_counts(dataset: &KnowledgeGraphDataset) -> HashMap<RelationId, usize> {
    let mut counts = HashMap::new();
    for t in &dataset.train.triples {
        *counts.entry(t.relation).or_insert(0) += 1;
    }
    counts
}

/// The `k` highest-ranked (worst) records, ties kept in query order.
pub fn worst_predictions(
    records: &[RankRecord],
    dataset: &KnowledgeGraphDataset,
    k: usize,
    by: RankKind,
) -> Result<Vec<FailureRow>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if records.is_empty() {
        return Err(Error::Validation("no rank records to analyse".into()));
    }
    let counts = relation_train_counts(dataset);
    let mut order: Vec<&RankRecord> = records.iter().collect();
    order.sort_by_key(|r| std::cmp::Reverse(by.of(r)));
    Ok(order
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, r)| FailureRow {
            id: i + 1,
            rank: by.of(r),
            head_name: dataset.entity_name(r.query.head).to_owned(),
            relation_name: dataset.relation_key(r.query.relation).to_owned(),
            tail_name: dataset.entity_name(r.query.tail).to_owned(),
            relation_train_count: counts.get(&r.query.relation).copied().unwrap_or(0),
        })
        .collect())
}

/// Aligned text table: ID, Rank, Head Node, Relation, Tail Node, Train Count.
pub struct FailureTable<'a>(pub &'a [FailureRow]);

impl fmt::Display for FailureTable<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows = self.0;
        let width = |title: &str, get: &dyn Fn(&FailureRow) -> usize| {
            rows.iter().map(get).max().unwrap_or(0).max(title.chars().count())
        };
        let wh = width("Head Node", &|r| r.head_name.chars().count());
        let wr = width("Relation", &|r| r.relation_name.chars().count());
        let wt = width("Tail Node", &|r| r.tail_name.chars().count());
        writeln!(
            f,
            "{:<4} {:>6}  {:<wh$}  {:<wr$}  {:<wt$}  {:>11}",
            "ID", "Rank", "Head Node", "Relation", "Tail Node", "Train Count"
        )?;
        for r in rows {
            writeln!(
                f,
                "{:<4} {:>6}  {:<wh$}  {:<wr$}  {:<wt$}  {:>11}",
                r.id, r.rank, r.head_name, r.relation_name, r.tail_name, r.relation_train_count
            )?;
        }
        Ok(())
    }
}

pub fn write_failure_csv(path: &Path, rows: &[FailureRow]) -> Result<()> {
    let io = |e: csv::Error| Error::io(format!("writing {}", path.display()), e.into());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

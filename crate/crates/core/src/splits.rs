//! Entity-inductive evaluation splits.
//!
//! A random fraction of the test triples is kept, and every training or
//! validation triple that mentions one of their entities is removed. Training
//! triples touching a surviving validation entity are removed as well, so test
//! entities are unseen in training and validation, and validation entities are
//! unseen in training.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg_data::{
    write_file, DatasetSplit, EntityId, KnowledgeGraphDataset, PairRelationIndex, RelationId,
    SplitRole,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub removed_train: usize,
    pub removed_valid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub fraction: f64,
    pub seed: u64,
    pub counts: SplitCounts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InductiveSplit {
    pub train: DatasetSplit,
    pub valid: DatasetSplit,
    pub test: DatasetSplit,
    pub provenance: Provenance,
    /// Relations of the sampled test triples that no longer occur in training.
    pub unseen_test_relations: Vec<RelationId>,
}

pub fn make_inductive(dataset: &KnowledgeGraphDataset, fraction: f64, seed: u64) -> Result<InductiveSplit> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction {fraction} is outside (0, 1]")));
    }
    if dataset.test.is_empty() {
        return Err(Error::Validation("test split is empty".into()));
    }
    let amount = (fraction * dataset.test.len() as f64).floor() as usize;
    if amount == 0 {
        return Err(Error::Config(format!(
            "fraction {fraction} of {} test triples samples nothing",
            dataset.test.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, dataset.test.len(), amount).into_vec();
    picked.sort_unstable();
    let test = DatasetSplit::from_triples(
        SplitRole::Testing,
        picked.iter().map(|&i| dataset.test.triples[i]),
    );

    let held_out = test.entities();
    let valid = DatasetSplit::from_triples(
        SplitRole::Validation,
        dataset.valid.triples.iter().copied().filter(|t| !t.touches(&held_out)),
    );
    let valid_entities = valid.entities();
    let train = DatasetSplit::from_triples(
        SplitRole::Training,
        dataset
            .train
            .triples
            .iter()
            .copied()
            .filter(|t| !t.touches(&held_out) && !t.touches(&valid_entities)),
    );
    if train.is_empty() || valid.is_empty() {
        return Err(Error::DegenerateSplit {
            train: train.len(),
            valid: valid.len(),
        });
    }

    let train_relations: HashSet<RelationId> = train.triples.iter().map(|t| t.relation).collect();
    let unseen_test_relations: Vec<RelationId> = test
        .triples
        .iter()
        .map(|t| t.relation)
        .filter(|r| !train_relations.contains(r))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let counts = SplitCounts {
        train: train.len(),
        valid: valid.len(),
        test: test.len(),
        removed_train: dataset.train.len() - train.len(),
        removed_valid: dataset.valid.len() - valid.len(),
    };
    Ok(InductiveSplit {
        train,
        valid,
        test,
        provenance: Provenance {
            source: String::new(),
            fraction,
            seed,
            counts,
        },
        unseen_test_relations,
    })
}

impl InductiveSplit {
    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.provenance.source = source.into();
        self
    }

    /// The split as a dataset sharing `base`'s vocabularies and names, with a
    /// filter index over the three new splits.
    pub fn to_dataset(&self, base: &KnowledgeGraphDataset) -> KnowledgeGraphDataset {
        KnowledgeGraphDataset {
            vocab: base.vocab.clone(),
            names: base.names.clone(),
            train: self.train.clone(),
            valid: self.valid.clone(),
            test: self.test.clone(),
            index: PairRelationIndex::build([&self.train, &self.valid, &self.test]),
        }
    }

    /// Writes `train.tsv`, `valid.tsv`, `test.tsv`, and `provenance.json` into `dir`.
    pub fn write(&self, dir: &Path, base: &KnowledgeGraphDataset) -> Result<()> {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        base.write_split(&self.train, &dir.join("train.tsv"))?;
        base.write_split(&self.valid, &dir.join("valid.tsv"))?;
        base.write_split(&self.test, &dir.join("test.tsv"))?;
        let json = serde_json::to_string_pretty(&self.provenance)?;
        write_file(&dir.join("provenance.json"), json.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationReport {
    /// Test entities that also occur in training or validation.
    pub test_overlap: Vec<EntityId>,
    /// Validation entities that also occur in training.
    pub valid_train_overlap: Vec<EntityId>,
}

impl VerificationReport {
    pub fn test_disjoint(&self) -> bool {
        self.test_overlap.is_empty()
    }

    pub fn valid_disjoint(&self) -> bool {
        self.valid_train_overlap.is_empty()
    }

    pub fn passed(&self) -> bool {
        self.test_disjoint() && self.valid_disjoint()
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = |ok: bool| if ok { "pass" } else { "FAIL" };
        writeln!(
            f,
            "test ∩ (train ∪ valid) = ∅: {} ({} offending entities)",
            verdict(self.test_disjoint()),
            self.test_overlap.len()
        )?;
        write!(
            f,
            "valid ∩ train = ∅:         {} ({} offending entities)",
            verdict(self.valid_disjoint()),
            self.valid_train_overlap.len()
        )
    }
}

/// Recomputes both entity-disjointness conditions from the triples.
pub fn verify_splits(train: &DatasetSplit, valid: &DatasetSplit, test: &DatasetSplit) -> VerificationReport {
    let train_e = train.entities();
    let valid_e = valid.entities();
    let test_overlap: BTreeSet<EntityId> = test
        .entities()
        .into_iter()
        .filter(|e| train_e.contains(e) || valid_e.contains(e))
        .collect();
    let valid_train_overlap: BTreeSet<EntityId> =
        valid_e.into_iter().filter(|e| train_e.contains(e)).collect();
    VerificationReport {
        test_overlap: test_overlap.into_iter().collect(),
        valid_train_overlap: valid_train_overlap.into_iter().collect(),
    }
}

pub fn verify_inductive(split: &InductiveSplit) -> VerificationReport {
    verify_splits(&split.train, &split.valid, &split.test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg_data::{NameNormalization, Triple};

    fn names(keys: &[&'static str]) -> Vec<(&'static str, &'static str)> {
        keys.iter().map(|k| (*k, *k)).collect()
    }

    fn transductive() -> KnowledgeGraphDataset {
        KnowledgeGraphDataset::from_records(
            &[("A", "r", "B"), ("B", "r", "C"), ("C", "s", "D"), ("D", "s", "E"), ("E", "r", "F"), ("X", "r", "Y")],
            &[("A", "s", "C"), ("F", "r", "X")],
            &[("B", "s", "D"), ("E", "r", "A")],
            &names(&["A", "B", "C", "D", "E", "F", "X", "Y"]),
            NameNormalization::Verbatim,
        )
        .unwrap()
    }

    #[test]
    fn original_dataset_fails_verification() {
        let ds = transductive();
        let report = verify_splits(&ds.train, &ds.valid, &ds.test);
        assert!(!report.test_disjoint());
        assert!(!report.test_overlap.is_empty());
    }

    #[test]
    fn disjoint_test_leaves_train_and_valid_alone() {
        let ds = KnowledgeGraphDataset::from_records(
            &[("A", "r", "B"), ("B", "r", "A")],
            &[("C", "r", "D")],
            &[("E", "r", "F")],
            &names(&["A", "B", "C", "D", "E", "F"]),
            NameNormalization::Verbatim,
        )
        .unwrap();
        let split = make_inductive(&ds, 1.0, 0).unwrap();
        assert_eq!(split.train, ds.train);
        assert_eq!(split.valid, ds.valid);
        assert!(verify_inductive(&split).passed());
    }

    #[test]
    fn full_fraction_can_be_degenerate() {
        let ds = KnowledgeGraphDataset::from_records(
            &[("A", "r", "B")],
            &[("C", "r", "D")],
            &[("A", "r", "B")],
            &names(&["A", "B", "C", "D"]),
            NameNormalization::Verbatim,
        )
        .unwrap();
        assert!(matches!(
            make_inductive(&ds, 1.0, 0),
            Err(Error::DegenerateSplit { train: 0, valid: 1 })
        ));
    }

    #[test]
    fn fraction_bounds() {
        let ds = transductive();
        assert!(matches!(make_inductive(&ds, 0.0, 0), Err(Error::Config(_))));
        assert!(matches!(make_inductive(&ds, 1.5, 0), Err(Error::Config(_))));
        assert!(matches!(make_inductive(&ds, 0.1, 0), Err(Error::Config(_))));
    }

    #[test]
    fn injected_overlap_is_reported_exactly() {
        let ds = KnowledgeGraphDataset::from_records(
            &[("A", "r", "B"), ("B", "r", "A")],
            &[("C", "r", "D")],
            &[("E", "r", "F")],
            &names(&["A", "B", "C", "D", "E", "F"]),
            NameNormalization::Verbatim,
        )
        .unwrap();
        let mut split = make_inductive(&ds, 1.0, 0).unwrap();
        let c = EntityId(ds.vocab.entities.get("C").unwrap());
        let a = EntityId(ds.vocab.entities.get("A").unwrap());
        split.train.triples.push(Triple::new(a, RelationId(0), c));
        let report = verify_inductive(&split);
        assert!(report.test_disjoint());
        assert_eq!(report.valid_train_overlap, [c]);
    }

    #[test]
    fn provenance_round_trips_through_files() {
        let ds = KnowledgeGraphDataset::from_records(
            &[("A", "r", "B"), ("B", "s", "A")],
            &[("C", "r", "D")],
            &[("E", "t", "F")],
            &names(&["A", "B", "C", "D", "E", "F"]),
            NameNormalization::Verbatim,
        )
        .unwrap();
        let split = make_inductive(&ds, 1.0, 4).unwrap().with_source("toy");
        assert_eq!(split.unseen_test_relations, [RelationId(2)]);
        let dir = tempfile::tempdir().unwrap();
        split.write(dir.path(), &ds).unwrap();
        let prov: Provenance =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("provenance.json")).unwrap()).unwrap();
        assert_eq!(prov, split.provenance);
        assert_eq!(std::fs::read_to_string(dir.path().join("test.tsv")).unwrap(), "E\tt\tF\n");
    }
}

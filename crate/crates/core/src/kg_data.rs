//! Triple-file ingestion, vocabularies, and the pair → relations index.
//!
//! Triple files hold one `head<TAB>relation<TAB>tail` fact per line; a separate
//! names file maps each entity key to its surface name. IDs are dense and
//! assigned in first-appearance order over training, validation, then testing,
//! followed by any name-table keys not seen in a split.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// An ordered fact. `(h, r, t)` and `(t, r, h)` are different triples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }

    pub fn pair(&self) -> (EntityId, EntityId) {
        (self.head, self.tail)
    }

    pub fn touches(&self, entities: &HashSet<EntityId>) -> bool {
        entities.contains(&self.head) || entities.contains(&self.tail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRole {
    Training,
    Validation,
    Testing,
}

impl fmt::Display for SplitRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitRole::Training => "train",
            SplitRole::Validation => "valid",
            SplitRole::Testing => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub role: SplitRole,
    pub triples: Vec<Triple>,
    /// Within-split duplicates dropped while loading.
    pub dropped_duplicates: usize,
}

impl DatasetSplit {
    pub fn new(role: SplitRole) -> Self {
        Self {
            role,
            triples: Vec::new(),
            dropped_duplicates: 0,
        }
    }

    /// Builds a split from triples, dropping repeats after their first occurrence.
    pub fn from_triples(role: SplitRole, triples: impl IntoIterator<Item = Triple>) -> Self {
        let mut split = Self::new(role);
        let mut seen = HashSet::new();
        for t in triples {
            if seen.insert(t) {
                split.triples.push(t);
            } else {
                split.dropped_duplicates += 1;
            }
        }
        split
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn entities(&self) -> HashSet<EntityId> {
        self.triples
            .iter()
            .flat_map(|t| [t.head, t.tail])
            .collect()
    }
}

/// String ↔ dense id table, ids in first-insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Interner {
    keys: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    pub fn intern(&mut self, key: &str) -> u32 {
        if let Some(&id) = self.index.get(key) {
            return id;
        }
        let id = self.keys.len() as u32;
        self.keys.push(key.to_owned());
        self.index.insert(key.to_owned(), id);
        id
    }

    pub fn get(&self, key: &str) -> Option<u32> {
        self.index.get(key).copied()
    }

    pub fn key(&self, id: u32) -> &str {
        &self.keys[id as usize]
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }
}

/// Entity and relation vocabularies shared by all splits of one dataset.
///
/// A frozen vocabulary rejects unknown keys instead of growing.
#[derive(Debug, Clone, Default)]
pub struct TripleVocab {
    pub entities: Interner,
    pub relations: Interner,
    pub frozen: bool,
}

impl TripleVocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn frozen(mut self) -> Self {
        self.frozen = true;
        self
    }

    fn entity(&mut self, key: &str) -> Option<EntityId> {
        if self.frozen {
            self.entities.get(key).map(EntityId)
        } else {
            Some(EntityId(self.entities.intern(key)))
        }
    }

    fn relation(&mut self, key: &str) -> Option<RelationId> {
        if self.frozen {
            self.relations.get(key).map(RelationId)
        } else {
            Some(RelationId(self.relations.intern(key)))
        }
    }

    /// Resolves one `(head, relation, tail)` key triple to ids.
    pub fn resolve(&mut self, head: &str, relation: &str, tail: &str) -> Result<Triple> {
        let h = self
            .entity(head)
            .ok_or_else(|| Error::Vocabulary(format!("unknown entity key {head:?}")))?;
        let r = self
            .relation(relation)
            .ok_or_else(|| Error::Vocabulary(format!("unknown relation key {relation:?}")))?;
        let t = self
            .entity(tail)
            .ok_or_else(|| Error::Vocabulary(format!("unknown entity key {tail:?}")))?;
        Ok(Triple::new(h, r, t))
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

/// Non-empty lines with their 1-based line numbers; CRLF endings accepted.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.is_empty())
}

/// Parses triple-file text into key triples.
pub fn parse_triples<'a>(path: &Path, text: &'a str) -> Result<Vec<(&'a str, &'a str, &'a str)>> {
    data_lines(text)
        .map(|(line, l)| {
            let fields: Vec<&str> = l.split('\t').collect();
            match fields.as_slice() {
                [h, r, t] if !h.is_empty() && !r.is_empty() && !t.is_empty() => Ok((*h, *r, *t)),
                _ => Err(Error::Parse {
                    path: path.to_owned(),
                    line,
                    message: format!(
                        "expected 3 non-empty tab-separated fields, found {}",
                        fields.len()
                    ),
                }),
            }
        })
        .collect()
}

/// Loads one triple file, assigning ids through `vocab`. Line order is kept.
pub fn load_triples(path: &Path, role: SplitRole, vocab: &mut TripleVocab) -> Result<DatasetSplit> {
    let text = read_text(path)?;
    let records = parse_triples(path, &text)?;
    let split = resolve_split(role, &records, vocab)?;
    if split.dropped_duplicates > 0 {
        log::warn!(
            "{}: dropped {} duplicate triples",
            path.display(),
            split.dropped_duplicates
        );
    }
    Ok(split)
}

fn resolve_split(
    role: SplitRole,
    records: &[(&str, &str, &str)],
    vocab: &mut TripleVocab,
) -> Result<DatasetSplit> {
    let triples = records
        .iter()
        .map(|(h, r, t)| vocab.resolve(h, r, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetSplit::from_triples(role, triples))
}

/// How surface names are transformed on load. The default keeps them verbatim.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NameNormalization {
    #[default]
    Verbatim,
    /// Replace `_` with a space, e.g. WordNet lemmas like `domestic_dog`.
    UnderscoreToSpace,
}

impl NameNormalization {
    fn apply(self, name: &str) -> String {
        match self {
            NameNormalization::Verbatim => name.to_owned(),
            NameNormalization::UnderscoreToSpace => name.replace('_', " "),
        }
    }
}

/// Parses a two-column `key<TAB>name` file.
pub fn parse_names<'a>(path: &Path, text: &'a str) -> Result<Vec<(&'a str, &'a str)>> {
    let mut seen = HashSet::new();
    data_lines(text)
        .map(|(line, l)| {
            let err = |message: String| Error::Parse {
                path: path.to_owned(),
                line,
                message,
            };
            let (key, name) = l
                .split_once('\t')
                .ok_or_else(|| err("expected 2 tab-separated fields".into()))?;
            if key.is_empty() || name.trim().is_empty() {
                return Err(err("empty key or name".into()));
            }
            if !seen.insert(key) {
                return Err(err(format!("duplicate name entry for {key:?}")));
            }
            Ok((key, name))
        })
        .collect()
}

/// Total map from entity id to surface name.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntityNameTable {
    names: Vec<String>,
}

impl EntityNameTable {
    pub fn name(&self, id: EntityId) -> &str {
        &self.names[id.index()]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }
}

/// Ordered pair → sorted, deduplicated set of relations observed for it.
#[derive(Debug, Clone, Default)]
pub struct PairRelationIndex {
    map: HashMap<(EntityId, EntityId), Vec<RelationId>>,
}

impl PairRelationIndex {
    pub fn build<'a>(splits: impl IntoIterator<Item = &'a DatasetSplit>) -> Self {
        let mut index = Self::default();
        for split in splits {
            index.extend(&split.triples);
        }
        index
    }

    pub fn extend(&mut self, triples: &[Triple]) {
        for t in triples {
            let rels = self.map.entry(t.pair()).or_default();
            if let Err(pos) = rels.binary_search(&t.relation) {
                rels.insert(pos, t.relation);
            }
        }
    }

    /// Relations observed for `(head, tail)`, sorted ascending; empty if unseen.
    pub fn valid_relations(&self, head: EntityId, tail: EntityId) -> &[RelationId] {
        self.map.get(&(head, tail)).map_or(&[], Vec::as_slice)
    }

    pub fn pair_count(&self) -> usize {
        self.map.len()
    }
}

/// Free-function form of [`PairRelationIndex::valid_relations`].
pub fn valid_relations(index: &PairRelationIndex, head: EntityId, tail: EntityId) -> &[RelationId] {
    index.valid_relations(head, tail)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub entities: usize,
    pub relations: usize,
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>10} {:>10} {:>10} {:>10} {:>10}",
            "Training", "Validation", "Testing", "Entities", "Relations"
        )?;
        write!(
            f,
            "{:>10} {:>10} {:>10} {:>10} {:>10}",
            self.train, self.valid, self.test, self.entities, self.relations
        )
    }
}

/// Immutable once built; share it freely across threads.
#[derive(Debug, Clone)]
pub struct KnowledgeGraphDataset {
    pub vocab: TripleVocab,
    pub names: EntityNameTable,
    pub train: DatasetSplit,
    pub valid: DatasetSplit,
    pub test: DatasetSplit,
    pub index: PairRelationIndex,
}

impl KnowledgeGraphDataset {
    /// Builds a dataset from in-memory key records.
    pub fn from_records(
        train: &[(&str, &str, &str)],
        valid: &[(&str, &str, &str)],
        test: &[(&str, &str, &str)],
        names: &[(&str, &str)],
        normalization: NameNormalization,
    ) -> Result<Self> {
        let mut vocab = TripleVocab::new();
        let train = resolve_split(SplitRole::Training, train, &mut vocab)?;
        let valid = resolve_split(SplitRole::Validation, valid, &mut vocab)?;
        let test = resolve_split(SplitRole::Testing, test, &mut vocab)?;
        Self::assemble(vocab, train, valid, test, names, normalization)
    }

    /// Joins loaded splits with a name table and builds the filter index.
    pub fn assemble(
        mut vocab: TripleVocab,
        train: DatasetSplit,
        valid: DatasetSplit,
        test: DatasetSplit,
        names: &[(&str, &str)],
        normalization: NameNormalization,
    ) -> Result<Self> {
        vocab.frozen = false;
        for (key, _) in names {
            vocab.entities.intern(key);
        }
        let lookup: HashMap<&str, &str> = names.iter().copied().collect();
        let mut missing = Vec::new();
        let mut table = Vec::with_capacity(vocab.entities.len());
        for key in vocab.entities.keys() {
            match lookup.get(key.as_str()) {
                Some(name) => table.push(normalization.apply(name)),
                None => missing.push(key.clone()),
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingNames(missing));
        }
        if let Some(bad) = table.iter().position(|n| n.split_whitespace().next().is_none()) {
            return Err(Error::Vocabulary(format!(
                "entity {:?} has a name with no words after normalization",
                vocab.entities.key(bad as u32)
            )));
        }
        let index = PairRelationIndex::build([&train, &valid, &test]);
        Ok(Self {
            vocab: vocab.frozen(),
            names: EntityNameTable { names: table },
            train,
            valid,
            test,
            index,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.vocab.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.vocab.relations.len()
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        self.names.name(id)
    }

    pub fn entity_key(&self, id: EntityId) -> &str {
        self.vocab.entities.key(id.0)
    }

    pub fn relation_key(&self, id: RelationId) -> &str {
        self.vocab.relations.key(id.0)
    }

    pub fn split(&self, role: SplitRole) -> &DatasetSplit {
        match role {
            SplitRole::Training => &self.train,
            SplitRole::Validation => &self.valid,
            SplitRole::Testing => &self.test,
        }
    }

    pub fn stats(&self) -> DatasetStats {
        dataset_stats(self)
    }

    /// Writes a split back out in the standard triple-file format, using entity keys.
    pub fn write_split(&self, split: &DatasetSplit, path: &Path) -> Result<()> {
        let mut out = String::new();
        for t in &split.triples {
            out.push_str(self.entity_key(t.head));
            out.push('\t');
            out.push_str(self.relation_key(t.relation));
            out.push('\t');
            out.push_str(self.entity_key(t.tail));
            out.push('\n');
        }
        write_file(path, out.as_bytes())
    }

    /// Writes the `key<TAB>name` table.
    pub fn write_names(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (i, name) in self.names.iter().enumerate() {
            out.push_str(self.vocab.entities.key(i as u32));
            out.push('\t');
            out.push_str(name);
            out.push('\n');
        }
        write_file(path, out.as_bytes())
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    let mut f = fs::File::create(path).map_err(|e| Error::io(ctx(), e))?;
    f.write_all(bytes).map_err(|e| Error::io(ctx(), e))
}

/// Loads the three split files and the names file.
pub fn build_dataset(
    train: &Path,
    valid: &Path,
    test: &Path,
    names: &Path,
    normalization: NameNormalization,
) -> Result<KnowledgeGraphDataset> {
    let mut vocab = TripleVocab::new();
    let train = load_triples(train, SplitRole::Training, &mut vocab)?;
    let valid = load_triples(valid, SplitRole::Validation, &mut vocab)?;
    let test = load_triples(test, SplitRole::Testing, &mut vocab)?;
    let text = read_text(names)?;
    let names = parse_names(names, &text)?;
    KnowledgeGraphDataset::assemble(vocab, train, valid, test, &names, normalization)
}

pub fn dataset_stats(dataset: &KnowledgeGraphDataset) -> DatasetStats {
    DatasetStats {
        train: dataset.train.len(),
        valid: dataset.valid.len(),
        test: dataset.test.len(),
        entities: dataset.num_entities(),
        relations: dataset.num_relations(),
    }
}

//! Toy knowledge graphs whose relations can be predicted from entity names.
//!
//! Every entity gets a made-up proper name followed by a category noun, e.g.
//! `Kavolu river`. The relation of a triple is a fixed function of the head
//! and tail categories, except for a configurable fraction of noisy triples
//! that get a random relation. Entity keys are opaque (`e000042`), as in the
//! public benchmark files.

use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::kg_data::{build_dataset, write_file, KnowledgeGraphDataset, NameNormalization};

const CATEGORIES: [&str; 12] = [
    "river", "city", "person", "film", "animal", "planet", "company", "song", "mountain", "language",
    "disease", "university",
];
const SYLLABLES: [&str; 16] = [
    "ka", "vo", "lu", "mi", "ta", "ren", "so", "bel", "dor", "ix", "pa", "qui", "zen", "ol", "ma", "tri",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub entities: usize,
    pub relations: usize,
    pub categories: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    /// Fraction of triples whose relation is drawn uniformly at random.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// A WordNet-shaped toy graph: 18 relations.
    fn default() -> Self {
        Self {
            entities: 400,
            relations: 18,
            categories: 8,
            train: 2000,
            valid: 200,
            test: 200,
            noise: 0.05,
            seed: 17,
        }
    }
}

type KeyTriple = (String, String, String);

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticKg {
    pub train: Vec<KeyTriple>,
    pub valid: Vec<KeyTriple>,
    pub test: Vec<KeyTriple>,
    pub names: Vec<(String, String)>,
}

fn proper_name(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(2..=3);
    let mut s: String = (0..n).map(|_| SYLLABLES[rng.gen_range(0..SYLLABLES.len())]).collect();
    s[..1].make_ascii_uppercase();
    s
}

pub fn generate(spec: &SyntheticSpec) -> SyntheticKg {
    assert!(spec.entities >= 2, "need at least two entities");
    assert!(
        (1..=CATEGORIES.len()).contains(&spec.categories),
        "categories must be in 1..={}",
        CATEGORIES.len()
    );
    assert!(spec.relations >= 1, "need at least one relation");
    let total = spec.train + spec.valid + spec.test;
    assert!(
        total <= spec.entities * (spec.entities - 1),
        "more triples requested than ordered entity pairs"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let category: Vec<usize> = (0..spec.entities).map(|_| rng.gen_range(0..spec.categories)).collect();
    let names: Vec<(String, String)> = (0..spec.entities)
        .map(|i| {
            let name = format!("{} {}", proper_name(&mut rng), CATEGORIES[category[i]]);
            (format!("e{i:06}"), name)
        })
        .collect();
    let table: Vec<usize> = (0..spec.categories * spec.categories)
        .map(|_| rng.gen_range(0..spec.relations))
        .collect();

    let mut seen = HashSet::new();
    let mut triples = Vec::with_capacity(total);
    while triples.len() < total {
        let h = rng.gen_range(0..spec.entities);
        let t = rng.gen_range(0..spec.entities);
        if h == t || !seen.insert((h, t)) {
            continue;
        }
        let r = if rng.gen_bool(spec.noise) {
            rng.gen_range(0..spec.relations)
        } else {
            table[category[h] * spec.categories + category[t]]
        };
        triples.push((names[h].0.clone(), format!("/rel/{r:02}"), names[t].0.clone()));
    }
    let test = triples.split_off(spec.train + spec.valid);
    let valid = triples.split_off(spec.train);
    SyntheticKg {
        train: triples,
        valid,
        test,
        names,
    }
}

fn tsv3(rows: &[KeyTriple]) -> String {
    rows.iter().map(|(h, r, t)| format!("{h}\t{r}\t{t}\n")).collect()
}

impl SyntheticKg {
    /// Writes `train.tsv`, `valid.tsv`, `test.tsv`, and `names.tsv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)
            .map_err(|e| crate::Error::io(format!("creating {}", dir.display()), e))?;
        write_file(&dir.join("train.tsv"), tsv3(&self.train).as_bytes())?;
        write_file(&dir.join("valid.tsv"), tsv3(&self.valid).as_bytes())?;
        write_file(&dir.join("test.tsv"), tsv3(&self.test).as_bytes())?;
        let names: String = self.names.iter().map(|(k, n)| format!("{k}\t{n}\n")).collect();
        write_file(&dir.join("names.tsv"), names.as_bytes())
    }

    pub fn to_dataset(&self) -> Result<KnowledgeGraphDataset> {
        fn borrow(rows: &[KeyTriple]) -> Vec<(&str, &str, &str)> {
            rows.iter().map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str())).collect()
        }
        let names: Vec<(&str, &str)> = self.names.iter().map(|(k, n)| (k.as_str(), n.as_str())).collect();
        KnowledgeGraphDataset::from_records(
            &borrow(&self.train),
            &borrow(&self.valid),
            &borrow(&self.test),
            &names,
            NameNormalization::Verbatim,
        )
    }
}

/// Writes a generated graph to `dir` and loads it back through the file path.
pub fn write_and_load(spec: &SyntheticSpec, dir: &Path) -> Result<KnowledgeGraphDataset> {
    generate(spec).write(dir)?;
    build_dataset(
        &dir.join("train.tsv"),
        &dir.join("valid.tsv"),
        &dir.join("test.tsv"),
        &dir.join("names.tsv"),
        NameNormalization::Verbatim,
    )
}

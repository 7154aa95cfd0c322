//! Loads a dataset directory (`train.tsv`, `valid.tsv`, `test.tsv`,
//! `names.tsv`) and prints its counts and the busiest entity pairs.
//!
//! cargo run --example dataset_stats -- <dir>

use std::path::Path;

use relpred::kg_data::{build_dataset, NameNormalization};

fn main() -> relpred::Result<()> {
    let Some(dir) = std::env::args().nth(1) else {
        eprintln!("usage: dataset_stats <dir>");
        std::process::exit(1);
    };
    let dir = Path::new(&dir);
    let dataset = build_dataset(
        &dir.join("train.tsv"),
        &dir.join("valid.tsv"),
        &dir.join("test.tsv"),
        &dir.join("names.tsv"),
        NameNormalization::UnderscoreToSpace,
    )?;
    println!("{}", dataset.stats());
    println!("{} distinct (head, tail) pairs", dataset.index.pair_count());

    let mut multi: Vec<_> = dataset
        .train
        .triples
        .iter()
        .map(|t| (t.head, t.tail))
        .filter(|&(h, t)| dataset.index.valid_relations(h, t).len() > 1)
        .collect();
    multi.sort();
    multi.dedup();
    println!("{} training pairs carry more than one relation", multi.len());
    for &(h, t) in multi.iter().take(5) {
        let rels: Vec<&str> = dataset
            .index
            .valid_relations(h, t)
            .iter()
            .map(|&r| dataset.relation_key(r))
            .collect();
        println!("  {} -> {}: {}", dataset.entity_name(h), dataset.entity_name(t), rels.join(", "));
    }
    Ok(())
}

//! Writes a generated graph in the benchmark file layout.
//!
//! cargo run --example generate_toy -- <dir>

use std::path::PathBuf;

use relpred::synthetic::{write_and_load, SyntheticSpec};

fn main() -> relpred::Result<()> {
    let dir: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "toy-kg".into()).into();
    let dataset = write_and_load(&SyntheticSpec::default(), &dir)?;
    println!("wrote {}", dir.display());
    println!("{}", dataset.stats());
    for t in dataset.train.triples.iter().take(5) {
        println!(
            "{:<20} {:<8} {}",
            dataset.entity_name(t.head),
            dataset.relation_key(t.relation),
            dataset.entity_name(t.tail)
        );
    }
    Ok(())
}

//! Builds an entity-inductive split and checks both disjointness conditions.

use relpred::splits::{make_inductive, verify_inductive, verify_splits};
use relpred::synthetic::{generate, SyntheticSpec};

fn main() -> relpred::Result<()> {
    let dataset = generate(&SyntheticSpec {
        entities: 2000,
        train: 6000,
        valid: 500,
        test: 500,
        ..SyntheticSpec::default()
    })
    .to_dataset()?;

    println!("transductive split:\n{}", verify_splits(&dataset.train, &dataset.valid, &dataset.test));

    let split = make_inductive(&dataset, 0.1, 42)?.with_source("toy");
    println!("\ninductive split:\n{}", verify_inductive(&split));
    println!("{}", serde_json::to_string_pretty(&split.provenance)?);
    if !split.unseen_test_relations.is_empty() {
        println!("relations missing from pruned training: {:?}", split.unseen_test_relations);
    }
    Ok(())
}

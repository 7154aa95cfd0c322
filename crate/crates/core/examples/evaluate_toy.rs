//! Trains on a generated graph, then reports raw and filtered test metrics
//! next to the constant most-frequent-relation baseline.
//!
//! cargo run --release --example evaluate_toy

use relpred::analysis::relation_train_counts;
use relpred::metrics::evaluate;
use relpred::model::{ClassifierState, ModelConfig};
use relpred::synthetic::{generate, SyntheticSpec};
use relpred::tokenizer::train_vocabulary;
use relpred::trainer::{train, TrainConfig};

fn main() -> relpred::Result<()> {
    let dataset = generate(&SyntheticSpec::default()).to_dataset()?;
    let vocab = train_vocabulary(dataset.names.iter(), 200)?;
    let pad_len = 16;
    let state = ClassifierState::init(ModelConfig {
        vocab_size: vocab.len(),
        pad_len,
        embed_dim: 32,
        num_layers: 1,
        num_heads: 4,
        feedforward_dim: 64,
        num_relations: dataset.num_relations(),
        dropout_rate: 0.1,
        seed: 3,
    })?;
    let tcfg = TrainConfig {
        learning_rate: 1e-3,
        weight_decay: 0.01,
        epochs: 10,
        shuffle_seed: 3,
        ..TrainConfig::default()
    };
    let (state, _) = train(&dataset, state, &tcfg, &vocab, pad_len)?;
    let (report, _) = evaluate(&state, &dataset, &dataset.test, &dataset.index, &vocab, pad_len, &[1, 3, 5])?;
    println!("{report}");

    let counts = relation_train_counts(&dataset);
    let (&top, _) = counts.iter().max_by_key(|&(r, n)| (*n, std::cmp::Reverse(*r))).expect("training triples");
    let baseline =
        dataset.test.triples.iter().filter(|t| t.relation == top).count() as f64 / dataset.test.len() as f64;
    println!("constant predictor Hits@1: {baseline:.4}");
    Ok(())
}

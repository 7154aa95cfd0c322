//! Trains a small classifier on a generated graph and prints the loss curve.
//!
//! cargo run --release --example train_toy -- [epochs]

use relpred::model::{ClassifierState, ModelConfig};
use relpred::synthetic::{generate, SyntheticSpec};
use relpred::tokenizer::train_vocabulary;
use relpred::trainer::{train, validation_loss, TrainConfig};

fn main() -> relpred::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(5);

    let dataset = generate(&SyntheticSpec::default()).to_dataset()?;
    println!("{}", dataset.stats());

    let vocab = train_vocabulary(dataset.names.iter(), 200)?;
    let pad_len = 16;
    let config = ModelConfig {
        vocab_size: vocab.len(),
        pad_len,
        embed_dim: 32,
        num_layers: 1,
        num_heads: 4,
        feedforward_dim: 64,
        num_relations: dataset.num_relations(),
        dropout_rate: 0.1,
        seed: 1,
    };
    let state = ClassifierState::init(config)?;
    let before = validation_loss(&dataset, &state, &vocab, pad_len)?;
    println!(
        "{} parameters, validation loss at init {before:.4} (ln R = {:.4})",
        state.num_params(),
        (dataset.num_relations() as f64).ln()
    );

    let tcfg = TrainConfig {
        learning_rate: 1e-3,
        weight_decay: 0.01,
        epochs,
        batch_size: 32,
        shuffle_seed: 1,
        ..TrainConfig::default()
    };
    let (_, report) = train(&dataset, state, &tcfg, &vocab, pad_len)?;
    print!("{}", report.summary());
    Ok(())
}

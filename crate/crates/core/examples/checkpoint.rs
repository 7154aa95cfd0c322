//! Saves a model, reloads it, and shows that a config mismatch is caught.

use relpred::model::{ClassifierState, ModelConfig};

fn main() -> relpred::Result<()> {
    let config = ModelConfig {
        vocab_size: 64,
        pad_len: 12,
        embed_dim: 16,
        num_layers: 2,
        num_heads: 2,
        feedforward_dim: 32,
        num_relations: 7,
        dropout_rate: 0.0,
        seed: 9,
    };
    let state = ClassifierState::init(config.clone())?;
    let dir = std::env::temp_dir().join("relpred-checkpoint-example");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let path = dir.join("model.ckpt");
    state.save(&path)?;

    let back = ClassifierState::load_expecting(&path, &config)?;
    println!("{} parameters restored bit-exactly: {}", back.num_params(), back == state);
    for spec in back.layout().specs().iter().take(4) {
        println!("  {:<24} {:?}", spec.name, spec.shape);
    }

    let other = ModelConfig {
        num_relations: 8,
        ..config
    };
    match ClassifierState::load_expecting(&path, &other) {
        Ok(_) => println!("unexpectedly loaded"),
        Err(e) => println!("mismatch rejected: {e}"),
    }
    Ok(())
}

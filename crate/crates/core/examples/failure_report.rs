//! Lists the worst-ranked test triples of a briefly trained model.

use relpred::analysis::{worst_predictions, FailureTable, RankKind};
use relpred::metrics::evaluate;
use relpred::model::{ClassifierState, ModelConfig};
use relpred::synthetic::{generate, SyntheticSpec};
use relpred::tokenizer::train_vocabulary;
use relpred::trainer::{train, TrainConfig};

fn main() -> relpred::Result<()> {
    let dataset = generate(&SyntheticSpec {
        noise: 0.2,
        ..SyntheticSpec::default()
    })
    .to_dataset()?;
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
        seed: 5,
    })?;
    let tcfg = TrainConfig {
        learning_rate: 1e-3,
        weight_decay: 0.01,
        epochs: 3,
        ..TrainConfig::default()
    };
    let (state, _) = train(&dataset, state, &tcfg, &vocab, pad_len)?;
    let (_, records) = evaluate(&state, &dataset, &dataset.test, &dataset.index, &vocab, pad_len, &[1])?;
    let rows = worst_predictions(&records, &dataset, 5, RankKind::Filtered)?;
    print!("{}", FailureTable(&rows));
    Ok(())
}

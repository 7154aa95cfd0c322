//! The config-driven workflow behind the `relpred` binary: stats, train,
//! evaluate, inductive, and failures on a generated graph.
//!
//! cargo run --release --example run_experiment -- [out-dir]

use std::path::PathBuf;

use relpred::experiment::{cmd_evaluate, cmd_failures, cmd_inductive, cmd_stats, cmd_train, InductiveModel, RunConfig};
use relpred::synthetic::{generate, SyntheticSpec};

fn main() -> relpred::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "relpred-run".into()).into();
    let data = out.join("data");
    generate(&SyntheticSpec::default()).write(&data)?;

    let text = r#"
seed = 11
out = "."

[data]
train = "data/train.tsv"
valid = "data/valid.tsv"
test = "data/test.tsv"
names = "data/names.tsv"
source = "toy"

[tokenizer]
max_size = 200
pad_len = 16

[model]
embed_dim = 32
num_layers = 1
num_heads = 4
feedforward_dim = 64

[train]
learning_rate = 1e-3
weight_decay = 0.01
epochs = 4

[eval]
hits = [1, 3, 5]
"#;
    std::fs::create_dir_all(&out).expect("output dir");
    std::fs::write(out.join("relpred.toml"), text).expect("config file");
    let cfg = RunConfig::load(&out.join("relpred.toml"), &[])?;

    cmd_stats(&cfg)?;
    cmd_train(&cfg)?;
    cmd_evaluate(&cfg, None)?;
    cmd_failures(&cfg, None, Some(5))?;
    let outcome = cmd_inductive(&cfg, &InductiveModel::Reuse(cfg.checkpoint_path()))?;
    println!("inductive split passed verification: {}", outcome.verification.passed());
    println!("artifacts in {}", out.display());
    Ok(())
}

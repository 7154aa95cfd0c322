//! Reference implementations written independently of the library, used as
//! oracles by the integration and acceptance tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use relpred::kg_data::RelationId;
use relpred::metrics::TiePolicy;
use relpred::model::{ClassifierState, ModelConfig};
use relpred::tokenizer::{Vocabulary, UNK_ID};

/// Position of `gt` in the candidates sorted by descending score, with ties
/// placed after (optimistic) or before (pessimistic) the ground truth.
pub fn sort_rank(scores: &[f64], gt: usize, policy: TiePolicy) -> usize {
    let gt_first = |policy| {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b].partial_cmp(&scores[a]).unwrap().then_with(|| {
                let key = |i: usize| match policy {
                    TiePolicy::Pessimistic => i != gt,
                    _ => i == gt,
                };
                key(b).cmp(&key(a))
            })
        });
        order.iter().position(|&i| i == gt).unwrap() + 1
    };
    match policy {
        TiePolicy::Mean => {
            let best = gt_first(TiePolicy::Optimistic);
            let worst = gt_first(TiePolicy::Pessimistic);
            best + (worst - best) / 2
        }
        p => gt_first(p),
    }
}

/// Deletes every other valid relation's score, then ranks what is left.
pub fn deletion_rank(scores: &[f64], gt: usize, valid: &[usize], policy: TiePolicy) -> usize {
    let kept: Vec<(usize, f64)> = scores
        .iter()
        .copied()
        .enumerate()
        .filter(|(i, _)| *i == gt || !valid.contains(i))
        .collect();
    let new_gt = kept.iter().position(|(i, _)| *i == gt).unwrap();
    let s: Vec<f64> = kept.iter().map(|&(_, s)| s).collect();
    sort_rank(&s, new_gt, policy)
}

/// Random logits; with `coarse`, values are drawn from a small grid so ties
/// are common.
pub fn random_scores(rng: &mut ChaCha8Rng, r: usize, coarse: bool) -> Vec<f64> {
    (0..r)
        .map(|_| {
            if coarse {
                rng.gen_range(0..4) as f64 * 0.5
            } else {
                rng.gen_range(-5.0..5.0)
            }
        })
        .collect()
}

/// Random subset of `0..r` containing `gt`.
pub fn random_valid(rng: &mut ChaCha8Rng, r: usize, gt: usize) -> Vec<usize> {
    (0..r).filter(|&i| i == gt || rng.gen_bool(0.3)).collect()
}

pub fn rel_ids(ids: &[usize]) -> Vec<RelationId> {
    ids.iter().map(|&i| RelationId(i as u32)).collect()
}

/// Recursive splitter: a known word is one token; otherwise take the longest
/// known proper prefix and recurse on the remainder; a lone unknown character
/// becomes UNK.
pub fn split_word(word: &str, vocab: &Vocabulary) -> Vec<u32> {
    if word.is_empty() {
        return vec![];
    }
    if let Some(id) = vocab.id(word) {
        return vec![id];
    }
    let chars: Vec<char> = word.chars().collect();
    for n in (1..chars.len()).rev() {
        let prefix: String = chars[..n].iter().collect();
        if let Some(id) = vocab.id(&prefix) {
            let rest: String = chars[n..].iter().collect();
            let mut out = vec![id];
            out.extend(split_word(&rest, vocab));
            return out;
        }
    }
    let rest: String = chars[1..].iter().collect();
    let mut out = vec![UNK_ID];
    out.extend(split_word(&rest, vocab));
    out
}

/// Closed form of the trim-the-longer-side rule: the longer list is cut down
/// to the shorter one first, then the remaining excess is shared with the
/// head taking the extra cut.
pub fn truncation_oracle(head: usize, tail: usize, budget: usize) -> (usize, usize) {
    if head + tail <= budget {
        return (head, tail);
    }
    let excess = head + tail - budget;
    let gap = head.abs_diff(tail);
    if excess <= gap {
        return if head > tail { (head - excess, tail) } else { (head, tail - excess) };
    }
    let total = budget;
    (total / 2, total - total / 2)
}

/// A model that ignores its input: every weight is zero except the output
/// bias, which scores `relation` far above the rest.
pub fn constant_model(config: ModelConfig, relation: usize) -> ClassifierState {
    let mut state = ClassifierState::init(config).unwrap();
    let bias = state
        .layout()
        .specs()
        .iter()
        .find(|s| s.name == "head.bias")
        .unwrap()
        .range();
    let weight = state
        .layout()
        .specs()
        .iter()
        .find(|s| s.name == "head.weight")
        .unwrap()
        .range();
    let params = state.params_mut();
    params[weight].iter_mut().for_each(|p| *p = 0.0);
    params[bias.clone()].iter_mut().for_each(|p| *p = 0.0);
    params[bias.start + relation] = 100.0;
    state
}

pub fn relpred_bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_relpred"))
}

/// Writes a TOML run config for the four files in `data` and returns its path.
pub fn write_config(dir: &Path, data: &Path, extra: &str) -> PathBuf {
    let text = format!(
        r#"seed = 5
out = "out"

[data]
train = "{d}/train.tsv"
valid = "{d}/valid.tsv"
test = "{d}/test.tsv"
names = "{d}/names.tsv"

[tokenizer]
max_size = 120
pad_len = 12

[model]
embed_dim = 8
num_layers = 1
num_heads = 2
feedforward_dim = 16
dropout_rate = 0.1

[train]
learning_rate = 0.003
weight_decay = 0.01
epochs = 2
batch_size = 16
{extra}
"#,
        d = data.display()
    );
    let path = dir.join("relpred.toml");
    std::fs::write(&path, text).unwrap();
    path
}

//! Supervised training over the training triples with Adam.
//!
//! Each training triple becomes one `(head name, tail name) → relation`
//! example. There is no negative sampling: targets only ever come from the
//! source triples.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg_data::{DatasetSplit, KnowledgeGraphDataset, PairRelationIndex, Triple};
use crate::model::{self, ClassifierState, Mode, TargetVector};
use crate::tokenizer::{encode_pair, TokenizedSequence, Vocabulary};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// How the `weight_decay` fraction is applied.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    /// Decoupled weight decay: parameters shrink by `lr · weight_decay` each step.
    #[default]
    Weight,
    /// No weight decay; the learning rate falls linearly to
    /// `(1 − weight_decay) · lr` over the run.
    LinearLr,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// The triple's own relation only.
    #[default]
    OneHot,
    /// Every relation seen in training for the triple's `(head, tail)` pair.
    MergePairs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub decay_mode: DecayMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub shuffle_seed: u64,
    /// Validation loss every this many steps; 0 means only at epoch ends.
    pub eval_every: usize,
    /// Global gradient-norm clip; `None` disables clipping. Written as 0 in
    /// config files.
    #[serde(with = "zero_is_none")]
    pub clip_norm: Option<f64>,
    pub target_mode: TargetMode,
}

mod zero_is_none {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(v.unwrap_or(0.0))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        let v = f64::deserialize(d)?;
        Ok((v != 0.0).then_some(v))
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            weight_decay: 0.25,
            decay_mode: DecayMode::Weight,
            epochs: 10,
            batch_size: 32,
            shuffle_seed: 0,
            eval_every: 0,
            clip_norm: Some(1.0),
            target_mode: TargetMode::OneHot,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.weight_decay) {
            return Err(Error::Config(format!(
                "weight_decay {} is outside [0, 1)",
                self.weight_decay
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config(format!("clip_norm {c} must be positive")));
            }
        }
        Ok(())
    }
}

/// Adam first and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl AdamMoments {
    pub fn zeros(len: usize) -> Self {
        Self {
            first: vec![0.0; len],
            second: vec![0.0; len],
        }
    }
}

/// One Adam update (β₁ = 0.9, β₂ = 0.999, ε = 1e-8) with bias correction.
/// Parameters are first scaled by `1 − lr · weight_decay`.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    moments: &mut AdamMoments,
    step_index: usize,
    learning_rate: f64,
    weight_decay: f64,
) -> Result<()> {
    if step_index == 0 {
        return Err(Error::Input("Adam step index starts at 1".into()));
    }
    if grads.len() != params.len()
        || moments.first.len() != params.len()
        || moments.second.len() != params.len()
    {
        return Err(Error::Input(format!(
            "shape mismatch: {} params, {} grads, {}/{} moments",
            params.len(),
            grads.len(),
            moments.first.len(),
            moments.second.len()
        )));
    }
    let t = step_index as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let shrink = 1.0 - learning_rate * weight_decay;
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut moments.first)
        .zip(&mut moments.second)
    {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p = *p * shrink - learning_rate * m_hat / (v_hat.sqrt() + EPSILON);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub valid_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub evaluations: Vec<EvalRecord>,
    pub checkpoint: Option<PathBuf>,
}

impl TrainReport {
    /// One JSON object per line: step evaluations first within each epoch,
    /// then the epoch summary. Wall-clock times are left out so reruns
    /// produce identical bytes.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        let mut evals = self.evaluations.iter().peekable();
        for e in &self.epochs {
            while let Some(ev) = evals.next_if(|ev| ev.step <= e.steps) {
                let line = serde_json::json!({
                    "kind": "evaluation",
                    "step": ev.step,
                    "valid_loss": ev.valid_loss,
                });
                out.push_str(&line.to_string());
                out.push('\n');
            }
            let line = serde_json::json!({
                "kind": "epoch",
                "epoch": e.epoch,
                "steps": e.steps,
                "train_loss": e.train_loss,
                "valid_loss": e.valid_loss,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = format!("{:>6} {:>8} {:>12} {:>12} {:>9}\n", "epoch", "steps", "train_loss", "valid_loss", "seconds");
        for e in &self.epochs {
            let valid = e.valid_loss.map_or("-".to_string(), |v| format!("{v:.6}"));
            out.push_str(&format!(
                "{:>6} {:>8} {:>12.6} {:>12} {:>9.2}\n",
                e.epoch, e.steps, e.train_loss, valid, e.seconds
            ));
        }
        if let Some(p) = &self.checkpoint {
            out.push_str(&format!("checkpoint: {}\n", p.display()));
        }
        out
    }
}

/// Hooks into the training loop.
pub trait TrainObserver {
    fn on_batch(&mut self, _step: usize, _triples: &[Triple], _targets: &[TargetVector]) {}

    /// Called after each epoch with the updated parameters. An error stops training.
    fn on_epoch_end(&mut self, _record: &EpochRecord, _state: &ClassifierState) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Encodes `(head name, tail name)` for each triple, in order.
pub fn encode_triples(
    dataset: &KnowledgeGraphDataset,
    triples: &[Triple],
    vocab: &Vocabulary,
    pad_len: usize,
) -> Result<Vec<TokenizedSequence>> {
    triples
        .par_iter()
        .map(|t| encode_pair(dataset.entity_name(t.head), dataset.entity_name(t.tail), vocab, pad_len))
        .collect()
}

fn check_compat(dataset: &KnowledgeGraphDataset, state: &ClassifierState, vocab: &Vocabulary, pad_len: usize) -> Result<()> {
    let cfg = state.config();
    if cfg.num_relations != dataset.num_relations() {
        return Err(Error::Config(format!(
            "model has {} relations, dataset has {}",
            cfg.num_relations,
            dataset.num_relations()
        )));
    }
    if cfg.pad_len != pad_len {
        return Err(Error::Config(format!(
            "model pad_len {} differs from tokenizer pad_len {pad_len}",
            cfg.pad_len
        )));
    }
    if vocab.len() > cfg.vocab_size {
        return Err(Error::Config(format!(
            "tokenizer has {} tokens but model vocab_size is {}",
            vocab.len(),
            cfg.vocab_size
        )));
    }
    Ok(())
}

fn targets_for(triples: &[Triple], mode: TargetMode, train_index: &PairRelationIndex, num_relations: usize) -> Result<Vec<TargetVector>> {
    triples
        .iter()
        .map(|t| match mode {
            TargetMode::OneHot => Ok(TargetVector::one_hot(t.relation, num_relations)),
            TargetMode::MergePairs => {
                TargetVector::multi_hot(train_index.valid_relations(t.head, t.tail), num_relations)
            }
        })
        .collect()
}

fn mean_loss(state: &ClassifierState, seqs: &[TokenizedSequence], targets: &[TargetVector]) -> Result<f64> {
    let logits = state.forward(seqs)?;
    model::batch_loss(&logits, targets)
}

/// Mean one-hot loss over the validation split, evaluation mode.
pub fn validation_loss(
    dataset: &KnowledgeGraphDataset,
    state: &ClassifierState,
    vocab: &Vocabulary,
    pad_len: usize,
) -> Result<f64> {
    split_loss(dataset, &dataset.valid, state, vocab, pad_len)
}

pub fn split_loss(
    dataset: &KnowledgeGraphDataset,
    split: &DatasetSplit,
    state: &ClassifierState,
    vocab: &Vocabulary,
    pad_len: usize,
) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::Validation(format!("{} split is empty", split.role)));
    }
    let seqs = encode_triples(dataset, &split.triples, vocab, pad_len)?;
    let r = state.config().num_relations;
    let targets: Vec<_> = split
        .triples
        .iter()
        .map(|t| TargetVector::one_hot(t.relation, r))
        .collect();
    mean_loss(state, &seqs, &targets)
}

pub fn train(
    dataset: &KnowledgeGraphDataset,
    state: ClassifierState,
    tcfg: &TrainConfig,
    vocab: &Vocabulary,
    pad_len: usize,
) -> Result<(ClassifierState, TrainReport)> {
    train_with_observer(dataset, state, tcfg, vocab, pad_len, &mut ())
}

pub fn train_with_observer(
    dataset: &KnowledgeGraphDataset,
    mut state: ClassifierState,
    tcfg: &TrainConfig,
    vocab: &Vocabulary,
    pad_len: usize,
    observer: &mut dyn TrainObserver,
) -> Result<(ClassifierState, TrainReport)> {
    tcfg.validate()?;
    check_compat(dataset, &state, vocab, pad_len)?;
    let triples = &dataset.train.triples;
    if triples.is_empty() {
        return Err(Error::Validation("training split is empty".into()));
    }
    let r = dataset.num_relations();
    let train_index = PairRelationIndex::build([&dataset.train]);
    let seqs = encode_triples(dataset, triples, vocab, pad_len)?;
    let targets = targets_for(triples, tcfg.target_mode, &train_index, r)?;
    let valid = if dataset.valid.is_empty() {
        None
    } else {
        let vs = encode_triples(dataset, &dataset.valid.triples, vocab, pad_len)?;
        let vt: Vec<_> = dataset
            .valid
            .triples
            .iter()
            .map(|t| TargetVector::one_hot(t.relation, r))
            .collect();
        Some((vs, vt))
    };

    let steps_per_epoch = triples.len().div_ceil(tcfg.batch_size);
    let total_steps = steps_per_epoch * tcfg.epochs;
    let dropout_seed = state.config().seed;
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.shuffle_seed);
    let mut moments = AdamMoments::zeros(state.num_params());
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..triples.len()).collect();
    let mut step = 0usize;

    for epoch in 1..=tcfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(tcfg.batch_size) {
            step += 1;
            let b_seqs: Vec<TokenizedSequence> = batch.iter().map(|&i| seqs[i].clone()).collect();
            let b_targets: Vec<TargetVector> = batch.iter().map(|&i| targets[i].clone()).collect();
            let b_triples: Vec<Triple> = batch.iter().map(|&i| triples[i]).collect();
            observer.on_batch(step, &b_triples, &b_targets);

            let mode = Mode::Train {
                seed: dropout_seed ^ (step as u64).wrapping_mul(0xD1B5_4A32_D192_ED03),
            };
            let (loss, mut grad) = state.loss_and_grad(&b_seqs, &b_targets, mode)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { step });
            }
            if let Some(max_norm) = tcfg.clip_norm {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > max_norm {
                    let s = max_norm / norm;
                    grad.iter_mut().for_each(|g| *g *= s);
                }
            }
            let (lr, wd) = match tcfg.decay_mode {
                DecayMode::Weight => (tcfg.learning_rate, tcfg.weight_decay),
                DecayMode::LinearLr => {
                    let progress = (step - 1) as f64 / total_steps.max(1) as f64;
                    (tcfg.learning_rate * (1.0 - tcfg.weight_decay * progress), 0.0)
                }
            };
            adam_step(state.params_mut(), &grad, &mut moments, step, lr, wd)?;
            loss_sum += loss * batch.len() as f64;

            if tcfg.eval_every > 0 && step.is_multiple_of(tcfg.eval_every) {
                if let Some((vs, vt)) = &valid {
                    report.evaluations.push(EvalRecord {
                        step,
                        valid_loss: mean_loss(&state, vs, vt)?,
                    });
                }
            }
        }
        let valid_loss = match &valid {
            Some((vs, vt)) => Some(mean_loss(&state, vs, vt)?),
            None => None,
        };
        let record = EpochRecord {
            epoch,
            steps: step,
            train_loss: loss_sum / triples.len() as f64,
            valid_loss,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train loss {:.6}, valid loss {}, {:.1}s",
            record.train_loss,
            valid_loss.map_or("-".into(), |v| format!("{v:.6}")),
            record.seconds
        );
        observer.on_epoch_end(&record, &state)?;
        report.epochs.push(record);
    }
    Ok((state, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_gradient_no_decay_leaves_params() {
        let mut p = vec![0.5, -1.0, 2.0];
        let mut m = AdamMoments::zeros(3);
        adam_step(&mut p, &[0.0; 3], &mut m, 1, 0.1, 0.0).unwrap();
        assert_eq!(p, [0.5, -1.0, 2.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g² at t = 1, so the step is lr · g/(|g| + ε).
        let mut p = vec![0.0];
        let mut m = AdamMoments::zeros(1);
        adam_step(&mut p, &[1.0], &mut m, 1, 0.1, 0.0).unwrap();
        assert_abs_diff_eq!(p[0], -0.1, epsilon = 1e-8);
    }

    #[test]
    fn decay_only_step() {
        let mut p = vec![1.0, -4.0];
        let mut m = AdamMoments::zeros(2);
        adam_step(&mut p, &[0.0, 0.0], &mut m, 1, 5e-5, 0.25).unwrap();
        assert_eq!(p, [1.0 - 1.25e-5, -4.0 * (1.0 - 1.25e-5)]);
    }

    #[test]
    fn adam_rejects_bad_shapes_and_step_zero() {
        let mut p = vec![0.0; 2];
        let mut m = AdamMoments::zeros(2);
        assert!(adam_step(&mut p, &[0.0], &mut m, 1, 0.1, 0.0).is_err());
        assert!(adam_step(&mut p, &[0.0; 2], &mut m, 0, 0.1, 0.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = |f: fn(&mut TrainConfig)| {
            let mut c = TrainConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.epochs = 0));
        assert!(bad(|c| c.batch_size = 0));
        assert!(bad(|c| c.weight_decay = 1.0));
        assert!(bad(|c| c.learning_rate = -1.0));
        assert!(bad(|c| c.clip_norm = Some(0.0)));
    }

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate, 5e-5);
        assert_eq!(c.weight_decay, 0.25);
        assert_eq!(c.epochs, 10);
    }

    #[test]
    fn json_lines_interleave_evaluations() {
        let report = TrainReport {
            epochs: vec![
                EpochRecord { epoch: 1, steps: 2, train_loss: 1.0, valid_loss: Some(0.9), seconds: 3.0 },
                EpochRecord { epoch: 2, steps: 4, train_loss: 0.5, valid_loss: None, seconds: 3.0 },
            ],
            evaluations: vec![EvalRecord { step: 2, valid_loss: 0.9 }, EvalRecord { step: 3, valid_loss: 0.8 }],
            checkpoint: None,
        };
        let text = report.to_json_lines();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].contains("\"evaluation\"") && lines[0].contains("\"step\":2"));
        assert!(lines[1].contains("\"epoch\":1"));
        assert!(lines[2].contains("\"step\":3"));
        assert!(!report.to_json_lines().contains("seconds"));
    }
}

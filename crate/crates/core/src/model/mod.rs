//! Sequence classifier mapping a [`TokenizedSequence`] to one logit per relation.
//!
//! The reference implementation is a small pre-norm transformer encoder with
//! learned positional embeddings. The final hidden state at the `[CLS]`
//! position feeds a linear layer of shape `embed_dim × num_relations`.
//! Everything runs in `f64` so analytic gradients can be checked against
//! finite differences.

mod checkpoint;
mod encoder;
mod layout;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg_data::RelationId;
use crate::tokenizer::TokenizedSequence;

pub use layout::{LayerOffsets, Layout, ParamSpec};

/// Sequences per gradient accumulation chunk. Fixed so that the summation
/// order, and therefore the result, does not depend on the thread count.
const GRAD_CHUNK: usize = 8;

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub pad_len: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub feedforward_dim: usize,
    pub num_relations: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("vocab_size", self.vocab_size),
            ("pad_len", self.pad_len),
            ("embed_dim", self.embed_dim),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("feedforward_dim", self.feedforward_dim),
            ("num_relations", self.num_relations),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !self.embed_dim.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} is outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }
}

/// Raw scores, one per relation.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits(pub Vec<f64>);

impl Logits {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Binary label vector with at least one positive entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetVector {
    labels: Vec<u8>,
}

impl TargetVector {
    pub fn new(labels: Vec<u8>) -> Result<Self> {
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::Target("labels must be 0 or 1".into()));
        }
        if !labels.contains(&1) {
            return Err(Error::Target("target has no positive label".into()));
        }
        Ok(Self { labels })
    }

    pub fn one_hot(relation: RelationId, num_relations: usize) -> Self {
        let mut labels = vec![0; num_relations];
        labels[relation.index()] = 1;
        Self { labels }
    }

    pub fn multi_hot(relations: &[RelationId], num_relations: usize) -> Result<Self> {
        let mut labels = vec![0; num_relations];
        for r in relations {
            *labels
                .get_mut(r.index())
                .ok_or_else(|| Error::Target(format!("relation {} out of range", r.0)))? = 1;
        }
        Self::new(labels)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn positives(&self) -> impl Iterator<Item = RelationId> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &y)| y == 1)
            .map(|(i, _)| RelationId(i as u32))
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Softmax with max subtraction.
pub fn probabilities(logits: &Logits) -> Vec<f64> {
    let max = logits.0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.0.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Categorical cross entropy `−Σ_r y_r · log softmax(ŷ)_r`, computed as
/// `Σ_r y_r · (logsumexp(ŷ) − ŷ_r)`.
pub fn loss(logits: &Logits, target: &TargetVector) -> Result<f64> {
    if logits.len() != target.labels.len() {
        return Err(Error::Input(format!(
            "{} logits but {} labels",
            logits.len(),
            target.labels.len()
        )));
    }
    let lse = log_sum_exp(&logits.0);
    Ok(target
        .positives()
        .map(|r| lse - logits.0[r.index()])
        .sum())
}

/// Mean of [`loss`] over a batch.
pub fn batch_loss(logits: &[Logits], targets: &[TargetVector]) -> Result<f64> {
    if logits.len() != targets.len() || logits.is_empty() {
        return Err(Error::Input(format!(
            "batch of {} logits and {} targets",
            logits.len(),
            targets.len()
        )));
    }
    let total = logits
        .iter()
        .zip(targets)
        .map(|(l, t)| loss(l, t))
        .sum::<Result<f64>>()?;
    Ok(total / logits.len() as f64)
}

/// `∂loss/∂ŷ = k·softmax(ŷ) − y` where `k` is the number of positive labels.
fn loss_grad(logits: &[f64], target: &TargetVector, scale: f64) -> Vec<f64> {
    let k = target.positives().count() as f64;
    let probs = probabilities(&Logits(logits.to_vec()));
    probs
        .iter()
        .zip(&target.labels)
        .map(|(p, &y)| scale * (k * p - f64::from(y)))
        .collect()
}

/// Whether dropout is active, and how its masks are seeded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Sequence `i` of the batch draws its masks from `seed` mixed with `i`.
    Train { seed: u64 },
}

impl Mode {
    fn sequence_rng(self, position: usize) -> Option<ChaCha8Rng> {
        match self {
            Mode::Eval => None,
            Mode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(
                seed ^ (position as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            )),
        }
    }
}

/// All trainable parameters, stored flat in [`Layout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierState {
    config: ModelConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl ClassifierState {
    /// Deterministic initialization from `config.seed`: weights and
    /// embeddings ~ N(0, 0.02²), biases 0, layer-norm gains 1.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("positive std");
        let mut params = vec![0.0; layout.total()];
        for spec in layout.specs() {
            let slot = &mut params[spec.offset..spec.offset + spec.len()];
            match spec.init {
                layout::Init::Normal => slot.iter_mut().for_each(|p| *p = normal.sample(&mut rng)),
                layout::Init::Ones => slot.fill(1.0),
                layout::Init::Zeros => {}
            }
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub(crate) fn from_parts(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                layout.total(),
                params.len()
            )));
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Positions that take part in attention, after checking shape and ids.
    fn active_positions(&self, seq: &TokenizedSequence) -> Result<Vec<usize>> {
        let cfg = &self.config;
        if seq.input_ids.len() != cfg.pad_len || seq.attention_mask.len() != cfg.pad_len {
            return Err(Error::Input(format!(
                "sequence length {} / mask length {} does not match pad_len {}",
                seq.input_ids.len(),
                seq.attention_mask.len(),
                cfg.pad_len
            )));
        }
        if let Some(&bad) = seq.input_ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
            return Err(Error::Input(format!(
                "token id {bad} out of range for vocab_size {}",
                cfg.vocab_size
            )));
        }
        if seq.attention_mask.iter().any(|&m| m > 1) {
            return Err(Error::Input("attention mask entries must be 0 or 1".into()));
        }
        if seq.attention_mask[0] != 1 {
            return Err(Error::Input("position 0 ([CLS]) must be unmasked".into()));
        }
        Ok(seq
            .attention_mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m == 1)
            .map(|(i, _)| i)
            .collect())
    }

    /// Evaluation-mode logits, one vector per sequence.
    pub fn forward(&self, batch: &[TokenizedSequence]) -> Result<Vec<Logits>> {
        batch
            .par_iter()
            .map(|seq| self.forward_one(seq, Mode::Eval))
            .collect()
    }

    pub fn forward_one(&self, seq: &TokenizedSequence, mode: Mode) -> Result<Logits> {
        let active = self.active_positions(seq)?;
        let mut rng = mode.sequence_rng(0);
        let cache = encoder::forward(self, &seq.input_ids, &active, rng.as_mut());
        Ok(Logits(cache.logits))
    }

    /// Mean batch loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(
        &self,
        batch: &[TokenizedSequence],
        targets: &[TargetVector],
        mode: Mode,
    ) -> Result<(f64, Vec<f64>)> {
        if batch.len() != targets.len() || batch.is_empty() {
            return Err(Error::Input(format!(
                "batch of {} sequences and {} targets",
                batch.len(),
                targets.len()
            )));
        }
        if let Some(t) = targets
            .iter()
            .find(|t| t.labels.len() != self.config.num_relations)
        {
            return Err(Error::Input(format!(
                "target of length {} for {} relations",
                t.labels.len(),
                self.config.num_relations
            )));
        }
        let scale = 1.0 / batch.len() as f64;
        let partials: Vec<(f64, Vec<f64>)> = batch
            .par_chunks(GRAD_CHUNK)
            .zip(targets.par_chunks(GRAD_CHUNK))
            .enumerate()
            .map(|(c, (seqs, tgts))| {
                let mut grad = vec![0.0; self.params.len()];
                let mut total = 0.0;
                for (j, (seq, tgt)) in seqs.iter().zip(tgts).enumerate() {
                    let active = self.active_positions(seq)?;
                    let mut rng = mode.sequence_rng(c * GRAD_CHUNK + j);
                    let cache = encoder::forward(self, &seq.input_ids, &active, rng.as_mut());
                    total += loss(&Logits(cache.logits.clone()), tgt)?;
                    let dlogits = loss_grad(&cache.logits, tgt, scale);
                    encoder::backward(self, &cache, &dlogits, &mut grad);
                }
                Ok((total, grad))
            })
            .collect::<Result<_>>()?;
        let mut iter = partials.into_iter();
        let (mut total, mut grad) = iter.next().expect("non-empty batch");
        for (t, g) in iter {
            total += t;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        Ok((total * scale, grad))
    }
}

pub fn init(config: ModelConfig) -> Result<ClassifierState> {
    ClassifierState::init(config)
}

pub fn forward(state: &ClassifierState, batch: &[TokenizedSequence]) -> Result<Vec<Logits>> {
    state.forward(batch)
}

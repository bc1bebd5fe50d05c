//! Optimisation loop with periodic validation and best-checkpoint selection.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{EncodedPair, Parameters, Seq2SeqModel};
use super::vocab::{vocabulary_for_pairs, EOS};
use super::{ModelConfig, Optimizer};
use crate::error::{Error, Result};
use crate::pairing::TrainingPair;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Mixed into the seed so the shuffle stream differs from the init stream.
const SHUFFLE_STREAM: u64 = 0x5348_5546_464c_4521;

/// Validation quality: exact-match rate, then per-position token accuracy
/// as a tie-breaker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationScore {
    pub exact_match: f64,
    pub token_accuracy: f64,
}

impl PartialOrd for ValidationScore {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.exact_match.partial_cmp(&other.exact_match)? {
            Ordering::Equal => self.token_accuracy.partial_cmp(&other.token_accuracy),
            ord => Some(ord),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub step: usize,
    pub score: ValidationScore,
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum OptimizerState {
    Sgd,
    Adam { m: Parameters, v: Parameters, t: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState {
    /// Completed optimisation steps.
    pub step: usize,
    pub optimizer: OptimizerState,
    pub validation_history: Vec<ValidationPoint>,
    /// Step at which the returned parameters were captured.
    pub best_step: usize,
}

impl TrainingState {
    pub fn new(model: &Seq2SeqModel) -> Self {
        let optimizer = match model.config.optimizer {
            Optimizer::Sgd => OptimizerState::Sgd,
            Optimizer::Adam => {
                let zeros = Parameters::zeros(&model.config, model.vocabulary.len());
                OptimizerState::Adam { m: zeros.clone(), v: zeros, t: 0 }
            }
        };
        TrainingState { step: 0, optimizer, validation_history: Vec::new(), best_step: 0 }
    }
}

/// One gradient step on a batch of training pairs; returns the batch loss
/// computed before the update.
pub fn train_step(batch: &[TrainingPair], model: &mut Seq2SeqModel, state: &mut TrainingState) -> Result<f64> {
    let encoded: Vec<EncodedPair> = batch.iter().map(|p| model.encode_pair(p)).collect();
    train_step_encoded(&encoded, model, state)
}

pub fn train_step_encoded(batch: &[EncodedPair], model: &mut Seq2SeqModel, state: &mut TrainingState) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Config("training batch is empty".into()));
    }
    let (loss, mut grads) = model.loss_and_gradients(batch)?;
    let norm = grads.global_norm();
    if !loss.is_finite() || !norm.is_finite() {
        return Err(Error::Numerical { step: state.step + 1 });
    }
    if norm > model.config.clip_norm {
        grads.scale(model.config.clip_norm / norm);
    }
    let lr = model.config.learning_rate;
    match &mut state.optimizer {
        OptimizerState::Sgd => {
            for ((_, _, p), (_, _, g)) in model.params.tensors_mut().into_iter().zip(grads.tensors()) {
                for (pi, gi) in p.iter_mut().zip(g.iter()) {
                    *pi -= lr * gi;
                }
            }
        }
        OptimizerState::Adam { m, v, t } => {
            *t += 1;
            let c1 = 1.0 - ADAM_BETA1.powi(*t as i32);
            let c2 = 1.0 - ADAM_BETA2.powi(*t as i32);
            let params = model.params.tensors_mut();
            for ((((_, _, p), (_, _, g)), (_, _, m)), (_, _, v)) in
                params.into_iter().zip(grads.tensors()).zip(m.tensors_mut()).zip(v.tensors_mut())
            {
                for k in 0..p.len() {
                    m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g[k];
                    v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g[k] * g[k];
                    p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + ADAM_EPS);
                }
            }
        }
    }
    state.step += 1;
    Ok(loss)
}

/// Exact-match rate of greedy decodes against targets, and the fraction of
/// `target + EOS` positions predicted correctly.
pub fn exact_match(model: &Seq2SeqModel, pairs: &[EncodedPair]) -> Result<ValidationScore> {
    if pairs.is_empty() {
        return Ok(ValidationScore { exact_match: 0.0, token_accuracy: 0.0 });
    }
    let mut exact = 0usize;
    let (mut correct, mut total) = (0usize, 0usize);
    for pair in pairs {
        let mut out = model.translate(&pair.input)?;
        if out == pair.target {
            exact += 1;
        }
        out.push(EOS);
        total += pair.target.len() + 1;
        correct += pair.target.iter().chain(std::iter::once(&EOS)).zip(&out).filter(|(a, b)| a == b).count();
    }
    Ok(ValidationScore { exact_match: exact as f64 / pairs.len() as f64, token_accuracy: correct as f64 / total as f64 })
}

/// Seeded hold-out of `round(fraction × n)` pairs; both sides keep their
/// original relative order. At least one pair always stays in training.
pub fn split_validation(pairs: &[TrainingPair], fraction: f64, seed: u64) -> (Vec<TrainingPair>, Vec<TrainingPair>) {
    let n = pairs.len();
    let held = ((fraction * n as f64).round() as usize).min(n.saturating_sub(1));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_held = vec![false; n];
    for &i in &order[..held] {
        is_held[i] = true;
    }
    let (mut train, mut validation) = (Vec::new(), Vec::new());
    for (pair, held) in pairs.iter().zip(is_held) {
        if held { validation.push(pair.clone()) } else { train.push(pair.clone()) }
    }
    (train, validation)
}

/// Trains a fresh model on `pairs`. Every `iteration_steps` steps the
/// validation score is computed; training stops after `patience` checks
/// without improvement or at `max_steps`, and the best-scoring parameters
/// are returned. With no validation pairs the final parameters are returned.
pub fn train(
    pairs: &[TrainingPair],
    validation: &[TrainingPair],
    config: &ModelConfig,
) -> Result<(Seq2SeqModel, TrainingState)> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let vocabulary = vocabulary_for_pairs(pairs, config.min_count)?;
    let mut model = Seq2SeqModel::new(config.clone(), vocabulary)?;
    let mut state = TrainingState::new(&model);
    let train_set: Vec<EncodedPair> = pairs.iter().map(|p| model.encode_pair(p)).collect();
    let valid_set: Vec<EncodedPair> = validation.iter().map(|p| model.encode_pair(p)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut cursor = order.len();
    let batch_size = config.batch_size.min(train_set.len());

    let mut best: Option<(ValidationScore, Parameters)> = None;
    let mut stale = 0usize;
    while state.step < config.max_steps {
        let until = (state.step + config.iteration_steps).min(config.max_steps);
        while state.step < until {
            let mut batch = Vec::with_capacity(batch_size);
            while batch.len() < batch_size {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                batch.push(train_set[order[cursor]].clone());
                cursor += 1;
            }
            train_step_encoded(&batch, &mut model, &mut state)?;
        }
        if valid_set.is_empty() {
            state.best_step = state.step;
            continue;
        }
        let score = exact_match(&model, &valid_set)?;
        state.validation_history.push(ValidationPoint { step: state.step, score });
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, model.params.clone()));
            state.best_step = state.step;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok((model, state))
}

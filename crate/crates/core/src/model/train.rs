//! Mini-batch SGD on the marginal loss with gradient-norm clipping and
//! step-size decay when the held-out loss stops improving.

use super::{Model, ModelError, Parameters};
use crate::corpus::{Problem, SourceSeq};
use crate::dsl::{AnswerOptions, Program};
use crate::induction::InducedProgramSet;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Clone, Debug)]
pub struct TrainExample {
    pub x: SourceSeq,
    pub options: AnswerOptions,
    pub programs: Vec<Program>,
}

/// Pairs problems with up to `k` induced programs each, explained programs
/// first. Returns the examples and the number skipped for having no program.
pub fn training_examples(problems: &[Problem], sets: &[InducedProgramSet], k: usize) -> (Vec<TrainExample>, usize) {
    let mut out = Vec::with_capacity(problems.len());
    let mut skipped = 0;
    for (p, set) in problems.iter().zip(sets) {
        let mut progs: Vec<_> = set.programs.iter().collect();
        progs.sort_by_key(|p| p.fallbacks);
        let programs: Vec<Program> = progs.into_iter().take(k).map(|p| p.program.clone()).collect();
        if programs.is_empty() {
            skipped += 1;
            log::warn!("no induced program for question {:?}; skipped", p.question);
            continue;
        }
        out.push(TrainExample { x: p.source(), options: AnswerOptions::new(&p.options), programs });
    }
    (out, skipped)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop once the mean training loss per example falls below this.
    pub target_loss: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { epochs: 10, batch_size: 8, seed: 0, target_loss: None }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub epochs_run: usize,
    /// Mean training loss per example, per epoch.
    pub epoch_losses: Vec<f64>,
    pub dev_losses: Vec<f64>,
    pub final_lr: f64,
}

fn mean_loss(model: &Model, data: &[TrainExample]) -> Result<f64, ModelError> {
    let losses = data
        .par_iter()
        .map(|e| model.marginal_loss(&e.x, &e.options, &e.programs, None).map(|o| o.loss))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Summed loss and gradient over a batch. Per-example work runs in parallel;
/// the reduction runs in batch order, so results do not depend on threads.
fn batch_gradient(model: &Model, batch: &[&TrainExample]) -> Result<(f64, Parameters), ModelError> {
    let parts = batch
        .par_iter()
        .map(|e| {
            let mut g = model.params.zeros_like();
            let out = model.marginal_loss(&e.x, &e.options, &e.programs, Some(&mut g))?;
            Ok((out.loss, g))
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    let mut total = model.params.zeros_like();
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        total.add_scaled(&g, 1.0);
    }
    Ok((loss, total))
}

pub fn train(
    model: &mut Model,
    data: &[TrainExample],
    dev: &[TrainExample],
    opts: &TrainOptions,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainSummary, ModelError> {
    model.config.validate()?;
    if data.is_empty() {
        return Err(ModelError::Invalid("no training examples".into()));
    }
    let bs = opts.batch_size.max(1);
    let mut lr = model.config.learning_rate;
    let mut best = f64::INFINITY;
    let mut summary = TrainSummary { steps: 0, epochs_run: 0, epoch_losses: vec![], dev_losses: vec![], final_lr: lr };
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..opts.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(bs) {
            let batch: Vec<&TrainExample> = chunk.iter().map(|&i| &data[i]).collect();
            let (loss, mut g) = batch_gradient(model, &batch)?;
            g.scale(1.0 / batch.len() as f64);
            let norm = g.sq_norm().sqrt();
            if norm > model.config.clip_norm {
                g.scale(model.config.clip_norm / norm);
            }
            model.params.add_scaled(&g, -lr);
            if !model.params.is_finite() {
                return Err(ModelError::Invalid(format!("non-finite parameters after step {}", summary.steps)));
            }
            summary.steps += 1;
            epoch_loss += loss;
            if let Some(w) = log.as_deref_mut() {
                let rec = LogRecord { step: summary.steps, epoch, loss: loss / batch.len() as f64, grad_norm: norm, lr };
                writeln!(w, "{}", serde_json::to_string(&rec).expect("record serializes"))
                    .map_err(|e| ModelError::Invalid(format!("training log: {e}")))?;
            }
        }
        let train_loss = epoch_loss / data.len() as f64;
        summary.epoch_losses.push(train_loss);
        summary.epochs_run = epoch + 1;
        let watched = if dev.is_empty() { train_loss } else { mean_loss(model, dev)? };
        if !dev.is_empty() {
            summary.dev_losses.push(watched);
        }
        if watched < best {
            best = watched;
        } else {
            lr *= model.config.lr_decay;
        }
        log::info!("epoch {epoch}: train loss {train_loss:.4}, watched {watched:.4}, lr {lr}");
        if opts.target_loss.is_some_and(|t| train_loss < t) {
            break;
        }
    }
    summary.final_lr = lr;
    Ok(summary)
}

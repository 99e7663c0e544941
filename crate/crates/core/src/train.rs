//! Per-sequence SGD loop shared by level pre-training and distillation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::rnn::{backprop, sgd_update, unroll, Record, RnnParams, UnrollTape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    /// Number of epochs the event rate is compared across.
    pub window: usize,
    /// Absolute change in event rate below which training stops.
    pub tolerance: f64,
    /// Never stop before this many epochs.
    #[serde(default)]
    pub min_epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub clip: Option<f64>,
    /// Train on at most this many sequences (the first ones of the corpus).
    pub max_sequences: Option<usize>,
    pub early_stop: Option<EarlyStop>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            lr: 0.1,
            clip: Some(5.0),
            max_sequences: None,
            early_stop: Some(EarlyStop {
                window: 20,
                tolerance: 0.01,
                min_epochs: 0,
            }),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// What an objective reports for one sequence.
#[derive(Debug, Clone, Default)]
pub struct SeqObjective {
    /// `∂loss/∂logits` per step, already normalised as the update should use it.
    pub logit_grads: Vec<Option<Vec<f64>>>,
    /// Summed primary loss (next-symbol cross-entropy) and its step count.
    pub loss: f64,
    pub loss_steps: usize,
    /// Summed auxiliary loss and its step count (zero when unused).
    pub aux_loss: f64,
    pub aux_steps: usize,
    /// Steps the surprise rule fires on, out of `loss_steps`.
    pub surprises: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean primary loss per step, one entry per epoch.
    pub loss: Vec<f64>,
    /// Mean auxiliary loss per step, one entry per epoch.
    pub aux_loss: Vec<f64>,
    /// Fraction of predicted steps that surprised, one entry per epoch.
    pub event_rate: Vec<f64>,
    /// Smallest clipping factor applied during each epoch (1 = never clipped).
    pub min_clip_factor: Vec<f64>,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn epochs_run(&self) -> usize {
        self.loss.len()
    }
}

/// Trains `params` with one SGD update per sequence, visiting sequences in a
/// freshly shuffled order every epoch. `objective(index, tape)` turns the
/// forward tape of sequence `index` into output gradients.
pub fn train_sequences<X, F>(
    params: &mut RnnParams,
    inputs: &[Vec<X>],
    cfg: &TrainConfig,
    rng: &mut Rng,
    mut objective: F,
) -> Result<TrainLog>
where
    X: AsRef<[f64]>,
    F: FnMut(usize, &UnrollTape) -> Result<SeqObjective>,
{
    cfg.validate()?;
    let n = cfg
        .max_sequences
        .map_or(inputs.len(), |m| m.min(inputs.len()));
    let h0 = vec![0.0; params.hidden_size()];
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = TrainLog::default();

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let (mut loss, mut steps, mut aux, mut aux_steps, mut surprises) = (0.0, 0usize, 0.0, 0usize, 0usize);
        let mut min_clip = 1.0f64;
        for &i in &order {
            if inputs[i].is_empty() {
                continue;
            }
            let tape = unroll(params, &inputs[i], &h0)?;
            let obj = objective(i, &tape)?;
            if !obj.loss.is_finite() || !obj.aux_loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            loss += obj.loss;
            steps += obj.loss_steps;
            aux += obj.aux_loss;
            aux_steps += obj.aux_steps;
            surprises += obj.surprises;
            if obj.loss_steps + obj.aux_steps == 0 {
                continue;
            }
            let bp = backprop(params, &tape, &obj.logit_grads, None, Record::default())?;
            let info = match sgd_update(params, &bp.grads, cfg.lr, cfg.clip) {
                Err(Error::NonFinite(_)) => return Err(Error::Divergence { epoch }),
                other => other?,
            };
            min_clip = min_clip.min(info.clip_factor);
        }
        if !params.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        log.loss.push(loss / steps.max(1) as f64);
        log.aux_loss.push(aux / aux_steps.max(1) as f64);
        log.event_rate.push(surprises as f64 / steps.max(1) as f64);
        log.min_clip_factor.push(min_clip);

        if let Some(es) = cfg.early_stop {
            let e = log.event_rate.len();
            if es.window > 0 && e > es.window && e >= es.min_epochs {
                let change = (log.event_rate[e - 1] - log.event_rate[e - 1 - es.window]).abs();
                if change < es.tolerance {
                    log.stopped_early = true;
                    break;
                }
            }
        }
    }
    Ok(log)
}

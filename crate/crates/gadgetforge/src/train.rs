//! Training loop: schedules, the gradient-descent update, per-epoch
//! evaluation, and best-checkpoint tracking.
//!
//! The optimizer is plain gradient descent with decoupled weight decay:
//! `θ ← θ − lr·(g + wd·θ)`. The learning rate follows one of two
//! schedules, both driven by a global step counter that runs over
//! `ceil(n/batch)·epochs` steps. Everything that involves chance — the
//! per-epoch shuffle and dropout masks — draws from rngs derived from the
//! run seed, so a run is exactly reproducible.

use std::path::Path;

use thiserror::Error;

use crate::eval::{aggregate, Confusion, EvalError, MetricSet, Summary};
use crate::nn::checkpoint::CheckpointError;
use crate::nn::models::{model_to_checkpoint, Classifier, ModelFamily};
use crate::nn::{write_checkpoint, NnError};
use crate::rng;
use crate::token::TokenSequence;

/// Salt for the per-epoch shuffle stream (xor-ed with the epoch number).
const SHUFFLE_SALT: u64 = 0x5348_5546;
/// Salt for the dropout-mask stream.
const DROPOUT_SALT: u64 = 0x4452_4f50;

/// Multiplicative factor of the stepwise schedule: a 6% cut per interval.
const STEPWISE_DECAY: f64 = 0.94;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("step {step} outside a schedule of {total} steps")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("training set is empty")]
    EmptyDataset,
    #[error(transparent)]
    Model(#[from] NnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// How the learning rate evolves over the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Ramp linearly from 0 to the base rate over the warmup steps, then
    /// decay linearly to 0 at the final step.
    Linear,
    /// Cut the base rate by 6% after every `warmup_steps`-sized interval
    /// (no ramp).
    Stepwise,
}

impl Schedule {
    pub fn as_str(self) -> &'static str {
        match self {
            Schedule::Linear => "linear",
            Schedule::Stepwise => "stepwise",
        }
    }

    pub fn parse(s: &str) -> Result<Self, TrainError> {
        match s {
            "linear" => Ok(Schedule::Linear),
            "stepwise" => Ok(Schedule::Stepwise),
            other => Err(TrainError::Model(NnError::ConfigMismatch(format!(
                "unknown schedule {other:?}"
            )))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub batch_size: usize,
    pub epochs: usize,
    pub schedule: Schedule,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1.0e-5,
            weight_decay: 0.06,
            warmup_steps: 500,
            batch_size: 16,
            epochs: 10,
            schedule: Schedule::Linear,
            seed: 1,
        }
    }
}

/// Conventional epoch budget per model family: recurrent models need far
/// more passes than the encoder to converge.
pub fn default_epochs(family: ModelFamily) -> usize {
    match family {
        ModelFamily::BiLstm => 100,
        ModelFamily::BiGru => 20,
        ModelFamily::Encoder => 10,
    }
}

/// Total optimizer steps in a run: full batches per epoch (the trailing
/// partial batch counts as one), times epochs.
pub fn total_iterations(samples: usize, epochs: usize, batch_size: usize) -> u64 {
    let per_epoch = samples.div_ceil(batch_size) as u64;
    per_epoch * epochs as u64
}

/// Learning rate at a given global step of a `total`-step run.
pub fn lr_at(cfg: &TrainConfig, step: u64, total: u64) -> Result<f64, TrainError> {
    if step >= total {
        return Err(TrainError::StepOutOfRange { step, total });
    }
    let warmup = cfg.warmup_steps;
    Ok(match cfg.schedule {
        Schedule::Linear => {
            if step < warmup {
                cfg.lr * step as f64 / warmup as f64
            } else if total - 1 <= warmup {
                // No room to decay: sit at the full rate.
                cfg.lr
            } else {
                cfg.lr * (total - 1 - step) as f64 / (total - 1 - warmup) as f64
            }
        }
        Schedule::Stepwise => match step.checked_div(warmup) {
            Some(intervals) => cfg.lr * STEPWISE_DECAY.powi(intervals as i32),
            None => cfg.lr,
        },
    })
}

/// One per-epoch row of the run log.
#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    /// Global steps completed by the end of this epoch.
    pub step: u64,
    /// Learning rate used at the last step of the epoch.
    pub lr: f64,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    /// Global metrics on the held-out split.
    pub eval: MetricSet,
}

/// What a training run produced.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub logs: Vec<EpochLog>,
    /// Epoch whose evaluation F1 was best (undefined F1 counts as 0).
    pub best_epoch: usize,
    pub best_f1: f64,
}

/// Predict every sample and aggregate one-vs-rest confusions for the
/// vulnerable classes.
pub fn evaluate(
    model: &dyn Classifier,
    data: &[(TokenSequence, u32)],
) -> Result<Summary, TrainError> {
    let mut preds = Vec::with_capacity(data.len());
    let mut labels = Vec::with_capacity(data.len());
    for (seq, label) in data {
        preds.push(model.predict(seq)?);
        labels.push(*label);
    }
    let classes = model.config().classes as u32;
    let confusions: Vec<(u32, Confusion)> = (1..classes)
        .map(|c| Confusion::tally(&preds, &labels, c).map(|conf| (c, conf)))
        .collect::<Result<_, _>>()?;
    Ok(aggregate(&confusions)?)
}

/// Run the full training loop.
///
/// Each epoch shuffles the training set with a seed derived from
/// `cfg.seed` and the epoch number, steps through batches with the
/// scheduled learning rate, then evaluates on `test_data`. The model state
/// with the best evaluation F1 so far is written to `checkpoint_path`
/// after each improving epoch.
pub fn train(
    model: &mut dyn Classifier,
    train_data: &[(TokenSequence, u32)],
    test_data: &[(TokenSequence, u32)],
    cfg: &TrainConfig,
    checkpoint_path: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    if train_data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let total = total_iterations(train_data.len(), cfg.epochs, cfg.batch_size);
    let mut dropout_rng = rng::seeded(cfg.seed, DROPOUT_SALT);
    let mut step: u64 = 0;
    let mut logs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64)> = None;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_data.len()).collect();
        let mut shuffle_rng = rng::seeded(cfg.seed, SHUFFLE_SALT ^ epoch as u64);
        rng::shuffle(&mut order, &mut shuffle_rng);

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        let mut last_lr = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let lr = lr_at(cfg, step, total)?;
            let batch: Vec<(&TokenSequence, u32)> = chunk
                .iter()
                .map(|&i| (&train_data[i].0, train_data[i].1))
                .collect();
            let (loss, grads) = model.loss_and_grads(&batch, Some(&mut dropout_rng))?;
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { step });
            }
            let wd = cfg.weight_decay;
            for (param, grad) in model.params_mut().into_iter().zip(&grads) {
                for (p, &g) in param.data_mut().iter_mut().zip(grad.data()) {
                    *p -= lr * (g + wd * *p);
                }
            }
            log::debug!("step {step}: lr {lr:.3e} loss {loss:.6}");
            epoch_loss += loss;
            batches += 1;
            last_lr = lr;
            step += 1;
        }

        let summary = evaluate(model, test_data)?;
        let eval = summary.global;
        let f1 = if eval.f1.defined { eval.f1.value } else { 0.0 };
        logs.push(EpochLog {
            epoch,
            step,
            lr: last_lr,
            loss: epoch_loss / batches as f64,
            eval,
        });
        log::info!(
            "epoch {epoch}: mean loss {:.6}, eval F1 {}",
            epoch_loss / batches as f64,
            eval.f1.display()
        );
        let improved = match best {
            None => true,
            Some((_, best_f1)) => f1 > best_f1,
        };
        if improved {
            best = Some((epoch, f1));
            if let Some(path) = checkpoint_path {
                write_checkpoint(path, &model_to_checkpoint(model))?;
            }
        }
    }
    let (best_epoch, best_f1) = best.unwrap_or((0, 0.0));
    Ok(TrainOutcome {
        logs,
        best_epoch,
        best_f1,
    })
}

pub const RUN_LOG_HEADER: &str =
    "epoch,step,lr,loss,eval_fpr,eval_fnr,eval_precision,eval_recall,eval_f1";

/// Render the per-epoch log as CSV. Undefined evaluation metrics print as
/// `n/a`.
pub fn run_log_csv(logs: &[EpochLog]) -> String {
    let cell = |m: &crate::eval::Metric| {
        if m.defined {
            m.value.to_string()
        } else {
            "n/a".to_string()
        }
    };
    let mut out = String::from(RUN_LOG_HEADER);
    out.push('\n');
    for l in logs {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            l.epoch,
            l.step,
            l.lr,
            l.loss,
            cell(&l.eval.fpr),
            cell(&l.eval.fnr),
            cell(&l.eval.precision),
            cell(&l.eval.recall),
            cell(&l.eval.f1),
        ));
    }
    out
}

use crate::data::{Dataset, Split, WindowBatch};
use crate::error::{Error, Result};
use crate::runtime::checkpoint::Checkpoint;
use crate::runtime::config::Config;
use crate::runtime::forward::{batch_labels, window_probabilities};
use crate::runtime::params::{bind_model, group_of, LrGroup, ModelParams};
use crate::tensor::{Adam, Tape};

/// Stop when the validation loss has not improved for `patience`
/// consecutive epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    epochs_since_best: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            epochs_since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.epochs_since_best = 0;
            StopDecision {
                improved: true,
                stop: false,
            }
        } else {
            self.epochs_since_best += 1;
            StopDecision {
                improved: false,
                stop: self.epochs_since_best >= self.patience,
            }
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    pub stopped_early: bool,
}

/// Train with default (silent) progress reporting.
pub fn train(config: &Config, dataset: &Dataset) -> Result<TrainOutcome> {
    train_with_progress(config, dataset, |_, _, _| {})
}

/// Full training loop: epochs iterate the train split's target timesteps
/// chronologically, batches never mix target timesteps, every batch takes
/// one Adam step (mapper logits at their own rate), and the checkpoint
/// with the lowest validation loss is returned.
pub fn train_with_progress(
    config: &Config,
    dataset: &Dataset,
    mut progress: impl FnMut(usize, f64, f64),
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.train.is_empty() || dataset.valid.is_empty() {
        return Err(Error::Training(
            "train and valid splits must be non-empty".into(),
        ));
    }
    let n_types = dataset.vocab.n_event_types;
    let mut params = ModelParams::init(config, dataset.vocab.n_entities, n_types)?;
    let mut adam = Adam::new();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best: Option<(ModelParams, Adam, usize)> = None;
    let mut train_losses = Vec::new();
    let mut val_losses = Vec::new();
    let mut stopped_early = false;

    let targets = dataset.target_timesteps(Split::Train);
    for epoch in 1..=config.max_epochs {
        let mut loss_sum = 0.0;
        let mut sample_count = 0usize;
        for &t in &targets {
            let queries = dataset.queries_at(Split::Train, t);
            let steps = dataset.window_steps(t, config.window)?;
            for (batch_idx, chunk) in queries.chunks(config.batch_size).enumerate() {
                let batch = WindowBatch {
                    target_t: t,
                    steps: steps.clone(),
                    queries: chunk.to_vec(),
                };
                let diag = |e: Error| {
                    Error::Training(format!(
                        "epoch {epoch}, target timestep {t}, batch {batch_idx}: {e}"
                    ))
                };
                let tape = Tape::new();
                let (model, bound) = bind_model(&tape, &params, config, true).map_err(diag)?;
                let probs =
                    window_probabilities(&tape, &model, config, dataset, &batch).map_err(diag)?;
                let labels = batch_labels(&batch.queries, n_types)?;
                let loss = tape.bce_loss(probs, &labels).map_err(diag)?;
                let loss_value = tape.value_of(loss).data()[0];
                if !loss_value.is_finite() {
                    return Err(diag(Error::NonFinite { op: "loss" }));
                }
                let grads = tape.backward(loss).map_err(diag)?;

                adam.begin_step();
                for (name, tensor) in params.visit_mut() {
                    let var = bound
                        .iter()
                        .find(|(n, _)| *n == name)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| Error::Training(format!("unbound parameter {name}")))?;
                    let grad = grads.wrt(var);
                    let lr = match group_of(&name) {
                        LrGroup::Mapper => config.lr_mapper,
                        LrGroup::Default => config.lr_default,
                    };
                    adam.update(&name, tensor, &grad, lr)?;
                }
                loss_sum += loss_value * chunk.len() as f64;
                sample_count += chunk.len();
            }
        }
        let train_loss = loss_sum / sample_count.max(1) as f64;
        let val_loss = split_loss(&params, config, dataset, Split::Valid)?;
        train_losses.push(train_loss);
        val_losses.push(val_loss);
        progress(epoch, train_loss, val_loss);

        let decision = stopper.observe(epoch, val_loss);
        if decision.improved {
            best = Some((params.clone(), adam.clone(), epoch));
        }
        if decision.stop {
            stopped_early = true;
            break;
        }
    }

    let (best_params, best_adam, best_epoch) =
        best.ok_or_else(|| Error::Training("no epoch completed".into()))?;
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: config.clone(),
            params: best_params,
            epoch: best_epoch,
            best_val_loss: stopper.best_loss(),
            adam: Some(best_adam),
        },
        train_losses,
        val_losses,
        stopped_early,
    })
}

/// Mean per-sample loss of a whole split, computed without gradients.
pub fn split_loss(
    params: &ModelParams,
    config: &Config,
    dataset: &Dataset,
    split: Split,
) -> Result<f64> {
    let n_types = dataset.vocab.n_event_types;
    let mut loss_sum = 0.0;
    let mut sample_count = 0usize;
    for t in dataset.target_timesteps(split) {
        let queries = dataset.queries_at(split, t);
        let steps = dataset.window_steps(t, config.window)?;
        for chunk in queries.chunks(config.batch_size) {
            let batch = WindowBatch {
                target_t: t,
                steps: steps.clone(),
                queries: chunk.to_vec(),
            };
            let tape = Tape::new();
            let (model, _) = bind_model(&tape, params, config, false)?;
            let probs = window_probabilities(&tape, &model, config, dataset, &batch)?;
            let labels = batch_labels(&batch.queries, n_types)?;
            let loss = tape.bce_loss(probs, &labels)?;
            loss_sum += tape.value_of(loss).data()[0] * chunk.len() as f64;
            sample_count += chunk.len();
        }
    }
    if sample_count == 0 {
        return Err(Error::Training(format!("split {split:?} has no targets")));
    }
    Ok(loss_sum / sample_count as f64)
}

//! Optimization recipes: losses, the epoch loop, checkpoint-worthy
//! reports, and the evaluation helpers behind the CLI.

mod metrics;
mod optim;

pub use metrics::{avg_precision, mae, roc_auc};
pub use optim::{
    adamw_step, clip_global_norm, lr_schedule, AdamWState, OptimizerKind, RopState,
    SchedulerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, CLIP_NORM,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    forward_bound, DropoutRng, ModelConfig, ModelParams, PreparedGraph, TaskKind,
};
use crate::tensor::{NodeId, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Mae,
    RocAuc,
    AvgPrecision,
}

impl MetricKind {
    pub fn higher_is_better(self) -> bool {
        !matches!(self, MetricKind::Mae)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
    pub scheduler: SchedulerKind,
    pub batch_size: usize,
    pub seed: u64,
    pub rop_factor: f64,
    pub rop_patience: usize,
    pub metric: MetricKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 950,
            warmup_epochs: 50,
            lr: 0.001,
            optimizer: OptimizerKind::Adamw,
            weight_decay: 0.0,
            scheduler: SchedulerKind::Cosine,
            batch_size: 32,
            seed: 42,
            rop_factor: 0.5,
            rop_patience: 10,
            metric: MetricKind::Mae,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::Config(format!("train.lr: {} not positive", self.lr)));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::Config(format!(
                "train.warmup_epochs: {} exceeds epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size: must be positive".to_string()));
        }
        if !(0.0..1.0).contains(&self.rop_factor) {
            return Err(Error::Config(format!(
                "train.rop_factor: {} outside (0, 1)",
                self.rop_factor
            )));
        }
        Ok(())
    }
}

/// Task loss on the tape: masked mean absolute error for regression,
/// masked sigmoid cross-entropy for multilabel classification. NaN targets
/// drop out of the mean.
pub fn loss(
    tape: &mut Tape<f64>,
    pred: NodeId,
    targets: &[f64],
    kind: TaskKind,
) -> Result<NodeId> {
    match kind {
        TaskKind::Regression => tape.masked_mae(pred, targets),
        TaskKind::Multilabel => tape.masked_bce(pred, targets),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub valid_metric: f64,
    pub lr: f64,
}

impl EpochRecord {
    /// Tab-separated log line: `epoch train_loss valid_loss valid_metric lr`.
    pub fn log_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.epoch, self.train_loss, self.valid_loss, self.valid_metric, self.lr
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: MetricKind,
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_metric: f64,
    /// Filled by the caller after a test-set evaluation.
    pub test_metric: Option<f64>,
}

impl MetricReport {
    pub fn log(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.log_line());
            out.push('\n');
        }
        out
    }
}

pub struct TrainOutcome {
    pub report: MetricReport,
    /// Parameters at the best validation epoch.
    pub best_params: ModelParams,
}

#[derive(Debug, Clone, Copy)]
pub struct Evaluation {
    pub loss: f64,
    pub metric: f64,
}

/// Mean loss and task metric of a parameter set over a dataset, dropout off.
pub fn evaluate(
    params: &ModelParams,
    model_cfg: &ModelConfig,
    set: &[PreparedGraph],
    metric: MetricKind,
) -> Result<Evaluation> {
    let mut preds = Vec::with_capacity(set.len());
    let mut total_loss = 0.0;
    let mut counted = 0usize;
    for prepared in set {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape)?;
        let mut rng = DropoutRng::new(0);
        let pred = forward_bound(
            &mut tape, prepared, params, &bound, model_cfg, false, &mut rng,
        )?;
        let pred_row = tape.data(pred).to_vec();
        let targets = prepared.graph.targets();
        if targets.iter().any(|t| !t.is_nan()) {
            let l = loss(&mut tape, pred, targets, model_cfg.task_kind)?;
            total_loss += tape.data(l)[0];
            counted += 1;
        }
        preds.push(pred_row);
    }
    if counted == 0 {
        return Err(Error::Contract(
            "evaluation set has no graphs with targets".to_string(),
        ));
    }
    let metric_value = dataset_metric(&preds, set, metric)?;
    Ok(Evaluation {
        loss: total_loss / counted as f64,
        metric: metric_value,
    })
}

/// Aggregate metric over per-graph predictions. MAE pools every present
/// entry; the ranking metrics score each task column and average the
/// defined ones (single-class columns are skipped).
pub fn dataset_metric(
    preds: &[Vec<f64>],
    set: &[PreparedGraph],
    metric: MetricKind,
) -> Result<f64> {
    match metric {
        MetricKind::Mae => {
            let flat_preds: Vec<f64> = preds.iter().flatten().copied().collect();
            let flat_targets: Vec<f64> = set
                .iter()
                .flat_map(|p| p.graph.targets().iter().copied())
                .collect();
            mae(&flat_preds, &flat_targets)
                .ok_or_else(|| Error::Contract("no targets present for MAE".to_string()))
        }
        MetricKind::RocAuc | MetricKind::AvgPrecision => {
            let n_tasks = preds.first().map_or(0, |p| p.len());
            let mut total = 0.0;
            let mut defined = 0usize;
            for task in 0..n_tasks {
                let mut scores = Vec::new();
                let mut labels = Vec::new();
                for (pred, prepared) in preds.iter().zip(set) {
                    let t = prepared.graph.targets()[task];
                    if !t.is_nan() {
                        scores.push(pred[task]);
                        labels.push(t > 0.5);
                    }
                }
                let value = match metric {
                    MetricKind::RocAuc => roc_auc(&scores, &labels),
                    _ => avg_precision(&scores, &labels),
                };
                if let Some(v) = value {
                    total += v;
                    defined += 1;
                }
            }
            if defined == 0 {
                return Err(Error::Contract(
                    "metric undefined for every task (single-class labels)".to_string(),
                ));
            }
            Ok(total / defined as f64)
        }
    }
}

/// A sample's loss value and its per-tensor gradients.
type SampleGrads = (f64, Vec<Vec<f64>>);

fn sample_grads(
    params: &ModelParams,
    model_cfg: &ModelConfig,
    prepared: &PreparedGraph,
    epoch: u64,
    sample: u64,
    seed: u64,
) -> Result<SampleGrads> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape)?;
    let mut rng = DropoutRng::for_sample(seed, epoch, sample);
    let pred = forward_bound(&mut tape, prepared, params, &bound, model_cfg, true, &mut rng)?;
    let l = loss(&mut tape, pred, prepared.graph.targets(), model_cfg.task_kind)?;
    let loss_value = tape.data(l)[0];
    tape.backward(l)?;
    Ok((loss_value, params.grads_from(&tape, &bound)))
}

/// Per-sample losses and gradients for a batch. With `threads > 1` samples
/// fan out across scoped threads; results always come back in sample order
/// and accumulate in that order, so the step is bit-identical to the
/// sequential one.
#[allow(clippy::too_many_arguments)]
fn batch_grads(
    params: &ModelParams,
    model_cfg: &ModelConfig,
    set: &[PreparedGraph],
    batch: &[usize],
    epoch: u64,
    seed: u64,
    threads: usize,
) -> Result<Vec<SampleGrads>> {
    if threads <= 1 || batch.len() <= 1 {
        return batch
            .iter()
            .map(|&i| sample_grads(params, model_cfg, &set[i], epoch, i as u64, seed))
            .collect();
    }
    let chunk = batch.len().div_ceil(threads);
    let mut results: Vec<Result<Vec<SampleGrads>>> = Vec::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = batch
            .chunks(chunk)
            .map(|ids| {
                scope.spawn(move || {
                    ids.iter()
                        .map(|&i| sample_grads(params, model_cfg, &set[i], epoch, i as u64, seed))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        for h in handles {
            results.push(h.join().expect("gradient worker panicked"));
        }
    });
    let mut out = Vec::with_capacity(batch.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Train in place, tracking the best validation epoch. Emits one record
/// per epoch (plus an initial evaluation at epoch zero) through `on_epoch`.
pub fn train_loop(
    params: &mut ModelParams,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train_set: &[PreparedGraph],
    valid_set: &[PreparedGraph],
    threads: usize,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(Error::Contract(
            "train and validation splits must be non-empty".to_string(),
        ));
    }

    let higher_better = train_cfg.metric.higher_is_better();
    let mut state = AdamWState::new(params);
    let mut rop = RopState::new();
    let mut records = Vec::with_capacity(train_cfg.epochs + 1);

    // Samples without any target cannot contribute a loss.
    let trainable: Vec<usize> = (0..train_set.len())
        .filter(|&i| train_set[i].graph.targets().iter().any(|t| !t.is_nan()))
        .collect();
    if trainable.is_empty() {
        return Err(Error::Contract(
            "training split has no graphs with targets".to_string(),
        ));
    }

    let initial_train = evaluate(params, model_cfg, train_set, train_cfg.metric)?;
    let initial_valid = evaluate(params, model_cfg, valid_set, train_cfg.metric)?;
    let first = EpochRecord {
        epoch: 0,
        train_loss: initial_train.loss,
        valid_loss: initial_valid.loss,
        valid_metric: initial_valid.metric,
        lr: 0.0,
    };
    on_epoch(&first);
    records.push(first);

    let mut best_epoch = 0;
    let mut best_metric = initial_valid.metric;
    let mut best_params = params.clone();

    for epoch in 1..=train_cfg.epochs {
        let lr_t = lr_schedule(epoch, train_cfg, &rop);

        let mut order = trainable.clone();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix(train_cfg.seed, epoch as u64));
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        for chunk in order.chunks(train_cfg.batch_size) {
            // Accumulation order is ascending sample index, independent of
            // the shuffle and the thread count.
            let mut batch = chunk.to_vec();
            batch.sort_unstable();
            let results = batch_grads(
                params,
                model_cfg,
                train_set,
                &batch,
                epoch as u64,
                train_cfg.seed,
                threads,
            )?;
            let scale = 1.0 / results.len() as f64;
            let mut grads: Vec<Vec<f64>> = params
                .tensors()
                .iter()
                .map(|t| vec![0.0; t.numel()])
                .collect();
            for (sample_loss, sample_grads) in &results {
                epoch_loss += sample_loss;
                for (acc, g) in grads.iter_mut().zip(sample_grads) {
                    for (a, &x) in acc.iter_mut().zip(g) {
                        *a += x * scale;
                    }
                }
            }
            clip_global_norm(&mut grads, CLIP_NORM);
            adamw_step(params, &grads, &mut state, lr_t, train_cfg.weight_decay)?;
        }
        let train_loss = epoch_loss / trainable.len() as f64;

        let valid = evaluate(params, model_cfg, valid_set, train_cfg.metric)?;
        rop.observe(valid.metric, higher_better, train_cfg);

        let record = EpochRecord {
            epoch,
            train_loss,
            valid_loss: valid.loss,
            valid_metric: valid.metric,
            lr: lr_t,
        };
        on_epoch(&record);
        records.push(record);

        let improved = if higher_better {
            valid.metric > best_metric
        } else {
            valid.metric < best_metric
        };
        if improved {
            best_metric = valid.metric;
            best_epoch = epoch;
            best_params = params.clone();
        }
    }

    Ok(TrainOutcome {
        report: MetricReport {
            metric: train_cfg.metric,
            records,
            best_epoch,
            best_valid_metric: best_metric,
            test_metric: None,
        },
        best_params,
    })
}

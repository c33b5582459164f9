//! Minibatch SGD training, per-epoch logging and overfitting diagnosis.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::label::LabelMap;
use crate::model::{
    backward, forward, forward_trace, predict_labels, NetworkGraph, ParamKind, ParamSet,
};
use crate::tensor::{softmax_ce_loss, Sgd, Tensor};

pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_OVERFIT_WINDOW: usize = 5;

/// Named batch-size/epoch regimes: `(name, batch_size, epochs)`.
pub const PRESETS: [(&str, usize, usize); 3] =
    [("bs17e70", 17, 70), ("bs2e70", 2, 70), ("bs1e7", 1, 7)];

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Validation runs on the first epoch, every `eval_every`-th epoch and the last one.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 1,
            epochs: 1,
            lr: DEFAULT_LR,
            momentum: DEFAULT_MOMENTUM,
            seed: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let (_, batch_size, epochs) =
            PRESETS.iter().find(|(n, _, _)| *n == name).ok_or_else(|| {
                let known: Vec<_> = PRESETS.iter().map(|p| p.0).collect();
                Error::Config(format!(
                    "unknown preset '{name}' (known: {})",
                    known.join(", ")
                ))
            })?;
        Ok(TrainConfig {
            batch_size: *batch_size,
            epochs: *epochs,
            ..TrainConfig::default()
        })
    }

    pub fn validate(&self, train_len: usize) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.eval_every == 0 {
            return Err(Error::Config(
                "batch_size, epochs and eval_every must be positive".into(),
            ));
        }
        if self.batch_size > train_len {
            return Err(Error::Config(format!(
                "batch_size {} exceeds the {train_len} training images",
                self.batch_size
            )));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!(
                "learning rate {} is invalid",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum {} must lie in [0, 1)",
                self.momentum
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

const LOG_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc";

impl TrainLog {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// Rows are numbered from 1.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{LOG_HEADER}\n");
        for (i, e) in self.epochs.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{:?},{:?},{:?},{:?}",
                i + 1,
                e.train_loss,
                e.train_acc,
                e.val_loss,
                e.val_acc
            );
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: "<train log>".into(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        if lines.next().map(|(_, l)| l) != Some(LOG_HEADER) {
            return Err(err(1, format!("expected header '{LOG_HEADER}'")));
        }
        let mut epochs = Vec::new();
        for (i, line) in lines {
            let v: Vec<f64> = line
                .split(',')
                .skip(1)
                .map(|f| {
                    f.parse()
                        .map_err(|_| err(i + 1, format!("bad number '{f}'")))
                })
                .collect::<Result<_>>()?;
            let [train_loss, train_acc, val_loss, val_acc] = v[..] else {
                return Err(err(i + 1, "expected 5 fields".into()));
            };
            epochs.push(EpochRecord {
                train_loss,
                train_acc,
                val_loss,
                val_acc,
            });
        }
        Ok(TrainLog { epochs })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Mean pixel loss and pixel accuracy of a dataset in inference mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalStats {
    pub loss: f64,
    pub pixel_accuracy: f64,
}

pub fn evaluate(graph: &NetworkGraph, params: &ParamSet, data: &Dataset) -> Result<EvalStats> {
    if data.is_empty() {
        return Err(Error::Evaluation("cannot evaluate an empty dataset".into()));
    }
    let per_sample: Vec<(f64, usize, usize)> = data
        .samples
        .par_iter()
        .map(|s| {
            let logits = forward(graph, params, &s.image)?;
            let (loss, _) = softmax_ce_loss(&logits, std::slice::from_ref(&s.label))?;
            let pred = predict_labels(&logits)?;
            let correct = pred[0]
                .values()
                .iter()
                .zip(s.label.values())
                .filter(|(a, b)| a == b)
                .count();
            Ok((loss, correct, s.label.values().len()))
        })
        .collect::<Result<_>>()?;
    let pixels: usize = per_sample.iter().map(|p| p.2).sum();
    let loss = per_sample
        .iter()
        .map(|&(l, _, n)| l * n as f64)
        .sum::<f64>()
        / pixels as f64;
    let correct: usize = per_sample.iter().map(|p| p.1).sum();
    Ok(EvalStats {
        loss,
        pixel_accuracy: correct as f64 / pixels as f64,
    })
}

fn check_data(graph: &NetworkGraph, data: &Dataset, what: &str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Config(format!("{what} set is empty")));
    }
    if data.num_classes != graph.config.num_classes {
        return Err(Error::Config(format!(
            "model predicts {} classes but the {what} set uses {}",
            graph.config.num_classes, data.num_classes
        )));
    }
    let want = graph.layers[0].shape;
    for (i, s) in data.samples.iter().enumerate() {
        let got = s.image.shape();
        if (got.n, got.c, got.h, got.w) != (1, want.c, want.h, want.w) {
            return Err(Error::Dimension(format!(
                "{what} sample {i} is {got}, model expects 1x{}x{}x{}",
                want.c, want.h, want.w
            )));
        }
    }
    Ok(())
}

/// One forward/backward pass over a batch; returns the loss and parameter gradients.
pub fn batch_gradients(
    graph: &NetworkGraph,
    params: &ParamSet,
    samples: &[&Sample],
) -> Result<(f64, ParamSet)> {
    let images: Vec<&Tensor> = samples.iter().map(|s| &s.image).collect();
    let labels: Vec<LabelMap> = samples.iter().map(|s| s.label.clone()).collect();
    let x = Tensor::stack(&images)?;
    let trace = forward_trace(graph, params, &x)?;
    let (loss, grad) = softmax_ce_loss(trace.logits(), &labels)?;
    let grads = backward(graph, params, &trace, &grad)?;
    Ok((loss, grads))
}

pub fn run_training(
    graph: &NetworkGraph,
    params: ParamSet,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ParamSet, TrainLog)> {
    run_training_with(graph, params, train, val, cfg, |_, _| {})
}

/// Trains for `cfg.epochs` epochs, calling `on_epoch(index, record)` after each.
///
/// Each epoch reshuffles the training order from a generator seeded once with
/// `cfg.seed`, steps through minibatches (the last one may be short), then
/// evaluates both sets without updating parameters.
pub fn run_training_with(
    graph: &NetworkGraph,
    mut params: ParamSet,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &EpochRecord),
) -> Result<(ParamSet, TrainLog)> {
    cfg.validate(train.len())?;
    check_data(graph, train, "training")?;
    check_data(graph, val, "validation")?;
    params.check_against(graph)?;

    let trainable: Vec<bool> = graph
        .params
        .iter()
        .map(|p| p.kind == ParamKind::Conv || graph.config.learn_upsampling)
        .collect();
    let opt = Sgd {
        lr: cfg.lr,
        momentum: cfg.momentum,
    };
    let mut velocity = params.zeros_like();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainLog::default();
    let mut last_val: Option<EvalStats> = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train.samples[i]).collect();
            let (loss, grads) = batch_gradients(graph, &params, &batch)?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    batch: b,
                    loss,
                });
            }
            params.sgd_step(&grads, &mut velocity, opt, &trainable)?;
        }

        let train_stats = evaluate(graph, &params, train)?;
        let due = epoch == 0 || (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs;
        let val_stats = match (due, last_val) {
            (false, Some(v)) => v,
            _ => evaluate(graph, &params, val)?,
        };
        last_val = Some(val_stats);
        let record = EpochRecord {
            train_loss: train_stats.loss,
            train_acc: train_stats.pixel_accuracy,
            val_loss: val_stats.loss,
            val_acc: val_stats.pixel_accuracy,
        };
        if ![record.train_loss, record.val_loss]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::Training {
                epoch,
                batch: order.len().div_ceil(cfg.batch_size),
                loss: record.train_loss,
            });
        }
        on_epoch(epoch, &record);
        log.epochs.push(record);
    }
    Ok((params, log))
}

/// First epoch `e` (0-based) where validation loss rises strictly at every
/// step of `[e, e + window]` while training loss never rises over the same span.
pub fn detect_overfitting(log: &TrainLog, window: usize) -> Result<Option<usize>> {
    if window == 0 {
        return Err(Error::Evaluation(
            "overfitting window must be positive".into(),
        ));
    }
    let n = log.len();
    if n < window + 1 {
        return Err(Error::Evaluation(format!(
            "log has {n} epochs, a window of {window} needs at least {}",
            window + 1
        )));
    }
    let e = &log.epochs;
    Ok((0..n - window).find(|&start| {
        (start..start + window)
            .all(|t| e[t + 1].val_loss > e[t].val_loss && e[t + 1].train_loss <= e[t].train_loss)
    }))
}

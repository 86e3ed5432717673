//! Mini-batch training with early stopping on a validation set.

use std::io::Write;

use log::debug;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{sample_negatives, seeded_rng, LabeledPair, TrainingCorpus};
use crate::encoders::{encode_concept, encode_property, EncoderParams, Gradients};
use crate::error::{Error, Result};
use crate::evaltasks::{prf_from_predictions, Prf};
use crate::linalg::{dot, log_sigmoid, sigmoid};
use crate::objectives::{grad_loss, masked_concept, CpBatch, InfoNceSampler, LossConfig, LossMode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub optimizer: Optimizer,
    pub loss_mode: LossMode,
    pub seed: u64,
    /// InfoNCE batches drawn per concept-property batch.
    pub pf_batches_per_step: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            batch_size: 128,
            max_epochs: 500,
            patience: 20,
            optimizer: Optimizer::adam(),
            loss_mode: LossMode::Faceted,
            seed: 0,
            pf_batches_per_step: 1,
        }
    }
}

impl TrainConfig {
    /// Learning rate and batch size used for BERT fine-tuning in the original setup.
    pub fn bert_hyperparameters() -> Self {
        Self {
            lr: 2e-5,
            batch_size: 32,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::InvalidArgument("patience must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidArgument("max_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMetric {
    /// F1 at threshold 0.5, higher is better.
    F1,
    /// Summed validation loss, lower is better.
    Loss,
}

impl ValidationMetric {
    fn improves(self, new: f64, best: f64) -> bool {
        match self {
            ValidationMetric::F1 => new > best,
            ValidationMetric::Loss => new < best,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub metric: ValidationMetric,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub stop_reason: StopReason,
}

impl TrainReport {
    /// One `{epoch, train_loss, val_metric}` object per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in &self.epochs {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Patience bookkeeping, epochs numbered from 1.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    metric: ValidationMetric,
    patience: usize,
    best: Option<(usize, f64)>,
}

impl EarlyStopping {
    pub fn new(metric: ValidationMetric, patience: usize) -> Self {
        Self {
            metric,
            patience,
            best: None,
        }
    }

    /// Records an epoch; returns whether it is the new best.
    pub fn observe(&mut self, epoch: usize, value: f64) -> bool {
        let better = match self.best {
            None => true,
            Some((_, b)) => self.metric.improves(value, b),
        };
        if better {
            self.best = Some((epoch, value));
        }
        better
    }

    pub fn should_stop(&self, epoch: usize) -> bool {
        matches!(self.best, Some((b, _)) if epoch - b >= self.patience)
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

struct OptState {
    m: Option<Gradients>,
    v: Option<Gradients>,
    t: i32,
}

impl OptState {
    fn new(opt: Optimizer, params: &EncoderParams) -> Self {
        match opt {
            Optimizer::Sgd => Self {
                m: None,
                v: None,
                t: 0,
            },
            Optimizer::Adam { .. } => Self {
                m: Some(Gradients::zeros_for(params)),
                v: Some(Gradients::zeros_for(params)),
                t: 0,
            },
        }
    }

    fn step(&mut self, opt: Optimizer, lr: f64, params: &mut EncoderParams, grads: &Gradients) {
        self.t += 1;
        match opt {
            Optimizer::Sgd => {
                for (p, g) in params.blocks_mut().into_iter().zip(grads.blocks()) {
                    for (x, d) in p.iter_mut().zip(g) {
                        *x -= lr * d;
                    }
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let (m, v) = (self.m.as_mut().unwrap(), self.v.as_mut().unwrap());
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                let blocks = params
                    .blocks_mut()
                    .into_iter()
                    .zip(grads.blocks())
                    .zip(m.blocks_mut().into_iter().zip(v.blocks_mut()));
                for ((p, g), (mb, vb)) in blocks {
                    for i in 0..p.len() {
                        mb[i] = beta1 * mb[i] + (1.0 - beta1) * g[i];
                        vb[i] = beta2 * vb[i] + (1.0 - beta2) * g[i] * g[i];
                        p[i] -= lr * (mb[i] / c1) / ((vb[i] / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Probability that `concept` has `property`.
pub fn predict(
    params: &EncoderParams,
    concept: usize,
    property: usize,
    mode: LossMode,
    mask_eps: f64,
) -> Result<f64> {
    Ok(sigmoid(score(params, concept, property, mode, mask_eps)?))
}

fn score(params: &EncoderParams, c: usize, p: usize, mode: LossMode, mask_eps: f64) -> Result<f64> {
    let prop = encode_property(params, p)?;
    let s = match mode {
        LossMode::Baseline => dot(&encode_concept(params, c)?, &prop),
        LossMode::Faceted => dot(&masked_concept(params, c, p, mask_eps)?.vec, &prop),
    };
    Ok(s)
}

/// Scores for labeled pairs, in input order.
pub fn predict_pairs(
    params: &EncoderParams,
    pairs: &[LabeledPair],
    mode: LossMode,
    mask_eps: f64,
) -> Result<Vec<f64>> {
    pairs
        .par_iter()
        .map(|lp| predict(params, lp.concept, lp.property, mode, mask_eps))
        .collect()
}

fn validation_metric(
    params: &EncoderParams,
    validation: &[LabeledPair],
    metric: ValidationMetric,
    mode: LossMode,
    mask_eps: f64,
) -> Result<f64> {
    match metric {
        ValidationMetric::F1 => {
            let probs = predict_pairs(params, validation, mode, mask_eps)?;
            let labels: Vec<bool> = validation.iter().map(|p| p.label).collect();
            let Prf { f1, .. } = prf_from_predictions(&probs, &labels, 0.5);
            Ok(f1)
        }
        ValidationMetric::Loss => {
            let scores: Vec<f64> = validation
                .par_iter()
                .map(|lp| score(params, lp.concept, lp.property, mode, mask_eps))
                .collect::<Result<_>>()?;
            Ok(scores
                .iter()
                .zip(validation)
                .map(|(s, lp)| {
                    if lp.label {
                        -log_sigmoid(*s)
                    } else {
                        -log_sigmoid(-*s)
                    }
                })
                .sum())
        }
    }
}

/// Trains `params` on `corpus` and returns the parameters of the best validation epoch.
pub fn train(
    corpus: &TrainingCorpus,
    params: EncoderParams,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    validation: &[LabeledPair],
) -> Result<(EncoderParams, TrainReport)> {
    cfg.validate()?;
    loss_cfg.validate()?;
    params.check_corpus(corpus)?;
    if corpus.cp_pairs().is_empty() {
        return Err(Error::EmptyInput("no concept-property training pairs".into()));
    }
    if cfg.loss_mode == LossMode::Faceted && corpus.pf_pairs().is_empty() {
        return Err(Error::EmptyInput(
            "faceted training needs property-facet pairs".into(),
        ));
    }
    if validation.is_empty() {
        return Err(Error::EmptyInput("validation set is empty".into()));
    }
    let has_pos = validation.iter().any(|p| p.label);
    let has_neg = validation.iter().any(|p| !p.label);
    let metric = if has_pos && has_neg {
        ValidationMetric::F1
    } else {
        ValidationMetric::Loss
    };

    let sampler = (cfg.loss_mode == LossMode::Faceted).then(|| InfoNceSampler::new(corpus));
    let mut rng = seeded_rng(cfg.seed);
    let mut params = params;
    let mut best_params = params.clone();
    let mut opt = OptState::new(cfg.optimizer, &params);
    let mut stopper = EarlyStopping::new(metric, cfg.patience);
    let mut epochs = Vec::new();
    let mut order: Vec<(usize, usize)> = corpus.cp_pairs().to_vec();
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut terms = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let negatives = sample_negatives(corpus, chunk, loss_cfg.n_neg_cp, &mut rng)?;
            let pf = match &sampler {
                Some(s) => s.sample(
                    corpus,
                    cfg.batch_size * cfg.pf_batches_per_step,
                    loss_cfg.n_neg_pf,
                    &mut rng,
                ),
                None => Vec::new(),
            };
            let batch = CpBatch {
                positives: chunk.to_vec(),
                negatives,
            };
            let (loss, mut grads) =
                grad_loss(&params, cfg.loss_mode, &batch, &pf, loss_cfg).map_err(|e| match e {
                    Error::NonFinite(msg) => Error::NonFinite(format!("epoch {epoch}, batch {b}: {msg}")),
                    other => other,
                })?;
            // mean over the batch's terms
            let n = (chunk.len() + pf.len()) as f64;
            for blk in grads.blocks_mut() {
                for g in blk.iter_mut() {
                    *g /= n;
                }
            }
            opt.step(cfg.optimizer, cfg.lr, &mut params, &grads);
            if !params.is_finite() {
                return Err(Error::NonFinite(format!(
                    "epoch {epoch}, batch {b}: parameters became non-finite"
                )));
            }
            epoch_loss += loss;
            terms += chunk.len() + pf.len();
        }
        let train_loss = epoch_loss / terms as f64;
        let val = validation_metric(&params, validation, metric, cfg.loss_mode, loss_cfg.mask_eps)?;
        debug!("epoch {epoch}: train_loss={train_loss:.6} val={val:.6}");
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_metric: val,
        });
        if stopper.observe(epoch, val) {
            best_params = params.clone();
        }
        if stopper.should_stop(epoch) {
            stop_reason = StopReason::Patience;
            break;
        }
    }
    let (best_epoch, best_metric) = stopper.best().expect("at least one epoch ran");
    Ok((
        best_params,
        TrainReport {
            metric,
            epochs,
            best_epoch,
            best_metric,
            stop_reason,
        },
    ))
}

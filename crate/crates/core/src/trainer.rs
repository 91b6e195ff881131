//! Pairwise BCE training with label-sharing positives and globally mined
//! negatives.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rrt_autograd::{clip_global_grad_norm, AdamW, AdamWConfig, Scalar, Tape};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptor::ImageRecord;
use crate::model::{bind, pair_logit, ModelError, ModelParams};
use crate::retrieval::{knn_search, GlobalIndex, RetrievalError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite loss at step {step} (lr {lr:e}, grad norm {grad_norm:e})")]
    NonFinite { step: usize, lr: f64, grad_norm: f64 },
    #[error("no anchor has a same-label partner")]
    NoTrainablePairs,
    #[error("empty pair list")]
    EmptyPairs,
    #[error("pair references image index {0} outside the training set")]
    BadPair(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Autograd(#[from] rrt_autograd::AutogradError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// ×0.1 after 60% and again after 80% of the epochs.
    Step,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Anchors per optimizer step; each contributes one positive and one
    /// negative pair.
    pub batch_size: usize,
    pub seed: u64,
    pub grad_clip_norm: Option<f64>,
    /// Negatives come from this many nearest global neighbors.
    pub neg_pool_size: usize,
    /// Caps the steps of one epoch; `None` runs through every anchor once.
    pub steps_per_epoch: Option<usize>,
    pub schedule: LrSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 4e-4,
            epochs: 15,
            batch_size: 16,
            seed: 0,
            grad_clip_norm: None,
            neg_pool_size: 100,
            steps_per_epoch: None,
            schedule: LrSchedule::Constant,
        }
    }
}

impl TrainConfig {
    /// Recipe for [`crate::ModelConfig::benchmark`] on the synthetic training split.
    pub fn benchmark(seed: u64) -> Self {
        Self {
            lr: 3e-3,
            epochs: 60,
            seed,
            grad_clip_norm: Some(1.0),
            steps_per_epoch: Some(75),
            schedule: LrSchedule::Step,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be a finite non-negative number");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be a finite non-negative number");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.neg_pool_size == 0 {
            return bad("epochs, batch_size and neg_pool_size must be positive");
        }
        if self.steps_per_epoch == Some(0) {
            return bad("steps_per_epoch must be positive");
        }
        if self.grad_clip_norm.is_some_and(|g| !(g > 0.0)) {
            return bad("grad_clip_norm must be positive");
        }
        Ok(())
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Step => {
                let e = epoch as f64;
                let n = self.epochs as f64;
                let drops = (e >= 0.6 * n) as i32 + (e >= 0.8 * n) as i32;
                self.lr * 0.1f64.powi(drops)
            }
        }
    }
}

/// A training pair by position in [`TrainSet::records`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairSample {
    pub anchor: usize,
    pub partner: usize,
    /// 1 for the same instance, 0 otherwise.
    pub label: u8,
}

/// Training images with their precomputed global neighbors.
#[derive(Debug, Clone)]
pub struct TrainSet {
    pub records: Vec<ImageRecord>,
    /// Indices of each image's nearest global neighbors, itself excluded.
    pub neighbors: Vec<Vec<usize>>,
    same_label: Vec<Vec<usize>>,
}

impl TrainSet {
    /// Mines `neg_pool_size` global neighbors per image by exact search.
    pub fn new(records: Vec<ImageRecord>, neg_pool_size: usize) -> Result<Self> {
        let index = GlobalIndex::build(&records)?;
        let k = neg_pool_size.min(records.len().saturating_sub(1));
        let pos: std::collections::HashMap<u32, usize> =
            records.iter().enumerate().map(|(i, r)| (r.id, i)).collect();
        let neighbors = (0..records.len())
            .into_par_iter()
            .map(|i| {
                let list = knn_search(&index, records[i].id, index.row(i), k)?;
                Ok(list.neighbors.iter().map(|n| pos[&n.id]).collect())
            })
            .collect::<Result<Vec<Vec<usize>>>>()?;
        Ok(Self::with_neighbors(records, neighbors))
    }

    pub fn with_neighbors(records: Vec<ImageRecord>, neighbors: Vec<Vec<usize>>) -> Self {
        let same_label = (0..records.len())
            .map(|i| {
                (0..records.len())
                    .filter(|&j| j != i && records[j].label == records[i].label)
                    .collect()
            })
            .collect();
        Self {
            records,
            neighbors,
            same_label,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Anchors that have at least one same-label partner.
    pub fn anchors(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.same_label[i].is_empty()).collect()
    }
}

/// One positive and one negative for `anchor`, or `None` when the anchor has
/// no same-label partner or nothing to contrast with.
///
/// The positive is uniform over the other images of the anchor's label. The
/// negative is uniform over differently labelled images among the anchor's
/// mined neighbors, or over all differently labelled images when the
/// neighbors share its label.
pub fn sample_pair(set: &TrainSet, anchor: usize, rng: &mut impl Rng) -> Option<(PairSample, PairSample)> {
    let same = &set.same_label[anchor];
    if same.is_empty() {
        return None;
    }
    let partner = same[rng.random_range(0..same.len())];
    let label = set.records[anchor].label;
    let pool: Vec<usize> = set.neighbors[anchor]
        .iter()
        .copied()
        .filter(|&j| set.records[j].label != label)
        .collect();
    let pool = if pool.is_empty() {
        (0..set.len()).filter(|&j| set.records[j].label != label).collect()
    } else {
        pool
    };
    if pool.is_empty() {
        return None;
    }
    let negative = pool[rng.random_range(0..pool.len())];
    Some((
        PairSample { anchor, partner, label: 1 },
        PairSample { anchor, partner: negative, label: 0 },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

pub fn write_loss_csv(history: &[StepLog], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "step,epoch,loss,grad_norm")?;
    for s in history {
        writeln!(out, "{},{},{:.9e},{:.9e}", s.step, s.epoch, s.loss, s.grad_norm)?;
    }
    Ok(())
}

const REDUCE_CHUNK: usize = 8;

/// Mean BCE over `pairs` and its gradient per parameter tensor. Pairs run in
/// parallel; gradients are summed in pair order so the result does not depend
/// on the thread count.
fn loss_and_grads<F: Scalar>(
    params: &ModelParams<F>,
    records: &[ImageRecord],
    pairs: &[PairSample],
) -> Result<(f64, Vec<Vec<F>>)> {
    let one = |p: &PairSample| -> Result<(f64, Vec<Vec<F>>)> {
        let a = records.get(p.anchor).ok_or(TrainError::BadPair(p.anchor))?;
        let b = records.get(p.partner).ok_or(TrainError::BadPair(p.partner))?;
        let mut tape = Tape::new();
        let w = bind(&mut tape, params);
        let z = pair_logit(&mut tape, &w, &params.config, a, b)?;
        let loss = tape.bce_with_logits(z, F::of_f64(p.label as f64))?;
        let value = tape.value(loss)[0].as_f64();
        let mut grads = tape.backward(loss)?;
        let g = w
            .named()
            .into_iter()
            .map(|(_, v)| grads.take(*v).expect("parameter gradient"))
            .collect();
        Ok((value, g))
    };
    let mut total = 0.0;
    let mut sum: Option<Vec<Vec<F>>> = None;
    for chunk in pairs.chunks(REDUCE_CHUNK) {
        let parts: Vec<(f64, Vec<Vec<F>>)> = chunk.par_iter().map(one).collect::<Result<_>>()?;
        for (l, g) in parts {
            total += l;
            match &mut sum {
                None => sum = Some(g),
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(g) {
                        a.iter_mut().zip(b).for_each(|(x, y)| *x = *x + y);
                    }
                }
            }
        }
    }
    let n = pairs.len();
    let mut grads = sum.ok_or(TrainError::EmptyPairs)?;
    let inv = F::of_f64(1.0 / n as f64);
    grads.iter_mut().flatten().for_each(|x| *x = *x * inv);
    Ok((total / n as f64, grads))
}

/// Optimizer state bound to one parameter set.
pub struct Trainer<F: Scalar> {
    pub optimizer: AdamW<F>,
    pub clip: Option<f64>,
    pub steps: usize,
}

impl<F: Scalar> Trainer<F> {
    pub fn new(params: &ModelParams<F>, cfg: &TrainConfig) -> Self {
        let optimizer = AdamW::new(
            AdamWConfig {
                lr: cfg.lr,
                weight_decay: cfg.weight_decay,
                ..AdamWConfig::default()
            },
            &params.tensors(),
        );
        Self {
            optimizer,
            clip: cfg.grad_clip_norm,
            steps: 0,
        }
    }

    /// One AdamW update on the mean loss of `pairs`; returns (loss, norm of
    /// the gradient before clipping).
    pub fn step(
        &mut self,
        params: &mut ModelParams<F>,
        records: &[ImageRecord],
        pairs: &[PairSample],
        lr: f64,
    ) -> Result<(f64, f64)> {
        if pairs.is_empty() {
            return Err(TrainError::EmptyPairs);
        }
        let (loss, grads) = loss_and_grads(params, records, pairs)?;
        params.zero_grad();
        for (t, g) in params.tensors_mut().into_iter().zip(&grads) {
            t.accumulate_grad(g)?;
        }
        let mut tensors = params.tensors_mut();
        let grad_norm = match self.clip {
            Some(max) => clip_global_grad_norm(&mut tensors, max),
            None => rrt_autograd::global_grad_norm(&tensors.iter().map(|t| &**t).collect::<Vec<_>>()),
        };
        let step = self.steps;
        if !loss.is_finite() || !grad_norm.is_finite() {
            return Err(TrainError::NonFinite { step, lr, grad_norm });
        }
        self.optimizer.set_lr(lr);
        self.optimizer.step(&mut tensors)?;
        drop(tensors);
        if !params.is_finite() {
            return Err(TrainError::NonFinite { step, lr, grad_norm });
        }
        self.steps += 1;
        Ok((loss, grad_norm))
    }
}

/// Trains `params` in place. `on_epoch` runs after every epoch with the
/// epoch index and the current parameters.
pub fn train<F: Scalar>(
    params: &mut ModelParams<F>,
    set: &TrainSet,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &ModelParams<F>) -> Result<()>,
) -> Result<Vec<StepLog>> {
    cfg.validate()?;
    let anchors = set.anchors();
    if anchors.is_empty() {
        return Err(TrainError::NoTrainablePairs);
    }
    if anchors.len() < set.len() {
        log::warn!("{} images have no same-label partner and are skipped", set.len() - anchors.len());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trainer = Trainer::new(params, cfg);
    let mut history = Vec::new();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at_epoch(epoch);
        let mut order = anchors.clone();
        order.shuffle(&mut rng);
        let batches = order.chunks(cfg.batch_size);
        let limit = cfg.steps_per_epoch.unwrap_or(usize::MAX);
        for batch in batches.take(limit) {
            let pairs: Vec<PairSample> = batch
                .iter()
                .filter_map(|&a| sample_pair(set, a, &mut rng))
                .flat_map(|(p, n)| [p, n])
                .collect();
            if pairs.is_empty() {
                continue;
            }
            let (loss, grad_norm) = trainer.step(params, &set.records, &pairs, lr)?;
            history.push(StepLog {
                step: trainer.steps - 1,
                epoch,
                loss,
                grad_norm,
            });
        }
        on_epoch(epoch, params)?;
    }
    Ok(history)
}

/// Mean BCE of the model over fixed pairs; parameters are untouched.
pub fn evaluate_loss<F: Scalar>(
    params: &ModelParams<F>,
    records: &[ImageRecord],
    pairs: &[PairSample],
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(TrainError::EmptyPairs);
    }
    let losses = pairs
        .par_iter()
        .map(|p| {
            let a = records.get(p.anchor).ok_or(TrainError::BadPair(p.anchor))?;
            let b = records.get(p.partner).ok_or(TrainError::BadPair(p.partner))?;
            let s = crate::model::score_pair(params, a, b)?;
            Ok(rrt_autograd::bce_with_logits(s.logit, p.label as f64))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

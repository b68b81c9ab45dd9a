//! Training loop shared by the pair classifiers.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{auroc, confusion_metrics, select_threshold, ScoredPair, DEFAULT_THRESHOLD};
use crate::nncore::{clip_grad_norm, Optimizer, OptimizerKind, Parameterized};
use crate::pairgen::{QuestionPair, Split};

pub const THREADS_ENV: &str = "DUPFORGE_THREADS";

/// Worker threads for scoring, from `DUPFORGE_THREADS` (default 1).
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

/// Runs `f` inside a pool of [`thread_count`] threads.
pub fn with_pool<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Epochs without a validation auROC improvement before stopping.
    pub patience: usize,
    pub clip_norm: f64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 10,
            lr: 1e-3,
            patience: 3,
            clip_norm: 5.0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config("batch_size and patience must be positive".into()));
        }
        if !(self.lr >= 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Config("lr must be >= 0 and clip_norm > 0".into()));
        }
        Ok(())
    }
}

/// A differentiable classifier over ordered question pairs.
pub trait PairModel: Parameterized<f32> + Clone + Sync {
    type Input: Sync;

    /// Duplicate probability for the ordered pair `(a, b)`.
    fn prob(&self, a: &Self::Input, b: &Self::Input) -> Result<f64>;

    /// BCE loss of the ordered pair; parameter gradients scaled by `scale`
    /// are accumulated into `grads`.
    fn loss_grad(
        &self,
        a: &Self::Input,
        b: &Self::Input,
        label: f32,
        scale: f32,
        grads: &mut Self,
    ) -> Result<f64>;

    /// Order-independent score: the mean of both orderings.
    fn score(&self, a: &Self::Input, b: &Self::Input) -> Result<f64> {
        Ok(0.5 * (self.prob(a, b)? + self.prob(b, a)?))
    }
}

fn lookup<'a, I>(inputs: &'a HashMap<u64, I>, id: u64) -> Result<&'a I> {
    inputs
        .get(&id)
        .ok_or_else(|| Error::Input(format!("pair references unknown question {id}")))
}

/// Symmetrized scores for `pairs`, in input order.
pub fn score_pairs<M: PairModel>(
    model: &M,
    inputs: &HashMap<u64, M::Input>,
    pairs: &[QuestionPair],
) -> Result<Vec<ScoredPair>> {
    with_pool(|| {
        pairs
            .par_iter()
            .map(|p| {
                let s = model.score(lookup(inputs, p.id_a)?, lookup(inputs, p.id_b)?)?;
                Ok(ScoredPair::new(p.id_a, p.id_b, s.clamp(0.0, 1.0), p.label))
            })
            .collect::<Result<Vec<_>>>()
    })?
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_auroc: Option<f64>,
    pub valid_accuracy: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<M> {
    /// Parameters from the epoch with the best validation auROC.
    pub model: M,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    /// Decision threshold selected on the validation split.
    pub threshold: f64,
}

/// Mini-batch Adam (or SGD) on BCE over the train split, early-stopped on
/// validation auROC. Each training pair is presented in a seeded random
/// orientation so the model sees both concatenation orders.
pub fn train_pairs<M: PairModel>(
    mut model: M,
    inputs: &HashMap<u64, M::Input>,
    pairs: &[QuestionPair],
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome<M>> {
    config.validate()?;
    let mut train: Vec<QuestionPair> =
        pairs.iter().copied().filter(|p| p.split == Some(Split::Train)).collect();
    let valid: Vec<QuestionPair> =
        pairs.iter().copied().filter(|p| p.split == Some(Split::Valid)).collect();
    if train.is_empty() {
        return Err(Error::EmptyInput("train split has no pairs".into()));
    }
    for p in train.iter().chain(&valid) {
        lookup(inputs, p.id_a)?;
        lookup(inputs, p.id_b)?;
    }
    if valid.is_empty() {
        log::warn!("validation split is empty; keeping the final epoch and threshold 0.5");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opt = Optimizer::new(config.optimizer, config.lr);
    let mut grads = model.zeros_like();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, M)> = None;
    let mut since_best = 0;

    for epoch in 1..=config.epochs {
        train.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in train.chunks(config.batch_size) {
            grads.zero();
            let scale = 1.0 / batch.len() as f32;
            for p in batch {
                let (a, b) = if rng.gen::<bool>() {
                    (p.id_a, p.id_b)
                } else {
                    (p.id_b, p.id_a)
                };
                total += model.loss_grad(
                    &inputs[&a],
                    &inputs[&b],
                    p.label as f32,
                    scale,
                    &mut grads,
                )?;
            }
            clip_grad_norm(&mut grads, config.clip_norm as f32);
            opt.step(&mut model, &grads)?;
        }
        let train_loss = total / train.len() as f64;
        if !train_loss.is_finite() || !model.all_finite() {
            return Err(Error::Input(format!("training diverged in epoch {epoch}")));
        }

        let (valid_auroc, valid_accuracy) = if valid.is_empty() {
            (None, None)
        } else {
            let scored = score_pairs(&model, inputs, &valid)?;
            let acc = confusion_metrics(&scored, DEFAULT_THRESHOLD)?.accuracy;
            (auroc(&scored).ok(), Some(acc))
        };
        log::info!(
            "train epoch={epoch} loss={train_loss:.6} valid_auroc={} valid_accuracy={}",
            valid_auroc.map_or("na".into(), |a| format!("{a:.6}")),
            valid_accuracy.map_or("na".into(), |a| format!("{a:.6}")),
        );
        history.push(EpochMetrics {
            epoch,
            train_loss,
            valid_auroc,
            valid_accuracy,
        });

        // without a defined auROC, later epochs are preferred
        let criterion = valid_auroc.or(valid_accuracy).unwrap_or(epoch as f64);
        if best.as_ref().map_or(true, |(c, _, _)| criterion > *c) {
            best = Some((criterion, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                log::info!("early stop after epoch {epoch}");
                break;
            }
        }
    }

    let (best_epoch, model) = match best {
        Some((_, e, m)) => (e, m),
        None => (0, model),
    };
    let threshold = if valid.is_empty() {
        DEFAULT_THRESHOLD
    } else {
        select_threshold(&score_pairs(&model, inputs, &valid)?)?
    };
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        threshold,
    })
}

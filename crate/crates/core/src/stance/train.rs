//! Training loop: seeded shuffling, scheduled AdamW steps, periodic
//! validation, and checkpoint selection by best validation accuracy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Article, Stance};

use super::feature::{featurize_article, EmbeddingStore};
use super::model::{loss_and_gradients, Mode, StanceModel};
use super::optim::{lr_at_step, AdamW};
use super::{BackendConfig, FeatureVector, Prediction, StanceError};

/// Default finetuning rate for the precomputed-embedding backend.
pub const FINETUNE_PEAK_LR: f64 = 5e-6;
/// A randomly initialized linear model needs a larger step.
pub const HASHED_PEAK_LR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub peak_lr: f64,
    pub epochs: usize,
    pub warmup_fraction: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Validation cadence in optimizer steps.
    pub eval_every: u64,
}

impl TrainConfig {
    pub fn for_backend(backend: &BackendConfig) -> Self {
        let peak_lr = match backend {
            BackendConfig::HashedNgram { .. } => HASHED_PEAK_LR,
            BackendConfig::PrecomputedEmbedding { .. } => FINETUNE_PEAK_LR,
        };
        TrainConfig {
            batch_size: 8,
            peak_lr,
            epochs: 4,
            warmup_fraction: 0.06,
            weight_decay: 0.01,
            seed: 0,
            eval_every: 200,
        }
    }
}

/// One optimizer step over a batch: exact gradients, scheduled learning
/// rate, decoupled decay. A non-finite loss aborts the run.
pub fn train_step(
    model: &mut StanceModel,
    optimizer: &mut AdamW,
    batch: &[(FeatureVector, Stance)],
    step: u64,
    total_steps: u64,
    cfg: &TrainConfig,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<f64, StanceError> {
    let (loss, grads) = loss_and_gradients(model, batch, dropout_rng)?;
    if !loss.is_finite() {
        return Err(StanceError::NonFiniteLoss { step });
    }
    let lr = lr_at_step(step, total_steps, cfg);
    optimizer.apply(model, &grads, lr, cfg.weight_decay);
    Ok(loss)
}

/// Fraction of examples whose predicted stance matches the label.
pub fn evaluate_accuracy(model: &StanceModel, set: &[(FeatureVector, Stance)]) -> f64 {
    if set.is_empty() {
        return 0.0;
    }
    let correct = set
        .iter()
        .filter(|(x, label)| {
            let (p_left, _) = model.forward(x, Mode::Eval).expect("dims fixed by caller");
            Prediction::stance_from_prob(p_left) == *label
        })
        .count();
    correct as f64 / set.len() as f64
}

/// Trains for `epochs` passes with seeded shuffling, evaluating on the
/// validation set every `eval_every` steps and once more at the end, and
/// returns the checkpoint with the highest validation accuracy (the earliest
/// such step on ties).
pub fn train(
    model: StanceModel,
    train_set: &[(FeatureVector, Stance)],
    val_set: &[(FeatureVector, Stance)],
    cfg: &TrainConfig,
) -> Result<StanceModel, StanceError> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(StanceError::EmptyDataset);
    }
    let first = train_set[0].1;
    if train_set.iter().all(|(_, s)| *s == first) {
        return Err(StanceError::SingleClassTrainingSet);
    }

    let mut model = model;
    let n = train_set.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size.max(1));
    let total_steps = (cfg.epochs * batches_per_epoch) as u64;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6d61_736b_7365_6564);
    let mut optimizer = AdamW::new(&model);

    let mut best: Option<(f64, u64, StanceModel)> = None;
    let evaluate_checkpoint =
        |model: &StanceModel, step: u64, best: &mut Option<(f64, u64, StanceModel)>| {
            let acc = evaluate_accuracy(model, val_set);
            let better = match best {
                Some((best_acc, _, _)) => acc > *best_acc,
                None => true,
            };
            if better {
                *best = Some((acc, step, model.clone()));
            }
        };

    let mut step = 0u64;
    for _epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<(FeatureVector, Stance)> =
                chunk.iter().map(|&i| train_set[i].clone()).collect();
            let rng = if model.dropout_p > 0.0 {
                Some(&mut dropout_rng)
            } else {
                None
            };
            train_step(
                &mut model,
                &mut optimizer,
                &batch,
                step,
                total_steps,
                cfg,
                rng,
            )?;
            step += 1;
            if cfg.eval_every > 0 && step.is_multiple_of(cfg.eval_every) {
                evaluate_checkpoint(&model, step, &mut best);
            }
        }
    }
    if cfg.eval_every == 0 || !total_steps.is_multiple_of(cfg.eval_every) {
        evaluate_checkpoint(&model, total_steps, &mut best);
    }

    let (best_acc, best_step, mut best_model) = best.expect("at least one evaluation ran");
    best_model.metadata.seed = cfg.seed;
    best_model.metadata.best_step = best_step;
    best_model.metadata.best_val_accuracy = best_acc;
    Ok(best_model)
}

/// Evaluation-mode prediction for one article.
pub fn predict(
    model: &StanceModel,
    article: &Article,
    store: Option<&EmbeddingStore>,
) -> Result<Prediction, StanceError> {
    let features = featurize_article(article, &model.backend, store)?;
    let (p_left, _) = model.forward(&features, Mode::Eval)?;
    Ok(Prediction {
        article_id: article.article_id.clone(),
        stance: Prediction::stance_from_prob(p_left),
        prob_left: p_left,
    })
}

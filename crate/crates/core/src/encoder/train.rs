//! Mini-batch gradient descent for the dual encoder.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::featurize::{featurize, FeaturizerConfig, SparseVec};
use super::{example_grad, EncoderModel};
use crate::corpus::Corpus;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub featurizer: FeaturizerConfig,
    /// Output dimension d.
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Negatives sampled per positive, resampled each epoch.
    pub negatives: usize,
    /// Also score the other in-batch positives as negatives. Off by
    /// default; sampled negatives are the documented behavior.
    pub in_batch_negatives: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            featurizer: FeaturizerConfig::default(),
            dim: 128,
            epochs: 15,
            batch_size: 32,
            learning_rate: 0.1,
            negatives: 100,
            in_batch_negatives: false,
            seed: 13,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: EncoderModel,
    /// Mean example loss per epoch, evaluated before each batch update.
    pub epoch_loss: Vec<f64>,
}

/// Train the shared-projection retriever on (xx, en) text pairs against a
/// pool of English negatives. Deterministic for a given seed; the parallel
/// path reduces per-example gradients in example order, so thread count
/// never changes the result.
pub fn train_retriever(
    pairs: &[(String, String)],
    en_negative_pool: &Corpus,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    run_training(None, pairs, en_negative_pool, cfg)
}

/// Continue training from an existing model instead of a fresh
/// initialization; the final-retriever schedule fine-tunes this way.
pub fn train_retriever_warm(
    init: &EncoderModel,
    pairs: &[(String, String)],
    en_negative_pool: &Corpus,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    run_training(Some(init.clone()), pairs, en_negative_pool, cfg)
}

fn run_training(
    init: Option<EncoderModel>,
    pairs: &[(String, String)],
    en_negative_pool: &Corpus,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    if pairs.is_empty() {
        return Err(Error::NoTrainingPairs);
    }
    if en_negative_pool.len() < cfg.negatives {
        return Err(Error::NegativePoolTooSmall {
            pool: en_negative_pool.len(),
            requested: cfg.negatives,
        });
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
    }

    let featurizer = match &init {
        Some(model) => model.featurizer.clone(),
        None => cfg.featurizer.clone(),
    };
    let queries: Vec<SparseVec> = pairs
        .iter()
        .map(|(xx, _)| featurize(&featurizer, xx))
        .collect::<Result<_>>()?;
    let positives: Vec<SparseVec> = pairs
        .iter()
        .map(|(_, en)| featurize(&featurizer, en))
        .collect::<Result<_>>()?;
    let pool: Vec<SparseVec> = en_negative_pool
        .passages()
        .iter()
        .map(|p| featurize(&featurizer, &p.text))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let (mut model, dim) = match init {
        Some(model) => {
            let dim = model.dim();
            (model, dim)
        }
        None => (init_model(cfg, &mut rng)?, cfg.dim),
    };
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng);
        let negative_draws: Vec<Vec<usize>> = order
            .iter()
            .map(|_| rand::seq::index::sample(&mut rng, pool.len(), cfg.negatives).into_vec())
            .collect();

        let mut loss_sum = 0.0;
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let batch_offset = batch_no * cfg.batch_size;
            let parts: Vec<_> = batch
                .par_iter()
                .enumerate()
                .map(|(slot, &ex)| {
                    let mut cands: Vec<&SparseVec> = Vec::with_capacity(1 + cfg.negatives);
                    cands.push(&positives[ex]);
                    for &n in &negative_draws[batch_offset + slot] {
                        cands.push(&pool[n]);
                    }
                    if cfg.in_batch_negatives {
                        for (other_slot, &other) in batch.iter().enumerate() {
                            if other_slot != slot {
                                cands.push(&positives[other]);
                            }
                        }
                    }
                    example_grad(&model, &queries[ex], &cands)
                })
                .collect();

            // Fixed-order reduction keeps N-thread runs bit-identical.
            let mut acc: std::collections::HashMap<u32, Vec<f64>> = Default::default();
            for (slot, part) in parts.iter().enumerate() {
                if !part.loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch: batch_no, loss: part.loss });
                }
                loss_sum += part.loss;
                for (j, gv) in &part.residual {
                    let col = acc.entry(*j).or_insert_with(|| vec![0.0; dim]);
                    for (cr, qr) in col.iter_mut().zip(&part.query_vec) {
                        *cr += qr * gv;
                    }
                }
                let query = &queries[batch[slot]];
                for (j, xv) in query.iter() {
                    let col = acc.entry(j).or_insert_with(|| vec![0.0; dim]);
                    for (cr, rr) in col.iter_mut().zip(&part.residual_vec) {
                        *cr += rr * xv;
                    }
                }
            }

            let step = cfg.learning_rate / batch.len() as f64;
            let cols = model.projection.cols;
            for (j, col) in acc {
                for (r, g) in col.into_iter().enumerate() {
                    model.projection.data[r * cols + j as usize] -= step * g;
                }
            }
        }
        let mean = loss_sum / pairs.len() as f64;
        epoch_loss.push(mean);
        if !model.projection.data.iter().all(|w| w.is_finite()) {
            return Err(Error::NonFiniteLoss { epoch, batch: 0, loss: mean });
        }
    }

    Ok(TrainResult { model, epoch_loss })
}

fn init_model(cfg: &TrainConfig, rng: &mut ChaCha20Rng) -> Result<EncoderModel> {
    let mut model = EncoderModel::new(cfg.featurizer.clone(), cfg.dim)?;
    let scale = 1.0 / (cfg.dim as f64).sqrt();
    for w in model.projection.data.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *w = z * scale;
    }
    Ok(model)
}

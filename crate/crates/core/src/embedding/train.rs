use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use super::elbo::{draw_noise, elbo, elbo_backward};
use super::model::VrnnModel;
use crate::error::{Error, Result};
use crate::fourhot::FourHotVector;
use crate::nn::{Adam, AdamConfig, ParamSet};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Rescale the batch gradient when its global L2 norm exceeds this.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 30, batch_size: 32, lr: 3e-4, seed: 0, clip_norm: None }
    }
}

/// Mean per-step ELBO after an epoch; epoch 0 is the untrained model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_elbo: f64,
    pub val_elbo: Option<f64>,
}

/// Mean per-step single-sample ELBO with noise frozen per track index.
pub fn evaluate_elbo(model: &VrnnModel, tracks: &[Vec<FourHotVector>], seed: u64) -> Result<f64> {
    let totals: Vec<(f64, usize)> = tracks
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let noise = draw_noise(model.latent_dim, t.len(), &mut substream(seed, "eval-noise", i as u64));
            elbo(model, t, &noise).map(|r| (r.total, t.len()))
        })
        .collect::<Result<_>>()?;
    let (sum, n) = totals.iter().fold((0.0, 0usize), |(s, n), &(t, k)| (s + t, n + k));
    Ok(sum / n.max(1) as f64)
}

/// Maximises the mean per-step ELBO with Adam. Deterministic given the
/// seed, the data order and the configuration.
pub fn train(
    model: &mut VrnnModel,
    train_set: &[Vec<FourHotVector>],
    val_set: &[Vec<FourHotVector>],
    cfg: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    if train_set.is_empty() || train_set.iter().any(Vec::is_empty) {
        return Err(Error::Config("training needs at least one non-empty track".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let mut adam = Adam::new(&model.params, AdamConfig::with_lr(cfg.lr));
    let mut rng = substream(cfg.seed, "train", 0);
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    let record = |model: &VrnnModel, epoch: usize| -> Result<EpochRecord> {
        let train_elbo = evaluate_elbo(model, train_set, cfg.seed)?;
        let val_elbo = if val_set.is_empty() { None } else { Some(evaluate_elbo(model, val_set, cfg.seed)?) };
        if !train_elbo.is_finite() || val_elbo.is_some_and(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite ELBO at epoch {epoch}")));
        }
        Ok(EpochRecord { epoch, train_elbo, val_elbo })
    };
    history.push(record(model, 0)?);

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let noise: Vec<Vec<Vec<f64>>> =
                batch.iter().map(|&i| draw_noise(model.latent_dim, train_set[i].len(), &mut rng)).collect();
            let steps: usize = batch.iter().map(|&i| train_set[i].len()).sum();
            let weight = 1.0 / steps as f64;
            let model_ref = &*model;
            let grads: Vec<_> = batch
                .par_iter()
                .zip(noise.par_iter())
                .map(|(&i, eps)| {
                    let mut g = model_ref.params.zeros_like();
                    elbo_backward(model_ref, &train_set[i], eps, weight, &mut g).map(|_| g)
                })
                .collect::<Result<_>>()?;
            let mut iter = grads.into_iter();
            let mut total = iter.next().expect("non-empty batch");
            for g in iter {
                for (a, b) in total.tensors_mut().into_iter().zip(g.tensors()) {
                    a.add_assign(b)?;
                }
            }
            if let Some(max) = cfg.clip_norm {
                let norm = total.tensors().iter().map(|t| t.sum_sq()).sum::<f64>().sqrt();
                if norm > max {
                    total.tensors_mut().into_iter().for_each(|t| t.scale(max / norm));
                }
            }
            adam.step(&mut model.params, &total).map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}: {m}")),
                other => other,
            })?;
        }
        history.push(record(model, epoch)?);
    }
    Ok(history)
}

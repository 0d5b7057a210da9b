//! Vessel-type identification from one day of hidden regimes.
//!
//! A track's regimes form an `H × 144` matrix (`H = hidden_dim +
//! latent_dim`, one column per 10-minute step). The CNN is
//!
//! ```text
//! standardise rows -> conv(H×k) relu -> conv(1×k) relu
//!   -> max-pool(1×pool) -> global average pool -> dense -> softmax(4)
//! ```
//!
//! trained with cross-entropy while the Embedding block stays frozen.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::embedding::{encode_grid, regimes, VrnnModel};
use crate::error::{shape_err, Error, Result};
use crate::ingest::{GridTrack, VesselType};
use crate::nn::conv::{global_avg_pool, global_avg_pool_backward, max_pool_last, max_pool_last_backward, Conv2d};
use crate::nn::tensor::softmax;
use crate::nn::{Activation, Adam, AdamConfig, Dense, ParamSet, Tensor};
use crate::rng::substream;

/// Ten-minute steps in one day.
pub const DAY_STEPS: usize = 144;
pub const N_CLASSES: usize = VesselType::CLASSES.len();

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeMatrix {
    pub track_id: u64,
    /// `[H, D]`, columns in time order.
    pub data: Tensor,
    pub label: Option<VesselType>,
    /// Columns computed from the track before padding.
    pub computed: usize,
}

impl RegimeMatrix {
    pub fn rows(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.data.shape()[1]
    }
}

/// Splits a grid track into consecutive one-day pieces, dropping pieces
/// without observations.
pub fn split_by_day(grid: &GridTrack) -> Vec<GridTrack> {
    grid.steps
        .chunks(DAY_STEPS)
        .enumerate()
        .filter(|(_, c)| c.iter().any(Option::is_some))
        .map(|(i, c)| {
            let first = c.iter().position(Option::is_some).expect("non-empty");
            let k = i * DAY_STEPS + first;
            GridTrack { id: grid.id, mmsi: grid.mmsi, t0: grid.time_of(k), dt: grid.dt, steps: c[first..].to_vec() }
        })
        .collect()
}

/// Regimes of (at most) one day, cropped or padded to [`DAY_STEPS`]
/// columns by repeating the last regime.
pub fn build_matrix(model: &VrnnModel, grid: &GridTrack) -> Result<RegimeMatrix> {
    if grid.observed() == 0 {
        return Err(Error::Domain(format!("track {} has no observations", grid.id)));
    }
    let codes = encode_grid(grid, model)?;
    let reg = regimes(model, &codes[..codes.len().min(DAY_STEPS)]);
    let h = model.hidden_dim + model.latent_dim;
    let computed = reg.len();
    let cols: Vec<Vec<f64>> = reg.iter().map(|r| r.concat()).collect();
    let mut data = vec![0.0; h * DAY_STEPS];
    for t in 0..DAY_STEPS {
        let col = &cols[t.min(computed - 1)];
        for r in 0..h {
            data[r * DAY_STEPS + t] = col[r];
        }
    }
    Ok(RegimeMatrix { track_id: grid.id, data: Tensor::new(vec![h, DAY_STEPS], data)?, label: grid.vessel_type(), computed })
}

pub fn build_matrices(model: &VrnnModel, grids: &[GridTrack]) -> Result<Vec<RegimeMatrix>> {
    grids.par_iter().map(|g| build_matrix(model, g)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnConfig {
    pub channels1: usize,
    pub channels2: usize,
    pub kernel: usize,
    pub pool: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig { channels1: 8, channels2: 8, kernel: 5, pool: 2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnClassifier {
    pub rows: usize,
    pub cols: usize,
    pub pool: usize,
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub dense: Dense,
    /// Per-row standardisation fitted on the training matrices.
    pub norm_mean: Tensor,
    pub norm_std: Tensor,
}

impl ParamSet for CnnClassifier {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![
            &self.conv1.kernels,
            &self.conv1.bias,
            &self.conv2.kernels,
            &self.conv2.bias,
            &self.dense.weight,
            &self.dense.bias,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.conv1.kernels,
            &mut self.conv1.bias,
            &mut self.conv2.kernels,
            &mut self.conv2.bias,
            &mut self.dense.weight,
            &mut self.dense.bias,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub class: VesselType,
    pub probs: Vec<f64>,
}

struct Trace {
    c1: crate::nn::conv::ConvCache,
    c2: crate::nn::conv::ConvCache,
    pooled_shape: Vec<usize>,
    pool_shape: Vec<usize>,
    argmax: Vec<usize>,
    dense: crate::nn::dense::DenseCache,
    probs: Vec<f64>,
}

impl CnnClassifier {
    pub fn new(rows: usize, cols: usize, cfg: &CnnConfig, seed: u64) -> Result<Self> {
        let k = cfg.kernel;
        if k == 0 || cfg.pool == 0 || cfg.channels1 == 0 || cfg.channels2 == 0 {
            return Err(Error::Config("CNN sizes must be >= 1".into()));
        }
        if cols < 2 * k - 1 + cfg.pool {
            return Err(Error::Config(format!("{cols} columns too few for kernel {k} and pool {}", cfg.pool)));
        }
        let mut rng = substream(seed, "cnn-init", 0);
        Ok(CnnClassifier {
            rows,
            cols,
            pool: cfg.pool,
            conv1: Conv2d::new(1, cfg.channels1, (rows, k), 1, Activation::Relu, &mut rng),
            conv2: Conv2d::new(cfg.channels1, cfg.channels2, (1, k), 1, Activation::Relu, &mut rng),
            dense: Dense::new(cfg.channels2, N_CLASSES, Activation::Identity, &mut rng),
            norm_mean: Tensor::zeros(&[rows]),
            norm_std: Tensor::filled(&[rows], 1.0),
        })
    }

    pub fn zeros_like(&self) -> Self {
        CnnClassifier {
            conv1: self.conv1.zeros_like(),
            conv2: self.conv2.zeros_like(),
            dense: self.dense.zeros_like(),
            ..self.clone()
        }
    }

    pub fn config(&self) -> CnnConfig {
        CnnConfig {
            channels1: self.conv1.kernels.shape()[0],
            channels2: self.conv2.kernels.shape()[0],
            kernel: self.conv1.kernels.shape()[3],
            pool: self.pool,
        }
    }

    /// Sets the standardisation from pooled row statistics of `matrices`.
    pub fn fit_normalisation(&mut self, matrices: &[RegimeMatrix]) {
        let (h, d) = (self.rows, self.cols);
        let n = (matrices.len() * d).max(1) as f64;
        let mut mean = vec![0.0; h];
        let mut sq = vec![0.0; h];
        for m in matrices {
            for r in 0..h {
                for &v in &m.data.data()[r * d..(r + 1) * d] {
                    mean[r] += v;
                    sq[r] += v * v;
                }
            }
        }
        for r in 0..h {
            mean[r] /= n;
            let var = (sq[r] / n - mean[r] * mean[r]).max(0.0);
            self.norm_std.data_mut()[r] = if var.sqrt() > 1e-8 { var.sqrt() } else { 1.0 };
        }
        self.norm_mean = Tensor::new(vec![h], mean).expect("rows");
    }

    fn check(&self, m: &RegimeMatrix) -> Result<()> {
        if m.data.shape() != [self.rows, self.cols] {
            return Err(shape_err!("matrix {:?} vs classifier input [{}, {}]", m.data.shape(), self.rows, self.cols));
        }
        Ok(())
    }

    fn standardise(&self, m: &RegimeMatrix) -> Tensor {
        let d = self.cols;
        let data = m
            .data
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| (v - self.norm_mean.data()[i / d]) / self.norm_std.data()[i / d])
            .collect();
        Tensor::new(vec![1, self.rows, d], data).expect("shape")
    }

    fn trace(&self, m: &RegimeMatrix) -> Result<Trace> {
        self.check(m)?;
        let x = self.standardise(m);
        let (a1, c1) = self.conv1.forward(&x)?;
        let (a2, c2) = self.conv2.forward(&a1)?;
        let (pooled, argmax) = max_pool_last(&a2, self.pool)?;
        let feat = global_avg_pool(&pooled);
        let (logits, dense) = self.dense.forward(&feat)?;
        Ok(Trace {
            c1,
            c2,
            pooled_shape: pooled.shape().to_vec(),
            pool_shape: a2.shape().to_vec(),
            argmax,
            dense,
            probs: softmax(&logits),
        })
    }

    pub fn predict_proba(&self, m: &RegimeMatrix) -> Result<Vec<f64>> {
        Ok(self.trace(m)?.probs)
    }

    pub fn predict(&self, m: &RegimeMatrix) -> Result<Prediction> {
        let probs = self.predict_proba(m)?;
        let best = argmax(&probs);
        Ok(Prediction { class: VesselType::CLASSES[best], probs })
    }

    /// Cross-entropy of one example; gradient of `weight · loss` added to `grad`.
    pub fn loss_backward(&self, m: &RegimeMatrix, label: usize, weight: f64, grad: &mut CnnClassifier) -> Result<f64> {
        let t = self.trace(m)?;
        let loss = -t.probs[label].max(1e-300).ln();
        let mut dlogits: Vec<f64> = t.probs.iter().map(|p| weight * p).collect();
        dlogits[label] -= weight;
        let dfeat = self.dense.backward(&t.dense, &dlogits, &mut grad.dense);
        let dpooled = global_avg_pool_backward(&t.pooled_shape, &dfeat);
        let da2 = max_pool_last_backward(&t.pool_shape, &t.argmax, &dpooled);
        let da1 = self.conv2.backward(&t.c2, &da2, &mut grad.conv2);
        self.conv1.backward(&t.c1, &da1, &mut grad.conv1);
        Ok(loss)
    }

    pub fn loss(&self, m: &RegimeMatrix, label: usize) -> Result<f64> {
        Ok(-self.predict_proba(m)?[label].max(1e-300).ln())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let c = self.config();
        let meta = vec![
            ("rows".to_string(), self.rows.to_string()),
            ("cols".to_string(), self.cols.to_string()),
            ("channels1".to_string(), c.channels1.to_string()),
            ("channels2".to_string(), c.channels2.to_string()),
            ("kernel".to_string(), c.kernel.to_string()),
            ("pool".to_string(), c.pool.to_string()),
            ("classes".to_string(), VesselType::CLASSES.map(|v| v.as_str()).join(",")),
        ];
        let mut tensors: Vec<(String, Tensor)> =
            CNN_PARAM_NAMES.iter().map(|n| n.to_string()).zip(self.tensors().into_iter().cloned()).collect();
        tensors.push(("norm.mean".into(), self.norm_mean.clone()));
        tensors.push(("norm.std".into(), self.norm_std.clone()));
        let mut w = BufWriter::new(File::create(path)?);
        Checkpoint { kind: "cnn".into(), meta, tensors }.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck = Checkpoint::read(File::open(path)?)?;
        if ck.kind != "cnn" {
            return Err(Error::Format(format!("checkpoint kind {:?} is not \"cnn\"", ck.kind)));
        }
        let rows: usize = ck.parse("rows")?;
        let cols: usize = ck.parse("cols")?;
        let cfg = CnnConfig {
            channels1: ck.parse("channels1")?,
            channels2: ck.parse("channels2")?,
            kernel: ck.parse("kernel")?,
            pool: ck.parse("pool")?,
        };
        let mut model = CnnClassifier::new(rows, cols, &cfg, 0).map_err(|e| Error::Format(e.to_string()))?;
        let mut names: Vec<&str> = CNN_PARAM_NAMES.to_vec();
        names.extend(["norm.mean", "norm.std"]);
        let mut shapes: Vec<Vec<usize>> = model.tensors().iter().map(|t| t.shape().to_vec()).collect();
        shapes.extend([vec![rows], vec![rows]]);
        let mut loaded = ck.take_tensors(&names, &shapes)?;
        model.norm_std = loaded.pop().expect("norm.std");
        model.norm_mean = loaded.pop().expect("norm.mean");
        for (dst, src) in model.tensors_mut().into_iter().zip(loaded) {
            *dst = src;
        }
        Ok(model)
    }
}

const CNN_PARAM_NAMES: [&str; 6] =
    ["conv1.kernels", "conv1.bias", "conv2.kernels", "conv2.bias", "dense.weight", "dense.bias"];

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) }).0
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig { epochs: 40, batch_size: 16, lr: 3e-3, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifierEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

fn labelled(matrices: &[RegimeMatrix]) -> Vec<(&RegimeMatrix, usize)> {
    matrices.iter().filter_map(|m| m.label.and_then(|l| l.class_index()).map(|c| (m, c))).collect()
}

/// Mean loss and accuracy over the labelled matrices.
pub fn loss_and_accuracy(cnn: &CnnClassifier, matrices: &[RegimeMatrix]) -> Result<(f64, f64)> {
    let data = labelled(matrices);
    if data.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let res: Vec<(f64, bool)> = data
        .par_iter()
        .map(|(m, c)| {
            let p = cnn.predict_proba(m)?;
            Ok((-p[*c].max(1e-300).ln(), argmax(&p) == *c))
        })
        .collect::<Result<_>>()?;
    let n = res.len() as f64;
    Ok((res.iter().map(|r| r.0).sum::<f64>() / n, res.iter().filter(|r| r.1).count() as f64 / n))
}

/// Trains a fresh classifier. History entry 0 is before any update.
pub fn train_classifier(
    matrices: &[RegimeMatrix],
    arch: &CnnConfig,
    cfg: &ClassifierTrainConfig,
) -> Result<(CnnClassifier, Vec<ClassifierEpoch>)> {
    let data = labelled(matrices);
    let mut classes: Vec<usize> = data.iter().map(|d| d.1).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::Config(format!("classifier training needs >= 2 classes, found {}", classes.len())));
    }
    let (rows, cols) = (data[0].0.rows(), data[0].0.cols());
    let mut cnn = CnnClassifier::new(rows, cols, arch, cfg.seed)?;
    cnn.fit_normalisation(matrices);
    let mut adam = Adam::new(&cnn, AdamConfig::with_lr(cfg.lr));
    let mut rng = substream(cfg.seed, "cnn-train", 0);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs + 1);
    let (loss, accuracy) = loss_and_accuracy(&cnn, matrices)?;
    history.push(ClassifierEpoch { epoch: 0, loss, accuracy });
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let w = 1.0 / batch.len() as f64;
            let grads: Vec<CnnClassifier> = batch
                .par_iter()
                .map(|&i| {
                    let mut g = cnn.zeros_like();
                    cnn.loss_backward(data[i].0, data[i].1, w, &mut g).map(|_| g)
                })
                .collect::<Result<_>>()?;
            let mut total = cnn.zeros_like();
            for g in &grads {
                for (t, s) in total.tensors_mut().into_iter().zip(g.tensors()) {
                    t.add_assign(s)?;
                }
            }
            adam.step(&mut cnn, &total)
                .map_err(|e| Error::Numeric(format!("classifier epoch {epoch}: {e}")))?;
        }
        let (loss, accuracy) = loss_and_accuracy(&cnn, matrices)?;
        history.push(ClassifierEpoch { epoch, loss, accuracy });
    }
    Ok((cnn, history))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub class: String,
    pub support: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: Option<f64>,
    pub macro_recall: Option<f64>,
    pub macro_f1: Option<f64>,
    /// Micro precision, recall and F1 coincide with accuracy for single-label data.
    pub micro_f1: Option<f64>,
    pub accuracy: Option<f64>,
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

fn defined_mean(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let xs: Vec<f64> = v.flatten().collect();
    crate::stats::mean(&xs)
}

/// Metrics from a square confusion matrix. A class absent from the truth
/// has undefined recall; one never predicted has undefined precision.
pub fn metrics_from_confusion(confusion: Vec<Vec<usize>>, names: &[&str]) -> Metrics {
    let n = confusion.len();
    let total: usize = confusion.iter().flatten().sum();
    let diag: usize = (0..n).map(|i| confusion[i][i]).sum();
    let per_class: Vec<ClassMetrics> = (0..n)
        .map(|c| {
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|r| r[c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = match (precision, recall) {
                (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
                (Some(_), Some(_)) => Some(0.0),
                _ => None,
            };
            ClassMetrics { class: names.get(c).unwrap_or(&"?").to_string(), support, precision, recall, f1 }
        })
        .collect();
    Metrics {
        macro_precision: defined_mean(per_class.iter().map(|m| m.precision)),
        macro_recall: defined_mean(per_class.iter().map(|m| m.recall)),
        macro_f1: defined_mean(per_class.iter().map(|m| m.f1)),
        micro_f1: ratio(diag, total),
        accuracy: ratio(diag, total),
        per_class,
        confusion,
    }
}

pub fn metrics_from_predictions(truth: &[usize], predicted: &[usize], n_classes: usize) -> Metrics {
    let mut conf = vec![vec![0; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        conf[t][p] += 1;
    }
    let names = VesselType::CLASSES.map(|v| v.as_str());
    metrics_from_confusion(conf, if n_classes == N_CLASSES { &names } else { &[] })
}

/// Metrics over the labelled matrices.
pub fn evaluate(cnn: &CnnClassifier, matrices: &[RegimeMatrix]) -> Result<Metrics> {
    let data = labelled(matrices);
    let predicted: Vec<usize> =
        data.par_iter().map(|(m, _)| cnn.predict_proba(m).map(|p| argmax(&p))).collect::<Result<_>>()?;
    let truth: Vec<usize> = data.iter().map(|d| d.1).collect();
    Ok(metrics_from_predictions(&truth, &predicted, N_CLASSES))
}

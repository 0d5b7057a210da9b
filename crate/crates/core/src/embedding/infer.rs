//! Inference with a trained Embedding block: stepwise likelihoods, hidden
//! regimes, importance-sampled sequence likelihoods and generative sampling.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::dist::{emission_logprob_active, emission_probs, Gaussian};
use super::model::VrnnModel;
use crate::error::Result;
use crate::fourhot::{encode, sample_block, FourHotVector, BLOCKS};
use crate::ingest::GridTrack;
use crate::nn::tensor::logsumexp;
use crate::nn::LstmState;
use crate::smc::{effective_sample_size, systematic_resample};

/// Recurrent state and latent variable at one grid step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HiddenRegime {
    pub h: Vec<f64>,
    pub z: Vec<f64>,
}

impl HiddenRegime {
    pub fn concat(&self) -> Vec<f64> {
        let mut v = self.h.clone();
        v.extend_from_slice(&self.z);
        v
    }
}

pub fn encode_grid(grid: &GridTrack, model: &VrnnModel) -> Result<Vec<Option<FourHotVector>>> {
    grid.steps.iter().map(|s| s.as_ref().map(|m| encode(m, &model.roi)).transpose()).collect()
}

pub fn sample_gaussian<R: Rng + ?Sized>(g: &Gaussian, rng: &mut R) -> Vec<f64> {
    g.mu.iter().zip(&g.sigma).map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Most probable bin of every block.
pub fn argmax_code(model: &VrnnModel, logits: &[f64]) -> FourHotVector {
    let sizes = model.roi.block_sizes();
    let off = model.roi.block_offsets();
    let mut bins = [0usize; BLOCKS];
    for b in 0..BLOCKS {
        let block = &logits[off[b]..off[b] + sizes[b]];
        bins[b] = block
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
            .0;
    }
    FourHotVector { bins }
}

/// One categorical draw per block from the Bernoulli emission probabilities.
pub fn sample_code<R: Rng + ?Sized>(model: &VrnnModel, logits: &[f64], rng: &mut R) -> FourHotVector {
    let sizes = model.roi.block_sizes();
    let off = model.roi.block_offsets();
    let probs = emission_probs(logits);
    let mut bins = [0usize; BLOCKS];
    for b in 0..BLOCKS {
        let block = &probs[off[b]..off[b] + sizes[b]];
        bins[b] = match sample_block(block, rng) {
            Ok(i) => i,
            // every probability underflowed: fall back to the largest logit
            Err(_) => argmax_code(model, logits).bins[b],
        };
    }
    FourHotVector { bins }
}

/// Sample from the generative model for one step with no observation:
/// `z ~ p(z|h)`, `x ~ p(x|z,h)`. Returns the sampled code and next state.
pub fn generate_step<R: Rng + ?Sized>(model: &VrnnModel, state: &LstmState, rng: &mut R) -> (FourHotVector, LstmState) {
    let prior = model.prior(&state.h);
    let z = sample_gaussian(&prior, rng);
    let (az, logits) = model.emission(&z, &state.h);
    let x = sample_code(model, &logits, rng);
    let ax = model.phi_x(&x);
    (x, model.advance(&ax, &az, state))
}

/// Particle cloud propagated with the filtering posterior as proposal.
pub(crate) struct Cloud {
    pub states: Vec<LstmState>,
    pub log_w: Vec<f64>,
}

impl Cloud {
    pub fn new(model: &VrnnModel, n: usize) -> Self {
        Cloud { states: vec![model.initial_state(); n], log_w: vec![0.0; n] }
    }

    /// Self-normalised estimate of `ln p(x | past)` with `z` from the prior.
    pub fn predictive_logprob<R: Rng + ?Sized>(&self, model: &VrnnModel, x: &FourHotVector, rng: &mut R) -> f64 {
        let active = x.active(&model.roi);
        let norm = logsumexp(&self.log_w);
        let terms: Vec<f64> = self
            .states
            .iter()
            .zip(&self.log_w)
            .map(|(s, w)| {
                let z = sample_gaussian(&model.prior(&s.h), rng);
                let (_, logits) = model.emission(&z, &s.h);
                w - norm + emission_logprob_active(&active, &logits)
            })
            .collect();
        logsumexp(&terms)
    }

    /// Condition on an observation: `z ~ q(z|x,h)`, weight by
    /// `p(x|z,h) p(z|h) / q(z|x,h)`, advance, resample when ESS < n/2.
    /// Returns the per-particle incremental log-weights.
    pub fn observe<R: Rng + ?Sized>(&mut self, model: &VrnnModel, x: &FourHotVector, rng: &mut R) -> Vec<f64> {
        let active = x.active(&model.roi);
        let ax = model.phi_x(x);
        let mut incr = Vec::with_capacity(self.states.len());
        for (s, w) in self.states.iter_mut().zip(self.log_w.iter_mut()) {
            let prior = model.prior(&s.h);
            let post = model.posterior(&ax, &s.h);
            let z = sample_gaussian(&post, rng);
            let (az, logits) = model.emission(&z, &s.h);
            let a = emission_logprob_active(&active, &logits) + prior.log_pdf(&z) - post.log_pdf(&z);
            *w += a;
            incr.push(a);
            *s = model.advance(&ax, &az, s);
        }
        incr
    }

    pub fn maybe_resample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<Vec<usize>> {
        let n = self.states.len();
        if effective_sample_size(&self.log_w) >= n as f64 / 2.0 {
            return None;
        }
        let idx = systematic_resample(&self.log_w, rng);
        self.states = idx.iter().map(|&i| self.states[i].clone()).collect();
        self.log_w = vec![0.0; n];
        Some(idx)
    }

    /// Propagate through a missing step by sampling the generative model.
    pub fn predict<R: Rng + ?Sized>(&mut self, model: &VrnnModel, rng: &mut R) -> Vec<FourHotVector> {
        self.states
            .iter_mut()
            .map(|s| {
                let (x, next) = generate_step(model, s, rng);
                *s = next;
                x
            })
            .collect()
    }
}

/// Per-step `ln p(x_t | x_<t)` estimates; `None` for missing steps, which
/// are bridged by sampling the prior and the emission.
pub fn stepwise_loglik<R: Rng + ?Sized>(
    model: &VrnnModel,
    steps: &[Option<FourHotVector>],
    n_samples: usize,
    rng: &mut R,
) -> Vec<Option<f64>> {
    let mut cloud = Cloud::new(model, n_samples.max(1));
    steps
        .iter()
        .map(|step| match step {
            Some(x) => {
                let lp = cloud.predictive_logprob(model, x, rng);
                cloud.observe(model, x, rng);
                cloud.maybe_resample(rng);
                Some(lp)
            }
            None => {
                cloud.predict(model, rng);
                None
            }
        })
        .collect()
}

/// `(timestamp, ln p)` for each observed step of a grid track.
pub fn stepwise_loglik_track<R: Rng + ?Sized>(
    model: &VrnnModel,
    grid: &GridTrack,
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<(i64, f64)>> {
    let codes = encode_grid(grid, model)?;
    Ok(stepwise_loglik(model, &codes, n_samples, rng)
        .into_iter()
        .enumerate()
        .filter_map(|(k, lp)| lp.map(|v| (grid.time_of(k), v)))
        .collect())
}

/// Hidden regimes on every grid step: posterior mean at observed steps,
/// prior mean (and the most probable code as input) at missing ones.
pub fn regimes(model: &VrnnModel, steps: &[Option<FourHotVector>]) -> Vec<HiddenRegime> {
    let mut state = model.initial_state();
    steps
        .iter()
        .map(|step| {
            let (ax, z, az) = match step {
                Some(x) => {
                    let ax = model.phi_x(x);
                    let z = model.posterior(&ax, &state.h).mu;
                    let (az, _) = model.emission(&z, &state.h);
                    (ax, z, az)
                }
                None => {
                    let z = model.prior(&state.h).mu;
                    let (az, logits) = model.emission(&z, &state.h);
                    (model.phi_x(&argmax_code(model, &logits)), z, az)
                }
            };
            let regime = HiddenRegime { h: state.h.clone(), z };
            state = model.advance(&ax, &az, &state);
            regime
        })
        .collect()
}

/// Importance-sampled `ln p(x_1:T)` with whole-sequence proposals from the
/// filtering posterior. Returns `(estimate, Monte-Carlo standard error)`.
pub fn is_loglik<R: Rng + ?Sized>(model: &VrnnModel, track: &[FourHotVector], n_samples: usize, rng: &mut R) -> (f64, f64) {
    let n = n_samples.max(1);
    let log_w: Vec<f64> = (0..n)
        .map(|_| {
            let mut state = model.initial_state();
            let mut lw = 0.0;
            for x in track {
                let ax = model.phi_x(x);
                let prior = model.prior(&state.h);
                let post = model.posterior(&ax, &state.h);
                let z = sample_gaussian(&post, rng);
                let (az, logits) = model.emission(&z, &state.h);
                lw += emission_logprob_active(&x.active(&model.roi), &logits) + prior.log_pdf(&z) - post.log_pdf(&z);
                state = model.advance(&ax, &az, &state);
            }
            lw
        })
        .collect();
    let estimate = logsumexp(&log_w) - (n as f64).ln();
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let r: Vec<f64> = log_w.iter().map(|w| (w - max).exp()).collect();
    let mean = r.iter().sum::<f64>() / n as f64;
    let var = if n > 1 { r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
    (estimate, (var / n as f64).sqrt() / mean)
}

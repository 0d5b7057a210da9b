use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::model::{StepCache, StepOutput, VrnnModel, VrnnParams};
use crate::error::{shape_err, Error, Result};
use crate::fourhot::FourHotVector;

/// Per-step decomposition of the evidence lower bound (nats).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ElboReport {
    pub recon: Vec<f64>,
    pub kl: Vec<f64>,
    pub total: f64,
}

impl ElboReport {
    pub fn steps(&self) -> usize {
        self.recon.len()
    }

    pub fn per_step(&self) -> f64 {
        self.total / self.steps().max(1) as f64
    }
}

/// Standard normal noise, one row per step.
pub fn draw_noise<R: Rng + ?Sized>(latent_dim: usize, steps: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..steps).map(|_| (0..latent_dim).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

fn check(model: &VrnnModel, track: &[FourHotVector], noise: &[Vec<f64>]) -> Result<()> {
    if track.is_empty() {
        return Err(Error::Domain("ELBO of an empty track".into()));
    }
    if noise.len() != track.len() {
        return Err(shape_err!("{} noise rows for {} steps", noise.len(), track.len()));
    }
    if let Some(bad) = noise.iter().find(|e| e.len() != model.latent_dim) {
        return Err(shape_err!("noise row of {} for latent_dim {}", bad.len(), model.latent_dim));
    }
    Ok(())
}

/// Single-sample ELBO `Σ_t [ln p(x_t|z_t,h_t) - KL(q_t ‖ p_t)]` with the
/// given reparameterisation noise.
pub fn elbo(model: &VrnnModel, track: &[FourHotVector], noise: &[Vec<f64>]) -> Result<ElboReport> {
    check(model, track, noise)?;
    let mut state = model.initial_state();
    let mut recon = Vec::with_capacity(track.len());
    let mut kl = Vec::with_capacity(track.len());
    for (x, eps) in track.iter().zip(noise) {
        let out = model.forward_step(&state, x, eps)?;
        let (r, k) = model.step_terms(&out, x);
        recon.push(r);
        kl.push(k);
        state = out.state;
    }
    let total = recon.iter().zip(&kl).map(|(r, k)| r - k).sum();
    Ok(ElboReport { recon, kl, total })
}

/// ELBO plus the gradient of `-weight · ELBO` accumulated into `grad`.
pub fn elbo_backward(
    model: &VrnnModel,
    track: &[FourHotVector],
    noise: &[Vec<f64>],
    weight: f64,
    grad: &mut VrnnParams,
) -> Result<ElboReport> {
    check(model, track, noise)?;
    let mut state = model.initial_state();
    let mut steps: Vec<(StepOutput, StepCache)> = Vec::with_capacity(track.len());
    let mut recon = Vec::with_capacity(track.len());
    let mut kl = Vec::with_capacity(track.len());
    for (x, eps) in track.iter().zip(noise) {
        let (out, cache) = model.forward_cached(&state, x, eps)?;
        let (r, k) = model.step_terms(&out, x);
        recon.push(r);
        kl.push(k);
        state = out.state.clone();
        steps.push((out, cache));
    }
    let mut dh = vec![0.0; model.hidden_dim];
    let mut dc = vec![0.0; model.hidden_dim];
    for (out, cache) in steps.iter().rev() {
        let (h, c) = model.backward_step(out, cache, weight, &dh, &dc, grad);
        dh = h;
        dc = c;
    }
    let total = recon.iter().zip(&kl).map(|(r, k)| r - k).sum();
    Ok(ElboReport { recon, kl, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::RoiConfig;
    use crate::nn::{gradient_check, ParamSet};
    use crate::rng::substream;

    fn tiny_roi() -> RoiConfig {
        RoiConfig {
            lat_min: 0.0,
            lat_max: 1.0,
            lon_min: 0.0,
            lon_max: 1.0,
            lat_bins: 5,
            lon_bins: 6,
            sog_bins: 4,
            cog_bins: 8,
            sog_max: 20.0,
            dt: 600,
        }
    }

    fn track() -> Vec<FourHotVector> {
        vec![
            FourHotVector { bins: [1, 2, 3, 4] },
            FourHotVector { bins: [2, 2, 3, 5] },
            FourHotVector { bins: [2, 3, 1, 7] },
        ]
    }

    #[test]
    fn report_is_consistent_and_deterministic() {
        let m = VrnnModel::new(tiny_roi(), 6, 3, 1).unwrap();
        let noise = draw_noise(3, 1, &mut substream(1, "n", 0));
        let a = elbo(&m, &track()[..1], &noise).unwrap();
        let b = elbo(&m, &track()[..1], &noise).unwrap();
        assert!(a.total.is_finite() && a.total < 0.0);
        assert_eq!(a.total.to_bits(), b.total.to_bits());
        assert!(a.kl.iter().all(|&k| k >= 0.0));
        assert!((a.total - (a.recon[0] - a.kl[0])).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_gives_posterior_mean() {
        let m = VrnnModel::new(tiny_roi(), 6, 3, 2).unwrap();
        let out = m.forward_step(&m.initial_state(), &track()[0], &[0.0; 3]).unwrap();
        assert_eq!(out.z, out.posterior.mu);
        assert!(out.prior.sigma.iter().chain(&out.posterior.sigma).all(|&s| s > 0.0));
    }

    #[test]
    fn shape_errors() {
        let m = VrnnModel::new(tiny_roi(), 6, 3, 2).unwrap();
        assert!(m.forward_step(&m.initial_state(), &track()[0], &[0.0; 2]).is_err());
        assert!(m.forward_step(&crate::nn::LstmState::zeros(5), &track()[0], &[0.0; 3]).is_err());
        assert!(elbo(&m, &track(), &draw_noise(3, 2, &mut substream(0, "n", 0))).is_err());
    }

    #[test]
    fn full_gradient_matches_finite_differences() {
        let mut m = VrnnModel::new(tiny_roi(), 5, 3, 3).unwrap();
        // zero biases put the first step's relus exactly on their kink
        let mut rng = substream(3, "bias", 0);
        for t in m.params.tensors_mut() {
            if t.shape().len() == 1 {
                for v in t.data_mut() {
                    *v += rng.gen_range(-0.3..0.3);
                }
            }
        }
        let tr = track();
        let noise = draw_noise(3, tr.len(), &mut substream(3, "n", 0));
        let mut grad = m.params.zeros_like();
        elbo_backward(&m, &tr, &noise, 1.0, &mut grad).unwrap();
        let err = gradient_check(
            |p: &VrnnParams| {
                let mut mm = m.clone();
                mm.params = p.clone();
                -elbo(&mm, &tr, &noise).unwrap().total
            },
            &m.params,
            &grad,
            1e-5,
            12,
        );
        assert!(err < 1e-4, "max relative error {err}");
    }
}

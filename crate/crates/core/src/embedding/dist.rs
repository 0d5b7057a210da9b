//! Closed-form pieces of the ELBO.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fourhot::FourHotVector;
use crate::ingest::RoiConfig;
use crate::nn::tensor::{sigmoid, softplus};

/// Diagonal Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl Gaussian {
    pub fn log_pdf(&self, z: &[f64]) -> f64 {
        self.mu
            .iter()
            .zip(&self.sigma)
            .zip(z)
            .map(|((m, s), v)| {
                let u = (v - m) / s;
                -0.5 * u * u - s.ln() - 0.5 * (2.0 * PI).ln()
            })
            .sum()
    }

    /// `mu + sigma ⊙ eps`.
    pub fn reparam(&self, eps: &[f64]) -> Vec<f64> {
        self.mu.iter().zip(&self.sigma).zip(eps).map(|((m, s), e)| m + s * e).collect()
    }
}

/// `KL(N(μq, σq²) ‖ N(μp, σp²))` summed over dimensions.
pub fn kl_gauss_diag(mu_q: &[f64], sigma_q: &[f64], mu_p: &[f64], sigma_p: &[f64]) -> Result<f64> {
    if sigma_q.iter().chain(sigma_p).any(|&s| !(s > 0.0)) {
        return Err(Error::Numeric("KL requires strictly positive sigma".into()));
    }
    Ok(kl_unchecked(mu_q, sigma_q, mu_p, sigma_p))
}

pub(crate) fn kl_unchecked(mu_q: &[f64], sigma_q: &[f64], mu_p: &[f64], sigma_p: &[f64]) -> f64 {
    let mut kl = 0.0;
    for k in 0..mu_q.len() {
        let d = mu_q[k] - mu_p[k];
        let vp = sigma_p[k] * sigma_p[k];
        kl += (sigma_p[k] / sigma_q[k]).ln() + (sigma_q[k] * sigma_q[k] + d * d) / (2.0 * vp) - 0.5;
    }
    kl.max(0.0)
}

/// Gradients of the KL w.r.t. `(μq, σq, μp, σp)`.
pub(crate) fn kl_grad(q: &Gaussian, p: &Gaussian) -> [Vec<f64>; 4] {
    let n = q.mu.len();
    let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for k in 0..n {
        let d = q.mu[k] - p.mu[k];
        let sp = p.sigma[k];
        let sq = q.sigma[k];
        let vp = sp * sp;
        out[0][k] = d / vp;
        out[1][k] = -1.0 / sq + sq / vp;
        out[2][k] = -d / vp;
        out[3][k] = 1.0 / sp - (sq * sq + d * d) / (vp * sp);
    }
    out
}

/// Independent-Bernoulli log-likelihood of a four-hot code:
/// `Σ_i x_i ln σ(l_i) + (1 - x_i) ln(1 - σ(l_i))`.
pub fn emission_logprob(x: &FourHotVector, logits: &[f64], roi: &RoiConfig) -> Result<f64> {
    if logits.len() != roi.code_len() {
        return Err(Error::Shape(format!("{} logits for code length {}", logits.len(), roi.code_len())));
    }
    Ok(emission_logprob_active(&x.active(roi), logits))
}

/// Same as [`emission_logprob`] given the set-bit positions directly.
/// Uses `x·l - softplus(l)` per bit.
pub fn emission_logprob_active(active: &[usize], logits: &[f64]) -> f64 {
    let base: f64 = logits.iter().map(|&l| -softplus(l)).sum();
    base + active.iter().map(|&i| logits[i]).sum::<f64>()
}

/// Bernoulli probabilities of each bit.
pub fn emission_probs(logits: &[f64]) -> Vec<f64> {
    logits.iter().map(|&l| sigmoid(l)).collect()
}

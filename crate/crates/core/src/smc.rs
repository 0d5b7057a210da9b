//! Particle-weight utilities shared by scoring and reconstruction.

use rand::Rng;

use crate::nn::tensor::logsumexp;

/// Normalised weights from log-weights.
pub fn normalized(log_w: &[f64]) -> Vec<f64> {
    let z = logsumexp(log_w);
    log_w.iter().map(|w| (w - z).exp()).collect()
}

pub fn effective_sample_size(log_w: &[f64]) -> f64 {
    let w = normalized(log_w);
    1.0 / w.iter().map(|x| x * x).sum::<f64>()
}

/// Systematic resampling: one uniform offset, `n` evenly spaced pointers
/// through the cumulative weights. Returns ancestor indices, length `n`.
pub fn systematic_resample<R: Rng + ?Sized>(log_w: &[f64], rng: &mut R) -> Vec<usize> {
    let n = log_w.len();
    let w = normalized(log_w);
    let u0: f64 = rng.gen::<f64>() / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cum = w[0];
    let mut i = 0;
    for k in 0..n {
        let u = u0 + k as f64 / n as f64;
        while u > cum && i + 1 < n {
            i += 1;
            cum += w[i];
        }
        out.push(i);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn preserves_count_and_follows_weights() {
        let mut rng = substream(1, "smc", 0);
        let lw = [0.0f64.ln(), 1.0f64.ln(), 3.0f64.ln(), 0.0f64.ln()];
        let idx = systematic_resample(&lw, &mut rng);
        assert_eq!(idx.len(), 4);
        assert_eq!(idx.iter().filter(|&&i| i == 1).count(), 1);
        assert_eq!(idx.iter().filter(|&&i| i == 2).count(), 3);
    }

    #[test]
    fn ess_bounds() {
        assert!((effective_sample_size(&[0.0; 8]) - 8.0).abs() < 1e-12);
        assert!((effective_sample_size(&[0.0, -1e9, -1e9]) - 1.0).abs() < 1e-12);
    }
}

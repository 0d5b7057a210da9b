//! Central finite-difference verification of analytic gradients.

use super::tensor::Tensor;

/// Collections of parameter tensors visited in a fixed order.
///
/// The same type doubles as its own gradient container.
pub trait ParamSet {
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }
}

impl ParamSet for Tensor {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![self]
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![self]
    }
}

impl ParamSet for Vec<Tensor> {
    fn tensors(&self) -> Vec<&Tensor> {
        self.iter().collect()
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.iter_mut().collect()
    }
}

/// `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps round-off on
/// vanishing gradients from reading as a large relative error.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Central differences of `f` at `x` for every coordinate.
pub fn gradient_check_fn<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], epsilon: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + epsilon;
            let up = f(&probe);
            probe[i] = orig - epsilon;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * epsilon)
        })
        .collect()
}

/// Compares `analytic` against central differences of `loss` on up to
/// `per_tensor` evenly spaced coordinates of every tensor in `params`.
/// Returns the maximum relative error.
pub fn gradient_check<P, F>(loss: F, params: &P, analytic: &P, epsilon: f64, per_tensor: usize) -> f64
where
    P: ParamSet + Clone,
    F: Fn(&P) -> f64,
{
    let grads: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.data().to_vec()).collect();
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for (ti, &n) in sizes.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let take = per_tensor.min(n).max(1);
        let stride = (n / take).max(1);
        for k in 0..take {
            let idx = (k * stride + stride / 2).min(n - 1);
            let orig = probe.tensors()[ti].data()[idx];
            probe.tensors_mut()[ti].data_mut()[idx] = orig + epsilon;
            let up = loss(&probe);
            probe.tensors_mut()[ti].data_mut()[idx] = orig - epsilon;
            let down = loss(&probe);
            probe.tensors_mut()[ti].data_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            worst = worst.max(relative_error(grads[ti][idx], numeric));
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_loss_matches_exactly() {
        let p = Tensor::new(vec![1], vec![3.0]).unwrap();
        let g = Tensor::new(vec![1], vec![6.0]).unwrap();
        let err = gradient_check(|t: &Tensor| t.sum_sq(), &p, &g, 1e-5, 10);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let p = Tensor::new(vec![1], vec![3.0]).unwrap();
        let g = Tensor::new(vec![1], vec![5.0]).unwrap();
        assert!(gradient_check(|t: &Tensor| t.sum_sq(), &p, &g, 1e-5, 10) > 0.1);
    }
}

use rand::Rng;

use super::tensor::{Activation, Tensor};
use crate::error::{shape_err, Result};

/// Fully connected layer `y = act(W x + b)` with `W` stored `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
enum Input {
    Dense(Vec<f64>),
    /// Sum of unit vectors at these indices.
    Sparse(Vec<usize>),
}

/// Values retained by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Input,
    pre: Vec<f64>,
    out: Vec<f64>,
}

impl DenseCache {
    pub fn pre_activation(&self) -> &[f64] {
        &self.pre
    }

    pub fn output(&self) -> &[f64] {
        &self.out
    }
}

/// Stateless `activation(W x + b)`.
pub fn fc_forward(x: &[f64], weight: &Tensor, bias: &Tensor, activation: Activation) -> Result<Vec<f64>> {
    let layer = Dense { weight: weight.clone(), bias: bias.clone(), activation };
    layer.forward(x).map(|(y, _)| y)
}

impl Dense {
    /// Weights uniform in ±1/√fan_in, zero bias.
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        Dense {
            weight: Tensor::uniform(&[output, input], bound, rng),
            bias: Tensor::zeros(&[output]),
            activation,
        }
    }

    pub fn from_parts(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(shape_err!("dense weight {:?} with bias {:?}", weight.shape(), bias.shape()));
        }
        Ok(Dense { weight, bias, activation })
    }

    pub fn zeros_like(&self) -> Self {
        Dense {
            weight: Tensor::zeros(self.weight.shape()),
            bias: Tensor::zeros(self.bias.shape()),
            activation: self.activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    fn finish(&self, pre: Vec<f64>, input: Input) -> (Vec<f64>, DenseCache) {
        let out: Vec<f64> = pre.iter().map(|&p| self.activation.apply(p)).collect();
        (out.clone(), DenseCache { input, pre, out })
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, DenseCache)> {
        if x.len() != self.input_dim() {
            return Err(shape_err!("dense input {} vs expected {}", x.len(), self.input_dim()));
        }
        let b = self.bias.data();
        let pre: Vec<f64> = (0..self.output_dim())
            .map(|i| {
                let row = self.weight.row(i);
                b[i] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect();
        Ok(self.finish(pre, Input::Dense(x.to_vec())))
    }

    /// Forward pass for an input that is a sum of unit vectors, e.g. a
    /// four-hot code given by its set indices.
    pub fn forward_sparse(&self, active: &[usize]) -> Result<(Vec<f64>, DenseCache)> {
        let n_in = self.input_dim();
        if let Some(&bad) = active.iter().find(|&&j| j >= n_in) {
            return Err(shape_err!("sparse index {} out of {}", bad, n_in));
        }
        let b = self.bias.data();
        let pre: Vec<f64> = (0..self.output_dim())
            .map(|i| {
                let row = self.weight.row(i);
                b[i] + active.iter().map(|&j| row[j]).sum::<f64>()
            })
            .collect();
        Ok(self.finish(pre, Input::Sparse(active.to_vec())))
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`
    /// (empty for sparse inputs, which are never differentiated).
    pub fn backward(&self, cache: &DenseCache, dy: &[f64], grad: &mut Dense) -> Vec<f64> {
        let n_out = self.output_dim();
        let n_in = self.input_dim();
        debug_assert_eq!(dy.len(), n_out);
        let dpre: Vec<f64> = (0..n_out)
            .map(|i| dy[i] * self.activation.derivative(cache.pre[i], cache.out[i]))
            .collect();
        {
            let gb = grad.bias.data_mut();
            for (g, d) in gb.iter_mut().zip(&dpre) {
                *g += d;
            }
        }
        match &cache.input {
            Input::Dense(x) => {
                let mut dx = vec![0.0; n_in];
                for (i, &d) in dpre.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let grow = grad.weight.row_mut(i);
                    for (g, v) in grow.iter_mut().zip(x) {
                        *g += d * v;
                    }
                    let wrow = self.weight.row(i);
                    for (acc, w) in dx.iter_mut().zip(wrow) {
                        *acc += d * w;
                    }
                }
                dx
            }
            Input::Sparse(active) => {
                for (i, &d) in dpre.iter().enumerate() {
                    let grow = grad.weight.row_mut(i);
                    for &j in active {
                        grow[j] += d;
                    }
                }
                Vec::new()
            }
        }
    }
}

impl super::ParamSet for Dense {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

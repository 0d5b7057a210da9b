use rand::Rng;

use super::tensor::{Activation, Tensor};
use crate::error::{shape_err, Result};

/// Valid (unpadded) 2-D cross-correlation over `[C, H, W]` inputs with
/// kernels `[O, C, kh, kw]`, followed by an elementwise activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub kernels: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    input: Tensor,
    pre: Vec<f64>,
    out: Tensor,
}

impl ConvCache {
    pub fn output(&self) -> &Tensor {
        &self.out
    }
}

pub fn conv_output_len(input: usize, kernel: usize, stride: usize) -> usize {
    (input - kernel) / stride + 1
}

/// Cross-correlates `input` (`[H, W]` or `[C, H, W]`) with a kernel set
/// (`[kh, kw]`, `[O, kh, kw]` or `[O, C, kh, kw]`), no bias, no activation.
pub fn conv2d_forward(input: &Tensor, kernels: &Tensor, stride: usize) -> Result<Tensor> {
    let input = match input.shape().len() {
        2 => Tensor::new(vec![1, input.shape()[0], input.shape()[1]], input.data().to_vec())?,
        3 => input.clone(),
        _ => return Err(shape_err!("conv input must be rank 2 or 3, got {:?}", input.shape())),
    };
    let c = input.shape()[0];
    let ks = kernels.shape();
    let kernels = match ks.len() {
        2 if c == 1 => Tensor::new(vec![1, 1, ks[0], ks[1]], kernels.data().to_vec())?,
        3 if c == 1 => Tensor::new(vec![ks[0], 1, ks[1], ks[2]], kernels.data().to_vec())?,
        4 => kernels.clone(),
        _ => return Err(shape_err!("kernel set {:?} incompatible with {} channels", ks, c)),
    };
    let o = kernels.shape()[0];
    let conv = Conv2d { kernels, bias: Tensor::zeros(&[o]), stride, activation: Activation::Identity };
    conv.forward(&input).map(|(y, _)| y)
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel.0 * kernel.1;
        Conv2d {
            kernels: Tensor::uniform(&[out_channels, in_channels, kernel.0, kernel.1], 1.0 / (fan_in as f64).sqrt(), rng),
            bias: Tensor::zeros(&[out_channels]),
            stride,
            activation,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Conv2d {
            kernels: Tensor::zeros(self.kernels.shape()),
            bias: Tensor::zeros(self.bias.shape()),
            stride: self.stride,
            activation: self.activation,
        }
    }

    fn dims(&self, input: &Tensor) -> Result<[usize; 8]> {
        let is = input.shape();
        let ks = self.kernels.shape();
        if is.len() != 3 || ks.len() != 4 {
            return Err(shape_err!("conv expects [C,H,W] input and [O,C,kh,kw] kernels, got {:?} / {:?}", is, ks));
        }
        if self.stride == 0 {
            return Err(shape_err!("conv stride must be >= 1"));
        }
        let (c, h, w) = (is[0], is[1], is[2]);
        let (o, kc, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if kc != c {
            return Err(shape_err!("kernel channels {} vs input channels {}", kc, c));
        }
        if kh > h || kw > w || kh == 0 || kw == 0 {
            return Err(shape_err!("kernel {}x{} larger than input {}x{}", kh, kw, h, w));
        }
        let ho = conv_output_len(h, kh, self.stride);
        let wo = conv_output_len(w, kw, self.stride);
        Ok([c, h, w, o, kh, kw, ho, wo])
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, ConvCache)> {
        let [c, h, w, o, kh, kw, ho, wo] = self.dims(input)?;
        let x = input.data();
        let k = self.kernels.data();
        let s = self.stride;
        let mut pre = vec![0.0; o * ho * wo];
        for oc in 0..o {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = self.bias.data()[oc];
                    for ic in 0..c {
                        for di in 0..kh {
                            let xrow = &x[(ic * h + i * s + di) * w + j * s..][..kw];
                            let krow = &k[((oc * c + ic) * kh + di) * kw..][..kw];
                            acc += xrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                    pre[(oc * ho + i) * wo + j] = acc;
                }
            }
        }
        let out = Tensor::new(vec![o, ho, wo], pre.iter().map(|&p| self.activation.apply(p)).collect())?;
        Ok((out.clone(), ConvCache { input: input.clone(), pre, out }))
    }

    /// Accumulates kernel/bias gradients and returns `dL/dinput`.
    pub fn backward(&self, cache: &ConvCache, dout: &Tensor, grad: &mut Conv2d) -> Tensor {
        let [c, h, w, o, kh, kw, ho, wo] = self.dims(&cache.input).expect("shape checked in forward");
        let s = self.stride;
        let x = cache.input.data();
        let k = self.kernels.data();
        let mut dx = vec![0.0; c * h * w];
        for oc in 0..o {
            for i in 0..ho {
                for j in 0..wo {
                    let idx = (oc * ho + i) * wo + j;
                    let d = dout.data()[idx] * self.activation.derivative(cache.pre[idx], cache.out.data()[idx]);
                    if d == 0.0 {
                        continue;
                    }
                    grad.bias.data_mut()[oc] += d;
                    for ic in 0..c {
                        for di in 0..kh {
                            let xoff = (ic * h + i * s + di) * w + j * s;
                            let koff = ((oc * c + ic) * kh + di) * kw;
                            let gk = &mut grad.kernels.data_mut()[koff..koff + kw];
                            for (g, v) in gk.iter_mut().zip(&x[xoff..xoff + kw]) {
                                *g += d * v;
                            }
                            for (acc, kv) in dx[xoff..xoff + kw].iter_mut().zip(&k[koff..koff + kw]) {
                                *acc += d * kv;
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(vec![c, h, w], dx).expect("input shape")
    }
}

/// Max-pooling along the last axis with window = stride = `size`
/// (trailing remainder dropped). Returns pooled tensor and argmax indices.
pub fn max_pool_last(input: &Tensor, size: usize) -> Result<(Tensor, Vec<usize>)> {
    let s = input.shape();
    if s.len() != 3 || size == 0 || s[2] < size {
        return Err(shape_err!("max pool {} over {:?}", size, s));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let wo = w / size;
    let mut out = Vec::with_capacity(c * h * wo);
    let mut arg = Vec::with_capacity(c * h * wo);
    for row in 0..c * h {
        for j in 0..wo {
            let base = row * w + j * size;
            let (best, val) = input.data()[base..base + size]
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
            out.push(val);
            arg.push(base + best);
        }
    }
    Ok((Tensor::new(vec![c, h, wo], out)?, arg))
}

pub fn max_pool_last_backward(input_shape: &[usize], argmax: &[usize], dout: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(input_shape);
    for (&i, &d) in argmax.iter().zip(dout.data()) {
        dx.data_mut()[i] += d;
    }
    dx
}

/// Mean over all positions of each channel: `[C, H, W] -> [C]`.
pub fn global_avg_pool(input: &Tensor) -> Vec<f64> {
    let c = input.shape()[0];
    let n = input.len() / c;
    input.data().chunks(n).map(|ch| ch.iter().sum::<f64>() / n as f64).collect()
}

pub fn global_avg_pool_backward(input_shape: &[usize], dout: &[f64]) -> Tensor {
    let c = input_shape[0];
    let n: usize = input_shape[1..].iter().product();
    let data = (0..c).flat_map(|ch| std::iter::repeat(dout[ch] / n as f64).take(n)).collect();
    Tensor::new(input_shape.to_vec(), data).expect("pool shape")
}

impl super::ParamSet for Conv2d {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.kernels, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.kernels, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{gradient_check_fn, max_relative_error};
    use crate::rng::substream;
    use proptest::prelude::*;

    #[test]
    fn ones_with_ones_kernel() {
        let x = Tensor::filled(&[3, 3], 1.0);
        let k = Tensor::filled(&[2, 2], 1.0);
        let y = conv2d_forward(&x, &k, 1).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[4.0; 4]);
    }

    #[test]
    fn delta_kernel_copies_window() {
        let x = Tensor::new(vec![3, 4], (0..12).map(f64::from).collect()).unwrap();
        let mut k = Tensor::zeros(&[2, 2]);
        k.data_mut()[3] = 1.0; // bottom-right tap
        let y = conv2d_forward(&x, &k, 1).unwrap();
        assert_eq!(y.data(), &[5.0, 6.0, 7.0, 9.0, 10.0, 11.0]);
    }

    #[test]
    fn zero_kernel_gives_zero() {
        let x = Tensor::filled(&[4, 4], 3.0);
        let y = conv2d_forward(&x, &Tensor::zeros(&[2, 3]), 2).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kernel_larger_than_input_is_rejected() {
        let x = Tensor::filled(&[2, 2], 1.0);
        assert!(conv2d_forward(&x, &Tensor::zeros(&[3, 1]), 1).is_err());
        assert!(conv2d_forward(&x, &Tensor::zeros(&[1, 1]), 0).is_err());
    }

    proptest! {
        #[test]
        fn output_shape_formula(h in 1usize..9, w in 1usize..9, kh_f in 0.0f64..1.0, kw_f in 0.0f64..1.0, s_f in 0.0f64..1.0) {
            let kh = 1 + ((h - 1) as f64 * kh_f) as usize;
            let kw = 1 + ((w - 1) as f64 * kw_f) as usize;
            let stride = 1 + ((h.min(w) - 1) as f64 * s_f) as usize;
            let y = conv2d_forward(&Tensor::filled(&[h, w], 1.0), &Tensor::filled(&[kh, kw], 1.0), stride).unwrap();
            prop_assert_eq!(y.shape(), &[1, (h - kh) / stride + 1, (w - kw) / stride + 1]);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = substream(4, "conv", 0);
        let conv = Conv2d::new(2, 3, (2, 3), 2, Activation::Tanh, &mut rng);
        let x = Tensor::uniform(&[2, 5, 7], 1.0, &mut rng);
        let (y, cache) = conv.forward(&x).unwrap();
        let wout = Tensor::uniform(y.shape(), 1.0, &mut rng);
        let loss = |c: &Conv2d, xin: &Tensor| -> f64 {
            let (y, _) = c.forward(xin).unwrap();
            y.data().iter().zip(wout.data()).map(|(a, b)| a * b).sum()
        };
        let mut grad = conv.zeros_like();
        let dx = conv.backward(&cache, &wout, &mut grad);
        let fd_x = gradient_check_fn(
            |v| loss(&conv, &Tensor::new(x.shape().to_vec(), v.to_vec()).unwrap()),
            x.data(),
            1e-5,
        );
        let fd_k = gradient_check_fn(
            |k| {
                let mut c = conv.clone();
                c.kernels.data_mut().copy_from_slice(k);
                loss(&c, &x)
            },
            conv.kernels.data(),
            1e-5,
        );
        assert!(max_relative_error(dx.data(), &fd_x) < 1e-4);
        assert!(max_relative_error(grad.kernels.data(), &fd_k) < 1e-4);
    }

    #[test]
    fn pooling_backward_routes_gradient() {
        let x = Tensor::new(vec![1, 1, 5], vec![1.0, 3.0, 2.0, 0.0, 9.0]).unwrap();
        let (y, arg) = max_pool_last(&x, 2).unwrap();
        assert_eq!(y.data(), &[3.0, 2.0]);
        let dx = max_pool_last_backward(x.shape(), &arg, &Tensor::new(vec![1, 1, 2], vec![1.0, 5.0]).unwrap());
        assert_eq!(dx.data(), &[0.0, 1.0, 5.0, 0.0, 0.0]);
        let g = global_avg_pool(&Tensor::new(vec![2, 1, 2], vec![1.0, 3.0, 4.0, 6.0]).unwrap());
        assert_eq!(g, vec![2.0, 5.0]);
    }
}

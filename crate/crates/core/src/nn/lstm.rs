use rand::Rng;

use super::tensor::{sigmoid, Tensor};
use crate::error::{shape_err, Result};

/// Recurrent state of a single LSTM layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_dim: usize) -> Self {
        LstmState { h: vec![0.0; hidden_dim], c: vec![0.0; hidden_dim] }
    }
}

/// Single-layer LSTM. `weight` is `[4H, I + H]` acting on `[x, h]`, gate
/// blocks ordered input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    xh: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl Lstm {
    /// Uniform ±1/√fan_in weights, zero biases except forget gate = 1.
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let fan_in = input_dim + hidden_dim;
        let weight = Tensor::uniform(&[4 * hidden_dim, fan_in], 1.0 / (fan_in as f64).sqrt(), rng);
        let mut bias = Tensor::zeros(&[4 * hidden_dim]);
        bias.data_mut()[hidden_dim..2 * hidden_dim].iter_mut().for_each(|b| *b = 1.0);
        Lstm { weight, bias }
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> Result<Self> {
        let s = weight.shape();
        if s.len() != 2 || s[0] % 4 != 0 || s[1] < s[0] / 4 || bias.shape() != [s[0]] {
            return Err(shape_err!("lstm weight {:?} with bias {:?}", s, bias.shape()));
        }
        Ok(Lstm { weight, bias })
    }

    pub fn zeros_like(&self) -> Self {
        Lstm { weight: Tensor::zeros(self.weight.shape()), bias: Tensor::zeros(self.bias.shape()) }
    }

    pub fn hidden_dim(&self) -> usize {
        self.weight.shape()[0] / 4
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[1] - self.hidden_dim()
    }

    pub fn step(&self, x: &[f64], state: &LstmState) -> Result<(LstmState, LstmCache)> {
        let hd = self.hidden_dim();
        if x.len() != self.input_dim() || state.h.len() != hd || state.c.len() != hd {
            return Err(shape_err!(
                "lstm step: input {} (want {}), state {}/{} (want {})",
                x.len(),
                self.input_dim(),
                state.h.len(),
                state.c.len(),
                hd
            ));
        }
        let mut xh = Vec::with_capacity(x.len() + hd);
        xh.extend_from_slice(x);
        xh.extend_from_slice(&state.h);
        let b = self.bias.data();
        let pre: Vec<f64> = (0..4 * hd)
            .map(|r| b[r] + self.weight.row(r).iter().zip(&xh).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        let i: Vec<f64> = pre[..hd].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = pre[hd..2 * hd].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = pre[2 * hd..3 * hd].iter().map(|v| v.tanh()).collect();
        let o: Vec<f64> = pre[3 * hd..].iter().map(|&v| sigmoid(v)).collect();
        let c: Vec<f64> = (0..hd).map(|k| f[k] * state.c[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h: Vec<f64> = (0..hd).map(|k| o[k] * tanh_c[k]).collect();
        let cache = LstmCache { xh, i, f, g, o, c_prev: state.c.clone(), tanh_c };
        Ok((LstmState { h, c }, cache))
    }

    /// Given gradients w.r.t. the new `(h, c)`, accumulates parameter
    /// gradients and returns `(dx, dh_prev, dc_prev)`.
    pub fn backward(&self, cache: &LstmCache, dh: &[f64], dc: &[f64], grad: &mut Lstm) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hd = self.hidden_dim();
        let mut dpre = vec![0.0; 4 * hd];
        let mut dc_prev = vec![0.0; hd];
        for k in 0..hd {
            let (i, f, g, o, tc) = (cache.i[k], cache.f[k], cache.g[k], cache.o[k], cache.tanh_c[k]);
            let dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
            dpre[k] = dct * g * i * (1.0 - i);
            dpre[hd + k] = dct * cache.c_prev[k] * f * (1.0 - f);
            dpre[2 * hd + k] = dct * i * (1.0 - g * g);
            dpre[3 * hd + k] = dh[k] * tc * o * (1.0 - o);
            dc_prev[k] = dct * f;
        }
        let mut dxh = vec![0.0; cache.xh.len()];
        {
            let gb = grad.bias.data_mut();
            for (g, d) in gb.iter_mut().zip(&dpre) {
                *g += d;
            }
        }
        for (r, &d) in dpre.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let grow = grad.weight.row_mut(r);
            for (g, v) in grow.iter_mut().zip(&cache.xh) {
                *g += d * v;
            }
            for (acc, w) in dxh.iter_mut().zip(self.weight.row(r)) {
                *acc += d * w;
            }
        }
        let dh_prev = dxh.split_off(self.input_dim());
        (dxh, dh_prev, dc_prev)
    }
}

impl super::ParamSet for Lstm {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{gradient_check_fn, max_relative_error};
    use crate::rng::substream;

    /// Scalar re-implementation written independently of `Lstm::step`.
    fn scalar_lstm(w: &Tensor, b: &Tensor, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hd = h.len();
        let nin = x.len();
        let gate = |row: usize| -> f64 {
            let mut s = b.data()[row];
            for j in 0..nin {
                s += w.data()[row * (nin + hd) + j] * x[j];
            }
            for j in 0..hd {
                s += w.data()[row * (nin + hd) + nin + j] * h[j];
            }
            s
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut h2 = vec![0.0; hd];
        let mut c2 = vec![0.0; hd];
        for k in 0..hd {
            let i = sig(gate(k));
            let f = sig(gate(hd + k));
            let g = gate(2 * hd + k).tanh();
            let o = sig(gate(3 * hd + k));
            c2[k] = f * c[k] + i * g;
            h2[k] = o * c2[k].tanh();
        }
        (h2, c2)
    }

    #[test]
    fn all_zero_everything_gives_zero_state() {
        let lstm = Lstm { weight: Tensor::zeros(&[8, 5]), bias: Tensor::zeros(&[8]) };
        let (s, _) = lstm.step(&[0.0; 3], &LstmState::zeros(2)).unwrap();
        assert_eq!(s.h, vec![0.0, 0.0]);
        assert_eq!(s.c, vec![0.0, 0.0]);
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let hd = 3;
        let mut bias = Tensor::zeros(&[4 * hd]);
        bias.data_mut()[hd..2 * hd].iter_mut().for_each(|b| *b = 40.0);
        let lstm = Lstm { weight: Tensor::zeros(&[4 * hd, 2 + hd]), bias };
        let state = LstmState { h: vec![0.0; hd], c: vec![1.0; hd] };
        let (s, _) = lstm.step(&[0.0, 0.0], &state).unwrap();
        for c in s.c {
            assert!((c - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_scalar_oracle() {
        for seed in 0..5 {
            let mut rng = substream(seed, "lstm", 0);
            let lstm = Lstm::new(4, 3, &mut rng);
            let x = [0.3, -0.1, 0.8, -0.6];
            let st = LstmState { h: vec![0.2, -0.4, 0.1], c: vec![-0.5, 0.9, 0.05] };
            let (s, _) = lstm.step(&x, &st).unwrap();
            let (h, c) = scalar_lstm(&lstm.weight, &lstm.bias, &x, &st.h, &st.c);
            for k in 0..3 {
                assert!((s.h[k] - h[k]).abs() < 1e-14);
                assert!((s.c[k] - c[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let mut rng = substream(0, "lstm", 0);
        let lstm = Lstm::new(4, 3, &mut rng);
        assert!(lstm.step(&[0.0; 3], &LstmState::zeros(3)).is_err());
        assert!(lstm.step(&[0.0; 4], &LstmState::zeros(2)).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = substream(9, "lstm", 0);
        let lstm = Lstm::new(3, 4, &mut rng);
        let x = vec![0.5, -0.7, 0.2];
        let st = LstmState { h: vec![0.1, -0.3, 0.6, 0.0], c: vec![0.4, -0.2, 0.3, -0.8] };
        let wh = [0.3, -0.2, 0.9, 0.5];
        let wc = [-0.4, 0.7, 0.1, 0.25];
        let loss = |l: &Lstm, x: &[f64], h: &[f64], c: &[f64]| -> f64 {
            let (s, _) = l.step(x, &LstmState { h: h.to_vec(), c: c.to_vec() }).unwrap();
            s.h.iter().zip(&wh).map(|(a, b)| a * b).sum::<f64>() + s.c.iter().zip(&wc).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, cache) = lstm.step(&x, &st).unwrap();
        let mut grad = lstm.zeros_like();
        let (dx, dh, dc) = lstm.backward(&cache, &wh, &wc, &mut grad);

        let fd_x = gradient_check_fn(|v| loss(&lstm, v, &st.h, &st.c), &x, 1e-5);
        let fd_h = gradient_check_fn(|v| loss(&lstm, &x, v, &st.c), &st.h, 1e-5);
        let fd_c = gradient_check_fn(|v| loss(&lstm, &x, &st.h, v), &st.c, 1e-5);
        let fd_w = gradient_check_fn(
            |w| {
                let mut l = lstm.clone();
                l.weight.data_mut().copy_from_slice(w);
                loss(&l, &x, &st.h, &st.c)
            },
            lstm.weight.data(),
            1e-5,
        );
        let fd_b = gradient_check_fn(
            |b| {
                let mut l = lstm.clone();
                l.bias.data_mut().copy_from_slice(b);
                loss(&l, &x, &st.h, &st.c)
            },
            lstm.bias.data(),
            1e-5,
        );
        assert!(max_relative_error(&dx, &fd_x) < 1e-4);
        assert!(max_relative_error(&dh, &fd_h) < 1e-4);
        assert!(max_relative_error(&dc, &fd_c) < 1e-4);
        assert!(max_relative_error(grad.weight.data(), &fd_w) < 1e-4);
        assert!(max_relative_error(grad.bias.data(), &fd_b) < 1e-4);
    }
}

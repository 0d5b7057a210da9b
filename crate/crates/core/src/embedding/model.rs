//! VRNN parameters and the single-step forward/backward pass.
//!
//! One step, given the recurrent state `(h, c)` and the four-hot input `x`:
//!
//! ```text
//! ax        = relu(Φx x)
//! prior     : h          -> relu -> (μp, σp)
//! posterior : [ax, h]    -> relu -> (μq, σq)
//! z         = μq + σq ⊙ ε
//! az        = relu(Φz z)
//! emission  : [az, h]    -> relu -> Bernoulli logits over all L bits
//! (h', c')  = LSTM([ax, az], (h, c))
//! ```
//!
//! σ heads are `softplus(·) + SIGMA_FLOOR`.

use rand::Rng;

use super::dist::{emission_logprob_active, kl_grad, kl_unchecked, Gaussian};
use crate::error::{shape_err, Error, Result};
use crate::fourhot::FourHotVector;
use crate::ingest::RoiConfig;
use crate::nn::dense::DenseCache;
use crate::nn::lstm::LstmCache;
use crate::nn::tensor::sigmoid;
use crate::nn::{Activation, Dense, Lstm, LstmState, ParamSet, Tensor};
use crate::rng::substream;

pub const SIGMA_FLOOR: f64 = 1e-3;

/// Names of the parameter tensors, in storage order.
pub const PARAM_NAMES: [&str; 22] = [
    "phi_x.weight",
    "phi_x.bias",
    "phi_z.weight",
    "phi_z.bias",
    "prior_hidden.weight",
    "prior_hidden.bias",
    "prior_mu.weight",
    "prior_mu.bias",
    "prior_sigma.weight",
    "prior_sigma.bias",
    "post_hidden.weight",
    "post_hidden.bias",
    "post_mu.weight",
    "post_mu.bias",
    "post_sigma.weight",
    "post_sigma.bias",
    "emit_hidden.weight",
    "emit_hidden.bias",
    "emit_logits.weight",
    "emit_logits.bias",
    "lstm.weight",
    "lstm.bias",
];

#[derive(Debug, Clone, PartialEq)]
pub struct VrnnParams {
    pub phi_x: Dense,
    pub phi_z: Dense,
    pub prior_hidden: Dense,
    pub prior_mu: Dense,
    pub prior_sigma: Dense,
    pub post_hidden: Dense,
    pub post_mu: Dense,
    pub post_sigma: Dense,
    pub emit_hidden: Dense,
    pub emit_logits: Dense,
    pub lstm: Lstm,
}

impl VrnnParams {
    pub fn new<R: Rng + ?Sized>(code_len: usize, hidden: usize, latent: usize, rng: &mut R) -> Self {
        use Activation::*;
        VrnnParams {
            phi_x: Dense::new(code_len, hidden, Relu, rng),
            phi_z: Dense::new(latent, hidden, Relu, rng),
            prior_hidden: Dense::new(hidden, hidden, Relu, rng),
            prior_mu: Dense::new(hidden, latent, Identity, rng),
            prior_sigma: Dense::new(hidden, latent, Softplus, rng),
            post_hidden: Dense::new(2 * hidden, hidden, Relu, rng),
            post_mu: Dense::new(hidden, latent, Identity, rng),
            post_sigma: Dense::new(hidden, latent, Softplus, rng),
            emit_hidden: Dense::new(2 * hidden, hidden, Relu, rng),
            emit_logits: Dense::new(hidden, code_len, Identity, rng),
            lstm: Lstm::new(2 * hidden, hidden, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        VrnnParams {
            phi_x: self.phi_x.zeros_like(),
            phi_z: self.phi_z.zeros_like(),
            prior_hidden: self.prior_hidden.zeros_like(),
            prior_mu: self.prior_mu.zeros_like(),
            prior_sigma: self.prior_sigma.zeros_like(),
            post_hidden: self.post_hidden.zeros_like(),
            post_mu: self.post_mu.zeros_like(),
            post_sigma: self.post_sigma.zeros_like(),
            emit_hidden: self.emit_hidden.zeros_like(),
            emit_logits: self.emit_logits.zeros_like(),
            lstm: self.lstm.zeros_like(),
        }
    }

    /// Expected tensor shapes for the given dimensions, in storage order.
    pub fn shapes(code_len: usize, hidden: usize, latent: usize) -> Vec<Vec<usize>> {
        let dense = |i: usize, o: usize| [vec![o, i], vec![o]];
        let mut v = Vec::new();
        for (i, o) in [
            (code_len, hidden),
            (latent, hidden),
            (hidden, hidden),
            (hidden, latent),
            (hidden, latent),
            (2 * hidden, hidden),
            (hidden, latent),
            (hidden, latent),
            (2 * hidden, hidden),
            (hidden, code_len),
        ] {
            v.extend(dense(i, o));
        }
        v.push(vec![4 * hidden, 3 * hidden]);
        v.push(vec![4 * hidden]);
        v
    }
}

impl ParamSet for VrnnParams {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = Vec::with_capacity(22);
        for d in [
            &self.phi_x,
            &self.phi_z,
            &self.prior_hidden,
            &self.prior_mu,
            &self.prior_sigma,
            &self.post_hidden,
            &self.post_mu,
            &self.post_sigma,
            &self.emit_hidden,
            &self.emit_logits,
        ] {
            v.push(&d.weight);
            v.push(&d.bias);
        }
        v.push(&self.lstm.weight);
        v.push(&self.lstm.bias);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::with_capacity(22);
        for d in [
            &mut self.phi_x,
            &mut self.phi_z,
            &mut self.prior_hidden,
            &mut self.prior_mu,
            &mut self.prior_sigma,
            &mut self.post_hidden,
            &mut self.post_mu,
            &mut self.post_sigma,
            &mut self.emit_hidden,
            &mut self.emit_logits,
        ] {
            v.push(&mut d.weight);
            v.push(&mut d.bias);
        }
        v.push(&mut self.lstm.weight);
        v.push(&mut self.lstm.bias);
        v
    }
}

/// The Embedding block: bin geometry plus fitted VRNN parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct VrnnModel {
    pub roi: RoiConfig,
    pub hidden_dim: usize,
    pub latent_dim: usize,
    /// Seed the parameters were initialised from.
    pub seed: u64,
    pub params: VrnnParams,
}

/// Everything one step produces.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub prior: Gaussian,
    pub posterior: Gaussian,
    pub z: Vec<f64>,
    pub logits: Vec<f64>,
    pub state: LstmState,
}

pub(crate) struct StepCache {
    active: [usize; 4],
    eps: Vec<f64>,
    phi_x: DenseCache,
    prior_hidden: DenseCache,
    prior_mu: DenseCache,
    prior_sigma: DenseCache,
    post_hidden: DenseCache,
    post_mu: DenseCache,
    post_sigma: DenseCache,
    phi_z: DenseCache,
    emit_hidden: DenseCache,
    emit_logits: DenseCache,
    lstm: LstmCache,
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

fn floor_sigma(raw: Vec<f64>) -> Vec<f64> {
    raw.into_iter().map(|s| s + SIGMA_FLOOR).collect()
}

impl VrnnModel {
    /// Fresh model. Weights uniform ±1/√fan_in, zero biases, LSTM forget bias 1.
    pub fn new(roi: RoiConfig, hidden_dim: usize, latent_dim: usize, seed: u64) -> Result<Self> {
        roi.check()?;
        if hidden_dim == 0 || latent_dim == 0 {
            return Err(Error::Config("hidden_dim and latent_dim must be >= 1".into()));
        }
        let mut rng = substream(seed, "init", 0);
        let params = VrnnParams::new(roi.code_len(), hidden_dim, latent_dim, &mut rng);
        Ok(VrnnModel { roi, hidden_dim, latent_dim, seed, params })
    }

    pub fn code_len(&self) -> usize {
        self.roi.code_len()
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    pub fn initial_state(&self) -> LstmState {
        LstmState::zeros(self.hidden_dim)
    }

    pub fn phi_x(&self, x: &FourHotVector) -> Vec<f64> {
        self.params.phi_x.forward_sparse(&x.active(&self.roi)).expect("code geometry").0
    }

    pub fn prior(&self, h: &[f64]) -> Gaussian {
        let p = &self.params;
        let ph = p.prior_hidden.forward(h).expect("hidden dim").0;
        Gaussian {
            mu: p.prior_mu.forward(&ph).expect("dims").0,
            sigma: floor_sigma(p.prior_sigma.forward(&ph).expect("dims").0),
        }
    }

    pub fn posterior(&self, phi_x: &[f64], h: &[f64]) -> Gaussian {
        let p = &self.params;
        let qh = p.post_hidden.forward(&concat(phi_x, h)).expect("dims").0;
        Gaussian {
            mu: p.post_mu.forward(&qh).expect("dims").0,
            sigma: floor_sigma(p.post_sigma.forward(&qh).expect("dims").0),
        }
    }

    /// Returns `(Φz(z), logits)`.
    pub fn emission(&self, z: &[f64], h: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let p = &self.params;
        let az = p.phi_z.forward(z).expect("latent dim").0;
        let eh = p.emit_hidden.forward(&concat(&az, h)).expect("dims").0;
        let logits = p.emit_logits.forward(&eh).expect("dims").0;
        (az, logits)
    }

    pub fn advance(&self, phi_x: &[f64], phi_z: &[f64], state: &LstmState) -> LstmState {
        self.params.lstm.step(&concat(phi_x, phi_z), state).expect("dims").0
    }

    fn check_step(&self, state: &LstmState, x: &FourHotVector, eps: &[f64]) -> Result<()> {
        if state.h.len() != self.hidden_dim || state.c.len() != self.hidden_dim {
            return Err(shape_err!("state dim {} vs hidden_dim {}", state.h.len(), self.hidden_dim));
        }
        if eps.len() != self.latent_dim {
            return Err(shape_err!("noise dim {} vs latent_dim {}", eps.len(), self.latent_dim));
        }
        if x.bins.iter().zip(self.roi.block_sizes()).any(|(&b, n)| b >= n) {
            return Err(shape_err!("four-hot bins {:?} exceed geometry", x.bins));
        }
        Ok(())
    }

    /// One VRNN step with externally supplied reparameterisation noise.
    pub fn forward_step(&self, state: &LstmState, x: &FourHotVector, eps: &[f64]) -> Result<StepOutput> {
        self.check_step(state, x, eps)?;
        Ok(self.forward_cached(state, x, eps)?.0)
    }

    pub(crate) fn forward_cached(&self, state: &LstmState, x: &FourHotVector, eps: &[f64]) -> Result<(StepOutput, StepCache)> {
        let p = &self.params;
        let active = x.active(&self.roi);
        let (ax, c_phi_x) = p.phi_x.forward_sparse(&active)?;

        let (ph, c_ph) = p.prior_hidden.forward(&state.h)?;
        let (mu_p, c_mp) = p.prior_mu.forward(&ph)?;
        let (sp, c_sp) = p.prior_sigma.forward(&ph)?;

        let (qh, c_qh) = p.post_hidden.forward(&concat(&ax, &state.h))?;
        let (mu_q, c_mq) = p.post_mu.forward(&qh)?;
        let (sq, c_sq) = p.post_sigma.forward(&qh)?;

        let prior = Gaussian { mu: mu_p, sigma: floor_sigma(sp) };
        let posterior = Gaussian { mu: mu_q, sigma: floor_sigma(sq) };
        let z = posterior.reparam(eps);

        let (az, c_phi_z) = p.phi_z.forward(&z)?;
        let (eh, c_eh) = p.emit_hidden.forward(&concat(&az, &state.h))?;
        let (logits, c_el) = p.emit_logits.forward(&eh)?;

        let (new_state, c_lstm) = p.lstm.step(&concat(&ax, &az), state)?;

        let cache = StepCache {
            active,
            eps: eps.to_vec(),
            phi_x: c_phi_x,
            prior_hidden: c_ph,
            prior_mu: c_mp,
            prior_sigma: c_sp,
            post_hidden: c_qh,
            post_mu: c_mq,
            post_sigma: c_sq,
            phi_z: c_phi_z,
            emit_hidden: c_eh,
            emit_logits: c_el,
            lstm: c_lstm,
        };
        Ok((StepOutput { prior, posterior, z, logits, state: new_state }, cache))
    }

    /// `(reconstruction log-likelihood, KL)` of a computed step.
    pub fn step_terms(&self, out: &StepOutput, x: &FourHotVector) -> (f64, f64) {
        let recon = emission_logprob_active(&x.active(&self.roi), &out.logits);
        let kl = kl_unchecked(&out.posterior.mu, &out.posterior.sigma, &out.prior.mu, &out.prior.sigma);
        (recon, kl)
    }

    /// Backward through one step of the loss `weight · (KL - recon)`.
    /// `dh`, `dc` are gradients w.r.t. the step's output state; returns
    /// the gradients w.r.t. its input state.
    pub(crate) fn backward_step(
        &self,
        out: &StepOutput,
        cache: &StepCache,
        weight: f64,
        dh: &[f64],
        dc: &[f64],
        grad: &mut VrnnParams,
    ) -> (Vec<f64>, Vec<f64>) {
        let p = &self.params;
        let hd = self.hidden_dim;

        // emission: d(-recon)/dl = σ(l) - x
        let mut dlogits: Vec<f64> = out.logits.iter().map(|&l| weight * sigmoid(l)).collect();
        for &i in &cache.active {
            dlogits[i] -= weight;
        }
        let deh = p.emit_logits.backward(&cache.emit_logits, &dlogits, &mut grad.emit_logits);
        let d_az_h = p.emit_hidden.backward(&cache.emit_hidden, &deh, &mut grad.emit_hidden);
        let mut daz = d_az_h[..hd].to_vec();
        let mut dh_prev = d_az_h[hd..].to_vec();

        let (d_in, dh_lstm, dc_prev) = p.lstm.backward(&cache.lstm, dh, dc, &mut grad.lstm);
        let mut dax = d_in[..hd].to_vec();
        add_into(&mut daz, &d_in[hd..]);
        add_into(&mut dh_prev, &dh_lstm);

        let dz = p.phi_z.backward(&cache.phi_z, &daz, &mut grad.phi_z);

        let [dmq, dsq, dmp, dsp] = kl_grad(&out.posterior, &out.prior);
        let dmu_q: Vec<f64> = (0..self.latent_dim).map(|k| weight * dmq[k] + dz[k]).collect();
        let dsig_q: Vec<f64> = (0..self.latent_dim).map(|k| weight * dsq[k] + dz[k] * cache.eps[k]).collect();
        let dmu_p: Vec<f64> = dmp.iter().map(|g| weight * g).collect();
        let dsig_p: Vec<f64> = dsp.iter().map(|g| weight * g).collect();

        let mut dqh = p.post_mu.backward(&cache.post_mu, &dmu_q, &mut grad.post_mu);
        add_into(&mut dqh, &p.post_sigma.backward(&cache.post_sigma, &dsig_q, &mut grad.post_sigma));
        let d_ax_h = p.post_hidden.backward(&cache.post_hidden, &dqh, &mut grad.post_hidden);
        add_into(&mut dax, &d_ax_h[..hd]);
        add_into(&mut dh_prev, &d_ax_h[hd..]);

        let mut dph = p.prior_mu.backward(&cache.prior_mu, &dmu_p, &mut grad.prior_mu);
        add_into(&mut dph, &p.prior_sigma.backward(&cache.prior_sigma, &dsig_p, &mut grad.prior_sigma));
        add_into(&mut dh_prev, &p.prior_hidden.backward(&cache.prior_hidden, &dph, &mut grad.prior_hidden));

        p.phi_x.backward(&cache.phi_x, &dax, &mut grad.phi_x);
        (dh_prev, dc_prev)
    }
}

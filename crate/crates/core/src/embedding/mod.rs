//! The Embedding block: a variational recurrent network over four-hot
//! codes on a regular 10-minute grid.

mod dist;
mod elbo;
mod infer;
mod io;
mod model;
mod train;

pub use dist::{emission_logprob, emission_logprob_active, emission_probs, kl_gauss_diag, Gaussian};
pub use elbo::{draw_noise, elbo, elbo_backward, ElboReport};
pub use infer::{
    argmax_code, encode_grid, generate_step, is_loglik, regimes, sample_code, sample_gaussian, stepwise_loglik,
    stepwise_loglik_track, HiddenRegime,
};
#[allow(unused_imports)]
pub(crate) use infer::Cloud;
pub use io::roi_mismatch;
pub use model::{StepOutput, VrnnModel, VrnnParams, PARAM_NAMES, SIGMA_FLOOR};
pub use train::{evaluate_elbo, train, EpochRecord, TrainConfig};

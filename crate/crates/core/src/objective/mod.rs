//! Negative ELBO assembly, the pseudo-caption objective, their combination
//! and the training loop.

mod elbo;
mod kl;
mod train;

pub use elbo::{
    combined_loss, elbo_paired, elbo_pseudo, unroll, ElboNoise, ElboVars, LossBreakdown, ObjectLatent, SeqExample,
};
pub use kl::{concat_gauss, kl_diag_gauss};
pub use train::{read_loss_log, write_loss_log, LossRow, PairedExample, PseudoExample, TrainConfig, Trainer};

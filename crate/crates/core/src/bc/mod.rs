//! Behavioral-cloning pretraining of the encoder and recurrent actor.
//!
//! Gradients of the supervised loss flow through the same forward-mode
//! traces used online; the encoder gets its own trace `∂h/∂θ_enc` so that
//! its gradient also sees the recurrence.

mod autoencoder;
mod dataset;
mod train;

pub use autoencoder::{Autoencoder, DecodeCache, EncodeCache};
pub use dataset::{DemoDataset, DemoEpisode, DemoMeta};
pub use train::{
    bc_loss, clamp_demo_actions, evaluate_bc, flatten_params, init_policy, pretrain, split_dataset,
    write_params, Adam, BcConfig, BcError, BcGrads, BcMetrics, BcSequence, EpochLoss, Pretrainer,
    StepLoss, DEMO_ACTION_MARGIN,
};

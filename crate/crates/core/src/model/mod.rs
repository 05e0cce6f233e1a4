//! Split-latent Swap-VAE: losses, augmentation, model and trainer.

mod augment;
mod losses;
mod swapvae;
mod train;

pub use augment::{AugmentationConfig, TrainData};
pub use losses::{
    align_distance, align_loss, align_loss_grad, kl_gaussian, kl_style, kl_style_grad, poisson_nll, poisson_nll_grad,
    softmax_cross_entropy,
};
pub use swapvae::{block_swap, LatentCode, LossBreakdown, LossWeights, Noise, SwapVae, SwapVaeConfig, Variant};
pub use train::{steps_per_epoch, Budget, Objective, TrainConfig, TrainProgress, Trainer};

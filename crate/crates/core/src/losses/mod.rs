//! Training objectives, image metrics and bicubic resampling.

mod image;
mod metrics;
mod objectives;


pub use image::{bicubic_resize, cubic, quantize_8bit, resample_taps, rgb_to_y};
pub use metrics::{
    gaussian_taps, psnr, ssim, ssim_plane, y_scores, ImageScores, MetricConvention, SSIM_K1, SSIM_K2, SSIM_SIGMA,
    SSIM_WINDOW,
};
pub use objectives::{
    adversarial_losses, hinge_d_loss, hinge_g_loss, l1_loss, perceptual_loss, r1_penalty, Discriminator, FeatureNet,
    IdentityFeatures, LinearDiscriminator, LossWeights, MultiScaleDiscriminator, R1_GAMMA,
};

//! Input builders shared by the benchmarks.

use hitsr_core::model::{HiTSRModel, ModelConfig};
use hitsr_core::{SeededRng, Tensor};

/// Uniform `[0, 1)` image batch.
pub fn image(shape: &[usize], seed: u64) -> Tensor<f32> {
    Tensor::rand_uniform(shape, 0.0, 1.0, &mut SeededRng::new(seed))
}

/// A model plus an LR/reference pair sized for it.
pub fn model_and_inputs(cfg: &ModelConfig) -> (HiTSRModel<f32>, Tensor<f32>, Tensor<f32>) {
    let model = HiTSRModel::build(cfg, 0).expect("preset configs are valid");
    let lr = image(&[1, 3, cfg.base, cfg.base], 1);
    let s = cfg.base * cfg.scale;
    let reference = image(&[1, 3, s, s], 2);
    (model, lr, reference)
}

//! Data loading, augmentation, optimisation, evaluation and the reference
//! robustness harness.

mod ablation;
mod audit;
mod augment;
mod config;
mod dataset;
mod eval;
mod fixture;
mod io;
mod optim;
mod report;
mod robustness;
mod train;

#[cfg(test)]
mod tests;

pub use ablation::{ablation_sweep, AblationReport, VariantResult};
pub use audit::{audit_attention, AttentionAudit};
pub use augment::{augment, flip, rot90, Augment};
pub use config::{RunConfig, TrainConfig, TRAIN_KEYS};
pub use dataset::{crop, load_dataset, random_crop, RefMode, Sample, SCALE};
pub use eval::{
    bicubic_baseline, crop_top_left, evaluate, par_map, reflect_pad, score_sample, super_resolve, EvalRow, EvalTable,
};
pub use fixture::{fixture_samples, symmetric_image, write_dataset, FIXTURE_SEED, FIXTURE_SIZE};
pub use io::{read_image, to_rgb8, write_image, ImageFormat};
pub use optim::{Adam, AdamConfig, MultiStep, StepOutcome};
pub use report::{loss as fmt_loss, num as fmt_num, Csv};
pub use robustness::{robustness_run, rotate, scale_into_canvas, Level, RobustnessSpec, TransformKind};
pub use train::{stack, RunReport, StepLog, Trainer};

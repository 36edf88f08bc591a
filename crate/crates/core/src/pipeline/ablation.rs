use log::info;

use super::config::RunConfig;
use super::dataset::Sample;
use super::report::{loss, Csv};
use super::train::Trainer;
use crate::error::Result;
use crate::model::Ablation;

/// Final training loss of one variant over several seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct VariantResult {
    /// `full` or the name of the component switched off.
    pub variant: String,
    pub params: usize,
    pub losses: Vec<f64>,
}

impl VariantResult {
    pub fn mean(&self) -> f64 {
        self.losses.iter().sum::<f64>() / self.losses.len().max(1) as f64
    }
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub full: VariantResult,
    pub variants: Vec<VariantResult>,
}

impl AblationReport {
    /// Variants whose mean final loss beats the full model.
    pub fn inversions(&self) -> Vec<&str> {
        let full = self.full.mean();
        self.variants.iter().filter(|v| v.mean() < full).map(|v| v.variant.as_str()).collect()
    }

    /// `variant, params, loss_seed<k>..., mean, delta_vs_full, flag`
    pub fn to_csv(&self) -> Csv {
        let seeds = self.full.losses.len();
        let mut header = vec!["variant".to_string(), "params".to_string()];
        header.extend((0..seeds).map(|k| format!("loss_seed{k}")));
        header.extend(["mean".into(), "delta_vs_full".into(), "flag".into()]);
        let mut csv = Csv::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
        let full = self.full.mean();
        for v in std::iter::once(&self.full).chain(&self.variants) {
            let mut row = vec![v.variant.clone(), v.params.to_string()];
            row.extend(v.losses.iter().map(|&l| loss(l)));
            let flag = if v.variant != "full" && v.mean() < full { "inversion" } else { "" };
            row.extend([loss(v.mean()), loss(v.mean() - full), flag.to_string()]);
            csv.push(row).expect("fixed width");
        }
        csv
    }
}

fn run_variant(base: &RunConfig, variant: &str, train_set: &[Sample], seeds: &[u64]) -> Result<VariantResult> {
    let mut losses = Vec::with_capacity(seeds.len());
    let mut params = 0;
    for &seed in seeds {
        let mut cfg = base.clone();
        if variant != "full" {
            cfg.model.ablation = Ablation::without(variant)?;
        }
        cfg.train.seed = seed;
        let mut trainer: Trainer<f32> = Trainer::new(cfg, train_set.to_vec(), Vec::new())?;
        params = trainer.model.param_count();
        trainer.run(None)?;
        let l = trainer.pool_loss()?;
        info!("ablation {variant} seed {seed}: final loss {l:.6}");
        losses.push(l);
    }
    Ok(VariantResult { variant: variant.to_string(), params, losses })
}

/// Trains the full model and each single-component-off variant under
/// `base` for every seed and compares final training losses.
pub fn ablation_sweep(base: &RunConfig, train_set: &[Sample], seeds: &[u64]) -> Result<AblationReport> {
    let full = run_variant(base, "full", train_set, seeds)?;
    let variants =
        Ablation::COMPONENTS.iter().map(|c| run_variant(base, c, train_set, seeds)).collect::<Result<_>>()?;
    Ok(AblationReport { full, variants })
}

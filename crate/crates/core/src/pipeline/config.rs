use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::optim::{AdamConfig, MultiStep};
use crate::error::{Error, Result};
use crate::losses::{LossWeights, MetricConvention, R1_GAMMA};
use crate::model::ModelConfig;

/// Optimisation and data settings of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub adam: AdamConfig,
    pub batch: usize,
    pub max_steps: u64,
    /// `None` means 50%, 75% and 90% of `max_steps`.
    pub milestones: Option<Vec<u64>>,
    pub decay: f64,
    pub seed: u64,
    /// HR crop side; the LR crop is a quarter of it.
    pub crop: usize,
    /// Draw this many crops once and train on them only (0: fresh crops every step).
    pub fixed_crops: usize,
    pub augment: bool,
    pub weights: LossWeights,
    pub r1_gamma: f64,
    pub disc_width: usize,
    /// Steps between telemetry and evaluation (0: only at the start and the end).
    pub eval_interval: u64,
    /// Steps between checkpoints (0: only at the end).
    pub checkpoint_interval: u64,
    pub metric: MetricConvention,
    /// Draw references from other samples instead of `ref/`.
    pub random_ref: bool,
    pub data: Option<PathBuf>,
    pub eval_data: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 2e-4,
            adam: AdamConfig::default(),
            batch: 9,
            max_steps: 1000,
            milestones: None,
            decay: 0.5,
            seed: 0,
            crop: 160,
            fixed_crops: 0,
            augment: true,
            weights: LossWeights::default(),
            r1_gamma: R1_GAMMA,
            disc_width: 32,
            eval_interval: 100,
            checkpoint_interval: 0,
            metric: MetricConvention::EightBit,
            random_ref: false,
            data: None,
            eval_data: None,
        }
    }
}

/// Keys understood by [`TrainConfig::set`].
pub const TRAIN_KEYS: [&str; 23] = [
    "lr",
    "beta1",
    "beta2",
    "adam_eps",
    "batch",
    "max_steps",
    "milestones",
    "decay",
    "seed",
    "crop",
    "fixed_crops",
    "augment",
    "w_rec",
    "w_per",
    "w_adv",
    "r1_gamma",
    "disc_width",
    "eval_interval",
    "checkpoint_interval",
    "metric",
    "random_ref",
    "data",
    "eval_data",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl TrainConfig {
    /// Single-core overfitting setup: four fixed 32x32 crops, full batch,
    /// reconstruction loss only, no augmentation.
    pub fn overfit() -> Self {
        Self {
            lr0: 2e-3,
            batch: 4,
            max_steps: 500,
            milestones: Some(Vec::new()),
            crop: 32,
            fixed_crops: 4,
            augment: false,
            weights: LossWeights::reconstruction_only(),
            eval_interval: 50,
            ..Self::default()
        }
    }

    pub fn schedule(&self) -> MultiStep {
        MultiStep {
            lr0: self.lr0,
            milestones: self.milestones.clone().unwrap_or_else(|| MultiStep::default_milestones(self.max_steps)),
            decay: self.decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        if self.crop == 0 || !self.crop.is_multiple_of(4) {
            return Err(Error::Config(format!("crop {} must be a positive multiple of 4", self.crop)));
        }
        if !(self.r1_gamma >= 0.0 && self.r1_gamma.is_finite()) {
            return Err(Error::Config(format!("r1_gamma {} must be non-negative", self.r1_gamma)));
        }
        if self.disc_width == 0 {
            return Err(Error::Config("disc_width must be positive".into()));
        }
        self.adam.validate()?;
        self.weights.validate()?;
        self.schedule().validate()
    }

    /// Sets one key; `Ok(false)` if the key is not a training key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let v = value.trim();
        match key {
            "lr" => self.lr0 = parse(key, v)?,
            "beta1" => self.adam.beta1 = parse(key, v)?,
            "beta2" => self.adam.beta2 = parse(key, v)?,
            "adam_eps" => self.adam.eps = parse(key, v)?,
            "batch" => self.batch = parse(key, v)?,
            "max_steps" => self.max_steps = parse(key, v)?,
            "milestones" => {
                self.milestones = match v {
                    "auto" => None,
                    "" | "none" => Some(Vec::new()),
                    list => Some(list.split(',').map(|m| parse(key, m.trim())).collect::<Result<_>>()?),
                }
            }
            "decay" => self.decay = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "crop" => self.crop = parse(key, v)?,
            "fixed_crops" => self.fixed_crops = parse(key, v)?,
            "augment" => self.augment = parse(key, v)?,
            "w_rec" => self.weights.w_rec = parse(key, v)?,
            "w_per" => self.weights.w_per = parse(key, v)?,
            "w_adv" => self.weights.w_adv = parse(key, v)?,
            "r1_gamma" => self.r1_gamma = parse(key, v)?,
            "disc_width" => self.disc_width = parse(key, v)?,
            "eval_interval" => self.eval_interval = parse(key, v)?,
            "checkpoint_interval" => self.checkpoint_interval = parse(key, v)?,
            "metric" => {
                self.metric = match v {
                    "8bit" => MetricConvention::EightBit,
                    "float" => MetricConvention::Float,
                    _ => return Err(Error::Config(format!("metric must be 8bit or float, got {v:?}"))),
                }
            }
            "random_ref" => self.random_ref = parse(key, v)?,
            "data" => self.data = (!v.is_empty()).then(|| PathBuf::from(v)),
            "eval_data" => self.eval_data = (!v.is_empty()).then(|| PathBuf::from(v)),
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Model and training settings read from one `key = value` file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    /// The overfitting preset pair used by the desk-scale experiments.
    pub fn overfit() -> Self {
        Self { model: ModelConfig::overfit(), train: TrainConfig::overfit() }
    }

    /// Parses the run-file grammar: one `key = value` per line, `#` starts a
    /// comment, blank lines are ignored. `preset = default|tiny|overfit`
    /// selects the starting point wherever it appears; every other key
    /// overrides it. Unknown keys and repeated keys are errors. Relative
    /// `data` paths resolve against `base`.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut entries = Vec::new();
        let mut preset = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if entries.iter().any(|(_, key, _): &(usize, String, String)| *key == k)
                || (k == "preset" && preset.is_some())
            {
                return Err(Error::Config(format!("line {}: key {k:?} given twice", n + 1)));
            }
            if k == "preset" {
                preset = Some(v);
            } else {
                entries.push((n + 1, k, v));
            }
        }
        let mut cfg = match preset.as_deref() {
            None | Some("default") => Self::default(),
            Some("tiny") => Self { model: ModelConfig::tiny(), train: TrainConfig::default() },
            Some("overfit") => Self::overfit(),
            Some(other) => return Err(Error::Config(format!("unknown preset {other:?} (default, tiny, overfit)"))),
        };
        for (n, k, v) in entries {
            let known = cfg.model.set(&k, &v).map_err(|e| e.context(format!("line {n}")))?
                || cfg.train.set(&k, &v).map_err(|e| e.context(format!("line {n}")))?;
            if !known {
                return Err(Error::Config(format!("line {n}: unknown key {k:?}")));
            }
        }
        if let Some(base) = base {
            for p in [&mut cfg.train.data, &mut cfg.train.eval_data].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent()).map_err(|e| e.context(path.display()))
    }

    /// Every key with its effective value, in the documented order.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let mut out = self.model.to_text();
        let milestones = match &t.milestones {
            None => "auto".to_string(),
            Some(m) if m.is_empty() => "none".to_string(),
            Some(m) => m.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
        };
        let metric = match t.metric {
            MetricConvention::EightBit => "8bit",
            MetricConvention::Float => "float",
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let values = [
            format!("{:?}", t.lr0),
            format!("{:?}", t.adam.beta1),
            format!("{:?}", t.adam.beta2),
            format!("{:?}", t.adam.eps),
            t.batch.to_string(),
            t.max_steps.to_string(),
            milestones,
            format!("{:?}", t.decay),
            t.seed.to_string(),
            t.crop.to_string(),
            t.fixed_crops.to_string(),
            t.augment.to_string(),
            format!("{:?}", t.weights.w_rec),
            format!("{:?}", t.weights.w_per),
            format!("{:?}", t.weights.w_adv),
            format!("{:?}", t.r1_gamma),
            t.disc_width.to_string(),
            t.eval_interval.to_string(),
            t.checkpoint_interval.to_string(),
            metric.to_string(),
            t.random_ref.to_string(),
            path(&t.data),
            path(&t.eval_data),
        ];
        for (k, v) in TRAIN_KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

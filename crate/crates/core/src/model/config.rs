use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::attention::{AttentionConfig, Gate};
use crate::blocks::NormPlacement;
use crate::error::{Error, Result};

/// Where the frozen reference feature pyramid gets its weights.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RefSource {
    /// Drawn from a fixed-seed generator.
    Builtin(u64),
    /// Read from a checkpoint-format file holding `refnet.*` tensors.
    File(PathBuf),
}

impl std::fmt::Display for RefSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RefSource::Builtin(s) => write!(f, "builtin:{s}"),
            RefSource::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

impl FromStr for RefSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(seed) = s.strip_prefix("builtin:") {
            let seed = seed.parse().map_err(|_| Error::Config(format!("bad ref_source seed in {s:?}")))?;
            Ok(RefSource::Builtin(seed))
        } else if let Some(path) = s.strip_prefix("file:") {
            if path.is_empty() {
                return Err(Error::Config("ref_source file: needs a path".into()));
            }
            Ok(RefSource::File(PathBuf::from(path)))
        } else {
            Err(Error::Config(format!("ref_source must be builtin:<seed> or file:<path>, got {s:?}")))
        }
    }
}

/// Component switches for ablation runs. All on is the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ablation {
    pub self_attention: bool,
    pub cross_attention: bool,
    pub gating: bool,
    pub se: bool,
    pub lsc: bool,
    pub par: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self { self_attention: true, cross_attention: true, gating: true, se: true, lsc: true, par: true }
    }
}

impl Ablation {
    /// Names accepted by [`Ablation::without`].
    pub const COMPONENTS: [&'static str; 6] = ["self", "cross", "gating", "se", "lsc", "par"];

    /// The full model with one component switched off.
    pub fn without(component: &str) -> Result<Self> {
        let mut a = Self::default();
        match component {
            "self" => a.self_attention = false,
            "cross" => a.cross_attention = false,
            "gating" => a.gating = false,
            "se" => a.se = false,
            "lsc" => a.lsc = false,
            "par" => a.par = false,
            other => return Err(Error::Config(format!("unknown ablation component {other:?}"))),
        }
        Ok(a)
    }

    /// Gating off keeps both attentions at an even, fixed mix.
    pub fn gate(&self) -> Result<Gate> {
        match (self.self_attention, self.cross_attention) {
            (true, true) if self.gating => Ok(Gate::Learned),
            (true, true) => Ok(Gate::Fixed(0.5)),
            (true, false) => Ok(Gate::SelfOnly),
            (false, true) => Ok(Gate::CrossOnly),
            (false, false) => Err(Error::Config("self and cross attention cannot both be disabled".into())),
        }
    }
}

/// Network hyper-parameters. Embedding width is `heads * head_dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub window: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub depth: usize,
    pub pairs: usize,
    pub base: usize,
    pub scale: usize,
    pub feat_channels: usize,
    pub mlp_ratio: usize,
    pub lambda_init: f64,
    pub norm: NormPlacement,
    pub global_residual: bool,
    pub ref_source: RefSource,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            window: 8,
            heads: 4,
            head_dim: 64,
            depth: 2,
            pairs: 3,
            base: 40,
            scale: 4,
            feat_channels: 64,
            mlp_ratio: 4,
            lambda_init: 1.0,
            norm: NormPlacement::Pre,
            global_residual: true,
            ref_source: RefSource::Builtin(0),
            ablation: Ablation::default(),
        }
    }
}

/// Keys understood by [`ModelConfig::set`].
pub const MODEL_KEYS: [&str; 19] = [
    "window",
    "heads",
    "head_dim",
    "depth",
    "pairs",
    "base",
    "scale",
    "feat_channels",
    "mlp_ratio",
    "lambda_init",
    "norm",
    "global_residual",
    "ref_source",
    "self_attention",
    "cross_attention",
    "gating",
    "se",
    "lsc",
    "par",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl ModelConfig {
    /// Small network for gradient checks: window 4, two heads, 16x16 input.
    pub fn tiny() -> Self {
        Self { window: 4, heads: 2, base: 16, ..Self::default() }
    }

    /// Very small network used for overfitting and ablation sweeps on a
    /// single core.
    pub fn overfit() -> Self {
        Self {
            window: 4,
            heads: 2,
            head_dim: 8,
            depth: 2,
            pairs: 2,
            base: 8,
            feat_channels: 16,
            mlp_ratio: 2,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "tiny" => Ok(Self::tiny()),
            "overfit" => Ok(Self::overfit()),
            other => Err(Error::Config(format!("unknown model preset {other:?} (default, tiny, overfit)"))),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn num_blocks(&self) -> usize {
        2 * self.pairs
    }

    pub fn attention(&self) -> Result<AttentionConfig> {
        AttentionConfig::new(self.heads, self.head_dim, self.window)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("window", self.window),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("depth", self.depth),
            ("pairs", self.pairs),
            ("base", self.base),
            ("feat_channels", self.feat_channels),
            ("mlp_ratio", self.mlp_ratio),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if self.scale != 4 {
            return Err(Error::Config(format!("scale factor is fixed at 4, got {}", self.scale)));
        }
        if !self.head_dim.is_multiple_of(2) {
            return Err(Error::Config(format!("head_dim must be even, got {}", self.head_dim)));
        }
        if !self.feat_channels.is_multiple_of(2) {
            return Err(Error::Config(format!("feat_channels must be even, got {}", self.feat_channels)));
        }
        if !self.lambda_init.is_finite() {
            return Err(Error::Config("lambda_init must be finite".into()));
        }
        self.check_input(self.base, self.base)?;
        self.ablation.gate()?;
        self.attention()?.validate()
    }

    /// Legal low-resolution input sizes are multiples of the window and of 2.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        for (name, v) in [("height", h), ("width", w)] {
            if v == 0 || v % self.window != 0 || v % 2 != 0 {
                return Err(Error::Config(format!(
                    "input {name} {v} must be a positive multiple of the window size k={} and of 2",
                    self.window
                )));
            }
        }
        Ok(())
    }

    /// Sets one key; `Ok(false)` if the key is not a model key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let v = value.trim();
        match key {
            "window" => self.window = parse(key, v)?,
            "heads" => self.heads = parse(key, v)?,
            "head_dim" => self.head_dim = parse(key, v)?,
            "depth" => self.depth = parse(key, v)?,
            "pairs" => self.pairs = parse(key, v)?,
            "base" => self.base = parse(key, v)?,
            "scale" => self.scale = parse(key, v)?,
            "feat_channels" => self.feat_channels = parse(key, v)?,
            "mlp_ratio" => self.mlp_ratio = parse(key, v)?,
            "lambda_init" => self.lambda_init = parse(key, v)?,
            "norm" => {
                self.norm = match v {
                    "pre" => NormPlacement::Pre,
                    "post" => NormPlacement::Post,
                    _ => return Err(Error::Config(format!("norm must be pre or post, got {v:?}"))),
                }
            }
            "global_residual" => self.global_residual = parse(key, v)?,
            "ref_source" => self.ref_source = v.parse()?,
            "self_attention" => self.ablation.self_attention = parse(key, v)?,
            "cross_attention" => self.ablation.cross_attention = parse(key, v)?,
            "gating" => self.ablation.gating = parse(key, v)?,
            "se" => self.ablation.se = parse(key, v)?,
            "lsc" => self.ablation.lsc = parse(key, v)?,
            "par" => self.ablation.par = parse(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// `key = value` lines in a fixed order.
    pub fn to_text(&self) -> String {
        let a = &self.ablation;
        let norm = match self.norm {
            NormPlacement::Pre => "pre",
            NormPlacement::Post => "post",
        };
        let values: [String; 19] = [
            self.window.to_string(),
            self.heads.to_string(),
            self.head_dim.to_string(),
            self.depth.to_string(),
            self.pairs.to_string(),
            self.base.to_string(),
            self.scale.to_string(),
            self.feat_channels.to_string(),
            self.mlp_ratio.to_string(),
            format!("{:?}", self.lambda_init),
            norm.to_string(),
            self.global_residual.to_string(),
            self.ref_source.to_string(),
            a.self_attention.to_string(),
            a.cross_attention.to_string(),
            a.gating.to_string(),
            a.se.to_string(),
            a.lsc.to_string(),
            a.par.to_string(),
        ];
        let mut out = String::new();
        for (k, v) in MODEL_KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Parses `key = value` lines; `#` starts a comment. Unknown keys fail.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", line_no + 1)))?;
            if !cfg.set(k.trim(), v)? {
                return Err(Error::Config(format!("line {}: unknown key {:?}", line_no + 1, k.trim())));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

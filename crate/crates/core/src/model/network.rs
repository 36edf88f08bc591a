use crate::attention::Gate;
use crate::blocks::{
    to_channels_first, to_channels_last, BlockOptions, Builder, Conv2d, Ctx, Downsampler, FeatureExtractor, Lsc,
    ParamStore, TransformerBlock, Upsampler,
};
use crate::error::{Error, Result};
use crate::losses::{bicubic_resize, FeatureNet};
use rand::Rng;

use crate::tensor::{grad_check_subset_pinned, GradCheckReport, RngState, Scalar, SeededRng, Tape, Tensor, Var};

use super::checkpoint::Checkpoint;
use super::config::{ModelConfig, RefSource};

/// Frozen three-level conv pyramid over the high-resolution reference.
/// Produces `C` channels at `2h` and `h` from a `4h` input.
#[derive(Clone, Debug)]
pub struct RefFeatureNet {
    pub convs: [Conv2d; 3],
}

impl RefFeatureNet {
    pub const PREFIX: &'static str = "refnet";

    /// He-uniform weights, so activations keep their scale without training.
    pub fn new<E: Scalar>(b: &mut Builder<'_, E>, channels: usize) -> Result<Self> {
        let mut conv = |name: &str, c_in: usize, stride: usize, padding: usize| -> Result<Conv2d> {
            let bound = (6.0 / (c_in * 9) as f64).sqrt();
            let weight = b.uniform(&format!("{}.{name}.weight", Self::PREFIX), &[channels, c_in, 3, 3], bound)?;
            let bias = Some(b.full(&format!("{}.{name}.bias", Self::PREFIX), &[channels], 0.0)?);
            Ok(Conv2d { weight, bias, stride, padding })
        };
        Ok(Self { convs: [conv("conv0", 3, 1, 1)?, conv("conv1", channels, 2, 0)?, conv("conv2", channels, 2, 0)?] })
    }

    /// `(features at 2h, features at h)` from `[B, 3, 4h, 4w]`.
    pub fn forward<'t, E: Scalar>(&self, ctx: &Ctx<'t, E>, x: &Var<'t, E>) -> Result<(Var<'t, E>, Var<'t, E>)> {
        let f4 = self.convs[0].forward(ctx, x)?.gelu()?;
        let f2 = self.convs[1].forward(ctx, &f4.zero_pad((0, 1, 0, 1))?)?.gelu()?;
        let f1 = self.convs[2].forward(ctx, &f2.zero_pad((0, 1, 0, 1))?)?.gelu()?;
        Ok((f2, f1))
    }
}

pub const ADAM_M: &str = "adam.m.";
pub const ADAM_V: &str = "adam.v.";
/// Checkpoint tensors that are not model parameters.
pub type NamedTensors = Vec<(String, Tensor<f32>)>;

/// Prefix of opaque training-loop state carried through checkpoints.
pub const TRAIN_STATE: &str = "train.";

/// Per-block gate telemetry: `sigma(lambda_h)` for every head.
#[derive(Clone, Debug, PartialEq)]
pub struct GateReading {
    pub block: usize,
    pub sigma: Vec<f64>,
}

/// The full super-resolution network with its parameters.
#[derive(Clone, Debug)]
pub struct HiTSRModel<E: Scalar = f32> {
    pub cfg: ModelConfig,
    pub params: ParamStore<E>,
    refnet: Option<RefFeatureNet>,
    fe_lr: FeatureExtractor,
    embed_lr: Conv2d,
    fe_ref_low: Option<FeatureExtractor>,
    fe_ref_high: Option<FeatureExtractor>,
    embed_ref_low: Option<Conv2d>,
    embed_ref_high: Option<Conv2d>,
    blocks: Vec<TransformerBlock>,
    ups: Vec<Upsampler>,
    downs: Vec<Downsampler>,
    lsc_low: Vec<Lsc>,
    lsc_high: Vec<Lsc>,
    head_up: Upsampler,
    head_conv: Conv2d,
}

impl<E: Scalar> HiTSRModel<E> {
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        Self::build_inner(cfg, seed, true)
    }

    fn build_inner(cfg: &ModelConfig, seed: u64, load_ref_file: bool) -> Result<Self> {
        cfg.validate()?;
        let gate = cfg.ablation.gate()?;
        let cross = gate.needs_cross();
        let (c, d) = (cfg.feat_channels, cfg.embed_dim());
        let use_se = cfg.ablation.se;
        let mut params = ParamStore::new();

        let refnet = if cross {
            let mut ref_store = ParamStore::new();
            let mut ref_rng = SeededRng::new(match cfg.ref_source {
                RefSource::Builtin(s) => s,
                RefSource::File(_) => 0,
            });
            let mut b = Builder { store: &mut ref_store, rng: &mut ref_rng, frozen: true };
            let net = RefFeatureNet::new(&mut b, c)?;
            if let (RefSource::File(path), true) = (&cfg.ref_source, load_ref_file) {
                let file = Checkpoint::load(path)?;
                for id in ref_store.ids() {
                    let name = ref_store.name(id).to_string();
                    let t = file
                        .tensor(&name)
                        .ok_or_else(|| Error::Format(format!("{} has no tensor {name}", path.display())))?;
                    ref_store.set(id, t.cast())?;
                }
            }
            for id in ref_store.ids() {
                params.add(ref_store.name(id), ref_store.get(id).clone(), true)?;
            }
            Some(net)
        } else {
            None
        };

        let mut rng = SeededRng::new(seed);
        let mut b = Builder::new(&mut params, &mut rng);
        let fe_lr = FeatureExtractor::new(&mut b, "fe_lr", Some(3), c, 3, use_se)?;
        let embed_lr = Conv2d::same(&mut b, "embed_lr", c, d, 1)?;
        let (fe_ref_low, fe_ref_high, embed_ref_low, embed_ref_high) = if cross {
            (
                Some(FeatureExtractor::new(&mut b, "fe_ref_low", None, c, 3, use_se)?),
                Some(FeatureExtractor::new(&mut b, "fe_ref_high", None, c, 1, use_se)?),
                Some(Conv2d::same(&mut b, "embed_ref_low", c, d, 1)?),
                Some(Conv2d::same(&mut b, "embed_ref_high", c, d, 1)?),
            )
        } else {
            (None, None, None, None)
        };

        let att = cfg.attention()?;
        let opts = BlockOptions {
            gate,
            use_par: cfg.ablation.par,
            norm: cfg.norm,
            mlp_ratio: cfg.mlp_ratio,
            depth: cfg.depth,
            lambda_init: cfg.lambda_init,
        };
        let mut blocks = Vec::new();
        let mut ups = Vec::new();
        let mut downs = Vec::new();
        let mut lsc_low = Vec::new();
        let mut lsc_high = Vec::new();
        for p in 0..cfg.pairs {
            blocks.push(TransformerBlock::new(&mut b, 2 * p, att, opts)?);
            ups.push(Upsampler::new(&mut b, &format!("up{p}"), d, d)?);
            blocks.push(TransformerBlock::new(&mut b, 2 * p + 1, att, opts)?);
            if p + 1 < cfg.pairs {
                downs.push(Downsampler::new(&mut b, &format!("down{p}"), d)?);
            }
            if p > 0 && cfg.ablation.lsc {
                lsc_low.push(Lsc::new(&mut b, &format!("lsc_low{p}"), d)?);
                lsc_high.push(Lsc::new(&mut b, &format!("lsc_high{p}"), d)?);
            }
        }
        let head_up = Upsampler::new(&mut b, "head.up", d, c)?;
        let head_conv = Conv2d::same(&mut b, "head.conv", c, 3, 3)?;
        Ok(Self {
            cfg: cfg.clone(),
            params,
            refnet,
            fe_lr,
            embed_lr,
            fe_ref_low,
            fe_ref_high,
            embed_ref_low,
            embed_ref_high,
            blocks,
            ups,
            downs,
            lsc_low,
            lsc_high,
            head_up,
            head_conv,
        })
    }

    /// Trainable element count; the frozen reference pyramid is excluded.
    pub fn param_count(&self) -> usize {
        self.params.trainable_numel()
    }

    pub fn blocks(&self) -> &[TransformerBlock] {
        &self.blocks
    }

    pub fn refnet(&self) -> Option<&RefFeatureNet> {
        self.refnet.as_ref()
    }

    pub fn uses_reference(&self) -> bool {
        self.refnet.is_some()
    }

    /// `sigma(lambda)` per head for blocks with a learned gate.
    pub fn gate_readings(&self) -> Vec<GateReading> {
        self.blocks
            .iter()
            .filter_map(|blk| {
                blk.lambda.map(|id| GateReading {
                    block: blk.index,
                    sigma: self.params.get(id).data().iter().map(|l| 1.0 / (1.0 + (-l.f64()).exp())).collect(),
                })
            })
            .collect()
    }

    fn check_inputs(&self, lr: &[usize], reference: Option<&[usize]>) -> Result<()> {
        if lr.len() != 4 || lr[1] != 3 {
            return Err(Error::shape("model", format!("LR input {lr:?}, expected [B, 3, h, w]")));
        }
        self.cfg.check_input(lr[2], lr[3])?;
        match reference {
            Some(r) => {
                let want = [lr[0], 3, lr[2] * self.cfg.scale, lr[3] * self.cfg.scale];
                if r != want {
                    return Err(Error::Config(format!(
                        "reference {r:?} must be exactly {}x the LR input, i.e. {want:?}",
                        self.cfg.scale
                    )));
                }
            }
            None if self.uses_reference() => {
                return Err(Error::Contract("cross-attention is enabled but no reference was given".into()))
            }
            None => {}
        }
        Ok(())
    }

    /// Reference tokens for the low and high grids.
    fn reference_tokens<'t>(&self, ctx: &Ctx<'t, E>, r: &Var<'t, E>) -> Result<(Var<'t, E>, Var<'t, E>)> {
        let (Some(net), Some(fe_low), Some(fe_high), Some(em_low), Some(em_high)) =
            (&self.refnet, &self.fe_ref_low, &self.fe_ref_high, &self.embed_ref_low, &self.embed_ref_high)
        else {
            return Err(Error::Contract("model was built without a reference branch".into()));
        };
        let (f2, f1) = net.forward(ctx, r)?;
        let low = to_channels_last(&em_low.forward(ctx, &fe_low.forward(ctx, &f1)?)?)?;
        let high = to_channels_last(&em_high.forward(ctx, &fe_high.forward(ctx, &f2)?)?)?;
        Ok((low, high))
    }

    /// Raw network output `[B, 3, 4h, 4w]`, not clamped.
    pub fn forward<'t>(&self, ctx: &Ctx<'t, E>, lr: &Var<'t, E>, reference: Option<&Var<'t, E>>) -> Result<Var<'t, E>> {
        self.forward_with_gate(ctx, lr, reference, None)
    }

    /// Forward pass with every block's gate optionally overridden.
    pub fn forward_with_gate<'t>(
        &self,
        ctx: &Ctx<'t, E>,
        lr: &Var<'t, E>,
        reference: Option<&Var<'t, E>>,
        gate: Option<Gate>,
    ) -> Result<Var<'t, E>> {
        self.check_inputs(lr.shape(), reference.map(|r| r.shape()))?;
        let tape = ctx.tape;
        let grid = |stage: &str, v: &Var<'t, E>| tape.note(format!("shape:{stage}:{:?}", v.shape()));
        let refs =
            if self.uses_reference() { reference.map(|r| self.reference_tokens(ctx, r)).transpose()? } else { None };
        let mut x = to_channels_last(&self.embed_lr.forward(ctx, &self.fe_lr.forward(ctx, lr)?)?)?;
        grid("embed", &x);
        let mut prev_low: Option<Var<'t, E>> = None;
        let mut prev_high: Option<Var<'t, E>> = None;
        for p in 0..self.cfg.pairs {
            let run = |blk: &TransformerBlock, x: &Var<'t, E>, r: Option<&Var<'t, E>>| match gate {
                Some(g) => blk.forward_with_gate(ctx, x, r, g),
                None => blk.forward(ctx, x, r),
            };
            x = run(&self.blocks[2 * p], &x, refs.as_ref().map(|r| &r.0))?;
            if let (Some(prev), Some(lsc)) = (&prev_low, p.checked_sub(1).and_then(|i| self.lsc_low.get(i))) {
                x = lsc.forward(ctx, &x, prev)?;
            }
            grid(&format!("block{}", 2 * p), &x);
            prev_low = Some(x.clone());
            x = self.ups[p].forward(ctx, &x)?;
            grid(&format!("up{p}"), &x);
            x = run(&self.blocks[2 * p + 1], &x, refs.as_ref().map(|r| &r.1))?;
            if let (Some(prev), Some(lsc)) = (&prev_high, p.checked_sub(1).and_then(|i| self.lsc_high.get(i))) {
                x = lsc.forward(ctx, &x, prev)?;
            }
            grid(&format!("block{}", 2 * p + 1), &x);
            prev_high = Some(x.clone());
            if let Some(down) = self.downs.get(p) {
                x = down.forward(ctx, &x)?;
                grid(&format!("down{p}"), &x);
            }
        }
        let y = to_channels_first(&self.head_up.forward(ctx, &x)?)?.gelu()?;
        let out = self.head_conv.forward(ctx, &y)?;
        grid("output", &out);
        if self.cfg.global_residual {
            let (h, w) = (lr.shape()[2] * self.cfg.scale, lr.shape()[3] * self.cfg.scale);
            out.add(&tape.constant(bicubic_resize(lr.value(), h, w)?))
        } else {
            Ok(out)
        }
    }

    /// Gradient-free forward clamped to `[0, 1]`.
    pub fn infer(&self, lr: &Tensor<E>, reference: Option<&Tensor<E>>) -> Result<Tensor<E>> {
        let tape = Tape::no_grad();
        let ctx = Ctx::bind(&tape, &self.params, false);
        let r = reference.map(|r| tape.constant(r.clone()));
        let out = self.forward(&ctx, &tape.constant(lr.clone()), r.as_ref())?;
        Ok(out.value().map(|v| v.clamp(E::zero(), E::one())))
    }

    /// Shape events of one forward pass, in order.
    pub fn shape_audit(&self, lr_hw: (usize, usize)) -> Result<Vec<(String, Vec<usize>)>> {
        let tape = Tape::no_grad();
        let ctx = Ctx::bind(&tape, &self.params, false);
        let lr = tape.constant(Tensor::zeros(&[1, 3, lr_hw.0, lr_hw.1]));
        let r = self
            .uses_reference()
            .then(|| tape.constant(Tensor::zeros(&[1, 3, lr_hw.0 * self.cfg.scale, lr_hw.1 * self.cfg.scale])));
        self.forward(&ctx, &lr, r.as_ref())?;
        Ok(tape
            .events()
            .into_iter()
            .filter_map(|e| {
                let rest = e.strip_prefix("shape:")?;
                let (stage, shape) = rest.split_once(':')?;
                let dims =
                    shape.trim_matches(|c| c == '[' || c == ']').split(", ").filter_map(|d| d.parse().ok()).collect();
                Some((stage.to_string(), dims))
            })
            .collect())
    }

    /// Parameters (frozen ones included) and `extra` tensors, e.g. optimiser
    /// moments, as an `f32` checkpoint.
    pub fn to_checkpoint(&self, step: u64, rng: Option<RngState>, extra: &[(String, Tensor<f32>)]) -> Checkpoint {
        let mut tensors: Vec<(String, Tensor<f32>)> =
            self.params.ids().map(|id| (self.params.name(id).to_string(), self.params.get(id).cast())).collect();
        tensors.extend(extra.iter().cloned());
        Checkpoint { config: self.cfg.to_text(), step, rng, tensors }
    }

    /// Rebuilds a model from a checkpoint. Returns the optimiser tensors
    /// (`adam.m.*`, `adam.v.*`) and `train.*` state alongside. Fails if `expected` is given and
    /// differs from the stored configuration, if a parameter is missing, or
    /// if a tensor name is not recognised.
    pub fn from_checkpoint(ckpt: &Checkpoint, expected: Option<&ModelConfig>) -> Result<(Self, NamedTensors)> {
        let cfg = ModelConfig::from_text(&ckpt.config).map_err(|e| e.context("checkpoint config"))?;
        if let Some(want) = expected {
            if want != &cfg {
                return Err(Error::Config(format!(
                    "checkpoint config does not match the requested config\n--- checkpoint\n{}--- requested\n{}",
                    cfg.to_text(),
                    want.to_text()
                )));
            }
        }
        let mut model = Self::build_inner(&cfg, 0, false)?;
        let mut seen = vec![false; model.params.len()];
        let mut extra = Vec::new();
        for (name, t) in &ckpt.tensors {
            if let Some(id) = model.params.id(name) {
                model.params.set(id, t.cast()).map_err(|e| e.context(format!("tensor {name}")))?;
                seen[id.0] = true;
                continue;
            }
            if name.starts_with(TRAIN_STATE) {
                extra.push((name.clone(), t.clone()));
                continue;
            }
            let target = name.strip_prefix(ADAM_M).or_else(|| name.strip_prefix(ADAM_V));
            match target.and_then(|p| model.params.id(p)) {
                Some(id) if !model.params.is_frozen(id) && model.params.get(id).shape() == t.shape() => {
                    extra.push((name.clone(), t.clone()))
                }
                _ => return Err(Error::Format(format!("unknown or mismatched tensor {name:?} in checkpoint"))),
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            let name = model.params.ids().nth(i).map(|id| model.params.name(id).to_string()).unwrap_or_default();
            return Err(Error::Format(format!("checkpoint is missing parameter {name}")));
        }
        Ok((model, extra))
    }

    /// Re-draws every trainable tensor at unit gain: weights `N(0, 1/fan_in)`,
    /// norm scales `1 + N(0, 0.1^2)`, everything else `N(0, 0.1^2)`.
    /// Gradient checks use this because under the 0.02 initialisation many
    /// end-to-end gradients sit below finite-difference resolution.
    pub fn redraw_unit_gain(&mut self, seed: u64) {
        let mut rng = SeededRng::new(seed);
        self.params.fill_trainable(|name, shape| {
            let t = match shape.len() {
                2 | 4 if !name.ends_with(".rpe") => {
                    let fan_in = if shape.len() == 2 { shape[0] } else { shape[1] * shape[2] * shape[3] };
                    Tensor::randn(shape, 1.0 / (fan_in as f64).sqrt(), &mut rng)
                }
                _ if name.ends_with(".gamma") => Tensor::randn(shape, 0.1, &mut rng).map(|v| v + E::one()),
                _ => Tensor::randn(shape, 0.1, &mut rng),
            };
            Some(t)
        });
    }

    /// Central-difference check of the end-to-end parameter gradient at
    /// `count` randomly drawn trainable elements. The probed scalar is
    /// `sum(output * probe)` for a fixed random probe. ReLU patterns are
    /// pinned for the perturbed evaluations.
    pub fn grad_check(
        &self,
        lr: &Tensor<E>,
        reference: Option<&Tensor<E>>,
        count: usize,
        seed: u64,
        eps: f64,
    ) -> Result<GradCheckReport> {
        let ids = self.params.trainable_ids();
        let inputs: Vec<Tensor<E>> = ids.iter().map(|&id| self.params.get(id).clone()).collect();
        let mut rng = SeededRng::new(seed);
        let mut positions = Vec::with_capacity(count);
        while positions.len() < count.min(self.param_count()) {
            let i = rng.random_range(0..ids.len());
            let pos = (i, rng.random_range(0..inputs[i].numel()));
            if !positions.contains(&pos) {
                positions.push(pos);
            }
        }
        let s = lr.shape();
        let out_shape = [s[0], 3, s[2] * self.cfg.scale, s[3] * self.cfg.scale];
        let probe = Tensor::randn(&out_shape, 1.0, &mut rng);
        grad_check_subset_pinned(
            |tape, vars| {
                let ctx = Ctx::with_trainable(tape, &self.params, vars)?;
                let r = reference.map(|r| tape.constant(r.clone()));
                let out = self.forward(&ctx, &tape.constant(lr.clone()), r.as_ref())?;
                out.mul(&tape.constant(probe.clone()))?.sum()
            },
            &inputs,
            eps,
            &positions,
        )
    }

    /// Reference-pyramid features at `h` as a perceptual feature network.
    pub fn feature_net(&self) -> Option<RefPerceptual<'_, E>> {
        self.refnet.as_ref().map(|net| RefPerceptual { net, params: &self.params })
    }
}

/// Deepest reference-pyramid features, used for the perceptual loss.
pub struct RefPerceptual<'m, E: Scalar> {
    net: &'m RefFeatureNet,
    params: &'m ParamStore<E>,
}

impl<E: Scalar> FeatureNet<E> for RefPerceptual<'_, E> {
    fn features<'t>(&self, x: &Var<'t, E>) -> Result<Var<'t, E>> {
        let tape = x.tape();
        let ctx = Ctx::bind(tape, self.params, false);
        let s = x.shape();
        if s.len() != 4 || !s[2].is_multiple_of(4) || !s[3].is_multiple_of(4) {
            return Err(Error::shape("perceptual_features", format!("{s:?} is not a multiple of 4")));
        }
        Ok(self.net.forward(&ctx, x)?.1)
    }
}

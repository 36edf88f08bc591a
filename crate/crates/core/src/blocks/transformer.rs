use crate::attention::{
    attention_maps, concat_heads, qkv_project, window_partition_shifted_by, window_reverse, AttentionConfig, Gate,
    RelPosBias,
};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Var};

use super::{Builder, Ctx, LayerNorm, Linear, Mlp, Par, ParamId};

/// Where layer normalisation sits relative to the residual adds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormPlacement {
    Pre,
    Post,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockOptions {
    pub gate: Gate,
    pub use_par: bool,
    pub norm: NormPlacement,
    pub mlp_ratio: usize,
    pub depth: usize,
    /// Initial gate logit of every head.
    pub lambda_init: f64,
}

/// One attention + MLP pair.
#[derive(Clone, Debug)]
pub struct Layer {
    pub norm1: LayerNorm,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub par: Option<Par>,
    pub wo: Linear,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
    pub shifted: bool,
}

/// A windowed transformer block; even depths use local windows, odd depths
/// shifted ones. All depths share one relative position table.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub index: usize,
    pub cfg: AttentionConfig,
    pub opts: BlockOptions,
    pub layers: Vec<Layer>,
    pub rpe_table: ParamId,
    pub lambda: Option<ParamId>,
    rpe: RelPosBias,
}

impl TransformerBlock {
    pub fn new<E: Scalar>(
        b: &mut Builder<'_, E>,
        index: usize,
        cfg: AttentionConfig,
        opts: BlockOptions,
    ) -> Result<Self> {
        cfg.validate()?;
        if opts.depth == 0 {
            return Err(Error::Config("transformer block depth must be positive".into()));
        }
        let name = format!("block{index}");
        let d = cfg.embed_dim;
        let rpe = RelPosBias::new(cfg.window_size);
        let rpe_table = b.trunc_normal(&format!("{name}.rpe"), &[cfg.num_heads, rpe.table_len()], 0.02)?;
        let lambda = (opts.gate == Gate::Learned)
            .then(|| b.full(&format!("{name}.lambda"), &[cfg.num_heads], opts.lambda_init))
            .transpose()?;
        let mut layers = Vec::with_capacity(opts.depth);
        for i in 0..opts.depth {
            let n = format!("{name}.layer{i}");
            layers.push(Layer {
                norm1: LayerNorm::new(b, &format!("{n}.norm1"), d)?,
                wq: Linear::new(b, &format!("{n}.wq"), d, d, true)?,
                // a key bias adds a per-row constant to the logits, which softmax removes
                wk: Linear::new(b, &format!("{n}.wk"), d, d, false)?,
                wv: Linear::new(b, &format!("{n}.wv"), d, d, true)?,
                par: opts.use_par.then(|| Par::new(b, &format!("{n}.par"), cfg.head_dim)).transpose()?,
                wo: Linear::new(b, &format!("{n}.wo"), d, d, true)?,
                norm2: LayerNorm::new(b, &format!("{n}.norm2"), d)?,
                mlp: Mlp::new(b, &format!("{n}.mlp"), d, d * opts.mlp_ratio)?,
                shifted: i % 2 == 1,
            });
        }
        Ok(Self { index, cfg, opts, layers, rpe_table, lambda, rpe })
    }

    /// `x`, `reference`: `[B, H, W, D]` on the same grid.
    pub fn forward<'t, E: Scalar>(
        &self,
        ctx: &Ctx<'t, E>,
        x: &Var<'t, E>,
        reference: Option<&Var<'t, E>>,
    ) -> Result<Var<'t, E>> {
        self.forward_with_gate(ctx, x, reference, self.opts.gate)
    }

    /// Forward pass with the gate overridden, e.g. to pin the mix.
    pub fn forward_with_gate<'t, E: Scalar>(
        &self,
        ctx: &Ctx<'t, E>,
        x: &Var<'t, E>,
        reference: Option<&Var<'t, E>>,
        gate: Gate,
    ) -> Result<Var<'t, E>> {
        self.run(ctx, x, reference, gate).map_err(|e| e.context(format!("transformer block {}", self.index)))
    }

    fn run<'t, E: Scalar>(
        &self,
        ctx: &Ctx<'t, E>,
        x: &Var<'t, E>,
        reference: Option<&Var<'t, E>>,
        gate: Gate,
    ) -> Result<Var<'t, E>> {
        let s = x.shape().to_vec();
        if s.len() != 4 || s[3] != self.cfg.embed_dim {
            return Err(Error::shape(
                "transformer_block",
                format!("input {s:?}, expected [B, H, W, {}]", self.cfg.embed_dim),
            ));
        }
        self.cfg.check_grid(s[1], s[2])?;
        if let Some(r) = reference {
            if r.shape() != s.as_slice() {
                return Err(Error::shape("transformer_block", format!("reference {:?} vs input {s:?}", r.shape())));
            }
        }
        let reference = if gate.needs_cross() {
            Some(reference.ok_or_else(|| Error::Contract(format!("gate {gate:?} needs reference features")))?)
        } else {
            None
        };
        let rpe = self.rpe.gather(ctx.p(self.rpe_table))?;
        let lambda = self.lambda.map(|id| ctx.p(id));
        let mut x = x.clone();
        for layer in &self.layers {
            x = self.attention_sublayer(ctx, layer, &x, reference, gate, &rpe, lambda)?;
            x = match self.opts.norm {
                NormPlacement::Pre => {
                    let y = layer.mlp.forward(ctx, &layer.norm2.forward(ctx, &x)?)?;
                    ctx.tape.note("residual_add");
                    x.add(&y)?
                }
                NormPlacement::Post => {
                    let y = layer.mlp.forward(ctx, &x)?;
                    ctx.tape.note("residual_add");
                    layer.norm2.forward(ctx, &x.add(&y)?)?
                }
            };
        }
        Ok(x)
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_sublayer<'t, E: Scalar>(
        &self,
        ctx: &Ctx<'t, E>,
        layer: &Layer,
        x: &Var<'t, E>,
        reference: Option<&Var<'t, E>>,
        gate: Gate,
        rpe: &Var<'t, E>,
        lambda: Option<&Var<'t, E>>,
    ) -> Result<Var<'t, E>> {
        let cfg = &self.cfg;
        let (b, h, w, d) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let pre = self.opts.norm == NormPlacement::Pre;
        let (xn, rn) = if pre {
            (layer.norm1.forward(ctx, x)?, reference.map(|r| layer.norm1.forward(ctx, r)).transpose()?)
        } else {
            (x.clone(), reference.cloned())
        };
        let shift = if layer.shifted { cfg.shift } else { 0 };
        let xs = window_partition_shifted_by(&xn, cfg.window_size, shift)?;
        let rs = rn.map(|r| window_partition_shifted_by(&r, cfg.window_size, shift)).transpose()?;
        let heads = qkv_project(
            xs.tokens()?,
            rs.as_ref().map(|r| r.tokens()).transpose()?,
            cfg,
            &layer.wq.affine(ctx),
            &layer.wk.affine(ctx),
            &layer.wv.affine(ctx),
        )?;
        ctx.tape.note(if layer.shifted { "attention:shifted" } else { "attention:local" });
        let maps = attention_maps(&heads, cfg, gate, lambda, Some(rpe))?;
        if ctx.tape.audit() {
            let sums = maps.gated.value().to_f64_vec();
            let t = cfg.tokens_per_window();
            let (lo, hi) = sums
                .chunks(t)
                .map(|r| r.iter().sum::<f64>())
                .fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)));
            let kind = if layer.shifted { "shifted" } else { "local" };
            ctx.tape.note(format!("rowsum:{}:{kind}:{lo:e}:{hi:e}", self.index));
        }
        let att = maps.gated.matmul(&heads.v)?;
        let mut merged = xs.with_tokens(concat_heads(&att)?)?;
        let mut y = window_reverse(&mut merged)?;
        if let Some(par) = &layer.par {
            let (nh, dh) = (cfg.num_heads, cfg.head_dim);
            let per_head = y.reshape(&[b, h * w, nh, dh])?.permute(&[0, 2, 1, 3])?.reshape(&[b * nh, h * w, dh])?;
            y = par
                .forward(ctx, &per_head, (h, w))?
                .reshape(&[b, nh, h * w, dh])?
                .permute(&[0, 2, 1, 3])?
                .reshape(&[b, h, w, d])?;
        }
        let y = layer.wo.forward(ctx, &y)?;
        ctx.tape.note("residual_add");
        let out = x.add(&y)?;
        if pre {
            Ok(out)
        } else {
            layer.norm1.forward(ctx, &out)
        }
    }
}

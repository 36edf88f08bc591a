use crate::error::{Error, Result};
use crate::tensor::{Scalar, Var};

use super::AttentionConfig;

/// Token-wise affine map `x W + b` with `W: [D_in, D_out]`.
#[derive(Clone)]
pub struct Affine<'t, E: Scalar> {
    pub weight: Var<'t, E>,
    pub bias: Option<Var<'t, E>>,
}

impl<'t, E: Scalar> Affine<'t, E> {
    pub fn apply(&self, x: &Var<'t, E>) -> Result<Var<'t, E>> {
        let y = x.matmul(&self.weight)?;
        match &self.bias {
            Some(b) => y.add_bcast(b),
            None => Ok(y),
        }
    }
}

/// How self- and cross-attention probabilities are combined.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Gate {
    /// `sigma(lambda_h)` from the per-head gating parameter.
    Learned,
    /// A constant mixing weight in `[0, 1]` for every head.
    Fixed(f64),
    SelfOnly,
    CrossOnly,
}

impl Gate {
    pub fn needs_cross(self) -> bool {
        self != Gate::SelfOnly
    }
}

/// Per-head projections, each `[windows, N_h, T, D_h]`.
#[derive(Clone)]
pub struct Heads<'t, E: Scalar> {
    pub q: Var<'t, E>,
    pub k: Var<'t, E>,
    pub v: Var<'t, E>,
    pub q_ref: Option<Var<'t, E>>,
}

/// `[W, T, N_h * D_h] -> [W, N_h, T, D_h]`
pub fn split_heads<'t, E: Scalar>(x: &Var<'t, E>, num_heads: usize) -> Result<Var<'t, E>> {
    let s = x.shape();
    if s.len() != 3 || num_heads == 0 || !s[2].is_multiple_of(num_heads) {
        return Err(Error::shape("split_heads", format!("{s:?} into {num_heads} heads")));
    }
    x.reshape(&[s[0], s[1], num_heads, s[2] / num_heads])?.permute(&[0, 2, 1, 3])
}

/// `[W, N_h, T, D_h] -> [W, T, N_h * D_h]`
pub fn concat_heads<'t, E: Scalar>(x: &Var<'t, E>) -> Result<Var<'t, E>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::shape("concat_heads", format!("expected [W, N_h, T, D_h], got {s:?}")));
    }
    x.permute(&[0, 2, 1, 3])?.reshape(&[s[0], s[2], s[1] * s[3]])
}

/// Query, key and value from the LR tokens; the reference query reuses the
/// query projection on the reference tokens.
pub fn qkv_project<'t, E: Scalar>(
    x_lr: &Var<'t, E>,
    q_src_ref: Option<&Var<'t, E>>,
    cfg: &AttentionConfig,
    wq: &Affine<'t, E>,
    wk: &Affine<'t, E>,
    wv: &Affine<'t, E>,
) -> Result<Heads<'t, E>> {
    if x_lr.rank() != 3 || x_lr.shape()[2] != cfg.embed_dim {
        return Err(Error::shape(
            "qkv_project",
            format!("LR tokens {:?}, expected [W, T, {}]", x_lr.shape(), cfg.embed_dim),
        ));
    }
    if let Some(r) = q_src_ref {
        if r.shape() != x_lr.shape() {
            return Err(Error::shape(
                "qkv_project",
                format!("reference tokens {:?} vs LR tokens {:?}", r.shape(), x_lr.shape()),
            ));
        }
    }
    let heads = |y: Var<'t, E>| split_heads(&y, cfg.num_heads);
    Ok(Heads {
        q: heads(wq.apply(x_lr)?)?,
        k: heads(wk.apply(x_lr)?)?,
        v: heads(wv.apply(x_lr)?)?,
        q_ref: q_src_ref.map(|r| wq.apply(r).and_then(heads)).transpose()?,
    })
}

/// Row-stochastic attention matrices `[W, N_h, T, T]`.
pub struct AttentionMaps<'t, E: Scalar> {
    pub self_attn: Option<Var<'t, E>>,
    pub cross_attn: Option<Var<'t, E>>,
    pub gated: Var<'t, E>,
}

fn probabilities<'t, E: Scalar>(
    q: &Var<'t, E>,
    k: &Var<'t, E>,
    scale: f64,
    rpe: Option<&Var<'t, E>>,
) -> Result<Var<'t, E>> {
    let mut logits = q.matmul_t(k)?.scale(scale)?;
    if let Some(b) = rpe {
        logits = logits.add_bcast(b)?;
    }
    logits.softmax(3)
}

/// Self and cross probabilities and their gated mix
/// `(1 - g) * self + g * cross`.
///
/// `lambda` (`[N_h]`) is required for [`Gate::Learned`]; `rpe`
/// (`[N_h, T, T]`) is added to both sets of logits.
pub fn attention_maps<'t, E: Scalar>(
    heads: &Heads<'t, E>,
    cfg: &AttentionConfig,
    gate: Gate,
    lambda: Option<&Var<'t, E>>,
    rpe: Option<&Var<'t, E>>,
) -> Result<AttentionMaps<'t, E>> {
    let scale = cfg.logit_scale();
    let cross = || -> Result<Var<'t, E>> {
        let q_ref =
            heads.q_ref.as_ref().ok_or_else(|| Error::Contract(format!("gate {gate:?} needs reference queries")))?;
        probabilities(q_ref, &heads.k, scale, rpe)
    };
    let own = || probabilities(&heads.q, &heads.k, scale, rpe);
    let maps = match gate {
        Gate::SelfOnly => {
            let s = own()?;
            AttentionMaps { self_attn: Some(s.clone()), cross_attn: None, gated: s }
        }
        Gate::CrossOnly => {
            let c = cross()?;
            AttentionMaps { self_attn: None, cross_attn: Some(c.clone()), gated: c }
        }
        Gate::Fixed(g) => {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::Config(format!("fixed gate {g} outside [0, 1]")));
            }
            let (s, c) = (own()?, cross()?);
            let gated = s.scale(1.0 - g)?.add(&c.scale(g)?)?;
            AttentionMaps { self_attn: Some(s), cross_attn: Some(c), gated }
        }
        Gate::Learned => {
            let lambda = lambda.ok_or_else(|| Error::Contract("learned gate without lambda".into()))?;
            if lambda.shape() != [cfg.num_heads] {
                return Err(Error::shape("gate", format!("lambda {:?} for {} heads", lambda.shape(), cfg.num_heads)));
            }
            let (s, c) = (own()?, cross()?);
            let g = lambda.sigmoid()?.reshape(&[cfg.num_heads, 1, 1])?;
            let gated = s.add(&c.sub(&s)?.mul_bcast(&g)?)?;
            AttentionMaps { self_attn: Some(s), cross_attn: Some(c), gated }
        }
    };
    Ok(maps)
}

/// Gated attention applied to the LR values: `[W, N_h, T, D_h]`.
pub fn gated_double_attention<'t, E: Scalar>(
    heads: &Heads<'t, E>,
    cfg: &AttentionConfig,
    gate: Gate,
    lambda: Option<&Var<'t, E>>,
    rpe: Option<&Var<'t, E>>,
) -> Result<Var<'t, E>> {
    attention_maps(heads, cfg, gate, lambda, rpe)?.gated.matmul(&heads.v)
}

/// Concatenates heads and applies the output projection.
pub fn merge_heads<'t, E: Scalar>(heads_out: &Var<'t, E>, wo: &Affine<'t, E>) -> Result<Var<'t, E>> {
    wo.apply(&concat_heads(heads_out)?)
}

use crate::attention::Affine;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Var};

use super::{Builder, Ctx, ParamId};

pub(crate) const LINEAR_STD: f64 = 0.02;

/// `[.., in] -> [.., out]`, weight stored `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<E: Scalar>(
        b: &mut Builder<'_, E>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = b.trunc_normal(&format!("{name}.weight"), &[in_dim, out_dim], LINEAR_STD)?;
        let bias = bias.then(|| b.full(&format!("{name}.bias"), &[out_dim], 0.0)).transpose()?;
        Ok(Self { weight, bias, in_dim, out_dim })
    }

    pub fn affine<'t, E: Scalar>(&self, ctx: &Ctx<'t, E>) -> Affine<'t, E> {
        Affine { weight: ctx.p(self.weight).clone(), bias: self.bias.map(|b| ctx.p(b).clone()) }
    }

    pub fn forward<'t, E: Scalar>(&self, ctx: &Ctx<'t, E>, x: &Var<'t, E>) -> Result<Var<'t, E>> {
        self.affine(ctx).apply(x)
    }
}

/// 2-D convolution on `[B, C, H, W]`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    /// Truncated normal weights (std 0.02), zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new<E: Scalar>(
        b: &mut Builder<'_, E>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let weight = b.trunc_normal(&format!("{name}.weight"), &[c_out, c_in, kernel, kernel], LINEAR_STD)?;
        let bias = Some(b.full(&format!("{name}.bias"), &[c_out], 0.0)?);
        Ok(Self { weight, bias, stride, padding })
    }

    /// Same-size convolution with an odd kernel.
    pub fn same<E: Scalar>(
        b: &mut Builder<'_, E>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
    ) -> Result<Self> {
        Self::new(b, name, c_in, c_out, kernel, 1, kernel / 2)
    }

    pub fn forward<'t, E: Scalar>(&self, ctx: &Ctx<'t, E>, x: &Var<'t, E>) -> Result<Var<'t, E>> {
        x.conv2d(ctx.p(self.weight), self.bias.map(|b| ctx.p(b)), self.stride, self.padding)
    }
}

/// Layer normalisation over the channel axis of `[.., D]`.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<E: Scalar>(b: &mut Builder<'_, E>, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: b.full(&format!("{name}.gamma"), &[dim], 1.0)?,
            beta: b.full(&format!("{name}.beta"), &[dim], 0.0)?,
        })
    }

    pub fn forward<'t, E: Scalar>(&self, ctx: &Ctx<'t, E>, x: &Var<'t, E>) -> Result<Var<'t, E>> {
        x.layer_norm(ctx.p(self.gamma), ctx.p(self.beta))
    }
}

/// `[B, C, H, W] -> [B, H, W, C]`
pub fn to_channels_last<'t, E: Scalar>(x: &Var<'t, E>) -> Result<Var<'t, E>> {
    if x.rank() != 4 {
        return Err(Error::shape("to_channels_last", format!("{:?}", x.shape())));
    }
    x.permute(&[0, 2, 3, 1])
}

/// `[B, H, W, C] -> [B, C, H, W]`
pub fn to_channels_first<'t, E: Scalar>(x: &Var<'t, E>) -> Result<Var<'t, E>> {
    if x.rank() != 4 {
        return Err(Error::shape("to_channels_first", format!("{:?}", x.shape())));
    }
    x.permute(&[0, 3, 1, 2])
}

use crate::attention::spe;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

use super::{to_channels_first, to_channels_last, Builder, Conv2d, Ctx, Linear};

/// Long skip connection: channel concat with an earlier same-size map,
/// then a learned projection back to `D`. Starts as `[I; 0]`, i.e. it
/// passes the current map through.
#[derive(Clone, Debug)]
pub struct Lsc {
    pub fuse: Linear,
}

impl Lsc {
    pub fn new<E: Scalar>(b: &mut Builder<'_, E>, name: &str, dim: usize) -> Result<Self> {
        let eye = Tensor::from_fn(&[2 * dim, dim], |i| if i / dim == i % dim { E::one() } else { E::zero() });
        let weight = b.add(&format!("{name}.weight"), eye)?;
        let bias = Some(b.full(&format!("{name}.bias"), &[dim], 0.0)?);
        Ok(Self { fuse: Linear { weight, bias, in_dim: 2 * dim, out_dim: dim } })
    }

    /// Both inputs `[.., D]` with identical shapes.
    pub fn forward<'t, E: Scalar>(
        &self,
        ctx: &Ctx<'t, E>,
        current: &Var<'t, E>,
        earlier: &Var<'t, E>,
    ) -> Result<Var<'t, E>> {
        if current.shape() != earlier.shape() {
            return Err(Error::shape("lsc", format!("{:?} vs {:?}", current.shape(), earlier.shape())));
        }
        let axis = current.rank() - 1;
        self.fuse.forward(ctx, &Var::concat(&[current, earlier], axis)?)
    }
}

/// `[B, H, W, D] -> [B, 2H, 2W, D]`: 1x1 conv to `4D`, pixel shuffle, then
/// the sinusoidal position table is added.
#[derive(Clone, Debug)]
pub struct Upsampler {
    pub conv: Conv2d,
    pub dim: usize,
}

impl Upsampler {
    pub fn new<E: Scalar>(b: &mut Builder<'_, E>, name: &str, dim: usize, out_dim: usize) -> Result<Self> {
        Ok(Self { conv: Conv2d::same(b, &format!("{name}.conv"), dim, 4 * out_dim, 1)?, dim: out_dim })
    }

    pub fn forward<'t, E: Scalar>(&self, ctx: &Ctx<'t, E>, x: &Var<'t, E>) -> Result<Var<'t, E>> {
        let y = self.conv.forward(ctx, &to_channels_first(x)?)?.pixel_shuffle(2)?;
        let y = to_channels_last(&y)?;
        let (h, w) = (y.shape()[1], y.shape()[2]);
        let table = spe::<E>(h, w, self.dim)?.reshape(&[h, w, self.dim])?;
        y.add_bcast(&ctx.tape.constant(table))
    }
}

/// `[B, H, W, D] -> [B, H/2, W/2, D]`: one zero row and column on the far
/// side, then a 3x3 stride-2 conv.
#[derive(Clone, Debug)]
pub struct Downsampler {
    pub conv: Conv2d,
}

impl Downsampler {
    pub fn new<E: Scalar>(b: &mut Builder<'_, E>, name: &str, dim: usize) -> Result<Self> {
        Ok(Self { conv: Conv2d::new(b, &format!("{name}.conv"), dim, dim, 3, 2, 0)? })
    }

    pub fn forward<'t, E: Scalar>(&self, ctx: &Ctx<'t, E>, x: &Var<'t, E>) -> Result<Var<'t, E>> {
        let s = x.shape();
        if s.len() != 4 || !s[1].is_multiple_of(2) || !s[2].is_multiple_of(2) {
            return Err(Error::Config(format!("downsampler needs even spatial extents, got {s:?}")));
        }
        let y = to_channels_first(x)?.zero_pad((0, 1, 0, 1))?;
        to_channels_last(&self.conv.forward(ctx, &y)?)
    }
}

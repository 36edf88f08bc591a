use crate::error::{Error, Result};
use crate::tensor::{Scalar, Var};

use super::{Builder, Conv2d, Ctx, Linear};

/// Channel reweighting `x * sigmoid(fc2(gelu(fc1(avgpool(x)))))`.
#[derive(Clone, Debug)]
pub struct SqueezeExcite {
    pub fc1: Linear,
    pub fc2: Linear,
    pub channels: usize,
}

impl SqueezeExcite {
    pub fn new<E: Scalar>(b: &mut Builder<'_, E>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(b, &format!("{name}.fc1"), channels, channels, true)?,
            fc2: Linear::new(b, &format!("{name}.fc2"), channels, channels, true)?,
            channels,
        })
    }

    /// The per-channel scale `[B, C]`.
    pub fn weights<'t, E: Scalar>(&self, ctx: &Ctx<'t, E>, x: &Var<'t, E>) -> Result<Var<'t, E>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.channels {
            return Err(Error::shape("squeeze_excite", format!("input {s:?} for {} channels", self.channels)));
        }
        let pooled = x.global_avg_pool()?.reshape(&[s[0], s[1]])?;
        self.fc2.forward(ctx, &self.fc1.forward(ctx, &pooled)?.gelu()?)?.sigmoid()
    }

    pub fn forward<'t, E: Scalar>(&self, ctx: &Ctx<'t, E>, x: &Var<'t, E>) -> Result<Var<'t, E>> {
        let s = x.shape().to_vec();
        let w = self.weights(ctx, x)?.reshape(&[s[0], s[1], 1, 1])?;
        x.mul_bcast(&w)
    }
}

/// `[3x3 conv + GELU -> SE -> 1x1 conv] + input`
#[derive(Clone, Debug)]
pub struct SeResBlock {
    pub conv3: Conv2d,
    pub se: Option<SqueezeExcite>,
    pub conv1: Conv2d,
}

impl SeResBlock {
    pub fn new<E: Scalar>(b: &mut Builder<'_, E>, name: &str, c: usize, use_se: bool) -> Result<Self> {
        Ok(Self {
            conv3: Conv2d::same(b, &format!("{name}.conv3"), c, c, 3)?,
            se: use_se.then(|| SqueezeExcite::new(b, &format!("{name}.se"), c)).transpose()?,
            conv1: Conv2d::same(b, &format!("{name}.conv1"), c, c, 1)?,
        })
    }

    pub fn forward<'t, E: Scalar>(&self, ctx: &Ctx<'t, E>, x: &Var<'t, E>) -> Result<Var<'t, E>> {
        let mut y = self.conv3.forward(ctx, x)?.gelu()?;
        if let Some(se) = &self.se {
            y = se.forward(ctx, &y)?;
        }
        let y = self.conv1.forward(ctx, &y)?;
        ctx.tape.note("residual_add");
        x.add(&y)
    }
}

/// Stacked [`SeResBlock`]s, optionally preceded by a 3x3 lift from image
/// channels.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    pub lift: Option<Conv2d>,
    pub blocks: Vec<SeResBlock>,
    pub channels: usize,
}

impl FeatureExtractor {
    pub fn new<E: Scalar>(
        b: &mut Builder<'_, E>,
        name: &str,
        in_channels: Option<usize>,
        channels: usize,
        depth: usize,
        use_se: bool,
    ) -> Result<Self> {
        if depth != 1 && depth != 3 {
            return Err(Error::Config(format!("feature extractor depth must be 1 or 3, got {depth}")));
        }
        let lift = in_channels.map(|c| Conv2d::same(b, &format!("{name}.lift"), c, channels, 3)).transpose()?;
        let blocks = (0..depth)
            .map(|i| SeResBlock::new(b, &format!("{name}.block{i}"), channels, use_se))
            .collect::<Result<_>>()?;
        Ok(Self { lift, blocks, channels })
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn forward<'t, E: Scalar>(&self, ctx: &Ctx<'t, E>, x: &Var<'t, E>) -> Result<Var<'t, E>> {
        let mut y = match &self.lift {
            Some(l) => l.forward(ctx, x)?,
            None => x.clone(),
        };
        if y.rank() != 4 || y.shape()[1] != self.channels {
            return Err(Error::shape(
                "feature_extract",
                format!("features {:?} for {} channels", y.shape(), self.channels),
            ));
        }
        for blk in &self.blocks {
            y = blk.forward(ctx, &y)?;
        }
        Ok(y)
    }
}

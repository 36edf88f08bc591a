use crate::error::{Error, Result};
use crate::tensor::{Scalar, Var};

use super::{Builder, Conv2d, Ctx, Linear};

/// Post-attention residual refinement on a token grid.
///
/// `grid -> [relu(conv(relu(conv)))] + skip, twice -> tokens -> gelu(linear)`
#[derive(Clone, Debug)]
pub struct Par {
    pub convs: [Conv2d; 4],
    pub fc: Linear,
    pub channels: usize,
}

impl Par {
    pub fn new<E: Scalar>(b: &mut Builder<'_, E>, name: &str, channels: usize) -> Result<Self> {
        let mut conv = |i: usize| Conv2d::same(b, &format!("{name}.conv{i}"), channels, channels, 3);
        let convs = [conv(0)?, conv(1)?, conv(2)?, conv(3)?];
        let fc = Linear::new(b, &format!("{name}.fc"), channels, channels, true)?;
        Ok(Self { convs, fc, channels })
    }

    /// `tokens: [B, L, C]` with `L = h * w`.
    pub fn forward<'t, E: Scalar>(
        &self,
        ctx: &Ctx<'t, E>,
        tokens: &Var<'t, E>,
        grid: (usize, usize),
    ) -> Result<Var<'t, E>> {
        let s = tokens.shape();
        if s.len() != 3 || s[1] != grid.0 * grid.1 || s[2] != self.channels {
            return Err(Error::shape(
                "par",
                format!("tokens {s:?} on a {}x{} grid of {} channels", grid.0, grid.1, self.channels),
            ));
        }
        let mut y = tokens.tokens_to_grid(grid.0, grid.1)?;
        for pair in self.convs.chunks(2) {
            let inner = pair[1].forward(ctx, &pair[0].forward(ctx, &y)?.relu()?)?.relu()?;
            y = y.add(&inner)?;
        }
        self.fc.forward(ctx, &y.grid_to_tokens()?)?.gelu()
    }
}

/// Two-layer MLP with GELU.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<E: Scalar>(b: &mut Builder<'_, E>, name: &str, dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(b, &format!("{name}.fc1"), dim, hidden, true)?,
            fc2: Linear::new(b, &format!("{name}.fc2"), hidden, dim, true)?,
        })
    }

    pub fn forward<'t, E: Scalar>(&self, ctx: &Ctx<'t, E>, x: &Var<'t, E>) -> Result<Var<'t, E>> {
        self.fc2.forward(ctx, &self.fc1.forward(ctx, x)?.gelu()?)
    }
}

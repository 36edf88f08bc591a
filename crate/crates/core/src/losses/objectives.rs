use crate::blocks::{Builder, Conv2d, Ctx, ParamId};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

/// Weights of the reconstruction, perceptual and adversarial terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub w_rec: f64,
    pub w_per: f64,
    pub w_adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { w_rec: 1.0, w_per: 1e-4, w_adv: 1e-6 }
    }
}

impl LossWeights {
    pub fn reconstruction_only() -> Self {
        Self { w_rec: 1.0, w_per: 0.0, w_adv: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("w_rec", self.w_rec), ("w_per", self.w_per), ("w_adv", self.w_adv)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("loss weight {name} = {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }

    /// Weighted sum; absent terms contribute nothing.
    pub fn combine<'t, E: Scalar>(
        &self,
        rec: &Var<'t, E>,
        per: Option<&Var<'t, E>>,
        adv: Option<&Var<'t, E>>,
    ) -> Result<Var<'t, E>> {
        let mut total = rec.scale(self.w_rec)?;
        if let Some(p) = per {
            total = total.add(&p.scale(self.w_per)?)?;
        }
        if let Some(a) = adv {
            total = total.add(&a.scale(self.w_adv)?)?;
        }
        Ok(total)
    }
}

fn check_same<E: Scalar>(op: &'static str, a: &Var<'_, E>, b: &Var<'_, E>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean absolute difference.
pub fn l1_loss<'t, E: Scalar>(sr: &Var<'t, E>, hr: &Var<'t, E>) -> Result<Var<'t, E>> {
    check_same("l1_loss", sr, hr)?;
    sr.sub(hr)?.abs()?.mean()
}

/// Maps a batch of images to one `[B, C, h, w]` feature map per image.
pub trait FeatureNet<E: Scalar> {
    fn features<'t>(&self, x: &Var<'t, E>) -> Result<Var<'t, E>>;
}

/// Features equal to the input.
pub struct IdentityFeatures;

impl<E: Scalar> FeatureNet<E> for IdentityFeatures {
    fn features<'t>(&self, x: &Var<'t, E>) -> Result<Var<'t, E>> {
        Ok(x.clone())
    }
}

/// Per-channel Frobenius norms of the feature difference, summed over
/// channels and divided by the feature volume `C*h*w`; averaged over the batch.
pub fn perceptual_loss<'t, E: Scalar, F: FeatureNet<E> + ?Sized>(
    sr: &Var<'t, E>,
    hr: &Var<'t, E>,
    net: &F,
) -> Result<Var<'t, E>> {
    check_same("perceptual_loss", sr, hr)?;
    let fs = net.features(sr)?;
    let fh = net.features(hr)?;
    if fs.shape() != fh.shape() || fs.rank() != 4 {
        return Err(Error::shape(
            "perceptual_loss",
            format!("feature maps {:?} vs {:?}, expected matching [B, C, h, w]", fs.shape(), fh.shape()),
        ));
    }
    let s = fs.shape().to_vec();
    let volume = (s[1] * s[2] * s[3]) as f64;
    fs.sub(&fh)?.norm_trailing(2)?.sum()?.scale(1.0 / (volume * s[0] as f64))
}

/// Hinge objective for the critic.
pub fn hinge_d_loss<'t, E: Scalar>(d_real: &Var<'t, E>, d_fake: &Var<'t, E>) -> Result<Var<'t, E>> {
    let real = d_real.neg()?.add_scalar(1.0)?.relu()?.mean()?;
    let fake = d_fake.add_scalar(1.0)?.relu()?.mean()?;
    real.add(&fake)
}

/// Hinge objective for the generator.
pub fn hinge_g_loss<'t, E: Scalar>(d_fake: &Var<'t, E>) -> Result<Var<'t, E>> {
    d_fake.mean()?.neg()
}

/// `(loss_D, loss_G)` from critic logits.
pub fn adversarial_losses<'t, E: Scalar>(d_real: &Var<'t, E>, d_fake: &Var<'t, E>) -> Result<(Var<'t, E>, Var<'t, E>)> {
    Ok((hinge_d_loss(d_real, d_fake)?, hinge_g_loss(d_fake)?))
}

pub const R1_GAMMA: f64 = 10.0;

/// A critic producing one logit per scale per image.
pub trait Discriminator<E: Scalar> {
    /// `[B, 3, H, W] -> [B, S]`
    fn logits<'t>(&self, ctx: &Ctx<'t, E>, x: &Var<'t, E>) -> Result<Var<'t, E>>;

    /// Gradient of the summed logits of each image with respect to that
    /// image, itself differentiable in the critic parameters.
    fn input_grad<'t>(&self, _ctx: &Ctx<'t, E>, _x: &Var<'t, E>) -> Result<Var<'t, E>> {
        Err(Error::Capability("discriminator does not expose input gradients".into()))
    }
}

/// `(gamma / 2) * mean over images of |grad_x d(x)|^2`.
pub fn r1_penalty<'t, E: Scalar, D: Discriminator<E> + ?Sized>(
    d: &D,
    ctx: &Ctx<'t, E>,
    real: &Var<'t, E>,
    gamma: f64,
) -> Result<Var<'t, E>> {
    let g = d.input_grad(ctx, real)?;
    let r = g.rank();
    g.square()?.sum_trailing(r - 1)?.mean()?.scale(gamma / 2.0)
}

/// `d(x) = <w, x>` per image.
pub struct LinearDiscriminator {
    pub weight: ParamId,
}

impl LinearDiscriminator {
    pub fn new<E: Scalar>(b: &mut Builder<'_, E>, shape: &[usize]) -> Result<Self> {
        Ok(Self { weight: b.trunc_normal("disc.linear", shape, 1.0)? })
    }
}

impl<E: Scalar> Discriminator<E> for LinearDiscriminator {
    fn logits<'t>(&self, ctx: &Ctx<'t, E>, x: &Var<'t, E>) -> Result<Var<'t, E>> {
        let r = x.rank();
        let b = x.shape()[0];
        x.mul_bcast(ctx.p(self.weight))?.sum_trailing(r - 1)?.reshape(&[b, 1])
    }

    fn input_grad<'t>(&self, ctx: &Ctx<'t, E>, x: &Var<'t, E>) -> Result<Var<'t, E>> {
        ctx.tape.constant(Tensor::zeros(x.shape())).add_bcast(ctx.p(self.weight))
    }
}

const LEAK: f64 = 0.2;

struct Branch {
    convs: [Conv2d; 3],
}

impl Branch {
    fn new<E: Scalar>(b: &mut Builder<'_, E>, name: &str, width: usize) -> Result<Self> {
        Ok(Self {
            convs: [
                Conv2d::new(b, &format!("{name}.conv0"), 3, width, 4, 2, 1)?,
                Conv2d::new(b, &format!("{name}.conv1"), width, 2 * width, 4, 2, 1)?,
                Conv2d::new(b, &format!("{name}.conv2"), 2 * width, 1, 3, 1, 1)?,
            ],
        })
    }

    /// Pre-activations of every conv.
    fn activations<'t, E: Scalar>(&self, ctx: &Ctx<'t, E>, x: &Var<'t, E>) -> Result<Vec<Var<'t, E>>> {
        let a0 = self.convs[0].forward(ctx, x)?;
        let a1 = self.convs[1].forward(ctx, &a0.leaky_relu(LEAK)?)?;
        let a2 = self.convs[2].forward(ctx, &a1.leaky_relu(LEAK)?)?;
        Ok(vec![a0, a1, a2])
    }

    fn logit<'t, E: Scalar>(&self, ctx: &Ctx<'t, E>, x: &Var<'t, E>) -> Result<Var<'t, E>> {
        let a = self.activations(ctx, x)?;
        let b = x.shape()[0];
        let last = &a[2];
        let n = (last.shape()[2] * last.shape()[3]) as f64;
        last.sum_trailing(3)?.scale(1.0 / n)?.reshape(&[b, 1])
    }

    /// Backpropagates the spatial mean through the leaky units, whose slopes
    /// are read off the forward values and held fixed.
    fn input_grad<'t, E: Scalar>(&self, ctx: &Ctx<'t, E>, x: &Var<'t, E>) -> Result<Var<'t, E>> {
        let a = self.activations(ctx, x)?;
        let s = a[2].shape().to_vec();
        let n = (s[2] * s[3]) as f64;
        let mut g = ctx.tape.constant(Tensor::full(&s, E::of(1.0 / n)));
        for k in (0..3).rev() {
            if k < 2 {
                let slope = a[k].value().map(|v| if v > E::zero() { E::one() } else { E::of(LEAK) });
                g = g.mul(&ctx.tape.constant(slope))?;
            }
            let conv = &self.convs[k];
            let input = if k == 0 { x.shape() } else { a[k - 1].shape() };
            g = g.conv2d_input_adjoint(ctx.p(conv.weight), (input[2], input[3]), conv.stride, conv.padding)?;
        }
        Ok(g)
    }
}

/// Two conv critics, one on the input and one on a 2x2 average-pooled copy.
pub struct MultiScaleDiscriminator {
    full: Branch,
    half: Branch,
}

impl MultiScaleDiscriminator {
    pub fn new<E: Scalar>(b: &mut Builder<'_, E>, width: usize) -> Result<Self> {
        Ok(Self { full: Branch::new(b, "disc.full", width)?, half: Branch::new(b, "disc.half", width)? })
    }

    fn pool_kernel<E: Scalar>() -> Tensor<E> {
        Tensor::from_fn(&[3, 3, 2, 2], |i| if (i / 4) / 3 == (i / 4) % 3 { E::of(0.25) } else { E::zero() })
    }

    fn check<E: Scalar>(x: &Var<'_, E>) -> Result<()> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 3 || !s[2].is_multiple_of(8) || !s[3].is_multiple_of(8) {
            return Err(Error::Config(format!(
                "discriminator needs [B, 3, H, W] with H and W multiples of 8, got {s:?}"
            )));
        }
        Ok(())
    }
}

impl<E: Scalar> Discriminator<E> for MultiScaleDiscriminator {
    fn logits<'t>(&self, ctx: &Ctx<'t, E>, x: &Var<'t, E>) -> Result<Var<'t, E>> {
        Self::check(x)?;
        let pool = ctx.tape.constant(Self::pool_kernel());
        let half = x.conv2d(&pool, None, 2, 0)?;
        Var::concat(&[&self.full.logit(ctx, x)?, &self.half.logit(ctx, &half)?], 1)
    }

    fn input_grad<'t>(&self, ctx: &Ctx<'t, E>, x: &Var<'t, E>) -> Result<Var<'t, E>> {
        Self::check(x)?;
        let pool = ctx.tape.constant(Self::pool_kernel());
        let half = x.conv2d(&pool, None, 2, 0)?;
        let (h, w) = (x.shape()[2], x.shape()[3]);
        let g_half = self.half.input_grad(ctx, &half)?.conv2d_input_adjoint(&pool, (h, w), 2, 0)?;
        self.full.input_grad(ctx, x)?.add(&g_half)
    }
}

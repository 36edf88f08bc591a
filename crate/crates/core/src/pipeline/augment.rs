use rand::Rng;

use super::dataset::Sample;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, SeededRng, Tensor};

/// Flips followed by a counter-clockwise rotation of `90 * rot` degrees.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Augment {
    pub vflip: bool,
    pub hflip: bool,
    pub rot: u8,
}

impl Augment {
    pub fn identity() -> Self {
        Self::default()
    }

    /// Independent fair flips and a uniform quarter turn. Non-square images
    /// only get half turns so their shape is kept.
    pub fn draw(rng: &mut SeededRng, square: bool) -> Self {
        let vflip = rng.random_bool(0.5);
        let hflip = rng.random_bool(0.5);
        let rot = if square { rng.random_range(0..4u8) } else { 2 * rng.random_range(0..2u8) };
        Self { vflip, hflip, rot }
    }

    pub fn apply<E: Scalar>(&self, img: &Tensor<E>) -> Result<Tensor<E>> {
        let mut out = img.clone();
        if self.vflip {
            out = flip(&out, true)?;
        }
        if self.hflip {
            out = flip(&out, false)?;
        }
        for _ in 0..self.rot % 4 {
            out = rot90(&out)?;
        }
        Ok(out)
    }
}

fn dims<E: Scalar>(op: &'static str, img: &Tensor<E>) -> Result<(usize, usize, usize)> {
    let s = img.shape();
    if s.len() != 4 {
        return Err(Error::shape(op, format!("expected [B, C, H, W], got {s:?}")));
    }
    Ok((s[0] * s[1], s[2], s[3]))
}

/// Mirrors rows (`vertical`) or columns.
pub fn flip<E: Scalar>(img: &Tensor<E>, vertical: bool) -> Result<Tensor<E>> {
    let (_, h, w) = dims("flip", img)?;
    let d = img.data();
    Ok(Tensor::from_fn(img.shape(), |i| {
        let (p, y, x) = (i / (h * w), i / w % h, i % w);
        let (sy, sx) = if vertical { (h - 1 - y, x) } else { (y, w - 1 - x) };
        d[(p * h + sy) * w + sx]
    }))
}

/// Quarter turn counter-clockwise: `out[y][x] = in[x][w - 1 - y]`.
pub fn rot90<E: Scalar>(img: &Tensor<E>) -> Result<Tensor<E>> {
    let (_, h, w) = dims("rot90", img)?;
    let s = img.shape();
    let d = img.data();
    let shape = [s[0], s[1], w, h];
    Ok(Tensor::from_fn(&shape, |i| {
        let (p, y, x) = (i / (h * w), i / h % w, i % h);
        d[(p * h + x) * w + (w - 1 - y)]
    }))
}

/// Training augmentation: one draw for the HR target (and so its LR
/// derivative), an independent draw for the reference.
pub fn augment(sample: &Sample, rng: &mut SeededRng) -> Result<Sample> {
    let (h, w) = sample.hr_size();
    let target = Augment::draw(rng, h == w);
    let reference = Augment::draw(rng, h == w);
    Ok(Sample { id: sample.id.clone(), hr: target.apply(&sample.hr)?, reference: reference.apply(&sample.reference)? })
}

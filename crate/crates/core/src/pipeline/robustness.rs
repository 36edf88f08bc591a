use super::dataset::Sample;
use super::eval::{evaluate, par_map};
use super::report::{num, Csv};
use crate::error::{Error, Result};
use crate::losses::{bicubic_resize, cubic, MetricConvention};
use crate::model::HiTSRModel;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransformKind {
    Scale,
    Rotation,
}

impl TransformKind {
    pub const ALL: [TransformKind; 2] = [TransformKind::Scale, TransformKind::Rotation];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Scale => "scale",
            TransformKind::Rotation => "rotation",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    None,
    Small,
    Medium,
    Large,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::None, Level::Small, Level::Medium, Level::Large];

    pub fn name(self) -> &'static str {
        match self {
            Level::None => "none",
            Level::Small => "small",
            Level::Medium => "medium",
            Level::Large => "large",
        }
    }
}

/// A reference degradation: shrink factor or rotation angle in degrees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobustnessSpec {
    pub kind: TransformKind,
    pub level: Level,
}

impl RobustnessSpec {
    /// Scale factor (1 = unchanged) or angle in degrees (0 = unchanged).
    pub fn parameter(&self) -> f64 {
        match (self.kind, self.level) {
            (TransformKind::Scale, Level::None) => 1.0,
            (TransformKind::Scale, Level::Small) => 0.75,
            (TransformKind::Scale, Level::Medium) => 0.5,
            (TransformKind::Scale, Level::Large) => 0.25,
            (TransformKind::Rotation, Level::None) => 0.0,
            (TransformKind::Rotation, Level::Small) => 45.0,
            (TransformKind::Rotation, Level::Medium) => 90.0,
            (TransformKind::Rotation, Level::Large) => 135.0,
        }
    }

    pub fn apply(&self, reference: &Tensor<f32>) -> Result<Tensor<f32>> {
        match (self.level, self.kind) {
            (Level::None, _) => Ok(reference.clone()),
            (_, TransformKind::Scale) => scale_into_canvas(reference, self.parameter()),
            (_, TransformKind::Rotation) => rotate(reference, self.parameter()),
        }
    }
}

/// Shrinks `[B, C, H, W]` by `factor` with the bicubic kernel, centres it on
/// a canvas of the original size and extends its border pixels outwards.
pub fn scale_into_canvas<E: Scalar>(img: &Tensor<E>, factor: f64) -> Result<Tensor<E>> {
    let s = img.shape();
    if s.len() != 4 || !(factor > 0.0 && factor <= 1.0) {
        return Err(Error::Config(format!("scale factor {factor} must lie in (0, 1] for {s:?}")));
    }
    let (h, w) = (s[2], s[3]);
    let (sh, sw) = (((h as f64 * factor).round() as usize).max(1), ((w as f64 * factor).round() as usize).max(1));
    let small = bicubic_resize(img, sh, sw)?;
    let (oy, ox) = ((h - sh) / 2, (w - sw) / 2);
    let d = small.data();
    Ok(Tensor::from_fn(s, |i| {
        let (p, y, x) = (i / (h * w), i / w % h, i % w);
        let sy = y.saturating_sub(oy).min(sh - 1);
        let sx = x.saturating_sub(ox).min(sw - 1);
        d[(p * sh + sy) * sw + sx]
    }))
}

/// Snaps coordinates that are integers up to rounding noise, so quarter
/// turns copy pixels exactly.
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Rotates `[B, C, H, W]` by `degrees` about the image centre with bicubic
/// sampling. Points that fall outside the source are black.
pub fn rotate<E: Scalar>(img: &Tensor<E>, degrees: f64) -> Result<Tensor<E>> {
    let s = img.shape();
    if s.len() != 4 {
        return Err(Error::shape("rotate", format!("expected [B, C, H, W], got {s:?}")));
    }
    let (h, w) = (s[2], s[3]);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = degrees.to_radians().sin_cos();
    let d = img.to_f64_vec();
    let planes = s[0] * s[1];
    let mut out = vec![0.0; d.len()];
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            let sx = snap(cos * dx - sin * dy + cx);
            let sy = snap(sin * dx + cos * dy + cy);
            if sx < 0.0 || sy < 0.0 || sx > (w - 1) as f64 || sy > (h - 1) as f64 {
                continue;
            }
            let (fx, fy) = (sx.floor(), sy.floor());
            let mut taps = Vec::with_capacity(16);
            for j in -1..=2 {
                let wy = cubic(sy - (fy + j as f64));
                if wy == 0.0 {
                    continue;
                }
                let iy = (fy as i64 + j).clamp(0, h as i64 - 1) as usize;
                for i in -1..=2 {
                    let wx = cubic(sx - (fx + i as f64));
                    if wx == 0.0 {
                        continue;
                    }
                    let ix = (fx as i64 + i).clamp(0, w as i64 - 1) as usize;
                    taps.push((iy * w + ix, wy * wx));
                }
            }
            for p in 0..planes {
                let base = p * h * w;
                out[base + y * w + x] = taps.iter().map(|&(k, wt)| wt * d[base + k]).sum();
            }
        }
    }
    Tensor::new(s, out.into_iter().map(E::of).collect())
}

/// Mean model PSNR for every `(transform, level)` pair; the `none` rows are
/// plain evaluation.
pub fn robustness_run<E: Scalar>(
    model: &HiTSRModel<E>,
    samples: &[Sample],
    conv: MetricConvention,
    threads: usize,
) -> Result<Csv> {
    let mut csv = Csv::new(&["transform", "level", "parameter", "psnr", "bicubic_psnr"]);
    for kind in TransformKind::ALL {
        for level in Level::ALL {
            let spec = RobustnessSpec { kind, level };
            let warped = par_map(samples.len(), threads, |i| {
                Ok(Sample { reference: spec.apply(&samples[i].reference)?, ..samples[i].clone() })
            })?;
            let (m, b) = evaluate(model, &warped, conv, threads)?.mean();
            csv.push(vec![
                kind.name().into(),
                level.name().into(),
                format!("{}", spec.parameter()),
                num(m.psnr),
                num(b.psnr),
            ])?;
        }
    }
    Ok(csv)
}

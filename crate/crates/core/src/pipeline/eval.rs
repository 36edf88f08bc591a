use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::info;

use super::dataset::{Sample, SCALE};
use super::report::{num, Csv};
use crate::error::{Error, Result};
use crate::losses::{bicubic_resize, y_scores, ImageScores, MetricConvention};
use crate::model::HiTSRModel;
use crate::tensor::{Scalar, Tensor};

/// Mirror index into `0..n` without repeating the edge sample.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Reflect-pads `[B, C, H, W]` on the bottom and right to `out_h` x `out_w`.
pub fn reflect_pad<E: Scalar>(img: &Tensor<E>, out_h: usize, out_w: usize) -> Result<Tensor<E>> {
    let s = img.shape();
    if s.len() != 4 || out_h < s[2] || out_w < s[3] {
        return Err(Error::shape("reflect_pad", format!("{s:?} to {out_h}x{out_w}")));
    }
    let (h, w) = (s[2], s[3]);
    let d = img.data();
    Ok(Tensor::from_fn(&[s[0], s[1], out_h, out_w], |i| {
        let (p, y, x) = (i / (out_h * out_w), i / out_w % out_h, i % out_w);
        d[(p * h + reflect(y, h)) * w + reflect(x, w)]
    }))
}

/// Top-left `h` x `w` window of `[B, C, H, W]`.
pub fn crop_top_left<E: Scalar>(img: &Tensor<E>, h: usize, w: usize) -> Result<Tensor<E>> {
    let s = img.shape();
    if s.len() != 4 || h > s[2] || w > s[3] {
        return Err(Error::shape("crop_top_left", format!("{h}x{w} from {s:?}")));
    }
    let d = img.data();
    Ok(Tensor::from_fn(&[s[0], s[1], h, w], |i| {
        let (p, y, x) = (i / (h * w), i / w % h, i % w);
        d[(p * s[2] + y) * s[3] + x]
    }))
}

/// Super-resolves one LR image. Inputs whose size the window grid does not
/// divide are reflect-padded and the output is cropped back.
pub fn super_resolve<E: Scalar>(
    model: &HiTSRModel<E>,
    lr: &Tensor<f32>,
    reference: &Tensor<f32>,
) -> Result<Tensor<f32>> {
    let (h, w) = (lr.shape()[2], lr.shape()[3]);
    let unit = if model.cfg.window.is_multiple_of(2) { model.cfg.window } else { 2 * model.cfg.window };
    let (ph, pw) = (h.div_ceil(unit) * unit, w.div_ceil(unit) * unit);
    let padded = (ph, pw) != (h, w);
    let (lr_in, ref_in) = if padded {
        info!("padding {w}x{h} input to {pw}x{ph} for the window grid");
        (reflect_pad(lr, ph, pw)?, reflect_pad(reference, ph * SCALE, pw * SCALE)?)
    } else {
        (lr.clone(), reference.clone())
    };
    let r = model.uses_reference().then(|| ref_in.cast::<E>());
    let out = model.infer(&lr_in.cast(), r.as_ref())?.cast::<f32>();
    if padded {
        crop_top_left(&out, h * SCALE, w * SCALE)
    } else {
        Ok(out)
    }
}

/// Bicubic upscaling of the LR input, clamped like the model output.
pub fn bicubic_baseline(lr: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (h, w) = (lr.shape()[2], lr.shape()[3]);
    Ok(bicubic_resize(lr, h * SCALE, w * SCALE)?.map(|v| v.clamp(0.0, 1.0)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub id: String,
    pub model: ImageScores,
    pub bicubic: ImageScores,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalTable {
    pub rows: Vec<EvalRow>,
}

impl EvalTable {
    /// Arithmetic means `(model, bicubic)`.
    pub fn mean(&self) -> (ImageScores, ImageScores) {
        let n = self.rows.len().max(1) as f64;
        let avg = |f: &dyn Fn(&EvalRow) -> f64| self.rows.iter().map(f).sum::<f64>() / n;
        (
            ImageScores { psnr: avg(&|r| r.model.psnr), ssim: avg(&|r| r.model.ssim) },
            ImageScores { psnr: avg(&|r| r.bicubic.psnr), ssim: avg(&|r| r.bicubic.ssim) },
        )
    }

    /// One row per sample.
    pub fn to_csv(&self) -> Csv {
        let mut csv = Csv::new(&["id", "psnr", "ssim", "bicubic_psnr", "bicubic_ssim"]);
        for r in &self.rows {
            let row =
                vec![r.id.clone(), num(r.model.psnr), num(r.model.ssim), num(r.bicubic.psnr), num(r.bicubic.ssim)];
            csv.push(row).expect("fixed width");
        }
        csv
    }

    /// A single row of means.
    pub fn summary_csv(&self) -> Csv {
        let (m, b) = self.mean();
        let mut csv = Csv::new(&["samples", "psnr", "ssim", "bicubic_psnr", "bicubic_ssim"]);
        csv.push(vec![self.rows.len().to_string(), num(m.psnr), num(m.ssim), num(b.psnr), num(b.ssim)])
            .expect("fixed width");
        csv
    }
}

/// Runs `f` on every index in `0..n` using up to `threads` workers and
/// returns the results in index order.
pub fn par_map<T: Send>(n: usize, threads: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    if threads <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads.min(n) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = f(i);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("worker panicked").into_iter().map(|r| r.expect("every index ran")).collect()
}

/// Scores one super-resolved image and its bicubic baseline.
pub fn score_sample<E: Scalar>(model: &HiTSRModel<E>, sample: &Sample, conv: MetricConvention) -> Result<EvalRow> {
    let lr = sample.lr()?;
    let sr = super_resolve(model, &lr, &sample.reference)?;
    Ok(EvalRow {
        id: sample.id.clone(),
        model: y_scores(&sr, &sample.hr, conv)?,
        bicubic: y_scores(&bicubic_baseline(&lr)?, &sample.hr, conv)?,
    })
}

/// Per-sample luma PSNR/SSIM of the model and of bicubic upscaling.
/// Samples are independent, so `threads > 1` gives identical numbers.
pub fn evaluate<E: Scalar>(
    model: &HiTSRModel<E>,
    samples: &[Sample],
    conv: MetricConvention,
    threads: usize,
) -> Result<EvalTable> {
    let rows = par_map(samples.len(), threads, |i| score_sample(model, &samples[i], conv))?;
    Ok(EvalTable { rows })
}

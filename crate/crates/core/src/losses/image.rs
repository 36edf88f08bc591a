use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Cubic convolution kernel with `a = -0.5`.
pub fn cubic(x: f64) -> f64 {
    let t = x.abs();
    if t <= 1.0 {
        1.5 * t * t * t - 2.5 * t * t + 1.0
    } else if t < 2.0 {
        -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0
    } else {
        0.0
    }
}

/// Taps of a 1-D resampling from `n_in` to `n_out` samples: for each output,
/// `(clamped input indices, weights summing to 1)`.
///
/// Output `i` sits at input coordinate `(i + 0.5) / s - 0.5` with
/// `s = n_out / n_in`. When shrinking, the kernel is stretched by `1/s`
/// (antialiasing). Indices beyond the border are clamped.
pub fn resample_taps(n_in: usize, n_out: usize) -> Vec<(Vec<usize>, Vec<f64>)> {
    let s = n_out as f64 / n_in as f64;
    let (kscale, width) = if s < 1.0 { (s, 4.0 / s) } else { (1.0, 4.0) };
    let taps = width.ceil() as isize + 2;
    (0..n_out)
        .map(|i| {
            let u = (i as f64 + 0.5) / s - 0.5;
            let left = (u - width / 2.0).floor() as isize;
            let mut idx = Vec::with_capacity(taps as usize);
            let mut w = Vec::with_capacity(taps as usize);
            for j in left..left + taps {
                let wt = kscale * cubic(kscale * (u - j as f64));
                if wt != 0.0 {
                    idx.push(j.clamp(0, n_in as isize - 1) as usize);
                    w.push(wt);
                }
            }
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= total);
            (idx, w)
        })
        .collect()
}

/// Separable bicubic resize of `[B, C, H, W]` (height pass first, computed
/// in f64).
pub fn bicubic_resize<E: Scalar>(img: &Tensor<E>, out_h: usize, out_w: usize) -> Result<Tensor<E>> {
    let s = img.shape();
    if s.len() != 4 {
        return Err(Error::shape("bicubic_resize", format!("expected [B, C, H, W], got {s:?}")));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::Config(format!("bicubic target size {out_h}x{out_w} must be positive")));
    }
    let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
    let src = img.to_f64_vec();
    let rows = resample_taps(h, out_h);
    let cols = resample_taps(w, out_w);
    let mut mid = vec![0.0; planes * out_h * w];
    for p in 0..planes {
        for (oy, (idx, wt)) in rows.iter().enumerate() {
            let dst = &mut mid[(p * out_h + oy) * w..(p * out_h + oy + 1) * w];
            for (&iy, &k) in idx.iter().zip(wt) {
                let row = &src[(p * h + iy) * w..(p * h + iy + 1) * w];
                for (d, &v) in dst.iter_mut().zip(row) {
                    *d += k * v;
                }
            }
        }
    }
    let mut out = Vec::with_capacity(planes * out_h * out_w);
    for r in 0..planes * out_h {
        let row = &mid[r * w..(r + 1) * w];
        for (idx, wt) in &cols {
            out.push(E::of(idx.iter().zip(wt).map(|(&ix, &k)| k * row[ix]).sum()));
        }
    }
    Tensor::new(&[s[0], s[1], out_h, out_w], out)
}

/// BT.601 studio-swing luma of `[B, 3, H, W]` in `[0, 1]`, returned in
/// `[0, 1]` (`16/255` for black, `235/255` for white). Inputs are clamped.
pub fn rgb_to_y<E: Scalar>(img: &Tensor<E>) -> Result<Tensor<f64>> {
    let s = img.shape();
    if s.len() != 4 || s[1] != 3 {
        return Err(Error::shape("rgb_to_y", format!("expected [B, 3, H, W], got {s:?}")));
    }
    let plane = s[2] * s[3];
    let d = img.to_f64_vec();
    let mut y = Vec::with_capacity(s[0] * plane);
    for b in 0..s[0] {
        let base = b * 3 * plane;
        for i in 0..plane {
            let c = |k: usize| d[base + k * plane + i].clamp(0.0, 1.0);
            y.push((65.481 * c(0) + 128.553 * c(1) + 24.966 * c(2) + 16.0) / 255.0);
        }
    }
    Tensor::new(&[s[0], 1, s[2], s[3]], y)
}

/// Rounds `[0, 1]` values to the nearest of 256 levels.
pub fn quantize_8bit<E: Scalar>(img: &Tensor<E>) -> Tensor<f64> {
    Tensor::from_fn(img.shape(), |i| (img.data()[i].f64().clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;

use super::dataset::Sample;
use super::io::write_image;
use crate::error::{Error, Result};
use crate::tensor::{SeededRng, Tensor};

/// Side of the bundled fixture images.
pub const FIXTURE_SIZE: usize = 64;
pub const FIXTURE_SEED: u64 = 2024;

type Pattern = fn(f64, f64, usize) -> f64;

fn stripes(x: f64, y: f64, c: usize) -> f64 {
    let phase = c as f64 * 0.7;
    0.5 + 0.35 * (2.0 * PI * (x * 5.0 + y * 2.0) + phase).sin() + 0.1 * (2.0 * PI * y * 9.0).cos()
}

fn checks(x: f64, y: f64, c: usize) -> f64 {
    let cell = ((x * 8.0).floor() as i64 + (y * 8.0).floor() as i64) % 2;
    let base = if cell == 0 { 0.2 } else { 0.8 };
    base * (0.7 + 0.3 * x) + 0.05 * c as f64
}

fn rings(x: f64, y: f64, c: usize) -> f64 {
    let r = ((x - 0.5).powi(2) + (y - 0.45).powi(2)).sqrt();
    0.5 + 0.4 * (2.0 * PI * r * (10.0 + 2.0 * c as f64)).cos() * (-2.0 * r).exp()
}

fn shapes(x: f64, y: f64, c: usize) -> f64 {
    let disc = if (x - 0.3).powi(2) + (y - 0.35).powi(2) < 0.04 { 0.9 } else { 0.15 };
    let bar = if (0.55..0.7).contains(&x) && y > 0.2 { 0.6 } else { 0.0 };
    let tri = if y > 0.6 && x > 0.1 && x < 0.5 && (y - 0.6) > (x - 0.3).abs() { 0.5 } else { 0.0 };
    ((disc + bar + tri) * (0.8 + 0.1 * c as f64)).min(1.0)
}

const PATTERNS: [(&str, Pattern); 4] = [("checks", checks), ("rings", rings), ("shapes", shapes), ("stripes", stripes)];

/// Renders `pattern` with an offset and per-pixel noise, rounded to 8-bit
/// levels so PNG storage is lossless.
fn render(pattern: Pattern, size: usize, shift: (f64, f64), gain: f64, noise: f64, rng: &mut SeededRng) -> Tensor<f32> {
    let mut data = vec![0f32; 3 * size * size];
    for c in 0..3 {
        for y in 0..size {
            for x in 0..size {
                let (u, v) = ((x as f64 + shift.0) / size as f64, (y as f64 + shift.1) / size as f64);
                let n = if noise > 0.0 { rng.random_range(-noise..noise) } else { 0.0 };
                let val = (gain * pattern(u, v, c) + n).clamp(0.0, 1.0);
                data[(c * size + y) * size + x] = ((val * 255.0).round() / 255.0) as f32;
            }
        }
    }
    Tensor::new(&[1, 3, size, size], data).expect("fixture shape")
}

/// The four bundled samples: synthetic HR images and references showing the
/// same pattern shifted, re-lit and with different noise.
pub fn fixture_samples() -> Vec<Sample> {
    let mut rng = SeededRng::new(FIXTURE_SEED);
    PATTERNS
        .iter()
        .map(|&(name, pattern)| {
            let hr = render(pattern, FIXTURE_SIZE, (0.0, 0.0), 1.0, 0.03, &mut rng);
            let shift = (rng.random_range(-6.0..6.0f64).round(), rng.random_range(-6.0..6.0f64).round());
            let reference = render(pattern, FIXTURE_SIZE, shift, 0.9, 0.05, &mut rng);
            Sample { id: name.to_string(), hr, reference }
        })
        .collect()
}

/// Writes `samples` in the dataset layout (`hr/<id>.png`, `ref/<id>.png`).
pub fn write_dataset(root: &Path, samples: &[Sample]) -> Result<()> {
    for sub in ["hr", "ref"] {
        let dir = root.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for s in samples {
        write_image(&root.join("hr").join(format!("{}.png", s.id)), &s.hr)?;
        write_image(&root.join("ref").join(format!("{}.png", s.id)), &s.reference)?;
    }
    Ok(())
}

/// A reference with four-fold rotational symmetry about its centre.
pub fn symmetric_image(size: usize) -> Tensor<f32> {
    let c = (size as f64 - 1.0) / 2.0;
    Tensor::from_fn(&[1, 3, size, size], |i| {
        let (ch, y, x) = (i / (size * size), i / size % size, i % size);
        let (dx, dy) = ((x as f64 - c).abs(), (y as f64 - c).abs());
        let (a, b) = (dx.max(dy), dx.min(dy));
        let v = 0.5 + 0.3 * (a * 0.6).cos() * (b * 0.9 + ch as f64).sin();
        ((v * 255.0).round() / 255.0) as f32
    })
}

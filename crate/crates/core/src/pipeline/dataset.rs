use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::Rng;

use super::io::{read_image, ImageFormat};
use crate::error::{Error, Result};
use crate::losses::bicubic_resize;
use crate::tensor::{SeededRng, Tensor};

/// Upscaling factor between LR inputs and HR targets.
pub const SCALE: usize = 4;

/// One HR target with its reference, both `[1, 3, H, W]` in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub hr: Tensor<f32>,
    pub reference: Tensor<f32>,
}

impl Sample {
    /// Bicubic ÷4 of the HR image. The same function produces the
    /// evaluation baseline, so a zero-weight model reproduces it exactly.
    pub fn lr(&self) -> Result<Tensor<f32>> {
        let s = self.hr.shape();
        bicubic_resize(&self.hr, s[2] / SCALE, s[3] / SCALE)
    }

    pub fn hr_size(&self) -> (usize, usize) {
        (self.hr.shape()[2], self.hr.shape()[3])
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RefMode {
    /// `ref/<stem>` pairs with `hr/<stem>`; stems without a reference are skipped.
    #[default]
    Paired,
    /// Each sample borrows the HR image of another sample, drawn with this seed.
    Random(u64),
}

/// Image files by stem; the first extension in sorted order wins.
fn list_images(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && ImageFormat::from_path(&path).is_some() {
            paths.push(path);
        }
    }
    paths.sort();
    let mut out = BTreeMap::new();
    for p in paths {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if out.contains_key(&stem) {
            warn!("ignoring {}: stem {stem:?} already has an image", p.display());
            continue;
        }
        out.insert(stem, p);
    }
    Ok(out)
}

fn read_hr(path: &Path) -> Result<Tensor<f32>> {
    let img = read_image(path)?;
    let (h, w) = (img.shape()[2], img.shape()[3]);
    if h % SCALE != 0 || w % SCALE != 0 {
        return Err(Error::Image {
            path: path.to_path_buf(),
            detail: format!("size {w}x{h} is not a multiple of {SCALE}"),
        });
    }
    Ok(img)
}

/// Brings a reference to the HR size with the bicubic kernel if needed.
fn fit_reference(reference: Tensor<f32>, hr: &Tensor<f32>, id: &str) -> Result<Tensor<f32>> {
    let (rs, hs) = (reference.shape(), hr.shape());
    if rs == hs {
        return Ok(reference);
    }
    info!("{id}: resizing reference {}x{} to {}x{}", rs[3], rs[2], hs[3], hs[2]);
    bicubic_resize(&reference, hs[2], hs[3])
}

/// Loads `<root>/hr` and `<root>/ref` in lexicographic stem order.
pub fn load_dataset(root: &Path, mode: RefMode) -> Result<Vec<Sample>> {
    let hr_dir = root.join("hr");
    let hr = list_images(&hr_dir)?;
    let mut samples = Vec::with_capacity(hr.len());
    match mode {
        RefMode::Paired => {
            let refs = list_images(&root.join("ref"))?;
            for (stem, path) in &hr {
                let Some(rp) = refs.get(stem) else {
                    warn!("skipping {stem}: no reference image");
                    continue;
                };
                let hr_img = read_hr(path)?;
                let reference = fit_reference(read_image(rp)?, &hr_img, stem)?;
                samples.push(Sample { id: stem.clone(), hr: hr_img, reference });
            }
        }
        RefMode::Random(seed) => {
            let images: Vec<(String, Tensor<f32>)> =
                hr.iter().map(|(s, p)| Ok((s.clone(), read_hr(p)?))).collect::<Result<_>>()?;
            let mut rng = SeededRng::new(seed);
            let n = images.len();
            for (i, (stem, img)) in images.iter().enumerate() {
                let j = if n > 1 { (i + rng.random_range(1..n)) % n } else { i };
                let reference = fit_reference(images[j].1.clone(), img, stem)?;
                samples.push(Sample { id: stem.clone(), hr: img.clone(), reference });
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::Contract(format!("dataset {} contains no usable samples", root.display())));
    }
    Ok(samples)
}

/// Copies the `size`x`size` window at `(y, x)` out of `[1, C, H, W]`.
pub fn crop(img: &Tensor<f32>, y: usize, x: usize, size: usize) -> Result<Tensor<f32>> {
    let s = img.shape();
    if s.len() != 4 || y + size > s[2] || x + size > s[3] {
        return Err(Error::shape("crop", format!("{size}x{size} at ({y}, {x}) outside {s:?}")));
    }
    let (c, h, w) = (s[1], s[2], s[3]);
    let d = img.data();
    let mut out = Vec::with_capacity(s[0] * c * size * size);
    for p in 0..s[0] * c {
        for r in 0..size {
            let start = (p * h + y + r) * w + x;
            out.extend_from_slice(&d[start..start + size]);
        }
    }
    Tensor::new(&[s[0], c, size, size], out)
}

/// A random HR crop of side `size` (a multiple of 4) and the reference crop
/// at the same position.
pub fn random_crop(sample: &Sample, size: usize, rng: &mut SeededRng) -> Result<Sample> {
    let (h, w) = sample.hr_size();
    if size == 0 || !size.is_multiple_of(SCALE) || size > h || size > w {
        return Err(Error::Config(format!(
            "crop size {size} must be a positive multiple of {SCALE} no larger than {w}x{h} ({})",
            sample.id
        )));
    }
    let y = rng.random_range(0..=(h - size) / SCALE) * SCALE;
    let x = rng.random_range(0..=(w - size) / SCALE) * SCALE;
    Ok(Sample {
        id: format!("{}@{y},{x}", sample.id),
        hr: crop(&sample.hr, y, x, size)?,
        reference: crop(&sample.reference, y, x, size)?,
    })
}

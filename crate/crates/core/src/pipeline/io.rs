use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Supported on-disk image formats.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    Ppm,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "png" => Some(Self::Png),
            "ppm" => Some(Self::Ppm),
            _ => None,
        }
    }
}

fn bad(path: &Path, detail: impl Into<String>) -> Error {
    Error::Image { path: path.to_path_buf(), detail: detail.into() }
}

/// Reads an RGB image as `[1, 3, H, W]` in `[0, 1]`. Grey images are
/// replicated to three channels; alpha is dropped.
pub fn read_image(path: &Path) -> Result<Tensor<f32>> {
    let format = ImageFormat::from_path(path).ok_or_else(|| bad(path, "unsupported extension (png, ppm)"))?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (w, h, rgb) = match format {
        ImageFormat::Png => decode_png(path, BufReader::new(file))?,
        ImageFormat::Ppm => decode_ppm(path, BufReader::new(file))?,
    };
    Ok(planar(w, h, &rgb))
}

fn planar(w: usize, h: usize, rgb: &[u8]) -> Tensor<f32> {
    let plane = w * h;
    Tensor::from_fn(&[1, 3, h, w], |i| {
        let (c, p) = (i / plane, i % plane);
        rgb[p * 3 + c] as f32 / 255.0
    })
}

fn decode_png<R: BufRead + std::io::Seek>(path: &Path, r: R) -> Result<(usize, usize, Vec<u8>)> {
    let mut decoder = png::Decoder::new(r);
    decoder.set_transformations(Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(|e| bad(path, e.to_string()))?;
    let size = reader.output_buffer_size().ok_or_else(|| bad(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(path, e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = info.line_size;
    let channels = match info.color_type {
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Indexed => return Err(bad(path, "palette was not expanded")),
    };
    if info.bit_depth != BitDepth::Eight {
        return Err(bad(path, format!("unexpected bit depth {:?}", info.bit_depth)));
    }
    let mut rgb = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        let row = &buf[y * stride..y * stride + w * channels];
        for px in row.chunks_exact(channels) {
            match channels {
                1 | 2 => rgb.extend_from_slice(&[px[0]; 3]),
                _ => rgb.extend_from_slice(&px[..3]),
            }
        }
    }
    Ok((w, h, rgb))
}

/// Next whitespace-separated header token, skipping `#` comments.
fn ppm_token(path: &Path, bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(path, "malformed PPM header"))
}

fn decode_ppm<R: Read>(path: &Path, mut r: R) -> Result<(usize, usize, Vec<u8>)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if !bytes.starts_with(b"P6") {
        return Err(bad(path, "only binary PPM (P6) is supported"));
    }
    let mut pos = 2;
    let w = ppm_token(path, &bytes, &mut pos)?;
    let h = ppm_token(path, &bytes, &mut pos)?;
    let maxval = ppm_token(path, &bytes, &mut pos)?;
    if maxval == 0 || maxval > 65535 {
        return Err(bad(path, format!("PPM maxval {maxval} out of range")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let bpc = if maxval < 256 { 1 } else { 2 };
    let need = w * h * 3 * bpc;
    let raster = bytes.get(pos..pos + need).ok_or_else(|| bad(path, "PPM raster is truncated"))?;
    let rgb = if bpc == 1 {
        raster.iter().map(|&v| ((v as usize * 255 + maxval / 2) / maxval) as u8).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| {
                let v = u16::from_be_bytes([c[0], c[1]]) as usize;
                ((v * 255 + maxval / 2) / maxval) as u8
            })
            .collect()
    };
    Ok((w, h, rgb))
}

/// Interleaved 8-bit RGB of `[1, 3, H, W]`, rounding and clamping.
pub fn to_rgb8<E: Scalar>(img: &Tensor<E>) -> Result<(usize, usize, Vec<u8>)> {
    let s = img.shape();
    if s.len() != 4 || s[0] != 1 || s[1] != 3 {
        return Err(Error::shape("write_image", format!("expected [1, 3, H, W], got {s:?}")));
    }
    let (h, w) = (s[2], s[3]);
    let plane = h * w;
    let d = img.data();
    let mut out = Vec::with_capacity(plane * 3);
    for p in 0..plane {
        for c in 0..3 {
            out.push((d[c * plane + p].f64().clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok((w, h, out))
}

/// Writes `[1, 3, H, W]` as 8-bit PNG or PPM, chosen by extension.
pub fn write_image<E: Scalar>(path: &Path, img: &Tensor<E>) -> Result<()> {
    let format = ImageFormat::from_path(path).ok_or_else(|| bad(path, "unsupported extension (png, ppm)"))?;
    let (w, h, rgb) = to_rgb8(img)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    match format {
        ImageFormat::Png => {
            let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
            enc.set_color(ColorType::Rgb);
            enc.set_depth(BitDepth::Eight);
            let mut writer = enc.write_header().map_err(|e| bad(path, e.to_string()))?;
            writer.write_image_data(&rgb).map_err(|e| bad(path, e.to_string()))?;
            writer.finish().map_err(|e| bad(path, e.to_string()))?;
        }
        ImageFormat::Ppm => {
            write!(out, "P6\n{w} {h}\n255\n").map_err(|e| Error::io(path, e))?;
            out.write_all(&rgb).map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

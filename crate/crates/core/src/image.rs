//! Floating-point raster images and lossless PNG / PPM / PGM I/O.
//!
//! Every sample lives in `[0, 1]`. Constructors and mutators clamp on write,
//! so downstream code never sees an out-of-range value.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageReader};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Owned `width × height × channels` raster, row-major, channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

/// Axis-aligned rectangle in pixel units; `(x0, y0)` is the inclusive top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl PixelRect {
    pub fn new(x0: usize, y0: usize, w: usize, h: usize) -> Self {
        Self { x0, y0, w, h }
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.w >= 1 && self.h >= 1 && self.x0 + self.w <= width && self.y0 + self.h <= height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ResizeMode {
    #[default]
    Nearest,
    Bilinear,
}

/// ITU-R BT.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

impl Image {
    /// Builds an image from raw samples, clamping each to `[0, 1]`.
    pub fn new(width: usize, height: usize, channels: usize, mut data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidSize { width, height });
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Format(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "expected {} samples, got {}",
                width * height * channels,
                data.len()
            )));
        }
        for s in &mut data {
            *s = clamp_unit(*s);
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Constant image.
    ///
    /// # Panics
    /// If a dimension is zero or `channels` is not 1 or 3.
    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be non-zero");
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        Self {
            width,
            height,
            channels,
            data: vec![clamp_unit(value); width * height * channels],
        }
    }

    /// Image with one color for every pixel.
    pub fn solid_rgb(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut img = Self::filled(width, height, 3, 0.0);
        for px in img.data.chunks_exact_mut(3) {
            for (s, v) in px.iter_mut().zip(rgb) {
                *s = clamp_unit(v);
            }
        }
        img
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut img = Self::filled(width, height, channels, 0.0);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    let i = img.index(x, y, c);
                    img.data[i] = clamp_unit(f(x, y, c));
                }
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f64) {
        let i = self.index(x, y, c);
        self.data[i] = clamp_unit(value);
    }

    /// Applies `f` to every sample, clamping the result.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&s| clamp_unit(f(s))).collect(),
        }
    }

    /// Luma plane (BT.601) for RGB, the single plane for grayscale.
    pub fn luma(&self) -> Vec<f64> {
        if self.channels == 1 {
            return self.data.clone();
        }
        self.data
            .chunks_exact(3)
            .map(|p| LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2])
            .collect()
    }

    /// Snaps every sample to the nearest 8-bit level (round half up).
    pub fn quantized(&self) -> Image {
        self.map(|s| quantize_u8(s) as f64 / 255.0)
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&s| quantize_u8(s)).collect()
    }

    pub fn from_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            width,
            height,
            channels,
            bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        )
    }

    /// Expands grayscale to RGB; RGB images are returned unchanged.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        Image {
            width: self.width,
            height: self.height,
            channels: 3,
            data: self.data.iter().flat_map(|&s| [s, s, s]).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

#[inline]
pub(crate) fn clamp_unit(s: f64) -> f64 {
    if s.is_nan() {
        0.0
    } else {
        s.clamp(0.0, 1.0)
    }
}

/// `round(sample × 255)` with halves rounded up.
#[inline]
pub fn quantize_u8(s: f64) -> u8 {
    (clamp_unit(s) * 255.0 + 0.5).floor().min(255.0) as u8
}

/// Reads a PNG, binary PPM (P6) or binary PGM (P5) file.
///
/// Alpha channels are dropped. 16-bit files are rejected.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(image::ImageFormat::Png) | Some(image::ImageFormat::Pnm) => {}
        other => {
            return Err(Error::Format(format!(
                "{}: unsupported codec {other:?}",
                path.display()
            )))
        }
    }
    let decoded = reader.decode().map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    match decoded {
        DynamicImage::ImageLuma8(buf) => Image::from_u8(w, h, 1, buf.as_raw()),
        DynamicImage::ImageLumaA8(_) => {
            Image::from_u8(w, h, 1, decoded.to_luma8().as_raw())
        }
        DynamicImage::ImageRgb8(buf) => Image::from_u8(w, h, 3, buf.as_raw()),
        DynamicImage::ImageRgba8(_) => Image::from_u8(w, h, 3, decoded.to_rgb8().as_raw()),
        other => Err(Error::Format(format!(
            "{}: unsupported pixel layout {:?} (8-bit gray or RGB only)",
            path.display(),
            other.color()
        ))),
    }
}

/// Writes an 8-bit file whose codec is chosen by extension
/// (`.png`, `.ppm`, `.pgm`, `.pnm`).
///
/// The payload goes to a temporary sibling first and is renamed into place.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let bytes = img.to_u8();
    let (w, h) = (img.width as u32, img.height as u32);
    let color = if img.channels == 3 {
        ExtendedColorType::Rgb8
    } else {
        ExtendedColorType::L8
    };

    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Format(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut out = BufWriter::new(file);
    let encoded = match ext.as_str() {
        "png" => PngEncoder::new(&mut out).write_image(&bytes, w, h, color),
        "ppm" | "pgm" | "pnm" => {
            let subtype = if img.channels == 3 {
                PnmSubtype::Pixmap(SampleEncoding::Binary)
            } else {
                PnmSubtype::Graymap(SampleEncoding::Binary)
            };
            PnmEncoder::new(&mut out)
                .with_subtype(subtype)
                .write_image(&bytes, w, h, color)
        }
        _ => {
            drop(out);
            let _ = fs::remove_file(&tmp);
            return Err(Error::Format(format!(
                "{}: cannot infer codec from extension",
                path.display()
            )));
        }
    };
    if let Err(e) = encoded {
        drop(out);
        let _ = fs::remove_file(&tmp);
        return Err(match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Format(other.to_string()),
        });
    }
    out.flush().map_err(|e| Error::io(&tmp, e))?;
    drop(out);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Copies the region `rect` out of `img`.
pub fn crop(img: &Image, rect: PixelRect) -> Result<Image> {
    if !rect.fits(img.width, img.height) {
        return Err(Error::OutOfBounds {
            rect,
            width: img.width,
            height: img.height,
        });
    }
    let c = img.channels;
    let mut data = Vec::with_capacity(rect.w * rect.h * c);
    for y in rect.y0..rect.y0 + rect.h {
        let start = img.index(rect.x0, y, 0);
        data.extend_from_slice(&img.data[start..start + rect.w * c]);
    }
    Ok(Image {
        width: rect.w,
        height: rect.h,
        channels: c,
        data,
    })
}

/// Writes `patch` into `dst` with its top-left corner at `(x0, y0)`.
pub fn paste(dst: &mut Image, patch: &Image, x0: usize, y0: usize) -> Result<()> {
    let rect = PixelRect::new(x0, y0, patch.width, patch.height);
    if !rect.fits(dst.width, dst.height) {
        return Err(Error::OutOfBounds {
            rect,
            width: dst.width,
            height: dst.height,
        });
    }
    if patch.channels != dst.channels {
        return Err(Error::ShapeMismatch(format!(
            "{} channels pasted into {}",
            patch.channels, dst.channels
        )));
    }
    let c = dst.channels;
    for y in 0..patch.height {
        let s = patch.index(0, y, 0);
        let d = dst.index(x0, y0 + y, 0);
        dst.data[d..d + patch.width * c].copy_from_slice(&patch.data[s..s + patch.width * c]);
    }
    Ok(())
}

/// Bilinear sample at continuous coordinates, clamping to the nearest edge
/// pixel outside the image. Pixel centers sit on integer coordinates.
#[inline]
pub fn sample_bilinear(img: &Image, x: f64, y: f64, c: usize) -> f64 {
    let max_x = (img.width - 1) as f64;
    let max_y = (img.height - 1) as f64;
    let x = x.clamp(0.0, max_x);
    let y = y.clamp(0.0, max_y);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = img.get(x0, y0, c) * (1.0 - fx) + img.get(x1, y0, c) * fx;
    let bottom = img.get(x0, y1, c) * (1.0 - fx) + img.get(x1, y1, c) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Resamples to exactly `w × h` using pixel-center alignment.
pub fn resize(img: &Image, w: usize, h: usize, mode: ResizeMode) -> Result<Image> {
    if w == 0 || h == 0 {
        return Err(Error::InvalidSize {
            width: w,
            height: h,
        });
    }
    let sx = img.width as f64 / w as f64;
    let sy = img.height as f64 / h as f64;
    let c = img.channels;
    let mut data = Vec::with_capacity(w * h * c);
    match mode {
        ResizeMode::Nearest => {
            let xs: Vec<usize> = (0..w)
                .map(|x| (((x as f64 + 0.5) * sx).floor() as usize).min(img.width - 1))
                .collect();
            for y in 0..h {
                let syi = (((y as f64 + 0.5) * sy).floor() as usize).min(img.height - 1);
                for &sxi in &xs {
                    let i = img.index(sxi, syi, 0);
                    data.extend_from_slice(&img.data[i..i + c]);
                }
            }
        }
        ResizeMode::Bilinear => {
            for y in 0..h {
                let fy = (y as f64 + 0.5) * sy - 0.5;
                for x in 0..w {
                    let fx = (x as f64 + 0.5) * sx - 0.5;
                    for ch in 0..c {
                        data.push(sample_bilinear(img, fx, fy, ch));
                    }
                }
            }
        }
    }
    Image::new(w, h, c, data)
}

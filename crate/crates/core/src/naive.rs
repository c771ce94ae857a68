//! Gaussian blur, pixelation and solid masking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, LUMA_WEIGHTS};

pub const DEFAULT_BLUR_KERNEL: usize = 51;
pub const DEFAULT_BLOCK_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlurParams {
    /// Odd kernel width. When omitted it is 51, or `2·⌈3σ⌉ + 1` if `sigma` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_size: Option<usize>,
    /// Standard deviation in pixels; 0 derives it from the kernel size.
    #[serde(default)]
    pub sigma: f64,
}

impl Default for BlurParams {
    fn default() -> Self {
        Self {
            kernel_size: Some(DEFAULT_BLUR_KERNEL),
            sigma: 0.0,
        }
    }
}

impl BlurParams {
    pub fn new(kernel_size: usize, sigma: f64) -> Self {
        Self {
            kernel_size: Some(kernel_size),
            sigma,
        }
    }

    /// Explicit sigma with the kernel size derived from it.
    pub fn with_sigma(sigma: f64) -> Self {
        Self {
            kernel_size: None,
            sigma,
        }
    }

    pub fn kernel_size(&self) -> usize {
        match self.kernel_size {
            Some(k) => k,
            None if self.sigma > 0.0 => 2 * (3.0 * self.sigma).ceil() as usize + 1,
            None => DEFAULT_BLUR_KERNEL,
        }
    }

    pub fn effective_sigma(&self) -> f64 {
        if self.sigma > 0.0 {
            self.sigma
        } else {
            auto_sigma(self.kernel_size())
        }
    }

    /// Fills in the kernel size so the parameters are fully explicit.
    pub fn resolved(&self) -> Self {
        Self {
            kernel_size: Some(self.kernel_size()),
            sigma: self.sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.kernel_size();
        if k == 0 || k.is_multiple_of(2) {
            return Err(Error::InvalidKernel(k));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Sigma implied by a kernel size when none is given.
pub fn auto_sigma(kernel_size: usize) -> f64 {
    0.3 * ((kernel_size as f64 - 1.0) / 2.0 - 1.0) + 0.8
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Vec<f64>> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(Error::InvalidKernel(size));
    }
    if size == 1 {
        return Ok(vec![1.0]);
    }
    let r = (size / 2) as f64;
    let mut taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - r;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    Ok(taps)
}

/// Separable convolution with replicated (edge-clamped) borders.
pub fn convolve_separable(img: &Image, taps: &[f64]) -> Image {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let r = taps.len() / 2;
    let src = img.data();
    let mut tmp = vec![0.0; src.len()];

    let xs: Vec<Vec<usize>> = (0..w)
        .map(|x| {
            (0..taps.len())
                .map(|k| (x + k).saturating_sub(r).min(w - 1))
                .collect()
        })
        .collect();
    for y in 0..h {
        let row = &src[y * w * c..(y + 1) * w * c];
        let out = &mut tmp[y * w * c..(y + 1) * w * c];
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (t, &sx) in taps.iter().zip(&xs[x]) {
                    acc += t * row[sx * c + ch];
                }
                out[x * c + ch] = acc;
            }
        }
    }

    let mut data = vec![0.0; src.len()];
    let stride = w * c;
    for y in 0..h {
        let out = &mut data[y * stride..(y + 1) * stride];
        for (k, t) in taps.iter().enumerate() {
            let sy = (y + k).saturating_sub(r).min(h - 1);
            let row = &tmp[sy * stride..(sy + 1) * stride];
            for (o, s) in out.iter_mut().zip(row) {
                *o += t * s;
            }
        }
    }
    Image::new(w, h, c, data).expect("shape preserved")
}

pub fn blur(face: &Image, p: &BlurParams) -> Result<Image> {
    p.validate()?;
    let taps = gaussian_kernel(p.kernel_size(), p.effective_sigma())?;
    if taps.len() == 1 {
        return Ok(face.clone());
    }
    Ok(convolve_separable(face, &taps))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PixelateInterpolation {
    #[default]
    Nearest,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PixelateParams {
    pub block_size: usize,
    pub interpolation: PixelateInterpolation,
}

impl Default for PixelateParams {
    fn default() -> Self {
        Self {
            block_size: DEFAULT_BLOCK_SIZE,
            interpolation: PixelateInterpolation::Nearest,
        }
    }
}

impl PixelateParams {
    pub fn validate(&self) -> Result<()> {
        if self.block_size == 0 {
            return Err(Error::Config("block_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Area-mean of each `block × block` cell; edge cells cover what is left.
fn block_means(img: &Image, block: usize) -> (usize, usize, Vec<f64>) {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let gw = w.div_ceil(block);
    let gh = h.div_ceil(block);
    let mut grid = vec![0.0; gw * gh * c];
    for gy in 0..gh {
        for gx in 0..gw {
            let (x0, y0) = (gx * block, gy * block);
            let (x1, y1) = ((x0 + block).min(w), (y0 + block).min(h));
            for ch in 0..c {
                let first = img.get(x0, y0, ch);
                let (mut sum, mut uniform) = (0.0, true);
                for y in y0..y1 {
                    for x in x0..x1 {
                        let v = img.get(x, y, ch);
                        uniform &= v == first;
                        sum += v;
                    }
                }
                // A uniform cell keeps its exact value, which makes the
                // nearest mode idempotent.
                grid[(gy * gw + gx) * c + ch] = if uniform {
                    first
                } else {
                    sum / ((x1 - x0) * (y1 - y0)) as f64
                };
            }
        }
    }
    (gw, gh, grid)
}

pub fn pixelate(face: &Image, p: &PixelateParams) -> Result<Image> {
    p.validate()?;
    if p.block_size == 1 {
        return Ok(face.clone());
    }
    let block = p.block_size;
    let (w, h, c) = (face.width(), face.height(), face.channels());
    let (gw, gh, grid) = block_means(face, block);
    let g = |gx: usize, gy: usize, ch: usize| grid[(gy * gw + gx) * c + ch];
    let mut data = Vec::with_capacity(w * h * c);
    for y in 0..h {
        for x in 0..w {
            match p.interpolation {
                PixelateInterpolation::Nearest => {
                    for ch in 0..c {
                        data.push(g(x / block, y / block, ch));
                    }
                }
                PixelateInterpolation::Linear => {
                    let fx = ((x as f64 + 0.5) / block as f64 - 0.5).clamp(0.0, (gw - 1) as f64);
                    let fy = ((y as f64 + 0.5) / block as f64 - 0.5).clamp(0.0, (gh - 1) as f64);
                    let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
                    let (x1, y1) = ((x0 + 1).min(gw - 1), (y0 + 1).min(gh - 1));
                    let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
                    for ch in 0..c {
                        let top = g(x0, y0, ch) * (1.0 - ax) + g(x1, y0, ch) * ax;
                        let bot = g(x0, y1, ch) * (1.0 - ax) + g(x1, y1, ch) * ax;
                        data.push(top * (1.0 - ay) + bot * ay);
                    }
                }
            }
        }
    }
    Image::new(w, h, c, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskType {
    #[default]
    Solid,
    RandomColor,
    White,
    Black,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskParams {
    pub mask_color: [f64; 3],
    pub mask_type: MaskType,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            mask_color: [0.0, 0.0, 0.0],
            mask_type: MaskType::Solid,
        }
    }
}

impl MaskParams {
    pub fn of_type(mask_type: MaskType) -> Self {
        Self {
            mask_type,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mask_color.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config(format!(
                "mask_color components must lie in [0, 1], got {:?}",
                self.mask_color
            )));
        }
        Ok(())
    }

    pub fn resolve_color(&self, rng_seed: u64) -> [f64; 3] {
        match self.mask_type {
            MaskType::Solid => self.mask_color,
            MaskType::White => [1.0; 3],
            MaskType::Black => [0.0; 3],
            MaskType::RandomColor => {
                let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
                [rng.gen(), rng.gen(), rng.gen()]
            }
        }
    }
}

pub fn mask(face: &Image, p: &MaskParams, rng_seed: u64) -> Result<Image> {
    p.validate()?;
    let rgb = p.resolve_color(rng_seed);
    Ok(if face.channels() == 3 {
        Image::solid_rgb(face.width(), face.height(), rgb)
    } else {
        let luma = rgb.iter().zip(LUMA_WEIGHTS).map(|(v, w)| v * w).sum();
        Image::filled(face.width(), face.height(), 1, luma)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_image(seed: u64, w: usize, h: usize, c: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, c, |_, _, _| rng.gen())
    }

    #[test]
    fn auto_sigma_matches_convention() {
        assert!((auto_sigma(51) - 8.0).abs() < 1e-12);
        assert!((auto_sigma(3) - 0.8).abs() < 1e-12);
        assert_eq!(BlurParams::with_sigma(10.0).kernel_size(), 61);
        assert_eq!(BlurParams::default().kernel_size(), 51);
    }

    #[test]
    fn blur_constant_and_delta() {
        let img = Image::filled(20, 15, 3, 0.42);
        let out = blur(&img, &BlurParams::default()).unwrap();
        assert!(out.data().iter().all(|&s| (s - 0.42).abs() < 1e-12));
        let rnd = random_image(1, 9, 9, 3);
        assert_eq!(blur(&rnd, &BlurParams::new(1, 0.0)).unwrap(), rnd);
        assert!(matches!(
            blur(&rnd, &BlurParams::new(4, 0.0)),
            Err(Error::InvalidKernel(4))
        ));
    }

    #[test]
    fn impulse_response_matches_dense_convolution() {
        let mut data = vec![0.0; 49];
        data[24] = 1.0;
        let img = Image::new(7, 7, 1, data.clone()).unwrap();
        let out = blur(&img, &BlurParams::new(5, 1.0)).unwrap();
        // Dense 2-D oracle with the unnormalized Gaussian normalized over the 5x5 support.
        let mut dense = [[0.0f64; 5]; 5];
        let mut total = 0.0;
        for (i, row) in dense.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (dy, dx) = (i as f64 - 2.0, j as f64 - 2.0);
                *v = (-(dx * dx + dy * dy) / 2.0).exp();
                total += *v;
            }
        }
        for y in 0..7 {
            for x in 0..7 {
                let mut acc = 0.0;
                for i in 0..5 {
                    for j in 0..5 {
                        let sy = (y as isize + i as isize - 2).clamp(0, 6) as usize;
                        let sx = (x as isize + j as isize - 2).clamp(0, 6) as usize;
                        acc += dense[i][j] / total * data[sy * 7 + sx];
                    }
                }
                assert!((out.get(x, y, 0) - acc).abs() < 1e-15);
            }
        }
        assert!((out.get(3, 3, 0) - 1.0 / total).abs() < 1e-15);
    }

    #[test]
    fn blur_preserves_mean_with_constant_border() {
        let mut img = Image::filled(60, 60, 1, 0.3);
        for y in 25..35 {
            for x in 22..38 {
                img.set(x, y, 0, 0.9);
            }
        }
        let out = blur(&img, &BlurParams::new(15, 2.0)).unwrap();
        assert!((out.mean() - img.mean()).abs() < 1e-6);
    }

    #[test]
    fn pixelate_edge_cases() {
        let img = random_image(2, 20, 13, 3);
        assert_eq!(pixelate(&img, &PixelateParams { block_size: 1, ..Default::default() }).unwrap(), img);
        let big = pixelate(&img, &PixelateParams { block_size: 64, ..Default::default() }).unwrap();
        for c in 0..3 {
            let mean: f64 = (0..13)
                .flat_map(|y| (0..20).map(move |x| (x, y)))
                .map(|(x, y)| img.get(x, y, c))
                .sum::<f64>()
                / 260.0;
            for y in 0..13 {
                for x in 0..20 {
                    assert!((big.get(x, y, c) - mean).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn quadrant_means_for_32px_block_16() {
        let img = random_image(3, 32, 32, 3);
        let out = pixelate(&img, &PixelateParams::default()).unwrap();
        for (qx, qy) in [(0, 0), (16, 0), (0, 16), (16, 16)] {
            for c in 0..3 {
                let mut sum = 0.0;
                for y in qy..qy + 16 {
                    for x in qx..qx + 16 {
                        sum += img.get(x, y, c);
                    }
                }
                let mean = sum / 256.0;
                for y in qy..qy + 16 {
                    for x in qx..qx + 16 {
                        assert!((out.get(x, y, c) - mean).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn linear_pixelate_is_smooth_and_bounded() {
        let img = random_image(4, 40, 40, 3);
        let p = PixelateParams { block_size: 8, interpolation: PixelateInterpolation::Linear };
        let out = pixelate(&img, &p).unwrap();
        assert!(out.same_shape(&img));
        let near = pixelate(&img, &PixelateParams { block_size: 8, ..Default::default() }).unwrap();
        // (3, 3) clamps onto the first block mean; (11, 3) sits 15/16 of the
        // way from the first block center to the second.
        assert_eq!(out.get(3, 3, 0), near.get(0, 0, 0));
        let expect = near.get(0, 0, 0) * 0.0625 + near.get(8, 0, 0) * 0.9375;
        assert!((out.get(11, 3, 0) - expect).abs() < 1e-12);
    }

    #[test]
    fn masks() {
        let img = random_image(5, 8, 6, 3);
        let black = mask(&img, &MaskParams::of_type(MaskType::Black), 0).unwrap();
        assert!(black.data().iter().all(|&s| s == 0.0));
        let white = mask(&img, &MaskParams::of_type(MaskType::White), 0).unwrap();
        assert!(white.data().iter().all(|&s| s == 1.0));
        let solid = mask(&img, &MaskParams { mask_color: [0.2, 0.4, 0.6], mask_type: MaskType::Solid }, 0).unwrap();
        assert_eq!(&solid.data()[0..3], &[0.2, 0.4, 0.6]);
        let r = MaskParams::of_type(MaskType::RandomColor);
        assert_eq!(mask(&img, &r, 9).unwrap(), mask(&img, &r, 9).unwrap());
        assert_ne!(mask(&img, &r, 9).unwrap(), mask(&img, &r, 10).unwrap());
        let bad = MaskParams { mask_color: [1.5, 0.0, 0.0], mask_type: MaskType::Solid };
        assert!(mask(&img, &bad, 0).is_err());
    }

    proptest! {
        #[test]
        fn nearest_pixelate_idempotent(seed in any::<u64>(), w in 1usize..40, h in 1usize..40, b in 1usize..20) {
            let img = random_image(seed, w, h, 3);
            let p = PixelateParams { block_size: b, ..Default::default() };
            let once = pixelate(&img, &p).unwrap();
            prop_assert_eq!(pixelate(&once, &p).unwrap(), once);
        }

        #[test]
        fn shapes_preserved(seed in any::<u64>(), w in 1usize..30, h in 1usize..30, gray in any::<bool>()) {
            let img = random_image(seed, w, h, if gray { 1 } else { 3 });
            let a = blur(&img, &BlurParams::new(7, 0.0)).unwrap();
            let b = pixelate(&img, &PixelateParams { block_size: 4, interpolation: PixelateInterpolation::Linear }).unwrap();
            let c = mask(&img, &MaskParams::default(), seed).unwrap();
            prop_assert!(a.same_shape(&img) && b.same_shape(&img) && c.same_shape(&img));
        }
    }
}

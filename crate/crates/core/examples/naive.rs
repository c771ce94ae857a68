//! Blur, pixelate and mask a synthetic face and report how much of it survives.
//!
//! Run with `cargo run --example naive`.

use fdeid::metrics::{psnr, ssim};
use fdeid::naive::{blur, mask, pixelate, BlurParams, MaskParams, MaskType, PixelateParams};
use fdeid::Image;

fn face(size: usize) -> Image {
    let c = size as f64 / 2.0;
    Image::from_fn(size, size, 3, |x, y, ch| {
        let (dx, dy) = (x as f64 - c, y as f64 - c);
        let skin = if (dx / 40.0).powi(2) + (dy / 50.0).powi(2) < 1.0 { 0.75 } else { 0.2 };
        let eyes = ((dx.abs() - 18.0).powi(2) + (dy + 12.0).powi(2) < 36.0) as u8 as f64;
        skin - 0.5 * eyes + 0.05 * ch as f64
    })
}

fn main() -> fdeid::Result<()> {
    let original = face(112);
    let outputs = [
        ("blur sigma=10", blur(&original, &BlurParams::with_sigma(10.0))?),
        ("blur k=51 (auto sigma)", blur(&original, &BlurParams::default())?),
        (
            "pixelate 8px",
            pixelate(
                &original,
                &PixelateParams {
                    block_size: 8,
                    ..Default::default()
                },
            )?,
        ),
        ("pixelate 16px", pixelate(&original, &PixelateParams::default())?),
        ("black mask", mask(&original, &MaskParams::of_type(MaskType::Black), 0)?),
        ("random colour mask", mask(&original, &MaskParams::of_type(MaskType::RandomColor), 42)?),
    ];
    println!("{:<24} {:>8} {:>8}", "method", "PSNR dB", "SSIM");
    for (name, out) in &outputs {
        println!("{name:<24} {:>8.2} {:>8.4}", psnr(&original, out)?, ssim(&original, out)?);
    }
    Ok(())
}

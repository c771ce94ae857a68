//! Sequential and parallel ensembles, and attribute-guided selection from the
//! built-in method profiles.
//!
//! Run with `cargo run --example ensemble`.

use std::sync::Arc;

use fdeid::ensemble::{configure_attribute_guided, run_parallel, run_sequential, Attribute, ProfileStore};
use fdeid::method::Deidentifier;
use fdeid::metrics::psnr;
use fdeid::naive::{blur, pixelate, BlurParams, PixelateParams};
use fdeid::Image;

fn main() -> fdeid::Result<()> {
    let face = Image::from_fn(64, 64, 3, |x, y, c| ((x * 7 + y * 3 + c * 11) % 64) as f64 / 64.0);
    let soft: Arc<dyn Deidentifier> = Arc::new(|f: &Image, _: u64| blur(f, &BlurParams::new(9, 3.0)));
    let blocky: Arc<dyn Deidentifier> = Arc::new(|f: &Image, _: u64| pixelate(f, &PixelateParams::default()));

    let seq = run_sequential(&face, &[soft.clone(), blocky.clone()], 0)?;
    let par = run_parallel(&face, &[soft, blocky], &[0.7, 0.3], 0)?;
    println!("sequential blur -> pixelate: PSNR {:.2} dB", psnr(&face, &seq)?);
    println!("parallel 0.7 blur + 0.3 pixelate: PSNR {:.2} dB", psnr(&face, &par)?);

    let store = ProfileStore::builtin();
    let cases: [(&[Attribute], &str); 3] = [
        (&[Attribute::Gender, Attribute::Expression], "gender, expression"),
        (&[Attribute::Landmark], "landmarks"),
        (&[], "nothing"),
    ];
    for (preserve, label) in cases {
        let spec = configure_attribute_guided(preserve, &[Attribute::Identity], &store)?;
        let members: Vec<String> = spec.members.iter().map(|m| m.label()).collect();
        let weights: Vec<String> = spec.weights.iter().map(|w| format!("{w:.3}")).collect();
        println!("preserve {label}: {} with weights [{}]", members.join(" + "), weights.join(", "));
    }
    Ok(())
}

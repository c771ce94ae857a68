//! k-Same over a gallery of synthetic faces: the average, the closest
//! representative and the furthest of the k nearest.
//!
//! Run with `cargo run --example ksame`.

use fdeid::ksame::{k_same, knn_pixel, Gallery, KSameParams, KSameVariant};
use fdeid::metrics::psnr;
use fdeid::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_face(rng: &mut ChaCha8Rng, size: usize) -> Image {
    let (tone, tilt): (f64, f64) = (rng.gen_range(0.3..0.8), rng.gen_range(-0.004..0.004));
    Image::from_fn(size, size, 3, |x, y, c| {
        tone + tilt * (x as f64 - y as f64) + 0.03 * c as f64 + rng.gen_range(-0.02..0.02)
    })
}

fn main() -> fdeid::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let gallery = Gallery::from_images((0..200).map(|_| random_face(&mut rng, 32)).collect())?;
    let probe = random_face(&mut rng, 32);

    let nearest = knn_pixel(&probe, &gallery, 5)?;
    println!("5 nearest gallery faces:");
    for n in &nearest {
        println!("  #{:<4} L2 distance {:.3}", n.index, n.distance);
    }

    for k in [1, 5, 10] {
        for variant in [KSameVariant::Average, KSameVariant::Select, KSameVariant::Furthest] {
            let out = k_same(&probe, &gallery, &KSameParams::new(k, variant))?;
            println!("k={k:<3} {variant:<9?} PSNR to probe {:.2} dB", psnr(&probe, &out)?);
        }
    }
    Ok(())
}

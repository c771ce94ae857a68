//! Runs every attack against the analytic toy embedder and reports how far
//! each pushes the face away from its own identity.
//!
//! Run with `cargo run --release --example adversarial`.

use fdeid::adv::{perturbation_norms, run_attack, AttackKind, AttackParams, GradientOracle, ToyEmbedder};
use fdeid::metrics::ssim;
use fdeid::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> fdeid::Result<()> {
    let oracle = ToyEmbedder::new(0, 128)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let face = Image::new(64, 64, 3, (0..64 * 64 * 3).map(|_| rng.gen()).collect())?;
    let clean = oracle.embed(&face)?;

    println!("{:<10} {:>10} {:>9} {:>9} {:>7}", "attack", "cos sim", "L-inf", "L2", "SSIM");
    for kind in AttackKind::ALL {
        let params = AttackParams::defaults(kind);
        let outcome = run_attack(kind, &face, &oracle, &params, None)?;
        let sim = oracle.embed(&outcome.image)?.cosine(&clean);
        let (linf, l2, _) = perturbation_norms(&outcome.image, &face);
        println!(
            "{:<10} {sim:>10.4} {:>9.5} {l2:>9.3} {:>7.4}",
            kind.name(),
            linf,
            ssim(&face, &outcome.image)?
        );
    }
    println!("L-inf budgets: 8/255 = {:.5}, 16/255 = {:.5}", 8.0 / 255.0, 16.0 / 255.0);
    Ok(())
}

//! Privacy, quality and utility numbers on synthetic inputs.
//!
//! Run with `cargo run --example metrics`.

use fdeid::embedding::Embedding;
use fdeid::metrics::{calibrate_threshold, fid, privacy_report, utility_report, CalibrationMode, PairSet, PredictionTable};
use fdeid::metrics::UtilityMetric;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn main() -> fdeid::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = 64;

    // Originals and "de-identified" copies that keep a fraction of the identity.
    let original: Vec<Embedding> = (0..50).map(|_| Embedding::new(unit(&mut rng, d))).collect::<Result<_, _>>()?;
    for keep in [0.9, 0.5, 0.1] {
        let deid: Vec<Embedding> = original
            .iter()
            .map(|e| {
                let noise = unit(&mut rng, d);
                Embedding::new(e.values().iter().zip(&noise).map(|(a, n)| keep * a + (1.0 - keep) * 0.15 * n).collect())
            })
            .collect::<Result<_, _>>()?;
        let pairs = PairSet::deid_protocol(&original, &deid, 0)?;
        let far = calibrate_threshold(&pairs, CalibrationMode::Far(0.001))?;
        let acc = calibrate_threshold(&pairs, CalibrationMode::AccuracyOptimal)?;
        let r = privacy_report(&pairs, acc, far)?;
        println!(
            "identity kept {keep:.1}: VA {:5.1}%  TAR@FAR=0.1% {:5.1}%  PSR {:5.1}%",
            r.va, r.tar_at_far, r.psr
        );
    }

    let real: Vec<Vec<f64>> = (0..200).map(|_| unit(&mut rng, 8)).collect();
    let near: Vec<Vec<f64>> = (0..200).map(|_| unit(&mut rng, 8)).collect();
    let far: Vec<Vec<f64>> = (0..200).map(|_| unit(&mut rng, 8).into_iter().map(|v| 2.0 * v + 1.0).collect()).collect();
    println!("FID same distribution {:.3}, shifted and scaled {:.3}", fid(&real, &near)?, fid(&real, &far)?);

    let mut csv = String::from("id,age_pred,age_gt,gender_pred,gender_gt,landmarks_pred,landmarks_gt\n");
    for i in 0..20 {
        let age: f64 = rng.gen_range(18.0..70.0);
        let g = if rng.gen() { "f" } else { "m" };
        let flip = if rng.gen_bool(0.1) { if g == "f" { "m" } else { "f" } } else { g };
        csv.push_str(&format!(
            "p{i},{:.1},{age:.1},{flip},{g},38;52;74;51;56;72;42;92;70;92,38.5;51.5;73.5;51.5;56;71;41;92;70.5;92.5\n",
            age + rng.gen_range(-5.0..5.0)
        ));
    }
    let table = PredictionTable::from_csv_reader(csv.as_bytes())?;
    let metrics = [UtilityMetric::AgeMae, UtilityMetric::GenderAcc, UtilityMetric::LandmarkNme];
    for (name, value) in utility_report(&table, &metrics, (0, 1))? {
        println!("{name}: {value:.4}");
    }
    Ok(())
}

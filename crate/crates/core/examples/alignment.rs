//! Aligns a rotated, scaled face to the canonical 112×112 template, edits the
//! crop and pastes it back with a feathered seam.
//!
//! Run with `cargo run --example alignment`.

use fdeid::geometry::{align_face, reinsert, BlendSpec, Landmarks5, SimilarityTransform};
use fdeid::Image;

fn main() -> fdeid::Result<()> {
    let scene = Image::from_fn(200, 160, 3, |x, y, c| 0.2 + 0.003 * x as f64 + 0.002 * y as f64 + 0.1 * c as f64);
    let template = Landmarks5::template(112);

    // Where the template would land after a 20° turn, 0.8× scale and a shift.
    let pose = SimilarityTransform::from_parts(0.8, 20f64.to_radians(), [60.0, 20.0]);
    let landmarks = template.transformed(&pose);
    println!("detected landmarks: {:?}", landmarks.points.map(|p| [p[0].round(), p[1].round()]));

    let aligned = align_face(&scene, &landmarks, &template, 112)?;
    let t = aligned.transform;
    println!(
        "estimated transform: scale {:.4}, rotation {:.2}°, residual {:.2e}",
        t.scale(),
        t.rotation().to_degrees(),
        t.residual(&landmarks, &template)
    );

    let edited = aligned.face.map(|v| 1.0 - v);
    for feather in [0.0, 8.0] {
        let blend = BlendSpec { feather, inset: 0.0 };
        let out = reinsert(&scene, &edited, &t, &blend)?;
        let changed = out.data().iter().zip(scene.data()).filter(|(a, b)| a != b).count();
        println!("feather {feather}: {changed} samples changed of {}", scene.len());
    }
    Ok(())
}

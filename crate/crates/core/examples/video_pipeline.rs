//! De-identifies a short synthetic clip, running detection on every third
//! frame and reusing that record for the two frames after it.
//!
//! Run with `cargo run --release --example video_pipeline`.

use std::fs;

use fdeid::config::validate_config;
use fdeid::geometry::{Landmarks5, SimilarityTransform};
use fdeid::image::save_image;
use fdeid::pipeline::run_video_job;
use fdeid::Image;

const FRAMES: usize = 12;
const STRIDE: usize = 3;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    fs::create_dir_all(dir.path().join("frames"))?;
    let mut detections = String::new();
    for i in 0..FRAMES {
        let shift = i as f64;
        let frame = Image::from_fn(192, 144, 3, |x, y, c| {
            0.4 + 0.25 * ((x as f64 - shift) * 0.05).sin() + 0.1 * (y as f64 * 0.04).cos() + 0.05 * c as f64
        })
        .quantized();
        save_image(&frame, dir.path().join(format!("frames/f{i:04}.png")))?;
        if i % STRIDE == 0 {
            let pose = SimilarityTransform::from_parts(0.9, 0.0, [40.0 + shift, 15.0]);
            let landmarks = Landmarks5::template(112).transformed(&pose);
            let record = serde_json::json!({"frame": i, "bbox": [35.0 + shift, 10.0, 110.0, 110.0], "landmarks": landmarks.points});
            detections.push_str(&format!("{record}\n"));
        }
    }
    fs::write(dir.path().join("detections.jsonl"), detections)?;
    fs::write(
        dir.path().join("config.yaml"),
        format!(
            "detections: detections.jsonl\noutput_dir: out\nvideo: {{frames: frames, detect_every: {STRIDE}}}\n\
             method: {{name: mask, params: {{mask_type: random_color}}}}\n"
        ),
    )?;

    let config = validate_config(dir.path().join("config.yaml"), &[])?;
    let report = run_video_job(&config, 2)?;
    for record in &report.records {
        println!("{:<6} {:?}", record.id, record.status);
    }
    let written = fs::read_dir(dir.path().join("out/frames"))?.count();
    println!("{written} frames written, {} failed", report.failures().count());
    Ok(())
}

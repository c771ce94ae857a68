//! Writes a small synthetic dataset, runs a blur job over it with two workers
//! and prints the aggregate metrics and the report files.
//!
//! Run with `cargo run --release --example image_pipeline`.

use std::fs;
use std::path::Path;

use fdeid::config::validate_config;
use fdeid::geometry::{Landmarks5, SimilarityTransform};
use fdeid::image::save_image;
use fdeid::pipeline::{emit_report, run_image_job};
use fdeid::Image;

fn scene(i: usize) -> Image {
    let f = 0.03 + 0.01 * i as f64;
    Image::from_fn(160, 160, 3, |x, y, c| 0.5 + 0.3 * (f * x as f64 + 0.7 * c as f64).sin() * (f * y as f64).cos()).quantized()
}

fn write_inputs(dir: &Path, n: usize) -> Result<(), Box<dyn std::error::Error>> {
    fs::create_dir_all(dir.join("images"))?;
    let mut manifest = String::new();
    let mut detections = String::new();
    for i in 0..n {
        let id = format!("face{i:02}");
        save_image(&scene(i), dir.join(format!("images/{id}.png")))?;
        manifest.push_str(&format!("{id}\timages/{id}.png\tperson{}\n", i % 3));
        let pose = SimilarityTransform::from_parts(0.9, 0.1 * i as f64 - 0.2, [30.0, 25.0]);
        let landmarks = Landmarks5::template(112).transformed(&pose);
        let record = serde_json::json!({"id": id, "bbox": [25.0, 20.0, 110.0, 110.0], "landmarks": landmarks.points});
        detections.push_str(&format!("{record}\n"));
    }
    fs::write(dir.join("manifest.tsv"), manifest)?;
    fs::write(dir.join("detections.jsonl"), detections)?;
    fs::write(
        dir.join("config.yaml"),
        "dataset: manifest.tsv\ndetections: detections.jsonl\noutput_dir: out\n\
         method: {name: blur, params: {kernel_size: 31}}\n\
         evaluation: {metrics: [psnr, ssim, privacy]}\n",
    )?;
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    write_inputs(dir.path(), 6)?;

    let config = validate_config(dir.path().join("config.yaml"), &[])?;
    println!("config hash {}", config.hash());
    let report = run_image_job(&config, 2)?;
    for agg in &report.aggregates {
        println!("{}: {} images, {} failed", agg.method, agg.images, agg.failures);
        for (name, value) in &agg.metrics {
            println!("  {name:<12} {value:.4}");
        }
    }
    for file in emit_report(&report, dir.path().join("out"))? {
        println!("wrote {}", file.display());
    }
    Ok(())
}

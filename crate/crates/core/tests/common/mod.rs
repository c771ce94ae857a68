//! Synthetic scenes, datasets and frame sequences shared by the integration tests.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use fdeid::geometry::Landmarks5;
use fdeid::image::save_image;
use fdeid::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SCENE: usize = 192;
pub const CROP: usize = 112;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform noise in `[0, 1]`.
pub fn random_image(rng: &mut impl Rng, w: usize, h: usize, c: usize) -> Image {
    Image::new(w, h, c, (0..w * h * c).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

/// A smooth 8-bit colour scene: a few low-frequency waves over a base colour.
pub fn smooth_scene(seed: u64, w: usize, h: usize) -> Image {
    let mut r = rng(seed);
    let base: [f64; 3] = [r.gen_range(0.3..0.7), r.gen_range(0.3..0.7), r.gen_range(0.3..0.7)];
    let waves: Vec<[f64; 5]> = (0..4)
        .map(|_| {
            [
                r.gen_range(-0.06..0.06),
                r.gen_range(-0.06..0.06),
                r.gen_range(0.0..std::f64::consts::TAU),
                r.gen_range(0.04..0.1),
                r.gen_range(0.5..1.5),
            ]
        })
        .collect();
    Image::from_fn(w, h, 3, |x, y, c| {
        let mut v = base[c];
        for [fx, fy, ph, amp, tint] in &waves {
            let t = if c == 1 { 1.0 } else { *tint };
            v += amp * t * (fx * x as f64 + fy * y as f64 + ph).sin();
        }
        v
    })
    .quantized()
}

/// Where a face sits in a scene.
#[derive(Debug, Clone, Copy)]
pub struct Pose {
    pub center: [f64; 2],
    pub scale: f64,
    pub angle: f64,
}

impl Pose {
    pub fn random(r: &mut impl Rng, w: usize, h: usize) -> Self {
        let scale = r.gen_range(0.7..1.0);
        let margin = 0.75 * CROP as f64 * scale;
        Self {
            center: [
                r.gen_range(margin..w as f64 - margin),
                r.gen_range(margin..h as f64 - margin),
            ],
            scale,
            angle: r.gen_range(-0.3..0.3),
        }
    }

    /// Maps a point of the aligned crop into the scene.
    pub fn to_scene(self, q: [f64; 2]) -> [f64; 2] {
        let c = (CROP as f64 - 1.0) / 2.0;
        let (s, a) = (self.scale, self.angle);
        let (dx, dy) = (q[0] - c, q[1] - c);
        [
            self.center[0] + s * (a.cos() * dx - a.sin() * dy),
            self.center[1] + s * (a.sin() * dx + a.cos() * dy),
        ]
    }

    pub fn landmarks(&self) -> Landmarks5 {
        Landmarks5 {
            points: Landmarks5::template(CROP).points.map(|q| self.to_scene(q)),
        }
    }

    /// Axis-aligned box around the mapped crop square.
    pub fn bbox(&self) -> [f64; 4] {
        let (lo, hi) = (-0.5, CROP as f64 - 0.5);
        let pts = [[lo, lo], [hi, lo], [lo, hi], [hi, hi]].map(|q| self.to_scene(q));
        let x0 = pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let y0 = pts.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let x1 = pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        let y1 = pts.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
        [x0, y0, x1 - x0, y1 - y0]
    }

    pub fn record_json(&self, key: &str) -> String {
        serde_json::json!({
            key_name(key): key_value(key),
            "bbox": self.bbox(),
            "landmarks": self.landmarks().points,
        })
        .to_string()
    }
}

fn key_name(key: &str) -> &'static str {
    if key.parse::<usize>().is_ok() {
        "frame"
    } else {
        "id"
    }
}

fn key_value(key: &str) -> serde_json::Value {
    match key.parse::<usize>() {
        Ok(n) => n.into(),
        Err(_) => key.into(),
    }
}

/// Files of a synthetic image dataset.
pub struct Dataset {
    pub dir: PathBuf,
    pub config: PathBuf,
    pub ids: Vec<String>,
    pub poses: Vec<Pose>,
}

impl Dataset {
    pub fn output(&self) -> PathBuf {
        self.dir.join("out")
    }

    pub fn input(&self, id: &str) -> PathBuf {
        self.dir.join("images").join(format!("{id}.png"))
    }

    pub fn output_image(&self, id: &str) -> PathBuf {
        self.output().join("images").join(format!("{id}.png"))
    }
}

/// Writes `n` scenes with one face each, a manifest, a detection sidecar and
/// `config.yaml` whose body is `extra_yaml` plus the file references.
pub fn write_dataset(dir: &Path, n: usize, seed: u64, extra_yaml: &str) -> Dataset {
    fs::create_dir_all(dir.join("images")).unwrap();
    let mut r = rng(seed);
    let mut manifest = String::new();
    let mut dets = String::new();
    let mut ids = Vec::new();
    let mut poses = Vec::new();
    for i in 0..n {
        let id = format!("img{i:03}");
        let pose = Pose::random(&mut r, SCENE, SCENE);
        save_image(&smooth_scene(seed * 1000 + i as u64, SCENE, SCENE), dir.join(format!("images/{id}.png"))).unwrap();
        manifest.push_str(&format!("{id}\timages/{id}.png\tp{}\n", i % 5));
        dets.push_str(&pose.record_json(&id));
        dets.push('\n');
        ids.push(id);
        poses.push(pose);
    }
    fs::write(dir.join("manifest.tsv"), manifest).unwrap();
    fs::write(dir.join("detections.jsonl"), dets).unwrap();
    let config = dir.join("config.yaml");
    fs::write(
        &config,
        format!("dataset: manifest.tsv\ndetections: detections.jsonl\noutput_dir: out\n{extra_yaml}"),
    )
    .unwrap();
    Dataset {
        dir: dir.to_path_buf(),
        config,
        ids,
        poses,
    }
}

/// Writes `n` frames of one static scene into `dir/frames`, detections for
/// the frames selected by `detected`, and `config.yaml`.
pub fn write_video(dir: &Path, n: usize, seed: u64, detect_every: usize, extra_yaml: &str, detected: impl Fn(usize) -> bool) -> PathBuf {
    fs::create_dir_all(dir.join("frames")).unwrap();
    let mut r = rng(seed);
    let pose = Pose::random(&mut r, SCENE, SCENE);
    let scene = smooth_scene(seed, SCENE, SCENE);
    let mut dets = String::new();
    for i in 0..n {
        save_image(&scene, dir.join(format!("frames/f{i:04}.png"))).unwrap();
        if detected(i) {
            dets.push_str(&pose.record_json(&i.to_string()));
            dets.push('\n');
        }
    }
    fs::write(dir.join("detections.jsonl"), dets).unwrap();
    let config = dir.join("config.yaml");
    fs::write(
        &config,
        format!(
            "detections: detections.jsonl\noutput_dir: out\nvideo:\n  frames: frames\n  detect_every: {detect_every}\n{extra_yaml}"
        ),
    )
    .unwrap();
    config
}

/// Runs the command line in-process and returns `(code, stdout, stderr)`.
pub fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["fdeid"];
    argv.extend_from_slice(args);
    let code = fdeid::cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

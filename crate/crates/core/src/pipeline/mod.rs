//! End-to-end processing: align, de-identify, reinsert, measure.
//!
//! Every image (or video frame) is an independent work item run on a worker
//! pool. A failing item is recorded in the report and the batch carries on;
//! configuration and input-listing problems abort the batch.
//!
//! The seed for an item is derived from the global `rng_seed` and the item id
//! (the frame file stem for video), so an image yields the same output
//! whichever job processes it.

pub mod io;
pub mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use crate::adv::GradientOracle;
use crate::config::{ExperimentConfig, MetricKind, ThresholdMode};
use crate::embedding::{Embedding, VectorTable};
use crate::error::{Error, Result};
use crate::geometry::{align_face, estimate_similarity, reinsert, warp_to_template, BlendSpec, Landmarks5};
use crate::image::{load_image, save_image, Image};
use crate::method::{mix_seed, Deidentifier};
use crate::metrics::{
    calibrate_threshold, fid, privacy_report, psnr, ssim, utility_report, CalibrationMode, PairSet, PredictionTable,
    PrivacyReport, Threshold,
};

pub use io::{
    list_frames, parse_detections, read_detections, read_manifest, write_atomic, DetectionRecord, Detections,
    ManifestEntry,
};
pub use report::{emit_report, EvaluationReport, ImageRecord, MethodAggregate, RecordStatus};

/// Subdirectory of the output directory receiving de-identified images.
pub const IMAGES_DIR: &str = "images";
/// Subdirectory of the output directory receiving de-identified frames.
pub const FRAMES_DIR: &str = "frames";

/// Aligned original and de-identified crops of one face.
#[derive(Debug, Clone, PartialEq)]
pub struct FacePair {
    pub original: Image,
    pub deidentified: Image,
}

/// Geometry shared by every face in a job.
#[derive(Debug, Clone)]
pub struct FaceGeometry {
    pub template: Landmarks5,
    pub crop_size: usize,
    pub blend: BlendSpec,
}

impl FaceGeometry {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            template: cfg.align.template()?,
            crop_size: cfg.align.crop_size,
            blend: BlendSpec {
                feather: cfg.align.feather,
                inset: 0.0,
            },
        })
    }
}

/// Seed for the `index`-th face of an item whose seed is `seed`.
fn face_seed(seed: u64, index: usize) -> u64 {
    if index == 0 {
        seed
    } else {
        mix_seed(seed, &(index as u64).to_le_bytes())
    }
}

/// De-identifies every detected face of `img` in record order.
///
/// Faces are aligned from the untouched input, so overlapping detections do
/// not see each other's output.
pub fn deidentify_faces(
    img: &Image,
    detections: &[DetectionRecord],
    deid: &dyn Deidentifier,
    geom: &FaceGeometry,
    seed: u64,
) -> Result<(Image, Vec<FacePair>)> {
    let mut out = img.clone();
    let mut pairs = Vec::with_capacity(detections.len());
    for (k, d) in detections.iter().enumerate() {
        let aligned = align_face(img, &d.landmarks, &geom.template, geom.crop_size)?;
        let face = deid.apply(&aligned.face, face_seed(seed, k))?;
        if face.width() != geom.crop_size || face.height() != geom.crop_size {
            return Err(Error::ShapeMismatch(format!(
                "method returned a {}x{} face for a {}x{} crop",
                face.width(),
                face.height(),
                geom.crop_size,
                geom.crop_size
            )));
        }
        out = reinsert(&out, &face, &aligned.transform, &geom.blend)?;
        pairs.push(FacePair {
            original: aligned.face,
            deidentified: face,
        });
    }
    Ok((out, pairs))
}

/// File-system safe version of an item id.
pub fn output_name(id: &str) -> String {
    let s: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect();
    format!("{s}.png")
}

/// What every worker needs, shared read-only.
struct Job {
    deid: Option<Arc<dyn Deidentifier>>,
    geom: FaceGeometry,
    rng_seed: u64,
    out_dir: PathBuf,
    method: String,
    quality: (bool, bool),
    /// Set when privacy is measured with the surrogate embedder.
    surrogate: Option<Arc<dyn GradientOracle>>,
}

struct ItemOutcome {
    record: ImageRecord,
    embeddings: Vec<(Embedding, Embedding)>,
}

/// One unit of work: an input and the detections to apply to it.
struct Item {
    id: String,
    input: PathBuf,
    /// `None` when the sidecar has no record for this item.
    detections: Option<Vec<DetectionRecord>>,
    output_rel: String,
}

impl Job {
    fn new(cfg: &ExperimentConfig, deid: Option<Arc<dyn Deidentifier>>) -> Result<Self> {
        let m = &cfg.evaluation.metrics;
        let surrogate = if m.contains(&MetricKind::Privacy) && cfg.evaluation.embeddings.is_none() {
            Some(cfg.surrogate.build()?)
        } else {
            None
        };
        Ok(Self {
            deid,
            geom: FaceGeometry::from_config(cfg)?,
            rng_seed: cfg.rng_seed,
            out_dir: cfg.resolve_path(&cfg.output_dir),
            method: cfg.method_label(),
            quality: (m.contains(&MetricKind::Psnr), m.contains(&MetricKind::Ssim)),
            surrogate,
        })
    }

    fn run(&self, item: &Item) -> ItemOutcome {
        let mut record = ImageRecord {
            id: item.id.clone(),
            method: self.method.clone(),
            status: RecordStatus::Ok,
            output: None,
            error: None,
            faces: 0,
            metrics: BTreeMap::new(),
        };
        let result = match &self.deid {
            Some(d) => self.deidentify(item, d.as_ref()),
            None => self.realign(item),
        };
        let pairs = match result {
            Ok(p) => p,
            Err(e) => {
                record.status = RecordStatus::Failed;
                record.error = Some(e.to_string());
                return ItemOutcome {
                    record,
                    embeddings: Vec::new(),
                };
            }
        };
        record.faces = pairs.len();
        record.output = Some(item.output_rel.clone());
        let mut embeddings = Vec::new();
        if let Err(e) = self.measure(&pairs, &mut record, &mut embeddings) {
            record.error = Some(format!("metrics: {e}"));
        }
        ItemOutcome { record, embeddings }
    }

    fn deidentify(&self, item: &Item, deid: &dyn Deidentifier) -> Result<Vec<FacePair>> {
        let dets = item
            .detections
            .as_deref()
            .ok_or_else(|| Error::UndetectedImage(item.id.clone()))?;
        let img = load_image(&item.input)?;
        let seed = mix_seed(self.rng_seed, item.id.as_bytes());
        let (out, pairs) = deidentify_faces(&img, dets, deid, &self.geom, seed)?;
        save_image(&out, self.out_dir.join(&item.output_rel))?;
        Ok(pairs)
    }

    /// Aligns an existing output exactly as its input was aligned.
    fn realign(&self, item: &Item) -> Result<Vec<FacePair>> {
        let dets = item
            .detections
            .as_deref()
            .ok_or_else(|| Error::UndetectedImage(item.id.clone()))?;
        let original = load_image(&item.input)?;
        let output = load_image(self.out_dir.join(&item.output_rel))?;
        if !output.same_shape(&original) {
            return Err(Error::ShapeMismatch(format!(
                "output {} does not match its input's shape",
                item.output_rel
            )));
        }
        dets.iter()
            .map(|d| {
                let t = estimate_similarity(&d.landmarks, &self.geom.template)?;
                Ok(FacePair {
                    original: warp_to_template(&original, &t, self.geom.crop_size)?,
                    deidentified: warp_to_template(&output, &t, self.geom.crop_size)?,
                })
            })
            .collect()
    }

    fn measure(
        &self,
        pairs: &[FacePair],
        record: &mut ImageRecord,
        embeddings: &mut Vec<(Embedding, Embedding)>,
    ) -> Result<()> {
        if pairs.is_empty() {
            return Ok(());
        }
        let n = pairs.len() as f64;
        if self.quality.0 {
            let v = pairs.iter().map(|p| psnr(&p.original, &p.deidentified)).sum::<Result<f64>>()?;
            record.metrics.insert("psnr".into(), v / n);
        }
        if self.quality.1 {
            let v = pairs.iter().map(|p| ssim(&p.original, &p.deidentified)).sum::<Result<f64>>()?;
            record.metrics.insert("ssim".into(), v / n);
        }
        if let Some(o) = &self.surrogate {
            for p in pairs {
                embeddings.push((o.embed(&p.original)?, o.embed(&p.deidentified)?));
            }
        }
        Ok(())
    }
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    Ok(pool.install(f))
}

fn require<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a PathBuf> {
    p.as_ref().ok_or_else(|| Error::Config(format!("`{key}` is required for this command")))
}

fn image_items(cfg: &ExperimentConfig) -> Result<Vec<Item>> {
    let manifest = read_manifest(cfg.resolve_path(require(&cfg.dataset, "dataset")?))?;
    let detections = read_detections(cfg.resolve_path(require(&cfg.detections, "detections")?))?;
    Ok(manifest
        .into_iter()
        .map(|e| Item {
            detections: detections.by_id.get(&e.id).cloned(),
            output_rel: format!("{IMAGES_DIR}/{}", output_name(&e.id)),
            id: e.id,
            input: e.path,
        })
        .collect())
}

/// Frame whose detection frame `i` uses: the latest stride frame at or before it.
pub fn detection_source(i: usize, detect_every: usize) -> usize {
    i / detect_every * detect_every
}

/// Detection source for each of `n` frames.
///
/// Errors with [`Error::MissingDetection`] naming the first stride frame
/// without a record.
pub fn detection_sources(n: usize, detect_every: usize, available: impl Fn(usize) -> bool) -> Result<Vec<usize>> {
    if detect_every == 0 {
        return Err(Error::Config("detect_every must be >= 1".into()));
    }
    (0..n)
        .map(|i| {
            let s = detection_source(i, detect_every);
            if available(s) {
                Ok(s)
            } else {
                Err(Error::MissingDetection(s))
            }
        })
        .collect()
}

fn frame_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn video_items(cfg: &ExperimentConfig) -> Result<Vec<Item>> {
    let video = cfg
        .video
        .as_ref()
        .ok_or_else(|| Error::Config("`video` is required for this command".into()))?;
    let frames = list_frames(cfg.resolve_path(&video.frames))?;
    let detections = read_detections(cfg.resolve_path(require(&cfg.detections, "detections")?))?;
    let sources = detection_sources(frames.len(), video.detect_every, |i| detections.by_frame.contains_key(&i))?;
    Ok(frames
        .into_iter()
        .zip(sources)
        .map(|(path, src)| {
            let id = frame_id(&path);
            Item {
                detections: Some(detections.by_frame[&src].clone()),
                output_rel: format!("{FRAMES_DIR}/{}", output_name(&id)),
                id,
                input: path,
            }
        })
        .collect())
}

fn prepare_dirs(job: &Job, items: &[Item]) -> Result<()> {
    for item in items {
        if let Some(parent) = job.out_dir.join(&item.output_rel).parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

fn run_items(cfg: &ExperimentConfig, job: Job, items: Vec<Item>, jobs: usize) -> Result<EvaluationReport> {
    if job.deid.is_some() {
        prepare_dirs(&job, &items)?;
    }
    let outcomes: Vec<ItemOutcome> = with_pool(jobs, || items.par_iter().map(|it| job.run(it)).collect())?;
    aggregate(cfg, &job.method, outcomes)
}

/// De-identifies every manifest image and writes it under `output_dir/images`.
pub fn run_image_job(cfg: &ExperimentConfig, jobs: usize) -> Result<EvaluationReport> {
    let deid = cfg.build_deidentifier()?;
    let items = image_items(cfg)?;
    run_items(cfg, Job::new(cfg, Some(deid))?, items, jobs)
}

/// De-identifies every frame, reusing stride detections, into `output_dir/frames`.
pub fn run_video_job(cfg: &ExperimentConfig, jobs: usize) -> Result<EvaluationReport> {
    let deid = cfg.build_deidentifier()?;
    let items = video_items(cfg)?;
    run_items(cfg, Job::new(cfg, Some(deid))?, items, jobs)
}

/// Measures outputs a previous image job left in `output_dir/images`.
pub fn run_evaluation(cfg: &ExperimentConfig, jobs: usize) -> Result<EvaluationReport> {
    let items = image_items(cfg)?;
    run_items(cfg, Job::new(cfg, None)?, items, jobs)
}

fn privacy_from_pairs(pairs: &PairSet, threshold: ThresholdMode, far: f64) -> Result<PrivacyReport> {
    let far_t = calibrate_threshold(pairs, CalibrationMode::Far(far))?;
    let decision = match threshold {
        ThresholdMode::Far => far_t,
        ThresholdMode::Accuracy => calibrate_threshold(pairs, CalibrationMode::AccuracyOptimal)?,
        ThresholdMode::Fixed(t) => Threshold::fixed(t)?,
    };
    privacy_report(pairs, decision, far_t)
}

fn ingested_embeddings(cfg: &ExperimentConfig, ids: &[&str]) -> Result<(Vec<Embedding>, Vec<Embedding>)> {
    let files = cfg.evaluation.embeddings.as_ref().expect("checked by caller");
    let orig = VectorTable::read(cfg.resolve_path(&files.original))?;
    let deid = VectorTable::read(cfg.resolve_path(&files.deidentified))?;
    let mut a = Vec::with_capacity(ids.len());
    let mut b = Vec::with_capacity(ids.len());
    for id in ids {
        let (Some(x), Some(y)) = (orig.get(id), deid.get(id)) else {
            return Err(Error::Parse(format!("no embedding for image `{id}` in both embedding files")));
        };
        a.push(Embedding::new(x.to_vec())?);
        b.push(Embedding::new(y.to_vec())?);
    }
    Ok((a, b))
}

fn aggregate(cfg: &ExperimentConfig, method: &str, outcomes: Vec<ItemOutcome>) -> Result<EvaluationReport> {
    let ev = &cfg.evaluation;
    let ok: Vec<&ItemOutcome> = outcomes.iter().filter(|o| o.record.status == RecordStatus::Ok).collect();
    let mut metrics = BTreeMap::new();
    for key in ["psnr", "ssim"] {
        let vals: Vec<f64> = ok.iter().filter_map(|o| o.record.metrics.get(key).copied()).collect();
        if !vals.is_empty() {
            metrics.insert(key.to_string(), vals.iter().sum::<f64>() / vals.len() as f64);
        }
    }
    if ev.metrics.contains(&MetricKind::Privacy) {
        let (orig, deid) = if ev.embeddings.is_some() {
            let ids: Vec<&str> = ok.iter().map(|o| o.record.id.as_str()).collect();
            ingested_embeddings(cfg, &ids)?
        } else {
            ok.iter().flat_map(|o| o.embeddings.iter().cloned()).unzip()
        };
        let pairs = PairSet::deid_protocol(&orig, &deid, cfg.rng_seed)?;
        let p = privacy_from_pairs(&pairs, ev.threshold, ev.far)?;
        metrics.insert("va".into(), p.va);
        metrics.insert("tar_at_far".into(), p.tar_at_far);
        metrics.insert("psr".into(), p.psr);
        metrics.insert("threshold".into(), p.threshold.value);
        metrics.insert("far_threshold".into(), p.far_threshold.value);
    }
    if ev.metrics.contains(&MetricKind::Fid) {
        let f = ev.features.as_ref().expect("validated");
        let real = VectorTable::read(cfg.resolve_path(&f.real))?;
        let fake = VectorTable::read(cfg.resolve_path(&f.fake))?;
        metrics.insert("fid".into(), fid(&real.rows, &fake.rows)?);
    }
    if ev.metrics.contains(&MetricKind::Utility) {
        let table = PredictionTable::read(cfg.resolve_path(ev.predictions.as_ref().expect("validated")))?;
        let ocular = (ev.ocular[0], ev.ocular[1]);
        metrics.extend(utility_report(&table, &table.available_metrics(), ocular)?);
    }
    let records: Vec<ImageRecord> = outcomes.into_iter().map(|o| o.record).collect();
    let failures = records.iter().filter(|r| r.status == RecordStatus::Failed).count();
    Ok(EvaluationReport {
        config_hash: cfg.hash(),
        aggregates: vec![MethodAggregate {
            method: method.to_string(),
            images: records.len(),
            failures,
            metrics,
        }],
        records,
    })
}

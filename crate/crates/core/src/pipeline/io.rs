//! Dataset manifests, detection sidecars, frame lists and atomic writes.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Landmarks5;
use crate::image::PixelRect;

/// Landmarks may sit this far outside the box, as a fraction of its size.
pub const BBOX_MARGIN: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub identity: Option<String>,
}

/// Reads `id<TAB>path[<TAB>identity]` lines; relative paths resolve against
/// the manifest's directory. Blank lines and `#` comments are skipped.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 2 || cols.len() > 3 || cols[0].is_empty() || cols[1].is_empty() {
            return Err(Error::Parse(format!(
                "{}:{}: expected `id<TAB>path[<TAB>identity]`",
                path.display(),
                n + 1
            )));
        }
        if !seen.insert(cols[0].to_string()) {
            return Err(Error::Parse(format!("{}:{}: duplicate id `{}`", path.display(), n + 1, cols[0])));
        }
        out.push(ManifestEntry {
            id: cols[0].to_string(),
            path: base.join(cols[1]),
            identity: cols.get(2).filter(|s| !s.is_empty()).map(|s| s.to_string()),
        });
    }
    Ok(out)
}

fn one() -> f64 {
    1.0
}

/// One detected face, keyed by image id or by frame index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<usize>,
    /// `[x0, y0, width, height]` in pixels.
    pub bbox: [f64; 4],
    pub landmarks: Landmarks5,
    #[serde(default = "one")]
    pub confidence: f64,
}

impl DetectionRecord {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_none() && self.frame.is_none() {
            return Err(Error::Detection("record has neither `id` nor `frame`".into()));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::Detection(format!("confidence {} outside [0, 1]", self.confidence)));
        }
        let [x, y, w, h] = self.bbox;
        if [x, y, w, h].iter().any(|v| !v.is_finite()) || w <= 0.0 || h <= 0.0 {
            return Err(Error::Detection(format!("bad bbox {:?}", self.bbox)));
        }
        self.landmarks
            .validate()
            .map_err(|e| Error::Detection(e.to_string()))?;
        let (cx, cy) = (x + w / 2.0, y + h / 2.0);
        let (hw, hh) = ((1.0 + BBOX_MARGIN) * w / 2.0, (1.0 + BBOX_MARGIN) * h / 2.0);
        for p in &self.landmarks.points {
            if (p[0] - cx).abs() > hw || (p[1] - cy).abs() > hh {
                return Err(Error::Detection(format!(
                    "landmark ({}, {}) lies outside bbox {:?} enlarged by {}%",
                    p[0],
                    p[1],
                    self.bbox,
                    BBOX_MARGIN * 100.0
                )));
            }
        }
        Ok(())
    }

    /// The box rounded outward to whole pixels, without clipping.
    pub fn rect(&self) -> PixelRect {
        let [x, y, w, h] = self.bbox;
        let (x0, y0) = (x.floor().max(0.0), y.floor().max(0.0));
        PixelRect::new(
            x0 as usize,
            y0 as usize,
            ((x + w).ceil() - x0).max(1.0) as usize,
            ((y + h).ceil() - y0).max(1.0) as usize,
        )
    }
}

/// Detection records grouped by image id and by frame index, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Detections {
    pub by_id: BTreeMap<String, Vec<DetectionRecord>>,
    pub by_frame: BTreeMap<usize, Vec<DetectionRecord>>,
}

impl Detections {
    pub fn from_records(records: Vec<DetectionRecord>) -> Self {
        let mut d = Self::default();
        for r in records {
            if let Some(f) = r.frame {
                d.by_frame.entry(f).or_default().push(r.clone());
            }
            if let Some(id) = &r.id {
                d.by_id.entry(id.clone()).or_default().push(r);
            }
        }
        d
    }

    pub fn for_id(&self, id: &str) -> Result<&[DetectionRecord]> {
        self.by_id
            .get(id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UndetectedImage(id.to_string()))
    }
}

/// Parses a JSON-lines sidecar; every record is validated.
pub fn parse_detections(text: &str) -> Result<Detections> {
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut de = serde_json::Deserializer::from_str(line);
        let r: DetectionRecord = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let msg = format!("line {}: {}: {}", n + 1, e.path(), e.inner());
            if e.inner().to_string().starts_with("unknown field") {
                Error::UnknownKey(format!("line {}: {}", n + 1, e.path()))
            } else {
                Error::Parse(msg)
            }
        })?;
        r.validate().map_err(|e| Error::Detection(format!("line {}: {e}", n + 1)))?;
        records.push(r);
    }
    Ok(Detections::from_records(records))
}

pub fn read_detections(path: impl AsRef<Path>) -> Result<Detections> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections(&text)
}

fn is_image(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "ppm" | "pgm" | "pnm")
    )
}

/// Frame paths in order: a directory's image files sorted by name, or the
/// non-empty lines of a list file (relative to the list's directory).
pub fn list_frames(source: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let source = source.as_ref();
    if source.is_dir() {
        let mut frames: Vec<PathBuf> = fs::read_dir(source)
            .map_err(|e| Error::io(source, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| is_image(p))
            .collect();
        frames.sort();
        return Ok(frames);
    }
    let text = fs::read_to_string(source).map_err(|e| Error::io(source, e))?;
    let base = source.parent().unwrap_or(Path::new(""));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| base.join(l))
        .collect())
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let name = path
        .file_name()
        .ok_or_else(|| Error::Format(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

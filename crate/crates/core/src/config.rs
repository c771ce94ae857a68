//! Experiment configuration files.
//!
//! Every key is checked: an unknown key anywhere is an error carrying its
//! dotted path, and omitted keys take documented defaults. Relative paths
//! resolve against the directory holding the configuration file.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_yaml::{Mapping, Value};
use sha2::{Digest, Sha256};

use crate::adv::{AttackKind, AttackParams, GradientOracle, ToyEmbedder, DEFAULT_TOY_DIM};
use crate::ensemble::{EnsembleKind, EnsembleSpec};
use crate::error::{Error, Result};
use crate::geometry::{Landmarks5, DEFAULT_CROP_SIZE, DEFAULT_FEATHER};
use crate::method::{from_value_at, BuildContext, Deidentifier, KSameConfig, MethodConfig};
use crate::metrics::privacy::DEFAULT_FAR;
use crate::metrics::utility::DEFAULT_OCULAR;
use crate::naive::{BlurParams, MaskParams, PixelateParams};

/// Environment variable naming the directory searched for relative `--config` paths.
pub const CONFIG_DIR_ENV: &str = "FDEID_CONFIG_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignConfig {
    /// Five template points in crop coordinates; the scaled ArcFace layout when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template: Option<[[f64; 2]; 5]>,
    pub crop_size: usize,
    /// Width of the blending ramp in crop pixels; 0 pastes with a hard edge.
    pub feather: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            template: None,
            crop_size: DEFAULT_CROP_SIZE,
            feather: DEFAULT_FEATHER,
        }
    }
}

impl AlignConfig {
    pub fn template(&self) -> Result<Landmarks5> {
        match self.template {
            Some(points) => Landmarks5::new(points),
            None => Ok(Landmarks5::template(self.crop_size)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateKind {
    Toy,
}

/// The differentiable embedder adversarial methods attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateConfig {
    pub kind: SurrogateKind,
    pub seed: u64,
    pub dim: usize,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            kind: SurrogateKind::Toy,
            seed: 0,
            dim: DEFAULT_TOY_DIM,
        }
    }
}

impl SurrogateConfig {
    pub fn build(&self) -> Result<std::sync::Arc<dyn GradientOracle>> {
        match self.kind {
            SurrogateKind::Toy => Ok(std::sync::Arc::new(ToyEmbedder::new(self.seed, self.dim)?)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Psnr,
    Ssim,
    Privacy,
    Fid,
    Utility,
}

/// How the verification threshold for VA and PSR is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdMode {
    /// Calibrated to the configured false-accept rate on impostor pairs.
    Far,
    /// The threshold maximizing verification accuracy.
    Accuracy,
    Fixed(f64),
}

impl fmt::Display for ThresholdMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdMode::Far => f.write_str("far"),
            ThresholdMode::Accuracy => f.write_str("accuracy"),
            ThresholdMode::Fixed(t) => write!(f, "{t}"),
        }
    }
}

impl Serialize for ThresholdMode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ThresholdMode::Fixed(t) => s.serialize_f64(*t),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for ThresholdMode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(t) if (-1.0..=1.0).contains(&t) => Ok(ThresholdMode::Fixed(t)),
            Raw::Num(t) => Err(serde::de::Error::custom(format!("threshold {t} outside [-1, 1]"))),
            Raw::Text(s) if s == "far" => Ok(ThresholdMode::Far),
            Raw::Text(s) if s == "accuracy" => Ok(ThresholdMode::Accuracy),
            Raw::Text(s) => Err(serde::de::Error::custom(format!(
                "threshold must be `far`, `accuracy` or a number, got `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingFiles {
    /// Recognizer embeddings of the original faces.
    pub original: PathBuf,
    /// Recognizer embeddings of the de-identified faces, keyed by the same ids.
    pub deidentified: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureFiles {
    pub real: PathBuf,
    pub fake: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub metrics: Vec<MetricKind>,
    /// When absent, privacy is measured with the surrogate embedder on aligned crops.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<EmbeddingFiles>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureFiles>,
    /// Downstream prediction CSV for the utility metrics.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictions: Option<PathBuf>,
    pub threshold: ThresholdMode,
    pub far: f64,
    /// Landmark indices whose distance normalizes NME.
    pub ocular: [usize; 2],
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            metrics: vec![MetricKind::Psnr, MetricKind::Ssim],
            embeddings: None,
            features: None,
            predictions: None,
            threshold: ThresholdMode::Far,
            far: DEFAULT_FAR,
            ocular: [DEFAULT_OCULAR.0, DEFAULT_OCULAR.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoConfig {
    /// Directory of frames in name order, or a file listing one frame path per line.
    pub frames: PathBuf,
    #[serde(default = "one")]
    pub detect_every: usize,
}

fn one() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("output")
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    dataset: Option<PathBuf>,
    #[serde(default)]
    detections: Option<PathBuf>,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
    #[serde(default)]
    rng_seed: u64,
    #[serde(default)]
    align: AlignConfig,
    #[serde(default)]
    surrogate: SurrogateConfig,
    #[serde(default)]
    evaluation: EvaluationConfig,
    #[serde(default)]
    video: Option<VideoConfig>,
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Image manifest: `id<TAB>path[<TAB>identity]` per line.
    pub dataset: Option<PathBuf>,
    /// JSON-lines detection sidecar.
    pub detections: Option<PathBuf>,
    pub method: Option<MethodConfig>,
    pub ensemble: Option<EnsembleSpec>,
    pub output_dir: PathBuf,
    pub rng_seed: u64,
    pub align: AlignConfig,
    pub surrogate: SurrogateConfig,
    pub evaluation: EvaluationConfig,
    pub video: Option<VideoConfig>,
    /// Directory relative paths resolve against; not part of the file.
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    /// Parses a configuration tree without touching the filesystem.
    pub fn from_value(value: Value, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut map = match value {
            Value::Mapping(m) => m,
            Value::Null => Mapping::new(),
            other => return Err(Error::Parse(format!("configuration must be a mapping, got {other:?}"))),
        };
        let method = map.remove("method").map(|v| MethodConfig::from_value(v, "method")).transpose()?;
        let ensemble = map.remove("ensemble").map(|v| EnsembleSpec::from_value(v, "ensemble")).transpose()?;
        let raw: RawConfig = from_value_at(Value::Mapping(map), "")?;
        let cfg = Self {
            dataset: raw.dataset,
            detections: raw.detections,
            method,
            ensemble,
            output_dir: raw.output_dir,
            rng_seed: raw.rng_seed,
            align: raw.align,
            surrogate: raw.surrogate,
            evaluation: raw.evaluation,
            video: raw.video,
            base_dir: base_dir.into(),
        };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn from_yaml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        Self::from_value(parse_yaml(text)?, base_dir)
    }

    fn check(&self) -> Result<()> {
        match (&self.method, &self.ensemble) {
            (Some(_), Some(_)) => return Err(Error::Config("give either `method` or `ensemble`, not both".into())),
            (None, None) => return Err(Error::Config("one of `method` or `ensemble` is required".into())),
            (Some(m), None) => m.validate()?,
            (None, Some(e)) => e.validate()?,
        }
        if self.align.crop_size < 8 {
            return Err(Error::Config(format!("align.crop_size must be >= 8, got {}", self.align.crop_size)));
        }
        if !self.align.feather.is_finite() || self.align.feather < 0.0 {
            return Err(Error::Config(format!("align.feather must be >= 0, got {}", self.align.feather)));
        }
        self.align.template()?;
        let far = self.evaluation.far;
        if !(far > 0.0 && far < 1.0) {
            return Err(Error::Config(format!("evaluation.far must lie in (0, 1), got {far}")));
        }
        if self.evaluation.ocular[0] == self.evaluation.ocular[1] {
            return Err(Error::Config("evaluation.ocular must name two different landmarks".into()));
        }
        if self.evaluation.metrics.contains(&MetricKind::Fid) && self.evaluation.features.is_none() {
            return Err(Error::Config("metric `fid` needs `evaluation.features`".into()));
        }
        if self.evaluation.metrics.contains(&MetricKind::Utility) && self.evaluation.predictions.is_none() {
            return Err(Error::Config("metric `utility` needs `evaluation.predictions`".into()));
        }
        if let Some(v) = &self.video {
            if v.detect_every == 0 {
                return Err(Error::Config("video.detect_every must be >= 1".into()));
            }
        }
        Ok(())
    }

    pub fn resolve_path(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    /// Every file the configuration refers to, resolved.
    pub fn referenced_files(&self) -> Vec<PathBuf> {
        let mut out: Vec<PathBuf> = [&self.dataset, &self.detections, &self.evaluation.predictions]
            .into_iter()
            .flatten()
            .map(|p| self.resolve_path(p))
            .collect();
        if let Some(e) = &self.evaluation.embeddings {
            out.extend([&e.original, &e.deidentified].map(|p| self.resolve_path(p)));
        }
        if let Some(f) = &self.evaluation.features {
            out.extend([&f.real, &f.fake].map(|p| self.resolve_path(p)));
        }
        if let Some(v) = &self.video {
            out.push(self.resolve_path(&v.frames));
        }
        let methods: Vec<&MethodConfig> = match (&self.method, &self.ensemble) {
            (Some(m), _) => vec![m],
            (_, Some(e)) => {
                if let Some(p) = &e.profiles {
                    out.push(self.resolve_path(p));
                }
                e.members.iter().collect()
            }
            _ => Vec::new(),
        };
        for m in methods {
            out.extend(m.referenced_files(&self.base_dir));
        }
        out
    }

    /// Errors with [`Error::MissingFile`] on the first referenced path that does not exist.
    pub fn check_files(&self) -> Result<()> {
        match self.referenced_files().into_iter().find(|p| !p.exists()) {
            Some(p) => Err(Error::MissingFile(p)),
            None => Ok(()),
        }
    }

    /// The configuration with every default written out.
    pub fn to_value(&self) -> Value {
        let mut m = Mapping::new();
        let mut put = |k: &str, v: Value| {
            m.insert(k.into(), v);
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| Value::from(p.to_string_lossy().into_owned()));
        if let Some(v) = path(&self.dataset) {
            put("dataset", v);
        }
        if let Some(v) = path(&self.detections) {
            put("detections", v);
        }
        if let Some(me) = &self.method {
            put("method", me.to_value());
        }
        if let Some(e) = &self.ensemble {
            put("ensemble", e.to_value());
        }
        put("output_dir", self.output_dir.to_string_lossy().into_owned().into());
        put("rng_seed", self.rng_seed.into());
        put("align", ser(&self.align));
        put("surrogate", ser(&self.surrogate));
        put("evaluation", ser(&self.evaluation));
        if let Some(v) = &self.video {
            put("video", ser(v));
        }
        Value::Mapping(m)
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(&self.to_value()).expect("configuration serializes")
    }

    /// SHA-256 of the resolved YAML, in lowercase hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_yaml().as_bytes());
        hex::encode(digest)
    }

    /// Builds the configured method or ensemble.
    pub fn build_deidentifier(&self) -> Result<std::sync::Arc<dyn Deidentifier>> {
        let ctx = BuildContext {
            crop_size: self.align.crop_size,
            oracle: self.surrogate.build()?,
            base_dir: self.base_dir.clone(),
        };
        match (&self.method, &self.ensemble) {
            (Some(m), _) => m.build(&ctx),
            (_, Some(e)) => e.build(&ctx),
            _ => Err(Error::Config("one of `method` or `ensemble` is required".into())),
        }
    }

    /// Short human-readable name of the configured method or ensemble.
    pub fn method_label(&self) -> String {
        match (&self.method, &self.ensemble) {
            (Some(m), _) => m.label(),
            (_, Some(e)) => {
                let names: Vec<String> = e.members.iter().map(MethodConfig::label).collect();
                match e.kind {
                    EnsembleKind::Sequential => names.join(" -> "),
                    EnsembleKind::Parallel => names
                        .iter()
                        .zip(&e.weights)
                        .map(|(n, w)| format!("{w}*{n}"))
                        .collect::<Vec<_>>()
                        .join(" + "),
                    EnsembleKind::AttributeGuided => {
                        let list = |a: &[crate::ensemble::Attribute]| {
                            a.iter().map(|a| a.name()).collect::<Vec<_>>().join(",")
                        };
                        format!("attribute_guided(preserve={};suppress={})", list(&e.preserve), list(&e.suppress))
                    }
                }
            }
            _ => String::new(),
        }
    }
}

fn ser<T: Serialize>(v: &T) -> Value {
    serde_yaml::to_value(v).expect("configuration section serializes")
}

pub fn parse_yaml(text: &str) -> Result<Value> {
    serde_yaml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

/// Sets `path` (dotted, with `[i]` for sequence items) to the YAML scalar `raw`.
pub fn apply_override(root: &mut Value, path: &str, raw: &str) -> Result<()> {
    let value: Value = serde_yaml::from_str(raw).map_err(|e| Error::Parse(format!("--set {path}: {e}")))?;
    let mut segments = Vec::new();
    for part in path.split('.') {
        let (key, rest) = part.split_once('[').unwrap_or((part, ""));
        if key.is_empty() && rest.is_empty() {
            return Err(Error::Parse(format!("--set: empty segment in `{path}`")));
        }
        if !key.is_empty() {
            segments.push(Err(key.to_string()));
        }
        for idx in rest.split('[').filter(|s| !s.is_empty()) {
            let n = idx
                .trim_end_matches(']')
                .parse::<usize>()
                .map_err(|_| Error::Parse(format!("--set: bad index in `{path}`")))?;
            segments.push(Ok(n));
        }
    }
    let mut cur = root;
    for seg in segments {
        if cur.is_null() {
            *cur = Value::Mapping(Mapping::new());
        }
        cur = match seg {
            Err(key) => match cur {
                Value::Mapping(m) => m.entry(Value::from(key)).or_insert(Value::Null),
                _ => return Err(Error::Parse(format!("--set {path}: `{key}` is not inside a mapping"))),
            },
            Ok(i) => match cur {
                Value::Sequence(s) if i < s.len() => &mut s[i],
                _ => return Err(Error::Parse(format!("--set {path}: index {i} is out of range"))),
            },
        };
    }
    *cur = value;
    Ok(())
}

/// Splits `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Parse(format!("override `{s}` is not of the form key=value")))?;
    Ok((k.trim().to_string(), v.to_string()))
}

/// Reads, overrides, parses and checks the configuration at `path`.
pub fn validate_config(path: impl AsRef<Path>, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut value = parse_yaml(&text)?;
    for (k, v) in overrides {
        apply_override(&mut value, k, v)?;
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let cfg = ExperimentConfig::from_value(value, base)?;
    cfg.check_files()?;
    Ok(cfg)
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeSet<String>) {
    match v {
        Value::Mapping(m) if !m.is_empty() => {
            for (k, child) in m {
                let key = k.as_str().unwrap_or_default();
                let p = if prefix.is_empty() { key.to_string() } else { format!("{prefix}.{key}") };
                flatten(&p, child, out);
            }
        }
        _ => {
            out.insert(prefix.to_string());
        }
    }
}

/// A configuration that sets every optional section, used to enumerate keys.
fn exhaustive_examples() -> Vec<Value> {
    let path = |s: &str| Some(PathBuf::from(s));
    let base = ExperimentConfig {
        dataset: path("manifest.tsv"),
        detections: path("detections.jsonl"),
        method: None,
        ensemble: None,
        output_dir: default_output_dir(),
        rng_seed: 0,
        align: AlignConfig {
            template: Some(Landmarks5::template(DEFAULT_CROP_SIZE).points),
            ..AlignConfig::default()
        },
        surrogate: SurrogateConfig::default(),
        evaluation: EvaluationConfig {
            embeddings: Some(EmbeddingFiles {
                original: "a".into(),
                deidentified: "b".into(),
            }),
            features: Some(FeatureFiles {
                real: "a".into(),
                fake: "b".into(),
            }),
            predictions: path("p.csv"),
            ..EvaluationConfig::default()
        },
        video: Some(VideoConfig {
            frames: "frames".into(),
            detect_every: 1,
        }),
        base_dir: PathBuf::new(),
    };
    let attack = |kind| MethodConfig::Attack {
        kind,
        params: AttackParams::defaults(kind),
        target_image: path("target.png"),
    };
    let mut methods = vec![
        MethodConfig::Identity,
        MethodConfig::Blur(BlurParams::default()),
        MethodConfig::Pixelate(PixelateParams::default()),
        MethodConfig::Mask(MaskParams::default()),
        MethodConfig::KSame(KSameConfig {
            reference_dataset: path("gallery"),
            ..KSameConfig::default()
        }),
    ];
    methods.extend(AttackKind::ALL.map(attack));
    let mut out: Vec<Value> = methods
        .into_iter()
        .map(|m| {
            ExperimentConfig {
                method: Some(m),
                ..base.clone()
            }
            .to_value()
        })
        .collect();
    let mut ens = EnsembleSpec::attribute_guided(Vec::new(), Vec::new());
    ens.profiles = path("profiles.json");
    let mut v = ExperimentConfig {
        ensemble: Some(ens),
        ..base.clone()
    }
    .to_value();
    let e = v["ensemble"].as_mapping_mut().expect("ensemble is a mapping");
    e.insert("members".into(), Value::Sequence(vec![Value::Null]));
    e.insert("weights".into(), Value::Sequence(vec![Value::Null]));
    out.push(v);
    out
}

/// Every configuration key the validator accepts, as dotted paths.
///
/// Method parameters appear once per method as `method.params.<key>`;
/// ensemble members accept the same keys under `ensemble.members[i]`.
pub fn accepted_keys() -> Vec<String> {
    let mut keys = BTreeSet::new();
    for v in exhaustive_examples() {
        flatten("", &v, &mut keys);
    }
    keys.into_iter().collect()
}

/// Help text listing [`accepted_keys`], grouped per method where they differ.
pub fn keys_help() -> String {
    let mut s = String::from("Configuration keys (dotted paths; override any with --set key=value):\n");
    for k in accepted_keys() {
        s.push_str("  ");
        s.push_str(&k);
        s.push('\n');
    }
    s.push_str("  ensemble.members[i].name, ensemble.members[i].params.*  (as under `method`)\n");
    s.push_str(&format!(
        "Method names: {}\n",
        crate::method::METHOD_NAMES.join(", ")
    ));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(y: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_yaml(y, ".")
    }

    #[test]
    fn minimal_blur_fills_defaults() {
        let c = cfg("dataset: m.tsv\ndetections: d.jsonl\nmethod: {name: blur}\n").unwrap();
        let v = c.to_value();
        assert_eq!(v["method"]["params"]["kernel_size"], Value::from(51));
        assert_eq!(v["method"]["params"]["sigma"], Value::from(0.0));
        assert_eq!(v["align"]["crop_size"], Value::from(112));
        assert_eq!(v["evaluation"]["threshold"], Value::from("far"));
        assert_eq!(ExperimentConfig::from_value(v, ".").unwrap(), c);
    }

    #[test]
    fn unknown_keys_name_their_path() {
        for (y, path) in [
            ("method: {name: blur, params: {kernal_size: 3}}", "method.params.kernal_size"),
            ("method: {name: blur}\nalign: {feathr: 2}", "align.feathr"),
            ("method: {name: blur}\nevaluaton: {}", "evaluaton"),
            ("method: {name: blur}\nevaluation: {embeddings: {original: a, deidentified: b, x: 1}}", "evaluation.embeddings.x"),
        ] {
            match cfg(y) {
                Err(Error::UnknownKey(p)) => assert_eq!(p, path),
                other => panic!("{y}: {other:?}"),
            }
        }
    }

    #[test]
    fn method_xor_ensemble() {
        assert!(cfg("dataset: m.tsv").is_err());
        let both = "method: {name: blur}\nensemble: {kind: parallel, members: [{name: blur}], weights: [1]}";
        assert!(matches!(cfg(both), Err(Error::Config(_))));
    }

    #[test]
    fn missing_files_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.yaml");
        std::fs::write(&p, "dataset: nowhere.tsv\nmethod: {name: identity}\n").unwrap();
        match validate_config(&p, &[]) {
            Err(Error::MissingFile(f)) => assert!(f.ends_with("nowhere.tsv")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(validate_config(dir.path().join("absent.yaml"), &[]), Err(Error::MissingFile(_))));
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let mut v = parse_yaml("method: {name: blur, params: {kernel_size: 5}}\nensemble_list: [{a: 1}]").unwrap();
        apply_override(&mut v, "method.params.kernel_size", "31").unwrap();
        apply_override(&mut v, "align.feather", "0").unwrap();
        apply_override(&mut v, "ensemble_list[0].a", "two").unwrap();
        assert_eq!(v["method"]["params"]["kernel_size"], Value::from(31));
        assert_eq!(v["align"]["feather"], Value::from(0));
        assert_eq!(v["ensemble_list"][0]["a"], Value::from("two"));
        assert!(apply_override(&mut v, "ensemble_list[3].a", "1").is_err());
        assert!(parse_override("novalue").is_err());
        assert_eq!(parse_override("a.b=c=d").unwrap(), ("a.b".into(), "c=d".into()));
    }

    #[test]
    fn hash_tracks_content() {
        let a = cfg("method: {name: blur}").unwrap();
        let b = cfg("method: {name: blur, params: {kernel_size: 51}}").unwrap();
        let c = cfg("method: {name: blur, params: {kernel_size: 31}}").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn threshold_modes() {
        let t = |s: &str| cfg(&format!("method: {{name: blur}}\nevaluation: {{threshold: {s}}}")).map(|c| c.evaluation.threshold);
        assert_eq!(t("far").unwrap(), ThresholdMode::Far);
        assert_eq!(t("accuracy").unwrap(), ThresholdMode::Accuracy);
        assert_eq!(t("0.25").unwrap(), ThresholdMode::Fixed(0.25));
        assert!(t("best").is_err());
        assert!(t("3").is_err());
    }

    #[test]
    fn every_listed_key_is_accepted() {
        for k in accepted_keys() {
            assert!(!k.is_empty());
        }
        for v in exhaustive_examples() {
            let mut v = v;
            if let Some(e) = v.get_mut("ensemble").and_then(Value::as_mapping_mut) {
                e.remove("members");
                e.remove("weights");
                e.insert("suppress".into(), Value::Sequence(vec!["identity".into()]));
            }
            ExperimentConfig::from_value(v, ".").unwrap();
        }
    }
}

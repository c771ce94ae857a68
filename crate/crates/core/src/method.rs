//! Method configurations and the common de-identifier interface.
//!
//! A method is written in YAML or JSON as `{name: <method>, params: {...}}`.
//! Omitted parameters take the method's defaults; unknown parameters are an
//! error that names the offending key path.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_yaml::{Mapping, Value};
use sha2::{Digest, Sha256};

use crate::adv::{run_attack, AttackKind, AttackParams, GradientOracle};
use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::image::{load_image, resize, Image, ResizeMode};
use crate::ksame::{k_same, Gallery, KSameParams, KSameVariant, SelectionMode, DEFAULT_K};
use crate::naive::{blur, mask, pixelate, BlurParams, MaskParams, PixelateParams};

/// Anything that maps an aligned face to a de-identified face of the same shape.
pub trait Deidentifier: Send + Sync {
    /// `seed` drives every random choice the method makes.
    fn apply(&self, face: &Image, seed: u64) -> Result<Image>;
}

impl<F> Deidentifier for F
where
    F: Fn(&Image, u64) -> Result<Image> + Send + Sync,
{
    fn apply(&self, face: &Image, seed: u64) -> Result<Image> {
        self(face, seed)
    }
}

/// k-Same parameters as written in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KSameConfig {
    pub k: usize,
    pub variant: KSameVariant,
    pub selection_mode: SelectionMode,
    /// Gallery manifest or image directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_dataset: Option<PathBuf>,
    pub exclude_self: bool,
}

impl Default for KSameConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            variant: KSameVariant::Average,
            selection_mode: SelectionMode::Closest,
            reference_dataset: None,
            exclude_self: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MethodConfig {
    Identity,
    Blur(BlurParams),
    Pixelate(PixelateParams),
    Mask(MaskParams),
    KSame(KSameConfig),
    Attack {
        kind: AttackKind,
        params: AttackParams,
        /// Image whose embedding a targeted attack pulls toward.
        target_image: Option<PathBuf>,
    },
}

/// Every method name accepted in configuration files.
pub const METHOD_NAMES: [&str; 10] = [
    "identity", "blur", "pixelate", "mask", "ksame", "pgd", "mifgsm", "tidim", "tipim", "chameleon",
];

fn attack_kind(name: &str) -> Option<AttackKind> {
    Some(match name {
        "pgd" => AttackKind::Pgd,
        "mifgsm" | "mi_fgsm" => AttackKind::MiFgsm,
        "tidim" | "ti_dim" => AttackKind::TiDim,
        "tipim" | "tip_im" => AttackKind::TipIm,
        "chameleon" => AttackKind::Chameleon,
        _ => return None,
    })
}

fn path_error(prefix: &str, e: serde_path_to_error::Error<serde_yaml::Error>) -> Error {
    let inner = e.inner().to_string();
    let sub = e.path().to_string();
    let path = match (prefix.is_empty(), sub == ".") {
        (_, true) => prefix.to_string(),
        (true, false) => sub,
        (false, false) => format!("{prefix}.{sub}"),
    };
    if inner.starts_with("unknown field `") {
        return Error::UnknownKey(path);
    }
    Error::Parse(format!("{path}: {inner}"))
}

/// Deserializes `value` reporting errors under the dotted `prefix`.
pub(crate) fn from_value_at<T: DeserializeOwned>(value: Value, prefix: &str) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| path_error(prefix, e))
}

/// Overlays the keys of `user` onto the serialized `defaults`.
fn with_defaults<T: Serialize + DeserializeOwned>(defaults: &T, user: Value, prefix: &str) -> Result<T> {
    let mut base = match serde_yaml::to_value(defaults).expect("defaults serialize") {
        Value::Mapping(m) => m,
        _ => Mapping::new(),
    };
    match user {
        Value::Null => {}
        Value::Mapping(m) => {
            for (k, v) in m {
                base.insert(k, v);
            }
        }
        other => return Err(Error::Parse(format!("{prefix}: expected a mapping, got {other:?}"))),
    }
    from_value_at(Value::Mapping(base), prefix)
}

impl MethodConfig {
    pub fn name(&self) -> &'static str {
        match self {
            MethodConfig::Identity => "identity",
            MethodConfig::Blur(_) => "blur",
            MethodConfig::Pixelate(_) => "pixelate",
            MethodConfig::Mask(_) => "mask",
            MethodConfig::KSame(_) => "ksame",
            MethodConfig::Attack { kind, .. } => kind.name(),
        }
    }

    /// Human-readable label including the distinguishing parameter.
    pub fn label(&self) -> String {
        match self {
            MethodConfig::Blur(p) => format!("blur(k={},sigma={})", p.kernel_size(), p.effective_sigma()),
            MethodConfig::Pixelate(p) => format!("pixelate({})", p.block_size),
            MethodConfig::Mask(p) => format!("mask({:?})", p.mask_type).to_lowercase(),
            MethodConfig::KSame(c) => format!("ksame-{:?}(k={})", c.variant, c.k).to_lowercase(),
            MethodConfig::Attack { kind, params, .. } => {
                format!("{}(eps={:.4})", kind.name(), params.epsilon)
            }
            MethodConfig::Identity => "identity".into(),
        }
    }

    pub fn attack(kind: AttackKind) -> Self {
        MethodConfig::Attack {
            kind,
            params: AttackParams::defaults(kind),
            target_image: None,
        }
    }

    /// Parses `{name, params}` located at the dotted path `prefix`.
    pub fn from_value(value: Value, prefix: &str) -> Result<Self> {
        let mut map = match value {
            Value::Mapping(m) => m,
            other => return Err(Error::Parse(format!("{prefix}: expected {{name, params}}, got {other:?}"))),
        };
        let name = match map.remove("name") {
            Some(Value::String(s)) => s,
            Some(other) => return Err(Error::Parse(format!("{prefix}.name: expected a string, got {other:?}"))),
            None => return Err(Error::Parse(format!("{prefix}: missing `name`"))),
        };
        let params = map.remove("params").unwrap_or(Value::Null);
        if let Some((k, _)) = map.into_iter().next() {
            let key = k.as_str().map(str::to_string).unwrap_or_else(|| format!("{k:?}"));
            return Err(Error::UnknownKey(format!("{prefix}.{key}")));
        }
        let at = format!("{prefix}.params");
        Ok(match name.as_str() {
            "identity" => {
                if !matches!(&params, Value::Null) && params.as_mapping().is_none_or(|m| !m.is_empty()) {
                    return Err(Error::Parse(format!("{at}: identity takes no parameters")));
                }
                MethodConfig::Identity
            }
            "blur" => MethodConfig::Blur(
                with_defaults::<BlurParams>(&BlurParams { kernel_size: None, sigma: 0.0 }, params, &at)?.resolved(),
            ),
            "pixelate" => MethodConfig::Pixelate(with_defaults(&PixelateParams::default(), params, &at)?),
            "mask" => MethodConfig::Mask(with_defaults(&MaskParams::default(), params, &at)?),
            "ksame" | "k_same" => MethodConfig::KSame(with_defaults(&KSameConfig::default(), params, &at)?),
            other => {
                let kind = attack_kind(other).ok_or_else(|| {
                    Error::Config(format!("{prefix}.name: unknown method `{other}`, expected one of {METHOD_NAMES:?}"))
                })?;
                let mut params = params;
                let target_image = match params.as_mapping_mut().and_then(|m| m.remove("target_image")) {
                    None | Some(Value::Null) => None,
                    Some(v) => Some(from_value_at::<PathBuf>(v, &format!("{at}.target_image"))?),
                };
                MethodConfig::Attack {
                    kind,
                    params: with_defaults(&AttackParams::defaults(kind), params, &at)?,
                    target_image,
                }
            }
        })
    }

    /// `{name, params}` with every default written out.
    pub fn to_value(&self) -> Value {
        let params = match self {
            MethodConfig::Identity => Ok(Value::Mapping(Mapping::new())),
            MethodConfig::Blur(p) => serde_yaml::to_value(p.resolved()),
            MethodConfig::Pixelate(p) => serde_yaml::to_value(p),
            MethodConfig::Mask(p) => serde_yaml::to_value(p),
            MethodConfig::KSame(c) => serde_yaml::to_value(c),
            MethodConfig::Attack { params, target_image, .. } => {
                let mut v = serde_yaml::to_value(params).expect("params serialize");
                if let (Some(t), Some(m)) = (target_image, v.as_mapping_mut()) {
                    m.insert("target_image".into(), t.to_string_lossy().into_owned().into());
                }
                Ok(v)
            }
        }
        .expect("params serialize");
        let mut m = Mapping::new();
        m.insert("name".into(), self.name().into());
        m.insert("params".into(), params);
        Value::Mapping(m)
    }

    /// Checks parameter ranges without touching the filesystem.
    pub fn validate(&self) -> Result<()> {
        match self {
            MethodConfig::Identity => Ok(()),
            MethodConfig::Blur(p) => p.validate(),
            MethodConfig::Pixelate(p) => p.validate(),
            MethodConfig::Mask(p) => p.validate(),
            MethodConfig::KSame(c) => {
                if c.k == 0 {
                    return Err(Error::Config("ksame k must be >= 1".into()));
                }
                if c.reference_dataset.is_none() {
                    return Err(Error::Config("ksame needs `reference_dataset`".into()));
                }
                Ok(())
            }
            MethodConfig::Attack { kind, params, target_image } => {
                params.validate(*kind)?;
                if params.targeted && target_image.is_none() {
                    return Err(Error::Config(format!("targeted {} needs `target_image`", kind.name())));
                }
                Ok(())
            }
        }
    }

    /// Files the method reads, resolved against `base`.
    pub fn referenced_files(&self, base: &Path) -> Vec<PathBuf> {
        match self {
            MethodConfig::KSame(KSameConfig { reference_dataset: Some(p), .. }) => vec![base.join(p)],
            MethodConfig::Attack { target_image: Some(p), .. } => vec![base.join(p)],
            _ => Vec::new(),
        }
    }

    /// Loads galleries and targets and returns a ready de-identifier.
    pub fn build(&self, ctx: &BuildContext) -> Result<Arc<dyn Deidentifier>> {
        self.validate()?;
        Ok(match self {
            MethodConfig::Identity => Arc::new(|f: &Image, _: u64| Ok(f.clone())),
            MethodConfig::Blur(p) => {
                let p = *p;
                Arc::new(move |f: &Image, _: u64| blur(f, &p))
            }
            MethodConfig::Pixelate(p) => {
                let p = *p;
                Arc::new(move |f: &Image, _: u64| pixelate(f, &p))
            }
            MethodConfig::Mask(p) => {
                let p = *p;
                Arc::new(move |f: &Image, seed: u64| mask(f, &p, seed))
            }
            MethodConfig::KSame(c) => {
                let src = ctx.base_dir.join(c.reference_dataset.as_ref().expect("validated"));
                let gallery = Arc::new(Gallery::load(&src, Some(ctx.crop_size))?);
                let base = KSameParams {
                    k: c.k,
                    variant: c.variant,
                    selection_mode: c.selection_mode,
                    rng_seed: 0,
                    exclude_self: c.exclude_self,
                };
                Arc::new(move |f: &Image, seed: u64| {
                    let faces = if f.channels() == gallery.channels() { f.clone() } else { f.to_rgb() };
                    k_same(&faces, &gallery, &KSameParams { rng_seed: seed, ..base })
                })
            }
            MethodConfig::Attack { kind, params, target_image } => {
                let oracle = ctx.oracle.clone();
                let target = match target_image {
                    Some(p) => {
                        let img = load_image(ctx.base_dir.join(p))?;
                        let img = resize(&img, ctx.crop_size, ctx.crop_size, ResizeMode::Bilinear)?;
                        Some(oracle.embed(&img)?)
                    }
                    None => None,
                };
                let (kind, params) = (*kind, params.clone());
                Arc::new(AttackMethod { kind, params, target, oracle })
            }
        })
    }
}

struct AttackMethod {
    kind: AttackKind,
    params: AttackParams,
    target: Option<Embedding>,
    oracle: Arc<dyn GradientOracle>,
}

impl Deidentifier for AttackMethod {
    fn apply(&self, face: &Image, seed: u64) -> Result<Image> {
        let p = AttackParams {
            rng_seed: mix_seed(self.params.rng_seed, &seed.to_le_bytes()),
            ..self.params.clone()
        };
        Ok(run_attack(self.kind, face, self.oracle.as_ref(), &p, self.target.as_ref())?.image)
    }
}

/// What building a method may need from the surrounding experiment.
#[derive(Clone)]
pub struct BuildContext {
    pub crop_size: usize,
    pub oracle: Arc<dyn GradientOracle>,
    /// Relative paths in method parameters resolve against this directory.
    pub base_dir: PathBuf,
}

/// Derives a stable 64-bit seed from a base seed and a byte string.
pub fn mix_seed(base: u64, salt: &[u8]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(salt);
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

impl Serialize for MethodConfig {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_value().serialize(s)
    }
}

impl<'de> Deserialize<'de> for MethodConfig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        MethodConfig::from_value(v, "method").map_err(serde::de::Error::custom)
    }
}

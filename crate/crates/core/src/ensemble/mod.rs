//! Sequential, parallel and attribute-guided combinations of methods.

mod profiles;

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_yaml::{Mapping, Value};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::method::{from_value_at, BuildContext, Deidentifier, MethodConfig};

pub use profiles::{
    configure_attribute_guided, score, Attribute, MethodProfile, ProfileStore, BENCHMARK_ROWS,
    ORIGINAL_UTILITY, PROFILE_STORE_VERSION,
};

/// Tolerance on `Σ wᵢ = 1`.
pub const WEIGHT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    Sequential,
    Parallel,
    AttributeGuided,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub kind: EnsembleKind,
    pub members: Vec<MethodConfig>,
    /// Fusion weights, parallel only.
    pub weights: Vec<f64>,
    pub preserve: Vec<Attribute>,
    pub suppress: Vec<Attribute>,
    /// Profile store for attribute-guided specs; the built-in store when absent.
    pub profiles: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    kind: EnsembleKind,
    #[serde(default)]
    members: Vec<Value>,
    #[serde(default)]
    weights: Vec<f64>,
    #[serde(default)]
    preserve: Vec<String>,
    #[serde(default)]
    suppress: Vec<String>,
    #[serde(default)]
    profiles: Option<PathBuf>,
}

impl EnsembleSpec {
    pub fn sequential(members: Vec<MethodConfig>) -> Self {
        Self {
            kind: EnsembleKind::Sequential,
            members,
            weights: Vec::new(),
            preserve: Vec::new(),
            suppress: Vec::new(),
            profiles: None,
        }
    }

    pub fn parallel(members: Vec<MethodConfig>, weights: Vec<f64>) -> Self {
        Self {
            kind: EnsembleKind::Parallel,
            weights,
            ..Self::sequential(members)
        }
    }

    pub fn attribute_guided(preserve: Vec<Attribute>, suppress: Vec<Attribute>) -> Self {
        Self {
            kind: EnsembleKind::AttributeGuided,
            preserve,
            suppress,
            ..Self::sequential(Vec::new())
        }
    }

    /// Parses an `ensemble:` block located at the dotted path `prefix`.
    pub fn from_value(value: Value, prefix: &str) -> Result<Self> {
        let raw: RawSpec = from_value_at(value, prefix)?;
        let members = raw
            .members
            .into_iter()
            .enumerate()
            .map(|(i, v)| MethodConfig::from_value(v, &format!("{prefix}.members[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        let attrs = |names: Vec<String>| names.iter().map(|n| n.parse()).collect::<Result<Vec<Attribute>>>();
        Ok(Self {
            kind: raw.kind,
            members,
            weights: raw.weights,
            preserve: attrs(raw.preserve)?,
            suppress: attrs(raw.suppress)?,
            profiles: raw.profiles,
        })
    }

    pub fn to_value(&self) -> Value {
        let mut m = Mapping::new();
        m.insert("kind".into(), serde_yaml::to_value(self.kind).expect("kind serializes"));
        if !self.members.is_empty() {
            m.insert("members".into(), Value::Sequence(self.members.iter().map(MethodConfig::to_value).collect()));
        }
        if !self.weights.is_empty() {
            m.insert("weights".into(), self.weights.iter().map(|&w| Value::from(w)).collect());
        }
        let names = |a: &[Attribute]| a.iter().map(|a| Value::from(a.name())).collect::<Value>();
        if self.kind == EnsembleKind::AttributeGuided {
            m.insert("preserve".into(), names(&self.preserve));
            m.insert("suppress".into(), names(&self.suppress));
        }
        if let Some(p) = &self.profiles {
            m.insert("profiles".into(), p.to_string_lossy().into_owned().into());
        }
        Value::Mapping(m)
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            EnsembleKind::Sequential => {
                if self.members.len() < 2 {
                    return Err(Error::Config(format!(
                        "a sequential ensemble needs at least 2 members, got {}",
                        self.members.len()
                    )));
                }
                if !self.weights.is_empty() {
                    return Err(Error::Config("sequential ensembles take no weights".into()));
                }
            }
            EnsembleKind::Parallel => validate_weights(&self.weights, self.members.len())?,
            EnsembleKind::AttributeGuided => {
                validate_attributes(&self.preserve, &self.suppress)?;
                if !self.members.is_empty() || !self.weights.is_empty() {
                    return Err(Error::Config(
                        "attribute-guided ensembles choose their own members and weights".into(),
                    ));
                }
            }
        }
        self.members.iter().try_for_each(MethodConfig::validate)
    }

    /// Attribute-guided specs become the parallel spec they select.
    pub fn resolve(&self, store: &ProfileStore) -> Result<EnsembleSpec> {
        self.validate()?;
        match self.kind {
            EnsembleKind::AttributeGuided => configure_attribute_guided(&self.preserve, &self.suppress, store),
            _ => Ok(self.clone()),
        }
    }

    /// Points every k-Same member lacking a gallery at `gallery`.
    pub fn with_gallery(mut self, gallery: &std::path::Path) -> Self {
        for m in &mut self.members {
            if let MethodConfig::KSame(c) = m {
                c.reference_dataset.get_or_insert_with(|| gallery.to_path_buf());
            }
        }
        self
    }

    /// Builds the runnable ensemble; attribute-guided specs are resolved first.
    pub fn build(&self, ctx: &BuildContext) -> Result<Arc<dyn Deidentifier>> {
        let spec = match self.kind {
            EnsembleKind::AttributeGuided => {
                let store = match &self.profiles {
                    Some(p) => ProfileStore::load(ctx.base_dir.join(p))?,
                    None => ProfileStore::builtin(),
                };
                self.resolve(&store)?
            }
            _ => {
                self.validate()?;
                self.clone()
            }
        };
        let members = spec
            .members
            .iter()
            .map(|m| m.build(ctx))
            .collect::<Result<Vec<_>>>()?;
        Ok(match spec.kind {
            EnsembleKind::Sequential => Arc::new(Sequential(members)),
            _ => Arc::new(Parallel {
                members,
                weights: spec.weights,
            }),
        })
    }
}

impl Serialize for EnsembleSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_value().serialize(s)
    }
}

impl<'de> Deserialize<'de> for EnsembleSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        EnsembleSpec::from_value(Value::deserialize(d)?, "ensemble").map_err(serde::de::Error::custom)
    }
}

fn validate_attributes(preserve: &[Attribute], suppress: &[Attribute]) -> Result<()> {
    let p: BTreeSet<_> = preserve.iter().collect();
    if let Some(a) = suppress.iter().find(|a| p.contains(a)) {
        return Err(Error::Config(format!("attribute `{}` is both preserved and suppressed", a.name())));
    }
    if !suppress.contains(&Attribute::Identity) {
        return Err(Error::Config("`identity` must be in the suppress set".into()));
    }
    Ok(())
}

/// Checks `wᵢ ≥ 0`, `Σ wᵢ = 1` and one weight per member.
pub fn validate_weights(weights: &[f64], members: usize) -> Result<()> {
    if members == 0 {
        return Err(Error::Weight("a parallel ensemble needs at least one member".into()));
    }
    if weights.len() != members {
        return Err(Error::Weight(format!("{} weights for {members} members", weights.len())));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::Weight(format!("weight {w} is not a non-negative number")));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
        return Err(Error::Weight(format!("weights sum to {sum}, expected 1")));
    }
    Ok(())
}

/// `fₙ ∘ … ∘ f₁(face)`. Every stage sees the same seed.
pub fn run_sequential(face: &Image, members: &[Arc<dyn Deidentifier>], seed: u64) -> Result<Image> {
    if members.is_empty() {
        return Err(Error::Config("a sequential ensemble needs at least one member".into()));
    }
    members.iter().enumerate().try_fold(face.clone(), |x, (index, m)| {
        m.apply(&x, seed).map_err(|e| Error::Stage {
            index,
            source: Box::new(e),
        })
    })
}

/// `Σ wᵢ·fᵢ(face)` per sample, clamped to `[0, 1]`.
///
/// Members run concurrently. The products at each sample are summed in
/// ascending order, so the result does not depend on member order.
pub fn run_parallel(
    face: &Image,
    members: &[Arc<dyn Deidentifier>],
    weights: &[f64],
    seed: u64,
) -> Result<Image> {
    validate_weights(weights, members.len())?;
    let outputs = members
        .par_iter()
        .enumerate()
        .map(|(index, m)| {
            m.apply(face, seed).map_err(|e| Error::Stage {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<Image>>>()?;
    if let Some(bad) = outputs.iter().find(|o| !o.same_shape(face)) {
        return Err(Error::ShapeMismatch(format!(
            "member produced {}x{}x{}, input is {}x{}x{}",
            bad.width(),
            bad.height(),
            bad.channels(),
            face.width(),
            face.height(),
            face.channels()
        )));
    }
    let mut terms = vec![0.0; outputs.len()];
    let data = (0..face.len())
        .map(|i| {
            for (t, (o, w)) in terms.iter_mut().zip(outputs.iter().zip(weights)) {
                *t = w * o.data()[i];
            }
            terms.sort_by(f64::total_cmp);
            terms.iter().sum::<f64>()
        })
        .collect();
    Image::new(face.width(), face.height(), face.channels(), data)
}

struct Sequential(Vec<Arc<dyn Deidentifier>>);

impl Deidentifier for Sequential {
    fn apply(&self, face: &Image, seed: u64) -> Result<Image> {
        run_sequential(face, &self.0, seed)
    }
}

struct Parallel {
    members: Vec<Arc<dyn Deidentifier>>,
    weights: Vec<f64>,
}

impl Deidentifier for Parallel {
    fn apply(&self, face: &Image, seed: u64) -> Result<Image> {
        run_parallel(face, &self.members, &self.weights, seed)
    }
}

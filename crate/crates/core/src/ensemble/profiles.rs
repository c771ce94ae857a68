//! Per-method attribute preservation profiles and attribute-guided selection.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{EnsembleKind, EnsembleSpec};
use crate::adv::{AttackKind, AttackParams};
use crate::error::{Error, Result};
use crate::ksame::{KSameVariant, SelectionMode};
use crate::method::{KSameConfig, MethodConfig};
use crate::naive::{BlurParams, MaskParams, MaskType, PixelateParams};

pub const PROFILE_STORE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Age,
    Gender,
    Ethnicity,
    Expression,
    Landmark,
    Rppg,
    Identity,
}

impl Attribute {
    /// The six utility attributes carried by every profile.
    pub const UTILITY: [Attribute; 6] = [
        Attribute::Age,
        Attribute::Gender,
        Attribute::Ethnicity,
        Attribute::Expression,
        Attribute::Landmark,
        Attribute::Rppg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Age => "age",
            Attribute::Gender => "gender",
            Attribute::Ethnicity => "ethnicity",
            Attribute::Expression => "expression",
            Attribute::Landmark => "landmark",
            Attribute::Rppg => "rppg",
            Attribute::Identity => "identity",
        }
    }
}

impl FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "age" => Attribute::Age,
            "gender" => Attribute::Gender,
            "ethnicity" => Attribute::Ethnicity,
            "expression" | "expr" => Attribute::Expression,
            "landmark" | "landmarks" => Attribute::Landmark,
            "rppg" => Attribute::Rppg,
            "identity" => Attribute::Identity,
            _ => return Err(Error::UnknownAttribute(s.to_string())),
        })
    }
}

/// How well one method preserves each attribute, all in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodProfile {
    /// Unique key; ties in ranking are broken by it.
    pub name: String,
    pub method: MethodConfig,
    /// Protection success rate over 100.
    pub privacy: f64,
    pub attributes: BTreeMap<Attribute, f64>,
}

impl MethodProfile {
    /// Preservation of `a`; identity is preserved to the extent it is not protected.
    pub fn get(&self, a: Attribute) -> f64 {
        match a {
            Attribute::Identity => 1.0 - self.privacy,
            _ => self.attributes[&a],
        }
    }

    fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(self.privacy) {
            return Err(Error::Config(format!("profile `{}`: privacy {} outside [0,1]", self.name, self.privacy)));
        }
        for a in Attribute::UTILITY {
            match self.attributes.get(&a) {
                Some(&v) if in_unit(v) => {}
                Some(v) => {
                    return Err(Error::Config(format!("profile `{}`: {} score {v} outside [0,1]", self.name, a.name())))
                }
                None => return Err(Error::Config(format!("profile `{}` lacks `{}`", self.name, a.name()))),
            }
        }
        if self.attributes.contains_key(&Attribute::Identity) {
            return Err(Error::Config(format!(
                "profile `{}`: identity is derived from `privacy`",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileStore {
    pub version: u32,
    pub profiles: Vec<MethodProfile>,
}

/// One benchmark row: privacy success rates on two datasets under three
/// recognizers, then age MAE, gender, ethnicity and expression accuracy,
/// landmark NME and heart-rate MAE.
#[derive(Debug, Clone, Copy)]
pub struct BenchmarkRow {
    pub name: &'static str,
    pub psr: [f64; 6],
    pub utility: [f64; 6],
}

/// Utility of unmodified faces, in the column order of [`BenchmarkRow::utility`].
pub const ORIGINAL_UTILITY: [f64; 6] = [10.18, 94.39, 71.99, 70.54, 0.3601, 0.39];

const fn row(name: &'static str, psr: [f64; 6], utility: [f64; 6]) -> BenchmarkRow {
    BenchmarkRow { name, psr, utility }
}

/// Published benchmark results for the methods this crate implements.
pub const BENCHMARK_ROWS: [BenchmarkRow; 15] = [
    row("blur_sigma10", [0.40, 0.40, 0.73, 5.58, 5.41, 4.18], [12.00, 93.97, 71.35, 54.09, 0.3609, 0.40]),
    row("blur_sigma20", [3.37, 2.53, 3.27, 22.57, 20.19, 16.97], [14.18, 93.55, 69.33, 24.56, 0.3620, 0.40]),
    row("pixelate_8", [29.35, 38.36, 42.25, 45.79, 39.73, 32.88], [15.26, 90.48, 59.76, 14.79, 0.3615, 4.10]),
    row("pixelate_16", [21.74, 10.14, 8.70, 27.27, 27.27, 9.09], [18.93, 70.40, 17.12, 15.55, 0.3772, 4.50]),
    row("black_mask", [57.14, 35.71, 57.14, 6.60, 0.03, 9.94], [18.31, 65.36, 20.26, 14.63, 0.8733, 17.56]),
    row("ksame_k5", [70.73, 56.80, 51.93, 76.65, 65.91, 49.87], [15.91, 70.74, 27.30, 18.01, 0.3751, 24.13]),
    row("ksame_k10", [54.53, 37.37, 33.63, 64.81, 47.63, 30.89], [16.00, 71.90, 27.52, 20.27, 0.3802, 23.40]),
    row("ksame_select_k5", [94.73, 93.73, 92.80, 94.13, 93.10, 90.29], [17.64, 60.22, 21.03, 15.87, 0.3923, 31.11]),
    row("ksame_select_k10", [95.57, 94.63, 93.30, 94.86, 93.96, 91.53], [17.81, 59.16, 20.49, 15.55, 0.3973, 32.56]),
    row("ksame_furthest_k10", [95.30, 94.37, 93.33, 95.10, 93.76, 91.16], [18.38, 56.43, 20.39, 15.35, 0.3974, 28.37]),
    row("mifgsm", [16.47, 5.80, 1.90, 12.55, 6.87, 4.47], [10.29, 91.93, 66.16, 69.26, 0.3601, 1.70]),
    row("pgd", [7.70, 2.07, 0.83, 6.61, 4.24, 2.90], [10.04, 93.31, 69.44, 69.91, 0.3599, 1.65]),
    row("tidim", [23.00, 12.37, 5.10, 25.90, 17.39, 10.05], [10.91, 88.91, 61.05, 68.70, 0.3628, 5.37]),
    row("tipim", [22.77, 12.80, 4.67, 24.53, 16.86, 9.65], [10.95, 88.64, 61.59, 68.90, 0.3630, 3.60]),
    row("chameleon", [6.63, 1.53, 0.40, 5.94, 3.30, 2.13], [9.95, 93.25, 70.19, 70.30, 0.3599, 1.96]),
];

/// The configuration a benchmark row was produced with.
fn benchmark_method(name: &str) -> MethodConfig {
    let ksame = |k, variant| {
        MethodConfig::KSame(KSameConfig {
            k,
            variant,
            selection_mode: SelectionMode::Closest,
            ..KSameConfig::default()
        })
    };
    let attack = |kind| MethodConfig::Attack {
        kind,
        params: AttackParams {
            epsilon: 8.0 / 255.0,
            num_iter: 20,
            ..AttackParams::defaults(kind)
        },
        target_image: None,
    };
    match name {
        "blur_sigma10" => MethodConfig::Blur(BlurParams::with_sigma(10.0).resolved()),
        "blur_sigma20" => MethodConfig::Blur(BlurParams::with_sigma(20.0).resolved()),
        "pixelate_8" => MethodConfig::Pixelate(PixelateParams { block_size: 8, ..Default::default() }),
        "pixelate_16" => MethodConfig::Pixelate(PixelateParams { block_size: 16, ..Default::default() }),
        "black_mask" => MethodConfig::Mask(MaskParams::of_type(MaskType::Black)),
        "ksame_k5" => ksame(5, KSameVariant::Average),
        "ksame_k10" => ksame(10, KSameVariant::Average),
        "ksame_select_k5" => ksame(5, KSameVariant::Select),
        "ksame_select_k10" => ksame(10, KSameVariant::Select),
        "ksame_furthest_k10" => ksame(10, KSameVariant::Furthest),
        "mifgsm" => attack(AttackKind::MiFgsm),
        "pgd" => attack(AttackKind::Pgd),
        "tidim" => attack(AttackKind::TiDim),
        "tipim" => attack(AttackKind::TipIm),
        "chameleon" => attack(AttackKind::Chameleon),
        other => unreachable!("no benchmark method `{other}`"),
    }
}

impl BenchmarkRow {
    /// Errors keep `base/method`, accuracies keep `method/base`, both capped at 1.
    pub fn profile(&self) -> MethodProfile {
        let b = ORIGINAL_UTILITY;
        let u = self.utility;
        let lower_better = |i: usize| (b[i] / u[i]).min(1.0);
        let higher_better = |i: usize| (u[i] / b[i]).min(1.0);
        let attributes = BTreeMap::from([
            (Attribute::Age, lower_better(0)),
            (Attribute::Gender, higher_better(1)),
            (Attribute::Ethnicity, higher_better(2)),
            (Attribute::Expression, higher_better(3)),
            (Attribute::Landmark, lower_better(4)),
            (Attribute::Rppg, lower_better(5)),
        ]);
        MethodProfile {
            name: self.name.to_string(),
            method: benchmark_method(self.name),
            privacy: self.psr.iter().sum::<f64>() / 6.0 / 100.0,
            attributes,
        }
    }
}

impl ProfileStore {
    /// Profiles derived from [`BENCHMARK_ROWS`].
    pub fn builtin() -> Self {
        Self {
            version: PROFILE_STORE_VERSION,
            profiles: BENCHMARK_ROWS.iter().map(BenchmarkRow::profile).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != PROFILE_STORE_VERSION {
            return Err(Error::Config(format!(
                "profile store version {} is not supported (expected {PROFILE_STORE_VERSION})",
                self.version
            )));
        }
        if self.profiles.is_empty() {
            return Err(Error::Config("profile store is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for p in &self.profiles {
            if !seen.insert(&p.name) {
                return Err(Error::Config(format!("duplicate profile `{}`", p.name)));
            }
            p.validate()?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        let store: Self = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let inner = e.inner().to_string();
            if inner.starts_with("unknown field") {
                Error::UnknownKey(e.path().to_string())
            } else {
                Error::Parse(format!("{}: {inner}", e.path()))
            }
        })?;
        store.validate()?;
        Ok(store)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile store serializes")
    }

    pub fn get(&self, name: &str) -> Option<&MethodProfile> {
        self.profiles.iter().find(|p| p.name == name)
    }
}

/// `Π_{a∈preserve} p(m,a) · Π_{a∈suppress} (1 − p(m,a))`.
pub fn score(profile: &MethodProfile, preserve: &[Attribute], suppress: &[Attribute]) -> f64 {
    let keep: f64 = preserve.iter().map(|&a| profile.get(a)).product();
    let drop: f64 = suppress.iter().map(|&a| 1.0 - profile.get(a)).product();
    keep * drop
}

/// Parallel ensemble over the two best-scoring methods, weighted by score.
///
/// Ties go to the lexicographically smaller profile name; zero scores are
/// never selected.
pub fn configure_attribute_guided(
    preserve: &[Attribute],
    suppress: &[Attribute],
    store: &ProfileStore,
) -> Result<EnsembleSpec> {
    store.validate()?;
    super::validate_attributes(preserve, suppress)?;
    let mut ranked: Vec<(f64, &MethodProfile)> = store
        .profiles
        .iter()
        .map(|p| (score(p, preserve, suppress), p))
        .filter(|(s, _)| *s > 0.0)
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.name.cmp(&b.1.name)));
    ranked.truncate(2);
    if ranked.is_empty() {
        return Err(Error::NoViableMethod);
    }
    let total: f64 = ranked.iter().map(|(s, _)| s).sum();
    let weights: Vec<f64> = ranked.iter().map(|(s, _)| s / total).collect();
    Ok(EnsembleSpec {
        kind: EnsembleKind::Parallel,
        members: ranked.iter().map(|(_, p)| p.method.clone()).collect(),
        weights,
        preserve: Vec::new(),
        suppress: Vec::new(),
        profiles: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adv::AttackKind;

    fn profile(name: &str, privacy: f64, v: f64) -> MethodProfile {
        MethodProfile {
            name: name.into(),
            method: MethodConfig::Identity,
            privacy,
            attributes: Attribute::UTILITY.iter().map(|&a| (a, v)).collect(),
        }
    }

    fn store(p: Vec<MethodProfile>) -> ProfileStore {
        ProfileStore {
            version: PROFILE_STORE_VERSION,
            profiles: p,
        }
    }

    #[test]
    fn builtin_store_is_valid_and_round_trips() {
        let s = ProfileStore::builtin();
        s.validate().unwrap();
        assert_eq!(s.profiles.len(), 15);
        assert_eq!(ProfileStore::from_json(&s.to_json()).unwrap(), s);
    }

    #[test]
    fn normalization_matches_published_rows() {
        let s = ProfileStore::builtin();
        let pgd = s.get("pgd").unwrap();
        assert!((pgd.privacy - (7.70 + 2.07 + 0.83 + 6.61 + 4.24 + 2.90) / 600.0).abs() < 1e-15);
        // PGD's age error beats the unmodified faces, so it caps at 1.
        assert_eq!(pgd.get(Attribute::Age), 1.0);
        assert_eq!(pgd.get(Attribute::Gender), 93.31 / 94.39);
        let mask = s.get("black_mask").unwrap();
        assert_eq!(mask.get(Attribute::Landmark), 0.3601 / 0.8733);
        assert_eq!(mask.get(Attribute::Rppg), 0.39 / 17.56);
    }

    #[test]
    fn single_method_gets_full_weight() {
        let s = store(vec![profile("only", 0.5, 0.5)]);
        let e = configure_attribute_guided(&[Attribute::Age], &[Attribute::Identity], &s).unwrap();
        assert_eq!(e.weights, vec![1.0]);
        assert_eq!(e.members, vec![MethodConfig::Identity]);
    }

    #[test]
    fn weights_are_proportional() {
        // Scores: 0.8 · (1 − 0) and 0.2 · (1 − 0).
        let s = store(vec![profile("a", 1.0, 0.8), profile("b", 1.0, 0.2), profile("c", 0.0, 0.9)]);
        let e = configure_attribute_guided(&[Attribute::Age], &[Attribute::Identity], &s).unwrap();
        assert_eq!(e.weights, vec![0.8, 0.2]);
    }

    #[test]
    fn ties_break_by_name_and_zero_is_not_viable() {
        let s = store(vec![profile("zeta", 1.0, 0.5), profile("alpha", 1.0, 0.5), profile("mid", 1.0, 0.5)]);
        let e = configure_attribute_guided(&[Attribute::Gender], &[Attribute::Identity], &s).unwrap();
        assert_eq!(e.weights, vec![0.5, 0.5]);
        let z = store(vec![profile("a", 0.0, 0.5), profile("b", 1.0, 0.0)]);
        assert!(matches!(
            configure_attribute_guided(&[Attribute::Age], &[Attribute::Identity], &z),
            Err(Error::NoViableMethod)
        ));
    }

    #[test]
    fn attribute_parsing() {
        assert_eq!("expr".parse::<Attribute>().unwrap(), Attribute::Expression);
        assert_eq!("rPPG".parse::<Attribute>().unwrap(), Attribute::Rppg);
        assert!(matches!("height".parse::<Attribute>(), Err(Error::UnknownAttribute(h)) if h == "height"));
    }

    #[test]
    fn builtin_selection_for_gender_and_expression() {
        let e = configure_attribute_guided(
            &[Attribute::Gender, Attribute::Expression],
            &[Attribute::Identity],
            &ProfileStore::builtin(),
        )
        .unwrap();
        let kinds: Vec<_> = e.members.iter().map(MethodConfig::name).collect();
        assert_eq!(kinds, vec![AttackKind::TiDim.name(), AttackKind::TipIm.name()]);
    }

    #[test]
    fn store_rejects_bad_input() {
        let mut s = ProfileStore::builtin();
        s.version = 2;
        assert!(ProfileStore::from_json(&s.to_json()).is_err());
        let mut s = ProfileStore::builtin();
        s.profiles[0].privacy = 1.5;
        assert!(s.validate().is_err());
        let bad = r#"{"version":1,"profiles":[],"extra":1}"#;
        assert!(matches!(ProfileStore::from_json(bad), Err(Error::UnknownKey(_))));
    }
}

//! Verification-style privacy metrics: VA, TAR at a fixed FAR, and PSR.
//!
//! A pair is *accepted* (judged same identity) when its cosine similarity is
//! at least the threshold.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::error::{Error, Result};

/// Default impostor-acceptance level for TAR.
pub const DEFAULT_FAR: f64 = 0.001;
/// Impostor pairs are capped at this multiple of the genuine count.
pub const IMPOSTOR_CAP_FACTOR: usize = 10;

/// Similarity scores of same-identity and different-identity pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairSet {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

impl PairSet {
    pub fn new(genuine: Vec<f64>, impostor: Vec<f64>) -> Result<Self> {
        if genuine.iter().chain(&impostor).any(|s| !s.is_finite()) {
            return Err(Error::Numerical("non-finite similarity score".into()));
        }
        Ok(Self { genuine, impostor })
    }

    pub fn from_embeddings(
        genuine: &[(Embedding, Embedding)],
        impostor: &[(Embedding, Embedding)],
    ) -> Result<Self> {
        let score = |p: &[(Embedding, Embedding)]| -> Result<Vec<f64>> {
            p.iter()
                .map(|(a, b)| {
                    if a.dim() != b.dim() {
                        return Err(Error::DimensionMismatch(format!("{} vs {}", a.dim(), b.dim())));
                    }
                    Ok(a.cosine(b))
                })
                .collect()
        };
        Self::new(score(genuine)?, score(impostor)?)
    }

    /// Pairs originals with their de-identified counterparts.
    ///
    /// Genuine pairs are `(original[i], deid[i])`. Impostor pairs are
    /// `(original[i], deid[j])` with `i != j`: all of them when there are at
    /// most `10 · n`, otherwise a seeded sample of exactly `10 · n`.
    pub fn deid_protocol(original: &[Embedding], deid: &[Embedding], seed: u64) -> Result<Self> {
        if original.len() != deid.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} originals vs {} de-identified embeddings",
                original.len(),
                deid.len()
            )));
        }
        let n = original.len();
        let genuine: Vec<f64> = original.iter().zip(deid).map(|(a, b)| a.cosine(b)).collect();
        let total = n * n.saturating_sub(1);
        let cap = IMPOSTOR_CAP_FACTOR * n;
        // Index k enumerates ordered pairs (i, j != i): i = k / (n-1), the
        // j-th off-diagonal column otherwise.
        let decode = |k: usize| {
            let i = k / (n - 1);
            let r = k % (n - 1);
            (i, if r >= i { r + 1 } else { r })
        };
        let picks: Vec<usize> = if total <= cap {
            (0..total).collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v = sample(&mut rng, total, cap).into_vec();
            v.sort_unstable();
            v
        };
        let impostor = picks
            .into_iter()
            .map(|k| {
                let (i, j) = decode(k);
                original[i].cosine(&deid[j])
            })
            .collect();
        Self::new(genuine, impostor)
    }

    fn all_scores_sorted(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self.genuine.iter().chain(&self.impostor).copied().collect();
        s.sort_by(f64::total_cmp);
        s.dedup();
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ThresholdProvenance {
    AccuracyOptimal,
    FarCalibrated { far_level: f64 },
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    pub provenance: ThresholdProvenance,
}

impl Threshold {
    pub fn fixed(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::Config(format!("threshold {value} is not finite")));
        }
        Ok(Self {
            value,
            provenance: ThresholdProvenance::Fixed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CalibrationMode {
    AccuracyOptimal,
    Far(f64),
}

/// Elementary threshold intervals `(lo, hi]` between consecutive distinct
/// scores, with the outer bounds capped at ±1.
fn intervals(scores: &[f64]) -> Vec<(f64, f64)> {
    let mut bounds = Vec::with_capacity(scores.len() + 2);
    bounds.push(f64::NEG_INFINITY);
    bounds.extend_from_slice(scores);
    bounds.push(f64::INFINITY);
    bounds.windows(2).map(|w| (w[0], w[1])).collect()
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    let lo_c = if lo.is_finite() { lo } else { (-1.0f64).min(hi) };
    let hi_c = if hi.is_finite() { hi } else { 1.0f64.max(lo) };
    if hi_c > lo_c {
        let m = 0.5 * (lo_c + hi_c);
        if m > lo { m } else { hi_c }
    } else if lo.is_finite() {
        // Degenerate cap (a score at or beyond 1): step just past it.
        lo.next_up()
    } else {
        hi_c
    }
}

fn count_ge(sorted: &[f64], t: f64) -> usize {
    sorted.len() - sorted.partition_point(|&s| s < t)
}

/// Picks a threshold from the pair scores.
///
/// * accuracy-optimal: the midpoint of the lowest maximal run of thresholds
///   that maximize `(TP + TN) / (P + N)`;
/// * far(level): the midpoint of the lowest interval whose impostor
///   acceptance rate is at most `level`, which also maximizes TAR.
pub fn calibrate_threshold(pairs: &PairSet, mode: CalibrationMode) -> Result<Threshold> {
    if pairs.impostor.is_empty() {
        return Err(Error::EmptyPairs("no impostor pairs".into()));
    }
    let mut gen = pairs.genuine.clone();
    let mut imp = pairs.impostor.clone();
    gen.sort_by(f64::total_cmp);
    imp.sort_by(f64::total_cmp);
    let ivs = intervals(&pairs.all_scores_sorted());
    // Every threshold in (lo, hi] accepts exactly the scores >= hi.
    match mode {
        CalibrationMode::AccuracyOptimal => {
            if gen.is_empty() {
                return Err(Error::EmptyPairs("no genuine pairs".into()));
            }
            let correct: Vec<usize> = ivs
                .iter()
                .map(|&(_, hi)| count_ge(&gen, hi) + imp.len() - count_ge(&imp, hi))
                .collect();
            let best = *correct.iter().max().expect("at least one interval");
            let start = correct.iter().position(|&c| c == best).unwrap();
            let end = start + correct[start..].iter().take_while(|&&c| c == best).count() - 1;
            Ok(Threshold {
                value: midpoint(ivs[start].0, ivs[end].1),
                provenance: ThresholdProvenance::AccuracyOptimal,
            })
        }
        CalibrationMode::Far(level) => {
            if !(level > 0.0 && level < 1.0) {
                return Err(Error::Config(format!("FAR level {level} must be in (0, 1)")));
            }
            let n = imp.len() as f64;
            let (lo, hi) = *ivs
                .iter()
                .find(|&&(_, hi)| count_ge(&imp, hi) as f64 / n <= level)
                .expect("the top interval accepts no impostor");
            Ok(Threshold {
                value: midpoint(lo, hi),
                provenance: ThresholdProvenance::FarCalibrated { far_level: level },
            })
        }
    }
}

/// Percentages in `[0, 100]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub va: f64,
    pub tar_at_far: f64,
    pub psr: f64,
    pub threshold: Threshold,
    pub far_threshold: Threshold,
}

/// VA and PSR at `decision`, TAR at `far_threshold`.
pub fn privacy_report(pairs: &PairSet, decision: Threshold, far_threshold: Threshold) -> Result<PrivacyReport> {
    if pairs.genuine.is_empty() {
        return Err(Error::EmptyPairs("no genuine pairs".into()));
    }
    let t = decision.value;
    let g = pairs.genuine.len() as f64;
    let accepted = pairs.genuine.iter().filter(|&&s| s >= t).count();
    let rejected_imp = pairs.impostor.iter().filter(|&&s| s < t).count();
    let tar_hits = pairs.genuine.iter().filter(|&&s| s >= far_threshold.value).count();
    Ok(PrivacyReport {
        va: 100.0 * (accepted + rejected_imp) as f64 / (g + pairs.impostor.len() as f64),
        tar_at_far: 100.0 * tar_hits as f64 / g,
        psr: 100.0 * (pairs.genuine.len() - accepted) as f64 / g,
        threshold: decision,
        far_threshold,
    })
}

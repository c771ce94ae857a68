//! Gradient-based adversarial de-identification.
//!
//! Every attack perturbs an aligned face so that a [`GradientOracle`] no
//! longer matches it to its original embedding (or, when targeted, matches it
//! to a chosen one). The perturbation always stays inside the configured norm
//! ball and the result inside `[0, 1]`.
//!
//! | attack      | step                           | extras                                   |
//! |-------------|--------------------------------|------------------------------------------|
//! | PGD         | sign / L2 / L1-normalized      | random start                             |
//! | MI-FGSM     | sign of momentum               | `decay_factor`                           |
//! | TI-DIM      | sign of momentum               | smoothed gradient, diverse inputs        |
//! | TIP-IM      | sign of momentum               | TI-DIM plus `gamma · (1 − SSIM)`         |
//! | Chameleon   | plain gradient descent         | decaying `lambda_dsim · mean(δ²)` penalty |
//!
//! The iterate with the lowest objective over the trajectory is returned.

pub mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::quality::ssim_with_grad;
use crate::naive::gaussian_kernel;

pub use oracle::{GradientOracle, ToyEmbedder, DEFAULT_TOY_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[serde(alias = "inf")]
    Linf,
    L2,
    L1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Pgd,
    MiFgsm,
    TiDim,
    TipIm,
    Chameleon,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] = [
        AttackKind::Pgd,
        AttackKind::MiFgsm,
        AttackKind::TiDim,
        AttackKind::TipIm,
        AttackKind::Chameleon,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Pgd => "pgd",
            AttackKind::MiFgsm => "mifgsm",
            AttackKind::TiDim => "tidim",
            AttackKind::TipIm => "tipim",
            AttackKind::Chameleon => "chameleon",
        }
    }

    /// Norms the attack accepts.
    pub fn norms(self) -> &'static [Norm] {
        match self {
            AttackKind::Pgd => &[Norm::Linf, Norm::L2, Norm::L1],
            _ => &[Norm::Linf],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackParams {
    pub epsilon: f64,
    pub alpha: f64,
    pub num_iter: usize,
    pub norm: Norm,
    pub decay_factor: f64,
    pub kernel_size: usize,
    pub prob: f64,
    pub gamma: f64,
    pub lambda_dsim: f64,
    pub random_start: bool,
    pub targeted: bool,
    pub rng_seed: u64,
}

impl Default for AttackParams {
    fn default() -> Self {
        Self {
            epsilon: 8.0 / 255.0,
            alpha: 2.0 / 255.0,
            num_iter: 20,
            norm: Norm::Linf,
            decay_factor: 1.0,
            kernel_size: 15,
            prob: 0.7,
            gamma: 10.0,
            lambda_dsim: 1.0,
            random_start: true,
            targeted: false,
            rng_seed: 0,
        }
    }
}

impl AttackParams {
    /// Default parameters of each attack.
    pub fn defaults(kind: AttackKind) -> Self {
        let base = Self::default();
        match kind {
            AttackKind::TipIm => Self {
                epsilon: 16.0 / 255.0,
                num_iter: 100,
                ..base
            },
            AttackKind::Chameleon => Self {
                epsilon: 16.0 / 255.0,
                alpha: 0.001,
                ..base
            },
            _ => base,
        }
    }

    pub fn validate(&self, kind: AttackKind) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.epsilon.is_finite() && (0.0..=1.0).contains(&self.epsilon)) {
            return bad(format!("epsilon {} must lie in [0, 1]", self.epsilon));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad(format!("alpha {} must be positive", self.alpha));
        }
        if !(self.decay_factor.is_finite() && self.decay_factor >= 0.0) {
            return bad(format!("decay_factor {} must be >= 0", self.decay_factor));
        }
        if !(0.0..=1.0).contains(&self.prob) {
            return bad(format!("prob {} must lie in [0, 1]", self.prob));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return bad(format!("gamma {} must be >= 0", self.gamma));
        }
        if !(self.lambda_dsim.is_finite() && self.lambda_dsim >= 0.0) {
            return bad(format!("lambda_dsim {} must be >= 0", self.lambda_dsim));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::InvalidKernel(self.kernel_size));
        }
        if !kind.norms().contains(&self.norm) {
            return bad(format!("{} supports only the linf norm", kind.name()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub image: Image,
    /// Cosine similarity of the result to the reference embedding (the
    /// original's, or the target's when targeted).
    pub similarity: f64,
    /// Minimized objective at the returned iterate.
    pub objective: f64,
    /// Iteration that produced the result; 0 is the starting point.
    pub best_iteration: usize,
}

/// Zero-preserving sign.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Euclidean projection onto the L1 ball by sorting magnitudes.
fn project_l1(delta: &mut [f64], eps: f64) {
    if l1(delta) <= eps {
        return;
    }
    if eps == 0.0 {
        delta.fill(0.0);
        return;
    }
    let mut mags: Vec<f64> = delta.iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &m) in mags.iter().enumerate() {
        cum += m;
        let t = (cum - eps) / (i + 1) as f64;
        if m > t {
            theta = t;
        } else {
            break;
        }
    }
    for v in delta.iter_mut() {
        *v = sign(*v) * (v.abs() - theta).max(0.0);
    }
}

fn project(delta: &mut [f64], norm: Norm, eps: f64) {
    match norm {
        Norm::Linf => delta.iter_mut().for_each(|v| *v = v.clamp(-eps, eps)),
        Norm::L2 => {
            let n = l2(delta);
            if n > eps {
                let s = if n > 0.0 { eps / n } else { 0.0 };
                delta.iter_mut().for_each(|v| *v *= s);
            }
        }
        Norm::L1 => project_l1(delta, eps),
    }
}

/// Uniform sample from the norm ball of radius `eps`.
fn random_in_ball(rng: &mut ChaCha8Rng, n: usize, norm: Norm, eps: f64) -> Vec<f64> {
    match norm {
        Norm::Linf => (0..n).map(|_| eps * (2.0 * rng.gen::<f64>() - 1.0)).collect(),
        Norm::L2 => {
            let g: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
            let norm = l2(&g);
            let r = eps * rng.gen::<f64>().powf(1.0 / n as f64);
            g.into_iter().map(|v| if norm > 0.0 { v * r / norm } else { 0.0 }).collect()
        }
        Norm::L1 => {
            // n + 1 exponentials normalized by their sum give a uniform point
            // of the simplex interior; random signs fill the cross-polytope.
            let e: Vec<f64> = (0..=n).map(|_| Exp1.sample(rng)).collect();
            let total: f64 = e.iter().sum();
            e[..n]
                .iter()
                .map(|v| {
                    let s = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                    s * eps * v / total
                })
                .collect()
        }
    }
}

/// Separable Gaussian smoothing of a gradient with wrap-around borders, so
/// the sum of every channel is preserved.
pub fn smooth_gradient(grad: &[f64], w: usize, h: usize, c: usize, taps: &[f64]) -> Vec<f64> {
    if taps.len() == 1 {
        return grad.iter().map(|g| g * taps[0]).collect();
    }
    let r = (taps.len() / 2) as isize;
    let wrap = |i: isize, len: usize| i.rem_euclid(len as isize) as usize;
    let mut tmp = vec![0.0; grad.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                tmp[(y * w + x) * c + ch] = taps
                    .iter()
                    .enumerate()
                    .map(|(i, t)| t * grad[(y * w + wrap(x as isize + i as isize - r, w)) * c + ch])
                    .sum();
            }
        }
    }
    let mut out = vec![0.0; grad.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out[(y * w + x) * c + ch] = taps
                    .iter()
                    .enumerate()
                    .map(|(i, t)| t * tmp[(wrap(y as isize + i as isize - r, h) * w + x) * c + ch])
                    .sum();
            }
        }
    }
    out
}

/// Translation-invariance kernel: `kernel_size` taps spanning ±3σ.
pub fn ti_kernel(kernel_size: usize) -> Result<Vec<f64>> {
    let sigma = (kernel_size as f64 - 1.0) / 6.0;
    gaussian_kernel(kernel_size, sigma.max(f64::MIN_POSITIVE))
}

/// Bilinear taps `(i0, i1, frac)` mapping `dst` output samples onto `src`.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            (i0, (i0 + 1).min(src - 1), s - i0 as f64)
        })
        .collect()
}

/// Diverse-input transform: bilinear downscale by a random factor in
/// `[0.9, 1]`, then zero padding back to full size at a random offset.
struct DiverseInput {
    w: usize,
    h: usize,
    c: usize,
    ox: usize,
    oy: usize,
    xt: Vec<(usize, usize, f64)>,
    yt: Vec<(usize, usize, f64)>,
}

impl DiverseInput {
    fn sample(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> Self {
        let r = rng.gen_range(0.9..=1.0);
        let nw = ((r * w as f64).floor() as usize).clamp(1, w);
        let nh = ((r * h as f64).floor() as usize).clamp(1, h);
        let ox = rng.gen_range(0..=w - nw);
        let oy = rng.gen_range(0..=h - nh);
        Self {
            w,
            h,
            c,
            ox,
            oy,
            xt: axis_taps(w, nw),
            yt: axis_taps(h, nh),
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let (w, c) = (self.w, self.c);
        let mut out = vec![0.0; x.len()];
        for (j, &(y0, y1, fy)) in self.yt.iter().enumerate() {
            for (i, &(x0, x1, fx)) in self.xt.iter().enumerate() {
                let o = ((self.oy + j) * w + self.ox + i) * c;
                for ch in 0..c {
                    let p = |xx: usize, yy: usize| x[(yy * w + xx) * c + ch];
                    out[o + ch] = (1.0 - fy) * ((1.0 - fx) * p(x0, y0) + fx * p(x1, y0))
                        + fy * ((1.0 - fx) * p(x0, y1) + fx * p(x1, y1));
                }
            }
        }
        out
    }

    fn adjoint(&self, g: &[f64]) -> Vec<f64> {
        let (w, c) = (self.w, self.c);
        let mut out = vec![0.0; self.w * self.h * c];
        for (j, &(y0, y1, fy)) in self.yt.iter().enumerate() {
            for (i, &(x0, x1, fx)) in self.xt.iter().enumerate() {
                let o = ((self.oy + j) * w + self.ox + i) * c;
                for ch in 0..c {
                    let v = g[o + ch];
                    let mut add = |xx: usize, yy: usize, wt: f64| out[(yy * w + xx) * c + ch] += wt * v;
                    add(x0, y0, (1.0 - fy) * (1.0 - fx));
                    add(x1, y0, (1.0 - fy) * fx);
                    add(x0, y1, fy * (1.0 - fx));
                    add(x1, y1, fy * fx);
                }
            }
        }
        out
    }
}

struct Evaluation {
    similarity: f64,
    objective: f64,
    grad_sim: Vec<f64>,
    grad_ssim: Option<Vec<f64>>,
}

struct Problem<'a> {
    face: &'a Image,
    oracle: &'a dyn GradientOracle,
    reference: Embedding,
    /// +1 to push similarity down, -1 to pull it up.
    direction: f64,
    gamma: f64,
}

impl Problem<'_> {
    fn image(&self, data: Vec<f64>) -> Result<Image> {
        Image::new(self.face.width(), self.face.height(), self.face.channels(), data)
    }

    fn evaluate(&self, adv: &Image) -> Result<Evaluation> {
        let (similarity, grad_sim) = self.oracle.sim_and_grad(adv, &self.reference)?;
        let mut objective = self.direction * similarity;
        let mut grad_ssim = None;
        if self.gamma > 0.0 {
            let (s, g) = ssim_with_grad(adv, self.face)?;
            objective += self.gamma * (1.0 - s);
            grad_ssim = Some(g);
        }
        Ok(Evaluation {
            similarity,
            objective,
            grad_sim,
            grad_ssim,
        })
    }

    /// Gradient of the objective from a similarity gradient.
    fn objective_grad(&self, grad_sim: &[f64], grad_ssim: Option<&Vec<f64>>) -> Vec<f64> {
        match grad_ssim {
            Some(gs) => grad_sim
                .iter()
                .zip(gs)
                .map(|(a, b)| self.direction * a - self.gamma * b)
                .collect(),
            None => grad_sim.iter().map(|a| self.direction * a).collect(),
        }
    }
}

struct Tracker {
    best: Option<AttackOutcome>,
}

impl Tracker {
    fn offer(&mut self, img: &Image, eval: &Evaluation, iter: usize) {
        if self.best.as_ref().is_none_or(|b| eval.objective < b.objective) {
            self.best = Some(AttackOutcome {
                image: img.clone(),
                similarity: eval.similarity,
                objective: eval.objective,
                best_iteration: iter,
            });
        }
    }

    fn finish(self) -> AttackOutcome {
        self.best.expect("at least one iterate")
    }
}

fn start_point(p: &AttackParams, x0: &[f64], rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let delta = if p.random_start {
        random_in_ball(rng, x0.len(), p.norm, p.epsilon)
    } else {
        vec![0.0; x0.len()]
    };
    apply(x0, delta, p.norm, p.epsilon)
}

/// `adv = clamp(x0 + delta)`, and `delta` re-derived from the clamped result.
///
/// Rounding in `x0 + delta` can leave the stored change a few ulps outside
/// the ball, so offending samples are pulled toward `x0` until
/// `‖adv − x0‖ ≤ eps` holds exactly.
fn apply(x0: &[f64], delta: Vec<f64>, norm: Norm, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let mut adv: Vec<f64> = x0.iter().zip(&delta).map(|(x, d)| (x + d).clamp(0.0, 1.0)).collect();
    loop {
        let delta: Vec<f64> = adv.iter().zip(x0).map(|(a, x)| a - x).collect();
        let over = match norm {
            Norm::Linf => delta.iter().any(|d| d.abs() > eps),
            Norm::L2 => l2(&delta) > eps,
            Norm::L1 => l1(&delta) > eps,
        };
        if !over {
            return (adv, delta);
        }
        for ((a, x), d) in adv.iter_mut().zip(x0).zip(&delta) {
            *a = match norm {
                Norm::Linf if *d > eps => a.next_down(),
                Norm::Linf if *d < -eps => a.next_up(),
                Norm::Linf => *a,
                _ => x + d * (1.0 - f64::EPSILON * 64.0),
            };
        }
    }
}

fn step_direction(g: &[f64], norm: Norm) -> Vec<f64> {
    let scale = match norm {
        Norm::Linf => return g.iter().map(|&v| sign(v)).collect(),
        Norm::L2 => l2(g),
        Norm::L1 => l1(g),
    };
    if scale > 0.0 {
        g.iter().map(|v| v / scale).collect()
    } else {
        vec![0.0; g.len()]
    }
}

fn sign_family(kind: AttackKind, prob: &Problem, p: &AttackParams) -> Result<AttackOutcome> {
    let face = prob.face;
    let (w, h, c) = (face.width(), face.height(), face.channels());
    let x0 = face.data();
    let mut rng = ChaCha8Rng::seed_from_u64(p.rng_seed);
    let (adv, mut delta) = start_point(p, x0, &mut rng);
    let mut adv = prob.image(adv)?;
    let mut eval = prob.evaluate(&adv)?;

    let momentum_on = kind != AttackKind::Pgd;
    let di_prob = match kind {
        AttackKind::TiDim | AttackKind::TipIm => p.prob,
        _ => 0.0,
    };
    let taps = match kind {
        AttackKind::TiDim | AttackKind::TipIm if p.kernel_size > 1 => Some(ti_kernel(p.kernel_size)?),
        _ => None,
    };
    let mut momentum = vec![0.0; x0.len()];
    let mut tracker = Tracker { best: None };
    if p.num_iter == 0 {
        tracker.offer(&adv, &eval, 0);
        return Ok(tracker.finish());
    }

    for t in 1..=p.num_iter {
        let diverse = if di_prob > 0.0 && rng.gen::<f64>() < di_prob {
            Some(DiverseInput::sample(&mut rng, w, h, c))
        } else {
            None
        };
        let mut g = match &diverse {
            Some(di) => {
                let transformed = prob.image(di.forward(adv.data()))?;
                let gs = prob.oracle.grad_sim(&transformed, &prob.reference)?;
                prob.objective_grad(&di.adjoint(&gs), eval.grad_ssim.as_ref())
            }
            None => prob.objective_grad(&eval.grad_sim, eval.grad_ssim.as_ref()),
        };
        if let Some(taps) = &taps {
            g = smooth_gradient(&g, w, h, c, taps);
        }
        let dir = if momentum_on {
            let n1 = l1(&g);
            let inv = if n1 > 0.0 { 1.0 / n1 } else { 1.0 };
            for (m, gi) in momentum.iter_mut().zip(&g) {
                *m = p.decay_factor * *m + gi * inv;
            }
            step_direction(&momentum, Norm::Linf)
        } else {
            step_direction(&g, p.norm)
        };
        for (d, s) in delta.iter_mut().zip(&dir) {
            *d -= p.alpha * s;
        }
        project(&mut delta, p.norm, p.epsilon);
        let (next, clamped) = apply(x0, delta, p.norm, p.epsilon);
        delta = clamped;
        adv = prob.image(next)?;
        eval = prob.evaluate(&adv)?;
        tracker.offer(&adv, &eval, t);
    }
    Ok(tracker.finish())
}

fn chameleon_run(prob: &Problem, p: &AttackParams) -> Result<AttackOutcome> {
    let x0 = prob.face.data();
    let n = x0.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(p.rng_seed);
    let (adv, mut delta) = start_point(p, x0, &mut rng);
    let mut adv = prob.image(adv)?;
    let mut eval = prob.evaluate(&adv)?;
    let mut tracker = Tracker { best: None };
    if p.num_iter == 0 {
        tracker.offer(&adv, &eval, 0);
        return Ok(tracker.finish());
    }
    for t in 0..p.num_iter {
        let lambda = p.lambda_dsim * (1.0 - t as f64 / p.num_iter as f64);
        for (d, g) in delta.iter_mut().zip(&eval.grad_sim) {
            *d -= p.alpha * (prob.direction * g + lambda * 2.0 * *d / n);
        }
        project(&mut delta, Norm::Linf, p.epsilon);
        let (next, clamped) = apply(x0, delta, Norm::Linf, p.epsilon);
        delta = clamped;
        adv = prob.image(next)?;
        eval = prob.evaluate(&adv)?;
        tracker.offer(&adv, &eval, t + 1);
    }
    Ok(tracker.finish())
}

/// Runs `kind` on `face`. `target` is required exactly when `p.targeted`.
pub fn run_attack(
    kind: AttackKind,
    face: &Image,
    oracle: &dyn GradientOracle,
    p: &AttackParams,
    target: Option<&Embedding>,
) -> Result<AttackOutcome> {
    p.validate(kind)?;
    let (reference, direction) = match (p.targeted, target) {
        (true, Some(t)) => (t.clone(), -1.0),
        (true, None) => return Err(Error::Config("targeted attack needs a target embedding".into())),
        (false, _) => (oracle.embed(face)?, 1.0),
    };
    if reference.dim() != oracle.dim() {
        return Err(Error::DimensionMismatch(format!(
            "target has {} components, oracle produces {}",
            reference.dim(),
            oracle.dim()
        )));
    }
    let prob = Problem {
        face,
        oracle,
        reference,
        direction,
        gamma: if kind == AttackKind::TipIm { p.gamma } else { 0.0 },
    };
    match kind {
        AttackKind::Chameleon => chameleon_run(&prob, p),
        _ => sign_family(kind, &prob, p),
    }
}

pub fn pgd(face: &Image, oracle: &dyn GradientOracle, p: &AttackParams) -> Result<Image> {
    Ok(run_attack(AttackKind::Pgd, face, oracle, p, None)?.image)
}

pub fn mi_fgsm(face: &Image, oracle: &dyn GradientOracle, p: &AttackParams) -> Result<Image> {
    Ok(run_attack(AttackKind::MiFgsm, face, oracle, p, None)?.image)
}

pub fn ti_dim(face: &Image, oracle: &dyn GradientOracle, p: &AttackParams) -> Result<Image> {
    Ok(run_attack(AttackKind::TiDim, face, oracle, p, None)?.image)
}

pub fn tip_im(face: &Image, oracle: &dyn GradientOracle, p: &AttackParams) -> Result<Image> {
    Ok(run_attack(AttackKind::TipIm, face, oracle, p, None)?.image)
}

pub fn chameleon(face: &Image, oracle: &dyn GradientOracle, p: &AttackParams) -> Result<Image> {
    Ok(run_attack(AttackKind::Chameleon, face, oracle, p, None)?.image)
}

/// Largest per-sample change, and L2 / L1 norms of the change.
pub fn perturbation_norms(a: &Image, b: &Image) -> (f64, f64, f64) {
    let d: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    (d.iter().fold(0.0, |m, v| m.max(v.abs())), l2(&d), l1(&d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::quality::ssim;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_face(seed: u64, s: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(s, s, 3, (0..s * s * 3).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    fn quick(kind: AttackKind) -> AttackParams {
        AttackParams {
            num_iter: 5,
            ..AttackParams::defaults(kind)
        }
    }

    fn oracle() -> ToyEmbedder {
        ToyEmbedder::new(1, 32).unwrap()
    }

    #[test]
    fn zero_budget_is_identity() {
        let x = random_face(1, 24);
        for kind in AttackKind::ALL {
            for &norm in kind.norms() {
                let p = AttackParams { epsilon: 0.0, norm, ..quick(kind) };
                let out = run_attack(kind, &x, &oracle(), &p, None).unwrap();
                assert_eq!(out.image, x, "{kind:?} {norm:?}");
            }
        }
    }

    #[test]
    fn no_iterations_is_identity_without_random_start() {
        let x = random_face(2, 24);
        for kind in AttackKind::ALL {
            let p = AttackParams { num_iter: 0, random_start: false, ..quick(kind) };
            let out = run_attack(kind, &x, &oracle(), &p, None).unwrap();
            assert_eq!(out.image, x);
            assert_eq!(out.best_iteration, 0);
        }
    }

    #[test]
    fn outputs_stay_in_ball() {
        let x = random_face(3, 24);
        for kind in AttackKind::ALL {
            for &norm in kind.norms() {
                let eps = match norm {
                    Norm::Linf => 8.0 / 255.0,
                    Norm::L2 => 0.5,
                    Norm::L1 => 1.0,
                };
                let p = AttackParams { epsilon: eps, norm, alpha: eps / 4.0, ..quick(kind) };
                let out = run_attack(kind, &x, &oracle(), &p, None).unwrap();
                let (li, l2n, l1n) = perturbation_norms(&out.image, &x);
                let used = match norm {
                    Norm::Linf => li,
                    Norm::L2 => l2n,
                    Norm::L1 => l1n,
                };
                assert!(used <= eps * (1.0 + 1e-12), "{kind:?} {norm:?}: {used} > {eps}");
                assert!(out.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn momentum_free_mifgsm_is_pgd() {
        let x = random_face(4, 24);
        let base = AttackParams { random_start: false, ..quick(AttackKind::Pgd) };
        let a = pgd(&x, &oracle(), &base).unwrap();
        let b = mi_fgsm(&x, &oracle(), &AttackParams { decay_factor: 0.0, ..base.clone() }).unwrap();
        assert_eq!(a, b);
        let a = pgd(&x, &oracle(), &AttackParams { random_start: true, ..base.clone() }).unwrap();
        let b = mi_fgsm(&x, &oracle(), &AttackParams { decay_factor: 0.0, random_start: true, ..base }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_tidim_is_mifgsm() {
        let x = random_face(5, 24);
        let p = AttackParams { prob: 0.0, kernel_size: 1, ..quick(AttackKind::TiDim) };
        assert_eq!(ti_dim(&x, &oracle(), &p).unwrap(), mi_fgsm(&x, &oracle(), &p).unwrap());
    }

    #[test]
    fn tipim_without_perceptual_term_is_tidim() {
        let x = random_face(6, 24);
        let p = AttackParams { gamma: 0.0, num_iter: 8, ..AttackParams::defaults(AttackKind::TipIm) };
        assert_eq!(tip_im(&x, &oracle(), &p).unwrap(), ti_dim(&x, &oracle(), &p).unwrap());
    }

    #[test]
    fn perceptual_term_raises_fidelity() {
        let mut wins = 0;
        for seed in 0..6 {
            let x = random_face(100 + seed, 24);
            let p = AttackParams { num_iter: 10, rng_seed: seed, ..AttackParams::defaults(AttackKind::TipIm) };
            let with = tip_im(&x, &oracle(), &p).unwrap();
            let without = tip_im(&x, &oracle(), &AttackParams { gamma: 0.0, ..p }).unwrap();
            if ssim(&with, &x).unwrap() >= ssim(&without, &x).unwrap() {
                wins += 1;
            }
        }
        assert!(wins >= 5, "{wins}/6");
    }

    #[test]
    fn chameleon_penalty_shrinks_perturbation() {
        let x = random_face(7, 24);
        let p = AttackParams { num_iter: 1, ..AttackParams::defaults(AttackKind::Chameleon) };
        let strong = chameleon(&x, &oracle(), &AttackParams { lambda_dsim: 1e6, ..p.clone() }).unwrap();
        let none = chameleon(&x, &oracle(), &AttackParams { lambda_dsim: 0.0, ..p }).unwrap();
        assert!(perturbation_norms(&strong, &x).1 < perturbation_norms(&none, &x).1);
    }

    #[test]
    fn best_iterate_is_monotone() {
        let x = random_face(8, 32);
        let o = oracle();
        let run = |n| run_attack(AttackKind::MiFgsm, &x, &o, &AttackParams { num_iter: n, ..quick(AttackKind::MiFgsm) }, None).unwrap();
        let mut prev = f64::INFINITY;
        for n in 1..8 {
            let s = run(n).similarity;
            assert!(s <= prev);
            prev = s;
        }
    }

    #[test]
    fn targeted_moves_toward_target() {
        let x = random_face(9, 32);
        let o = oracle();
        let target = o.embed(&random_face(10, 32)).unwrap();
        let before = o.embed(&x).unwrap().cosine(&target);
        let p = AttackParams { targeted: true, epsilon: 16.0 / 255.0, ..AttackParams::default() };
        let out = run_attack(AttackKind::Pgd, &x, &o, &p, Some(&target)).unwrap();
        assert!(out.similarity > before);
        assert!(matches!(pgd(&x, &o, &p), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_bad_params() {
        let p = AttackParams { norm: Norm::L2, ..AttackParams::default() };
        assert!(p.validate(AttackKind::MiFgsm).is_err());
        assert!(p.validate(AttackKind::Pgd).is_ok());
        let p = AttackParams { kernel_size: 4, ..AttackParams::default() };
        assert!(matches!(p.validate(AttackKind::TiDim), Err(Error::InvalidKernel(4))));
    }

    #[test]
    fn diverse_input_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let (w, h, c) = (rng.gen_range(5..20), rng.gen_range(5..20), 3);
            let di = DiverseInput::sample(&mut rng, w, h, c);
            let x: Vec<f64> = (0..w * h * c).map(|_| rng.gen()).collect();
            let y: Vec<f64> = (0..w * h * c).map(|_| rng.gen()).collect();
            let lhs: f64 = di.forward(&x).iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(di.adjoint(&y)).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
        }
    }

    proptest! {
        #[test]
        fn smoothing_preserves_mean(seed in any::<u64>(), k in 0usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (w, h) = (rng.gen_range(3..12), rng.gen_range(3..12));
            let g: Vec<f64> = (0..w * h * 3).map(|_| rng.gen::<f64>() - 0.5).collect();
            let s = smooth_gradient(&g, w, h, 3, &ti_kernel(2 * k + 1).unwrap());
            let drift = (g.iter().sum::<f64>() - s.iter().sum::<f64>()).abs() / g.len() as f64;
            prop_assert!(drift < 1e-6);
        }

        #[test]
        fn l1_projection_is_closest_point(seed in any::<u64>(), eps in 0.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v: Vec<f64> = (0..8).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let mut p = v.clone();
            project_l1(&mut p, eps);
            prop_assert!(l1(&p) <= eps + 1e-12);
            let dist = |q: &[f64]| q.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            // Random feasible points are never closer.
            for _ in 0..200 {
                let q = random_in_ball(&mut rng, 8, Norm::L1, eps);
                prop_assert!(dist(&p) <= dist(&q) + 1e-12);
            }
        }

        #[test]
        fn attacks_are_deterministic(seed in 0u64..50) {
            let x = random_face(seed, 16);
            let p = AttackParams { num_iter: 3, rng_seed: seed, ..AttackParams::defaults(AttackKind::TiDim) };
            prop_assert_eq!(ti_dim(&x, &oracle(), &p).unwrap(), ti_dim(&x, &oracle(), &p).unwrap());
        }
    }
}

//! Differentiable embedders that attacks can query.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::image::{Image, LUMA_WEIGHTS};

/// An embedding function with the exact gradient of cosine similarity.
///
/// Implementations are shared across worker threads.
pub trait GradientOracle: Send + Sync {
    fn dim(&self) -> usize;

    fn embed(&self, x: &Image) -> Result<Embedding>;

    /// Gradient of `cos(embed(x), target)` with respect to every sample of
    /// `x`, in the layout of `x.data()`.
    fn grad_sim(&self, x: &Image, target: &Embedding) -> Result<Vec<f64>>;

    /// Similarity and gradient together; override when they share work.
    fn sim_and_grad(&self, x: &Image, target: &Embedding) -> Result<(f64, Vec<f64>)> {
        let e = self.embed(x)?;
        Ok((e.cosine(target), self.grad_sim(x, target)?))
    }
}

pub const TOY_GRID: usize = 8;
pub const DEFAULT_TOY_DIM: usize = 128;

/// `embed(x) = normalize(W · pool(luma(x)))`, where `pool` averages luma over
/// an 8×8 grid of cells and `W` is a seeded Gaussian `d × 64` matrix whose rows
/// sum to zero.
#[derive(Debug, Clone)]
pub struct ToyEmbedder {
    seed: u64,
    w: DMatrix<f64>,
}

struct Pooled {
    cells: Vec<f64>,
    counts: Vec<f64>,
    xs: Vec<usize>,
    ys: Vec<usize>,
}

impl ToyEmbedder {
    pub fn new(seed: u64, d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::Config(format!("toy embedder dimension must be >= 2, got {d}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells = TOY_GRID * TOY_GRID;
        let mut w = DMatrix::from_fn(d, cells, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
        for mut row in w.row_iter_mut() {
            let m = row.mean();
            row.add_scalar_mut(-m);
        }
        Ok(Self { seed, w })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Cell index along one axis for each coordinate: `floor(i · 8 / len)`.
    fn cell_map(len: usize) -> Vec<usize> {
        (0..len).map(|i| i * TOY_GRID / len).collect()
    }

    fn pool(&self, x: &Image) -> Result<Pooled> {
        if x.width() < TOY_GRID || x.height() < TOY_GRID {
            return Err(Error::OracleFailure(format!(
                "image {}x{} is smaller than the {TOY_GRID}x{TOY_GRID} grid",
                x.width(),
                x.height()
            )));
        }
        let luma = x.luma();
        let xs = Self::cell_map(x.width());
        let ys = Self::cell_map(x.height());
        let mut cells = vec![0.0; TOY_GRID * TOY_GRID];
        let mut counts = vec![0.0; TOY_GRID * TOY_GRID];
        for (py, &cy) in ys.iter().enumerate() {
            for (px, &cx) in xs.iter().enumerate() {
                cells[cy * TOY_GRID + cx] += luma[py * x.width() + px];
                counts[cy * TOY_GRID + cx] += 1.0;
            }
        }
        for (c, n) in cells.iter_mut().zip(&counts) {
            *c /= n;
        }
        Ok(Pooled { cells, counts, xs, ys })
    }

    /// Unnormalized projection `z = W · pool(x)` and its norm.
    fn project(&self, pooled: &Pooled) -> Result<(Vec<f64>, f64)> {
        let z: Vec<f64> = self
            .w
            .row_iter()
            .map(|r| r.iter().zip(&pooled.cells).map(|(a, b)| a * b).sum())
            .collect();
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = pooled.cells.iter().map(|v| v * v).sum::<f64>().sqrt() * (self.dim() as f64).sqrt();
        if !norm.is_finite() || norm <= 1e-9 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::OracleFailure(
                "image has no spatial luma variation to embed".into(),
            ));
        }
        Ok((z, norm))
    }
}

impl GradientOracle for ToyEmbedder {
    fn dim(&self) -> usize {
        self.w.nrows()
    }

    fn embed(&self, x: &Image) -> Result<Embedding> {
        let (z, _) = self.project(&self.pool(x)?)?;
        Embedding::new(z).map_err(|e| Error::OracleFailure(e.to_string()))
    }

    fn grad_sim(&self, x: &Image, target: &Embedding) -> Result<Vec<f64>> {
        Ok(self.sim_and_grad(x, target)?.1)
    }

    fn sim_and_grad(&self, x: &Image, target: &Embedding) -> Result<(f64, Vec<f64>)> {
        if target.dim() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "target has {} components, embedder produces {}",
                target.dim(),
                self.dim()
            )));
        }
        let pooled = self.pool(x)?;
        let (z, norm) = self.project(&pooled)?;
        let e: Vec<f64> = z.iter().map(|v| v / norm).collect();
        let t = target.values();
        let sim: f64 = e.iter().zip(t).map(|(a, b)| a * b).sum();
        // d cos / d z = (t - (e.t) e) / |z|
        let dz: Vec<f64> = e.iter().zip(t).map(|(ei, ti)| (ti - sim * ei) / norm).collect();
        let mut dcell = vec![0.0; TOY_GRID * TOY_GRID];
        for (row, g) in self.w.row_iter().zip(&dz) {
            for (d, wv) in dcell.iter_mut().zip(row.iter()) {
                *d += g * wv;
            }
        }
        for (d, n) in dcell.iter_mut().zip(&pooled.counts) {
            *d /= n;
        }
        let ch = x.channels();
        let mut grad = Vec::with_capacity(x.len());
        for &cy in &pooled.ys {
            for &cx in &pooled.xs {
                let g = dcell[cy * TOY_GRID + cx];
                if ch == 1 {
                    grad.push(g);
                } else {
                    grad.extend(LUMA_WEIGHTS.map(|w| g * w));
                }
            }
        }
        Ok((sim, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_face(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> Image {
        Image::new(w, h, c, (0..w * h * c).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    #[test]
    fn deterministic_and_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_face(&mut rng, 30, 20, 3);
        let a = ToyEmbedder::new(7, 16).unwrap();
        let b = ToyEmbedder::new(7, 16).unwrap();
        let (ea, eb) = (a.embed(&x).unwrap(), b.embed(&x).unwrap());
        assert_eq!(ea, eb);
        assert!((ea.norm() - 1.0).abs() < 1e-12);
        assert!((ea.cosine(&ea) - 1.0).abs() < 1e-12);
        assert_ne!(ToyEmbedder::new(8, 16).unwrap().embed(&x).unwrap(), ea);
    }

    #[test]
    fn brightness_shift_is_invisible() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_face(&mut rng, 16, 16, 1).map(|v| 0.2 + 0.5 * v);
        let y = x.map(|v| v + 0.1);
        let o = ToyEmbedder::new(3, 32).unwrap();
        assert!((o.embed(&x).unwrap().cosine(&o.embed(&y).unwrap()) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn flat_or_tiny_images_fail() {
        let o = ToyEmbedder::new(0, 8).unwrap();
        assert!(matches!(o.embed(&Image::filled(16, 16, 3, 0.4)), Err(Error::OracleFailure(_))));
        assert!(matches!(o.embed(&Image::filled(7, 16, 3, 0.4)), Err(Error::OracleFailure(_))));
        assert!(ToyEmbedder::new(0, 1).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let o = ToyEmbedder::new(11, DEFAULT_TOY_DIM).unwrap();
        for c in [1, 3] {
            let x = random_face(&mut rng, 19, 23, c).map(|v| 0.05 + 0.9 * v);
            let target = o.embed(&random_face(&mut rng, 19, 23, c)).unwrap();
            let g = o.grad_sim(&x, &target).unwrap();
            for _ in 0..20 {
                let k = rng.gen_range(0..x.len());
                let h = 1e-3;
                let f = |d: f64| {
                    let mut v = x.data().to_vec();
                    v[k] += d;
                    o.embed(&Image::new(19, 23, c, v).unwrap()).unwrap().cosine(&target)
                };
                let fd = (f(h) - f(-h)) / (2.0 * h);
                let rel = (fd - g[k]).abs() / fd.abs().max(g[k].abs());
                assert!(rel < 1e-3, "coordinate {k}: analytic {} vs fd {fd}", g[k]);
            }
        }
    }
}

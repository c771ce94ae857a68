//! Image quality: PSNR, SSIM (with its analytic gradient) and the Fréchet
//! distance between Gaussian fits of feature sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::image::{Image, LUMA_WEIGHTS};
use crate::naive::gaussian_kernel;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// `(0.01 · L)²` and `(0.03 · L)²` for a dynamic range `L = 1`.
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;

fn check_shapes(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over all samples, peak value 1.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Valid-mode separable correlation of a plane with `taps` in both axes.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|j| taps[j] * rows[(y + j) * ow + x]).sum();
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters an `ow × oh` map back onto `w × h`.
fn filter_valid_adjoint(map: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut cols = vec![0.0; ow * h];
    for y in 0..oh {
        for j in 0..k {
            for x in 0..ow {
                cols[(y + j) * ow + x] += taps[j] * map[y * ow + x];
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = cols[y * ow + x];
            for (i, t) in taps.iter().enumerate() {
                out[y * w + x + i] += t * v;
            }
        }
    }
    out
}

struct SsimMaps {
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    b1: Vec<f64>,
    b2: Vec<f64>,
}

fn ssim_maps(a: &[f64], b: &[f64], w: usize, h: usize, taps: &[f64]) -> SsimMaps {
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let aa: Vec<f64> = a.iter().map(|x| x * x).collect();
    let bb: Vec<f64> = b.iter().map(|x| x * x).collect();
    let mu_a = filter_valid(a, w, h, taps);
    let mu_b = filter_valid(b, w, h, taps);
    let e_aa = filter_valid(&aa, w, h, taps);
    let e_bb = filter_valid(&bb, w, h, taps);
    let e_ab = filter_valid(&ab, w, h, taps);
    let n = mu_a.len();
    let (mut a1, mut a2, mut b1, mut b2) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        a1[i] = 2.0 * ma * mb + SSIM_C1;
        a2[i] = 2.0 * cov + SSIM_C2;
        b1[i] = ma * ma + mb * mb + SSIM_C1;
        b2[i] = var_a + var_b + SSIM_C2;
    }
    SsimMaps { mu_a, mu_b, a1, a2, b1, b2 }
}

fn luma_planes(a: &Image, b: &Image) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    check_shapes(a, b)?;
    if a.width() < SSIM_WINDOW || a.height() < SSIM_WINDOW {
        return Err(Error::TooSmall(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.width(),
            a.height()
        )));
    }
    let taps = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)?;
    Ok((a.luma(), b.luma(), taps))
}

/// Mean structural similarity on the luma plane over all fully contained
/// 11×11 Gaussian windows (σ = 1.5).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    let (la, lb, taps) = luma_planes(a, b)?;
    let m = ssim_maps(&la, &lb, a.width(), a.height(), &taps);
    let n = m.a1.len();
    let total: f64 = (0..n).map(|i| (m.a1[i] * m.a2[i]) / (m.b1[i] * m.b2[i])).sum();
    Ok(total / n as f64)
}

/// SSIM together with its gradient with respect to every sample of `a`
/// (same layout as `a.data()`).
pub fn ssim_with_grad(a: &Image, b: &Image) -> Result<(f64, Vec<f64>)> {
    let (la, lb, taps) = luma_planes(a, b)?;
    let (w, h) = (a.width(), a.height());
    let m = ssim_maps(&la, &lb, w, h, &taps);
    let n = m.a1.len();
    let (mut p, mut q, mut r) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut total = 0.0;
    for i in 0..n {
        let den = m.b1[i] * m.b2[i];
        let s = m.a1[i] * m.a2[i] / den;
        total += s;
        // dS/da_j = g_j (p + q b_j + r a_j) for every pixel j in the window.
        q[i] = 2.0 * m.a1[i] / den;
        r[i] = -2.0 * s / m.b2[i];
        p[i] = 2.0 * m.mu_b[i] * m.a2[i] / den - 2.0 * m.mu_a[i] * s / m.b1[i]
            - q[i] * m.mu_b[i]
            - r[i] * m.mu_a[i];
    }
    let inv_n = 1.0 / n as f64;
    let gp = filter_valid_adjoint(&p, w, h, &taps);
    let gq = filter_valid_adjoint(&q, w, h, &taps);
    let gr = filter_valid_adjoint(&r, w, h, &taps);
    let luma_grad: Vec<f64> = (0..w * h)
        .map(|j| (gp[j] + gq[j] * lb[j] + gr[j] * la[j]) * inv_n)
        .collect();
    let grad = if a.channels() == 1 {
        luma_grad
    } else {
        luma_grad
            .iter()
            .flat_map(|g| LUMA_WEIGHTS.map(|wt| g * wt))
            .collect()
    };
    Ok((total * inv_n, grad))
}

/// Mean and unbiased covariance of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

impl FeatureStats {
    /// Fits a Gaussian to `rows`. When there are no more samples than
    /// dimensions the covariance is rank deficient, so `1e-6 · tr(Σ)/d` is
    /// added to its diagonal.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(Error::TooSmall(format!("need at least 2 feature vectors, got {n}")));
        }
        let d = rows[0].len();
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch("feature rows differ in length".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite feature value".into()));
        }
        let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        let mean = x.row_mean().transpose();
        let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
        let mut cov = centered.transpose() * &centered / (n as f64 - 1.0);
        if n <= d {
            let shrink = 1e-6 * cov.trace() / d as f64;
            for k in 0..d {
                cov[(k, k)] += shrink;
            }
        }
        Ok(Self { mean, cov, count: n })
    }
}

fn symmetric_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    if let Some(bad) = eig.eigenvalues.iter().find(|&&l| l < -1e-6) {
        return Err(Error::Numerical(format!("covariance has eigenvalue {bad}")));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `‖μ₁ − μ₂‖² + tr(Σ₁ + Σ₂ − 2 (Σ₁^{½} Σ₂ Σ₁^{½})^{½})`, floored at zero.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(Error::DimensionMismatch(format!(
            "feature dimension {} vs {}",
            a.mean.len(),
            b.mean.len()
        )));
    }
    let diff = &a.mean - &b.mean;
    let s1 = symmetric_sqrt(&a.cov)?;
    let inner = &s1 * &b.cov * &s1;
    let inner = (&inner + inner.transpose()) * 0.5;
    let eig = SymmetricEigen::new(inner);
    let mut tr_sqrt = 0.0;
    for &l in eig.eigenvalues.iter() {
        if l < -1e-6 {
            return Err(Error::Numerical(format!("product has eigenvalue {l}")));
        }
        tr_sqrt += l.max(0.0).sqrt();
    }
    let d = diff.dot(&diff) + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
    Ok(d.max(0.0))
}

/// Fréchet distance between Gaussian fits of two feature sets.
pub fn fid(real: &[Vec<f64>], fake: &[Vec<f64>]) -> Result<f64> {
    frechet_distance(&FeatureStats::from_rows(real)?, &FeatureStats::from_rows(fake)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> Image {
        Image::new(w, h, c, (0..w * h * c).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    /// Direct double loop over windows with the 2-D weight grid.
    fn ssim_oracle(a: &Image, b: &Image) -> f64 {
        let (la, lb) = (a.luma(), b.luma());
        let w = a.width();
        let g1: Vec<f64> = (0..11)
            .map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp())
            .collect();
        let s1: f64 = g1.iter().sum();
        let mut total = 0.0;
        let mut count = 0;
        for y0 in 0..=a.height() - 11 {
            for x0 in 0..=w - 11 {
                let (mut ma, mut mb, mut eaa, mut ebb, mut eab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for j in 0..11 {
                    for i in 0..11 {
                        let g = g1[i] * g1[j] / (s1 * s1);
                        let (p, q) = (la[(y0 + j) * w + x0 + i], lb[(y0 + j) * w + x0 + i]);
                        ma += g * p;
                        mb += g * q;
                        eaa += g * p * p;
                        ebb += g * q * q;
                        eab += g * p * q;
                    }
                }
                let (va, vb, cv) = (eaa - ma * ma, ebb - mb * mb, eab - ma * mb);
                total += (2.0 * ma * mb + 1e-4) * (2.0 * cv + 9e-4)
                    / ((ma * ma + mb * mb + 1e-4) * (va + vb + 9e-4));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn psnr_known_values() {
        let a = Image::filled(4, 4, 1, 0.5);
        let b = Image::filled(4, 4, 1, 0.6);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        assert!(matches!(psnr(&a, &Image::filled(4, 5, 1, 0.5)), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn ssim_identity_is_exactly_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_image(&mut rng, 20, 17, 3);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let small = Image::filled(10, 20, 1, 0.5);
        assert!(matches!(ssim(&small, &small), Err(Error::TooSmall(_))));
    }

    #[test]
    fn ssim_matches_window_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let (w, h) = (rng.gen_range(11..24), rng.gen_range(11..24));
            let c = if rng.gen_bool(0.5) { 1 } else { 3 };
            let a = random_image(&mut rng, w, h, c);
            let b = random_image(&mut rng, w, h, c);
            assert!((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs() < 1e-9);
        }
    }

    #[test]
    fn ssim_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for c in [1, 3] {
            let a = random_image(&mut rng, 16, 14, c).map(|v| 0.1 + 0.8 * v);
            let b = random_image(&mut rng, 16, 14, c);
            let (s, g) = ssim_with_grad(&a, &b).unwrap();
            assert_eq!(s, ssim(&a, &b).unwrap());
            for _ in 0..20 {
                let k = rng.gen_range(0..a.len());
                let h = 1e-5;
                let mut plus = a.data().to_vec();
                let mut minus = a.data().to_vec();
                plus[k] += h;
                minus[k] -= h;
                let fp = ssim(&Image::new(16, 14, c, plus).unwrap(), &b).unwrap();
                let fm = ssim(&Image::new(16, 14, c, minus).unwrap(), &b).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-6 * fd.abs().max(g[k].abs()).max(1e-3), "{fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn fid_two_dimensional_closed_form() {
        // For 2x2 SPD A, tr sqrt(A) = sqrt(tr A + 2 sqrt(det A)); with equal
        // means the distance is tr Σ1 + tr Σ2 - 2 tr sqrt(Σ1 Σ2) and
        // tr sqrt(Σ1 Σ2) obeys the same identity since Σ1 Σ2 is similar to an SPD matrix.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let rows_a: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.gen(), rng.gen::<f64>() * 3.0]).collect();
            let rows_b: Vec<Vec<f64>> = (0..25).map(|_| vec![rng.gen::<f64>() * 2.0, rng.gen()]).collect();
            let (sa, sb) = (FeatureStats::from_rows(&rows_a).unwrap(), FeatureStats::from_rows(&rows_b).unwrap());
            let p = &sa.cov * &sb.cov;
            let det = p[(0, 0)] * p[(1, 1)] - p[(0, 1)] * p[(1, 0)];
            let tr_sqrt = (p.trace() + 2.0 * det.sqrt()).sqrt();
            let dm = &sa.mean - &sb.mean;
            let expect = dm.dot(&dm) + sa.cov.trace() + sb.cov.trace() - 2.0 * tr_sqrt;
            assert!((frechet_distance(&sa, &sb).unwrap() - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn fid_rejects_bad_input() {
        assert!(matches!(fid(&[vec![1.0]], &[vec![1.0], vec![2.0]]), Err(Error::TooSmall(_))));
        let a = vec![vec![1.0, 2.0], vec![0.0, 1.0]];
        let b = vec![vec![1.0], vec![0.0]];
        assert!(matches!(fid(&a, &b), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn shrinkage_keeps_rank_deficient_sets_finite() {
        let rows: Vec<Vec<f64>> = (0..3).map(|i| (0..8).map(|j| ((i * 8 + j) as f64).sin()).collect()).collect();
        let f = fid(&rows, &rows).unwrap();
        assert!(f.abs() < 1e-6, "{f}");
    }

    proptest! {
        #[test]
        fn fid_symmetric_and_zero_on_self(seed in any::<u64>(), d in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<Vec<f64>> = (0..12).map(|_| (0..d).map(|_| rng.gen::<f64>()).collect()).collect();
            let b: Vec<Vec<f64>> = (0..9).map(|_| (0..d).map(|_| rng.gen::<f64>() + 0.5).collect()).collect();
            prop_assert!(fid(&a, &a).unwrap().abs() < 1e-6);
            prop_assert!((fid(&a, &b).unwrap() - fid(&b, &a).unwrap()).abs() < 1e-6);
        }

        #[test]
        fn ssim_symmetric_and_bounded(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_image(&mut rng, 13, 12, 1);
            let b = random_image(&mut rng, 13, 12, 1);
            let s = ssim(&a, &b).unwrap();
            prop_assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s));
        }
    }
}

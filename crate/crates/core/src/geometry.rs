//! Landmark alignment, warping to a canonical crop, and feathered reinsertion.
//!
//! A [`SimilarityTransform`] maps *source image* coordinates to *aligned face*
//! coordinates. Pixel centers sit on integer coordinates in both frames.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{sample_bilinear, Image, PixelRect};

/// Default aligned crop edge length.
pub const DEFAULT_CROP_SIZE: usize = 112;

/// Default feather width in aligned-face pixels.
pub const DEFAULT_FEATHER: f64 = 8.0;

/// The common 112×112 five-point ArcFace template
/// (left eye, right eye, nose tip, left mouth corner, right mouth corner).
pub const ARCFACE_TEMPLATE_112: [[f64; 2]; 5] = [
    [38.2946, 51.6963],
    [73.5318, 51.5014],
    [56.0252, 71.7366],
    [41.5493, 92.3655],
    [70.7299, 92.2041],
];

/// Five facial landmarks in pixel coordinates, ordered left eye, right eye,
/// nose tip, left mouth corner, right mouth corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Landmarks5 {
    pub points: [[f64; 2]; 5],
}

impl Landmarks5 {
    pub fn new(points: [[f64; 2]; 5]) -> Result<Self> {
        let lm = Self { points };
        lm.validate()?;
        Ok(lm)
    }

    /// The ArcFace template rescaled to a `size × size` crop.
    pub fn template(size: usize) -> Self {
        let s = size as f64 / 112.0;
        let mut points = ARCFACE_TEMPLATE_112;
        for p in &mut points {
            p[0] = (p[0] + 0.5) * s - 0.5;
            p[1] = (p[1] + 0.5) * s - 0.5;
        }
        Self { points }
    }

    pub fn centroid(&self) -> [f64; 2] {
        let mut c = [0.0; 2];
        for p in &self.points {
            c[0] += p[0] / 5.0;
            c[1] += p[1] / 5.0;
        }
        c
    }

    /// Rejects non-finite, coincident, or collinear point sets.
    pub fn validate(&self) -> Result<()> {
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateLandmarks);
        }
        let [cx, cy] = self.centroid();
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for p in &self.points {
            let (dx, dy) = (p[0] - cx, p[1] - cy);
            sxx += dx * dx;
            syy += dy * dy;
            sxy += dx * dy;
        }
        let trace = sxx + syy;
        if trace <= f64::EPSILON {
            return Err(Error::DegenerateLandmarks);
        }
        // Smallest eigenvalue of the 2x2 scatter matrix, relative to the trace.
        let det = sxx * syy - sxy * sxy;
        let disc = ((trace * trace) / 4.0 - det).max(0.0).sqrt();
        let lambda_min = trace / 2.0 - disc;
        if lambda_min <= 1e-10 * trace {
            return Err(Error::DegenerateLandmarks);
        }
        Ok(())
    }

    pub fn transformed(&self, t: &SimilarityTransform) -> Landmarks5 {
        let mut points = self.points;
        for p in &mut points {
            *p = t.apply(*p);
        }
        Landmarks5 { points }
    }
}

/// `x' = a·x − b·y + tx`, `y' = b·x + a·y + ty`, with `a = s·cos θ`, `b = s·sin θ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub a: f64,
    pub b: f64,
    pub tx: f64,
    pub ty: f64,
}

impl SimilarityTransform {
    pub const IDENTITY: SimilarityTransform = SimilarityTransform {
        a: 1.0,
        b: 0.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn from_parts(scale: f64, rotation: f64, translation: [f64; 2]) -> Self {
        Self {
            a: scale * rotation.cos(),
            b: scale * rotation.sin(),
            tx: translation[0],
            ty: translation[1],
        }
    }

    pub fn scale(&self) -> f64 {
        self.a.hypot(self.b)
    }

    /// Rotation angle in radians, in `(-π, π]`.
    pub fn rotation(&self) -> f64 {
        self.b.atan2(self.a)
    }

    pub fn translation(&self) -> [f64; 2] {
        [self.tx, self.ty]
    }

    /// Determinant of the linear part, `scale²`.
    pub fn determinant(&self) -> f64 {
        self.a * self.a + self.b * self.b
    }

    /// The 2×3 matrix `[[a, -b, tx], [b, a, ty]]`.
    pub fn matrix(&self) -> [[f64; 3]; 2] {
        [[self.a, -self.b, self.tx], [self.b, self.a, self.ty]]
    }

    #[inline]
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.a * p[0] - self.b * p[1] + self.tx,
            self.b * p[0] + self.a * p[1] + self.ty,
        ]
    }

    pub fn inverse(&self) -> Result<Self> {
        let det = self.determinant();
        if !det.is_finite() || det <= 1e-18 {
            return Err(Error::SingularTransform);
        }
        let ia = self.a / det;
        let ib = -self.b / det;
        Ok(Self {
            a: ia,
            b: ib,
            tx: -(ia * self.tx - ib * self.ty),
            ty: -(ib * self.tx + ia * self.ty),
        })
    }

    /// `self ∘ first`: applies `first`, then `self`.
    pub fn compose(&self, first: &SimilarityTransform) -> Self {
        let [tx, ty] = self.apply([first.tx, first.ty]);
        Self {
            a: self.a * first.a - self.b * first.b,
            b: self.b * first.a + self.a * first.b,
            tx,
            ty,
        }
    }

    pub fn residual(&self, src: &Landmarks5, dst: &Landmarks5) -> f64 {
        src.points
            .iter()
            .zip(&dst.points)
            .map(|(s, d)| {
                let p = self.apply(*s);
                (p[0] - d[0]).powi(2) + (p[1] - d[1]).powi(2)
            })
            .sum()
    }
}

/// Least-squares similarity (Umeyama, no reflection) taking `src` onto `template`.
pub fn estimate_similarity(src: &Landmarks5, template: &Landmarks5) -> Result<SimilarityTransform> {
    src.validate()?;
    template.validate()?;
    let [scx, scy] = src.centroid();
    let [dcx, dcy] = template.centroid();
    let (mut dot, mut cross, mut norm) = (0.0, 0.0, 0.0);
    for (s, d) in src.points.iter().zip(&template.points) {
        let (sx, sy) = (s[0] - scx, s[1] - scy);
        let (dx, dy) = (d[0] - dcx, d[1] - dcy);
        dot += sx * dx + sy * dy;
        cross += sx * dy - sy * dx;
        norm += sx * sx + sy * sy;
    }
    let a = dot / norm;
    let b = cross / norm;
    if a.hypot(b) <= 1e-12 {
        return Err(Error::DegenerateLandmarks);
    }
    Ok(SimilarityTransform {
        a,
        b,
        tx: dcx - (a * scx - b * scy),
        ty: dcy - (b * scx + a * scy),
    })
}

/// Resamples `img` into a `size × size` crop: `out(p) = img(T⁻¹·p)`, bilinear, edge-clamped.
pub fn warp_to_template(img: &Image, t: &SimilarityTransform, size: usize) -> Result<Image> {
    if size == 0 {
        return Err(Error::InvalidSize {
            width: size,
            height: size,
        });
    }
    let inv = t.inverse()?;
    let c = img.channels();
    let mut data = Vec::with_capacity(size * size * c);
    for y in 0..size {
        for x in 0..size {
            let [sx, sy] = inv.apply([x as f64, y as f64]);
            for ch in 0..c {
                data.push(sample_bilinear(img, sx, sy, ch));
            }
        }
    }
    Image::new(size, size, c, data)
}

/// Shape of the alpha mask used when pasting a face back.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlendSpec {
    /// Width of the linear alpha ramp, centred on the mask boundary, in aligned-face pixels.
    pub feather: f64,
    /// Shrinks the face square by this many aligned-face pixels on every side.
    pub inset: f64,
}

impl Default for BlendSpec {
    fn default() -> Self {
        Self {
            feather: DEFAULT_FEATHER,
            inset: 0.0,
        }
    }
}

impl BlendSpec {
    pub fn hard() -> Self {
        Self {
            feather: 0.0,
            inset: 0.0,
        }
    }

    /// Alpha at aligned-face coordinates `(px, py)` for an `s × s` face.
    ///
    /// 0.5 on the mask boundary, 1 at least `feather / 2` inside, 0 at least
    /// `feather / 2` outside.
    pub fn alpha(&self, px: f64, py: f64, s: usize) -> f64 {
        let lo = -0.5 + self.inset;
        let hi = s as f64 - 0.5 - self.inset;
        if hi <= lo {
            return 0.0;
        }
        let signed = if px >= lo && px <= hi && py >= lo && py <= hi {
            (px - lo).min(hi - px).min(py - lo).min(hi - py)
        } else {
            let dx = (lo - px).max(px - hi).max(0.0);
            let dy = (lo - py).max(py - hi).max(0.0);
            -dx.hypot(dy)
        };
        if self.feather <= 0.0 {
            return if signed >= 0.0 { 1.0 } else { 0.0 };
        }
        (0.5 + signed / self.feather).clamp(0.0, 1.0)
    }

    fn reach(&self) -> f64 {
        self.feather.max(0.0) / 2.0
    }
}

/// Pastes `deid_face` back into `background` through `T⁻¹` under a feathered alpha mask.
///
/// Pixels with zero alpha are copied from `background` untouched.
pub fn reinsert(
    background: &Image,
    deid_face: &Image,
    t: &SimilarityTransform,
    blend: &BlendSpec,
) -> Result<Image> {
    let s = deid_face.width();
    if deid_face.height() != s {
        return Err(Error::ShapeMismatch(format!(
            "aligned face must be square, got {}x{}",
            deid_face.width(),
            deid_face.height()
        )));
    }
    let inv = t.inverse()?;
    let face = if deid_face.channels() == background.channels() {
        deid_face.clone()
    } else if deid_face.channels() == 1 {
        deid_face.to_rgb()
    } else {
        return Err(Error::ShapeMismatch(
            "cannot reinsert an RGB face into a grayscale image".into(),
        ));
    };
    let mut out = background.clone();
    let lo = -0.5 + blend.inset - blend.reach();
    let hi = s as f64 - 0.5 - blend.inset + blend.reach();
    if 2.0 * blend.inset >= s as f64 || hi <= lo {
        return Ok(out);
    }
    let Some(rect) = quad_bounds(&inv, lo, hi, background.width(), background.height()) else {
        return Ok(out);
    };
    let c = background.channels();
    for y in rect.y0..rect.y0 + rect.h {
        for x in rect.x0..rect.x0 + rect.w {
            let [px, py] = t.apply([x as f64, y as f64]);
            let alpha = blend.alpha(px, py, s);
            if alpha <= 0.0 {
                continue;
            }
            for ch in 0..c {
                let f = sample_bilinear(&face, px, py, ch);
                let v = if alpha >= 1.0 {
                    f
                } else {
                    alpha * f + (1.0 - alpha) * background.get(x, y, ch)
                };
                out.set(x, y, ch, v);
            }
        }
    }
    Ok(out)
}

/// Integer bounding box (clipped to the image) of the square `[lo, hi]²` in
/// aligned-face coordinates mapped through `inv` into the source image.
pub fn quad_bounds(
    inv: &SimilarityTransform,
    lo: f64,
    hi: f64,
    width: usize,
    height: usize,
) -> Option<PixelRect> {
    let corners = [[lo, lo], [hi, lo], [lo, hi], [hi, hi]].map(|p| inv.apply(p));
    let min_x = corners.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min).floor() - 1.0;
    let max_x = corners.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max).ceil() + 1.0;
    let min_y = corners.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min).floor() - 1.0;
    let max_y = corners.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max).ceil() + 1.0;
    let x0 = min_x.max(0.0);
    let y0 = min_y.max(0.0);
    let x1 = max_x.min(width as f64 - 1.0);
    let y1 = max_y.min(height as f64 - 1.0);
    if x1 < x0 || y1 < y0 {
        return None;
    }
    Some(PixelRect::new(
        x0 as usize,
        y0 as usize,
        (x1 - x0) as usize + 1,
        (y1 - y0) as usize + 1,
    ))
}

/// A face warped into the canonical frame, plus what is needed to put it back.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedFace {
    pub face: Image,
    pub transform: SimilarityTransform,
    pub source_rect_hint: PixelRect,
}

/// Fits `landmarks` onto the template for `size` and warps the face out of `img`.
pub fn align_face(
    img: &Image,
    landmarks: &Landmarks5,
    template: &Landmarks5,
    size: usize,
) -> Result<AlignedFace> {
    let transform = estimate_similarity(landmarks, template)?;
    let face = warp_to_template(img, &transform, size)?;
    let inv = transform.inverse()?;
    let source_rect_hint = quad_bounds(&inv, -0.5, size as f64 - 0.5, img.width(), img.height())
        .unwrap_or(PixelRect::new(0, 0, img.width(), img.height()));
    Ok(AlignedFace {
        face,
        transform,
        source_rect_hint,
    })
}

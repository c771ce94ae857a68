//! k-Same de-identification over a gallery of aligned faces.
//!
//! Similarity is plain pixel-space L2 over the flattened raster, searched by
//! brute force. Ties always resolve to the lower gallery index.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{load_image, resize, Image, ResizeMode};

pub const DEFAULT_K: usize = 10;

/// Reference faces held as one flat `n × (S·S·C)` matrix.
#[derive(Debug, Clone)]
pub struct Gallery {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<f64>,
    labels: Vec<Option<String>>,
    source_manifest: Option<PathBuf>,
}

impl Gallery {
    pub fn from_images(faces: Vec<Image>) -> Result<Self> {
        Self::with_labels(faces.into_iter().map(|f| (f, None)).collect())
    }

    pub fn with_labels(faces: Vec<(Image, Option<String>)>) -> Result<Self> {
        let Some((first, _)) = faces.first() else {
            return Err(Error::Config("gallery is empty".into()));
        };
        let (width, height, channels) = (first.width(), first.height(), first.channels());
        let mut pixels = Vec::with_capacity(faces.len() * first.len());
        let mut labels = Vec::with_capacity(faces.len());
        for (i, (face, label)) in faces.into_iter().enumerate() {
            if face.width() != width || face.height() != height || face.channels() != channels {
                return Err(Error::DimensionMismatch(format!(
                    "gallery face {i} is {}x{}x{}, expected {width}x{height}x{channels}",
                    face.width(),
                    face.height(),
                    face.channels()
                )));
            }
            pixels.extend_from_slice(face.data());
            labels.push(label);
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
            labels,
            source_manifest: None,
        })
    }

    /// Loads a gallery from either a manifest (`path[<TAB>identity]` per line,
    /// relative paths resolved against the manifest's directory) or a
    /// directory of PNG/PPM/PGM files taken in name order.
    ///
    /// With `size`, every face is bilinearly resized to `size × size`.
    pub fn load(source: impl AsRef<Path>, size: Option<usize>) -> Result<Self> {
        let source = source.as_ref();
        let entries = if source.is_dir() {
            let mut paths: Vec<PathBuf> = fs::read_dir(source)
                .map_err(|e| Error::io(source, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    matches!(
                        p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
                        Some("png" | "ppm" | "pgm" | "pnm")
                    )
                })
                .collect();
            paths.sort();
            paths.into_iter().map(|p| (p, None)).collect::<Vec<_>>()
        } else {
            parse_manifest(source)?
        };
        let mut faces = Vec::with_capacity(entries.len());
        for (path, label) in entries {
            let mut face = load_image(&path)?.to_rgb();
            if let Some(s) = size {
                if face.width() != s || face.height() != s {
                    face = resize(&face, s, s, ResizeMode::Bilinear)?;
                }
            }
            faces.push((face, label));
        }
        let mut gallery = Self::with_labels(faces)?;
        gallery.source_manifest = Some(source.to_path_buf());
        Ok(gallery)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn face_len(&self) -> usize {
        self.width * self.height * self.channels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.face_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn face(&self, i: usize) -> Image {
        Image::new(self.width, self.height, self.channels, self.row(i).to_vec())
            .expect("gallery rows are valid images")
    }

    pub fn label(&self, i: usize) -> Option<&str> {
        self.labels[i].as_deref()
    }

    pub fn source_manifest(&self) -> Option<&Path> {
        self.source_manifest.as_deref()
    }

    fn check_probe(&self, face: &Image) -> Result<()> {
        if face.width() != self.width || face.height() != self.height || face.channels() != self.channels {
            return Err(Error::DimensionMismatch(format!(
                "probe is {}x{}x{}, gallery faces are {}x{}x{}",
                face.width(),
                face.height(),
                face.channels(),
                self.width,
                self.height,
                self.channels
            )));
        }
        Ok(())
    }
}

fn parse_manifest(path: &Path) -> Result<Vec<(PathBuf, Option<String>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.splitn(2, '\t');
        let p = PathBuf::from(parts.next().unwrap_or_default());
        let label = parts.next().map(|s| s.to_string()).filter(|s| !s.is_empty());
        out.push((if p.is_absolute() { p } else { base.join(p) }, label));
    }
    Ok(out)
}

/// A gallery hit: index and pixel-space L2 distance to the probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KSameVariant {
    #[default]
    Average,
    Select,
    Furthest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    #[default]
    Closest,
    Furthest,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KSameParams {
    pub k: usize,
    pub variant: KSameVariant,
    pub selection_mode: SelectionMode,
    pub rng_seed: u64,
    /// Skip gallery faces at distance exactly 0 from the probe.
    pub exclude_self: bool,
}

impl Default for KSameParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            variant: KSameVariant::Average,
            selection_mode: SelectionMode::Closest,
            rng_seed: 0,
            exclude_self: false,
        }
    }
}

impl KSameParams {
    pub fn new(k: usize, variant: KSameVariant) -> Self {
        Self {
            k,
            variant,
            ..Self::default()
        }
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `k` gallery faces nearest to `face`, ascending by distance.
pub fn knn_pixel(face: &Image, g: &Gallery, k: usize) -> Result<Vec<Neighbor>> {
    knn_pixel_with(face, g, k, false)
}

pub fn knn_pixel_with(face: &Image, g: &Gallery, k: usize, exclude_self: bool) -> Result<Vec<Neighbor>> {
    g.check_probe(face)?;
    let probe = face.data();
    let dist = |i: usize| (squared_distance(probe, g.row(i)), i);
    let mut all: Vec<(f64, usize)> = if g.len() >= 256 {
        (0..g.len()).into_par_iter().map(dist).collect()
    } else {
        (0..g.len()).map(dist).collect()
    };
    if exclude_self {
        all.retain(|&(d, _)| d != 0.0);
    }
    if k == 0 || k > all.len() {
        return Err(Error::KTooLarge {
            k,
            available: all.len(),
        });
    }
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, cmp);
        all.truncate(k);
    }
    all.sort_unstable_by(cmp);
    Ok(all
        .into_iter()
        .map(|(d, index)| Neighbor {
            index,
            distance: d.sqrt(),
        })
        .collect())
}

/// Pixel-wise mean of the k nearest gallery faces.
pub fn k_same_average(face: &Image, g: &Gallery, p: &KSameParams) -> Result<Image> {
    let nn = knn_pixel_with(face, g, p.k, p.exclude_self)?;
    let n = g.face_len();
    let mut sum = vec![0.0; n];
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for nb in &nn {
        for (((s, l), h), &v) in sum.iter_mut().zip(&mut lo).zip(&mut hi).zip(g.row(nb.index)) {
            *s += v;
            *l = l.min(v);
            *h = h.max(v);
        }
    }
    let k = nn.len() as f64;
    let data = sum
        .into_iter()
        .zip(lo.into_iter().zip(hi))
        .map(|(s, (l, h))| if l == h { l } else { (s / k).clamp(l, h) })
        .collect();
    Image::new(face.width(), face.height(), face.channels(), data)
}

/// One representative of the k-NN set chosen by `selection_mode`.
pub fn k_same_select(face: &Image, g: &Gallery, p: &KSameParams) -> Result<Image> {
    let nn = knn_pixel_with(face, g, p.k, p.exclude_self)?;
    let pick = match p.selection_mode {
        SelectionMode::Closest => nn[0].index,
        SelectionMode::Furthest => nn[nn.len() - 1].index,
        SelectionMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(p.rng_seed);
            nn[rng.gen_range(0..nn.len())].index
        }
    };
    Ok(g.face(pick))
}

/// The most distant member of the k-NN set, i.e. the rank-k neighbor.
pub fn k_same_furthest(face: &Image, g: &Gallery, p: &KSameParams) -> Result<Image> {
    let nn = knn_pixel_with(face, g, p.k, p.exclude_self)?;
    Ok(g.face(nn[nn.len() - 1].index))
}

pub fn k_same(face: &Image, g: &Gallery, p: &KSameParams) -> Result<Image> {
    match p.variant {
        KSameVariant::Average => k_same_average(face, g, p),
        KSameVariant::Select => k_same_select(face, g, p),
        KSameVariant::Furthest => k_same_furthest(face, g, p),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_faces(seed: u64, n: usize, s: usize) -> Vec<Image> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Image::from_fn(s, s, 3, |_, _, _| rng.gen())).collect()
    }

    fn brute_force(face: &Image, faces: &[Image]) -> Vec<(f64, usize)> {
        let mut d: Vec<(f64, usize)> = faces
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let mut acc = 0.0;
                for (a, b) in face.data().iter().zip(f.data()) {
                    acc += (a - b).powi(2);
                }
                (acc.sqrt(), i)
            })
            .collect();
        d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        d
    }

    #[test]
    fn verbatim_member_found_at_distance_zero() {
        let faces = random_faces(1, 12, 6);
        let g = Gallery::from_images(faces.clone()).unwrap();
        let nn = knn_pixel(&faces[7], &g, 1).unwrap();
        assert_eq!(nn, vec![Neighbor { index: 7, distance: 0.0 }]);
        let excl = knn_pixel_with(&faces[7], &g, 1, true).unwrap();
        assert_ne!(excl[0].index, 7);
    }

    #[test]
    fn k_equal_to_gallery_returns_everything_sorted() {
        let faces = random_faces(2, 9, 5);
        let g = Gallery::from_images(faces.clone()).unwrap();
        let probe = random_faces(3, 1, 5).remove(0);
        let nn = knn_pixel(&probe, &g, 9).unwrap();
        let oracle = brute_force(&probe, &faces);
        assert_eq!(nn.iter().map(|n| n.index).collect::<Vec<_>>(), oracle.iter().map(|o| o.1).collect::<Vec<_>>());
    }

    #[test]
    fn matches_full_sort_on_random_gallery() {
        let faces = random_faces(4, 50, 8);
        let g = Gallery::from_images(faces.clone()).unwrap();
        for seed in 0..10 {
            let probe = random_faces(100 + seed, 1, 8).remove(0);
            let nn = knn_pixel(&probe, &g, 5).unwrap();
            let oracle = brute_force(&probe, &faces);
            for (n, o) in nn.iter().zip(&oracle) {
                assert_eq!(n.index, o.1);
                assert!((n.distance - o.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn errors() {
        let faces = random_faces(5, 3, 4);
        let g = Gallery::from_images(faces).unwrap();
        let probe = Image::filled(4, 4, 3, 0.5);
        assert!(matches!(knn_pixel(&probe, &g, 4), Err(Error::KTooLarge { k: 4, available: 3 })));
        assert!(matches!(knn_pixel(&probe, &g, 0), Err(Error::KTooLarge { .. })));
        let wrong = Image::filled(5, 4, 3, 0.5);
        assert!(matches!(knn_pixel(&wrong, &g, 1), Err(Error::DimensionMismatch(_))));
        assert!(Gallery::from_images(vec![]).is_err());
        assert!(Gallery::from_images(vec![Image::filled(2, 2, 3, 0.0), Image::filled(3, 2, 3, 0.0)]).is_err());
    }

    #[test]
    fn average_cases() {
        let same = vec![Image::filled(4, 4, 3, 0.1); 3];
        let g = Gallery::from_images(same.clone()).unwrap();
        let probe = Image::filled(4, 4, 3, 0.9);
        assert_eq!(k_same_average(&probe, &g, &KSameParams::new(3, KSameVariant::Average)).unwrap(), same[0]);

        let faces = random_faces(6, 10, 4);
        let g = Gallery::from_images(faces.clone()).unwrap();
        let nn = knn_pixel(&probe, &g, 1).unwrap();
        assert_eq!(k_same_average(&probe, &g, &KSameParams::new(1, KSameVariant::Average)).unwrap(), faces[nn[0].index]);

        let g = Gallery::from_images(vec![Image::filled(4, 4, 1, 0.2), Image::filled(4, 4, 1, 0.6)]).unwrap();
        let out = k_same_average(&Image::filled(4, 4, 1, 0.0), &g, &KSameParams::new(2, KSameVariant::Average)).unwrap();
        assert!(out.data().iter().all(|&s| (s - 0.4).abs() < 1e-15));
    }

    #[test]
    fn select_modes() {
        let faces = random_faces(7, 20, 5);
        let g = Gallery::from_images(faces.clone()).unwrap();
        let probe = random_faces(8, 1, 5).remove(0);
        let oracle = brute_force(&probe, &faces);
        let mut p = KSameParams::new(3, KSameVariant::Select);
        assert_eq!(k_same_select(&probe, &g, &p).unwrap(), faces[oracle[0].1]);
        p.selection_mode = SelectionMode::Furthest;
        assert_eq!(k_same_select(&probe, &g, &p).unwrap(), faces[oracle[2].1]);
        p.selection_mode = SelectionMode::Random;
        p.rng_seed = 42;
        let a = k_same_select(&probe, &g, &p).unwrap();
        assert_eq!(a, k_same_select(&probe, &g, &p).unwrap());
        assert!(oracle[..3].iter().any(|o| faces[o.1] == a));
    }

    #[test]
    fn furthest_with_known_distances() {
        // 1x1 gray faces at distances 0, 0.1, 0.2, 0.3 from the probe.
        let faces: Vec<Image> = [0.5, 0.6, 0.7, 0.8].iter().map(|&v| Image::filled(1, 1, 1, v)).collect();
        let g = Gallery::from_images(faces.clone()).unwrap();
        let probe = Image::filled(1, 1, 1, 0.5);
        let out = k_same_furthest(&probe, &g, &KSameParams::new(3, KSameVariant::Furthest)).unwrap();
        assert_eq!(out, faces[2]);
        let one = k_same_furthest(&probe, &g, &KSameParams::new(1, KSameVariant::Furthest)).unwrap();
        assert_eq!(one, faces[0]);
    }

    #[test]
    fn manifest_and_directory_loading() {
        let dir = tempfile::tempdir().unwrap();
        let faces = random_faces(9, 3, 6);
        for (i, f) in faces.iter().enumerate() {
            crate::image::save_image(f, dir.path().join(format!("f{i}.png"))).unwrap();
        }
        let manifest = dir.path().join("gallery.txt");
        fs::write(&manifest, "f0.png\talice\nf1.png\n\nf2.png\tbob\n").unwrap();
        let g = Gallery::load(&manifest, None).unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g.label(0), Some("alice"));
        assert_eq!(g.label(1), None);
        assert_eq!(g.face(2), faces[2].quantized());
        let d = Gallery::load(dir.path(), Some(4)).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.face(0).width(), 4);
    }

    #[test]
    fn identical_neighbor_sets_give_identical_outputs() {
        // m = 4 copies of each of 5 synthetic identities; k = 4.
        let ids = random_faces(10, 5, 4);
        let mut faces = Vec::new();
        for f in &ids {
            for _ in 0..4 {
                faces.push(f.clone());
            }
        }
        let g = Gallery::from_images(faces).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut outputs = Vec::new();
        for _ in 0..40 {
            let base = &ids[rng.gen_range(0..5)];
            let probe = base.map(|s| s + rng.gen_range(-0.01..0.01));
            let out = k_same_average(&probe, &g, &KSameParams::new(4, KSameVariant::Average)).unwrap();
            if !outputs.contains(&out) {
                outputs.push(out);
            }
        }
        assert!(outputs.len() <= 5);
        for o in &outputs {
            assert!(ids.contains(o));
        }
    }

    proptest! {
        #[test]
        fn average_within_neighbor_range(seed in any::<u64>(), k in 1usize..6) {
            let faces = random_faces(seed, 8, 3);
            let g = Gallery::from_images(faces.clone()).unwrap();
            let probe = random_faces(seed.wrapping_add(1), 1, 3).remove(0);
            let nn = knn_pixel(&probe, &g, k).unwrap();
            let out = k_same_average(&probe, &g, &KSameParams::new(k, KSameVariant::Average)).unwrap();
            for (i, v) in out.data().iter().enumerate() {
                let lo = nn.iter().map(|n| g.row(n.index)[i]).fold(f64::INFINITY, f64::min);
                let hi = nn.iter().map(|n| g.row(n.index)[i]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(*v >= lo && *v <= hi);
            }
        }

        #[test]
        fn furthest_equals_select_furthest(seed in any::<u64>(), k in 1usize..8) {
            let faces = random_faces(seed, 8, 3);
            let g = Gallery::from_images(faces).unwrap();
            let probe = random_faces(seed ^ 0xff, 1, 3).remove(0);
            let mut p = KSameParams::new(k, KSameVariant::Select);
            p.selection_mode = SelectionMode::Furthest;
            prop_assert_eq!(k_same_furthest(&probe, &g, &p).unwrap(), k_same_select(&probe, &g, &p).unwrap());
        }
    }
}

//! Deterministic synthetic imagery: textured scenes, step edges and
//! separable Gaussian blur, plus a small on-disk corpus writer.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::backend::{self, BackendError, ExtractorConfig, FeatureSet, RawImage};
use crate::dataset::{self, DatasetManifest, ImageEntry, IngestError, ScoreKind};
use crate::layout::{self, LayoutError, PatchSpec};

/// Textured luminance plane in `[0, 255]`: oriented gratings plus a few
/// flat rectangles, fully determined by `seed`.
pub fn texture(width: usize, height: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plane = vec![0.0; width * height];
    for _ in 0..5 {
        let theta = rng.gen_range(0.0..std::f64::consts::PI);
        let freq = rng.gen_range(0.05..0.6);
        let amp = rng.gen_range(8.0..30.0);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let (c, s) = (theta.cos() * freq, theta.sin() * freq);
        for y in 0..height {
            for x in 0..width {
                plane[y * width + x] += amp * (c * x as f64 + s * y as f64 + phase).sin();
            }
        }
    }
    for _ in 0..6 {
        let x0 = rng.gen_range(0..width);
        let y0 = rng.gen_range(0..height);
        let x1 = (x0 + rng.gen_range(4..=width.max(5) / 2)).min(width);
        let y1 = (y0 + rng.gen_range(4..=height.max(5) / 2)).min(height);
        let level = rng.gen_range(-60.0..60.0);
        for y in y0..y1 {
            for x in x0..x1 {
                plane[y * width + x] += level;
            }
        }
    }
    let contrast = rng.gen_range(0.5..1.2);
    let base = rng.gen_range(100.0..150.0);
    plane.iter().map(|v| (base + contrast * v).clamp(0.0, 255.0)).collect()
}

/// Dead-leaves scene in `[0, 255]`: occluding disks of random gray level
/// with radii drawn from a `r^-3` density, so edges occur at every scale.
pub fn dead_leaves(width: usize, height: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r_min, r_max) = (1.5f64, (width.max(height) as f64 / 3.0).max(2.0));
    let mut plane = vec![f64::NAN; width * height];
    let mut uncovered = plane.len();
    for _ in 0..20_000 {
        if uncovered == 0 {
            break;
        }
        // inverse CDF of p(r) ∝ r^-3 on [r_min, r_max]
        let u: f64 = rng.gen();
        let r = (r_min.powi(-2) - u * (r_min.powi(-2) - r_max.powi(-2))).powf(-0.5);
        let cx = rng.gen_range(-r..width as f64 + r);
        let cy = rng.gen_range(-r..height as f64 + r);
        let level = rng.gen_range(20.0..235.0);
        let x0 = (cx - r).floor().max(0.0) as usize;
        let y0 = (cy - r).floor().max(0.0) as usize;
        let x1 = ((cx + r).ceil().max(0.0) as usize).min(width);
        let y1 = ((cy + r).ceil().max(0.0) as usize).min(height);
        for y in y0..y1 {
            for x in x0..x1 {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let px = &mut plane[y * width + x];
                if px.is_nan() && dx * dx + dy * dy <= r * r {
                    *px = level;
                    uncovered -= 1;
                }
            }
        }
    }
    plane.iter().map(|v| if v.is_nan() { 128.0 } else { *v }).collect()
}

/// Scene family used by the corpus builders.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scene {
    Texture,
    DeadLeaves,
}

impl Scene {
    pub fn render(self, width: usize, height: usize, seed: u64) -> Vec<f64> {
        match self {
            Scene::Texture => texture(width, height, seed),
            Scene::DeadLeaves => dead_leaves(width, height, seed),
        }
    }
}

/// Vertical step edge: left half `lo`, right half `hi`.
pub fn edge_patch(size: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..size * size).map(|i| if i % size < size / 2 { lo } else { hi }).collect()
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let w: Vec<f64> = (-radius..=radius).map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = w.iter().sum();
    w.into_iter().map(|v| v / sum).collect()
}

/// Separable Gaussian blur with edge replication; `sigma <= 0` copies.
pub fn gaussian_blur(plane: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    assert_eq!(plane.len(), width * height);
    if sigma <= 0.0 {
        return plane.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            tmp[y * width + x] = k
                .iter()
                .enumerate()
                .map(|(i, w)| w * plane[y * width + clamp(x as isize + i as isize - r, width)])
                .sum();
        }
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] = k
                .iter()
                .enumerate()
                .map(|(i, w)| w * tmp[clamp(y as isize + i as isize - r, height) * width + x])
                .sum();
        }
    }
    out
}

/// Rounds a plane to an 8-bit grayscale image.
pub fn to_gray(plane: &[f64], width: usize, height: usize) -> Result<RawImage, BackendError> {
    let pixels = plane.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    RawImage::gray(width as u32, height as u32, pixels)
}

/// Textured content `seed` blurred with `sigma`.
pub fn blurred_texture(width: usize, height: usize, seed: u64, sigma: f64) -> Result<RawImage, BackendError> {
    to_gray(&gaussian_blur(&texture(width, height, seed), width, height, sigma), width, height)
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
}

fn blur_entries(contents: usize, sigmas: &[f64]) -> Vec<(ImageEntry, usize, f64)> {
    let mut out = Vec::with_capacity(contents * sigmas.len());
    for c in 0..contents {
        for (k, &sigma) in sigmas.iter().enumerate() {
            let image_id = format!("c{c:03}_b{k}");
            let entry = ImageEntry {
                path: format!("{image_id}.pgm"),
                image_id,
                score: (5.0 - sigma).clamp(0.0, 5.0),
                content_id: format!("c{c:03}"),
                excluded: false,
            };
            out.push((entry, c, sigma));
        }
    }
    out
}

fn blur_meta() -> dataset::ManifestMeta {
    dataset::ManifestMeta { name: "synthetic-blur".into(), score_kind: ScoreKind::Mos, score_range: (0.0, 5.0) }
}

/// In-memory version of [`write_blur_corpus`]: the manifest plus builtin
/// features of every image, extracted on `spec`.
pub fn blur_feature_corpus(
    scene: Scene,
    contents: usize,
    sigmas: &[f64],
    size: usize,
    spec: PatchSpec,
    seed: u64,
) -> Result<(DatasetManifest, BTreeMap<String, FeatureSet>), CorpusError> {
    let cfg = ExtractorConfig::builtin(spec);
    let items = blur_entries(contents, sigmas);
    let features = items
        .par_iter()
        .map(|(e, c, sigma)| -> Result<(String, FeatureSet), CorpusError> {
            let plane = scene.render(size, size, seed.wrapping_add(*c as u64));
            let image = to_gray(&gaussian_blur(&plane, size, size, *sigma), size, size)?;
            let grid = layout::compute_grid(image.dims(), spec)?;
            Ok((e.image_id.clone(), backend::extract(&e.image_id, &image, &grid, &cfg)?))
        })
        .collect::<Result<BTreeMap<_, _>, _>>()?;
    let manifest = DatasetManifest::new(blur_meta(), items.into_iter().map(|(e, _, _)| e).collect())?;
    Ok((manifest, features))
}

/// Writes `contents × sigmas.len()` PGM files to `dir` plus `manifest.csv`
/// and its sidecar. Each image's score is `5 − σ` on a 0–5 MOS scale, and
/// all blur levels of one texture share a content id.
pub fn write_blur_corpus(
    scene: Scene,
    dir: &Path,
    contents: usize,
    sigmas: &[f64],
    size: usize,
    seed: u64,
) -> Result<DatasetManifest, CorpusError> {
    std::fs::create_dir_all(dir).map_err(BackendError::from)?;
    let items = blur_entries(contents, sigmas);
    let planes: Vec<Vec<f64>> = (0..contents).map(|c| scene.render(size, size, seed.wrapping_add(c as u64))).collect();
    for (e, c, sigma) in &items {
        to_gray(&gaussian_blur(&planes[*c], size, size, *sigma), size, size)?.save_pnm(dir.join(&e.path))?;
    }
    let manifest = DatasetManifest::new(blur_meta(), items.into_iter().map(|(e, _, _)| e).collect())?;
    dataset::write_manifest(&manifest, dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn texture_is_deterministic() {
        assert_eq!(texture(32, 24, 5), texture(32, 24, 5));
        assert_ne!(texture(32, 24, 5), texture(32, 24, 6));
    }

    #[test]
    fn blur_preserves_constant_and_mean() {
        let flat = vec![80.0; 100];
        let b = gaussian_blur(&flat, 10, 10, 2.0);
        assert!(b.iter().all(|v| (v - 80.0).abs() < 1e-9));
        assert_eq!(gaussian_blur(&flat, 10, 10, 0.0), flat);
        let k = gaussian_kernel(1.5);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(k.len(), 11);
    }

    #[test]
    fn dead_leaves_covers_plane() {
        let p = dead_leaves(40, 30, 2);
        assert_eq!(p, dead_leaves(40, 30, 2));
        assert!(p.iter().all(|v| (20.0..235.0).contains(v) || *v == 128.0));
        let distinct: std::collections::BTreeSet<u64> = p.iter().map(|v| v.to_bits()).collect();
        assert!(distinct.len() > 10);
    }

    #[test]
    fn blur_smooths_edge() {
        let e = edge_patch(16, 0.0, 100.0);
        let b = gaussian_blur(&e, 16, 16, 1.0);
        assert!(b[7] > 0.0 && b[7] < 50.0);
        assert!(b[8] > 50.0 && b[8] < 100.0);
    }
}

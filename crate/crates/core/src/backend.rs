//! Per-patch feature extraction.
//!
//! Three interchangeable sources produce the `n × l` patch feature matrix of
//! an image:
//!
//! * [`BackendKind::FromFile`]: features computed elsewhere and stored in the
//!   binary container of [`crate::dataset`].
//! * [`BackendKind::BuiltinLowLevel`]: a 12-dimensional luminance/gradient
//!   descriptor computed here.
//! * [`BackendKind::ExternalModel`]: any model reachable through the
//!   [`PatchModel`] trait, typically a subprocess speaking the line protocol
//!   implemented by [`LineProtocolModel`].
//!
//! # Line protocol
//!
//! One request per patch, one JSON object per line on the model's stdin:
//!
//! ```json
//! {"layer_tag": "pool5", "shape": [3, 224, 224], "data": [ ... ]}
//! ```
//!
//! `data` holds raw `0..=255` samples as floats in channel-major (CHW) order.
//! Mean subtraction, channel order and scaling belong to the model side,
//! which should describe them in its `extractor_tag`. The model answers with
//! one line, either a feature vector, a stack of feature maps (reduced here by
//! global average pooling over spatial positions), or an error:
//!
//! ```json
//! {"features": [0.1, 0.2]}
//! {"feature_maps": {"shape": [2048, 7, 7], "data": [ ... ]}}
//! {"error": "unknown layer"}
//! ```

use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, FeatureFile, IngestError};
use crate::layout::{self, LayoutError, PatchGrid, PatchSpec, PlannedPatch, RepresentationMode, RepresentationPlan};

/// Width of the builtin low-level descriptor.
pub const BUILTIN_DIM: usize = 12;
pub const BUILTIN_EXTRACTOR_TAG: &str = "builtin-lowlevel-v1";
pub const BUILTIN_LAYER_TAG: &str = "luma-gradient";

/// Upper edges of the gradient-magnitude histogram bins; the last bin is open.
const HIST_EDGES: [f64; 5] = [1.0, 4.0, 16.0, 64.0, 256.0];

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("external model backend is not configured")]
    BackendUnavailable,
    #[error("backend emitted {got} values per patch, configuration expects {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("backend {0:?} cannot extract from pixels")]
    WrongBackend(BackendKind),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid feature set: {0}")]
    InvalidFeatureSet(String),
    #[error("external model protocol error: {0}")]
    Protocol(String),
    #[error("external model reported: {0}")]
    Model(String),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    FromFile,
    BuiltinLowLevel,
    ExternalModel,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub backend: BackendKind,
    /// Model identity, including any preprocessing it applies.
    pub extractor_tag: String,
    /// Layer the features are read from.
    pub layer_tag: String,
    /// Feature width per patch.
    pub dim: usize,
    pub patch_spec: PatchSpec,
    #[serde(default)]
    pub representation: RepresentationMode,
}

impl ExtractorConfig {
    pub fn builtin(patch_spec: PatchSpec) -> Self {
        Self {
            backend: BackendKind::BuiltinLowLevel,
            extractor_tag: BUILTIN_EXTRACTOR_TAG.into(),
            layer_tag: BUILTIN_LAYER_TAG.into(),
            dim: BUILTIN_DIM,
            patch_spec,
            representation: RepresentationMode::MultiPatch,
        }
    }

    pub fn external(extractor_tag: impl Into<String>, layer_tag: impl Into<String>, dim: usize, patch_spec: PatchSpec) -> Self {
        Self {
            backend: BackendKind::ExternalModel,
            extractor_tag: extractor_tag.into(),
            layer_tag: layer_tag.into(),
            dim,
            patch_spec,
            representation: RepresentationMode::MultiPatch,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.extractor_tag.is_empty() || self.layer_tag.is_empty() {
            return Err(BackendError::InvalidFeatureSet("extractor and layer tags must be non-empty".into()));
        }
        if self.dim == 0 {
            return Err(BackendError::InvalidFeatureSet("dim must be positive".into()));
        }
        if self.backend == BackendKind::BuiltinLowLevel && self.dim != BUILTIN_DIM {
            return Err(BackendError::DimMismatch { expected: self.dim, got: BUILTIN_DIM });
        }
        self.patch_spec.validate()?;
        Ok(())
    }
}

/// The `n × l` patch feature matrix of one image, rows in patch order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub image_id: String,
    pub features: Array2<f64>,
    pub config: ExtractorConfig,
}

impl FeatureSet {
    pub fn new(image_id: impl Into<String>, features: Array2<f64>, config: ExtractorConfig) -> Result<Self, BackendError> {
        let fs = Self { image_id: image_id.into(), features, config };
        fs.validate()?;
        Ok(fs)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.features.nrows() == 0 {
            return Err(BackendError::InvalidFeatureSet("feature set has no patches".into()));
        }
        if self.features.ncols() != self.config.dim {
            return Err(BackendError::DimMismatch { expected: self.config.dim, got: self.features.ncols() });
        }
        if !self.features.iter().all(|v| v.is_finite()) {
            return Err(BackendError::InvalidFeatureSet(format!("{}: non-finite feature value", self.image_id)));
        }
        Ok(())
    }

    pub fn n_patches(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Container form; values are narrowed to `f32`.
    pub fn to_feature_file(&self) -> FeatureFile {
        FeatureFile {
            image_id: self.image_id.clone(),
            extractor_tag: self.config.extractor_tag.clone(),
            layer_tag: self.config.layer_tag.clone(),
            n_patches: self.n_patches(),
            dim: self.dim(),
            aggregate: None,
            provenance: None,
            values: self.features.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn from_feature_file(f: FeatureFile) -> Result<Self, BackendError> {
        f.validate()?;
        let config = ExtractorConfig {
            backend: BackendKind::FromFile,
            extractor_tag: f.extractor_tag,
            layer_tag: f.layer_tag,
            dim: f.dim,
            patch_spec: PatchSpec::default(),
            representation: RepresentationMode::MultiPatch,
        };
        let values: Vec<f64> = f.values.iter().map(|&v| f64::from(v)).collect();
        let features = Array2::from_shape_vec((f.n_patches, f.dim), values)
            .map_err(|e| BackendError::InvalidFeatureSet(e.to_string()))?;
        Self::new(f.image_id, features, config)
    }
}

pub fn from_file(path: impl AsRef<Path>) -> Result<FeatureSet, BackendError> {
    FeatureSet::from_feature_file(dataset::read_feature_file(path)?)
}

pub fn write_feature_set(fs: &FeatureSet, path: impl AsRef<Path>) -> Result<(), BackendError> {
    dataset::write_feature_file(&fs.to_feature_file(), path)?;
    Ok(())
}

/// Decoded 8-bit image, row-major, interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImage {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub pixels: Vec<u8>,
}

impl RawImage {
    pub fn new(width: u32, height: u32, channels: u8, pixels: Vec<u8>) -> Result<Self, BackendError> {
        if width == 0 || height == 0 {
            return Err(BackendError::InvalidImage("zero-sized image".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(BackendError::InvalidImage(format!("{channels} channels, expected 1 or 3")));
        }
        let expected = width as usize * height as usize * channels as usize;
        if pixels.len() != expected {
            return Err(BackendError::InvalidImage(format!("{} samples, expected {expected}", pixels.len())));
        }
        Ok(Self { width, height, channels, pixels })
    }

    pub fn gray(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, BackendError> {
        Self::new(width, height, 1, pixels)
    }

    pub fn dims(&self) -> layout::ImageDims {
        layout::ImageDims { width: self.width, height: self.height }
    }

    /// Luminance plane; three-channel input uses Rec. 601 weights.
    pub fn luminance(&self) -> Vec<f64> {
        match self.channels {
            1 => self.pixels.iter().map(|&p| f64::from(p)).collect(),
            _ => self
                .pixels
                .chunks_exact(3)
                .map(|c| 0.299 * f64::from(c[0]) + 0.587 * f64::from(c[1]) + 0.114 * f64::from(c[2]))
                .collect(),
        }
    }

    /// Decodes PGM/PPM (and PNG/JPEG) files.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let img = image::open(path.as_ref())
            .map_err(|e| BackendError::InvalidImage(format!("{}: {e}", path.as_ref().display())))?;
        let (w, h) = (img.width(), img.height());
        if img.color().has_color() {
            Self::new(w, h, 3, img.to_rgb8().into_raw())
        } else {
            Self::new(w, h, 1, img.to_luma8().into_raw())
        }
    }

    /// Writes binary PGM (one channel) or PPM (three channels).
    pub fn save_pnm(&self, path: impl AsRef<Path>) -> Result<(), BackendError> {
        let mut out = io::BufWriter::new(std::fs::File::create(path)?);
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        write!(out, "{magic}\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.pixels)?;
        out.flush()?;
        Ok(())
    }
}

/// One rendered network input: `size × size` pixels, channel-major floats.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchTensor {
    pub size: u32,
    pub channels: u8,
    /// `channels * size * size` samples in CHW order.
    pub data: Vec<f32>,
}

impl PatchTensor {
    /// Luminance plane of the patch, row-major.
    pub fn luminance(&self) -> Vec<f64> {
        let plane = (self.size * self.size) as usize;
        if self.channels == 1 {
            return self.data.iter().map(|&v| f64::from(v)).collect();
        }
        (0..plane)
            .map(|i| {
                0.299 * f64::from(self.data[i])
                    + 0.587 * f64::from(self.data[plane + i])
                    + 0.114 * f64::from(self.data[2 * plane + i])
            })
            .collect()
    }
}

/// Renders one planned patch: copy or bilinear resample, then zero padding.
pub fn render_patch(image: &RawImage, planned: &PlannedPatch, patch_size: u32) -> PatchTensor {
    let c = image.channels as usize;
    let size = patch_size as usize;
    let mut data = vec![0f32; c * size * size];
    let src = planned.source;
    let (cw, ch) = (planned.content_width as usize, planned.content_height as usize);
    let sample = |x: usize, y: usize, k: usize| -> f32 {
        f32::from(image.pixels[(y * image.width as usize + x) * c + k])
    };
    match planned.resample {
        None => {
            for y in 0..ch.min(size) {
                for x in 0..cw.min(size) {
                    for k in 0..c {
                        data[k * size * size + y * size + x] = sample(src.x as usize + x, src.y as usize + y, k);
                    }
                }
            }
        }
        Some(layout::Resample::Bilinear) => {
            let sx = src.width as f64 / cw as f64;
            let sy = src.height as f64 / ch as f64;
            for y in 0..ch {
                let (y0, y1, fy) = bilinear_taps(y, sy, src.height as usize);
                for x in 0..cw {
                    let (x0, x1, fx) = bilinear_taps(x, sx, src.width as usize);
                    for k in 0..c {
                        let at = |xx: usize, yy: usize| f64::from(sample(src.x as usize + xx, src.y as usize + yy, k));
                        let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                        let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                        data[k * size * size + y * size + x] = (top * (1.0 - fy) + bottom * fy) as f32;
                    }
                }
            }
        }
    }
    PatchTensor { size: patch_size, channels: image.channels, data }
}

/// Half-pixel-centre mapping of destination index `i` into a source axis.
fn bilinear_taps(i: usize, scale: f64, extent: usize) -> (usize, usize, f64) {
    let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (extent - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(extent - 1);
    (lo, hi, pos - lo as f64)
}

/// Anything that maps a rendered patch to a feature vector.
pub trait PatchModel {
    fn infer(&mut self, patch: &PatchTensor, layer_tag: &str) -> Result<Vec<f32>, BackendError>;
}

/// Twelve luminance statistics of a square patch (row-major, `size × size`):
///
/// 0. mean luminance
/// 1. luminance standard deviation (divisor n)
/// 2. mean absolute horizontal forward difference
/// 3. mean absolute vertical forward difference
/// 4. gradient energy: mean squared horizontal plus mean squared vertical difference
/// 5. mean squared 4-neighbour Laplacian over interior pixels divided by the
///    variance (0 for a constant patch)
/// 6. to 11. normalized histogram of forward-difference gradient magnitudes
///    with bin edges 1, 4, 16, 64, 256 (all zeros for a constant patch)
pub fn builtin_lowlevel_features(lum: &[f64], size: usize) -> Vec<f64> {
    assert!(size >= 2, "patch must be at least 2x2");
    assert_eq!(lum.len(), size * size, "patch buffer must be size*size");
    let at = |x: usize, y: usize| lum[y * size + x];
    let n = lum.len() as f64;
    let mean = lum.iter().sum::<f64>() / n;
    let var = lum.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;

    let pairs = (size * (size - 1)) as f64;
    let (mut abs_h, mut abs_v, mut sq_h, mut sq_v) = (0.0, 0.0, 0.0, 0.0);
    for y in 0..size {
        for x in 0..size - 1 {
            let d = at(x + 1, y) - at(x, y);
            abs_h += d.abs();
            sq_h += d * d;
        }
    }
    for y in 0..size - 1 {
        for x in 0..size {
            let d = at(x, y + 1) - at(x, y);
            abs_v += d.abs();
            sq_v += d * d;
        }
    }
    let grad_energy = sq_h / pairs + sq_v / pairs;

    let hf_ratio = if var > 0.0 && size >= 3 {
        let mut lap_sq = 0.0;
        for y in 1..size - 1 {
            for x in 1..size - 1 {
                let l = at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1) - 4.0 * at(x, y);
                lap_sq += l * l;
            }
        }
        lap_sq / ((size - 2) * (size - 2)) as f64 / var
    } else {
        0.0
    };

    let mut hist = [0f64; 6];
    if var > 0.0 {
        for y in 0..size - 1 {
            for x in 0..size - 1 {
                let gx = at(x + 1, y) - at(x, y);
                let gy = at(x, y + 1) - at(x, y);
                let mag = (gx * gx + gy * gy).sqrt();
                let bin = HIST_EDGES.iter().position(|&edge| mag < edge).unwrap_or(HIST_EDGES.len());
                hist[bin] += 1.0;
            }
        }
        let total: f64 = hist.iter().sum();
        hist.iter_mut().for_each(|h| *h /= total);
    }

    let mut out = Vec::with_capacity(BUILTIN_DIM);
    out.extend_from_slice(&[mean, var.sqrt(), abs_h / pairs, abs_v / pairs, grad_energy, hf_ratio]);
    out.extend_from_slice(&hist);
    out
}

/// Extracts features on the multi-patch grid with a pixel backend that
/// needs no external session.
pub fn extract(image_id: &str, image: &RawImage, grid: &PatchGrid, cfg: &ExtractorConfig) -> Result<FeatureSet, BackendError> {
    check_grid(image, grid)?;
    extract_plan(image_id, image, &RepresentationPlan::from_grid(grid), cfg, None)
}

/// Like [`extract`], routing patches through an external model session.
pub fn extract_with_model(
    image_id: &str,
    image: &RawImage,
    grid: &PatchGrid,
    cfg: &ExtractorConfig,
    model: &mut dyn PatchModel,
) -> Result<FeatureSet, BackendError> {
    check_grid(image, grid)?;
    extract_plan(image_id, image, &RepresentationPlan::from_grid(grid), cfg, Some(model))
}

fn check_grid(image: &RawImage, grid: &PatchGrid) -> Result<(), BackendError> {
    let ps = grid.spec.patch_size;
    if grid.origins.iter().any(|&(x, y)| x + ps > image.width || y + ps > image.height) {
        return Err(BackendError::InvalidImage("patch grid exceeds image bounds".into()));
    }
    Ok(())
}

/// Extracts one feature row per planned patch, in plan order.
pub fn extract_plan(
    image_id: &str,
    image: &RawImage,
    plan: &RepresentationPlan,
    cfg: &ExtractorConfig,
    mut model: Option<&mut dyn PatchModel>,
) -> Result<FeatureSet, BackendError> {
    cfg.validate()?;
    if plan.patches.is_empty() {
        return Err(BackendError::InvalidFeatureSet("empty representation plan".into()));
    }
    let mut values = Vec::with_capacity(plan.patches.len() * cfg.dim);
    for planned in &plan.patches {
        let patch = render_patch(image, planned, plan.patch_size);
        let row: Vec<f64> = match cfg.backend {
            BackendKind::BuiltinLowLevel => builtin_lowlevel_features(&patch.luminance(), patch.size as usize),
            BackendKind::ExternalModel => {
                let m = model.as_deref_mut().ok_or(BackendError::BackendUnavailable)?;
                m.infer(&patch, &cfg.layer_tag)?.into_iter().map(f64::from).collect()
            }
            BackendKind::FromFile => return Err(BackendError::WrongBackend(BackendKind::FromFile)),
        };
        if row.len() != cfg.dim {
            return Err(BackendError::DimMismatch { expected: cfg.dim, got: row.len() });
        }
        values.extend(row);
    }
    let features = Array2::from_shape_vec((plan.patches.len(), cfg.dim), values)
        .map_err(|e| BackendError::InvalidFeatureSet(e.to_string()))?;
    FeatureSet::new(image_id, features, cfg.clone())
}

#[derive(Serialize)]
struct ProtocolRequest<'a> {
    layer_tag: &'a str,
    shape: [u32; 3],
    data: &'a [f32],
}

#[derive(Deserialize)]
struct FeatureMaps {
    shape: Vec<usize>,
    data: Vec<f32>,
}

#[derive(Deserialize)]
struct ProtocolResponse {
    features: Option<Vec<f32>>,
    feature_maps: Option<FeatureMaps>,
    error: Option<String>,
}

/// Global average pooling of a `C × H × W` stack into a `C`-vector.
pub fn global_average_pool(shape: &[usize], data: &[f32]) -> Result<Vec<f32>, BackendError> {
    let (channels, spatial) = match shape {
        [c, rest @ ..] if !rest.is_empty() => (*c, rest.iter().product::<usize>()),
        _ => return Err(BackendError::Protocol(format!("feature map shape {shape:?} needs at least two axes"))),
    };
    if spatial == 0 || data.len() != channels * spatial {
        return Err(BackendError::Protocol(format!(
            "feature map shape {shape:?} does not match {} values",
            data.len()
        )));
    }
    Ok(data
        .chunks_exact(spatial)
        .map(|plane| (plane.iter().map(|&v| f64::from(v)).sum::<f64>() / spatial as f64) as f32)
        .collect())
}

/// Client side of the line protocol over any reader/writer pair.
pub struct LineProtocolModel<R, W> {
    reader: R,
    writer: W,
    line: String,
}

impl<R: BufRead, W: Write> LineProtocolModel<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        Self { reader, writer, line: String::new() }
    }
}

impl<R: BufRead, W: Write> PatchModel for LineProtocolModel<R, W> {
    fn infer(&mut self, patch: &PatchTensor, layer_tag: &str) -> Result<Vec<f32>, BackendError> {
        let req = ProtocolRequest {
            layer_tag,
            shape: [u32::from(patch.channels), patch.size, patch.size],
            data: &patch.data,
        };
        serde_json::to_writer(&mut self.writer, &req).map_err(|e| BackendError::Protocol(e.to_string()))?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;

        self.line.clear();
        if self.reader.read_line(&mut self.line)? == 0 {
            return Err(BackendError::Protocol("model closed its output".into()));
        }
        let resp: ProtocolResponse =
            serde_json::from_str(&self.line).map_err(|e| BackendError::Protocol(format!("bad response: {e}")))?;
        match resp {
            ProtocolResponse { error: Some(msg), .. } => Err(BackendError::Model(msg)),
            ProtocolResponse { features: Some(v), .. } => Ok(v),
            ProtocolResponse { feature_maps: Some(m), .. } => global_average_pool(&m.shape, &m.data),
            _ => Err(BackendError::Protocol("response has neither features nor feature_maps".into())),
        }
    }
}

/// External model running as a child process.
pub struct SubprocessModel {
    child: Child,
    inner: LineProtocolModel<BufReader<ChildStdout>, io::BufWriter<ChildStdin>>,
}

impl SubprocessModel {
    /// Spawns `program args...` with piped stdin/stdout.
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, BackendError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().ok_or(BackendError::BackendUnavailable)?;
        let stdout = child.stdout.take().ok_or(BackendError::BackendUnavailable)?;
        Ok(Self {
            child,
            inner: LineProtocolModel::new(BufReader::new(stdout), io::BufWriter::new(stdin)),
        })
    }
}

impl PatchModel for SubprocessModel {
    fn infer(&mut self, patch: &PatchTensor, layer_tag: &str) -> Result<Vec<f32>, BackendError> {
        self.inner.infer(patch, layer_tag)
    }
}

impl Drop for SubprocessModel {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{compute_grid, represent, ImageDims};

    fn constant(w: u32, h: u32, v: u8) -> RawImage {
        RawImage::gray(w, h, vec![v; (w * h) as usize]).unwrap()
    }

    #[test]
    fn constant_patch_features() {
        let f = builtin_lowlevel_features(&vec![128.0; 16 * 16], 16);
        let mut expected = vec![128.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        expected.extend([0.0; 6]);
        assert_eq!(f, expected);
    }

    #[test]
    fn vertical_step_edge() {
        let size = 16;
        let lum: Vec<f64> = (0..size * size).map(|i| if i % size < size / 2 { 0.0 } else { 255.0 }).collect();
        let f = builtin_lowlevel_features(&lum, size);
        assert_eq!(f[0], 127.5);
        // one jump of 255 per row among 15 pairs
        assert!((f[2] - 255.0 / 15.0).abs() < 1e-12);
        assert_eq!(f[3], 0.0);
        assert!((f[4] - 255.0 * 255.0 / 15.0).abs() < 1e-9);
        let hist_sum: f64 = f[6..].iter().sum();
        assert!((hist_sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rgb_luminance_weights() {
        let img = RawImage::new(1, 1, 3, vec![100, 50, 200]).unwrap();
        let l = img.luminance()[0];
        assert!((l - (29.9 + 29.35 + 22.8)).abs() < 1e-9);
    }

    #[test]
    fn constant_image_rows_identical() {
        let img = constant(64, 64, 90);
        let grid = compute_grid(img.dims(), PatchSpec::with_size(16).unwrap()).unwrap();
        let fs = extract("c", &img, &grid, &ExtractorConfig::builtin(grid.spec)).unwrap();
        assert_eq!(fs.n_patches(), 49);
        for row in fs.features.rows() {
            assert_eq!(row, fs.features.row(0));
        }
    }

    #[test]
    fn default_grid_gives_nine_rows() {
        let img = constant(448, 448, 10);
        let grid = compute_grid(img.dims(), PatchSpec::default()).unwrap();
        let fs = extract("c", &img, &grid, &ExtractorConfig::builtin(PatchSpec::default())).unwrap();
        assert_eq!(fs.n_patches(), 9);
        assert_eq!(fs.dim(), BUILTIN_DIM);
    }

    #[test]
    fn row_depends_only_on_patch_pixels() {
        // a textured 8x8 block embedded at (8, 8) of a larger noisy image
        let block: Vec<u8> = (0..64).map(|i| ((i * 37 + 11) % 251) as u8).collect();
        let mut pixels: Vec<u8> = (0..32 * 32).map(|i| ((i * 13 + 5) % 256) as u8).collect();
        for y in 0..8 {
            for x in 0..8 {
                pixels[(8 + y) * 32 + 8 + x] = block[y * 8 + x];
            }
        }
        let img = RawImage::gray(32, 32, pixels).unwrap();
        let spec = PatchSpec::with_size(8).unwrap();
        let grid = compute_grid(img.dims(), spec).unwrap();
        let fs = extract("e", &img, &grid, &ExtractorConfig::builtin(spec)).unwrap();
        let j = grid.origins.iter().position(|&o| o == (8, 8)).unwrap();

        let lum: Vec<f64> = block.iter().map(|&v| f64::from(v)).collect();
        let isolated = builtin_lowlevel_features(&lum, 8);
        assert_eq!(fs.features.row(j).to_vec(), isolated);
    }

    #[test]
    fn external_without_session_is_unavailable() {
        let img = constant(32, 32, 1);
        let spec = PatchSpec::with_size(16).unwrap();
        let grid = compute_grid(img.dims(), spec).unwrap();
        let cfg = ExtractorConfig::external("m", "pool5", 4, spec);
        assert!(matches!(extract("x", &img, &grid, &cfg), Err(BackendError::BackendUnavailable)));
    }

    struct Fixed(usize);
    impl PatchModel for Fixed {
        fn infer(&mut self, patch: &PatchTensor, _: &str) -> Result<Vec<f32>, BackendError> {
            Ok(vec![patch.data[0]; self.0])
        }
    }

    #[test]
    fn model_width_is_checked() {
        let img = constant(32, 32, 1);
        let spec = PatchSpec::with_size(16).unwrap();
        let grid = compute_grid(img.dims(), spec).unwrap();
        let cfg = ExtractorConfig::external("m", "pool5", 4, spec);
        let mut m = Fixed(3);
        assert!(matches!(
            extract_with_model("x", &img, &grid, &cfg, &mut m),
            Err(BackendError::DimMismatch { expected: 4, got: 3 })
        ));
        let mut m = Fixed(4);
        assert_eq!(extract_with_model("x", &img, &grid, &cfg, &mut m).unwrap().n_patches(), 9);
    }

    #[test]
    fn pad_render_zero_fills() {
        let img = constant(8, 4, 200);
        let plan = represent(ImageDims::new(8, 4).unwrap(), RepresentationMode::Pad, PatchSpec::new(4, 2).unwrap()).unwrap();
        let p = render_patch(&img, &plan.patches[0], 4);
        // content 4x2 resampled from a constant image, rows 2..4 are padding
        assert!(p.data[..8].iter().all(|&v| (v - 200.0).abs() < 1e-4));
        assert!(p.data[8..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scale_render_identity_when_sizes_match() {
        let pixels: Vec<u8> = (0..16).map(|i| i * 10).collect();
        let img = RawImage::gray(4, 4, pixels.clone()).unwrap();
        let plan = represent(img.dims(), RepresentationMode::Scale, PatchSpec::new(4, 2).unwrap()).unwrap();
        let p = render_patch(&img, &plan.patches[0], 4);
        let expected: Vec<f32> = pixels.iter().map(|&v| f32::from(v)).collect();
        assert_eq!(p.data, expected);
    }

    #[test]
    fn line_protocol_round_trip() {
        let responses = b"{\"features\":[1.0,2.0]}\n{\"feature_maps\":{\"shape\":[2,1,2],\"data\":[1,3,5,7]}}\n{\"error\":\"boom\"}\n";
        let mut sent = Vec::new();
        let patch = PatchTensor { size: 1, channels: 1, data: vec![7.0] };
        let mut m = LineProtocolModel::new(&responses[..], &mut sent);
        assert_eq!(m.infer(&patch, "fc6").unwrap(), vec![1.0, 2.0]);
        assert_eq!(m.infer(&patch, "fc6").unwrap(), vec![2.0, 6.0]);
        assert!(matches!(m.infer(&patch, "fc6"), Err(BackendError::Model(msg)) if msg == "boom"));
        assert!(matches!(m.infer(&patch, "fc6"), Err(BackendError::Protocol(_))));
        drop(m);
        let first: serde_json::Value = serde_json::from_slice(sent.split(|&b| b == b'\n').next().unwrap()).unwrap();
        assert_eq!(first["layer_tag"], "fc6");
        assert_eq!(first["shape"], serde_json::json!([1, 1, 1]));
    }

    #[test]
    fn pnm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = RawImage::gray(5, 3, (0..15).map(|i| i * 17).collect()).unwrap();
        let p = dir.path().join("a.pgm");
        img.save_pnm(&p).unwrap();
        assert_eq!(RawImage::open(&p).unwrap(), img);
        let rgb = RawImage::new(2, 2, 3, (0..12).map(|i| i * 20).collect()).unwrap();
        let p = dir.path().join("b.ppm");
        rgb.save_pnm(&p).unwrap();
        assert_eq!(RawImage::open(&p).unwrap(), rgb);
    }

    #[test]
    fn feature_set_file_round_trip() {
        let spec = PatchSpec::with_size(16).unwrap();
        let features = Array2::from_shape_fn((3, BUILTIN_DIM), |(i, j)| (i * 7 + j) as f64 * 0.25);
        let fs = FeatureSet::new("r", features, ExtractorConfig::builtin(spec)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.sfaf");
        write_feature_set(&fs, &p).unwrap();
        let back = from_file(&p).unwrap();
        assert_eq!(back.features, fs.features);
        assert_eq!(back.config.backend, BackendKind::FromFile);
        assert_eq!(back.config.extractor_tag, BUILTIN_EXTRACTOR_TAG);
    }
}

//! Patch layouts: the overlapping multi-patch grid and the single-patch
//! crop/scale/pad representations.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const DEFAULT_PATCH_SIZE: u32 = 224;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Width,
    Height,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Width => "width",
            Axis::Height => "height",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LayoutError {
    #[error("image {axis} is smaller than the patch size")]
    ImageSmallerThanPatch { axis: Axis },
    #[error("image dimensions must be positive")]
    EmptyImage,
    #[error("invalid patch spec: {0}")]
    InvalidSpec(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageDims {
    pub width: u32,
    pub height: u32,
}

impl ImageDims {
    pub fn new(width: u32, height: u32) -> Result<Self, LayoutError> {
        if width == 0 || height == 0 {
            return Err(LayoutError::EmptyImage);
        }
        Ok(Self { width, height })
    }
}

/// Square patch size and sampling stride, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub patch_size: u32,
    pub stride: u32,
}

impl PatchSpec {
    /// Patch of the given size with the default half-patch stride.
    pub fn with_size(patch_size: u32) -> Result<Self, LayoutError> {
        Self::new(patch_size, (patch_size / 2).max(1))
    }

    pub fn new(patch_size: u32, stride: u32) -> Result<Self, LayoutError> {
        let spec = Self { patch_size, stride };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), LayoutError> {
        if self.patch_size == 0 || self.stride == 0 {
            return Err(LayoutError::InvalidSpec("patch size and stride must be positive".into()));
        }
        if self.stride > self.patch_size {
            return Err(LayoutError::InvalidSpec(format!(
                "stride {} exceeds patch size {}",
                self.stride, self.patch_size
            )));
        }
        Ok(())
    }
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self { patch_size: DEFAULT_PATCH_SIZE, stride: DEFAULT_PATCH_SIZE / 2 }
    }
}

/// Top-left corners of the patches covering one image, sorted row-major.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub dims: ImageDims,
    pub spec: PatchSpec,
    pub origins: Vec<(u32, u32)>,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }
}

/// Origins along one axis: `0, stride, 2*stride, ...` with the last one
/// clamped to `extent - patch` so the far edge is always covered.
pub fn axis_origins(extent: u32, patch: u32, stride: u32) -> Vec<u32> {
    debug_assert!(extent >= patch && stride > 0);
    let last = extent - patch;
    let mut out: Vec<u32> = (0..=last).step_by(stride as usize).collect();
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

pub fn compute_grid(dims: ImageDims, spec: PatchSpec) -> Result<PatchGrid, LayoutError> {
    spec.validate()?;
    if dims.width < spec.patch_size {
        return Err(LayoutError::ImageSmallerThanPatch { axis: Axis::Width });
    }
    if dims.height < spec.patch_size {
        return Err(LayoutError::ImageSmallerThanPatch { axis: Axis::Height });
    }
    let xs = axis_origins(dims.width, spec.patch_size, spec.stride);
    let ys = axis_origins(dims.height, spec.patch_size, spec.stride);
    let origins = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect();
    Ok(PatchGrid { dims, spec, origins })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepresentationMode {
    #[default]
    #[serde(alias = "multi-patch")]
    MultiPatch,
    Crop,
    Scale,
    Pad,
}

impl std::str::FromStr for RepresentationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "multipatch" | "multi-patch" | "multi_patch" => Ok(Self::MultiPatch),
            "crop" => Ok(Self::Crop),
            "scale" => Ok(Self::Scale),
            "pad" => Ok(Self::Pad),
            other => Err(format!("unknown representation {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resample {
    Bilinear,
}

/// One network input: a source rectangle, optionally resampled to
/// `content_width × content_height` and placed at the top-left of a zeroed
/// `patch_size × patch_size` canvas.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedPatch {
    pub source: Rect,
    pub content_width: u32,
    pub content_height: u32,
    pub resample: Option<Resample>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepresentationPlan {
    pub mode: RepresentationMode,
    pub patch_size: u32,
    pub patches: Vec<PlannedPatch>,
}

impl RepresentationPlan {
    pub fn from_grid(grid: &PatchGrid) -> Self {
        let ps = grid.spec.patch_size;
        Self {
            mode: RepresentationMode::MultiPatch,
            patch_size: ps,
            patches: grid
                .origins
                .iter()
                .map(|&(x, y)| PlannedPatch {
                    source: Rect { x, y, width: ps, height: ps },
                    content_width: ps,
                    content_height: ps,
                    resample: None,
                })
                .collect(),
        }
    }
}

pub fn represent(
    dims: ImageDims,
    mode: RepresentationMode,
    spec: PatchSpec,
) -> Result<RepresentationPlan, LayoutError> {
    spec.validate()?;
    let ps = spec.patch_size;
    let whole = Rect { x: 0, y: 0, width: dims.width, height: dims.height };
    let single = |patch: PlannedPatch| RepresentationPlan { mode, patch_size: ps, patches: vec![patch] };
    match mode {
        RepresentationMode::MultiPatch => compute_grid(dims, spec).map(|g| RepresentationPlan::from_grid(&g)),
        RepresentationMode::Crop => {
            if dims.width < ps {
                return Err(LayoutError::ImageSmallerThanPatch { axis: Axis::Width });
            }
            if dims.height < ps {
                return Err(LayoutError::ImageSmallerThanPatch { axis: Axis::Height });
            }
            Ok(single(PlannedPatch {
                source: Rect { x: (dims.width - ps) / 2, y: (dims.height - ps) / 2, width: ps, height: ps },
                content_width: ps,
                content_height: ps,
                resample: None,
            }))
        }
        RepresentationMode::Scale => Ok(single(PlannedPatch {
            source: whole,
            content_width: ps,
            content_height: ps,
            resample: Some(Resample::Bilinear),
        })),
        RepresentationMode::Pad => {
            let (w, h) = (dims.width as u64, dims.height as u64);
            let long = w.max(h);
            let fit = |side: u64| (((side * ps as u64) as f64 / long as f64).round() as u32).clamp(1, ps);
            Ok(single(PlannedPatch {
                source: whole,
                content_width: fit(w),
                content_height: fit(h),
                resample: Some(Resample::Bilinear),
            }))
        }
    }
}

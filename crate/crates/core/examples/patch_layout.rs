//! Patch grids and the single-patch representations for a few image sizes.
//!
//! ```text
//! cargo run --example patch_layout
//! ```

use sfa_iqa::layout::{self, ImageDims, PatchSpec, RepresentationMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = PatchSpec::default();
    for (w, h) in [(1280, 960), (500, 375), (224, 224)] {
        let grid = layout::compute_grid(ImageDims::new(w, h)?, spec)?;
        let xs = layout::axis_origins(w, spec.patch_size, spec.stride);
        println!("{w}x{h}: {} patches, x origins {xs:?}", grid.len());
    }

    let dims = ImageDims::new(500, 375)?;
    for mode in [RepresentationMode::Crop, RepresentationMode::Scale, RepresentationMode::Pad] {
        let plan = layout::represent(dims, mode, spec)?;
        let p = &plan.patches[0];
        println!(
            "{mode:?}: source {}x{} at ({}, {}) -> content {}x{}",
            p.source.width, p.source.height, p.source.x, p.source.y, p.content_width, p.content_height
        );
    }
    Ok(())
}

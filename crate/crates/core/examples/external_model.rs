//! Extracts features through an external model process speaking the line
//! protocol. The bundled `assets/patch_stats.py` answers layer `stats` with
//! a vector and layer `maps` with feature maps that get average pooled.
//!
//! ```text
//! cargo run --example external_model
//! ```

use std::path::Path;

use sfa_iqa::backend::{self, ExtractorConfig, SubprocessModel};
use sfa_iqa::layout::{compute_grid, PatchSpec};
use sfa_iqa::synthetic::{self, Scene};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/patch_stats.py");
    let mut model = SubprocessModel::spawn("python3", &[script.display().to_string()])?;

    let image = synthetic::to_gray(&Scene::DeadLeaves.render(96, 64, 1), 96, 64)?;
    let spec = PatchSpec::new(32, 32)?;
    let grid = compute_grid(image.dims(), spec)?;
    for (layer, dim) in [("stats", 3), ("maps", 2)] {
        let cfg = ExtractorConfig::external("patch_stats", layer, dim, spec);
        let fs = backend::extract_with_model("leaves", &image, &grid, &cfg, &mut model)?;
        println!("layer {layer}: {:?}", fs.features.dim());
        for row in fs.features.rows() {
            let v: Vec<String> = row.iter().map(|x| format!("{x:7.2}")).collect();
            println!("  {}", v.join(" "));
        }
    }
    Ok(())
}

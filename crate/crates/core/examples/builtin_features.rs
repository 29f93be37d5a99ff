//! Builtin low-level patch features on one texture at increasing blur.
//! Gradient energy (column 4) falls as the blur grows.
//!
//! ```text
//! cargo run --example builtin_features
//! ```

use sfa_iqa::backend::{self, ExtractorConfig};
use sfa_iqa::layout::{compute_grid, PatchSpec};
use sfa_iqa::synthetic::{self, Scene};

const NAMES: [&str; 6] = ["mean", "std", "|dx|", "|dy|", "energy", "hf"];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = PatchSpec::new(32, 16)?;
    let cfg = ExtractorConfig::builtin(spec);
    let plane = Scene::DeadLeaves.render(96, 96, 3);
    println!("sigma  {}", NAMES.map(|n| format!("{n:>8}")).join(""));
    for sigma in [0.0, 1.0, 2.0, 4.0] {
        let image = synthetic::to_gray(&synthetic::gaussian_blur(&plane, 96, 96, sigma), 96, 96)?;
        let grid = compute_grid(image.dims(), spec)?;
        let fs = backend::extract("scene", &image, &grid, &cfg)?;
        let mean = fs.features.mean_axis(ndarray::Axis(0)).expect("non-empty");
        let cols: String = mean.iter().take(NAMES.len()).map(|v| format!("{v:>8.2}")).collect();
        println!("{sigma:>5.1}  {cols}");
    }
    Ok(())
}

//! Writes per-patch and aggregated feature files and reads them back.
//!
//! ```text
//! cargo run --example feature_files -- /tmp/sfa-features
//! ```

use std::path::PathBuf;

use sfa_iqa::aggregate::{self, AggregateKind};
use sfa_iqa::backend::{self, ExtractorConfig};
use sfa_iqa::dataset;
use sfa_iqa::layout::{compute_grid, PatchSpec};
use sfa_iqa::synthetic::{self, Scene};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("sfa-features"), PathBuf::from);
    std::fs::create_dir_all(&dir)?;

    let image = synthetic::to_gray(&Scene::Texture.render(128, 96, 8), 128, 96)?;
    let spec = PatchSpec::new(64, 32)?;
    let fs = backend::extract("texture", &image, &compute_grid(image.dims(), spec)?, &ExtractorConfig::builtin(spec))?;

    let patch_path = dir.join("texture.sfaf");
    backend::write_feature_set(&fs, &patch_path)?;
    let back = backend::from_file(&patch_path)?;
    println!("{}: {} patches x {} dims, identical {}", patch_path.display(), back.n_patches(), back.dim(), back.features == fs.features.mapv(|v| f64::from(v as f32)));

    let agg = aggregate::aggregate(AggregateKind::Moment, &fs)?;
    let agg_path = dir.join("texture.moment.sfaf");
    dataset::write_feature_file(&agg.to_feature_file(&fs), &agg_path)?;
    let file = dataset::read_feature_file(&agg_path)?;
    println!("{}: aggregate {:?}, {} values", agg_path.display(), file.aggregate, file.values.len());
    Ok(())
}

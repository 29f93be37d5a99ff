//! Median performance as the training share grows from 10% to 90%.
//!
//! ```text
//! cargo run --release --example ratio_sweep
//! ```

use sfa_iqa::evaluation::{self, HarnessConfig};
use sfa_iqa::layout::PatchSpec;
use sfa_iqa::plsr::PlsrConfig;
use sfa_iqa::synthetic::{self, Scene};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sigmas = [0.0, 0.75, 1.5, 2.25, 3.0];
    let (manifest, features) = synthetic::blur_feature_corpus(Scene::DeadLeaves, 30, &sigmas, 64, PatchSpec::new(32, 16)?, 5)?;
    // p = 5 keeps the smallest training split (3 contents, 15 images) fittable
    let cfg = HarnessConfig { plsr: PlsrConfig::with_components(5), ..HarnessConfig::default() };
    let ratios: Vec<f64> = (1..=9).map(|i| f64::from(i) / 10.0).collect();
    let rows = evaluation::ratio_sweep(&manifest, &features, &cfg, &ratios, 50, 3)?;
    print!("{}", evaluation::sweep_csv(&rows));
    Ok(())
}

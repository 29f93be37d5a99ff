//! Repeated content-disjoint 80/20 evaluation on a synthetic blur corpus.
//!
//! ```text
//! cargo run --release --example montecarlo -- 200
//! ```

use sfa_iqa::evaluation::{self, HarnessConfig};
use sfa_iqa::layout::PatchSpec;
use sfa_iqa::synthetic::{self, Scene};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let runs = std::env::args().nth(1).map_or(Ok(100), |s| s.parse())?;
    let sigmas = [0.0, 0.75, 1.5, 2.25, 3.0];
    let (manifest, features) = synthetic::blur_feature_corpus(Scene::DeadLeaves, 30, &sigmas, 64, PatchSpec::new(32, 16)?, 9)?;

    let summary = evaluation::montecarlo_eval(&manifest, &features, &HarnessConfig::default(), runs, 42)?;
    let m = summary.median;
    println!("{} runs, median srocc {:.4} plcc {:.4} rmse {:.4}", summary.n_runs, m.srocc, m.plcc, m.rmse);
    for (kind, sub) in summary.kinds.iter().zip(&summary.sub_model_median) {
        println!("  {:<9} srocc {:.4}", kind.name(), sub.srocc);
    }
    if let Some(or) = summary.median_outlier_ratio {
        println!("median outlier ratio {or:.3}");
    }
    Ok(())
}

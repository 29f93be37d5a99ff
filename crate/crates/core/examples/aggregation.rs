//! The five aggregation structures applied to a small feature matrix.
//!
//! ```text
//! cargo run --example aggregation
//! ```

use ndarray::array;
use sfa_iqa::aggregate::{self, AggregateKind};
use sfa_iqa::backend::{ExtractorConfig, FeatureSet};
use sfa_iqa::layout::PatchSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // four patches, two features each
    let m = array![[1.0, 10.0], [2.0, 20.0], [4.0, 5.0], [9.0, 0.0]];
    let cfg = ExtractorConfig::external("toy", "none", 2, PatchSpec::default());
    let fs = FeatureSet::new("toy", m, cfg)?;
    for kind in [AggregateKind::Mean, AggregateKind::MeanStd, AggregateKind::Quantile, AggregateKind::Moment, AggregateKind::Concat] {
        let agg = aggregate::aggregate(kind, &fs)?;
        let values: Vec<String> = agg.values.iter().map(|v| format!("{v:.3}")).collect();
        println!("{:<9} len {:>2}: {}", kind.name(), agg.values.len(), values.join(" "));
    }
    Ok(())
}

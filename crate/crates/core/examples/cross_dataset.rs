//! Trains on one synthetic dataset and tests on another with a different
//! scene family.
//!
//! ```text
//! cargo run --release --example cross_dataset
//! ```

use std::collections::BTreeMap;

use sfa_iqa::dataset::DatasetManifest;
use sfa_iqa::evaluation::{self, HarnessConfig};
use sfa_iqa::layout::PatchSpec;
use sfa_iqa::synthetic::{self, Scene};

fn renamed(prefix: &str, m: DatasetManifest, f: BTreeMap<String, sfa_iqa::FeatureSet>) -> (DatasetManifest, BTreeMap<String, sfa_iqa::FeatureSet>) {
    let mut m = m;
    for e in &mut m.entries {
        e.image_id = format!("{prefix}{}", e.image_id);
        e.content_id = format!("{prefix}{}", e.content_id);
    }
    let f = f.into_iter().map(|(id, mut fs)| {
        fs.image_id = format!("{prefix}{id}");
        (fs.image_id.clone(), fs)
    });
    (m, f.collect())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = PatchSpec::new(32, 16)?;
    let sigmas = [0.0, 1.0, 2.0, 3.0];
    let (a, fa) = synthetic::blur_feature_corpus(Scene::DeadLeaves, 30, &sigmas, 64, spec, 1)?;
    let (b, fb) = synthetic::blur_feature_corpus(Scene::Texture, 10, &sigmas, 64, spec, 2)?;
    let (b, fb) = renamed("tex_", b, fb);
    let mut features = fa;
    features.extend(fb);

    let cfg = HarnessConfig::default();
    for (name, train, test) in [("leaves -> leaves", &a, &a), ("leaves -> texture", &a, &b)] {
        let r = evaluation::cross_dataset_eval(train, test, &features, &cfg)?;
        println!("{name:<18} n {:>3}  srocc {:.4} plcc {:.4} rmse {:.4}", r.n_test, r.srocc, r.plcc, r.rmse);
    }
    Ok(())
}

//! Trains the three-structure ensemble on builtin features of blurred scenes
//! and scores held-out images.
//!
//! ```text
//! cargo run --release --example train_and_score
//! ```

use std::collections::BTreeMap;

use sfa_iqa::layout::PatchSpec;
use sfa_iqa::pipeline::{self, SfaModel};
use sfa_iqa::plsr::PlsrConfig;
use sfa_iqa::synthetic::{self, Scene};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sigmas = [0.0, 0.75, 1.5, 2.25, 3.0];
    let (manifest, features) = synthetic::blur_feature_corpus(Scene::DeadLeaves, 40, &sigmas, 64, PatchSpec::new(32, 16)?, 2)?;

    // first 30 contents train, the rest are held out
    let (train, test): (Vec<_>, Vec<_>) = manifest.entries.iter().partition(|e| e.content_id.as_str() < "c030");
    let scores: BTreeMap<String, f64> = train.iter().map(|e| (e.image_id.clone(), e.score)).collect();
    let train_features: BTreeMap<_, _> = train.iter().map(|e| (e.image_id.clone(), features[&e.image_id].clone())).collect();
    let model = pipeline::train_sfa(&train_features, &scores, &PlsrConfig::default())?;
    let model = SfaModel::from_json(&model.to_json())?;

    for e in test.iter().filter(|e| e.content_id == "c030") {
        let fs = &features[&e.image_id];
        let subs: Vec<String> = model.sub_scores(fs)?.iter().map(|s| format!("{s:.3}")).collect();
        println!("{}  mos {:.2}  predicted {:.3}  sub-models [{}]", e.image_id, e.score, pipeline::score_image(&model, fs)?, subs.join(", "));
    }
    Ok(())
}

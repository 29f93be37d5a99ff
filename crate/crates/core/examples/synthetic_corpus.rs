//! Writes a small blurred dead-leaves corpus (PGM files, manifest CSV and its
//! JSON sidecar) for trying out the `sfa` command line.
//!
//! ```text
//! cargo run --example synthetic_corpus -- /tmp/sfa-corpus
//! ```

use std::path::PathBuf;

use sfa_iqa::synthetic;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("sfa-corpus"), PathBuf::from);
    let sigmas = [0.0, 0.8, 1.6, 2.4, 3.2];
    let manifest = synthetic::write_blur_corpus(synthetic::Scene::DeadLeaves, &dir, 30, &sigmas, 96, 11)?;
    println!(
        "wrote {} images from {} contents to {}",
        manifest.entries.len(),
        manifest.content_groups().len(),
        dir.display()
    );
    println!("manifest: {}", dir.join("manifest.csv").display());
    Ok(())
}

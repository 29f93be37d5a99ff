use std::path::PathBuf;
use std::process::Command;

use sfa_iqa::backend::{self, BackendError, ExtractorConfig, RawImage, SubprocessModel};
use sfa_iqa::layout::{compute_grid, PatchSpec};

fn script() -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("assets/patch_stats.py").display().to_string()
}

fn python() -> Option<&'static str> {
    let ok = Command::new("python3").arg("--version").output().is_ok_and(|o| o.status.success());
    if !ok {
        eprintln!("python3 not found; skipping external model test");
    }
    ok.then_some("python3")
}

fn ramp(w: u32, h: u32) -> RawImage {
    RawImage::gray(w, h, (0..w * h).map(|i| ((i % w) * 255 / (w - 1)) as u8).collect()).unwrap()
}

#[test]
fn subprocess_vectors_and_maps() {
    let Some(py) = python() else { return };
    let image = ramp(32, 16);
    let spec = PatchSpec::new(16, 8).unwrap();
    let grid = compute_grid(image.dims(), spec).unwrap();
    let mut model = SubprocessModel::spawn(py, &[script()]).unwrap();

    let stats = ExtractorConfig::external("patch_stats", "stats", 3, spec);
    let fs = backend::extract_with_model("ramp", &image, &grid, &stats, &mut model).unwrap();
    assert_eq!(fs.features.dim(), (3, 3));
    let lum = image.luminance();
    for (row, &(x0, y0)) in grid.origins.iter().enumerate() {
        let vals: Vec<f64> = (y0..y0 + 16).flat_map(|y| (x0..x0 + 16).map(move |x| (y * 32 + x) as usize)).map(|i| lum[i]).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((fs.features[[row, 0]] - mean).abs() < 1e-3);
        assert_eq!(fs.features[[row, 1]], vals.iter().copied().fold(f64::INFINITY, f64::min));
        assert_eq!(fs.features[[row, 2]], vals.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }

    // pooled maps: channel 0 averages the quadrant means back to the patch mean
    let maps = ExtractorConfig::external("patch_stats", "maps", 2, spec);
    let pooled = backend::extract_with_model("ramp", &image, &grid, &maps, &mut model).unwrap();
    for row in 0..3 {
        assert!((pooled.features[[row, 0]] - fs.features[[row, 0]]).abs() < 1e-3);
    }

    let bad = ExtractorConfig::external("patch_stats", "fc7", 3, spec);
    assert!(matches!(backend::extract_with_model("ramp", &image, &grid, &bad, &mut model), Err(BackendError::Model(_))));
    let wrong_dim = ExtractorConfig::external("patch_stats", "stats", 4, spec);
    assert!(matches!(
        backend::extract_with_model("ramp", &image, &grid, &wrong_dim, &mut model),
        Err(BackendError::DimMismatch { expected: 4, got: 3 })
    ));
}

#[test]
fn cli_extract_through_subprocess() {
    let Some(py) = python() else { return };
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    sfa_iqa::synthetic::write_blur_corpus(sfa_iqa::synthetic::Scene::Texture, &corpus, 3, &[0.0, 1.0], 32, 4).unwrap();
    let out = dir.path().join("feat");
    let stdout = sfa_iqa::cli::run([
        "sfa",
        "extract",
        "--manifest",
        corpus.join("manifest.csv").to_str().unwrap(),
        "--backend",
        "external",
        "--model-cmd",
        &format!("{py} {}", script()),
        "--extractor-tag",
        "patch_stats",
        "--layer-tag",
        "stats",
        "--dim",
        "3",
        "--patch-size",
        "16",
        "--out",
        out.to_str().unwrap(),
    ])
    .unwrap();
    assert_eq!(stdout, "extracted 6 feature sets\n");
    let features = sfa_iqa::cli::load_features(&out.join("features")).unwrap();
    assert_eq!(features.len(), 6);
    for fs in features.values() {
        assert_eq!(fs.features.dim(), (9, 3));
        assert_eq!(fs.config.layer_tag, "stats");
    }
}

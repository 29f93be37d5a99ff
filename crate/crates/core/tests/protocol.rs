use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sfa_iqa::backend::{ExtractorConfig, FeatureSet};
use sfa_iqa::dataset::{DatasetManifest, ImageEntry, ManifestMeta, ScoreKind};
use sfa_iqa::evaluation::{self, HarnessConfig, LogisticParams};
use sfa_iqa::layout::PatchSpec;
use sfa_iqa::plsr::PlsrConfig;

const WEIGHTS: [f64; 3] = [1.0, -0.5, 2.0];

/// Five patches per image so the quartiles are the sorted patch values and
/// every aggregation structure carries the column means linearly.
fn planted(prefix: &str, n: usize, seed: u64) -> (DatasetManifest, BTreeMap<String, FeatureSet>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ExtractorConfig::external("planted", "none", 3, PatchSpec::default());
    let mut features = BTreeMap::new();
    let mut entries = Vec::new();
    for i in 0..n {
        let id = format!("{prefix}{i:03}");
        let m = Array2::from_shape_fn((5, 3), |_| rng.gen_range(0.0..10.0));
        let means = m.mean_axis(ndarray::Axis(0)).unwrap();
        let score = 3.0 + means.iter().zip(WEIGHTS).map(|(a, b)| a * b).sum::<f64>();
        features.insert(id.clone(), FeatureSet::new(&id, m, cfg.clone()).unwrap());
        entries.push(ImageEntry { image_id: id.clone(), path: format!("{id}.png"), score, content_id: id, excluded: false });
    }
    let meta = ManifestMeta { name: prefix.into(), score_kind: ScoreKind::Mos, score_range: (-100.0, 100.0) };
    (DatasetManifest::new(meta, entries).unwrap(), features)
}

fn harness(p: usize) -> HarnessConfig {
    HarnessConfig { plsr: PlsrConfig::with_components(p), ..HarnessConfig::default() }
}

#[test]
fn planted_montecarlo_is_near_perfect() {
    let (m, f) = planted("p", 100, 1);
    let s = evaluation::montecarlo_eval(&m, &f, &harness(6), 50, 3).unwrap();
    assert!(s.median.srocc >= 0.99, "{}", s.median.srocc);
    assert_eq!(s.runs.len(), 50);
    assert!(s.runs.iter().all(|r| r.n_train == 80 && r.n_test == 20));
}

#[test]
fn single_run_summary_is_that_run() {
    let (m, f) = planted("p", 30, 2);
    let s = evaluation::montecarlo_eval(&m, &f, &harness(4), 1, 9).unwrap();
    assert_eq!(s.median, s.runs[0].metrics);
    assert_eq!(s.mean, s.runs[0].metrics);
    assert_eq!(s.sub_model_median, s.runs[0].sub_models);
}

#[test]
fn cross_dataset_self_and_planted() {
    let (a, fa) = planted("a", 60, 3);
    let (b, fb) = planted("b", 40, 4);
    let mut all = fa.clone();
    all.extend(fb);

    let same = evaluation::cross_dataset_eval(&a, &a, &fa, &harness(6)).unwrap();
    let model = sfa_iqa::pipeline::train_sfa(&fa, &a.scores(), &PlsrConfig::with_components(6)).unwrap();
    let preds: Vec<f64> = a.active_entries().map(|e| sfa_iqa::pipeline::score_image(&model, &fa[&e.image_id]).unwrap()).collect();
    let subj: Vec<f64> = a.active_entries().map(|e| e.score).collect();
    assert_eq!(same.srocc, evaluation::srocc(&preds, &subj).unwrap());

    let cross = evaluation::cross_dataset_eval(&a, &b, &all, &harness(6)).unwrap();
    assert!(cross.srocc >= 0.99, "{}", cross.srocc);
    assert_eq!(cross.n_test, 40);
    assert!(cross.outlier_ratio.is_some());
    let csv = cross.band_csv();
    assert_eq!(csv.lines().count(), 41);
    assert!(csv.starts_with("image_id,subjective,objective,mapped,band_lo,band_hi"));
}

#[test]
fn sweep_single_ratio_matches_montecarlo() {
    let (m, f) = planted("p", 40, 5);
    let cfg = harness(4);
    let rows = evaluation::ratio_sweep(&m, &f, &cfg, &[0.8], 10, 2).unwrap();
    let direct = evaluation::montecarlo_eval(&m, &f, &cfg, 10, 2).unwrap();
    assert_eq!(rows[0].summary, direct);
    assert!(matches!(evaluation::ratio_sweep(&m, &f, &cfg, &[0.5, 1.0], 2, 2), Err(evaluation::EvalError::InvalidRatio(_))));
}

#[test]
fn sweep_plcc_grows_with_ratio() {
    let (mut m, f) = planted("p", 80, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    for e in &mut m.entries {
        e.score += rng.gen_range(-2.0..2.0);
    }
    let ratios: Vec<f64> = (1..=9).map(|i| f64::from(i) / 10.0).collect();
    let rows = evaluation::ratio_sweep(&m, &f, &harness(3), &ratios, 100, 7).unwrap();
    assert_eq!(evaluation::sweep_csv(&rows).lines().count(), 10);
    for w in rows.windows(2) {
        assert!(w[1].summary.median.plcc >= w[0].summary.median.plcc - 0.03, "{} -> {}", w[0].ratio, w[1].ratio);
    }
    assert!(rows[8].summary.median.plcc > rows[0].summary.median.plcc);
}

#[test]
fn one_outlier_in_twenty() {
    let p = LogisticParams { tau1: 5.0, tau2: 1.0, tau3: 0.0, tau4: -1.0 };
    let x: Vec<f64> = (0..20).map(|i| -3.0 + 0.3 * i as f64).collect();
    let mut y: Vec<f64> = x.iter().map(|&v| p.eval(v)).collect();
    y[10] += 1.0;

    let analysis = evaluation::outlier_analysis(&y, &x).unwrap();
    let residuals: Vec<f64> = y.iter().zip(&analysis.mapped).map(|(s, m)| s - m).collect();
    let mu = residuals.iter().sum::<f64>() / 20.0;
    let sigma = (residuals.iter().map(|r| (r - mu).powi(2)).sum::<f64>() / 20.0).sqrt();
    assert!((sigma - analysis.sigma).abs() < 1e-12);
    let flagged: Vec<usize> = (0..20).filter(|&i| residuals[i].abs() > 2.0 * sigma).collect();
    assert_eq!(flagged, vec![10]);
    assert_eq!(analysis.ratio, 0.05);
    let points: Vec<(f64, f64)> = y.iter().copied().zip(x.iter().copied()).collect();
    assert_eq!(evaluation::outlier_ratio(&points).unwrap(), 0.05);
}

#[test]
fn external_scores_use_logistic_mapping() {
    let (m, _) = planted("p", 30, 8);
    let objective: BTreeMap<String, f64> = m.entries.iter().map(|e| (e.image_id.clone(), (e.score / 10.0).tanh())).collect();
    let report = evaluation::evaluate_scores(&m, &objective).unwrap();
    assert!((report.srocc - 1.0).abs() < 1e-12);
    assert!(report.plcc > 0.99);
    assert!(report.logistic.is_some());
}

#[test]
fn bid_style_split_sizes() {
    let entries = (0..586)
        .map(|i| ImageEntry {
            image_id: format!("DatabaseImage{i:04}"),
            path: format!("{i}.JPG"),
            score: 2.5,
            content_id: format!("DatabaseImage{i:04}"),
            excluded: false,
        })
        .collect();
    let meta = ManifestMeta { name: "bid".into(), score_kind: ScoreKind::Mos, score_range: (0.0, 5.0) };
    let m = DatasetManifest::new(meta, entries).unwrap();
    for plan in evaluation::make_splits(&m, 0.8, 5, 1).unwrap() {
        assert_eq!((plan.train_ids.len(), plan.test_ids.len()), (469, 117));
    }
}

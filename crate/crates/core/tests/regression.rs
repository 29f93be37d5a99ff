use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use sfa_iqa::aggregate::AggregateKind;
use sfa_iqa::backend::{self, ExtractorConfig, FeatureSet};
use sfa_iqa::evaluation;
use sfa_iqa::layout::{compute_grid, PatchSpec};
use sfa_iqa::pipeline::{self, DescriptorTable, EnsembleRule};
use sfa_iqa::plsr::{self, PlsrConfig, PlsrError, DEFAULT_CANDIDATES};
use sfa_iqa::synthetic::{self, Scene};

fn ols_fitted(x: &Array2<f64>, y: &Array1<f64>) -> Vec<f64> {
    let (n, l) = x.dim();
    let m = DMatrix::from_fn(n, l + 1, |i, j| if j == l { 1.0 } else { x[[i, j]] });
    let v = DVector::from_iterator(n, y.iter().copied());
    let beta = (m.transpose() * &m).lu().solve(&(m.transpose() * v)).unwrap();
    (&m * beta).iter().copied().collect()
}

#[test]
fn full_rank_fit_matches_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = Array2::from_shape_fn((8, 5), |_| rng.gen_range(-2.0..2.0));
    let y = Array1::from_shape_fn(8, |_| rng.gen_range(-1.0..1.0));
    let model = plsr::fit(x.view(), y.view(), &PlsrConfig::with_components(5)).unwrap();
    let pls = plsr::predict_rows(&model, x.view()).unwrap();
    for (a, b) in pls.iter().zip(ols_fitted(&x, &y)) {
        assert!((a - b).abs() <= 1e-8 * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn planted_model_generalizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let w = [0.5, -1.0, 2.0, 0.25];
    let make = |rng: &mut ChaCha8Rng, n: usize| {
        let x = Array2::from_shape_fn((n, 4), |_| rng.gen_range(-3.0..3.0));
        let y = Array1::from_iter((0..n).map(|i| 1.5 + (0..4).map(|j| w[j] * x[[i, j]]).sum::<f64>()));
        (x, y)
    };
    let (xt, yt) = make(&mut rng, 40);
    let (xh, yh) = make(&mut rng, 10);
    let model = plsr::fit(xt.view(), yt.view(), &PlsrConfig::with_components(4)).unwrap();
    for (p, y) in plsr::predict_rows(&model, xh.view()).unwrap().iter().zip(&yh) {
        assert!((p - y).abs() < 1e-9);
    }
}

#[test]
fn selection_finds_latent_rank() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let noise = Normal::new(0.0, 1e-3).unwrap();
    let (n, l) = (60, 40);
    let factors = Array2::from_shape_fn((n, 3), |_| rng.gen_range(-1.0..1.0));
    let mixing = Array2::from_shape_fn((3, l), |_| rng.gen_range(-1.0..1.0));
    let x = factors.dot(&mixing) + Array2::from_shape_fn((n, l), |_| noise.sample(&mut rng));
    let y = factors.dot(&ndarray::arr1(&[1.0, -2.0, 0.5])) + Array1::from_shape_fn(n, |_| noise.sample(&mut rng));

    // brute-force fold evaluation confirms 3 is the best of the candidates
    let folds = plsr::fold_assignment(n, 5, 4);
    let rmse: Vec<f64> = [1usize, 3, 30]
        .iter()
        .map(|&p| plsr::cross_validated_rmse(x.view(), y.view(), p, &folds, 5).unwrap())
        .collect();
    assert!(rmse[1] < rmse[0] && rmse[1] < rmse[2], "{rmse:?}");
    assert_eq!(plsr::select_components(x.view(), y.view(), &[1, 3, 30], 5, 4).unwrap(), 3);

    let p = plsr::select_components(x.view(), y.view(), &DEFAULT_CANDIDATES, 5, 4).unwrap();
    assert!(DEFAULT_CANDIDATES.contains(&p));
    assert_eq!(plsr::select_components(x.view(), y.view(), &[7], 5, 4).unwrap(), 7);
}

#[test]
fn too_many_components_is_an_error() {
    let x = Array2::from_shape_fn((6, 3), |(i, j)| (i * 3 + j) as f64 + (i * j) as f64 * 0.1);
    let y = Array1::from_shape_fn(6, |i| i as f64);
    assert!(matches!(
        plsr::fit(x.view(), y.view(), &PlsrConfig::with_components(4)),
        Err(PlsrError::TooManyComponents { requested: 4, .. })
    ));
}

fn blur_images(n: usize) -> (BTreeMap<String, FeatureSet>, Vec<String>) {
    let spec = PatchSpec::new(16, 8).unwrap();
    let cfg = ExtractorConfig::builtin(spec);
    let mut out = BTreeMap::new();
    let mut ids = Vec::new();
    for i in 0..n {
        let image = synthetic::to_gray(
            &synthetic::gaussian_blur(&Scene::DeadLeaves.render(48, 48, i as u64), 48, 48, i as f64 * 0.3),
            48,
            48,
        )
        .unwrap();
        let grid = compute_grid(image.dims(), spec).unwrap();
        let id = format!("im{i}");
        out.insert(id.clone(), backend::extract(&id, &image, &grid, &cfg).unwrap());
        ids.push(id);
    }
    (out, ids)
}

#[test]
fn ten_images_fit_exactly_in_rank() {
    let (features, ids) = blur_images(10);
    let w: Vec<f64> = (0..12).map(|j| ((j * 7 % 5) as f64 - 2.0) * 0.1).collect();
    let scores: BTreeMap<String, f64> = ids
        .iter()
        .map(|id| {
            let mean = features[id].features.mean_axis(ndarray::Axis(0)).unwrap();
            (id.clone(), mean.iter().zip(&w).map(|(a, b)| a * b).sum())
        })
        .collect();
    let table = DescriptorTable::build(&features, &AggregateKind::STATISTICAL).unwrap();
    let model = table.train(&scores, &PlsrConfig::with_components(9), EnsembleRule::AverageQuality, None).unwrap();
    let subjective: Vec<f64> = scores.values().copied().collect();
    for slot in 0..3 {
        let predicted: Vec<f64> = scores.keys().map(|id| table.score(&model, id).unwrap().1[slot]).collect();
        assert_eq!(evaluation::srocc(&predicted, &subjective).unwrap(), 1.0, "sub-model {slot}");
        for (p, s) in predicted.iter().zip(&subjective) {
            assert!((p - s).abs() <= 1e-8 * s.abs().max(1.0));
        }
    }
}

#[test]
fn default_config_records_ten_components() {
    let (features, ids) = blur_images(14);
    let scores: BTreeMap<String, f64> = ids.iter().enumerate().map(|(i, id)| (id.clone(), i as f64)).collect();
    let model = pipeline::train_sfa(&features, &scores, &PlsrConfig::default()).unwrap();
    assert_eq!(model.aggregators, AggregateKind::STATISTICAL.to_vec());
    assert!(model.models.iter().all(|m| m.n_components == 10));
    assert_eq!(model.provenance.n_train, 14);
}

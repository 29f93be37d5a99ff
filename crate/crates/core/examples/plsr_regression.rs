//! Partial least squares on a rank-3 problem: component selection by
//! cross-validation, prediction and a JSON round trip.
//!
//! ```text
//! cargo run --example plsr_regression
//! ```

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfa_iqa::plsr::{self, PlsrConfig, PlsrModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (n, l) = (80, 30);
    let factors = Array2::from_shape_fn((n, 3), |_| rng.gen_range(-1.0..1.0));
    let mixing = Array2::from_shape_fn((3, l), |_| rng.gen_range(-1.0..1.0));
    let x = factors.dot(&mixing) + Array2::from_shape_fn((n, l), |_| rng.gen_range(-0.01..0.01));
    let y: Array1<f64> = factors.dot(&ndarray::arr1(&[2.0, -1.0, 0.5])) + 3.0;

    let folds = plsr::fold_assignment(n, 5, 7);
    for p in [1, 2, 3, 5, 10] {
        println!("p={p:>2}  cv rmse {:.5}", plsr::cross_validated_rmse(x.view(), y.view(), p, &folds, 5)?);
    }
    let p = plsr::select_components(x.view(), y.view(), &[1, 2, 3, 5, 10], 5, 7)?;
    println!("selected {p} components");

    let model = plsr::fit(x.view(), y.view(), &PlsrConfig::with_components(p))?;
    let restored = PlsrModel::from_json(&model.to_json())?;
    let row: Vec<f64> = x.row(0).to_vec();
    println!("y[0] = {:.4}, predicted {:.4}, after round trip {:.4}", y[0], model.predict(&row)?, restored.predict(&row)?);
    Ok(())
}

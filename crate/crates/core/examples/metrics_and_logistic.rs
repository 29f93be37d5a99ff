//! Correlation metrics, the four-parameter logistic mapping and the outlier
//! ratio on a noisy monotone relation with one gross outlier.
//!
//! ```text
//! cargo run --example metrics_and_logistic
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sfa_iqa::evaluation::{self, LogisticParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let truth = LogisticParams { tau1: 4.0, tau2: 1.0, tau3: 0.5, tau4: -0.8 };
    let noise = Normal::new(0.0, 0.05)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let objective: Vec<f64> = (0..40).map(|i| -2.0 + 0.1 * f64::from(i)).collect();
    let mut subjective: Vec<f64> = objective.iter().map(|&x| truth.eval(x) + noise.sample(&mut rng)).collect();
    subjective[25] += 1.5;

    println!("srocc {:.4}", evaluation::srocc(&objective, &subjective)?);
    println!("plcc  {:.4} (raw objective)", evaluation::plcc(&objective, &subjective)?);

    let fit = evaluation::fit_logistic(&objective, &subjective)?;
    let p = fit.params;
    println!("fit {:?} after {} iterations, sse {:.4} (start {:.4})", fit.status, fit.iterations, fit.sse, fit.initial_sse);
    println!("tau = [{:.3}, {:.3}, {:.3}, {:.3}]", p.tau1, p.tau2, p.tau3, p.tau4);
    let mapped: Vec<f64> = objective.iter().map(|&x| p.eval(x)).collect();
    println!("plcc  {:.4}, rmse {:.4} (mapped)", evaluation::plcc(&mapped, &subjective)?, evaluation::rmse(&mapped, &subjective)?);

    let or = evaluation::outlier_analysis(&subjective, &objective)?;
    let flagged: Vec<usize> = or.outliers.iter().enumerate().filter(|(_, &o)| o).map(|(i, _)| i).collect();
    println!("outlier ratio {:.3} (sigma {:.4}, flagged {flagged:?})", or.ratio, or.sigma);
    Ok(())
}

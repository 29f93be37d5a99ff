//! Single-response partial least squares regression.
//!
//! Features and target are centered (no column scaling). Each component takes
//! the weight direction `w ∝ Xᵀy` of the deflated data, the score `t = Xw`,
//! the loading `p = Xᵀt / tᵀt` and the target coefficient `q = yᵀt / tᵀt`,
//! then deflates `X -= t pᵀ`, `y -= q t`. With one response the weight has
//! this closed form, so no inner iteration is needed. The latent pipeline
//! collapses to `β = W (PᵀW)⁻¹ q` and predictions are
//! `intercept + β·x`.
//!
//! The model is not invariant to per-feature rescaling.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Number of latent components used unless configured otherwise.
pub const DEFAULT_COMPONENTS: usize = 10;

/// Candidate component counts for cross-validated selection.
pub const DEFAULT_CANDIDATES: [usize; 6] = [5, 10, 15, 20, 25, 30];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlsrError {
    #[error("need at least two samples, got {0}")]
    TooFewSamples(usize),
    #[error("{requested} components requested but at most {max} are possible")]
    TooManyComponents { requested: usize, max: usize },
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("input contains non-finite values")]
    NonFiniteInput,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlsrConfig {
    pub n_components: usize,
    /// Reserved for multi-response fitting; single-response fits are closed form.
    pub max_inner_iterations: usize,
    /// Relative residual norm below which component extraction stops.
    pub convergence_tol: f64,
}

impl Default for PlsrConfig {
    fn default() -> Self {
        Self { n_components: DEFAULT_COMPONENTS, max_inner_iterations: 500, convergence_tol: 1e-10 }
    }
}

impl PlsrConfig {
    pub fn with_components(n_components: usize) -> Self {
        Self { n_components, ..Self::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Ok,
    /// Residuals vanished before all requested components were extracted.
    EarlyStop,
    /// Constant target: the model predicts the mean everywhere.
    DegenerateTarget,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub n_samples: usize,
    pub n_features: usize,
    pub centering: String,
    pub scaling: String,
    pub status: FitStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlsrModel {
    pub n_components: usize,
    pub components_used: usize,
    pub feature_mean: Vec<f64>,
    pub target_mean: f64,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub training_meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct ModelEnvelope<M> {
    pub(crate) version: u32,
    #[serde(flatten)]
    pub(crate) model: M,
}

impl PlsrModel {
    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, PlsrError> {
        predict(self, x)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ModelEnvelope { version: MODEL_FORMAT_VERSION, model: self })
            .expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let env: ModelEnvelope<PlsrModel> = serde_json::from_str(text)?;
        if env.version != MODEL_FORMAT_VERSION {
            return Err(serde::de::Error::custom(format!("unsupported model version {}", env.version)));
        }
        Ok(env.model)
    }
}

/// A fitted model plus the latent quantities behind it.
#[derive(Clone, Debug)]
pub struct PlsrFit {
    pub model: PlsrModel,
    /// `n_samples × components_used` latent scores.
    pub scores: Array2<f64>,
    pub weights: Array2<f64>,
    pub loadings: Array2<f64>,
}

pub fn fit(x: ArrayView2<f64>, y: ArrayView1<f64>, cfg: &PlsrConfig) -> Result<PlsrModel, PlsrError> {
    fit_detailed(x, y, cfg).map(|f| f.model)
}

pub fn fit_detailed(x: ArrayView2<f64>, y: ArrayView1<f64>, cfg: &PlsrConfig) -> Result<PlsrFit, PlsrError> {
    let (n, dim) = x.dim();
    if y.len() != n {
        return Err(PlsrError::DimensionMismatch { expected: n, got: y.len() });
    }
    if n < 2 {
        return Err(PlsrError::TooFewSamples(n));
    }
    if dim == 0 {
        return Err(PlsrError::InvalidConfig("no features".into()));
    }
    if cfg.n_components == 0 {
        return Err(PlsrError::InvalidConfig("n_components must be positive".into()));
    }
    if !(cfg.convergence_tol > 0.0 && cfg.convergence_tol.is_finite()) {
        return Err(PlsrError::InvalidConfig("convergence_tol must be a positive number".into()));
    }
    let max = (n - 1).min(dim);
    if cfg.n_components > max {
        return Err(PlsrError::TooManyComponents { requested: cfg.n_components, max });
    }
    if !x.iter().chain(y.iter()).all(|v| v.is_finite()) {
        return Err(PlsrError::NonFiniteInput);
    }

    let feature_mean = x.mean_axis(Axis(0)).expect("n >= 2");
    let target_mean = y.sum() / n as f64;
    let mut xr: Array2<f64> = &x - &feature_mean;
    let mut yr: Array1<f64> = y.mapv(|v| v - target_mean);

    let x_norm0 = frobenius(xr.view());
    let y_norm0 = norm(yr.view());
    let tol = cfg.convergence_tol;
    let meta = |status| TrainingMeta {
        n_samples: n,
        n_features: dim,
        centering: "mean".into(),
        scaling: "none".into(),
        status,
    };

    let y_scale = y.iter().fold(0f64, |m, v| m.max(v.abs()));
    let constant_target = y_norm0 <= 4.0 * f64::EPSILON * y_scale * (n as f64).sqrt();
    if constant_target || x_norm0 == 0.0 {
        let status = if constant_target { FitStatus::DegenerateTarget } else { FitStatus::EarlyStop };
        return Ok(PlsrFit {
            model: PlsrModel {
                n_components: cfg.n_components,
                components_used: 0,
                feature_mean: feature_mean.to_vec(),
                target_mean,
                coefficients: vec![0.0; dim],
                intercept: target_mean,
                training_meta: meta(status),
            },
            scores: Array2::zeros((n, 0)),
            weights: Array2::zeros((dim, 0)),
            loadings: Array2::zeros((dim, 0)),
        });
    }

    let mut ws: Vec<Array1<f64>> = Vec::new();
    let mut ps: Vec<Array1<f64>> = Vec::new();
    let mut ts: Vec<Array1<f64>> = Vec::new();
    let mut qs: Vec<f64> = Vec::new();
    let mut status = FitStatus::Ok;

    for _ in 0..cfg.n_components {
        let mut w = xr.t().dot(&yr);
        let w_norm = norm(w.view());
        if w_norm <= tol * x_norm0 * y_norm0 {
            status = FitStatus::EarlyStop;
            break;
        }
        w /= w_norm;
        let t = xr.dot(&w);
        let tt = t.dot(&t);
        if tt <= (tol * x_norm0).powi(2) {
            status = FitStatus::EarlyStop;
            break;
        }
        let p = xr.t().dot(&t) / tt;
        let q = yr.dot(&t) / tt;

        // rank-one deflation
        for (mut row, &ti) in xr.axis_iter_mut(Axis(0)).zip(t.iter()) {
            row.scaled_add(-ti, &p);
        }
        yr.scaled_add(-q, &t);

        ws.push(w);
        ps.push(p);
        ts.push(t);
        qs.push(q);

        if norm(yr.view()) <= tol * y_norm0 || frobenius(xr.view()) <= tol * x_norm0 {
            if ws.len() < cfg.n_components {
                status = FitStatus::EarlyStop;
            }
            break;
        }
    }

    let a = ws.len();
    let weights = stack_columns(&ws, dim);
    let loadings = stack_columns(&ps, dim);
    let scores = stack_columns(&ts, n);

    let coefficients = if a == 0 {
        Array1::zeros(dim)
    } else {
        // PᵀW is upper triangular with unit diagonal: back-substitute (PᵀW) c = q
        let ptw = loadings.t().dot(&weights);
        let mut c = vec![0.0; a];
        for i in (0..a).rev() {
            let s: f64 = (i + 1..a).map(|j| ptw[[i, j]] * c[j]).sum();
            c[i] = (qs[i] - s) / ptw[[i, i]];
        }
        weights.dot(&Array1::from(c))
    };
    let intercept = target_mean - coefficients.dot(&feature_mean);

    Ok(PlsrFit {
        model: PlsrModel {
            n_components: cfg.n_components,
            components_used: a,
            feature_mean: feature_mean.to_vec(),
            target_mean,
            coefficients: coefficients.to_vec(),
            intercept,
            training_meta: meta(status),
        },
        scores,
        weights,
        loadings,
    })
}

fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

fn frobenius(m: ArrayView2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn stack_columns(cols: &[Array1<f64>], rows: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows, cols.len()));
    for (j, c) in cols.iter().enumerate() {
        out.column_mut(j).assign(c);
    }
    out
}

pub fn predict(model: &PlsrModel, x: &[f64]) -> Result<f64, PlsrError> {
    if x.len() != model.coefficients.len() {
        return Err(PlsrError::DimensionMismatch { expected: model.coefficients.len(), got: x.len() });
    }
    Ok(model.intercept + model.coefficients.iter().zip(x).map(|(b, v)| b * v).sum::<f64>())
}

/// Predicts every row of `x`.
pub fn predict_rows(model: &PlsrModel, x: ArrayView2<f64>) -> Result<Vec<f64>, PlsrError> {
    x.axis_iter(Axis(0))
        .map(|row| match row.as_slice() {
            Some(s) => predict(model, s),
            None => predict(model, &row.to_vec()),
        })
        .collect()
}

/// Seeded assignment of `n` samples to `k` folds of near-equal size.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % k;
    }
    fold
}

/// Mean held-out RMSE across folds for one component count.
pub fn cross_validated_rmse(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    n_components: usize,
    folds: &[usize],
    k_folds: usize,
) -> Result<f64, PlsrError> {
    let cfg = PlsrConfig::with_components(n_components);
    let mut total = 0.0;
    for f in 0..k_folds {
        let train: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] != f).collect();
        let test: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] == f).collect();
        let model = fit(x.select(Axis(0), &train).view(), y.select(Axis(0), &train).view(), &cfg)?;
        let preds = predict_rows(&model, x.select(Axis(0), &test).view())?;
        let mse = test.iter().zip(&preds).map(|(&i, p)| (p - y[i]).powi(2)).sum::<f64>() / test.len() as f64;
        total += mse.sqrt();
    }
    Ok(total / k_folds as f64)
}

/// Picks the candidate component count with the lowest mean fold RMSE,
/// preferring fewer components on ties.
pub fn select_components(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    candidates: &[usize],
    k_folds: usize,
    seed: u64,
) -> Result<usize, PlsrError> {
    if candidates.is_empty() {
        return Err(PlsrError::InvalidConfig("no candidate component counts".into()));
    }
    if k_folds < 2 {
        return Err(PlsrError::InvalidConfig("need at least two folds".into()));
    }
    if x.nrows() < k_folds {
        return Err(PlsrError::TooFewSamples(x.nrows()));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() == 1 {
        return Ok(sorted[0]);
    }
    let folds = fold_assignment(x.nrows(), k_folds, seed);
    let mut best: Option<(usize, f64)> = None;
    for &p in &sorted {
        let rmse = cross_validated_rmse(x, y, p, &folds, k_folds)?;
        if best.is_none_or(|(_, b)| rmse < b) {
            best = Some((p, rmse));
        }
    }
    Ok(best.expect("non-empty candidates").0)
}

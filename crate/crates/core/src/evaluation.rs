//! Performance measurement: rank/linear correlation, RMSE, the monotone
//! four-parameter logistic mapping, content-disjoint Monte-Carlo splits,
//! cross-dataset evaluation, training-ratio sweeps and the outlier ratio.
//!
//! Learning-based predictions are scored raw. The logistic mapping
//!
//! ```text
//! f(x) = (τ1 − τ2) / (1 + exp((x − τ3) / τ4)) + τ2
//! ```
//!
//! is used for the outlier ratio and for external score files from
//! learning-free methods. Correlations are reported signed, so DMOS
//! datasets (higher is worse) yield negative values for a MOS-like
//! predictor.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::AggregateKind;
use crate::backend::FeatureSet;
use crate::dataset::DatasetManifest;
use crate::linalg;
use crate::pipeline::{DescriptorTable, EnsembleRule, PipelineError};
use crate::plsr::PlsrConfig;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("need at least two content groups, got {0}")]
    TooFewContents(usize),
    #[error("train ratio {0} is outside (0, 1)")]
    InvalidRatio(f64),
    #[error("no features for image {0}")]
    MissingFeatures(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

fn check_pair(x: &[f64], y: &[f64], need: usize) -> Result<(), EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < need {
        return Err(EvalError::TooFewPoints { need, got: x.len() });
    }
    if !x.iter().chain(y).all(|v| v.is_finite()) {
        return Err(EvalError::DegenerateInput("non-finite value".into()));
    }
    Ok(())
}

/// 1-based ranks with ties sharing the average of the positions they span.
pub fn tie_averaged_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end share their mean
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

fn pearson_unchecked(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EvalError::DegenerateInput("constant input".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman rank-order correlation: Pearson correlation of tie-averaged ranks.
pub fn srocc(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    check_pair(x, y, 3)?;
    pearson_unchecked(&tie_averaged_ranks(x), &tie_averaged_ranks(y))
}

/// Pearson linear correlation.
pub fn plcc(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    check_pair(x, y, 2)?;
    pearson_unchecked(x, y)
}

pub fn rmse(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    check_pair(x, y, 1)?;
    Ok((x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub tau1: f64,
    pub tau2: f64,
    pub tau3: f64,
    pub tau4: f64,
}

impl LogisticParams {
    fn from_slice(t: &[f64; 4]) -> Self {
        Self { tau1: t[0], tau2: t[1], tau3: t[2], tau4: t[3] }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let s = sigmoid_term((x - self.tau3) / self.tau4);
        (self.tau1 - self.tau2) * s + self.tau2
    }
}

/// `1 / (1 + e^z)` without overflow.
fn sigmoid_term(z: f64) -> f64 {
    if z > 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Converged,
    /// Iteration cap reached; parameters are the best found.
    NonConvergence,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub params: LogisticParams,
    pub sse: f64,
    /// SSE at the documented starting point.
    pub initial_sse: f64,
    pub iterations: usize,
    pub status: FitStatus,
}

const LM_MAX_ITERATIONS: usize = 2000;

fn sse(t: &[f64; 4], x: &[f64], y: &[f64]) -> f64 {
    let p = LogisticParams::from_slice(t);
    x.iter().zip(y).map(|(&xi, &yi)| (yi - p.eval(xi)).powi(2)).sum()
}

/// Damped Gauss-Newton (Levenberg-Marquardt) on the four-parameter SSE with
/// the analytic Jacobian. Only steps that lower the SSE are taken.
fn levenberg_marquardt(start: [f64; 4], x: &[f64], y: &[f64]) -> (f64, [f64; 4], usize, FitStatus) {
    let mut theta = start;
    let mut cost = sse(&theta, x, y);
    let mut lambda = 1e-3;
    let scale = y.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);

    for iter in 0..LM_MAX_ITERATIONS {
        if cost <= 1e-30 * scale {
            return (cost, theta, iter, FitStatus::Converged);
        }
        let [t1, t2, t3, t4] = theta;
        let mut jtj = [0.0; 16];
        let mut jtr = [0.0; 4];
        for (&xi, &yi) in x.iter().zip(y) {
            let z = (xi - t3) / t4;
            let s = sigmoid_term(z);
            let ds = (t1 - t2) * s * (1.0 - s);
            let f = (t1 - t2) * s + t2;
            let r = yi - f;
            let j = [s, 1.0 - s, ds / t4, ds * z / t4];
            for a in 0..4 {
                jtr[a] += j[a] * r;
                for b in 0..4 {
                    jtj[a * 4 + b] += j[a] * j[b];
                }
            }
        }
        let grad = jtr.iter().fold(0f64, |m, g| m.max(g.abs()));
        if grad <= 1e-15 * (1.0 + cost.sqrt()) * (1.0 + scale.sqrt()) {
            return (cost, theta, iter, FitStatus::Converged);
        }
        let diag_floor = (0..4).map(|a| jtj[a * 5]).fold(0f64, f64::max) * 1e-12 + f64::MIN_POSITIVE;

        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj;
            for k in 0..4 {
                a[k * 5] += lambda * jtj[k * 5].max(diag_floor);
            }
            let Some(step) = linalg::solve(a.to_vec(), jtr.to_vec()) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [t1 + step[0], t2 + step[1], t3 + step[2], t4 + step[3]];
            let trial_cost = if trial[3] != 0.0 && trial.iter().all(|v| v.is_finite()) {
                sse(&trial, x, y)
            } else {
                f64::INFINITY
            };
            if trial_cost < cost {
                let step_norm = step.iter().map(|s| s * s).sum::<f64>().sqrt();
                let theta_norm = theta.iter().map(|s| s * s).sum::<f64>().sqrt();
                let gain = cost - trial_cost;
                theta = trial;
                cost = trial_cost;
                lambda = (lambda / 3.0).max(1e-15);
                accepted = true;
                if step_norm <= 1e-15 * (theta_norm + 1e-15) || gain <= 1e-16 * cost {
                    return (cost, theta, iter + 1, FitStatus::Converged);
                }
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            // no descent direction at machine precision: a stationary point
            return (cost, theta, iter + 1, FitStatus::Converged);
        }
    }
    (cost, theta, LM_MAX_ITERATIONS, FitStatus::NonConvergence)
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn population_std(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Fits the logistic mapping from objective to subjective scores.
///
/// Starts from τ1 = max(subjective), τ2 = min(subjective),
/// τ3 = median(objective), τ4 = −std(objective)/4, and again with τ4 of
/// the opposite sign; the lower final SSE wins.
pub fn fit_logistic(objective: &[f64], subjective: &[f64]) -> Result<LogisticFit, EvalError> {
    check_pair(objective, subjective, 5)?;
    let spread = population_std(objective);
    if spread == 0.0 {
        return Err(EvalError::DegenerateInput("objective scores are constant".into()));
    }
    let hi = subjective.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = subjective.iter().copied().fold(f64::INFINITY, f64::min);
    let center = median(objective);
    let start = [hi, lo, center, -spread / 4.0];
    let flipped = [hi, lo, center, spread / 4.0];
    let initial_sse = sse(&start, objective, subjective);

    let a = levenberg_marquardt(start, objective, subjective);
    let b = levenberg_marquardt(flipped, objective, subjective);
    let (cost, theta, iterations, status) = if b.0 < a.0 { b } else { a };
    Ok(LogisticFit { params: LogisticParams::from_slice(&theta), sse: cost, initial_sse, iterations, status })
}

/// Points flagged against a 2σ band around the fitted logistic curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutlierAnalysis {
    pub ratio: f64,
    /// Standard deviation (divisor n) of residuals about the curve.
    pub sigma: f64,
    pub fit: LogisticFit,
    pub mapped: Vec<f64>,
    pub outliers: Vec<bool>,
}

pub fn outlier_analysis(subjective: &[f64], prediction: &[f64]) -> Result<OutlierAnalysis, EvalError> {
    let fit = fit_logistic(prediction, subjective)?;
    let mapped: Vec<f64> = prediction.iter().map(|&p| fit.params.eval(p)).collect();
    let residuals: Vec<f64> = subjective.iter().zip(&mapped).map(|(s, m)| s - m).collect();
    let sigma = population_std(&residuals);
    let outliers: Vec<bool> = residuals.iter().map(|r| r.abs() > 2.0 * sigma).collect();
    let ratio = outliers.iter().filter(|&&o| o).count() as f64 / outliers.len() as f64;
    Ok(OutlierAnalysis { ratio, sigma, fit, mapped, outliers })
}

/// Fraction of `(subjective, prediction)` points outside the 2σ band.
pub fn outlier_ratio(points: &[(f64, f64)]) -> Result<f64, EvalError> {
    let (s, p): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
    outlier_analysis(&s, &p).map(|a| a.ratio)
}

/// Plot-ready scatter and band rows:
/// `image_id,subjective,objective,mapped,band_lo,band_hi`.
pub fn band_csv(ids: &[String], subjective: &[f64], objective: &[f64], analysis: &OutlierAnalysis) -> String {
    let mut out = String::from("image_id,subjective,objective,mapped,band_lo,band_hi\n");
    for i in 0..ids.len() {
        let m = analysis.mapped[i];
        let half = 2.0 * analysis.sigma;
        let _ = writeln!(out, "{},{},{},{},{},{}", ids[i], subjective[i], objective[i], m, m - half, m + half);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub run_index: u64,
    pub train_ratio_bits: u64,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl SplitPlan {
    pub fn train_ratio(&self) -> f64 {
        f64::from_bits(self.train_ratio_bits)
    }
}

/// Number of content groups assigned to training: `⌊ratio·k + ½⌋`,
/// kept within `1..k`.
pub fn train_content_count(ratio: f64, contents: usize) -> usize {
    ((ratio * contents as f64 + 0.5).floor() as usize).clamp(1, contents - 1)
}

/// One content-disjoint split; the generator is derived from `(seed, run_index)`.
pub fn make_split(manifest: &DatasetManifest, train_ratio: f64, seed: u64, run_index: u64) -> Result<SplitPlan, EvalError> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(EvalError::InvalidRatio(train_ratio));
    }
    let groups = manifest.content_groups();
    if groups.len() < 2 {
        return Err(EvalError::TooFewContents(groups.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run_index);
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.shuffle(&mut rng);
    let n_train = train_content_count(train_ratio, groups.len());
    let mut in_train = vec![false; groups.len()];
    for &g in &order[..n_train] {
        in_train[g] = true;
    }
    let train_contents: std::collections::HashSet<&str> = groups
        .iter()
        .zip(&in_train)
        .filter(|(_, &t)| t)
        .map(|((c, _), _)| c.as_str())
        .collect();
    let (mut train_ids, mut test_ids) = (Vec::new(), Vec::new());
    for e in manifest.active_entries() {
        if train_contents.contains(e.content_id.as_str()) {
            train_ids.push(e.image_id.clone());
        } else {
            test_ids.push(e.image_id.clone());
        }
    }
    Ok(SplitPlan { seed, run_index, train_ratio_bits: train_ratio.to_bits(), train_ids, test_ids })
}

pub fn make_splits(manifest: &DatasetManifest, train_ratio: f64, n_runs: usize, seed: u64) -> Result<Vec<SplitPlan>, EvalError> {
    (0..n_runs as u64).map(|r| make_split(manifest, train_ratio, seed, r)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub srocc: f64,
    pub plcc: f64,
    pub rmse: f64,
}

impl Metrics {
    pub fn compute(subjective: &[f64], predicted: &[f64]) -> Result<Self, EvalError> {
        Ok(Self { srocc: srocc(predicted, subjective)?, plcc: plcc(predicted, subjective)?, rmse: rmse(predicted, subjective)? })
    }

    fn median_of(ms: &[Metrics]) -> Self {
        Self {
            srocc: median(&ms.iter().map(|m| m.srocc).collect::<Vec<_>>()),
            plcc: median(&ms.iter().map(|m| m.plcc).collect::<Vec<_>>()),
            rmse: median(&ms.iter().map(|m| m.rmse).collect::<Vec<_>>()),
        }
    }

    fn mean_of(ms: &[Metrics]) -> Self {
        Self {
            srocc: mean(&ms.iter().map(|m| m.srocc).collect::<Vec<_>>()),
            plcc: mean(&ms.iter().map(|m| m.plcc).collect::<Vec<_>>()),
            rmse: mean(&ms.iter().map(|m| m.rmse).collect::<Vec<_>>()),
        }
    }
}

/// Training and evaluation knobs shared by the harnesses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub plsr: PlsrConfig,
    pub kinds: Vec<AggregateKind>,
    pub ensemble: EnsembleRule,
    pub train_ratio: f64,
    /// Also compute the 2σ outlier ratio on each test split.
    pub outliers: bool,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            plsr: PlsrConfig::default(),
            kinds: AggregateKind::STATISTICAL.to_vec(),
            ensemble: EnsembleRule::AverageQuality,
            train_ratio: 0.8,
            outliers: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_index: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub metrics: Metrics,
    /// Metrics of each sub-model alone, in `HarnessConfig::kinds` order.
    pub sub_models: Vec<Metrics>,
    pub outlier_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub n_runs: usize,
    pub seed: u64,
    pub train_ratio: f64,
    pub kinds: Vec<AggregateKind>,
    pub median: Metrics,
    pub mean: Metrics,
    pub sub_model_median: Vec<Metrics>,
    pub median_outlier_ratio: Option<f64>,
    pub runs: Vec<RunReport>,
}

fn active_features(
    manifests: &[&DatasetManifest],
    features: &BTreeMap<String, FeatureSet>,
) -> Result<BTreeMap<String, FeatureSet>, EvalError> {
    let mut out = BTreeMap::new();
    for m in manifests {
        for e in m.active_entries() {
            let fs = features.get(&e.image_id).ok_or_else(|| EvalError::MissingFeatures(e.image_id.clone()))?;
            out.insert(e.image_id.clone(), fs.clone());
        }
    }
    Ok(out)
}

fn run_split(
    table: &DescriptorTable,
    scores: &BTreeMap<String, f64>,
    plan: &SplitPlan,
    cfg: &HarnessConfig,
) -> Result<RunReport, EvalError> {
    let train: BTreeMap<String, f64> = plan.train_ids.iter().map(|id| (id.clone(), scores[id])).collect();
    let model = table.train(&train, &cfg.plsr, cfg.ensemble, Some(plan.seed))?;
    let subjective: Vec<f64> = plan.test_ids.iter().map(|id| scores[id]).collect();
    let mut predicted = Vec::with_capacity(plan.test_ids.len());
    let mut per_sub: Vec<Vec<f64>> = vec![Vec::with_capacity(plan.test_ids.len()); cfg.kinds.len()];
    for id in &plan.test_ids {
        let (score, subs) = table.score(&model, id)?;
        predicted.push(score);
        for (k, s) in subs.into_iter().enumerate() {
            per_sub[k].push(s);
        }
    }
    let metrics = Metrics::compute(&subjective, &predicted)?;
    let sub_models = per_sub.iter().map(|p| Metrics::compute(&subjective, p)).collect::<Result<Vec<_>, _>>()?;
    let outlier_ratio = if cfg.outliers && subjective.len() >= 5 {
        outlier_analysis(&subjective, &predicted).ok().map(|a| a.ratio)
    } else {
        None
    };
    Ok(RunReport {
        run_index: plan.run_index,
        n_train: plan.train_ids.len(),
        n_test: plan.test_ids.len(),
        metrics,
        sub_models,
        outlier_ratio,
    })
}

/// Repeated content-disjoint train/test evaluation.
pub fn montecarlo_eval(
    manifest: &DatasetManifest,
    features: &BTreeMap<String, FeatureSet>,
    cfg: &HarnessConfig,
    n_runs: usize,
    seed: u64,
) -> Result<MonteCarloSummary, EvalError> {
    if n_runs == 0 {
        return Err(EvalError::TooFewPoints { need: 1, got: 0 });
    }
    let table = DescriptorTable::build(&active_features(&[manifest], features)?, &cfg.kinds)?;
    let scores = manifest.scores();
    let plans = make_splits(manifest, cfg.train_ratio, n_runs, seed)?;
    let runs = plans
        .par_iter()
        .map(|plan| run_split(&table, &scores, plan, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(summarize(runs, seed, cfg))
}

fn summarize(runs: Vec<RunReport>, seed: u64, cfg: &HarnessConfig) -> MonteCarloSummary {
    let all: Vec<Metrics> = runs.iter().map(|r| r.metrics).collect();
    let sub_model_median = (0..cfg.kinds.len())
        .map(|k| Metrics::median_of(&runs.iter().map(|r| r.sub_models[k]).collect::<Vec<_>>()))
        .collect();
    let ors: Vec<f64> = runs.iter().filter_map(|r| r.outlier_ratio).collect();
    MonteCarloSummary {
        n_runs: runs.len(),
        seed,
        train_ratio: cfg.train_ratio,
        kinds: cfg.kinds.clone(),
        median: Metrics::median_of(&all),
        mean: Metrics::mean_of(&all),
        sub_model_median,
        median_outlier_ratio: (!ors.is_empty()).then(|| median(&ors)),
        runs,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub image_id: String,
    pub subjective: f64,
    pub objective: f64,
    pub mapped: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub srocc: f64,
    pub plcc: f64,
    pub rmse: f64,
    pub n_test: usize,
    pub outlier_ratio: Option<f64>,
    pub logistic: Option<LogisticParams>,
    pub per_image: Vec<ImageResult>,
}

impl EvalReport {
    /// Scatter/band CSV for plotting; band width is 2σ of curve residuals.
    pub fn band_csv(&self) -> String {
        let residuals: Vec<f64> = self.per_image.iter().map(|r| r.subjective - r.mapped).collect();
        let half = if residuals.is_empty() { 0.0 } else { 2.0 * population_std(&residuals) };
        let mut out = String::from("image_id,subjective,objective,mapped,band_lo,band_hi\n");
        for r in &self.per_image {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.image_id,
                r.subjective,
                r.objective,
                r.mapped,
                r.mapped - half,
                r.mapped + half
            );
        }
        out
    }
}

/// Builds a report from raw predictions; metrics use the raw values and
/// the logistic curve only feeds the outlier ratio and `mapped`.
fn report_raw(ids: Vec<String>, subjective: Vec<f64>, objective: Vec<f64>) -> Result<EvalReport, EvalError> {
    let m = Metrics::compute(&subjective, &objective)?;
    let analysis = if ids.len() >= 5 { outlier_analysis(&subjective, &objective).ok() } else { None };
    let per_image = ids
        .into_iter()
        .enumerate()
        .map(|(i, image_id)| ImageResult {
            image_id,
            subjective: subjective[i],
            objective: objective[i],
            mapped: analysis.as_ref().map_or(objective[i], |a| a.mapped[i]),
        })
        .collect::<Vec<_>>();
    Ok(EvalReport {
        srocc: m.srocc,
        plcc: m.plcc,
        rmse: m.rmse,
        n_test: per_image.len(),
        outlier_ratio: analysis.as_ref().map(|a| a.ratio),
        logistic: analysis.map(|a| a.fit.params),
        per_image,
    })
}

/// Evaluates a trained model's raw predictions on every active entry.
pub fn evaluate_predictions(manifest: &DatasetManifest, predictions: &BTreeMap<String, f64>) -> Result<EvalReport, EvalError> {
    let (mut ids, mut subj, mut obj) = (Vec::new(), Vec::new(), Vec::new());
    for e in manifest.active_entries() {
        let p = *predictions.get(&e.image_id).ok_or_else(|| EvalError::MissingFeatures(e.image_id.clone()))?;
        ids.push(e.image_id.clone());
        subj.push(e.score);
        obj.push(p);
    }
    report_raw(ids, subj, obj)
}

/// Trains on every active entry of one dataset and tests on another.
pub fn cross_dataset_eval(
    train_manifest: &DatasetManifest,
    test_manifest: &DatasetManifest,
    features: &BTreeMap<String, FeatureSet>,
    cfg: &HarnessConfig,
) -> Result<EvalReport, EvalError> {
    let table = DescriptorTable::build(&active_features(&[train_manifest, test_manifest], features)?, &cfg.kinds)?;
    let model = table.train(&train_manifest.scores(), &cfg.plsr, cfg.ensemble, None)?;
    let (mut ids, mut subjective, mut objective) = (Vec::new(), Vec::new(), Vec::new());
    for e in test_manifest.active_entries() {
        ids.push(e.image_id.clone());
        subjective.push(e.score);
        objective.push(table.score(&model, &e.image_id)?.0);
    }
    report_raw(ids, subjective, objective)
}

/// Evaluates externally produced objective scores (e.g. a learning-free
/// metric): the logistic mapping is fitted and PLCC/RMSE use mapped scores.
pub fn evaluate_scores(manifest: &DatasetManifest, objective: &BTreeMap<String, f64>) -> Result<EvalReport, EvalError> {
    let (mut ids, mut subj, mut obj) = (Vec::new(), Vec::new(), Vec::new());
    for e in manifest.active_entries() {
        let o = *objective.get(&e.image_id).ok_or_else(|| EvalError::MissingFeatures(e.image_id.clone()))?;
        ids.push(e.image_id.clone());
        subj.push(e.score);
        obj.push(o);
    }
    let analysis = outlier_analysis(&subj, &obj)?;
    Ok(EvalReport {
        srocc: srocc(&obj, &subj)?,
        plcc: plcc(&analysis.mapped, &subj)?,
        rmse: rmse(&analysis.mapped, &subj)?,
        n_test: ids.len(),
        outlier_ratio: Some(analysis.ratio),
        logistic: Some(analysis.fit.params),
        per_image: ids
            .into_iter()
            .enumerate()
            .map(|(i, image_id)| ImageResult { image_id, subjective: subj[i], objective: obj[i], mapped: analysis.mapped[i] })
            .collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub summary: MonteCarloSummary,
}

/// Monte-Carlo evaluation at each training ratio.
pub fn ratio_sweep(
    manifest: &DatasetManifest,
    features: &BTreeMap<String, FeatureSet>,
    cfg: &HarnessConfig,
    ratios: &[f64],
    n_runs: usize,
    seed: u64,
) -> Result<Vec<SweepRow>, EvalError> {
    if let Some(&bad) = ratios.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
        return Err(EvalError::InvalidRatio(bad));
    }
    ratios
        .iter()
        .map(|&ratio| {
            let c = HarnessConfig { train_ratio: ratio, ..cfg.clone() };
            montecarlo_eval(manifest, features, &c, n_runs, seed).map(|summary| SweepRow { ratio, summary })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "ratio,n_runs,median_srocc,median_plcc,median_rmse,mean_srocc,mean_plcc,mean_rmse\n",
    );
    for r in rows {
        let s = &r.summary;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.ratio, s.n_runs, s.median.srocc, s.median.plcc, s.median.rmse, s.mean.srocc, s.mean.plcc, s.mean.rmse
        );
    }
    out
}

/// Per-run metrics as CSV, one row per run.
pub fn runs_csv(summary: &MonteCarloSummary) -> String {
    let mut out = String::from("run,n_train,n_test,srocc,plcc,rmse,outlier_ratio");
    for k in &summary.kinds {
        let _ = write!(out, ",{k}_srocc,{k}_plcc,{k}_rmse");
    }
    out.push('\n');
    for r in &summary.runs {
        let or = r.outlier_ratio.map_or(String::new(), |v| v.to_string());
        let _ = write!(out, "{},{},{},{},{},{},{}", r.run_index, r.n_train, r.n_test, r.metrics.srocc, r.metrics.plcc, r.metrics.rmse, or);
        for m in &r.sub_models {
            let _ = write!(out, ",{},{},{}", m.srocc, m.plcc, m.rmse);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{parse_manifest_csv, ManifestMeta, ScoreKind};

    #[test]
    fn srocc_basic() {
        assert!((srocc(&[1., 2., 3.], &[3., 2., 1.]).unwrap() + 1.0).abs() < 1e-15);
        assert!((srocc(&[1., 2., 3.], &[10., 20., 30.]).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(srocc(&[1., 2.], &[1., 2.]), Err(EvalError::TooFewPoints { .. })));
        assert!(matches!(srocc(&[1., 1., 1.], &[1., 2., 3.]), Err(EvalError::DegenerateInput(_))));
        assert!(matches!(srocc(&[1., 2., 3.], &[1., 2.]), Err(EvalError::LengthMismatch(3, 2))));
    }

    #[test]
    fn srocc_with_ties() {
        // ranks x = (1, 2.5, 2.5, 4), y = (1, 3, 2, 4)
        // centered: x (-1.5, 0, 0, 1.5), y (-1.5, 0.5, -0.5, 1.5)
        // sxy = 4.5, sxx = 4.5, syy = 5  ->  4.5 / sqrt(22.5)
        let expected = 4.5 / 22.5f64.sqrt();
        let got = srocc(&[1., 2., 2., 4.], &[1., 3., 2., 4.]).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert_eq!(tie_averaged_ranks(&[1., 2., 2., 4.]), vec![1.0, 2.5, 2.5, 4.0]);
    }

    #[test]
    fn plcc_rmse_basic() {
        let x = [0.5, 1.0, 3.0, 2.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((plcc(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        let raw = (x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 4.0).sqrt();
        assert_eq!(rmse(&x, &y).unwrap(), raw);
        assert_eq!(rmse(&x, &x).unwrap(), 0.0);
        assert!(matches!(plcc(&[1., 1.], &[1., 2.]), Err(EvalError::DegenerateInput(_))));
    }

    fn planted(x: &[f64], p: LogisticParams) -> Vec<f64> {
        x.iter().map(|&v| p.eval(v)).collect()
    }

    #[test]
    fn logistic_recovers_planted_curve() {
        let truth = LogisticParams { tau1: 5.0, tau2: 0.0, tau3: 0.5, tau4: -0.1 };
        let x: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let y = planted(&x, truth);
        let fit = fit_logistic(&x, &y).unwrap();
        assert!(fit.sse <= 1e-8, "sse {}", fit.sse);
        assert!(fit.sse <= fit.initial_sse);
    }

    #[test]
    fn logistic_constant_target() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let fit = fit_logistic(&x, &[2.0; 10]).unwrap();
        assert_eq!(fit.sse, 0.0);
        for &v in &x {
            assert_eq!(fit.params.eval(v), 2.0);
        }
    }

    #[test]
    fn logistic_rejects_degenerate() {
        assert!(matches!(fit_logistic(&[1.0; 6], &[1., 2., 3., 4., 5., 6.]), Err(EvalError::DegenerateInput(_))));
        assert!(matches!(fit_logistic(&[1., 2., 3., 4.], &[1., 2., 3., 4.]), Err(EvalError::TooFewPoints { need: 5, got: 4 })));
    }

    #[test]
    fn on_curve_points_have_no_outliers() {
        let p = LogisticParams { tau1: 4.0, tau2: 1.0, tau3: 0.0, tau4: 0.7 };
        let x: Vec<f64> = (0..30).map(|i| -3.0 + i as f64 * 0.2).collect();
        let y = planted(&x, p);
        let points: Vec<(f64, f64)> = y.iter().copied().zip(x.iter().copied()).collect();
        assert_eq!(outlier_ratio(&points).unwrap(), 0.0);
    }

    fn manifest(contents: usize, per: usize) -> DatasetManifest {
        let mut text = String::from("image_id,path,score,content_id\n");
        for c in 0..contents {
            for k in 0..per {
                text.push_str(&format!("c{c}_{k},x.pgm,{},ref{c}\n", (c * per + k) as f64 / (contents * per) as f64));
            }
        }
        parse_manifest_csv(&text, ManifestMeta { name: "m".into(), score_kind: ScoreKind::Mos, score_range: (0.0, 1.0) }).unwrap()
    }

    #[test]
    fn split_sizes() {
        let m = manifest(25, 4);
        let plan = make_split(&m, 0.8, 3, 0).unwrap();
        assert_eq!(plan.train_ids.len(), 80);
        assert_eq!(plan.test_ids.len(), 20);
        assert_eq!(train_content_count(0.8, 586), 469);
        assert_eq!(586 - train_content_count(0.8, 586), 117);
        assert_eq!(train_content_count(0.5, 3), 2);
    }

    #[test]
    fn splits_are_reproducible_and_vary() {
        let m = manifest(25, 2);
        let a = make_splits(&m, 0.8, 5, 7).unwrap();
        assert_eq!(a, make_splits(&m, 0.8, 5, 7).unwrap());
        assert_ne!(a[0].train_ids, a[1].train_ids);
        // a single run is the same whether or not other runs are generated
        assert_eq!(make_split(&m, 0.8, 7, 3).unwrap(), a[3]);
    }

    #[test]
    fn split_errors() {
        let m = manifest(1, 3);
        assert!(matches!(make_split(&m, 0.8, 0, 0), Err(EvalError::TooFewContents(1))));
        let m = manifest(3, 1);
        assert!(matches!(make_split(&m, 1.0, 0, 0), Err(EvalError::InvalidRatio(_))));
    }

    #[test]
    fn excluded_entries_never_split() {
        let mut m = manifest(10, 2);
        m.apply_exclusions(["c0_0", "c5_1"]);
        for plan in make_splits(&m, 0.6, 20, 1).unwrap() {
            assert!(!plan.train_ids.iter().chain(&plan.test_ids).any(|id| id == "c0_0" || id == "c5_1"));
            assert_eq!(plan.train_ids.len() + plan.test_ids.len(), 18);
        }
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}

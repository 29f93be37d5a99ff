//! Statistical aggregation of a patch feature matrix into one fixed-length
//! image descriptor.
//!
//! For a matrix with `n` patch rows and `l` feature columns every statistic
//! is computed column by column, in a fixed summation order, and the blocks
//! are concatenated:
//!
//! | kind       | blocks                          | length |
//! |------------|---------------------------------|--------|
//! | `Mean`     | mean                            | `l`    |
//! | `MeanStd`  | mean, std (divisor `n - 1`)     | `2l`   |
//! | `Quantile` | quartiles q0..q4                | `5l`   |
//! | `Moment`   | mean, M2, M3, M4                | `4l`   |
//! | `Concat`   | rows in patch order             | `nl`   |
//!
//! `Mk` is the signed k-th root of the k-th central moment with divisor `n`.

use std::fmt;
use std::str::FromStr;

use ndarray::{ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::backend::FeatureSet;
use crate::dataset::FeatureFile;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AggregateError {
    #[error("feature set has no patches")]
    EmptyFeatureSet,
    #[error("mean & std aggregation needs at least two patches")]
    NeedAtLeastTwoPatches,
    #[error("aggregated features disagree on {0}")]
    Inconsistent(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateKind {
    Mean,
    MeanStd,
    Quantile,
    Moment,
    Concat,
}

impl AggregateKind {
    /// The three structures the ensemble is built from, in ensemble order.
    pub const STATISTICAL: [AggregateKind; 3] = [AggregateKind::MeanStd, AggregateKind::Quantile, AggregateKind::Moment];

    /// Output length for `n` patches of width `l`.
    pub fn output_len(self, n: usize, l: usize) -> usize {
        match self {
            AggregateKind::Mean => l,
            AggregateKind::MeanStd => 2 * l,
            AggregateKind::Quantile => 5 * l,
            AggregateKind::Moment => 4 * l,
            AggregateKind::Concat => n * l,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AggregateKind::Mean => "mean",
            AggregateKind::MeanStd => "mean_std",
            AggregateKind::Quantile => "quantile",
            AggregateKind::Moment => "moment",
            AggregateKind::Concat => "concat",
        }
    }
}

impl fmt::Display for AggregateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AggregateKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "mean" => Ok(Self::Mean),
            "mean_std" | "meanstd" | "f1" => Ok(Self::MeanStd),
            "quantile" | "quartile" | "f2" => Ok(Self::Quantile),
            "moment" | "f3" => Ok(Self::Moment),
            "concat" => Ok(Self::Concat),
            other => Err(format!("unknown aggregation {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatedFeature {
    pub kind: AggregateKind,
    pub values: Vec<f64>,
    pub source_dim: usize,
    pub n_patches: usize,
}

impl AggregatedFeature {
    /// Stores the descriptor as a one-row feature file tagged with its kind.
    pub fn to_feature_file(&self, fs: &FeatureSet) -> FeatureFile {
        FeatureFile {
            image_id: fs.image_id.clone(),
            extractor_tag: fs.config.extractor_tag.clone(),
            layer_tag: fs.config.layer_tag.clone(),
            n_patches: 1,
            dim: self.values.len(),
            aggregate: Some(self.kind.name().to_owned()),
            provenance: None,
            values: self.values.iter().map(|&v| v as f32).collect(),
        }
    }
}

fn column_mean(col: ArrayView1<f64>) -> f64 {
    col.iter().sum::<f64>() / col.len() as f64
}

fn central_sum(col: ArrayView1<f64>, mean: f64, k: i32) -> f64 {
    col.iter().map(|&v| (v - mean).powi(k)).sum()
}

fn check_nonempty(m: &ArrayView2<f64>) -> Result<(), AggregateError> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(AggregateError::EmptyFeatureSet);
    }
    Ok(())
}

/// Column means of an `n × l` matrix.
pub fn mean_of(m: ArrayView2<f64>) -> Result<Vec<f64>, AggregateError> {
    check_nonempty(&m)?;
    Ok(m.axis_iter(Axis(1)).map(column_mean).collect())
}

pub fn mean_std_of(m: ArrayView2<f64>) -> Result<Vec<f64>, AggregateError> {
    check_nonempty(&m)?;
    let n = m.nrows();
    if n < 2 {
        return Err(AggregateError::NeedAtLeastTwoPatches);
    }
    let means = mean_of(m)?;
    let stds = m
        .axis_iter(Axis(1))
        .zip(&means)
        .map(|(col, &mu)| (central_sum(col, mu, 2) / (n - 1) as f64).sqrt());
    Ok(means.iter().copied().chain(stds).collect())
}

/// Linear interpolation between order statistics at `(n - 1) * t / 4`.
fn quartiles(sorted: &[f64]) -> [f64; 5] {
    let last = (sorted.len() - 1) as f64;
    std::array::from_fn(|t| {
        let pos = last * t as f64 / 4.0;
        let lo = pos.floor() as usize;
        let frac = pos - lo as f64;
        if frac == 0.0 {
            sorted[lo]
        } else {
            sorted[lo] + (sorted[lo + 1] - sorted[lo]) * frac
        }
    })
}

pub fn quantile_of(m: ArrayView2<f64>) -> Result<Vec<f64>, AggregateError> {
    check_nonempty(&m)?;
    let l = m.ncols();
    let mut out = vec![0.0; 5 * l];
    let mut buf = Vec::with_capacity(m.nrows());
    for (i, col) in m.axis_iter(Axis(1)).enumerate() {
        buf.clear();
        buf.extend(col.iter().copied());
        buf.sort_by(f64::total_cmp);
        for (t, q) in quartiles(&buf).into_iter().enumerate() {
            out[t * l + i] = q;
        }
    }
    Ok(out)
}

pub fn moment_of(m: ArrayView2<f64>) -> Result<Vec<f64>, AggregateError> {
    check_nonempty(&m)?;
    let n = m.nrows() as f64;
    let l = m.ncols();
    let means = mean_of(m)?;
    let mut out = vec![0.0; 4 * l];
    out[..l].copy_from_slice(&means);
    for (i, col) in m.axis_iter(Axis(1)).enumerate() {
        let mu = means[i];
        out[l + i] = (central_sum(col, mu, 2) / n).sqrt();
        out[2 * l + i] = (central_sum(col, mu, 3) / n).cbrt();
        out[3 * l + i] = (central_sum(col, mu, 4) / n).powf(0.25);
    }
    Ok(out)
}

pub fn concat_of(m: ArrayView2<f64>) -> Result<Vec<f64>, AggregateError> {
    check_nonempty(&m)?;
    Ok(m.iter().copied().collect())
}

/// Aggregates a raw matrix with the given structure.
pub fn aggregate_matrix(kind: AggregateKind, m: ArrayView2<f64>) -> Result<Vec<f64>, AggregateError> {
    match kind {
        AggregateKind::Mean => mean_of(m),
        AggregateKind::MeanStd => mean_std_of(m),
        AggregateKind::Quantile => quantile_of(m),
        AggregateKind::Moment => moment_of(m),
        AggregateKind::Concat => concat_of(m),
    }
}

pub fn aggregate(kind: AggregateKind, fs: &FeatureSet) -> Result<AggregatedFeature, AggregateError> {
    let values = aggregate_matrix(kind, fs.features.view())?;
    Ok(AggregatedFeature { kind, values, source_dim: fs.dim(), n_patches: fs.n_patches() })
}

pub fn agg_mean(fs: &FeatureSet) -> Result<AggregatedFeature, AggregateError> {
    aggregate(AggregateKind::Mean, fs)
}

pub fn agg_mean_std(fs: &FeatureSet) -> Result<AggregatedFeature, AggregateError> {
    aggregate(AggregateKind::MeanStd, fs)
}

pub fn agg_quantile(fs: &FeatureSet) -> Result<AggregatedFeature, AggregateError> {
    aggregate(AggregateKind::Quantile, fs)
}

pub fn agg_moment(fs: &FeatureSet) -> Result<AggregatedFeature, AggregateError> {
    aggregate(AggregateKind::Moment, fs)
}

pub fn agg_concat(fs: &FeatureSet) -> Result<AggregatedFeature, AggregateError> {
    aggregate(AggregateKind::Concat, fs)
}

/// Joins several descriptors of the same image, e.g. mean&std ⊕ quartiles.
pub fn concat_aggregates(parts: &[AggregatedFeature]) -> Result<AggregatedFeature, AggregateError> {
    let first = parts.first().ok_or(AggregateError::EmptyFeatureSet)?;
    if parts.iter().any(|p| p.source_dim != first.source_dim || p.n_patches != first.n_patches) {
        return Err(AggregateError::Inconsistent("source shape".into()));
    }
    Ok(AggregatedFeature {
        kind: AggregateKind::Concat,
        values: parts.iter().flat_map(|p| p.values.iter().copied()).collect(),
        source_dim: first.source_dim,
        n_patches: first.n_patches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn col(values: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((values.len(), 1), values.to_vec()).unwrap()
    }

    #[test]
    fn mean_cases() {
        let rows = array![[1.0, -2.0], [1.0, -2.0], [1.0, -2.0]];
        assert_eq!(mean_of(rows.view()).unwrap(), vec![1.0, -2.0]);
        assert_eq!(mean_of(col(&[1., 2., 3., 4., 5.]).view()).unwrap(), vec![3.0]);
        assert_eq!(mean_of(array![[4.0, 5.0]].view()).unwrap(), vec![4.0, 5.0]);
        assert_eq!(mean_of(Array2::<f64>::zeros((0, 3)).view()), Err(AggregateError::EmptyFeatureSet));
    }

    #[test]
    fn mean_std_cases() {
        let same = array![[2.0, 3.0], [2.0, 3.0]];
        assert_eq!(mean_std_of(same.view()).unwrap(), vec![2.0, 3.0, 0.0, 0.0]);
        let v = mean_std_of(col(&[1., 2., 3., 4., 5.]).view()).unwrap();
        assert_eq!(v[0], 3.0);
        assert!((v[1] - 1.581_138_830_084_189_8).abs() < 1e-15);
        assert_eq!(mean_std_of(array![[1.0]].view()), Err(AggregateError::NeedAtLeastTwoPatches));
    }

    #[test]
    fn quartile_cases() {
        assert_eq!(quantile_of(col(&[5., 3., 1., 4., 2.]).view()).unwrap(), vec![1., 2., 3., 4., 5.]);
        let same = array![[7.0, 8.0], [7.0, 8.0], [7.0, 8.0]];
        assert_eq!(quantile_of(same.view()).unwrap(), vec![7., 8., 7., 8., 7., 8., 7., 8., 7., 8.]);
        let q = quantile_of(col(&[3., 1.]).view()).unwrap();
        assert_eq!(q, vec![1.0, 1.5, 2.0, 2.5, 3.0]);
    }

    #[test]
    fn moment_cases() {
        let same = array![[1.5], [1.5], [1.5]];
        assert_eq!(moment_of(same.view()).unwrap(), vec![1.5, 0.0, 0.0, 0.0]);
        let m = moment_of(col(&[1., 2., 3., 4., 5.]).view()).unwrap();
        assert_eq!(m[0], 3.0);
        assert!((m[1] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(m[2], 0.0);
        assert!((m[3] - 6.8f64.powf(0.25)).abs() < 1e-15);
        assert!((m[3] - 1.6148315584236825).abs() < 1e-15);
        let skew = moment_of(col(&[0., 0., 3.]).view()).unwrap();
        assert_eq!(skew[0], 1.0);
        assert!((skew[2] - 1.25992104989).abs() < 1e-11);
        let neg = moment_of(col(&[0., 0., -3.]).view()).unwrap();
        assert!((neg[2] + 1.25992104989).abs() < 1e-11);
    }

    #[test]
    fn concat_cases() {
        assert_eq!(concat_of(array![[1.0, 2.0]].view()).unwrap(), vec![1.0, 2.0]);
        assert_eq!(concat_of(array![[1.0], [2.0]].view()).unwrap(), vec![1.0, 2.0]);
        let m = Array2::from_shape_fn((5, 3), |(i, j)| (i * 3 + j) as f64);
        assert_eq!(concat_of(m.view()).unwrap().len(), 15);
        assert_eq!(AggregateKind::Concat.output_len(5, 3), 15);
    }

    #[test]
    fn lengths_follow_kind() {
        let m = Array2::from_shape_fn((6, 4), |(i, j)| ((i * 5 + j * 3) % 7) as f64);
        for kind in [AggregateKind::Mean, AggregateKind::MeanStd, AggregateKind::Quantile, AggregateKind::Moment, AggregateKind::Concat] {
            assert_eq!(aggregate_matrix(kind, m.view()).unwrap().len(), kind.output_len(6, 4), "{kind}");
        }
    }

    #[test]
    fn kind_names_parse() {
        for kind in [AggregateKind::Mean, AggregateKind::MeanStd, AggregateKind::Quantile, AggregateKind::Moment, AggregateKind::Concat] {
            assert_eq!(kind.name().parse::<AggregateKind>().unwrap(), kind);
        }
        assert_eq!("f2".parse::<AggregateKind>().unwrap(), AggregateKind::Quantile);
    }
}

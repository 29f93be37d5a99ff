//! Model training and scoring: one PLS regressor per aggregation structure,
//! combined by averaging their predicted scores.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregate::{self, AggregateError, AggregateKind};
use crate::backend::{ExtractorConfig, FeatureSet};
use crate::layout::PatchSpec;
use crate::plsr::{self, ModelEnvelope, PlsrConfig, PlsrError, PlsrModel, MODEL_FORMAT_VERSION};

pub const SFA_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("no features for image {0}")]
    MissingFeatures(String),
    #[error("feature width {got} does not match the model's {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("feature sets come from different extractors ({0})")]
    InconsistentExtractor(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Plsr(#[from] PlsrError),
    #[error("model JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleRule {
    /// Arithmetic mean of every sub-model's prediction.
    AverageQuality,
    /// Prediction of one sub-model only.
    Single(AggregateKind),
}

impl std::str::FromStr for EnsembleRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "average" | "average_quality" | "average-quality" => Ok(Self::AverageQuality),
            other => other.parse().map(Self::Single),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingProvenance {
    pub n_train: usize,
    /// SHA-256 over the sorted training image ids.
    pub train_ids_digest: String,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SfaModel {
    pub aggregators: Vec<AggregateKind>,
    pub models: Vec<PlsrModel>,
    pub ensemble: EnsembleRule,
    pub extractor_cfg: ExtractorConfig,
    pub patch_spec: PatchSpec,
    pub provenance: TrainingProvenance,
}

#[derive(Serialize, Deserialize)]
struct SfaEnvelope<M> {
    version: u32,
    aggregators: Vec<AggregateKind>,
    models: Vec<ModelEnvelope<M>>,
    ensemble: EnsembleRule,
    extractor_cfg: ExtractorConfig,
    patch_spec: PatchSpec,
    provenance: TrainingProvenance,
}

impl SfaModel {
    pub fn to_json(&self) -> String {
        let env = SfaEnvelope {
            version: SFA_FORMAT_VERSION,
            aggregators: self.aggregators.clone(),
            models: self
                .models
                .iter()
                .map(|m| ModelEnvelope { version: MODEL_FORMAT_VERSION, model: m })
                .collect(),
            ensemble: self.ensemble,
            extractor_cfg: self.extractor_cfg.clone(),
            patch_spec: self.patch_spec,
            provenance: self.provenance.clone(),
        };
        serde_json::to_string_pretty(&env).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let env: SfaEnvelope<PlsrModel> = serde_json::from_str(text)?;
        if env.version != SFA_FORMAT_VERSION {
            return Err(PipelineError::InvalidModel(format!("unsupported version {}", env.version)));
        }
        if env.models.iter().any(|m| m.version != MODEL_FORMAT_VERSION) {
            return Err(PipelineError::InvalidModel("unsupported regressor version".into()));
        }
        let model = SfaModel {
            aggregators: env.aggregators,
            models: env.models.into_iter().map(|m| m.model).collect(),
            ensemble: env.ensemble,
            extractor_cfg: env.extractor_cfg,
            patch_spec: env.patch_spec,
            provenance: env.provenance,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.aggregators.is_empty() || self.aggregators.len() != self.models.len() {
            return Err(PipelineError::InvalidModel("aggregators and models must align 1:1".into()));
        }
        if let EnsembleRule::Single(kind) = self.ensemble {
            if !self.aggregators.contains(&kind) {
                return Err(PipelineError::InvalidModel(format!("ensemble selects untrained {kind}")));
            }
        }
        Ok(())
    }

    /// Per-aggregator predictions for one image, in aggregator order.
    pub fn sub_scores(&self, fs: &FeatureSet) -> Result<Vec<f64>, PipelineError> {
        if fs.dim() != self.extractor_cfg.dim {
            return Err(PipelineError::DimensionMismatch { expected: self.extractor_cfg.dim, got: fs.dim() });
        }
        let descriptors = describe(fs, &self.aggregators)?;
        self.sub_scores_from_descriptors(&descriptors)
    }

    pub(crate) fn sub_scores_from_descriptors(&self, descriptors: &[Vec<f64>]) -> Result<Vec<f64>, PipelineError> {
        self.models
            .iter()
            .zip(descriptors)
            .map(|(m, d)| plsr::predict(m, d).map_err(PipelineError::from))
            .collect()
    }

    /// Combines sub-model predictions according to the ensemble rule.
    pub fn combine(&self, sub_scores: &[f64]) -> f64 {
        match self.ensemble {
            EnsembleRule::AverageQuality => sub_scores.iter().sum::<f64>() / sub_scores.len() as f64,
            EnsembleRule::Single(kind) => {
                let i = self.aggregators.iter().position(|&k| k == kind).expect("validated model");
                sub_scores[i]
            }
        }
    }
}

/// Aggregated descriptors of one image, one vector per requested kind.
pub fn describe(fs: &FeatureSet, kinds: &[AggregateKind]) -> Result<Vec<Vec<f64>>, AggregateError> {
    kinds.iter().map(|&k| aggregate::aggregate_matrix(k, fs.features.view())).collect()
}

/// Precomputed descriptors for a collection of images, so repeated training
/// runs do not re-aggregate.
#[derive(Clone, Debug)]
pub struct DescriptorTable {
    pub kinds: Vec<AggregateKind>,
    pub extractor_cfg: ExtractorConfig,
    pub rows: BTreeMap<String, Vec<Vec<f64>>>,
}

impl DescriptorTable {
    pub fn build(features: &BTreeMap<String, FeatureSet>, kinds: &[AggregateKind]) -> Result<Self, PipelineError> {
        let first = features
            .values()
            .next()
            .ok_or(PipelineError::Plsr(PlsrError::TooFewSamples(0)))?;
        let cfg = first.config.clone();
        for fs in features.values() {
            if fs.dim() != cfg.dim || fs.config.extractor_tag != cfg.extractor_tag || fs.config.layer_tag != cfg.layer_tag {
                return Err(PipelineError::InconsistentExtractor(fs.image_id.clone()));
            }
        }
        let rows = features
            .par_iter()
            .map(|(id, fs)| describe(fs, kinds).map(|d| (id.clone(), d)))
            .collect::<Result<BTreeMap<_, _>, _>>()?;
        Ok(Self { kinds: kinds.to_vec(), extractor_cfg: cfg, rows })
    }

    fn design_matrix(&self, slot: usize, ids: &[&str]) -> Result<Array2<f64>, PipelineError> {
        let width = self.rows.get(ids[0]).map_or(0, |r| r[slot].len());
        let mut m = Array2::zeros((ids.len(), width));
        for (i, id) in ids.iter().enumerate() {
            let row = &self.rows.get(*id).ok_or_else(|| PipelineError::MissingFeatures((*id).to_owned()))?[slot];
            if row.len() != width {
                return Err(PipelineError::DimensionMismatch { expected: width, got: row.len() });
            }
            m.row_mut(i).assign(&ndarray::ArrayView1::from(row));
        }
        Ok(m)
    }

    /// Fits one regressor per kind on the images in `scores`.
    pub fn train(
        &self,
        scores: &BTreeMap<String, f64>,
        cfg: &PlsrConfig,
        ensemble: EnsembleRule,
        seed: Option<u64>,
    ) -> Result<SfaModel, PipelineError> {
        if let Some(missing) = scores.keys().find(|id| !self.rows.contains_key(*id)) {
            return Err(PipelineError::MissingFeatures(missing.clone()));
        }
        if scores.len() < 2 {
            return Err(PlsrError::TooFewSamples(scores.len()).into());
        }
        let ids: Vec<&str> = scores.keys().map(String::as_str).collect();
        let y = Array1::from_iter(scores.values().copied());
        let models = (0..self.kinds.len())
            .into_par_iter()
            .map(|slot| {
                let x = self.design_matrix(slot, &ids)?;
                plsr::fit(x.view(), y.view(), cfg).map_err(PipelineError::from)
            })
            .collect::<Result<Vec<_>, _>>()?;

        let mut hasher = Sha256::new();
        for id in &ids {
            hasher.update(id.as_bytes());
            hasher.update([0u8]);
        }
        let model = SfaModel {
            aggregators: self.kinds.clone(),
            models,
            ensemble,
            patch_spec: self.extractor_cfg.patch_spec,
            extractor_cfg: self.extractor_cfg.clone(),
            provenance: TrainingProvenance {
                n_train: ids.len(),
                train_ids_digest: hex::encode(hasher.finalize()),
                seed,
            },
        };
        model.validate()?;
        Ok(model)
    }

    /// Scores one image whose descriptors are in the table.
    pub fn score(&self, model: &SfaModel, image_id: &str) -> Result<(f64, Vec<f64>), PipelineError> {
        let d = self.rows.get(image_id).ok_or_else(|| PipelineError::MissingFeatures(image_id.to_owned()))?;
        let subs = model.sub_scores_from_descriptors(d)?;
        Ok((model.combine(&subs), subs))
    }
}

/// Trains the mean&std / quartile / moment ensemble.
pub fn train_sfa(
    features: &BTreeMap<String, FeatureSet>,
    scores: &BTreeMap<String, f64>,
    cfg: &PlsrConfig,
) -> Result<SfaModel, PipelineError> {
    train_with(features, scores, cfg, &AggregateKind::STATISTICAL, EnsembleRule::AverageQuality)
}

/// Trains with any set of aggregation structures and ensemble rule.
pub fn train_with(
    features: &BTreeMap<String, FeatureSet>,
    scores: &BTreeMap<String, f64>,
    cfg: &PlsrConfig,
    kinds: &[AggregateKind],
    ensemble: EnsembleRule,
) -> Result<SfaModel, PipelineError> {
    if let Some(missing) = scores.keys().find(|id| !features.contains_key(*id)) {
        return Err(PipelineError::MissingFeatures(missing.clone()));
    }
    if scores.len() < 2 {
        return Err(PlsrError::TooFewSamples(scores.len()).into());
    }
    let used: BTreeMap<String, FeatureSet> =
        scores.keys().map(|id| (id.clone(), features[id].clone())).collect();
    DescriptorTable::build(&used, kinds)?.train(scores, cfg, ensemble, None)
}

pub fn score_image(model: &SfaModel, fs: &FeatureSet) -> Result<f64, PipelineError> {
    let subs = model.sub_scores(fs)?;
    Ok(model.combine(&subs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ExtractorConfig;
    use crate::plsr::TrainingMeta;

    fn fake_model(intercepts: [f64; 3], ensemble: EnsembleRule) -> SfaModel {
        let meta = TrainingMeta {
            n_samples: 2,
            n_features: 1,
            centering: "mean".into(),
            scaling: "none".into(),
            status: plsr::FitStatus::Ok,
        };
        let dims = [2usize, 5, 4];
        SfaModel {
            aggregators: AggregateKind::STATISTICAL.to_vec(),
            models: intercepts
                .iter()
                .zip(dims)
                .map(|(&b, d)| PlsrModel {
                    n_components: 1,
                    components_used: 1,
                    feature_mean: vec![0.0; d],
                    target_mean: b,
                    coefficients: vec![0.0; d],
                    intercept: b,
                    training_meta: meta.clone(),
                })
                .collect(),
            ensemble,
            extractor_cfg: ExtractorConfig::external("m", "l", 1, PatchSpec::default()),
            patch_spec: PatchSpec::default(),
            provenance: TrainingProvenance { n_train: 2, train_ids_digest: String::new(), seed: None },
        }
    }

    fn one_dim_set() -> FeatureSet {
        FeatureSet::new(
            "x",
            Array2::from_shape_vec((3, 1), vec![1.0, 2.0, 4.0]).unwrap(),
            ExtractorConfig::external("m", "l", 1, PatchSpec::default()),
        )
        .unwrap()
    }

    #[test]
    fn average_of_sub_models() {
        let m = fake_model([2.0, 3.0, 4.0], EnsembleRule::AverageQuality);
        assert_eq!(score_image(&m, &one_dim_set()).unwrap(), 3.0);
    }

    #[test]
    fn single_rule_selects_sub_model() {
        let m = fake_model([2.0, 3.0, 4.0], EnsembleRule::Single(AggregateKind::Quantile));
        assert_eq!(score_image(&m, &one_dim_set()).unwrap(), 3.0);
        let m = fake_model([2.0, 3.5, 4.0], EnsembleRule::Single(AggregateKind::Quantile));
        assert_eq!(score_image(&m, &one_dim_set()).unwrap(), 3.5);
    }

    #[test]
    fn width_mismatch_rejected() {
        let m = fake_model([0.0; 3], EnsembleRule::AverageQuality);
        let fs = FeatureSet::new(
            "y",
            Array2::zeros((2, 2)),
            ExtractorConfig::external("m", "l", 2, PatchSpec::default()),
        )
        .unwrap();
        assert!(matches!(score_image(&m, &fs), Err(PipelineError::DimensionMismatch { expected: 1, got: 2 })));
    }

    #[test]
    fn one_image_is_too_few() {
        let fs = one_dim_set();
        let features = BTreeMap::from([("x".to_string(), fs)]);
        let scores = BTreeMap::from([("x".to_string(), 1.0)]);
        assert!(matches!(
            train_sfa(&features, &scores, &PlsrConfig::default()),
            Err(PipelineError::Plsr(PlsrError::TooFewSamples(1)))
        ));
    }

    #[test]
    fn missing_features_named() {
        let features = BTreeMap::from([("x".to_string(), one_dim_set())]);
        let scores = BTreeMap::from([("x".to_string(), 1.0), ("y".to_string(), 2.0)]);
        assert!(matches!(
            train_sfa(&features, &scores, &PlsrConfig::default()),
            Err(PipelineError::MissingFeatures(id)) if id == "y"
        ));
    }

    #[test]
    fn ensemble_rule_parses() {
        assert_eq!("average".parse::<EnsembleRule>().unwrap(), EnsembleRule::AverageQuality);
        assert_eq!("moment".parse::<EnsembleRule>().unwrap(), EnsembleRule::Single(AggregateKind::Moment));
    }
}

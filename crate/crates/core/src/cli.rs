//! Command-line front end.
//!
//! Every command merges an optional config file (TOML or JSON, chosen by
//! extension) with command-line flags, flags winning. Artifacts go under
//! `--out` and each one is stamped with the SHA-256 of the effective
//! configuration and the seed; `index.json` lists them with their digests.
//! Errors are printed to stderr as one JSON object and the process exits
//! non-zero.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregate::{self, AggregateKind};
use crate::backend::{self, ExtractorConfig, FeatureSet, RawImage, SubprocessModel};
use crate::dataset::{self, ArtifactTag, DatasetManifest};
use crate::evaluation::{self, HarnessConfig};
use crate::layout::{self, ImageDims, PatchSpec, RepresentationMode, DEFAULT_PATCH_SIZE};
use crate::pipeline::{DescriptorTable, EnsembleRule, SfaModel};
use crate::plsr::{self, PlsrConfig, DEFAULT_COMPONENTS};

pub const DEFAULT_RUNS: usize = 1000;
pub const DEFAULT_RATIO: f64 = 0.8;
const CV_FOLDS: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("missing upstream artifact: {}", .0.display())]
    UpstreamArtifactMissing(PathBuf),
    #[error(transparent)]
    Library(#[from] crate::Error),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            Self::ConfigInvalid(_) => "ConfigInvalid",
            Self::UpstreamArtifactMissing(_) => "UpstreamArtifactMissing",
            Self::Library(crate::Error::Ingest(_)) => "IngestError",
            Self::Library(crate::Error::Layout(_)) => "LayoutError",
            Self::Library(crate::Error::Backend(_)) => "BackendError",
            Self::Library(crate::Error::Aggregate(_)) => "AggregateError",
            Self::Library(crate::Error::Plsr(_)) => "PlsrError",
            Self::Library(crate::Error::Pipeline(_)) => "PipelineError",
            Self::Library(crate::Error::Eval(_)) => "EvalError",
            Self::Io { .. } => "Io",
        }
    }

    /// Machine-readable form printed on stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.kind(), "message": self.to_string() }).to_string()
    }
}

macro_rules! lib_err {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                Self::Library(e.into())
            }
        }
    )*};
}
lib_err!(
    dataset::IngestError,
    layout::LayoutError,
    backend::BackendError,
    aggregate::AggregateError,
    plsr::PlsrError,
    crate::pipeline::PipelineError,
    evaluation::EvalError
);

fn io_err(context: impl std::fmt::Display) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.to_string();
    move |source| CliError::Io { context, source }
}

#[derive(Parser, Debug)]
#[command(name = "sfa", version, about = "Blur image quality assessment by statistical feature aggregation and PLS regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML or JSON file with any of the options below; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub flags: RunConfig,
}

#[derive(Subcommand, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Print the patch layout for given image dimensions.
    Layout,
    /// Extract per-patch features for every image in a manifest.
    Extract,
    /// Aggregate feature files into image-level descriptors.
    Aggregate,
    /// Train a model on every active manifest entry.
    Train,
    /// Score feature files with a trained model.
    Predict,
    /// Evaluate a model or an external score file against a manifest.
    Evaluate,
    /// Repeated content-disjoint train/test evaluation.
    Montecarlo,
    /// Train on one dataset, test on another.
    Crosseval,
    /// Monte-Carlo evaluation over several training ratios.
    Sweep,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Self::Layout => "layout",
            Self::Extract => "extract",
            Self::Aggregate => "aggregate",
            Self::Train => "train",
            Self::Predict => "predict",
            Self::Evaluate => "evaluate",
            Self::Montecarlo => "montecarlo",
            Self::Crosseval => "crosseval",
            Self::Sweep => "sweep",
        }
    }
}

/// All knobs a command may read. Unset fields fall back to the config file,
/// then to built-in defaults.
#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for every stochastic step; required by montecarlo and sweep.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dataset manifest CSV (metadata in the sidecar JSON next to it).
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long, global = true)]
    pub train_manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long, global = true)]
    pub test_manifest: Option<PathBuf>,
    /// File of image ids to exclude, one per line.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long, global = true)]
    pub exclusions: Option<PathBuf>,
    /// Directory of feature files, or a single feature file for predict.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long, global = true)]
    pub features: Option<PathBuf>,
    /// Extra feature directory for the crosseval target dataset.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long, global = true)]
    pub test_features: Option<PathBuf>,
    /// Trained model JSON.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// External objective scores CSV (`image_id,score`) for evaluate.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long, global = true)]
    pub scores: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long, global = true)]
    pub width: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long, global = true)]
    pub height: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long, global = true)]
    pub patch_size: Option<u32>,
    /// Defaults to half the patch size.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long, global = true)]
    pub stride: Option<u32>,
    /// multipatch, crop, scale or pad.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long, global = true)]
    pub representation: Option<String>,
    /// builtin or external.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long, global = true)]
    pub backend: Option<String>,
    /// Command line of the external model process.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long, global = true)]
    pub model_cmd: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long, global = true)]
    pub extractor_tag: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long, global = true)]
    pub layer_tag: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    /// Aggregation structures, comma separated.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long, global = true, value_delimiter = ',')]
    pub kinds: Option<Vec<String>>,
    /// `average` or a single aggregation name.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long, global = true)]
    pub ensemble: Option<String>,
    /// PLS component count.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long, global = true)]
    pub components: Option<usize>,
    /// Component counts to choose from by 5-fold cross-validation (train only).
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long, global = true, value_delimiter = ',')]
    pub candidates: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long, global = true)]
    pub runs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long, global = true)]
    pub ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long, global = true, value_delimiter = ',')]
    pub ratios: Option<Vec<f64>>,
    /// Also compute the outlier ratio per Monte-Carlo run.
    #[serde(skip_serializing_if = "Option::is_none")]
    #[arg(long, global = true)]
    pub outliers: Option<bool>,
}

macro_rules! merge_fields {
    ($a:ident, $b:ident; $($f:ident),*) => {
        RunConfig { $($f: $a.$f.or($b.$f)),* }
    };
}

impl RunConfig {
    /// Reads a config file; `.toml` is parsed as TOML, anything else as JSON.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|_| CliError::UpstreamArtifactMissing(path.to_path_buf()))?;
        if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| CliError::ConfigInvalid(format!("{}: {e}", path.display())))
        } else {
            serde_json::from_str(&text).map_err(|e| CliError::ConfigInvalid(format!("{}: {e}", path.display())))
        }
    }

    /// Fields set in `self` win over `base`.
    pub fn merged(self, base: RunConfig) -> RunConfig {
        merge_fields!(self, base; seed, out, manifest, train_manifest, test_manifest, exclusions, features,
            test_features, model, scores, width, height, patch_size, stride, representation, backend,
            model_cmd, extractor_tag, layer_tag, dim, kinds, ensemble, components, candidates, runs, ratio,
            ratios, outliers)
    }

    /// SHA-256 of the configuration with the output location removed.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        hex::encode(Sha256::digest(serde_json::to_vec(&c).expect("config serializes")))
    }

    /// Every referenced input path must exist.
    pub fn validate_paths(&self) -> Result<(), CliError> {
        let paths = [
            &self.manifest,
            &self.train_manifest,
            &self.test_manifest,
            &self.exclusions,
            &self.features,
            &self.test_features,
            &self.model,
            &self.scores,
        ];
        for p in paths.into_iter().flatten() {
            if !p.exists() {
                return Err(CliError::UpstreamArtifactMissing(p.clone()));
            }
        }
        Ok(())
    }

    fn require<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T, CliError> {
        v.as_ref().ok_or_else(|| CliError::ConfigInvalid(format!("--{flag} is required")))
    }

    fn seed(&self) -> Result<u64, CliError> {
        Self::require(&self.seed, "seed").copied()
    }

    fn patch_spec(&self) -> Result<PatchSpec, CliError> {
        let size = self.patch_size.unwrap_or(DEFAULT_PATCH_SIZE);
        Ok(match self.stride {
            Some(s) => PatchSpec::new(size, s)?,
            None => PatchSpec::with_size(size)?,
        })
    }

    fn representation(&self) -> Result<RepresentationMode, CliError> {
        self.representation
            .as_deref()
            .map_or(Ok(RepresentationMode::MultiPatch), str::parse)
            .map_err(CliError::ConfigInvalid)
    }

    fn kinds(&self) -> Result<Vec<AggregateKind>, CliError> {
        match &self.kinds {
            None => Ok(AggregateKind::STATISTICAL.to_vec()),
            Some(v) if v.is_empty() => Err(CliError::ConfigInvalid("--kinds is empty".into())),
            Some(v) => v.iter().map(|k| k.parse().map_err(CliError::ConfigInvalid)).collect(),
        }
    }

    fn ensemble(&self) -> Result<EnsembleRule, CliError> {
        self.ensemble
            .as_deref()
            .map_or(Ok(EnsembleRule::AverageQuality), str::parse)
            .map_err(CliError::ConfigInvalid)
    }

    fn plsr(&self) -> PlsrConfig {
        PlsrConfig::with_components(self.components.unwrap_or(DEFAULT_COMPONENTS))
    }

    fn harness(&self) -> Result<HarnessConfig, CliError> {
        Ok(HarnessConfig {
            plsr: self.plsr(),
            kinds: self.kinds()?,
            ensemble: self.ensemble()?,
            train_ratio: self.ratio.unwrap_or(DEFAULT_RATIO),
            outliers: self.outliers.unwrap_or(true),
        })
    }
}

#[derive(Serialize)]
struct IndexEntry {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Index<'a> {
    command: &'a str,
    config_hash: &'a str,
    seed: Option<u64>,
    config: &'a RunConfig,
    artifacts: Vec<IndexEntry>,
}

/// Writes stamped artifacts under one directory and records them.
pub struct ArtifactWriter {
    dir: PathBuf,
    command: Command,
    tag: ArtifactTag,
    written: BTreeMap<String, String>,
}

impl ArtifactWriter {
    fn new(dir: &Path, command: Command, tag: ArtifactTag) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(io_err(dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), command, tag, written: BTreeMap::new() })
    }

    fn put(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent.display()))?;
        }
        fs::write(&path, bytes).map_err(io_err(path.display()))?;
        self.written.insert(rel.to_owned(), hex::encode(Sha256::digest(bytes)));
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, data: &T) -> Result<(), CliError> {
        let doc = serde_json::json!({
            "command": self.command.name(),
            "config_hash": self.tag.config_hash,
            "seed": self.tag.seed,
            "data": data,
        });
        let mut text = serde_json::to_string_pretty(&doc).expect("artifact serializes");
        text.push('\n');
        self.put(rel, text.as_bytes())
    }

    fn csv(&mut self, rel: &str, body: &str) -> Result<(), CliError> {
        let seed = self.tag.seed.map_or_else(|| "none".to_owned(), |s| s.to_string());
        let text = format!("# config_hash={} seed={seed}\n{body}", self.tag.config_hash);
        self.put(rel, text.as_bytes())
    }

    fn feature(&mut self, rel: &str, mut file: dataset::FeatureFile) -> Result<(), CliError> {
        file.provenance = Some(self.tag.clone());
        let bytes = file.to_bytes()?;
        self.put(rel, &bytes)
    }

    fn finish(self, config: &RunConfig) -> Result<(), CliError> {
        let index = Index {
            command: self.command.name(),
            config_hash: &self.tag.config_hash,
            seed: self.tag.seed,
            config,
            artifacts: self.written.iter().map(|(p, h)| IndexEntry { path: p.clone(), sha256: h.clone() }).collect(),
        };
        let mut text = serde_json::to_string_pretty(&index).expect("index serializes");
        text.push('\n');
        let path = self.dir.join("index.json");
        fs::write(&path, text).map_err(io_err(path.display()))
    }
}

fn file_stem_for(image_id: &str) -> String {
    image_id.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}

fn load_manifest(path: &Path, exclusions: Option<&PathBuf>) -> Result<DatasetManifest, CliError> {
    let mut m = dataset::load_manifest(path)?;
    if let Some(ex) = exclusions {
        m.apply_exclusions(dataset::read_exclusion_list(ex)?);
    }
    Ok(m)
}

/// Reads every per-patch feature file (`*.sfaf`, aggregated files skipped)
/// in a directory, or one file.
pub fn load_features(path: &Path) -> Result<BTreeMap<String, FeatureSet>, CliError> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(path)
            .map_err(io_err(path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "sfaf"))
            .collect();
        v.sort();
        v
    } else {
        vec![path.to_path_buf()]
    };
    let mut out = BTreeMap::new();
    for f in files {
        let file = dataset::read_feature_file(&f)?;
        if file.aggregate.is_some() {
            continue;
        }
        let fs = FeatureSet::from_feature_file(file)?;
        if out.contains_key(&fs.image_id) {
            return Err(CliError::ConfigInvalid(format!("duplicate features for {}", fs.image_id)));
        }
        out.insert(fs.image_id.clone(), fs);
    }
    Ok(out)
}

fn read_scores_csv(path: &Path) -> Result<BTreeMap<String, f64>, CliError> {
    #[derive(Deserialize)]
    struct Row {
        image_id: String,
        score: f64,
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::ConfigInvalid(format!("{}: {e}", path.display())))?;
    let mut out = BTreeMap::new();
    for row in reader.deserialize::<Row>() {
        let row = row.map_err(|e| CliError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        out.insert(row.image_id, row.score);
    }
    Ok(out)
}

/// Parses arguments, runs the command and returns its stdout text.
pub fn run<I, T>(args: I) -> Result<String, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::ConfigInvalid(e.to_string()))?;
    let base = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    let cfg = cli.flags.merged(base);
    cfg.validate_paths()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(CliError::ConfigInvalid("--jobs must be positive".into()));
        }
        pool = pool.num_threads(j);
    }
    let pool = pool.build().map_err(|e| CliError::ConfigInvalid(e.to_string()))?;
    pool.install(|| dispatch(cli.command, &cfg))
}

fn dispatch(command: Command, cfg: &RunConfig) -> Result<String, CliError> {
    if command == Command::Layout {
        return cmd_layout(cfg);
    }
    if command == Command::Predict && cfg.out.is_none() {
        return cmd_predict(cfg, None);
    }
    let out = RunConfig::require(&cfg.out, "out")?;
    let tag = ArtifactTag { config_hash: cfg.hash(), seed: cfg.seed };
    let mut w = ArtifactWriter::new(out, command, tag)?;
    let stdout = match command {
        Command::Extract => cmd_extract(cfg, &mut w)?,
        Command::Aggregate => cmd_aggregate(cfg, &mut w)?,
        Command::Train => cmd_train(cfg, &mut w)?,
        Command::Predict => cmd_predict(cfg, Some(&mut w))?,
        Command::Evaluate => cmd_evaluate(cfg, &mut w)?,
        Command::Montecarlo => cmd_montecarlo(cfg, &mut w)?,
        Command::Crosseval => cmd_crosseval(cfg, &mut w)?,
        Command::Sweep => cmd_sweep(cfg, &mut w)?,
        Command::Layout => unreachable!(),
    };
    w.finish(cfg)?;
    Ok(stdout)
}

#[derive(Serialize)]
struct LayoutReport {
    dims: ImageDims,
    spec: PatchSpec,
    representation: RepresentationMode,
    n_patches: usize,
    origins: Vec<(u32, u32)>,
    plan: layout::RepresentationPlan,
}

fn cmd_layout(cfg: &RunConfig) -> Result<String, CliError> {
    let dims = ImageDims::new(*RunConfig::require(&cfg.width, "width")?, *RunConfig::require(&cfg.height, "height")?)?;
    let spec = cfg.patch_spec()?;
    let mode = cfg.representation()?;
    let plan = layout::represent(dims, mode, spec)?;
    let origins = plan.patches.iter().map(|p| (p.source.x, p.source.y)).collect();
    let report = LayoutReport { dims, spec, representation: mode, n_patches: plan.patches.len(), origins, plan };
    if let Some(out) = &cfg.out {
        let mut w = ArtifactWriter::new(out, Command::Layout, ArtifactTag { config_hash: cfg.hash(), seed: cfg.seed })?;
        w.json("layout.json", &report)?;
        w.finish(cfg)?;
    }
    Ok(serde_json::to_string_pretty(&report).expect("layout serializes") + "\n")
}

fn extractor_config(cfg: &RunConfig) -> Result<ExtractorConfig, CliError> {
    let spec = cfg.patch_spec()?;
    let mut ec = match cfg.backend.as_deref().unwrap_or("builtin") {
        "builtin" => ExtractorConfig::builtin(spec),
        "external" => ExtractorConfig::external(
            RunConfig::require(&cfg.extractor_tag, "extractor-tag")?.clone(),
            RunConfig::require(&cfg.layer_tag, "layer-tag")?.clone(),
            *RunConfig::require(&cfg.dim, "dim")?,
            spec,
        ),
        other => return Err(CliError::ConfigInvalid(format!("unknown backend {other:?}"))),
    };
    ec.representation = cfg.representation()?;
    ec.validate()?;
    Ok(ec)
}

fn cmd_extract(cfg: &RunConfig, w: &mut ArtifactWriter) -> Result<String, CliError> {
    let manifest_path = RunConfig::require(&cfg.manifest, "manifest")?;
    let manifest = load_manifest(manifest_path, cfg.exclusions.as_ref())?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let ec = extractor_config(cfg)?;
    let entries: Vec<_> = manifest.active_entries().collect();

    let extract_one = |e: &dataset::ImageEntry, model: Option<&mut dyn backend::PatchModel>| -> Result<FeatureSet, CliError> {
        let image = RawImage::open(manifest.resolve_path(root, e))?;
        let plan = layout::represent(image.dims(), ec.representation, ec.patch_spec)?;
        Ok(backend::extract_plan(&e.image_id, &image, &plan, &ec, model)?)
    };
    let sets: Vec<FeatureSet> = match ec.backend {
        backend::BackendKind::ExternalModel => {
            let cmd = RunConfig::require(&cfg.model_cmd, "model-cmd")?;
            let mut parts = cmd.split_whitespace().map(str::to_owned);
            let program = parts.next().ok_or_else(|| CliError::ConfigInvalid("--model-cmd is empty".into()))?;
            let args: Vec<String> = parts.collect();
            let mut model = SubprocessModel::spawn(&program, &args)?;
            entries.iter().map(|e| extract_one(e, Some(&mut model))).collect::<Result<_, _>>()?
        }
        _ => entries.par_iter().map(|e| extract_one(e, None)).collect::<Result<_, _>>()?,
    };
    for fs in &sets {
        w.feature(&format!("features/{}.sfaf", file_stem_for(&fs.image_id)), fs.to_feature_file())?;
    }
    Ok(format!("extracted {} feature sets\n", sets.len()))
}

fn cmd_aggregate(cfg: &RunConfig, w: &mut ArtifactWriter) -> Result<String, CliError> {
    let features = load_features(RunConfig::require(&cfg.features, "features")?)?;
    let kinds = cfg.kinds()?;
    let mut count = 0;
    for fs in features.values() {
        for &k in &kinds {
            let agg = aggregate::aggregate(k, fs)?;
            w.feature(&format!("aggregated/{}.{}.sfaf", file_stem_for(&fs.image_id), k.name()), agg.to_feature_file(fs))?;
            count += 1;
        }
    }
    Ok(format!("wrote {count} aggregated descriptors\n"))
}

/// Fits one regressor per kind, choosing each component count from
/// `candidates` by cross-validation when given.
fn train_model(
    table: &DescriptorTable,
    scores: &BTreeMap<String, f64>,
    cfg: &RunConfig,
) -> Result<(SfaModel, Vec<usize>), CliError> {
    let ensemble = cfg.ensemble()?;
    let Some(candidates) = &cfg.candidates else {
        let plsr = cfg.plsr();
        let model = table.train(scores, &plsr, ensemble, cfg.seed)?;
        return Ok((model, vec![plsr.n_components; table.kinds.len()]));
    };
    let seed = cfg.seed()?;
    let ids: Vec<&String> = scores.keys().collect();
    let y = Array1::from_iter(scores.values().copied());
    let mut chosen = Vec::with_capacity(table.kinds.len());
    let mut models = Vec::with_capacity(table.kinds.len());
    let mut template = None;
    for (slot, &kind) in table.kinds.iter().enumerate() {
        let rows: Vec<f64> = ids
            .iter()
            .flat_map(|id| table.rows[*id][slot].iter().copied())
            .collect();
        let width = rows.len() / ids.len();
        let x = ndarray::Array2::from_shape_vec((ids.len(), width), rows)
            .map_err(|e| CliError::ConfigInvalid(e.to_string()))?;
        let p = plsr::select_components(x.view(), y.view(), candidates, CV_FOLDS, seed)?;
        let single = DescriptorTable {
            kinds: vec![kind],
            extractor_cfg: table.extractor_cfg.clone(),
            rows: table.rows.iter().map(|(id, r)| (id.clone(), vec![r[slot].clone()])).collect(),
        };
        let m = single.train(scores, &PlsrConfig::with_components(p), EnsembleRule::AverageQuality, Some(seed))?;
        chosen.push(p);
        models.extend(m.models.iter().cloned());
        template.get_or_insert(m);
    }
    let mut model = template.expect("at least one kind");
    model.aggregators = table.kinds.clone();
    model.models = models;
    model.ensemble = ensemble;
    model.validate().map_err(crate::Error::from)?;
    Ok((model, chosen))
}

fn cmd_train(cfg: &RunConfig, w: &mut ArtifactWriter) -> Result<String, CliError> {
    let manifest = load_manifest(RunConfig::require(&cfg.manifest, "manifest")?, cfg.exclusions.as_ref())?;
    let features = load_features(RunConfig::require(&cfg.features, "features")?)?;
    let scores = manifest.scores();
    let used = scores
        .keys()
        .map(|id| {
            features
                .get(id)
                .map(|f| (id.clone(), f.clone()))
                .ok_or_else(|| crate::pipeline::PipelineError::MissingFeatures(id.clone()).into())
        })
        .collect::<Result<BTreeMap<_, _>, CliError>>()?;
    let table = DescriptorTable::build(&used, &cfg.kinds()?)?;
    let (model, chosen) = train_model(&table, &scores, cfg)?;
    w.put("model.json", model.to_json().as_bytes())?;
    w.json("training.json", &serde_json::json!({ "n_train": scores.len(), "components": chosen }))?;
    Ok(format!("trained on {} images, components {:?}\n", scores.len(), chosen))
}

fn read_model(cfg: &RunConfig) -> Result<SfaModel, CliError> {
    let path = RunConfig::require(&cfg.model, "model")?;
    let text = fs::read_to_string(path).map_err(io_err(path.display()))?;
    Ok(SfaModel::from_json(&text)?)
}

fn cmd_predict(cfg: &RunConfig, w: Option<&mut ArtifactWriter>) -> Result<String, CliError> {
    let model = read_model(cfg)?;
    let features = load_features(RunConfig::require(&cfg.features, "features")?)?;
    let mut lines = String::new();
    for fs in features.values() {
        let score = crate::pipeline::score_image(&model, fs)?;
        lines.push_str(&serde_json::json!({ "image_id": fs.image_id, "score": score }).to_string());
        lines.push('\n');
    }
    if let Some(w) = w {
        w.put("predictions.jsonl", lines.as_bytes())?;
    }
    Ok(lines)
}

fn cmd_evaluate(cfg: &RunConfig, w: &mut ArtifactWriter) -> Result<String, CliError> {
    let manifest = load_manifest(RunConfig::require(&cfg.manifest, "manifest")?, cfg.exclusions.as_ref())?;
    let report = match (&cfg.scores, &cfg.model) {
        (Some(scores), _) => evaluation::evaluate_scores(&manifest, &read_scores_csv(scores)?)?,
        (None, Some(_)) => {
            let model = read_model(cfg)?;
            let features = load_features(RunConfig::require(&cfg.features, "features")?)?;
            let mut preds = BTreeMap::new();
            for e in manifest.active_entries() {
                let fs = features
                    .get(&e.image_id)
                    .ok_or_else(|| evaluation::EvalError::MissingFeatures(e.image_id.clone()))?;
                preds.insert(e.image_id.clone(), crate::pipeline::score_image(&model, fs)?);
            }
            evaluation::evaluate_predictions(&manifest, &preds)?
        }
        (None, None) => return Err(CliError::ConfigInvalid("evaluate needs --model or --scores".into())),
    };
    w.json("report.json", &report)?;
    w.csv("band.csv", &report.band_csv())?;
    Ok(metrics_line(report.srocc, report.plcc, report.rmse))
}

fn metrics_line(srocc: f64, plcc: f64, rmse: f64) -> String {
    format!("srocc {srocc:.4} plcc {plcc:.4} rmse {rmse:.4}\n")
}

fn cmd_montecarlo(cfg: &RunConfig, w: &mut ArtifactWriter) -> Result<String, CliError> {
    let seed = cfg.seed()?;
    let manifest = load_manifest(RunConfig::require(&cfg.manifest, "manifest")?, cfg.exclusions.as_ref())?;
    let features = load_features(RunConfig::require(&cfg.features, "features")?)?;
    let harness = cfg.harness()?;
    let summary = evaluation::montecarlo_eval(&manifest, &features, &harness, cfg.runs.unwrap_or(DEFAULT_RUNS), seed)?;
    w.json("summary.json", &summary)?;
    w.csv("runs.csv", &evaluation::runs_csv(&summary))?;
    let m = summary.median;
    Ok(format!("median over {} runs: {}", summary.n_runs, metrics_line(m.srocc, m.plcc, m.rmse)))
}

fn cmd_crosseval(cfg: &RunConfig, w: &mut ArtifactWriter) -> Result<String, CliError> {
    let train = load_manifest(RunConfig::require(&cfg.train_manifest, "train-manifest")?, cfg.exclusions.as_ref())?;
    let test = load_manifest(RunConfig::require(&cfg.test_manifest, "test-manifest")?, cfg.exclusions.as_ref())?;
    let mut features = load_features(RunConfig::require(&cfg.features, "features")?)?;
    if let Some(extra) = &cfg.test_features {
        for (id, fs) in load_features(extra)? {
            features.entry(id).or_insert(fs);
        }
    }
    let report = evaluation::cross_dataset_eval(&train, &test, &features, &cfg.harness()?)?;
    w.json("report.json", &report)?;
    w.csv("band.csv", &report.band_csv())?;
    Ok(metrics_line(report.srocc, report.plcc, report.rmse))
}

fn cmd_sweep(cfg: &RunConfig, w: &mut ArtifactWriter) -> Result<String, CliError> {
    let seed = cfg.seed()?;
    let manifest = load_manifest(RunConfig::require(&cfg.manifest, "manifest")?, cfg.exclusions.as_ref())?;
    let features = load_features(RunConfig::require(&cfg.features, "features")?)?;
    let ratios = cfg.ratios.clone().unwrap_or_else(|| (1..=9).map(|i| f64::from(i) / 10.0).collect());
    let rows = evaluation::ratio_sweep(&manifest, &features, &cfg.harness()?, &ratios, cfg.runs.unwrap_or(DEFAULT_RUNS), seed)?;
    let compact: Vec<_> = rows
        .iter()
        .map(|r| serde_json::json!({ "ratio": r.ratio, "median": r.summary.median, "mean": r.summary.mean }))
        .collect();
    w.json("sweep.json", &compact)?;
    let csv = evaluation::sweep_csv(&rows);
    w.csv("sweep.csv", &csv)?;
    let mut out = String::new();
    for r in &rows {
        let _ = write!(out, "ratio {:.2} {}", r.ratio, metrics_line(r.summary.median.srocc, r.summary.median.plcc, r.summary.median.rmse));
    }
    Ok(out)
}

/// Process entry point used by the `sfa` binary.
pub fn main() {
    let args: Vec<OsString> = std::env::args_os().collect();
    if args.iter().skip(1).any(|a| a == "--help" || a == "-h" || a == "--version" || a == "-V" || a == "help")
        || args.len() == 1
    {
        // let clap print usage and exit with its own status
        let _ = Cli::parse_from(args.iter());
    }
    match run(args) {
        Ok(stdout) => print!("{stdout}"),
        Err(e) => {
            eprintln!("{}", e.to_json());
            std::process::exit(1);
        }
    }
}

//! Dataset manifests and the portable binary feature container.
//!
//! A manifest is a CSV file with header `image_id,path,score[,content_id][,excluded]`
//! plus a JSON sidecar holding the dataset-level metadata:
//!
//! ```json
//! {"name": "BID", "score_kind": "MOS", "score_range": [0.0, 5.0]}
//! ```
//!
//! When the `content_id` column is absent every image is its own content,
//! which is the right grouping for realistic-distortion databases with no
//! reference images.
//!
//! Feature files are little-endian: magic `SFAF`, `u32` version, `u32`
//! header length, a UTF-8 JSON header, then `n_patches * dim` `f32` values in
//! patch-major order.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const FEATURE_MAGIC: &[u8; 4] = b"SFAF";
pub const FEATURE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("parse error at line {line}: {message}")]
    ParseError { line: u64, message: String },
    #[error("score of {image_id} lies outside the dataset range")]
    ScoreOutOfRange { image_id: String },
    #[error("duplicate image id {0}")]
    DuplicateImageId(String),
    #[error("invalid manifest metadata: {0}")]
    InvalidMetadata(String),
    #[error("feature file magic mismatch")]
    MagicMismatch,
    #[error("unsupported feature file version {0}")]
    VersionUnsupported(u32),
    #[error("feature file header is invalid: {0}")]
    HeaderInvalid(String),
    #[error("feature payload truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("feature payload holds {payload_dim} values per patch but header says {header_dim}")]
    DimensionMismatch { header_dim: usize, payload_dim: usize },
    #[error("feature file violates invariants: {0}")]
    InvalidFeatureFile(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreKind {
    /// Mean opinion score, higher is better.
    #[serde(rename = "MOS")]
    Mos,
    /// Difference mean opinion score, higher is worse.
    #[serde(rename = "DMOS")]
    Dmos,
}

/// Dataset-level metadata stored in the manifest's JSON sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestMeta {
    pub name: String,
    pub score_kind: ScoreKind,
    pub score_range: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub image_id: String,
    pub path: String,
    pub score: f64,
    pub content_id: String,
    #[serde(default)]
    pub excluded: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub score_kind: ScoreKind,
    pub score_range: (f64, f64),
    pub entries: Vec<ImageEntry>,
}

impl DatasetManifest {
    /// Builds a manifest and checks every invariant.
    pub fn new(meta: ManifestMeta, entries: Vec<ImageEntry>) -> Result<Self, IngestError> {
        let manifest = Self {
            name: meta.name,
            score_kind: meta.score_kind,
            score_range: meta.score_range,
            entries,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let (lo, hi) = self.score_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(IngestError::InvalidMetadata(format!(
                "score range ({lo}, {hi}) is not a finite increasing interval"
            )));
        }
        let mut seen = HashSet::with_capacity(self.entries.len());
        for (i, e) in self.entries.iter().enumerate() {
            // data rows start on line 2
            let line = i as u64 + 2;
            if e.image_id.is_empty() {
                return Err(parse_err(line, "empty image_id"));
            }
            if e.path.is_empty() {
                return Err(parse_err(line, "empty path"));
            }
            if e.content_id.is_empty() {
                return Err(parse_err(line, "empty content_id"));
            }
            if !(e.score.is_finite() && e.score >= lo && e.score <= hi) {
                return Err(IngestError::ScoreOutOfRange { image_id: e.image_id.clone() });
            }
            if !seen.insert(e.image_id.as_str()) {
                return Err(IngestError::DuplicateImageId(e.image_id.clone()));
            }
        }
        Ok(())
    }

    /// Entries that take part in evaluation.
    pub fn active_entries(&self) -> impl Iterator<Item = &ImageEntry> {
        self.entries.iter().filter(|e| !e.excluded)
    }

    /// Groups active entries by content id. Groups appear in first-seen order.
    pub fn content_groups(&self) -> Vec<(String, Vec<&ImageEntry>)> {
        let mut order: Vec<String> = Vec::new();
        let mut groups: BTreeMap<&str, Vec<&ImageEntry>> = BTreeMap::new();
        for e in self.active_entries() {
            let slot = groups.entry(e.content_id.as_str()).or_default();
            if slot.is_empty() {
                order.push(e.content_id.clone());
            }
            slot.push(e);
        }
        order
            .into_iter()
            .map(|c| {
                let members = groups.remove(c.as_str()).unwrap_or_default();
                (c, members)
            })
            .collect()
    }

    pub fn scores(&self) -> BTreeMap<String, f64> {
        self.active_entries().map(|e| (e.image_id.clone(), e.score)).collect()
    }

    pub fn entry(&self, image_id: &str) -> Option<&ImageEntry> {
        self.entries.iter().find(|e| e.image_id == image_id)
    }

    /// Marks the listed images as excluded. Unknown ids are returned.
    pub fn apply_exclusions<I, S>(&mut self, ids: I) -> Vec<String>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut unknown = Vec::new();
        for id in ids {
            let id = id.as_ref();
            match self.entries.iter_mut().find(|e| e.image_id == id) {
                Some(e) => e.excluded = true,
                None => unknown.push(id.to_owned()),
            }
        }
        unknown
    }

    /// Resolves an entry path against the manifest's directory.
    pub fn resolve_path(&self, manifest_dir: &Path, entry: &ImageEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            manifest_dir.join(p)
        }
    }
}

fn parse_err(line: u64, message: impl Into<String>) -> IngestError {
    IngestError::ParseError { line, message: message.into() }
}

/// Sidecar location for a manifest CSV: same stem, `.json` extension.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Loads a manifest CSV and its JSON sidecar.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, IngestError> {
    let path = path.as_ref();
    let sidecar = sidecar_path(path);
    let meta_text = fs::read_to_string(&sidecar).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => IngestError::MissingFile(sidecar.clone()),
        _ => IngestError::Io(e),
    })?;
    let meta: ManifestMeta = serde_json::from_str(&meta_text)
        .map_err(|e| IngestError::InvalidMetadata(format!("{}: {e}", sidecar.display())))?;
    load_manifest_with_meta(path, meta)
}

/// Loads a manifest CSV with metadata supplied by the caller.
pub fn load_manifest_with_meta(
    path: impl AsRef<Path>,
    meta: ManifestMeta,
) -> Result<DatasetManifest, IngestError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => IngestError::MissingFile(path.to_path_buf()),
        _ => IngestError::Io(e),
    })?;
    parse_manifest_csv(&text, meta)
}

/// Parses manifest CSV text.
pub fn parse_manifest_csv(text: &str, meta: ManifestMeta) -> Result<DatasetManifest, IngestError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let (Some(id_col), Some(path_col), Some(score_col)) =
        (column("image_id"), column("path"), column("score"))
    else {
        return Err(parse_err(1, "header must contain image_id, path and score"));
    };
    let content_col = column("content_id");
    let excluded_col = column("excluded");

    let mut entries = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |col: usize| record.get(col).unwrap_or("");
        let image_id = field(id_col).to_owned();
        let score: f64 = field(score_col)
            .parse()
            .map_err(|_| parse_err(line, format!("score {:?} is not a number", field(score_col))))?;
        let content_id = match content_col {
            Some(c) => field(c).to_owned(),
            None => image_id.clone(),
        };
        let excluded = match excluded_col.map(field) {
            None | Some("") => false,
            Some(v) => parse_bool(v).ok_or_else(|| parse_err(line, format!("excluded {v:?} is not a boolean")))?,
        };
        entries.push(ImageEntry { image_id, path: field(path_col).to_owned(), score, content_id, excluded });
    }
    DatasetManifest::new(meta, entries)
}

fn parse_bool(v: &str) -> Option<bool> {
    match v.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Some(true),
        "0" | "false" | "no" => Some(false),
        _ => None,
    }
}

/// Writes the manifest as CSV plus sidecar JSON.
pub fn write_manifest(manifest: &DatasetManifest, csv_path: impl AsRef<Path>) -> Result<(), IngestError> {
    let csv_path = csv_path.as_ref();
    let mut w = csv::Writer::from_path(csv_path).map_err(csv_io)?;
    w.write_record(["image_id", "path", "score", "content_id", "excluded"]).map_err(csv_io)?;
    for e in &manifest.entries {
        w.write_record([
            e.image_id.as_str(),
            e.path.as_str(),
            &e.score.to_string(),
            e.content_id.as_str(),
            if e.excluded { "1" } else { "0" },
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    let meta = ManifestMeta {
        name: manifest.name.clone(),
        score_kind: manifest.score_kind,
        score_range: manifest.score_range,
    };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| IngestError::InvalidMetadata(e.to_string()))?;
    fs::write(sidecar_path(csv_path), json)?;
    Ok(())
}

fn csv_io(e: csv::Error) -> IngestError {
    IngestError::Io(io::Error::other(e))
}

/// Reads an exclusion list: one image id per line, `#` comments allowed.
pub fn read_exclusion_list(path: impl AsRef<Path>) -> Result<Vec<String>, IngestError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => IngestError::MissingFile(path.to_path_buf()),
        _ => IngestError::Io(e),
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct FeatureHeader {
    image_id: String,
    extractor_tag: String,
    layer_tag: String,
    n_patches: usize,
    dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    aggregate: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<ArtifactTag>,
}

/// Reproducibility stamp carried by generated artifacts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactTag {
    pub config_hash: String,
    pub seed: Option<u64>,
}

/// Per-image feature matrix in its on-disk form.
///
/// Aggregated descriptors use the same container with `n_patches = 1` and
/// the aggregation kind recorded in `aggregate`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureFile {
    pub image_id: String,
    pub extractor_tag: String,
    pub layer_tag: String,
    pub n_patches: usize,
    pub dim: usize,
    pub aggregate: Option<String>,
    pub provenance: Option<ArtifactTag>,
    /// Row-major, `n_patches * dim` values.
    pub values: Vec<f32>,
}

impl FeatureFile {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.n_patches == 0 || self.dim == 0 {
            return Err(IngestError::InvalidFeatureFile("n_patches and dim must be positive".into()));
        }
        if self.values.len() != self.n_patches * self.dim {
            return Err(IngestError::InvalidFeatureFile(format!(
                "{} values for {}x{} matrix",
                self.values.len(),
                self.n_patches,
                self.dim
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(IngestError::InvalidFeatureFile(format!("non-finite value at index {i}")));
        }
        Ok(())
    }

    pub fn row(&self, j: usize) -> &[f32] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, IngestError> {
        self.validate()?;
        let header = serde_json::to_vec(&FeatureHeader {
            image_id: self.image_id.clone(),
            extractor_tag: self.extractor_tag.clone(),
            layer_tag: self.layer_tag.clone(),
            n_patches: self.n_patches,
            dim: self.dim,
            aggregate: self.aggregate.clone(),
            provenance: self.provenance.clone(),
        })
        .map_err(|e| IngestError::HeaderInvalid(e.to_string()))?;
        let header_len = u32::try_from(header.len()).map_err(|_| IngestError::HeaderInvalid("header too long".into()))?;
        let mut out = Vec::with_capacity(12 + header.len() + 4 * self.values.len());
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.extend_from_slice(&header_len.to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IngestError> {
        if bytes.len() < 4 || &bytes[..4] != FEATURE_MAGIC {
            return Err(IngestError::MagicMismatch);
        }
        let read_u32 = |at: usize| -> Result<u32, IngestError> {
            let b = bytes
                .get(at..at + 4)
                .ok_or(IngestError::TruncatedPayload { expected: at + 4, found: bytes.len() })?;
            Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        };
        let version = read_u32(4)?;
        if version != FEATURE_VERSION {
            return Err(IngestError::VersionUnsupported(version));
        }
        let header_len = read_u32(8)? as usize;
        let header_end = 12 + header_len;
        let header_bytes = bytes
            .get(12..header_end)
            .ok_or(IngestError::TruncatedPayload { expected: header_end, found: bytes.len() })?;
        let header: FeatureHeader =
            serde_json::from_slice(header_bytes).map_err(|e| IngestError::HeaderInvalid(e.to_string()))?;
        if header.n_patches == 0 || header.dim == 0 {
            return Err(IngestError::HeaderInvalid("n_patches and dim must be positive".into()));
        }

        let payload = &bytes[header_end..];
        let expected = header.n_patches * header.dim * 4;
        if payload.len() != expected {
            let floats = payload.len() / 4;
            if payload.len().is_multiple_of(4) && floats > 0 && floats.is_multiple_of(header.n_patches) {
                return Err(IngestError::DimensionMismatch {
                    header_dim: header.dim,
                    payload_dim: floats / header.n_patches,
                });
            }
            return Err(IngestError::TruncatedPayload { expected: header_end + expected, found: bytes.len() });
        }
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let file = FeatureFile {
            image_id: header.image_id,
            extractor_tag: header.extractor_tag,
            layer_tag: header.layer_tag,
            n_patches: header.n_patches,
            dim: header.dim,
            aggregate: header.aggregate,
            provenance: header.provenance,
            values,
        };
        file.validate()?;
        Ok(file)
    }
}

pub fn write_feature_file(f: &FeatureFile, path: impl AsRef<Path>) -> Result<(), IngestError> {
    let bytes = f.to_bytes()?;
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureFile, IngestError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => IngestError::MissingFile(path.to_path_buf()),
        _ => IngestError::Io(e),
    })?;
    FeatureFile::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(lo: f64, hi: f64) -> ManifestMeta {
        ManifestMeta { name: "test".into(), score_kind: ScoreKind::Mos, score_range: (lo, hi) }
    }

    fn small_file(n: usize, dim: usize) -> FeatureFile {
        FeatureFile {
            image_id: "img".into(),
            extractor_tag: "builtin".into(),
            layer_tag: "lowlevel".into(),
            n_patches: n,
            dim,
            aggregate: None,
            provenance: None,
            values: (0..n * dim).map(|i| i as f32 * 0.5 - 3.0).collect(),
        }
    }

    #[test]
    fn three_row_manifest() {
        let text = "image_id,path,score,content_id\na,a.pgm,1.0,c1\nb,b.pgm,2.5,c1\nc,c.pgm,4.0,c2\n";
        let m = parse_manifest_csv(text, meta(0.0, 5.0)).unwrap();
        assert_eq!(m.entries.len(), 3);
        assert_eq!(m.entries[1].image_id, "b");
        assert!(!m.entries[2].excluded);
        assert_eq!(m.content_groups().len(), 2);
    }

    #[test]
    fn score_out_of_range_rejected() {
        let text = "image_id,path,score,content_id\na,a.pgm,1.0,c1\nb,b.pgm,7.2,c2\n";
        match parse_manifest_csv(text, meta(0.0, 5.0)) {
            Err(IngestError::ScoreOutOfRange { image_id }) => assert_eq!(image_id, "b"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_rejected() {
        let text = "image_id,path,score\na,a.pgm,1.0\na,b.pgm,2.0\n";
        assert!(matches!(
            parse_manifest_csv(text, meta(0.0, 5.0)),
            Err(IngestError::DuplicateImageId(id)) if id == "a"
        ));
    }

    #[test]
    fn bad_score_reports_line() {
        let text = "image_id,path,score\na,a.pgm,1.0\nb,b.pgm,abc\n";
        assert!(matches!(
            parse_manifest_csv(text, meta(0.0, 5.0)),
            Err(IngestError::ParseError { line: 3, .. })
        ));
    }

    #[test]
    fn content_defaults_to_image_id() {
        let text = "image_id,path,score,excluded\na,a.pgm,1.0,\nb,b.pgm,2.0,1\n";
        let m = parse_manifest_csv(text, meta(0.0, 5.0)).unwrap();
        assert_eq!(m.entries[0].content_id, "a");
        assert!(m.entries[1].excluded);
        assert_eq!(m.active_entries().count(), 1);
    }

    #[test]
    fn missing_manifest_file() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_manifest(dir.path().join("nope.csv")),
            Err(IngestError::MissingFile(_))
        ));
    }

    #[test]
    fn tid_style_manifest_has_25_contents() {
        let mut text = String::from("image_id,path,score,content_id\n");
        for r in 0..25 {
            for level in 0..4 {
                text.push_str(&format!("i{r:02}_{level},i{r:02}_{level}.bmp,{},ref{r:02}\n", 1.0 + level as f64));
            }
        }
        let m = parse_manifest_csv(&text, meta(0.0, 9.0)).unwrap();
        assert_eq!(m.entries.len(), 100);
        assert_eq!(m.content_groups().len(), 25);
    }

    #[test]
    fn manifest_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let text = "image_id,path,score,content_id\na,a.pgm,1.25,c1\nb,b.pgm,2.5,c2\n";
        let m = parse_manifest_csv(text, meta(0.0, 5.0)).unwrap();
        let p = dir.path().join("set.csv");
        write_manifest(&m, &p).unwrap();
        assert_eq!(load_manifest(&p).unwrap(), m);
    }

    #[test]
    fn exclusions_mark_entries() {
        let text = "image_id,path,score\na,a.pgm,1.0\nb,b.pgm,2.0\n";
        let mut m = parse_manifest_csv(text, meta(0.0, 5.0)).unwrap();
        let unknown = m.apply_exclusions(["b", "zz"]);
        assert_eq!(unknown, vec!["zz".to_string()]);
        assert!(m.entries[1].excluded);
    }

    #[test]
    fn tiny_feature_file_round_trip() {
        let mut f = small_file(1, 3);
        f.values = vec![1.0, 2.0, 3.0];
        let back = FeatureFile::from_bytes(&f.to_bytes().unwrap()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn resnet_width_round_trip() {
        let f = small_file(54, 2048);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.sfaf");
        write_feature_file(&f, &p).unwrap();
        let back = read_feature_file(&p).unwrap();
        assert_eq!(back.dim, 2048);
        assert_eq!(back.n_patches, 54);
        assert!(back.values.iter().zip(&f.values).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn truncated_payload() {
        let bytes = small_file(2, 3).to_bytes().unwrap();
        let cut = &bytes[..bytes.len() - 6];
        assert!(matches!(FeatureFile::from_bytes(cut), Err(IngestError::TruncatedPayload { .. })));
    }

    #[test]
    fn dimension_mismatch() {
        let f = small_file(4, 16);
        let mut bytes = f.to_bytes().unwrap();
        // drop one float per row: payload now implies dim 15
        let payload_start = bytes.len() - 4 * 64;
        bytes.truncate(payload_start + 4 * 60);
        assert!(matches!(
            FeatureFile::from_bytes(&bytes),
            Err(IngestError::DimensionMismatch { header_dim: 16, payload_dim: 15 })
        ));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = small_file(1, 2).to_bytes().unwrap();
        bytes[4] = 9;
        assert!(matches!(FeatureFile::from_bytes(&bytes), Err(IngestError::VersionUnsupported(9))));
        bytes[0] = b'X';
        assert!(matches!(FeatureFile::from_bytes(&bytes), Err(IngestError::MagicMismatch)));
    }

    #[test]
    fn non_finite_values_refused() {
        let mut f = small_file(1, 2);
        f.values[1] = f32::NAN;
        assert!(f.to_bytes().is_err());
    }
}

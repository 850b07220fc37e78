//! Dataset manifests, MEMF feature files, feature concatenation and
//! synthetic data for offline runs.

mod manifest;
pub mod memf;
mod synthetic;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use manifest::{
    holdout_split, read_manifest, validate_manifest, write_manifest, Manifest, MemeEntry, Split,
    StatTable, Task, ValidationReport, MAMI_B_LABELS,
};
pub use synthetic::{gen_synthetic, SyntheticSpec};

/// Where a feature matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", try_from = "String")]
pub enum FeatureSource {
    BertBase,
    Bertweet,
    Clip,
    ClipBertweet,
    Synthetic,
}

impl FeatureSource {
    pub const ALL: [FeatureSource; 5] = [
        FeatureSource::BertBase,
        FeatureSource::Bertweet,
        FeatureSource::Clip,
        FeatureSource::ClipBertweet,
        FeatureSource::Synthetic,
    ];

    /// File-name form, e.g. `clip_bertweet`.
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSource::BertBase => "bert_base",
            FeatureSource::Bertweet => "bertweet",
            FeatureSource::Clip => "clip",
            FeatureSource::ClipBertweet => "clip_bertweet",
            FeatureSource::Synthetic => "synthetic",
        }
    }

    /// Display form used in model tags, e.g. `clip+bertweet`.
    pub fn label(self) -> &'static str {
        match self {
            FeatureSource::ClipBertweet => "clip+bertweet",
            other => other.as_str(),
        }
    }
}

impl fmt::Display for FeatureSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl TryFrom<String> for FeatureSource {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for FeatureSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['+', '-'], "_");
        FeatureSource::ALL
            .into_iter()
            .find(|src| src.as_str() == norm)
            .ok_or_else(|| Error::Argument(format!("unknown feature source {s:?}")))
    }
}

/// Aligned (meme id, dense vector) table for one feature source.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    source: FeatureSource,
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<f32>,
    positions: HashMap<String, usize>,
}

impl PartialEq for FeatureMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source
            && self.dim == other.dim
            && self.ids == other.ids
            && self.vectors.len() == other.vectors.len()
            && self
                .vectors
                .iter()
                .zip(&other.vectors)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl FeatureMatrix {
    pub fn new(
        source: FeatureSource,
        dim: usize,
        ids: Vec<String>,
        vectors: Vec<f32>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("feature dim must be positive".into()));
        }
        if vectors.len() != ids.len() * dim {
            return Err(Error::Shape(format!(
                "{} ids x dim {dim} != {} values",
                ids.len(),
                vectors.len()
            )));
        }
        if let Some(pos) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!(
                "non-finite feature value in row {:?}",
                ids[pos / dim]
            )));
        }
        let mut positions = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if positions.insert(id.clone(), i).is_some() {
                return Err(Error::Integrity(format!("duplicate id {id:?}")));
            }
        }
        Ok(Self {
            source,
            dim,
            ids,
            vectors,
            positions,
        })
    }

    pub fn source(&self) -> FeatureSource {
        self.source
    }

    pub fn with_source(mut self, source: FeatureSource) -> Self {
        self.source = source;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }

    pub fn row_by_id(&self, id: &str) -> Option<&[f32]> {
        self.position(id).map(|i| self.row(i))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.positions.contains_key(id)
    }

    /// Ids from `wanted` that have no row here, in the order given.
    pub fn missing<'a, I>(&self, wanted: I) -> Vec<String>
    where
        I: IntoIterator<Item = &'a str>,
    {
        wanted
            .into_iter()
            .filter(|id| !self.contains(id))
            .map(str::to_owned)
            .collect()
    }

    /// Rows for `ids`, in that order, as one contiguous buffer.
    pub fn gather<S: AsRef<str>>(&self, ids: &[S]) -> Result<Vec<f32>> {
        let missing = self.missing(ids.iter().map(AsRef::as_ref));
        if !missing.is_empty() {
            return Err(Error::Alignment {
                message: format!("{} ids have no {} feature row", missing.len(), self.source),
                missing,
            });
        }
        let mut out = Vec::with_capacity(ids.len() * self.dim);
        for id in ids {
            out.extend_from_slice(self.row_by_id(id.as_ref()).unwrap());
        }
        Ok(out)
    }

    fn to_memf(&self) -> memf::MemfData {
        memf::MemfData {
            dim: self.dim,
            ids: self.ids.clone(),
            vectors: self.vectors.clone(),
        }
    }
}

/// Writes `matrix` in MEMF layout and returns the trailer checksum.
pub fn write_feature_file(path: &Path, matrix: &FeatureMatrix) -> Result<u32> {
    memf::write(path, &matrix.to_memf())
}

/// Reads a MEMF file. The source is inferred from the file stem
/// (`clip.memf` -> clip); unrecognized stems are tagged synthetic.
pub fn read_feature_file(path: &Path) -> Result<FeatureMatrix> {
    let data = memf::read(path)?;
    let source = path
        .file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.parse().ok())
        .unwrap_or(FeatureSource::Synthetic);
    FeatureMatrix::new(source, data.dim, data.ids, data.vectors)
}

/// Joins two feature tables row by row on meme id. Output rows follow the
/// order of `a`; each row is `a.row(id)` followed by `b.row(id)`.
pub fn concat_features(a: &FeatureMatrix, b: &FeatureMatrix) -> Result<FeatureMatrix> {
    let mut missing = b.missing(a.ids.iter().map(String::as_str));
    let only_in_b: Vec<String> = a.missing(b.ids.iter().map(String::as_str));
    if !missing.is_empty() || !only_in_b.is_empty() {
        let message = format!(
            "id sets differ: {} ids only in {}, {} only in {}",
            missing.len(),
            a.source,
            only_in_b.len(),
            b.source
        );
        missing.extend(only_in_b);
        return Err(Error::Alignment { message, missing });
    }
    let dim = a.dim + b.dim;
    let mut vectors = Vec::with_capacity(a.len() * dim);
    for (i, id) in a.ids.iter().enumerate() {
        vectors.extend_from_slice(a.row(i));
        vectors.extend_from_slice(b.row_by_id(id).unwrap());
    }
    let source = match (a.source, b.source) {
        (FeatureSource::Clip, FeatureSource::Bertweet) => FeatureSource::ClipBertweet,
        _ => FeatureSource::Synthetic,
    };
    FeatureMatrix::new(source, dim, a.ids.clone(), vectors)
}

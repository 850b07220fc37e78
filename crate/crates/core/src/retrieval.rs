//! Exact cosine top-k search over stored embeddings.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::memf::{self, MemfData};
use crate::feature_store::{FeatureMatrix, Manifest};

/// Neighbors shown per model by default (a 3x3 grid).
pub const DEFAULT_K: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    pub similarity: f64,
    /// Gold labels of the neighbor, filled by [`attach_labels`].
    #[serde(default)]
    pub labels: BTreeMap<String, u8>,
}

/// Dot product of two f32 slices accumulated in f64 over four lanes.
fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, ra) = a.split_at(a.len() - a.len() % 4);
    let (cb, rb) = b.split_at(ca.len());
    for (x, y) in ca.chunks_exact(4).zip(cb.chunks_exact(4)) {
        for l in 0..4 {
            acc[l] += x[l] as f64 * y[l] as f64;
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| *x as f64 * *y as f64).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

fn scaled_cosine(dot: f64, na: f64, nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Cosine similarity in [-1, 1]; 0 when either vector is zero.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("cosine of dims {} and {}", a.len(), b.len())));
    }
    Ok(scaled_cosine(dot(a, b), norm(a), norm(b)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    model_tag: String,
    dim: usize,
    ids: Vec<String>,
    raw: Vec<f32>,
    norms: Vec<f64>,
}

pub fn build_index(
    ids: Vec<String>,
    embeddings: Vec<f32>,
    dim: usize,
    model_tag: impl Into<String>,
) -> Result<EmbeddingIndex> {
    if dim == 0 {
        return Err(Error::Argument("index dim must be positive".into()));
    }
    if embeddings.len() != ids.len() * dim {
        return Err(Error::Shape(format!(
            "{} ids x dim {dim} != {} values",
            ids.len(),
            embeddings.len()
        )));
    }
    let mut seen = HashSet::with_capacity(ids.len());
    for id in &ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::Integrity(format!("duplicate id {id:?} in index")));
        }
    }
    if embeddings.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("non-finite embedding value".into()));
    }
    let norms = embeddings.chunks_exact(dim).map(norm).collect();
    Ok(EmbeddingIndex {
        model_tag: model_tag.into(),
        dim,
        ids,
        raw: embeddings,
        norms,
    })
}

/// Heap entry ordered so that the worst-ranked candidate is the maximum.
struct Candidate<'a> {
    score: f64,
    id: &'a str,
    row: usize,
}

impl Ord for Candidate<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.id.cmp(other.id))
    }
}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate<'_> {}

impl EmbeddingIndex {
    pub fn from_matrix(matrix: &FeatureMatrix, model_tag: impl Into<String>) -> Result<Self> {
        build_index(matrix.ids().to_vec(), matrix.vectors().to_vec(), matrix.dim(), model_tag)
    }

    pub fn model_tag(&self) -> &str {
        &self.model_tag
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

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.raw[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows with zero norm; they score 0 against every query.
    pub fn zero_rows(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.norms[i] == 0.0).collect()
    }

    /// The `min(k, len)` most similar rows, most similar first, ties by
    /// ascending id.
    pub fn query_top_k(&self, q: &[f32], k: usize) -> Result<Vec<Neighbor>> {
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if k == 0 {
            return Err(Error::Argument("k must be >= 1".into()));
        }
        if q.len() != self.dim {
            return Err(Error::Shape(format!(
                "query dim {} vs index dim {}",
                q.len(),
                self.dim
            )));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("non-finite query value".into()));
        }
        let qn = norm(q);
        let k = k.min(self.len());
        let mut heap: BinaryHeap<Candidate<'_>> = BinaryHeap::with_capacity(k + 1);
        for (row, (x, &n)) in self.raw.chunks_exact(self.dim).zip(&self.norms).enumerate() {
            let score = if n == 0.0 { 0.0 } else { scaled_cosine(dot(q, x), qn, n) };
            let cand = Candidate {
                score,
                id: &self.ids[row],
                row,
            };
            if heap.len() < k {
                heap.push(cand);
            } else if cand < *heap.peek().expect("heap holds k entries") {
                heap.pop();
                heap.push(cand);
            }
        }
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| Neighbor {
                id: self.ids[c.row].clone(),
                similarity: c.score,
                labels: BTreeMap::new(),
            })
            .collect())
    }

    /// Writes the vectors as MEMF and a JSON sidecar next to it.
    pub fn save(&self, memf_path: &Path, sidecar_path: &Path) -> Result<IndexSidecar> {
        let crc = memf::write(
            memf_path,
            &MemfData {
                dim: self.dim,
                ids: self.ids.clone(),
                vectors: self.raw.clone(),
            },
        )?;
        let sidecar = IndexSidecar {
            model_tag: self.model_tag.clone(),
            dim: self.dim,
            count: self.len(),
            checksum: format!("{crc:08x}"),
        };
        let json = serde_json::to_string_pretty(&sidecar)? + "\n";
        std::fs::write(sidecar_path, json).map_err(|e| Error::io(sidecar_path, e))?;
        Ok(sidecar)
    }

    pub fn load(memf_path: &Path, sidecar_path: &Path) -> Result<Self> {
        let bytes = std::fs::read(memf_path).map_err(|e| Error::io(memf_path, e))?;
        let sidecar: IndexSidecar = serde_json::from_slice(
            &std::fs::read(sidecar_path).map_err(|e| Error::io(sidecar_path, e))?,
        )?;
        let data = memf::decode(&bytes)?;
        let crc = format!("{:08x}", memf::trailer_crc(&bytes).unwrap_or_default());
        if crc != sidecar.checksum || data.dim != sidecar.dim || data.count() != sidecar.count {
            return Err(Error::Integrity(format!(
                "index sidecar {} does not describe {}",
                sidecar_path.display(),
                memf_path.display()
            )));
        }
        build_index(data.ids, data.vectors, data.dim, sidecar.model_tag)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSidecar {
    pub model_tag: String,
    pub dim: usize,
    pub count: usize,
    pub checksum: String,
}

/// Copies gold labels from `manifest` onto each neighbor.
pub fn attach_labels(neighbors: &mut [Neighbor], manifest: &Manifest) {
    for n in neighbors {
        if let Some(e) = manifest.get(&n.id) {
            n.labels = e.labels.clone();
        }
    }
}

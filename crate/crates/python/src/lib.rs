//! Python bindings: `import memexplain`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use memexplain_core::feature_store::{
    self as fs, concat_features, gen_synthetic, holdout_split, read_feature_file, read_manifest,
    validate_manifest, write_feature_file, write_manifest, FeatureSource, Split, SyntheticSpec, Task,
};
use memexplain_core::metrics;
use memexplain_core::mlp_head::{self, TrainConfig};
use memexplain_core::retrieval;
use memexplain_core::xdnn;
use memexplain_core::Error;
use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn flatten(rows: Vec<Vec<f32>>, dim: usize) -> PyResult<Vec<f32>> {
    if let Some(r) = rows.iter().find(|r| r.len() != dim) {
        return Err(PyValueError::new_err(format!("row of length {} in a {dim}-dim table", r.len())));
    }
    Ok(rows.into_iter().flatten().collect())
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

#[pyclass(module = "memexplain", skip_from_py_object)]
#[derive(Clone)]
struct FeatureMatrix(fs::FeatureMatrix);

#[pymethods]
impl FeatureMatrix {
    #[new]
    fn new(source: &str, ids: Vec<String>, vectors: Vec<Vec<f32>>) -> PyResult<Self> {
        let dim = vectors.first().map_or(0, Vec::len);
        let flat = flatten(vectors, dim)?;
        Ok(Self(fs::FeatureMatrix::new(parse(source)?, dim, ids, flat).map_err(err)?))
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self(read_feature_file(&path).map_err(err)?))
    }

    /// Writes MEMF and returns the trailer CRC32.
    fn write(&self, path: PathBuf) -> PyResult<u32> {
        write_feature_file(&path, &self.0).map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn source(&self) -> &'static str {
        self.0.source().as_str()
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.0.ids().to_vec()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn row(&self, id: &str) -> PyResult<Vec<f32>> {
        self.0
            .row_by_id(id)
            .map(<[f32]>::to_vec)
            .ok_or_else(|| PyValueError::new_err(format!("unknown id {id:?}")))
    }

    fn concat(&self, other: &FeatureMatrix) -> PyResult<Self> {
        Ok(Self(concat_features(&self.0, &other.0).map_err(err)?))
    }
}

#[pyclass(module = "memexplain", skip_from_py_object)]
#[derive(Clone)]
struct Manifest(fs::Manifest);

#[pymethods]
impl Manifest {
    #[staticmethod]
    fn read(path: PathBuf, task: &str, split: &str) -> PyResult<Self> {
        let split = match split {
            "train" => Split::Train,
            "dev" => Split::Dev,
            "test" => Split::Test,
            other => return Err(PyValueError::new_err(format!("unknown split {other:?}"))),
        };
        Ok(Self(read_manifest(&path, parse(task)?, split).map_err(err)?))
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        write_manifest(&path, &self.0).map_err(err)
    }

    #[getter]
    fn task(&self) -> String {
        self.0.task.to_string()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.0.task.labels()
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.0.ids().into_iter().map(String::from).collect()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn labels_of(&self, id: &str) -> PyResult<BTreeMap<String, u8>> {
        self.0
            .get(id)
            .map(|e| e.labels.clone())
            .ok_or_else(|| PyValueError::new_err(format!("unknown id {id:?}")))
    }

    /// Rows of 0/1 targets in manifest order.
    fn targets(&self) -> PyResult<Vec<Vec<u8>>> {
        let flat = self.0.targets().map_err(err)?;
        Ok(flat.chunks(self.0.task.label_count()).map(<[u8]>::to_vec).collect())
    }

    fn holdout(&self, dev_fraction: f64, seed: u64) -> (Manifest, Manifest) {
        let (t, d) = holdout_split(&self.0, dev_fraction, seed);
        (Self(t), Self(d))
    }

    /// Problems found by validation; empty when the manifest is clean.
    fn problems(&self) -> Vec<String> {
        validate_manifest(&self.0, None).problems()
    }
}

#[pyfunction]
#[pyo3(signature = (label_count=2, clusters_per_label=2, dim=64, samples_per_cluster=500, cluster_spread=0.1, seed=0))]
fn synthetic(
    label_count: usize,
    clusters_per_label: usize,
    dim: usize,
    samples_per_cluster: usize,
    cluster_spread: f64,
    seed: u64,
) -> PyResult<(FeatureMatrix, Manifest)> {
    let (f, m) = gen_synthetic(&SyntheticSpec {
        label_count,
        clusters_per_label,
        dim,
        samples_per_cluster,
        cluster_spread,
        seed,
    })
    .map_err(err)?;
    Ok((FeatureMatrix(f), Manifest(m)))
}

/// `(epoch, loss, dev_macro_f1)` per epoch.
type HistoryRows = Vec<(usize, f64, Option<f64>)>;

#[pyclass(module = "memexplain")]
struct MlpHead(mlp_head::MlpHead<f32>);

#[pymethods]
impl MlpHead {
    /// Trains a fresh head; returns it with the per-epoch history.
    #[staticmethod]
    #[pyo3(signature = (features, train, dev=None, epochs=20, batch_size=32, lr=1e-4, threshold=0.5, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        features: &FeatureMatrix,
        train: &Manifest,
        dev: Option<&Manifest>,
        epochs: usize,
        batch_size: usize,
        lr: f64,
        threshold: f64,
        seed: u64,
    ) -> PyResult<(MlpHead, HistoryRows)> {
        let cfg = TrainConfig { epochs, batch_size, lr, threshold, seed, ..TrainConfig::default() };
        let (head, history) =
            mlp_head::train(&features.0, &train.0, dev.map(|d| &d.0), &cfg).map_err(err)?;
        let rows = history.epochs.iter().map(|e| (e.epoch, e.loss, e.dev_macro_f1)).collect();
        Ok((MlpHead(head), rows))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self(mlp_head::load_checkpoint(&path).map_err(err)?))
    }

    fn save(&self, path: PathBuf) -> PyResult<u32> {
        mlp_head::save_checkpoint(&path, &self.0).map_err(err)
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.0.input_dim()
    }

    #[getter]
    fn label_count(&self) -> usize {
        self.0.label_count()
    }

    #[pyo3(signature = (x, threshold=0.5))]
    fn predict(&self, x: Vec<f32>, threshold: f32) -> PyResult<(Vec<u8>, Vec<f32>)> {
        self.0.predict(&x, threshold).map_err(err)
    }

    fn embed(&self, x: Vec<f32>) -> PyResult<Vec<f32>> {
        self.0.embed(&x).map_err(err)
    }
}

#[pyclass(module = "memexplain")]
struct EmbeddingIndex(retrieval::EmbeddingIndex);

#[pymethods]
impl EmbeddingIndex {
    #[new]
    #[pyo3(signature = (ids, vectors, model_tag=""))]
    fn new(ids: Vec<String>, vectors: Vec<Vec<f32>>, model_tag: &str) -> PyResult<Self> {
        let dim = vectors.first().map_or(0, Vec::len);
        let flat = flatten(vectors, dim)?;
        Ok(Self(retrieval::build_index(ids, flat, dim, model_tag).map_err(err)?))
    }

    /// Index of the head's embeddings of every meme in `manifest`.
    #[staticmethod]
    #[pyo3(signature = (head, features, manifest, model_tag=""))]
    fn from_head(head: &MlpHead, features: &FeatureMatrix, manifest: &Manifest, model_tag: &str) -> PyResult<Self> {
        let ids = manifest.0.ids();
        let flat = features.0.gather(&ids).map_err(err)?;
        let x = Array2::from_shape_vec((ids.len(), features.0.dim()), flat)
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        let emb = head.0.embed_batch(x.view()).map_err(err)?;
        let dim = emb.ncols();
        let owned = ids.into_iter().map(String::from).collect();
        Ok(Self(
            retrieval::build_index(owned, emb.into_raw_vec_and_offset().0, dim, model_tag).map_err(err)?,
        ))
    }

    #[staticmethod]
    fn load(memf_path: PathBuf, sidecar_path: PathBuf) -> PyResult<Self> {
        Ok(Self(retrieval::EmbeddingIndex::load(&memf_path, &sidecar_path).map_err(err)?))
    }

    /// Returns the MEMF checksum as hex.
    fn save(&self, memf_path: PathBuf, sidecar_path: PathBuf) -> PyResult<String> {
        Ok(self.0.save(&memf_path, &sidecar_path).map_err(err)?.checksum)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[pyo3(signature = (q, k=retrieval::DEFAULT_K))]
    fn query(&self, q: Vec<f32>, k: usize) -> PyResult<Vec<(String, f64)>> {
        Ok(self
            .0
            .query_top_k(&q, k)
            .map_err(err)?
            .into_iter()
            .map(|n| (n.id, n.similarity))
            .collect())
    }
}

#[pyclass(module = "memexplain")]
struct PrototypeModel(xdnn::PrototypeModel);

#[pymethods]
impl PrototypeModel {
    #[staticmethod]
    fn fit(features: &FeatureMatrix, manifest: &Manifest) -> PyResult<Self> {
        Ok(Self(xdnn::fit(&features.0, &manifest.0).map_err(err)?))
    }

    #[staticmethod]
    fn load(memf_path: PathBuf, sidecar_path: PathBuf) -> PyResult<Self> {
        Ok(Self(xdnn::PrototypeModel::load(&memf_path, &sidecar_path).map_err(err)?))
    }

    fn save(&self, memf_path: PathBuf, sidecar_path: PathBuf) -> PyResult<()> {
        self.0.save(&memf_path, &sidecar_path).map_err(err)
    }

    #[getter]
    fn prototype_count(&self) -> usize {
        self.0.prototype_count()
    }

    /// One dict per label: value, lambda_pos, lambda_neg, winning_prototype.
    fn classify<'py>(&self, py: Python<'py>, x: Vec<f32>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let d = self.0.classify(&x).map_err(err)?;
        d.labels
            .into_iter()
            .map(|l| {
                let out = PyDict::new(py);
                out.set_item("label", l.label)?;
                out.set_item("value", l.value)?;
                out.set_item("lambda_pos", l.lambda_pos)?;
                out.set_item("lambda_neg", l.lambda_neg)?;
                out.set_item("winning_prototype", l.winning_prototype)?;
                out.set_item("winning_support", l.winning_support)?;
                Ok(out)
            })
            .collect()
    }

    fn report<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        xdnn::prototype_report(&self.0)
            .into_iter()
            .map(|r| {
                let out = PyDict::new(py);
                out.set_item("label", r.label)?;
                out.set_item("polarity", r.polarity.to_string())?;
                out.set_item("prototypes", r.prototypes)?;
                out.set_item("training_size", r.training_size)?;
                out.set_item("ratio", r.ratio)?;
                out.set_item("top_exemplars", r.top_exemplars)?;
                out.set_item("peak_exemplar", r.peak_exemplar)?;
                out.set_item("peak_density", r.peak_density)?;
                Ok(out)
            })
            .collect()
    }
}

#[pyfunction]
fn macro_f1(y_true: Vec<u8>, y_pred: Vec<u8>) -> PyResult<f64> {
    metrics::macro_f1(&y_true, &y_pred).map_err(err)
}

fn rows_to_array(rows: Vec<Vec<u8>>) -> PyResult<Array2<u8>> {
    let cols = rows.first().map_or(0, Vec::len);
    let n = rows.len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("ragged label rows"));
    }
    Array2::from_shape_vec((n, cols), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
fn weighted_f1(y_true: Vec<Vec<u8>>, y_pred: Vec<Vec<u8>>) -> PyResult<f64> {
    let (t, p) = (rows_to_array(y_true)?, rows_to_array(y_pred)?);
    metrics::weighted_f1(t.view(), p.view()).map_err(err)
}

#[pyfunction]
fn task_labels(task: &str) -> PyResult<Vec<String>> {
    Ok(parse::<Task>(task)?.labels())
}

#[pyfunction]
fn feature_sources() -> Vec<&'static str> {
    FeatureSource::ALL.iter().map(|s| s.as_str()).collect()
}

#[pymodule]
fn memexplain(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<FeatureMatrix>()?;
    m.add_class::<Manifest>()?;
    m.add_class::<MlpHead>()?;
    m.add_class::<EmbeddingIndex>()?;
    m.add_class::<PrototypeModel>()?;
    m.add_function(wrap_pyfunction!(synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(macro_f1, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_f1, m)?)?;
    m.add_function(wrap_pyfunction!(task_labels, m)?)?;
    m.add_function(wrap_pyfunction!(feature_sources, m)?)?;
    Ok(())
}

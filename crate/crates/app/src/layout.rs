//! Where inputs are read from and artifacts are written to.

use std::path::{Path, PathBuf};

use memexplain_core::feature_store::{FeatureSource, Split, Task};
use memexplain_core::metrics::Method;

pub fn model_tag(source: FeatureSource, task: Task) -> String {
    format!("{}/{}", source.label(), task)
}

/// Input side: `data_dir/{task}/{split}.jsonl`, `data_dir/features/{source}.memf`.
#[derive(Debug, Clone)]
pub struct DataLayout {
    pub root: PathBuf,
}

impl DataLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest(&self, task: Task, split: Split) -> PathBuf {
        self.root.join(task.to_string()).join(format!("{}.jsonl", split.as_str()))
    }

    pub fn features(&self, source: FeatureSource) -> PathBuf {
        self.root.join("features").join(format!("{}.memf", source.as_str()))
    }
}

/// Output side, everything under `artifacts_dir`.
#[derive(Debug, Clone)]
pub struct ArtifactLayout {
    pub root: PathBuf,
}

impl ArtifactLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn features(&self, source: FeatureSource) -> PathBuf {
        self.root.join("features").join(format!("{}.memf", source.as_str()))
    }

    pub fn manifest(&self, task: Task, split: Split) -> PathBuf {
        self.root
            .join("manifests")
            .join(task.to_string())
            .join(format!("{}.jsonl", split.as_str()))
    }

    pub fn ingest_report(&self) -> PathBuf {
        self.root.join("ingest_report.json")
    }

    pub fn model_dir(&self, task: Task, source: FeatureSource) -> PathBuf {
        self.root.join("models").join(task.to_string()).join(source.as_str())
    }

    pub fn head(&self, task: Task, source: FeatureSource) -> PathBuf {
        self.model_dir(task, source).join("head.memh")
    }

    pub fn history(&self, task: Task, source: FeatureSource) -> PathBuf {
        self.model_dir(task, source).join("history.jsonl")
    }

    pub fn index(&self, task: Task, source: FeatureSource) -> (PathBuf, PathBuf) {
        let d = self.model_dir(task, source);
        (d.join("index.memf"), d.join("index.json"))
    }

    pub fn xdnn(&self, task: Task, source: FeatureSource) -> (PathBuf, PathBuf) {
        let d = self.model_dir(task, source);
        (d.join("xdnn.memf"), d.join("xdnn.json"))
    }

    pub fn eval_report(&self, task: Task, source: FeatureSource, method: Method) -> PathBuf {
        self.model_dir(task, source).join(format!("eval_{method}.json"))
    }

    pub fn comparison(&self, task: Task) -> (PathBuf, PathBuf) {
        let d = self.root.join("comparison");
        (d.join(format!("{task}.json")), d.join(format!("{task}.txt")))
    }

    pub fn decisions(&self) -> PathBuf {
        self.root.join("decisions.jsonl")
    }
}

pub(crate) fn ensure_parent(path: &Path) -> std::io::Result<()> {
    match path.parent() {
        Some(p) => std::fs::create_dir_all(p),
        None => Ok(()),
    }
}

//! Loaded artifacts and on-demand explanations.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use anyhow::Result;
use log::warn;
use memexplain_core::feature_store::{FeatureMatrix, FeatureSource, Manifest, MemeEntry, Split, Task};
use memexplain_core::mlp_head::{load_checkpoint, threshold_labels, MlpHead};
use memexplain_core::retrieval::{attach_labels, EmbeddingIndex, Neighbor};
use memexplain_core::xdnn::{prototype_report, PrototypeModel, SetReport, XdnnDecision};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::layout::model_tag;
use crate::pipeline::{self, artifact_checksums, require, Project};

pub struct ModelBundle {
    pub task: Task,
    pub source: FeatureSource,
    pub tag: String,
    pub head: MlpHead<f32>,
    pub index: EmbeddingIndex,
    pub xdnn: Option<PrototypeModel>,
    pub features: Arc<FeatureMatrix>,
    pub checksums: BTreeMap<String, String>,
}

pub struct TaskData {
    /// Neighbor labels come from here.
    pub train: Manifest,
    pub memes: HashMap<String, MemeEntry>,
    pub models: BTreeMap<FeatureSource, ModelBundle>,
}

/// Read-only view over the artifacts of every loadable (task, model) pair.
pub struct Engine {
    pub k_neighbors: usize,
    pub threshold: f64,
    pub task_order: Vec<Task>,
    pub tasks: BTreeMap<Task, TaskData>,
    /// (model tag, reason) for configured pairs that could not be loaded.
    pub skipped: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelExplanation {
    pub source: String,
    pub probs: BTreeMap<String, f64>,
    pub labels: BTreeMap<String, u8>,
    pub neighbors: Vec<Neighbor>,
    pub xdnn: Option<XdnnDecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub meme_id: String,
    pub task: Task,
    pub k: usize,
    /// Gold labels when the meme is annotated.
    pub gold: BTreeMap<String, u8>,
    pub models: BTreeMap<String, ModelExplanation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub task: Task,
    pub model_tag: String,
    pub source: FeatureSource,
    pub index_size: usize,
    pub prototypes: Option<usize>,
    pub checksums: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypePayload {
    pub task: Task,
    pub model_tag: String,
    pub sets: Vec<SetReport>,
}

#[derive(Debug)]
pub enum LookupError {
    UnknownMeme(String),
    UnknownTask(String),
    UnknownModel(String),
    UnknownLabel(String),
    NoPrototypes(String),
    BadRequest(String),
    Internal(String),
}

impl std::fmt::Display for LookupError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LookupError::UnknownMeme(id) => write!(f, "unknown meme id {id:?}"),
            LookupError::UnknownTask(t) => write!(f, "task {t:?} is not loaded"),
            LookupError::UnknownModel(m) => write!(f, "model {m:?} is not loaded"),
            LookupError::UnknownLabel(l) => write!(f, "unknown label {l:?}"),
            LookupError::NoPrototypes(m) => write!(f, "no prototype model for {m}; run `memexplain xdnn-fit`"),
            LookupError::BadRequest(m) | LookupError::Internal(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for LookupError {}

fn load_bundle(
    project: &Project,
    task: Task,
    source: FeatureSource,
    features: &mut HashMap<FeatureSource, Arc<FeatureMatrix>>,
) -> Result<ModelBundle> {
    let art = &project.artifacts;
    let head_path = art.head(task, source);
    require(&head_path, "train")?;
    let head = load_checkpoint(&head_path)?;
    let index = pipeline::load_index(art, task, source)?;
    let xdnn = match pipeline::load_xdnn(art, task, source) {
        Ok(m) => Some(m),
        Err(e) => {
            warn!("{}: {e:#}", model_tag(source, task));
            None
        }
    };
    let matrix = match features.get(&source) {
        Some(m) => m.clone(),
        None => {
            let m = Arc::new(pipeline::load_features(art, source)?);
            features.insert(source, m.clone());
            m
        }
    };
    Ok(ModelBundle {
        task,
        source,
        tag: model_tag(source, task),
        head,
        index,
        xdnn,
        features: matrix,
        checksums: artifact_checksums(art, task, source),
    })
}

impl Engine {
    /// Loads what exists. Pairs with missing artifacts are recorded in
    /// `skipped`; it is an error only when nothing at all can be served.
    pub fn load(project: &Project, tasks: &[Task], models: &[FeatureSource]) -> Result<Self> {
        let art = &project.artifacts;
        let mut features = HashMap::new();
        let mut out = BTreeMap::new();
        let mut skipped = Vec::new();
        for &task in tasks {
            let train = match pipeline::load_train(art, task) {
                Ok(t) => t,
                Err(e) => {
                    for &s in models {
                        skipped.push((model_tag(s, task), format!("{e:#}")));
                    }
                    continue;
                }
            };
            let mut memes = HashMap::new();
            for split in [Split::Test, Split::Dev, Split::Train] {
                let m = if split == Split::Train {
                    Some(train.clone())
                } else {
                    pipeline::load_split(art, task, split)?
                };
                for e in m.into_iter().flat_map(|m| m.entries) {
                    memes.insert(e.id.clone(), e);
                }
            }
            let mut bundles = BTreeMap::new();
            for &source in models {
                match load_bundle(project, task, source, &mut features) {
                    Ok(b) => {
                        bundles.insert(source, b);
                    }
                    Err(e) => skipped.push((model_tag(source, task), format!("{e:#}"))),
                }
            }
            if !bundles.is_empty() {
                out.insert(task, TaskData { train, memes, models: bundles });
            }
        }
        if out.is_empty() {
            let reasons: Vec<String> = skipped.iter().map(|(t, r)| format!("{t}: {r}")).collect();
            anyhow::bail!("no (task, model) pair has complete artifacts:\n{}", reasons.join("\n"));
        }
        Ok(Engine {
            k_neighbors: project.config.k_neighbors,
            threshold: project.config.threshold,
            task_order: tasks.iter().copied().filter(|t| out.contains_key(t)).collect(),
            tasks: out,
            skipped,
        })
    }

    pub fn models(&self) -> Vec<ModelInfo> {
        self.task_order
            .iter()
            .flat_map(|t| self.tasks[t].models.values())
            .map(|b| ModelInfo {
                task: b.task,
                model_tag: b.tag.clone(),
                source: b.source,
                index_size: b.index.len(),
                prototypes: b.xdnn.as_ref().map(PrototypeModel::prototype_count),
                checksums: b.checksums.clone(),
            })
            .collect()
    }

    /// Entry for `id` under `task`, or under the first loaded task that knows it.
    pub fn meme(&self, id: &str, task: Option<Task>) -> Result<(Task, &MemeEntry), LookupError> {
        match task {
            Some(t) => {
                let data = self.task(t)?;
                data.memes
                    .get(id)
                    .map(|e| (t, e))
                    .ok_or_else(|| LookupError::UnknownMeme(id.into()))
            }
            None => self
                .task_order
                .iter()
                .find_map(|t| self.tasks[t].memes.get(id).map(|e| (*t, e)))
                .ok_or_else(|| LookupError::UnknownMeme(id.into())),
        }
    }

    fn task(&self, task: Task) -> Result<&TaskData, LookupError> {
        self.tasks
            .get(&task)
            .ok_or_else(|| LookupError::UnknownTask(task.to_string()))
    }

    /// Accepts a source name (`clip_bertweet`, `clip+bertweet`) or a full model tag.
    fn bundle(&self, task: Task, name: &str) -> Result<&ModelBundle, LookupError> {
        let data = self.task(task)?;
        let source_part = match name.split_once('/') {
            Some((s, t)) if t == task.to_string() => s,
            Some(_) => return Err(LookupError::UnknownModel(name.into())),
            None => name,
        };
        source_part
            .parse::<FeatureSource>()
            .ok()
            .and_then(|s| data.models.get(&s))
            .ok_or_else(|| LookupError::UnknownModel(name.into()))
    }

    pub fn explain(
        &self,
        meme_id: &str,
        task: Option<Task>,
        models: &[String],
        k: Option<usize>,
    ) -> Result<Explanation, LookupError> {
        let k = k.unwrap_or(self.k_neighbors);
        if k == 0 {
            return Err(LookupError::BadRequest("k must be at least 1".into()));
        }
        let (task, entry) = self.meme(meme_id, task)?;
        let data = &self.tasks[&task];
        let bundles: Vec<&ModelBundle> = if models.is_empty() {
            data.models.values().collect()
        } else {
            models.iter().map(|m| self.bundle(task, m)).collect::<Result<_, _>>()?
        };
        let labels = task.labels();
        let mut out = BTreeMap::new();
        for b in bundles {
            let x = b.features.row_by_id(meme_id).ok_or_else(|| {
                LookupError::Internal(format!("{} has no features for {meme_id}", b.tag))
            })?;
            let batch = Array2::from_shape_vec((1, x.len()), x.to_vec())
                .map_err(|e| LookupError::Internal(e.to_string()))?;
            let trace = b.head.forward(batch.view()).map_err(internal)?;
            let probs: Vec<f32> = trace.probs.row(0).to_vec();
            let embedding = trace.h3.row(0).to_vec();
            let mut neighbors = b.index.query_top_k(&embedding, k).map_err(internal)?;
            attach_labels(&mut neighbors, &data.train);
            let xdnn = b.xdnn.as_ref().map(|m| m.classify(x)).transpose().map_err(internal)?;
            out.insert(
                b.tag.clone(),
                ModelExplanation {
                    source: b.source.label().to_string(),
                    probs: labels.iter().cloned().zip(probs.iter().map(|p| *p as f64)).collect(),
                    labels: labels
                        .iter()
                        .cloned()
                        .zip(threshold_labels(&probs, self.threshold as f32))
                        .collect(),
                    neighbors,
                    xdnn,
                },
            );
        }
        Ok(Explanation {
            meme_id: meme_id.to_string(),
            task,
            k,
            gold: entry.labels.clone(),
            models: out,
        })
    }

    pub fn prototypes(&self, task: Task, model: &str, label: Option<&str>) -> Result<PrototypePayload, LookupError> {
        let b = self.bundle(task, model)?;
        let m = b.xdnn.as_ref().ok_or_else(|| LookupError::NoPrototypes(b.tag.clone()))?;
        if let Some(l) = label {
            if task.label_index(l).is_none() {
                return Err(LookupError::UnknownLabel(l.into()));
            }
        }
        Ok(PrototypePayload {
            task,
            model_tag: b.tag.clone(),
            sets: prototype_report(m)
                .into_iter()
                .filter(|s| label.is_none_or(|l| s.label == l))
                .collect(),
        })
    }
}

fn internal(e: memexplain_core::Error) -> LookupError {
    LookupError::Internal(e.to_string())
}

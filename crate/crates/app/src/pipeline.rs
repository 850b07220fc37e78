//! The offline commands: ingest, train, index, xdnn-fit, eval.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use memexplain_core::feature_store::{
    concat_features, holdout_split, read_feature_file, read_manifest, validate_manifest,
    write_feature_file, write_manifest, FeatureMatrix, FeatureSource, Manifest, Split, StatTable,
    Task, ValidationReport,
};
use memexplain_core::feature_store::memf;
use memexplain_core::metrics::{compare_report, evaluate, ComparisonTable, EvalInput, EvalReport, Method};
use memexplain_core::mlp_head::{load_checkpoint, save_checkpoint, train, History};
use memexplain_core::retrieval::{build_index, EmbeddingIndex, IndexSidecar};
use memexplain_core::xdnn::{self, PrototypeModel};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::config::ProjectConfig;
use crate::layout::{ensure_parent, model_tag, ArtifactLayout, DataLayout};

#[derive(Debug, Clone)]
pub struct Project {
    pub config: ProjectConfig,
    pub data: DataLayout,
    pub artifacts: ArtifactLayout,
}

impl Project {
    pub fn new(config: ProjectConfig) -> Self {
        Self {
            data: DataLayout::new(&config.data_dir),
            artifacts: ArtifactLayout::new(&config.artifacts_dir),
            config,
        }
    }
}

/// Fails with a message naming the command that produces `path`.
pub fn require(path: &Path, command: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(anyhow!(
            "missing {}; run `memexplain {command}` first",
            path.display()
        ))
    }
}

pub fn hex_crc(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let crc = memf::trailer_crc(&bytes).ok_or_else(|| anyhow!("{} is too short", path.display()))?;
    Ok(format!("{crc:08x}"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

// ---------------------------------------------------------------- ingest

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitReport {
    pub task: Task,
    pub split: Split,
    pub report: ValidationReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureReport {
    pub source: FeatureSource,
    pub dim: usize,
    pub count: usize,
    pub checksum: String,
    /// Built from other sources rather than read from data_dir.
    pub derived: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestReport {
    pub splits: Vec<SplitReport>,
    pub features: Vec<FeatureReport>,
}

impl IngestReport {
    pub fn problems(&self) -> Vec<String> {
        self.splits
            .iter()
            .flat_map(|s| {
                s.report
                    .problems()
                    .into_iter()
                    .map(move |p| format!("{}/{}: {p}", s.task, s.split.as_str()))
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.splits {
            let pos: Vec<String> = s.report.positives.iter().map(|(l, c)| format!("{l}={c}")).collect();
            out += &format!(
                "{}/{}: {} memes, positives {}\n",
                s.task,
                s.split.as_str(),
                s.report.total,
                pos.join(" ")
            );
            for w in &s.report.warnings {
                out += &format!("  warning: {w}\n");
            }
            for p in s.report.problems() {
                out += &format!("  problem: {p}\n");
            }
        }
        for f in &self.features {
            out += &format!(
                "features {}: {} x {} crc {}{}\n",
                f.source,
                f.count,
                f.dim,
                f.checksum,
                if f.derived { " (derived)" } else { "" }
            );
        }
        out
    }
}

fn reference_stats(task: Task, split: Split) -> Option<StatTable> {
    match (task, split) {
        (Task::MamiA | Task::MamiB, Split::Train) => Some(StatTable::mami_train()),
        (Task::MamiA | Task::MamiB, Split::Test) => Some(StatTable::mami_test()),
        _ => None,
    }
}

fn load_input_features(data: &DataLayout, source: FeatureSource) -> Result<(FeatureMatrix, bool)> {
    let path = data.features(source);
    if path.exists() {
        let m = read_feature_file(&path).with_context(|| format!("reading {}", path.display()))?;
        return Ok((m.with_source(source), false));
    }
    if source == FeatureSource::ClipBertweet {
        let (clip, bertweet) = (data.features(FeatureSource::Clip), data.features(FeatureSource::Bertweet));
        if clip.exists() && bertweet.exists() {
            let a = read_feature_file(&clip)?.with_source(FeatureSource::Clip);
            let b = read_feature_file(&bertweet)?.with_source(FeatureSource::Bertweet);
            let joined = concat_features(&a, &b)
                .with_context(|| format!("joining {} and {}", clip.display(), bertweet.display()))?;
            return Ok((joined, true));
        }
        bail!(
            "missing feature file {} for model {} (or both {} and {} to build it)",
            path.display(),
            source.label(),
            clip.display(),
            bertweet.display()
        );
    }
    bail!(
        "missing feature file {} for model {}; run the extractor or gen-synthetic to produce it",
        path.display(),
        source.label()
    )
}

/// Validates manifests and features and copies them into the artifact tree.
/// Nothing is written when validation fails.
pub fn ingest(project: &Project, tasks: &[Task], models: &[FeatureSource]) -> Result<IngestReport> {
    let (data, art) = (&project.data, &project.artifacts);
    let mut manifests = Vec::new();
    let mut splits = Vec::new();
    for &task in tasks {
        for split in [Split::Train, Split::Dev, Split::Test] {
            let path = data.manifest(task, split);
            if !path.exists() {
                if split == Split::Train {
                    bail!("missing manifest {} for task {task}", path.display());
                }
                continue;
            }
            let m = read_manifest(&path, task, split).with_context(|| format!("reading {}", path.display()))?;
            let expected = project
                .config
                .ingest
                .reference_counts
                .then(|| reference_stats(task, split))
                .flatten();
            let report = validate_manifest(&m, expected.as_ref());
            splits.push(SplitReport { task, split, report });
            manifests.push(m);
        }
    }

    let mut features = Vec::new();
    for &source in models {
        let (matrix, derived) = load_input_features(data, source)?;
        for m in &manifests {
            let missing = matrix.missing(m.ids());
            if !missing.is_empty() {
                let shown: Vec<&String> = missing.iter().take(5).collect();
                bail!(
                    "{} lacks {} ids of {}/{} (first: {shown:?})",
                    data.features(source).display(),
                    missing.len(),
                    m.task,
                    m.split.as_str()
                );
            }
        }
        features.push((matrix, derived));
    }

    let mut report = IngestReport { splits, features: Vec::new() };
    let problems = report.problems();
    if !problems.is_empty() {
        bail!("validation failed:\n{}", report.to_text());
    }

    for m in &manifests {
        let path = art.manifest(m.task, m.split);
        ensure_parent(&path)?;
        write_manifest(&path, m)?;
    }
    for (matrix, derived) in features {
        let path = art.features(matrix.source());
        ensure_parent(&path)?;
        let crc = write_feature_file(&path, &matrix)?;
        report.features.push(FeatureReport {
            source: matrix.source(),
            dim: matrix.dim(),
            count: matrix.len(),
            checksum: format!("{crc:08x}"),
            derived,
        });
    }
    write_json(&art.ingest_report(), &report)?;
    info!("ingested {} splits and {} feature sources", report.splits.len(), report.features.len());
    Ok(report)
}

// ---------------------------------------------------------------- shared loading

pub fn load_features(art: &ArtifactLayout, source: FeatureSource) -> Result<FeatureMatrix> {
    let path = art.features(source);
    require(&path, "ingest")?;
    Ok(read_feature_file(&path)?.with_source(source))
}

pub fn load_split(art: &ArtifactLayout, task: Task, split: Split) -> Result<Option<Manifest>> {
    let path = art.manifest(task, split);
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(read_manifest(&path, task, split)?))
}

pub fn load_train(art: &ArtifactLayout, task: Task) -> Result<Manifest> {
    let path = art.manifest(task, Split::Train);
    require(&path, "ingest")?;
    Ok(read_manifest(&path, task, Split::Train)?)
}

/// Row-major feature block for the memes of `m`, in manifest order.
pub fn design(features: &FeatureMatrix, m: &Manifest) -> Result<Array2<f32>> {
    let flat = features.gather(&m.ids())?;
    Ok(Array2::from_shape_vec((m.len(), features.dim()), flat)?)
}

fn label_matrix(m: &Manifest) -> Result<Array2<u8>> {
    Ok(Array2::from_shape_vec((m.len(), m.task.label_count()), m.targets()?)?)
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub model_tag: String,
    pub checksum: String,
    pub history: History,
    pub dev_source: &'static str,
}

pub fn cmd_train(project: &Project, task: Task, source: FeatureSource) -> Result<TrainSummary> {
    let art = &project.artifacts;
    let features = load_features(art, source)?;
    let full = load_train(art, task)?;
    let (train_set, dev, dev_source) = match load_split(art, task, Split::Dev)? {
        Some(dev) if !dev.is_empty() => (full, dev, "dev split"),
        _ => {
            let (t, d) = holdout_split(&full, project.config.train.dev_fraction, project.config.seed);
            (t, d, "holdout from train")
        }
    };
    let (head, history) = train(&features, &train_set, Some(&dev), &project.config.train_config())?;
    let path = art.head(task, source);
    ensure_parent(&path)?;
    let crc = save_checkpoint(&path, &head)?;
    std::fs::write(art.history(task, source), history.to_json_lines())?;
    Ok(TrainSummary {
        model_tag: model_tag(source, task),
        checksum: format!("{crc:08x}"),
        history,
        dev_source,
    })
}

// ---------------------------------------------------------------- index

/// Embeds every training meme through the trained head and persists the index.
pub fn cmd_index(project: &Project, task: Task, source: FeatureSource) -> Result<IndexSidecar> {
    let art = &project.artifacts;
    let head_path = art.head(task, source);
    require(&head_path, "train")?;
    let head = load_checkpoint(&head_path)?;
    let features = load_features(art, source)?;
    let train_set = load_train(art, task)?;
    let x = design(&features, &train_set)?;
    let emb = head.embed_batch(x.view())?;
    let dim = emb.ncols();
    let ids: Vec<String> = train_set.ids().into_iter().map(String::from).collect();
    let index = build_index(ids, emb.into_raw_vec_and_offset().0, dim, model_tag(source, task))?;
    let (m, s) = art.index(task, source);
    Ok(index.save(&m, &s)?)
}

// ---------------------------------------------------------------- xdnn-fit

#[derive(Debug, Clone, Serialize)]
pub struct XdnnSummary {
    pub model_tag: String,
    pub prototypes: usize,
    pub checksum: String,
    pub sets: Vec<xdnn::SetReport>,
}

pub fn cmd_fit_xdnn(project: &Project, task: Task, source: FeatureSource) -> Result<XdnnSummary> {
    let art = &project.artifacts;
    let features = load_features(art, source)?;
    let train_set = load_train(art, task)?;
    let model = xdnn::fit(&features, &train_set)?;
    for lm in &model.labels {
        if !lm.trainable() {
            warn!("{}: label {} has an empty class; it will abstain", model_tag(source, task), lm.label);
        }
    }
    let (m, s) = art.xdnn(task, source);
    ensure_parent(&m)?;
    model.save(&m, &s)?;
    Ok(XdnnSummary {
        model_tag: model_tag(source, task),
        prototypes: model.prototype_count(),
        checksum: hex_crc(&m)?,
        sets: xdnn::prototype_report(&model),
    })
}

pub fn load_xdnn(art: &ArtifactLayout, task: Task, source: FeatureSource) -> Result<PrototypeModel> {
    let (m, s) = art.xdnn(task, source);
    require(&m, "xdnn-fit")?;
    require(&s, "xdnn-fit")?;
    Ok(PrototypeModel::load(&m, &s)?)
}

pub fn load_index(art: &ArtifactLayout, task: Task, source: FeatureSource) -> Result<EmbeddingIndex> {
    let (m, s) = art.index(task, source);
    require(&m, "index")?;
    require(&s, "index")?;
    Ok(EmbeddingIndex::load(&m, &s)?)
}

// ---------------------------------------------------------------- eval

/// The split scored by `eval`: test when present, otherwise dev.
pub fn eval_split(art: &ArtifactLayout, task: Task) -> Result<Manifest> {
    for split in [Split::Test, Split::Dev] {
        if let Some(m) = load_split(art, task, split)? {
            if !m.is_empty() {
                return Ok(m);
            }
        }
    }
    bail!("task {task} has no dev or test split to evaluate; add one to data_dir and run `memexplain ingest`")
}

pub fn predict_xdnn(model: &PrototypeModel, x: ArrayView2<f32>) -> Result<Array2<u8>> {
    let mut out = Array2::zeros((x.nrows(), model.labels.len()));
    for (i, row) in x.rows().into_iter().enumerate() {
        let d = model.classify(row.as_slice().ok_or_else(|| anyhow!("non-contiguous row"))?)?;
        out.row_mut(i).assign(&ndarray::Array1::from(d.values()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub reports: Vec<EvalReport>,
    pub comparison: ComparisonTable,
}

pub fn cmd_eval(project: &Project, task: Task, source: FeatureSource) -> Result<EvalSummary> {
    let art = &project.artifacts;
    let head_path = art.head(task, source);
    require(&head_path, "train")?;
    let head = load_checkpoint(&head_path)?;
    let prototypes = load_xdnn(art, task, source)?;
    let features = load_features(art, source)?;
    let split = eval_split(art, task)?;
    let x = design(&features, &split)?;
    let truth = label_matrix(&split)?;
    let tag = model_tag(source, task);

    let mut reports = Vec::new();
    for method in [Method::ExampleBased, Method::PrototypeBased] {
        let pred = match method {
            Method::ExampleBased => head.predict_batch(x.view(), project.config.threshold as f32)?,
            Method::PrototypeBased => predict_xdnn(&prototypes, x.view())?,
        };
        let report = evaluate(
            &EvalInput {
                task,
                model_tag: &tag,
                method,
                source: source.label(),
                include_misogynous: project.config.eval.include_misogynous,
            },
            truth.view(),
            pred.view(),
        )?;
        write_json(&art.eval_report(task, source, method), &report)?;
        reports.push(report);
    }
    let comparison = refresh_comparison(project, task)?;
    Ok(EvalSummary { reports, comparison })
}

/// Rebuilds the task's comparison table from every eval report on disk.
pub fn refresh_comparison(project: &Project, task: Task) -> Result<ComparisonTable> {
    let art = &project.artifacts;
    let mut reports = Vec::new();
    for &source in &project.config.models {
        for method in [Method::PrototypeBased, Method::ExampleBased] {
            let path = art.eval_report(task, source, method);
            if path.exists() {
                reports.push(read_json::<EvalReport>(&path)?);
            }
        }
    }
    let table = compare_report(&reports)?;
    let (json, txt) = art.comparison(task);
    write_json(&json, &table)?;
    std::fs::write(&txt, table.to_text())?;
    Ok(table)
}

// ---------------------------------------------------------------- artifacts

/// Checksums of the persisted artifacts of one (task, model) pair.
pub fn artifact_checksums(art: &ArtifactLayout, task: Task, source: FeatureSource) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let (im, _) = art.index(task, source);
    let (xm, _) = art.xdnn(task, source);
    let files: [(&str, PathBuf); 4] = [
        ("features", art.features(source)),
        ("head", art.head(task, source)),
        ("index", im),
        ("xdnn", xm),
    ];
    for (name, path) in files {
        if let Ok(crc) = hex_crc(&path) {
            out.insert(name.to_string(), crc);
        }
    }
    out
}

/// Writes a generated dataset into `data` as `source` features plus
/// train/dev manifests, and returns the synthetic task.
pub fn write_synthetic_data(
    data: &DataLayout,
    spec: &memexplain_core::feature_store::SyntheticSpec,
    dev_fraction: f64,
    source: FeatureSource,
) -> Result<Task> {
    let (features, manifest) = memexplain_core::feature_store::gen_synthetic(spec)?;
    let (train_set, dev) = holdout_split(&manifest, dev_fraction, spec.seed);
    let task = manifest.task;
    for m in [&train_set, &dev] {
        let path = data.manifest(task, m.split);
        ensure_parent(&path)?;
        write_manifest(&path, m)?;
    }
    let path = data.features(source);
    ensure_parent(&path)?;
    write_feature_file(&path, &features.with_source(source))?;
    Ok(task)
}

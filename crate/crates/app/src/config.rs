use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use memexplain_core::feature_store::{FeatureSource, Task};
use memexplain_core::mlp_head::TrainConfig;
use memexplain_core::retrieval::DEFAULT_K;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    pub data_dir: PathBuf,
    pub artifacts_dir: PathBuf,
    pub tasks: Vec<Task>,
    pub models: Vec<FeatureSource>,
    #[serde(default = "default_k")]
    pub k_neighbors: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_listen")]
    pub listen_address: String,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub ingest: IngestSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Share of train held out for model selection when no dev split exists.
    pub dev_fraction: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            dev_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Add `misogynous` to the weighted F1 label set of mami_b.
    pub include_misogynous: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    /// Check MAMI train/test splits against the published counts.
    pub reference_counts: bool,
}

fn default_k() -> usize {
    DEFAULT_K
}

fn default_threshold() -> f64 {
    0.5
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

impl ProjectConfig {
    /// Defaults for everything but the paths, tasks and models.
    pub fn new(data_dir: PathBuf, artifacts_dir: PathBuf, tasks: Vec<Task>, models: Vec<FeatureSource>) -> Self {
        Self {
            data_dir,
            artifacts_dir,
            tasks,
            models,
            k_neighbors: DEFAULT_K,
            threshold: default_threshold(),
            seed: 0,
            listen_address: default_listen(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            ingest: IngestSection::default(),
        }
    }

    /// Parses a TOML config. Relative paths are taken from the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: ProjectConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data_dir, &mut cfg.artifacts_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn check(&self) -> Result<()> {
        if self.k_neighbors == 0 {
            bail!("k_neighbors must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            bail!("threshold must lie in [0, 1], got {}", self.threshold);
        }
        if self.tasks.is_empty() {
            bail!("config lists no tasks");
        }
        if self.models.is_empty() {
            bail!("config lists no models");
        }
        if !self.data_dir.is_dir() {
            bail!("data_dir {} does not exist", self.data_dir.display());
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            lr: self.train.lr,
            threshold: self.threshold,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    /// Tasks and models after applying `--task` / `--model` filters.
    pub fn select(&self, task: Option<Task>, model: Option<FeatureSource>) -> Result<(Vec<Task>, Vec<FeatureSource>)> {
        let tasks = match task {
            Some(t) if !self.tasks.contains(&t) => bail!("task {t} is not in the config"),
            Some(t) => vec![t],
            None => self.tasks.clone(),
        };
        let models = match model {
            Some(m) if !self.models.contains(&m) => bail!("model {m} is not in the config"),
            Some(m) => vec![m],
            None => self.models.clone(),
        };
        Ok((tasks, models))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_defaults() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("data")).unwrap();
        let path = dir.path().join("project.toml");
        std::fs::write(
            &path,
            "data_dir = \"data\"\nartifacts_dir = \"out\"\ntasks = [\"mami_a\"]\nmodels = [\"clip\", \"clip+bertweet\"]\n",
        )
        .unwrap();
        let cfg = ProjectConfig::load(&path).unwrap();
        assert_eq!(cfg.k_neighbors, 9);
        assert_eq!(cfg.threshold, 0.5);
        assert_eq!(cfg.models, vec![FeatureSource::Clip, FeatureSource::ClipBertweet]);
        assert_eq!(cfg.artifacts_dir, dir.path().join("out"));
        assert_eq!(cfg.train.epochs, 20);
    }

    #[test]
    fn round_trips_through_toml() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ProjectConfig::new(dir.path().into(), dir.path().join("a"), vec![Task::MamiB], vec![FeatureSource::Bertweet]);
        cfg.seed = 11;
        let path = dir.path().join("c.toml");
        std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
        assert_eq!(ProjectConfig::load(&path).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ProjectConfig::new(dir.path().into(), dir.path().join("a"), vec![Task::Hateful], vec![FeatureSource::Clip]);
        cfg.k_neighbors = 0;
        assert!(cfg.check().is_err());
        cfg.k_neighbors = 3;
        cfg.data_dir = dir.path().join("nope");
        assert!(cfg.check().unwrap_err().to_string().contains("nope"));
    }
}

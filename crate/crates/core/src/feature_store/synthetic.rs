use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, FeatureSource, Manifest, MemeEntry, Split, Task};
use crate::error::{Error, Result};

/// Gaussian-blob dataset recipe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub label_count: usize,
    pub clusters_per_label: usize,
    pub dim: usize,
    pub samples_per_cluster: usize,
    /// Per-coordinate standard deviation around each center.
    pub cluster_spread: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn total(&self) -> usize {
        self.label_count * self.clusters_per_label * self.samples_per_cluster
    }

    fn check(&self) -> Result<()> {
        if self.label_count == 0 || self.clusters_per_label == 0 || self.samples_per_cluster == 0 {
            return Err(Error::Argument("synthetic counts must be >= 1".into()));
        }
        if self.dim < 2 {
            return Err(Error::Argument("synthetic dim must be >= 2".into()));
        }
        if !(self.cluster_spread >= 0.0 && self.cluster_spread.is_finite()) {
            return Err(Error::Argument("cluster spread must be a finite value >= 0".into()));
        }
        Ok(())
    }
}

/// Generates `label_count * clusters_per_label` blobs around random unit
/// centers. Each sample is positive for exactly the label that owns its
/// cluster. Samples are emitted round-robin over clusters so every prefix
/// of the data covers all clusters.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<(FeatureMatrix, Manifest)> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_clusters = spec.label_count * spec.clusters_per_label;

    let centers: Vec<Vec<f64>> = (0..n_clusters)
        .map(|_| loop {
            let c: Vec<f64> = (0..spec.dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-9 {
                break c.into_iter().map(|v| v / norm).collect();
            }
        })
        .collect();

    let task = Task::Synthetic(spec.label_count);
    let label_names = task.labels();
    let total = spec.total();
    let mut ids = Vec::with_capacity(total);
    let mut vectors = Vec::with_capacity(total * spec.dim);
    let mut entries = Vec::with_capacity(total);
    for s in 0..spec.samples_per_cluster {
        for (c, center) in centers.iter().enumerate() {
            let n = s * n_clusters + c;
            let owner = c / spec.clusters_per_label;
            for &x in center {
                let noise: f64 = if spec.cluster_spread > 0.0 {
                    spec.cluster_spread * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                vectors.push((x + noise) as f32);
            }
            let id = format!("syn-{n}");
            entries.push(MemeEntry {
                id: id.clone(),
                text: String::new(),
                image_path: None,
                labels: label_names
                    .iter()
                    .enumerate()
                    .map(|(l, name)| (name.clone(), (l == owner) as u8))
                    .collect(),
            });
            ids.push(id);
        }
    }
    let matrix = FeatureMatrix::new(FeatureSource::Synthetic, spec.dim, ids, vectors)?;
    Ok((matrix, Manifest::new(task, Split::Train, entries)))
}

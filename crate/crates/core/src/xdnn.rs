//! Prototype-based classifier in the xDNN style.
//!
//! Each label gets two prototype sets, one learned from its positive
//! training memes and one from its negatives. A set is learned in a single
//! ordered pass over unit-normalized samples. The first sample is a
//! prototype; every later sample either starts a new prototype, when its
//! squared distance to the nearest prototype exceeds [`NOVELTY_SQ_DIST`]
//! (an angle of more than 30 degrees), or is folded into that prototype,
//! which is then re-projected onto the unit sphere.
//!
//! The pass also tracks the running mean `mu` and mean squared norm `X` of
//! the set, which define the Cauchy-type data density
//!
//! ```text
//! D(v) = 1 / (1 + |v - mu|^2 / (X - |mu|^2))        (D = 1 when X - |mu|^2 <= 1e-12)
//! ```
//!
//! used to rank prototypes as local density peaks in reports.
//!
//! Classification scores every prototype with `exp(-|x - p|^2)`, keeps the
//! best per set (local stage) and lets the positive and negative winners
//! compete per label (global stage). Ties go to the negative class.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::memf::{self, MemfData};
use crate::feature_store::{FeatureMatrix, Manifest, Task};

/// Allowed deviation of an input norm from 1.
pub const UNIT_TOLERANCE: f64 = 1e-4;
const DEGENERATE_SPREAD: f64 = 1e-12;
/// `2 * (1 - cos(pi / 6))`: squared chord length of a 30 degree angle on
/// the unit sphere, doubled from the xDNN initial cloud radius.
pub const NOVELTY_SQ_DIST: f64 = 2.0 * (1.0 - 0.866_025_403_784_438_6);

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub vector: Vec<f32>,
    /// The input had zero norm and was returned unchanged.
    pub was_zero: bool,
}

pub fn unit_normalize(x: &[f32]) -> Normalized {
    let norm = x.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Normalized {
            vector: vec![0.0; x.len()],
            was_zero: true,
        };
    }
    Normalized {
        vector: x.iter().map(|&v| (v as f64 / norm) as f32).collect(),
        was_zero: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prototype {
    #[serde(skip)]
    pub vector: Vec<f32>,
    pub support: usize,
    pub exemplar_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    #[serde(skip)]
    pub prototypes: Vec<Prototype>,
    /// Samples seen by the pass.
    pub count: usize,
    pub mean: Vec<f64>,
    pub mean_sq_norm: f64,
}

impl PrototypeSet {
    pub fn len(&self) -> usize {
        self.prototypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prototypes.is_empty()
    }

    pub fn total_support(&self) -> usize {
        self.prototypes.iter().map(|p| p.support).sum()
    }

    /// Data density of `v` under the set's final running statistics.
    pub fn density(&self, v: &[f32]) -> f64 {
        let mean_norm_sq = dot64(&self.mean, &self.mean);
        let v: Vec<f64> = v.iter().map(|&f| f as f64).collect();
        density(&v, &self.mean, self.mean_sq_norm - mean_norm_sq)
    }

    /// Best `exp(-|x - p|^2)` over the set and the index of its prototype.
    /// Ties keep the earliest prototype.
    pub fn best_match(&self, x: &[f32]) -> (f64, usize) {
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, p) in self.prototypes.iter().enumerate() {
            let s = (-sq_dist(x, &p.vector)).exp();
            if s > best.0 {
                best = (s, i);
            }
        }
        best
    }
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

struct Stats {
    n: usize,
    mean: Vec<f64>,
    mean_sq_norm: f64,
}

impl Stats {
    fn update(&mut self, x: &[f64]) {
        self.n += 1;
        let a = (self.n - 1) as f64 / self.n as f64;
        let b = 1.0 / self.n as f64;
        for (m, &v) in self.mean.iter_mut().zip(x) {
            *m = a * *m + b * v;
        }
        self.mean_sq_norm = a * self.mean_sq_norm + b * dot64(x, x);
    }

}

fn density(v: &[f64], mean: &[f64], spread: f64) -> f64 {
    if spread <= DEGENERATE_SPREAD {
        return 1.0;
    }
    let d2: f64 = v.iter().zip(mean).map(|(a, m)| (a - m) * (a - m)).sum();
    1.0 / (1.0 + d2 / spread)
}

fn dot64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Single ordered pass over unit-norm samples `(id, vector)`.
pub fn fit_set<S: AsRef<str>, V: AsRef<[f32]>>(samples: &[(S, V)]) -> Result<PrototypeSet> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Argument("cannot fit a prototype set without samples".into()))?;
    let dim = first.1.as_ref().len();
    if dim == 0 {
        return Err(Error::Argument("zero-dimensional samples".into()));
    }

    struct Working {
        vector: Vec<f64>,
        support: usize,
        exemplar: usize,
    }
    let mut stats = Stats {
        n: 0,
        mean: vec![0.0; dim],
        mean_sq_norm: 0.0,
    };
    let mut protos: Vec<Working> = Vec::new();

    for (idx, (id, v)) in samples.iter().enumerate() {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(Error::Shape(format!("sample {:?} has dim {} not {dim}", id.as_ref(), v.len())));
        }
        let x: Vec<f64> = v.iter().map(|&f| f as f64).collect();
        let norm = dot64(&x, &x).sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::Argument(format!(
                "sample {:?} is not unit-norm (|x| = {norm})",
                id.as_ref()
            )));
        }
        stats.update(&x);
        if protos.is_empty() {
            protos.push(Working {
                vector: x,
                support: 1,
                exemplar: idx,
            });
            continue;
        }

        let mut nearest = (f64::INFINITY, 0usize);
        for (j, p) in protos.iter().enumerate() {
            let d2: f64 = p.vector.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < nearest.0 {
                nearest = (d2, j);
            }
        }
        if nearest.0 > NOVELTY_SQ_DIST {
            protos.push(Working {
                vector: x,
                support: 1,
                exemplar: idx,
            });
        } else {
            let p = &mut protos[nearest.1];
            let s = p.support as f64;
            for (a, b) in p.vector.iter_mut().zip(&x) {
                *a = (s * *a + b) / (s + 1.0);
            }
            let n = dot64(&p.vector, &p.vector).sqrt();
            if n > 0.0 {
                p.vector.iter_mut().for_each(|a| *a /= n);
            }
            p.support += 1;
        }
    }

    Ok(PrototypeSet {
        prototypes: protos
            .into_iter()
            .map(|p| Prototype {
                vector: p.vector.iter().map(|&v| v as f32).collect(),
                support: p.support,
                exemplar_id: samples[p.exemplar].0.as_ref().to_owned(),
            })
            .collect(),
        count: stats.n,
        mean: stats.mean,
        mean_sq_norm: stats.mean_sq_norm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelModel {
    pub label: String,
    /// `None` when the label had no positive (or no negative) training memes.
    pub positive: Option<PrototypeSet>,
    pub negative: Option<PrototypeSet>,
}

impl LabelModel {
    pub fn trainable(&self) -> bool {
        self.positive.is_some() && self.negative.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeModel {
    pub task: Task,
    pub dim: usize,
    pub labels: Vec<LabelModel>,
}

/// One binary prototype learner per task label, positives and negatives
/// each fitted in manifest order.
pub fn fit(features: &FeatureMatrix, manifest: &Manifest) -> Result<PrototypeModel> {
    let ids = manifest.ids();
    let rows = features.gather(&ids)?;
    let targets = manifest.targets()?;
    let dim = features.dim();
    let labels = manifest.task.labels();
    let mut normalized = Vec::with_capacity(ids.len());
    for (id, row) in ids.iter().zip(rows.chunks_exact(dim)) {
        let n = unit_normalize(row);
        if n.was_zero {
            return Err(Error::Argument(format!("meme {id:?} has an all-zero feature vector")));
        }
        normalized.push(n.vector);
    }
    let mut out = Vec::with_capacity(labels.len());
    for (l, label) in labels.iter().enumerate() {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (i, id) in ids.iter().enumerate() {
            let sample = (*id, normalized[i].as_slice());
            if targets[i * labels.len() + l] == 1 {
                pos.push(sample);
            } else {
                neg.push(sample);
            }
        }
        let fit_opt = |s: &[(&str, &[f32])]| if s.is_empty() { Ok(None) } else { fit_set(s).map(Some) };
        out.push(LabelModel {
            label: label.clone(),
            positive: fit_opt(&pos)?,
            negative: fit_opt(&neg)?,
        });
    }
    Ok(PrototypeModel {
        task: manifest.task,
        dim,
        labels: out,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDecision {
    pub label: String,
    /// 1 when the positive set wins, 0 otherwise; `None` when the label
    /// could not be trained.
    pub value: Option<u8>,
    pub lambda_pos: f64,
    pub lambda_neg: f64,
    /// Exemplar of the winning set's best prototype.
    pub winning_prototype: Option<String>,
    pub winning_support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XdnnDecision {
    pub labels: Vec<LabelDecision>,
}

impl XdnnDecision {
    /// Per-label 0/1 decisions with abstentions mapped to 0.
    pub fn values(&self) -> Vec<u8> {
        self.labels.iter().map(|d| d.value.unwrap_or(0)).collect()
    }
}

impl PrototypeModel {
    /// Normalizes `x` and runs the local and global decision stages.
    pub fn classify(&self, x: &[f32]) -> Result<XdnnDecision> {
        if x.len() != self.dim {
            return Err(Error::Shape(format!("input dim {} vs model dim {}", x.len(), self.dim)));
        }
        let x = unit_normalize(x).vector;
        let labels = self
            .labels
            .iter()
            .map(|lm| match (&lm.positive, &lm.negative) {
                (Some(pos), Some(neg)) => {
                    let (lp, ip) = pos.best_match(&x);
                    let (ln, in_) = neg.best_match(&x);
                    let (value, winner) = if lp > ln { (1, &pos.prototypes[ip]) } else { (0, &neg.prototypes[in_]) };
                    LabelDecision {
                        label: lm.label.clone(),
                        value: Some(value),
                        lambda_pos: lp,
                        lambda_neg: ln,
                        winning_prototype: Some(winner.exemplar_id.clone()),
                        winning_support: winner.support,
                    }
                }
                _ => LabelDecision {
                    label: lm.label.clone(),
                    value: None,
                    lambda_pos: 0.0,
                    lambda_neg: 0.0,
                    winning_prototype: None,
                    winning_support: 0,
                },
            })
            .collect();
        Ok(XdnnDecision { labels })
    }

    fn sets(&self) -> impl Iterator<Item = (&str, Polarity, &PrototypeSet)> {
        self.labels.iter().flat_map(|lm| {
            [(Polarity::Positive, &lm.positive), (Polarity::Negative, &lm.negative)]
                .into_iter()
                .filter_map(move |(pol, s)| s.as_ref().map(|s| (lm.label.as_str(), pol, s)))
        })
    }

    pub fn prototype_count(&self) -> usize {
        self.sets().map(|(_, _, s)| s.len()).sum()
    }

    /// Vectors as MEMF (ids `label/polarity/exemplar`) plus a JSON sidecar
    /// with structure, supports and running statistics.
    pub fn save(&self, memf_path: &Path, sidecar_path: &Path) -> Result<()> {
        let mut ids = Vec::new();
        let mut vectors = Vec::new();
        for (label, pol, set) in self.sets() {
            for p in &set.prototypes {
                ids.push(format!("{label}/{pol}/{}", p.exemplar_id));
                vectors.extend_from_slice(&p.vector);
            }
        }
        let crc = memf::write(
            memf_path,
            &MemfData {
                dim: self.dim,
                ids,
                vectors,
            },
        )?;
        let sidecar = PrototypeSidecar {
            model: self.clone(),
            prototypes: self
                .sets()
                .map(|(_, _, s)| s.prototypes.iter().map(|p| (p.exemplar_id.clone(), p.support)).collect())
                .collect(),
            checksum: format!("{crc:08x}"),
        };
        let json = serde_json::to_string(&sidecar)? + "\n";
        std::fs::write(sidecar_path, json).map_err(|e| Error::io(sidecar_path, e))
    }

    pub fn load(memf_path: &Path, sidecar_path: &Path) -> Result<Self> {
        let bytes = std::fs::read(memf_path).map_err(|e| Error::io(memf_path, e))?;
        let data = memf::decode(&bytes)?;
        let sidecar: PrototypeSidecar = serde_json::from_slice(
            &std::fs::read(sidecar_path).map_err(|e| Error::io(sidecar_path, e))?,
        )?;
        let crc = format!("{:08x}", memf::trailer_crc(&bytes).unwrap_or_default());
        let mismatch = |what: &str| {
            Error::Integrity(format!(
                "prototype sidecar {} disagrees with {}: {what}",
                sidecar_path.display(),
                memf_path.display()
            ))
        };
        if crc != sidecar.checksum {
            return Err(mismatch("checksum"));
        }
        let mut model = sidecar.model;
        if data.dim != model.dim {
            return Err(mismatch("dim"));
        }
        let mut rows = data.vectors.chunks_exact(data.dim);
        let mut per_set = sidecar.prototypes.into_iter();
        for lm in model.labels.iter_mut() {
            for set in [&mut lm.positive, &mut lm.negative].into_iter().flatten() {
                let entries = per_set.next().ok_or_else(|| mismatch("set count"))?;
                set.prototypes = entries
                    .into_iter()
                    .map(|(exemplar_id, support)| {
                        rows.next()
                            .map(|r| Prototype {
                                vector: r.to_vec(),
                                support,
                                exemplar_id,
                            })
                            .ok_or_else(|| mismatch("prototype count"))
                    })
                    .collect::<Result<_>>()?;
            }
        }
        if rows.next().is_some() || per_set.next().is_some() {
            return Err(mismatch("prototype count"));
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct PrototypeSidecar {
    model: PrototypeModel,
    /// (exemplar id, support) per set, in label then polarity order.
    prototypes: Vec<Vec<(String, usize)>>,
    checksum: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

impl std::fmt::Display for Polarity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetReport {
    pub label: String,
    pub polarity: Polarity,
    pub prototypes: usize,
    pub training_size: usize,
    /// prototypes / training_size
    pub ratio: f64,
    /// Up to [`REPORT_TOP`] (exemplar id, support) pairs, largest support first.
    pub top_exemplars: Vec<(String, usize)>,
    /// Prototype at the highest data density of the set.
    pub peak_exemplar: String,
    pub peak_density: f64,
}

pub const REPORT_TOP: usize = 5;

pub fn prototype_report(model: &PrototypeModel) -> Vec<SetReport> {
    model
        .sets()
        .map(|(label, polarity, set)| {
            let mut top: Vec<(String, usize)> = set
                .prototypes
                .iter()
                .map(|p| (p.exemplar_id.clone(), p.support))
                .collect();
            top.sort_by_key(|t| std::cmp::Reverse(t.1));
            top.truncate(REPORT_TOP);
            let (peak, peak_density) = set
                .prototypes
                .iter()
                .map(|p| (p, set.density(&p.vector)))
                .fold(None, |best: Option<(&Prototype, f64)>, (p, d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((p, d)),
                })
                .expect("fitted sets hold at least one prototype");
            SetReport {
                label: label.to_owned(),
                polarity,
                prototypes: set.len(),
                training_size: set.count,
                ratio: set.len() as f64 / set.count as f64,
                top_exemplars: top,
                peak_exemplar: peak.exemplar_id.clone(),
                peak_density,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_cases() {
        let n = unit_normalize(&[3.0, 4.0]);
        assert_eq!(n.vector, vec![0.6, 0.8]);
        assert!(!n.was_zero);
        let u = [0.6f32, 0.8];
        let again = unit_normalize(&u);
        assert!(again.vector.iter().zip(u).all(|(a, b)| (a - b).abs() < 1e-7));
        let z = unit_normalize(&[0.0, 0.0, 0.0]);
        assert!(z.was_zero);
        assert_eq!(z.vector, vec![0.0; 3]);
    }

    #[test]
    fn single_sample_is_its_own_prototype() {
        let set = fit_set(&[("a", vec![0.6f32, 0.8])]).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.prototypes[0].vector, vec![0.6, 0.8]);
        assert_eq!(set.prototypes[0].support, 1);
        assert_eq!(set.prototypes[0].exemplar_id, "a");
    }

    #[test]
    fn identical_samples_share_one_prototype() {
        let samples: Vec<(String, Vec<f32>)> =
            (0..50).map(|i| (format!("s{i}"), vec![0.0, 0.6, 0.8])).collect();
        let set = fit_set(&samples).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.prototypes[0].support, 50);
        let r = prototype_report(&PrototypeModel {
            task: Task::MamiA,
            dim: 3,
            labels: vec![LabelModel {
                label: "misogynous".into(),
                positive: Some(set.clone()),
                negative: Some(set),
            }],
        });
        assert_eq!(r.len(), 2);
        assert!((r[0].ratio - 1.0 / 50.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_unit_input() {
        assert!(matches!(fit_set(&[("a", vec![3.0f32, 4.0])]), Err(Error::Argument(_))));
        let empty: [(&str, Vec<f32>); 0] = [];
        assert!(fit_set(&empty).is_err());
    }

    fn two_point_model() -> PrototypeModel {
        let set = |id: &str, v: Vec<f32>| PrototypeSet {
            prototypes: vec![Prototype {
                vector: v,
                support: 1,
                exemplar_id: id.into(),
            }],
            count: 1,
            mean: vec![],
            mean_sq_norm: 1.0,
        };
        PrototypeModel {
            task: Task::Hateful,
            dim: 2,
            labels: vec![LabelModel {
                label: "hateful".into(),
                positive: Some(set("p", vec![1.0, 0.0])),
                negative: Some(set("n", vec![-1.0, 0.0])),
            }],
        }
    }

    #[test]
    fn antipodal_prototypes() {
        let d = two_point_model().classify(&[1.0, 0.0]).unwrap();
        let l = &d.labels[0];
        assert_eq!(l.value, Some(1));
        assert_eq!(l.lambda_pos, 1.0);
        assert!((l.lambda_neg - (-4.0f64).exp()).abs() < 1e-15);
        assert_eq!(l.winning_prototype.as_deref(), Some("p"));

        // equidistant query ties and resolves to 0
        let d = two_point_model().classify(&[0.0, 1.0]).unwrap();
        assert_eq!(d.labels[0].value, Some(0));
        assert_eq!(d.labels[0].winning_prototype.as_deref(), Some("n"));
    }

    #[test]
    fn untrainable_label_abstains() {
        let mut m = two_point_model();
        m.labels[0].positive = None;
        let d = m.classify(&[1.0, 0.0]).unwrap();
        assert_eq!(d.labels[0].value, None);
        assert_eq!(d.values(), vec![0]);
        assert!(matches!(m.classify(&[1.0]), Err(Error::Shape(_))));
    }
}

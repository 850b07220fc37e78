use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub const MAMI_B_LABELS: [&str; 5] = [
    "misogynous",
    "shaming",
    "stereotype",
    "objectification",
    "violence",
];

/// Classification task. `Synthetic(n)` carries `n` generated labels
/// named `label_0 .. label_{n-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    MamiA,
    MamiB,
    Hateful,
    Synthetic(usize),
}

impl Task {
    pub fn labels(&self) -> Vec<String> {
        match self {
            Task::MamiA => vec!["misogynous".into()],
            Task::MamiB => MAMI_B_LABELS.iter().map(|s| s.to_string()).collect(),
            Task::Hateful => vec!["hateful".into()],
            Task::Synthetic(n) => (0..*n).map(|i| format!("label_{i}")).collect(),
        }
    }

    pub fn label_count(&self) -> usize {
        match self {
            Task::MamiB => MAMI_B_LABELS.len(),
            Task::Synthetic(n) => *n,
            _ => 1,
        }
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels().iter().position(|l| l == label)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::MamiA => f.write_str("mami_a"),
            Task::MamiB => f.write_str("mami_b"),
            Task::Hateful => f.write_str("hateful"),
            Task::Synthetic(n) => write!(f, "synthetic-{n}"),
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mami_a" => Ok(Task::MamiA),
            "mami_b" => Ok(Task::MamiB),
            "hateful" => Ok(Task::Hateful),
            other => other
                .strip_prefix("synthetic-")
                .and_then(|n| n.parse().ok())
                .filter(|&n| n >= 1)
                .map(Task::Synthetic)
                .ok_or_else(|| Error::Argument(format!("unknown task {s:?}"))),
        }
    }
}

impl Serialize for Task {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Task {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One dataset row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemeEntry {
    pub id: String,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub image_path: Option<String>,
    pub labels: BTreeMap<String, u8>,
}

impl MemeEntry {
    pub fn label(&self, name: &str) -> Option<u8> {
        self.labels.get(name).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub task: Task,
    pub split: Split,
    pub entries: Vec<MemeEntry>,
}

impl Manifest {
    pub fn new(task: Task, split: Split, entries: Vec<MemeEntry>) -> Self {
        Self {
            task,
            split,
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.id.as_str()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&MemeEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Errors on the first violated invariant; use [`validate_manifest`]
    /// for a complete report.
    pub fn check(&self) -> Result<()> {
        let report = validate_manifest(self, None);
        if report.is_ok() {
            Ok(())
        } else {
            Err(Error::Integrity(format!(
                "{} {} manifest: {}",
                self.task,
                self.split,
                report.problems().join("; ")
            )))
        }
    }

    /// Row-major `len x label_count` 0/1 targets in task label order.
    /// Missing keys are an error, never an implicit 0.
    pub fn targets(&self) -> Result<Vec<u8>> {
        let labels = self.task.labels();
        let mut out = Vec::with_capacity(self.len() * labels.len());
        for e in &self.entries {
            for l in &labels {
                match e.label(l) {
                    Some(v @ (0 | 1)) => out.push(v),
                    Some(v) => {
                        return Err(Error::Integrity(format!(
                            "meme {:?}: label {l:?} has value {v}, expected 0 or 1",
                            e.id
                        )))
                    }
                    None => {
                        return Err(Error::Integrity(format!(
                            "meme {:?} is missing label {l:?}",
                            e.id
                        )))
                    }
                }
            }
        }
        Ok(out)
    }
}

pub fn read_manifest(path: &Path, task: Task, split: Split) -> Result<Manifest> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: MemeEntry = serde_json::from_str(&line).map_err(|e| {
            Error::Format(format!("{}:{}: {e}", path.display(), n + 1))
        })?;
        entries.push(entry);
    }
    Ok(Manifest::new(task, split, entries))
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let mut buf = Vec::new();
    for e in &manifest.entries {
        serde_json::to_writer(&mut buf, e)?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Expected split statistics: total rows and positives per label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatTable {
    pub total: usize,
    pub positives: Vec<(String, usize)>,
}

impl StatTable {
    fn from_counts(total: usize, counts: [usize; 5]) -> Self {
        Self {
            total,
            positives: MAMI_B_LABELS
                .iter()
                .zip(counts)
                .map(|(l, c)| (l.to_string(), c))
                .collect(),
        }
    }
}

impl StatTable {
    /// Published MAMI training split statistics.
    pub fn mami_train() -> Self {
        Self::from_counts(10_000, [5_000, 1_274, 2_810, 2_202, 953])
    }

    /// Published MAMI test split statistics.
    pub fn mami_test() -> Self {
        Self::from_counts(1_000, [500, 146, 350, 348, 153])
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub total: usize,
    pub positives: Vec<(String, usize)>,
    pub duplicate_ids: Vec<String>,
    pub invalid_ids: Vec<String>,
    /// (meme id, label) pairs with no value.
    pub missing_labels: Vec<(String, String)>,
    /// (meme id, label) pairs outside the task vocabulary.
    pub unknown_labels: Vec<(String, String)>,
    /// (meme id, label) pairs whose value is not 0/1.
    pub invalid_values: Vec<(String, String)>,
    pub mismatches: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.problems().is_empty()
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.duplicate_ids.is_empty() {
            out.push(format!("duplicate ids {:?}", self.duplicate_ids));
        }
        if !self.invalid_ids.is_empty() {
            out.push(format!("invalid ids {:?}", self.invalid_ids));
        }
        if !self.missing_labels.is_empty() {
            out.push(format!("missing labels {:?}", self.missing_labels));
        }
        if !self.unknown_labels.is_empty() {
            out.push(format!("unknown labels {:?}", self.unknown_labels));
        }
        if !self.invalid_values.is_empty() {
            out.push(format!("non-binary label values {:?}", self.invalid_values));
        }
        out.extend(self.mismatches.iter().cloned());
        out
    }

    pub fn positives_for(&self, label: &str) -> Option<usize> {
        self.positives
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, c)| *c)
    }
}

pub fn validate_manifest(manifest: &Manifest, expected: Option<&StatTable>) -> ValidationReport {
    let labels = manifest.task.labels();
    let mut report = ValidationReport {
        total: manifest.len(),
        ..Default::default()
    };
    let mut counts = vec![0usize; labels.len()];
    let mut seen = HashSet::new();
    let mut reported_dup = HashSet::new();
    for e in &manifest.entries {
        if e.id.is_empty() || e.id.chars().any(char::is_whitespace) {
            report.invalid_ids.push(e.id.clone());
        }
        if !seen.insert(e.id.as_str()) && reported_dup.insert(e.id.as_str()) {
            report.duplicate_ids.push(e.id.clone());
        }
        for (i, l) in labels.iter().enumerate() {
            match e.label(l) {
                None => report.missing_labels.push((e.id.clone(), l.clone())),
                Some(1) => counts[i] += 1,
                Some(0) => {}
                Some(_) => report.invalid_values.push((e.id.clone(), l.clone())),
            }
        }
        for key in e.labels.keys() {
            if !labels.contains(key) {
                report.unknown_labels.push((e.id.clone(), key.clone()));
            }
        }
    }
    report.positives = labels.into_iter().zip(counts).collect();
    if manifest.is_empty() {
        report.warnings.push("empty split".into());
    }
    if let Some(exp) = expected {
        if exp.total != report.total {
            report.mismatches.push(format!(
                "total: expected {}, found {}",
                exp.total, report.total
            ));
        }
        for (label, want) in &exp.positives {
            if let Some(got) = report.positives_for(label) {
                if got != *want {
                    report
                        .mismatches
                        .push(format!("{label}: expected {want}, found {got}"));
                }
            }
        }
    }
    report
}

/// Deterministically moves `round(len * dev_fraction)` entries to a dev
/// split. Both halves keep the original relative order.
pub fn holdout_split(manifest: &Manifest, dev_fraction: f64, seed: u64) -> (Manifest, Manifest) {
    let n = manifest.len();
    let n_dev = ((n as f64) * dev_fraction.clamp(0.0, 1.0)).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let dev_set: HashMap<usize, ()> = order[..n_dev].iter().map(|&i| (i, ())).collect();
    let (mut train, mut dev) = (Vec::new(), Vec::new());
    for (i, e) in manifest.entries.iter().enumerate() {
        if dev_set.contains_key(&i) {
            dev.push(e.clone());
        } else {
            train.push(e.clone());
        }
    }
    (
        Manifest::new(manifest.task, Split::Train, train),
        Manifest::new(manifest.task, Split::Dev, dev),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn entry(id: &str, labels: &[(&str, u8)]) -> MemeEntry {
        MemeEntry {
            id: id.into(),
            text: String::new(),
            image_path: None,
            labels: labels.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    fn mami_manifest(split: Split, total: usize, counts: [usize; 5]) -> Manifest {
        let entries = (0..total)
            .map(|i| {
                let labels: Vec<(&str, u8)> = MAMI_B_LABELS
                    .iter()
                    .zip(counts)
                    .map(|(l, c)| (*l, (i < c) as u8))
                    .collect();
                entry(&format!("m{i}"), &labels)
            })
            .collect();
        Manifest::new(Task::MamiB, split, entries)
    }

    #[test]
    fn mami_train_counts() {
        let m = mami_manifest(Split::Train, 10_000, [5_000, 1_274, 2_810, 2_202, 953]);
        let stats = StatTable::mami_train();
        let r = validate_manifest(&m, Some(&stats));
        assert!(r.is_ok(), "{:?}", r.problems());
        assert_eq!(r.total, 10_000);
        assert_eq!(r.positives_for("misogynous"), Some(5_000));
        assert_eq!(r.positives_for("shaming"), Some(1_274));
        assert_eq!(r.positives_for("stereotype"), Some(2_810));
        assert_eq!(r.positives_for("objectification"), Some(2_202));
        assert_eq!(r.positives_for("violence"), Some(953));
    }

    #[test]
    fn mami_test_counts_and_mismatch() {
        let m = mami_manifest(Split::Test, 1_000, [500, 146, 350, 348, 153]);
        let r = validate_manifest(&m, Some(&StatTable::mami_test()));
        assert!(r.is_ok());
        assert_eq!(r.positives_for("misogynous"), Some(500));
        assert_eq!(r.positives_for("violence"), Some(153));

        let r = validate_manifest(&m, Some(&StatTable::mami_train()));
        assert!(!r.is_ok());
        assert!(r.mismatches.iter().any(|m| m.starts_with("total")));
    }

    #[test]
    fn empty_split_warns() {
        let r = validate_manifest(&Manifest::new(Task::MamiA, Split::Dev, vec![]), None);
        assert_eq!(r.total, 0);
        assert_eq!(r.warnings, vec!["empty split".to_string()]);
    }

    #[test]
    fn findings_are_reported() {
        let m = Manifest::new(
            Task::MamiA,
            Split::Train,
            vec![
                entry("a", &[("misogynous", 1)]),
                entry("a", &[("misogynous", 0)]),
                entry("b c", &[("misogynous", 2)]),
                entry("d", &[("hateful", 1)]),
            ],
        );
        let r = validate_manifest(&m, None);
        assert_eq!(r.duplicate_ids, vec!["a"]);
        assert_eq!(r.invalid_ids, vec!["b c"]);
        assert_eq!(r.invalid_values, vec![("b c".into(), "misogynous".into())]);
        assert_eq!(r.missing_labels, vec![("d".into(), "misogynous".into())]);
        assert_eq!(r.unknown_labels, vec![("d".into(), "hateful".into())]);
        assert!(m.check().is_err());
        assert!(m.targets().is_err());
    }

    #[test]
    fn task_round_trip() {
        for t in [Task::MamiA, Task::MamiB, Task::Hateful, Task::Synthetic(4)] {
            assert_eq!(t.to_string().parse::<Task>().unwrap(), t);
        }
        assert!("synthetic-0".parse::<Task>().is_err());
    }

    #[test]
    fn holdout_is_deterministic_and_partitions() {
        let m = mami_manifest(Split::Train, 50, [10, 0, 0, 0, 0]);
        let (t1, d1) = holdout_split(&m, 0.2, 3);
        let (t2, d2) = holdout_split(&m, 0.2, 3);
        assert_eq!((t1.clone(), d1.clone()), (t2, d2));
        assert_eq!(d1.len(), 10);
        assert_eq!(t1.len() + d1.len(), 50);
    }
}

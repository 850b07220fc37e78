use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, backward, bce_loss, init_head, AdamState, MlpHead};
use crate::error::{Error, Result};
use crate::feature_store::{FeatureMatrix, Manifest};
use crate::metrics;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub threshold: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            lr: 1e-4,
            threshold: 0.5,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    fn check(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Argument("epochs and batch size must be >= 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Argument("threshold must lie in (0, 1)".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Argument("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub dev_macro_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    /// Training-set loss of the freshly initialized head.
    pub initial_loss: f64,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose head was returned, when a dev split drove selection.
    pub best_epoch: Option<usize>,
}

impl History {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }

    pub fn best_dev_macro_f1(&self) -> Option<f64> {
        self.epochs
            .iter()
            .filter_map(|e| e.dev_macro_f1)
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
    }

    /// JSON lines, one record per epoch.
    pub fn to_json_lines(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("history record serializes") + "\n")
            .collect()
    }
}

fn design(features: &FeatureMatrix, manifest: &Manifest) -> Result<(Array2<f32>, Array2<f32>)> {
    let ids = manifest.ids();
    let x = features.gather(&ids)?;
    let x = Array2::from_shape_vec((ids.len(), features.dim()), x).expect("gathered rows");
    let labels = manifest.task.label_count();
    let y = manifest.targets()?.into_iter().map(f32::from).collect();
    let y = Array2::from_shape_vec((ids.len(), labels), y).expect("target rows");
    Ok((x, y))
}

/// Mean per-label two-class macro F1 of `head` on `x`.
fn dev_score(head: &MlpHead<f32>, x: &Array2<f32>, y: &Array2<f32>, threshold: f32) -> Result<f64> {
    let pred = head.predict_batch(x.view(), threshold)?;
    let truth = y.mapv(|v| v as u8);
    metrics::mean_label_macro_f1(truth.view(), pred.view())
}

/// Minibatch Adam training of a fresh head on the `train` manifest.
///
/// When `dev` is given, the returned head is the one from the epoch with
/// the best dev score (earliest on ties); otherwise the final head.
pub fn train(
    features: &FeatureMatrix,
    train_set: &Manifest,
    dev: Option<&Manifest>,
    cfg: &TrainConfig,
) -> Result<(MlpHead<f32>, History)> {
    cfg.check()?;
    if train_set.is_empty() {
        return Err(Error::Argument("training manifest is empty".into()));
    }
    let (x, y) = design(features, train_set)?;
    let dev_data = match dev {
        Some(d) if !d.is_empty() => {
            if d.task != train_set.task {
                return Err(Error::Argument("dev split belongs to another task".into()));
            }
            Some(design(features, d)?)
        }
        _ => None,
    };
    let threshold = cfg.threshold as f32;

    let mut head: MlpHead<f32> = init_head(features.dim(), train_set.task.label_count(), cfg.seed)?;
    let mut adam = AdamState::new(&head, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    let mut history = History {
        initial_loss: bce_loss(head.forward(x.view())?.probs.view(), y.view())? as f64,
        ..Default::default()
    };
    let mut best: Option<(f64, MlpHead<f32>)> = None;
    let mut order: Vec<usize> = (0..x.nrows()).collect();

    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = x.select(Axis(0), chunk);
            let yb = y.select(Axis(0), chunk);
            let trace = head.forward(xb.view())?;
            loss_sum += bce_loss(trace.probs.view(), yb.view())? as f64 * chunk.len() as f64;
            let grads = backward(&head, &trace, xb.view(), yb.view())?;
            adam_step(&mut head, &mut adam, &grads)?;
        }
        let dev_macro_f1 = match &dev_data {
            Some((dx, dy)) => Some(dev_score(&head, dx, dy, threshold)?),
            None => None,
        };
        if let Some(score) = dev_macro_f1 {
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, head.clone()));
                history.best_epoch = Some(epoch);
            }
        }
        history.epochs.push(EpochRecord {
            epoch,
            loss: loss_sum / x.nrows() as f64,
            dev_macro_f1,
        });
    }
    if !head.is_finite() {
        return Err(Error::Argument("training diverged to non-finite weights".into()));
    }
    Ok((best.map_or(head, |(_, h)| h), history))
}

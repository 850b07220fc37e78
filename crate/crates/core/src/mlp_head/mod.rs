//! Trainable classification head: three dense ReLU layers (512, 256, 128)
//! and a sigmoid prediction layer over frozen encoder features.
//!
//! The head is generic over the float type. Training and checkpoints use
//! `f32`; gradient checks run the same code in `f64`.

mod adam;
mod checkpoint;
mod grad;
mod train;

use std::fmt::Debug;

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use grad::{backward, bce_loss, Gradients, PROB_CLAMP};
pub use train::{train, EpochRecord, History, TrainConfig};

/// Widths of L1, L2 and L3.
pub const HIDDEN_DIMS: [usize; 3] = [512, 256, 128];
/// Width of the L3 output used for retrieval.
pub const EMBED_DIM: usize = HIDDEN_DIMS[2];

pub trait Scalar:
    LinalgScalar + Float + FromPrimitive + ScalarOperand + Debug + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Dense layer computing `x . w + b`; `w` is `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub w: Array2<T>,
    pub b: Array1<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array1::zeros(fan_out),
        }
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.w.nrows(), self.w.ncols())
    }

    fn apply(&self, x: &ArrayView2<T>) -> Array2<T> {
        x.dot(&self.w) + &self.b
    }

    fn is_finite(&self) -> bool {
        self.w.iter().chain(self.b.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpHead<T = f32> {
    input_dim: usize,
    label_count: usize,
    /// L1, L2, L3, prediction.
    pub(crate) layers: [Layer<T>; 4],
}

/// Activations of one forward pass, one row per batch row.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    pub h1: Array2<T>,
    pub h2: Array2<T>,
    pub h3: Array2<T>,
    pub probs: Array2<T>,
}

pub(crate) fn layer_dims(input_dim: usize, hidden: [usize; 3], label_count: usize) -> [(usize, usize); 4] {
    [
        (input_dim, hidden[0]),
        (hidden[0], hidden[1]),
        (hidden[1], hidden[2]),
        (hidden[2], label_count),
    ]
}

/// Head with the standard 512/256/128 stack, uniform He-style weights in
/// `+-sqrt(6 / fan_in)` and zero biases.
pub fn init_head<T: Scalar>(input_dim: usize, label_count: usize, seed: u64) -> Result<MlpHead<T>> {
    MlpHead::init_with_hidden(input_dim, HIDDEN_DIMS, label_count, seed)
}

impl<T: Scalar> MlpHead<T> {
    /// Same initialization as [`init_head`] with custom hidden widths.
    /// Non-standard widths cannot be checkpointed.
    pub fn init_with_hidden(
        input_dim: usize,
        hidden: [usize; 3],
        label_count: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut head = Self::zeros_with_hidden(input_dim, hidden, label_count)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in head.layers.iter_mut() {
            let bound = (6.0 / layer.w.nrows() as f64).sqrt();
            layer
                .w
                .mapv_inplace(|_| T::from_f64(rng.random_range(-bound..bound)).unwrap());
        }
        Ok(head)
    }

    pub fn zeros(input_dim: usize, label_count: usize) -> Result<Self> {
        Self::zeros_with_hidden(input_dim, HIDDEN_DIMS, label_count)
    }

    pub fn zeros_with_hidden(input_dim: usize, hidden: [usize; 3], label_count: usize) -> Result<Self> {
        if input_dim == 0 || label_count == 0 || hidden.contains(&0) {
            return Err(Error::Argument(format!(
                "head dims must be positive (input {input_dim}, hidden {hidden:?}, labels {label_count})"
            )));
        }
        let layers = layer_dims(input_dim, hidden, label_count).map(|(i, o)| Layer::zeros(i, o));
        Ok(Self {
            input_dim,
            label_count,
            layers,
        })
    }

    /// Builds a head from explicit layers (L1, L2, L3, prediction).
    pub fn from_layers(layers: [Layer<T>; 4]) -> Result<Self> {
        for (i, l) in layers.iter().enumerate() {
            if l.b.len() != l.w.ncols() {
                return Err(Error::Shape(format!("layer {i}: bias does not match weight columns")));
            }
            if i > 0 && layers[i - 1].w.ncols() != l.w.nrows() {
                return Err(Error::Shape(format!("layer {i}: input width does not chain")));
            }
            if l.w.is_empty() {
                return Err(Error::Argument(format!("layer {i} is empty")));
            }
        }
        if !layers.iter().all(Layer::is_finite) {
            return Err(Error::Argument("non-finite parameter".into()));
        }
        Ok(Self {
            input_dim: layers[0].w.nrows(),
            label_count: layers[3].w.ncols(),
            layers,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn label_count(&self) -> usize {
        self.label_count
    }

    pub fn hidden_dims(&self) -> [usize; 3] {
        [
            self.layers[0].w.ncols(),
            self.layers[1].w.ncols(),
            self.layers[2].w.ncols(),
        ]
    }

    pub fn layers(&self) -> &[Layer<T>; 4] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>; 4] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Layer::is_finite)
    }

    pub(crate) fn zeros_like_layers(&self) -> [Layer<T>; 4] {
        [
            self.layers[0].zeros_like(),
            self.layers[1].zeros_like(),
            self.layers[2].zeros_like(),
            self.layers[3].zeros_like(),
        ]
    }

    fn check_width(&self, width: usize) -> Result<()> {
        if width != self.input_dim {
            return Err(Error::Shape(format!(
                "input width {width} does not match head input dim {}",
                self.input_dim
            )));
        }
        Ok(())
    }

    pub fn forward(&self, batch: ArrayView2<T>) -> Result<ForwardTrace<T>> {
        self.check_width(batch.ncols())?;
        let relu = |v: T| if v > T::zero() { v } else { T::zero() };
        let h1 = self.layers[0].apply(&batch).mapv_into(relu);
        let h2 = self.layers[1].apply(&h1.view()).mapv_into(relu);
        let h3 = self.layers[2].apply(&h2.view()).mapv_into(relu);
        let probs = self.layers[3].apply(&h3.view()).mapv_into(sigmoid);
        Ok(ForwardTrace { h1, h2, h3, probs })
    }

    /// L3 activations for a batch.
    pub fn embed_batch(&self, batch: ArrayView2<T>) -> Result<Array2<T>> {
        Ok(self.forward(batch)?.h3)
    }

    /// L3 activation (length 128 for a standard head) for one input.
    pub fn embed(&self, x: &[T]) -> Result<Vec<T>> {
        let row = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        Ok(self.embed_batch(row)?.into_raw_vec_and_offset().0)
    }

    /// Per-label 0/1 decisions (`prob >= threshold`) and the probabilities.
    pub fn predict(&self, x: &[T], threshold: T) -> Result<(Vec<u8>, Vec<T>)> {
        let row = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        let probs = self.forward(row)?.probs.into_raw_vec_and_offset().0;
        Ok((threshold_labels(&probs, threshold), probs))
    }

    /// Predicted 0/1 labels for every row, row-major.
    pub fn predict_batch(&self, batch: ArrayView2<T>, threshold: T) -> Result<Array2<u8>> {
        let probs = self.forward(batch)?.probs;
        Ok(probs.mapv(|p| (p >= threshold) as u8))
    }

    /// Converts every parameter to another float type.
    pub fn cast<U: Scalar>(&self) -> MlpHead<U> {
        let conv = |l: &Layer<T>| Layer {
            w: l.w.mapv(|v| U::from(v).unwrap()),
            b: l.b.mapv(|v| U::from(v).unwrap()),
        };
        MlpHead {
            input_dim: self.input_dim,
            label_count: self.label_count,
            layers: [
                conv(&self.layers[0]),
                conv(&self.layers[1]),
                conv(&self.layers[2]),
                conv(&self.layers[3]),
            ],
        }
    }
}

pub fn threshold_labels<T: Scalar>(probs: &[T], threshold: T) -> Vec<u8> {
    probs.iter().map(|&p| (p >= threshold) as u8).collect()
}

pub(crate) fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Sum over rows, used for bias gradients.
pub(crate) fn column_sums<T: Scalar>(a: &Array2<T>) -> Array1<T> {
    a.sum_axis(Axis(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn init_is_deterministic() {
        let a: MlpHead<f32> = init_head(512, 1, 7).unwrap();
        let b: MlpHead<f32> = init_head(512, 1, 7).unwrap();
        assert_eq!(a, b);
        let c: MlpHead<f32> = init_head(512, 1, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_shapes_follow_layer_table() {
        let h: MlpHead<f32> = init_head(1280, 5, 1).unwrap();
        assert_eq!(h.layers[0].w.dim(), (1280, 512));
        assert_eq!(h.layers[1].w.dim(), (512, 256));
        assert_eq!(h.layers[2].w.dim(), (256, 128));
        assert_eq!(h.layers[3].w.dim(), (128, 5));
        assert!(h.layers.iter().all(|l| l.b.iter().all(|&b| b == 0.0)));
        let bound = (6.0f32 / 1280.0).sqrt();
        assert!(h.layers[0].w.iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn init_rejects_zero_dims() {
        assert!(init_head::<f32>(0, 1, 1).is_err());
        assert!(init_head::<f32>(4, 0, 1).is_err());
    }

    #[test]
    fn zero_head_outputs_half() {
        let h = MlpHead::<f32>::zeros(6, 3).unwrap();
        let (labels, probs) = h.predict(&[1.0, -2.0, 3.0, 0.5, 0.0, 9.0], 0.5).unwrap();
        assert_eq!(probs, vec![0.5; 3]);
        assert_eq!(labels, vec![1; 3]);
        let (labels, _) = h.predict(&[0.0; 6], 1.0 - 1e-7).unwrap();
        assert_eq!(labels, vec![0; 3]);
        assert_eq!(h.embed(&[1.0; 6]).unwrap(), vec![0.0; 128]);
    }

    #[test]
    fn unit_chain_hand_value() {
        let one = || Layer {
            w: array![[1.0f64]],
            b: array![0.0],
        };
        let h = MlpHead::from_layers([one(), one(), one(), one()]).unwrap();
        let (_, p) = h.predict(&[2.0], 0.5).unwrap();
        assert!((p[0] - 0.880_797_077_977_882_3).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let h = MlpHead::<f32>::zeros(4, 1).unwrap();
        assert!(matches!(h.predict(&[1.0; 3], 0.5), Err(Error::Shape(_))));
        assert!(matches!(h.embed(&[1.0; 5]), Err(Error::Shape(_))));
    }

    #[test]
    fn embed_matches_trace() {
        let h: MlpHead<f32> = init_head(10, 2, 3).unwrap();
        let x: Vec<f32> = (0..10).map(|i| (i as f32 - 4.5) / 3.0).collect();
        let trace = h.forward(ArrayView2::from_shape((1, 10), &x).unwrap()).unwrap();
        let e = h.embed(&x).unwrap();
        assert_eq!(e.len(), EMBED_DIM);
        assert!(e.iter().zip(trace.h3.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(trace.h1.iter().chain(trace.h2.iter()).chain(trace.h3.iter()).all(|&v| v >= 0.0));
        let (_, p) = h.predict(&x, 0.5).unwrap();
        assert!(p.iter().zip(trace.probs.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert_eq!(sigmoid(0.0f32), 0.5);
    }
}

use ndarray::{Array2, ArrayView2, Zip};

use super::{column_sums, Layer, MlpHead, Scalar};
use crate::error::{Error, Result};
use super::ForwardTrace;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the loss.
pub const PROB_CLAMP: f64 = 1e-7;

/// Parameter gradients, shaped like the head's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: [Layer<T>; 4],
}

impl<T: Scalar> Gradients<T> {
    pub fn max_abs(&self) -> T {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()))
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

fn check_same_shape<T>(a: &ArrayView2<T>, b: &ArrayView2<T>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Mean binary cross-entropy over every (row, label) cell.
pub fn bce_loss<T: Scalar>(probs: ArrayView2<T>, targets: ArrayView2<T>) -> Result<T> {
    check_same_shape(&probs, &targets, "probs/targets")?;
    if probs.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    let lo = T::from_f64(PROB_CLAMP).unwrap();
    let hi = T::one() - lo;
    let mut total = T::zero();
    Zip::from(&probs).and(&targets).for_each(|&p, &t| {
        let p = p.max(lo).min(hi);
        total = total - (t * p.ln() + (T::one() - t) * (T::one() - p).ln());
    });
    Ok(total / T::from_usize(probs.len()).unwrap())
}

/// Analytic gradients of [`bce_loss`] through the sigmoid and ReLU stack.
///
/// The output-layer error is `(p - t) / (rows * labels)`, the exact
/// derivative wherever the probability clamp is inactive. ReLU
/// derivatives use the post-activation mask, so the subgradient at 0 is 0.
pub fn backward<T: Scalar>(
    head: &MlpHead<T>,
    trace: &ForwardTrace<T>,
    batch: ArrayView2<T>,
    targets: ArrayView2<T>,
) -> Result<Gradients<T>> {
    head.check_width(batch.ncols())?;
    check_same_shape(&trace.probs.view(), &targets, "probs/targets")?;
    if trace.h1.nrows() != batch.nrows() {
        return Err(Error::Shape("trace was computed on a different batch".into()));
    }
    let scale = T::one() / T::from_usize(targets.len()).unwrap();
    let dz4 = (&trace.probs - &targets) * scale;

    let back = |dz: &Array2<T>, input: ArrayView2<T>| Layer {
        w: input.t().dot(dz),
        b: column_sums(dz),
    };
    let relu_mask = |mut d: Array2<T>, h: &Array2<T>| {
        Zip::from(&mut d).and(h).for_each(|d, &h| {
            if h <= T::zero() {
                *d = T::zero();
            }
        });
        d
    };

    let g4 = back(&dz4, trace.h3.view());
    let dz3 = relu_mask(dz4.dot(&head.layers[3].w.t()), &trace.h3);
    let g3 = back(&dz3, trace.h2.view());
    let dz2 = relu_mask(dz3.dot(&head.layers[2].w.t()), &trace.h2);
    let g2 = back(&dz2, trace.h1.view());
    let dz1 = relu_mask(dz2.dot(&head.layers[1].w.t()), &trace.h1);
    let g1 = back(&dz1, batch);
    Ok(Gradients {
        layers: [g1, g2, g3, g4],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp_head::init_head;
    use ndarray::array;

    #[test]
    fn loss_hand_values() {
        let l = bce_loss(array![[0.5f64]].view(), array![[1.0]].view()).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);

        let l = bce_loss(array![[0.9f64], [0.1]].view(), array![[1.0], [0.0]].view()).unwrap();
        assert!((l - 0.105_360_515_657_826_3).abs() < 1e-12);

        let l = bce_loss(array![[1.0f64, 0.0]].view(), array![[1.0, 0.0]].view()).unwrap();
        assert!(l <= 1e-6);
        let l = bce_loss(array![[1.0f32, 0.0]].view(), array![[1.0, 0.0]].view()).unwrap();
        assert!(l <= 1e-6);
    }

    #[test]
    fn loss_shape_mismatch() {
        let r = bce_loss(array![[0.5f64, 0.5]].view(), array![[1.0]].view());
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn zero_input_kills_first_layer_weight_gradient() {
        let head: MlpHead<f64> = MlpHead::init_with_hidden(5, [6, 5, 4], 2, 9).unwrap();
        let mut head = head;
        for l in head.layers.iter_mut() {
            l.b.fill(0.1);
        }
        let x = Array2::<f64>::zeros((3, 5));
        let t = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let trace = head.forward(x.view()).unwrap();
        let g = backward(&head, &trace, x.view(), t.view()).unwrap();
        assert!(g.layers[0].w.iter().all(|&v| v == 0.0));
        assert!(g.layers[3].b.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn duplicated_batch_keeps_mean_gradient() {
        let head: MlpHead<f64> = init_head(4, 2, 5).unwrap();
        let x = array![[0.3, -1.0, 2.0, 0.5], [1.0, 0.2, -0.7, 0.0]];
        let t = array![[1.0, 0.0], [0.0, 1.0]];
        let x2 = ndarray::concatenate![ndarray::Axis(0), x, x];
        let t2 = ndarray::concatenate![ndarray::Axis(0), t, t];
        let g1 = backward(&head, &head.forward(x.view()).unwrap(), x.view(), t.view()).unwrap();
        let g2 = backward(&head, &head.forward(x2.view()).unwrap(), x2.view(), t2.view()).unwrap();
        for (a, b) in g1.layers.iter().zip(&g2.layers) {
            for (u, v) in a.w.iter().chain(a.b.iter()).zip(b.w.iter().chain(b.b.iter())) {
                assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()));
            }
        }
    }
}

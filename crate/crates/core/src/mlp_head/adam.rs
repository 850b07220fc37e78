use ndarray::Zip;

use super::{Gradients, Layer, MlpHead, Scalar};
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moments for every head parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: [Layer<T>; 4],
    pub v: [Layer<T>; 4],
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(head: &MlpHead<T>, lr: f64) -> Self {
        Self {
            step: 0,
            m: head.zeros_like_layers(),
            v: head.zeros_like_layers(),
            lr,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step<T: Scalar>(
    head: &mut MlpHead<T>,
    state: &mut AdamState<T>,
    grads: &Gradients<T>,
) -> Result<()> {
    for (i, (p, g)) in head.layers.iter().zip(&grads.layers).enumerate() {
        if p.w.dim() != g.w.dim() || p.b.dim() != g.b.dim() || state.m[i].w.dim() != p.w.dim() {
            return Err(Error::Shape(format!("layer {i}: gradient/state shape mismatch")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c = |x: f64| T::from_f64(x).unwrap();
    let (b1, b2, eps, lr) = (c(state.beta1), c(state.beta2), c(state.eps), c(state.lr));
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    let update = |p: &mut T, m: &mut T, v: &mut T, g: T| {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    };
    for ((p, g), (m, v)) in head
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        Zip::from(&mut p.w)
            .and(&mut m.w)
            .and(&mut v.w)
            .and(&g.w)
            .for_each(|p, m, v, &g| update(p, m, v, g));
        Zip::from(&mut p.b)
            .and(&mut m.b)
            .and(&mut v.b)
            .and(&g.b)
            .for_each(|p, m, v, &g| update(p, m, v, g));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp_head::init_head;

    fn filled_grads(head: &MlpHead<f64>, value: f64) -> Gradients<f64> {
        let mut layers = head.zeros_like_layers();
        for l in layers.iter_mut() {
            l.w.fill(value);
            l.b.fill(value);
        }
        Gradients { layers }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut head: MlpHead<f64> = init_head(8, 2, 1).unwrap();
        let before = head.clone();
        let mut st = AdamState::new(&head, 1e-4);
        let g = filled_grads(&head, 0.0);
        for _ in 0..3 {
            adam_step(&mut head, &mut st, &g).unwrap();
        }
        assert_eq!(head, before);
        assert_eq!(st.step, 3);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [0.37, -2.5, 1e-3] {
            let mut head: MlpHead<f64> = init_head(8, 2, 1).unwrap();
            let before = head.clone();
            let mut st = AdamState::new(&head, 1e-4);
            let grads = filled_grads(&head, g);
            adam_step(&mut head, &mut st, &grads).unwrap();
            for (a, b) in head.layers.iter().zip(&before.layers) {
                for (x, y) in a.w.iter().chain(a.b.iter()).zip(b.w.iter().chain(b.b.iter())) {
                    let delta = x - y;
                    assert_eq!(delta.signum(), -g.signum());
                    assert!(delta.abs() >= 0.99e-4 && delta.abs() <= 1e-4 + 1e-15, "{delta}");
                }
            }
        }
    }
}

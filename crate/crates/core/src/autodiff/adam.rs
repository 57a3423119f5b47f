use std::collections::BTreeMap;

use super::{Gradients, Parameters};

/// Adam moments and hyperparameters. Moments are keyed by parameter name
/// and created on first use.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState::new(0.0008)
    }
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }
}

/// One bias-corrected Adam update. Parameters without an entry in `grads`
/// are left untouched.
pub fn adam_step<P: Parameters + ?Sized>(params: &mut P, grads: &Gradients, state: &mut AdamState) {
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    let (lr, b1, b2, eps) = (state.lr, state.beta1, state.beta2, state.epsilon);
    let moments = &mut state.moments;

    params.visit_mut(&mut |name, p| {
        let Some(g) = grads.get(name) else { return };
        let (m, v) = moments
            .entry(name.to_string())
            .or_insert_with(|| (vec![0.0; p.len()], vec![0.0; p.len()]));
        for (((w, gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *w -= lr * mhat / (vhat.sqrt() + eps);
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{NamedTensors, Tensor};

    fn single(w: f64) -> NamedTensors {
        let mut p = NamedTensors::default();
        p.insert("w", Tensor::from_vec(vec![w]));
        p
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = single(1.25);
        let mut s = AdamState::default();
        let mut g = Gradients::new();
        g.insert("w".into(), vec![0.0]);
        for _ in 0..10 {
            adam_step(&mut p, &g, &mut s);
        }
        assert_eq!(p.get("w").unwrap().data(), &[1.25]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g0 in [3.0, -0.02] {
            let mut p = single(0.0);
            let mut s = AdamState::default();
            let mut g = Gradients::new();
            g.insert("w".into(), vec![g0]);
            adam_step(&mut p, &g, &mut s);
            let dw = p.get("w").unwrap().data()[0];
            let expected = -0.0008 * f64::signum(g0);
            assert!((dw - expected).abs() < 1e-9, "{dw} vs {expected}");
        }
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = single(0.0);
        let mut s = AdamState::new(0.01);
        for _ in 0..2000 {
            let w = p.get("w").unwrap().data()[0];
            let mut g = Gradients::new();
            g.insert("w".into(), vec![2.0 * (w - 2.0)]);
            adam_step(&mut p, &g, &mut s);
        }
        let w = p.get("w").unwrap().data()[0];
        assert!((w - 2.0).abs() < 1e-2, "w = {w}");
    }
}

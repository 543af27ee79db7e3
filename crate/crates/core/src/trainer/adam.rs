use serde::{Deserialize, Serialize};

use crate::autograd::{Gradients, ParamStore};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction and a constant learning rate. Frozen
/// parameters and parameters without a gradient are left untouched.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    lr: f64,
    t: i32,
    m: Vec<Option<Matrix>>,
    v: Vec<Option<Matrix>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, lr: f64, store: &ParamStore) -> Self {
        Self {
            cfg,
            lr,
            t: 0,
            m: vec![None; store.len()],
            v: vec![None; store.len()],
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (id, g) in grads.iter() {
            if store.is_frozen(id) {
                continue;
            }
            let i = id.index();
            let (rows, cols) = g.shape();
            let m = self.m[i].get_or_insert_with(|| Matrix::zeros(rows, cols));
            let v = self.v[i].get_or_insert_with(|| Matrix::zeros(rows, cols));
            let p = store.get_mut(id);
            for (((pk, &gk), mk), vk) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mk = beta1 * *mk + (1.0 - beta1) * gk;
                *vk = beta2 * *vk + (1.0 - beta2) * gk * gk;
                let mhat = *mk / c1;
                let vhat = *vk / c2;
                *pk -= self.lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        let id = store.insert("w", Matrix::from_vec(1, 2, vec![1.0, -2.0]));
        let mut adam = Adam::new(AdamConfig::default(), 0.1, &store);
        let grads = {
            let mut tape = Tape::new(&store);
            let w = tape.param(id);
            let sq = tape.mul(w, w);
            let s = tape.sum(sq);
            tape.backward(s)
        };
        adam.step(&mut store, &grads);
        let p = store.get(id).data();
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut store = ParamStore::new();
        let id = store.insert_frozen("w", Matrix::from_vec(1, 1, vec![1.0]));
        let mut adam = Adam::new(AdamConfig::default(), 0.1, &store);
        let grads = {
            let mut tape = Tape::new(&store);
            let w = tape.param(id);
            let s = tape.sum(w);
            tape.backward(s)
        };
        adam.step(&mut store, &grads);
        assert_eq!(store.get(id).data(), &[1.0]);
    }
}

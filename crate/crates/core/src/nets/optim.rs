use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParameterStore};

pub trait Optimizer {
    /// Descends along `grads`.
    fn step(&mut self, store: &mut ParameterStore, grads: &Gradients);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub lr: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, store: &mut ParameterStore, grads: &Gradients) {
        for (p, g) in store.data_mut().iter_mut().zip(&grads.0) {
            *p -= self.lr * g;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, store: &mut ParameterStore, grads: &Gradients) {
        let n = store.len();
        if self.m.len() != n {
            self.m = vec![0.0; n];
            self.v = vec![0.0; n];
            self.t = 0;
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in store.data_mut().iter_mut().enumerate() {
            let g = grads.0[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            *p -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Rescales `grads` to at most `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::Matrix;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut store = ParameterStore::new();
        store.add("x", Matrix::row_vector(vec![3.0, -2.0])).unwrap();
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            let g = Gradients(store.data().iter().map(|x| 2.0 * x).collect());
            opt.step(&mut store, &g);
        }
        assert!(store.data().iter().all(|x| x.abs() < 1e-2));
    }

    #[test]
    fn clipping() {
        let mut g = Gradients(vec![3.0, 4.0]);
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g.norm() - 1.0).abs() < 1e-12);
        let mut small = Gradients(vec![0.1]);
        clip_grad_norm(&mut small, 1.0);
        assert_eq!(small.0, vec![0.1]);
    }

    #[test]
    fn sgd_step() {
        let mut store = ParameterStore::new();
        store.add("x", Matrix::row_vector(vec![1.0])).unwrap();
        Sgd { lr: 0.5 }.step(&mut store, &Gradients(vec![2.0]));
        assert_eq!(store.data(), &[0.0]);
    }
}

use std::collections::BTreeMap;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> impl Iterator<Item = (&str, &Tensor, &Tensor)> {
        self.m
            .iter()
            .filter_map(|(k, m)| self.v.get(k).map(|v| (k.as_str(), m, v)))
    }

    /// Restores optimizer state saved from [`Adam::moments`].
    pub fn restore(&mut self, step: u64, moments: Vec<(String, Tensor, Tensor)>) {
        self.step = step;
        self.m.clear();
        self.v.clear();
        for (k, m, v) in moments {
            self.m.insert(k.clone(), m);
            self.v.insert(k, v);
        }
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "adam",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            for (((pi, gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mh = *mi / bc1;
                let vh = *vi / bc2;
                *pi -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::new(vec![2], vec![3.0, -2.0]).unwrap());
        let mut adam = Adam::new(0.1);
        for _ in 0..500 {
            let x = store.get("x").unwrap().clone();
            let grads = BTreeMap::from([("x".to_string(), x.map(|v| 2.0 * v))]);
            adam.update(&mut store, &grads).unwrap();
        }
        assert!(store.get("x").unwrap().data().iter().all(|v| v.abs() < 1e-2));
        assert_eq!(adam.step_count(), 500);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::scalar(1.0));
        let mut adam = Adam::new(1e-4);
        let grads = BTreeMap::from([("x".to_string(), Tensor::scalar(5.0))]);
        adam.update(&mut store, &grads).unwrap();
        assert!((store.get("x").unwrap().data()[0] - (1.0 - 1e-4)).abs() < 1e-10);
    }
}

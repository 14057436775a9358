use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Named parameter tensors, ordered by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerParams {
    tensors: BTreeMap<String, Tensor>,
}

impl LayerParams {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter `{name}`"
            )));
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    /// Like [`get`](Self::get) but reports the missing name.
    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    /// `self[name] += scale * other[name]` for every shared name.
    pub fn add_scaled(&mut self, other: &LayerParams, scale: f32) {
        for (name, t) in self.tensors.iter_mut() {
            if let Some(o) = other.tensors.get(name) {
                for (a, &b) in t.data_mut().iter_mut().zip(o.data()) {
                    *a += scale * b;
                }
            }
        }
    }

    pub fn accumulate(&mut self, name: &str, grad: &Tensor) {
        let t = self
            .tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("no parameter `{name}`"));
        for (a, &b) in t.data_mut().iter_mut().zip(grad.data()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f32) {
        for t in self.tensors.values_mut() {
            for v in t.data_mut() {
                *v *= s;
            }
        }
    }
}

/// Plain SGD hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f32,
    pub momentum: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must be in [0,1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument(
                "batch_size and epochs must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Step decay: x0.1 from two thirds of the way through training.
    pub fn lr_at(&self, epoch: usize) -> f32 {
        if self.epochs >= 3 && epoch >= (2 * self.epochs).div_ceil(3) {
            self.lr * 0.1
        } else {
            self.lr
        }
    }
}

/// SGD with heavy-ball momentum: `v <- m*v - lr*g; p <- p + v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    momentum: f32,
    velocity: BTreeMap<String, Vec<f32>>,
}

impl Sgd {
    pub fn new(momentum: f32) -> Self {
        Self {
            momentum,
            velocity: BTreeMap::new(),
        }
    }

    pub fn velocity(&self, name: &str) -> Option<&[f32]> {
        self.velocity.get(name).map(Vec::as_slice)
    }

    /// Applies one update. All gradients are checked before any parameter
    /// moves, so a rejected step leaves `params` untouched.
    pub fn step(&mut self, params: &mut LayerParams, grads: &LayerParams, lr: f32) -> Result<()> {
        for (name, p) in params.iter() {
            let g = grads.require(name)?;
            if g.shape() != p.shape() {
                return Err(Error::shape(
                    "sgd_step",
                    format!(
                        "gradient for `{name}` is {:?}, parameter is {:?}",
                        g.shape(),
                        p.shape()
                    ),
                ));
            }
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient(name.to_string()));
            }
        }
        for (name, p) in params.tensors.iter_mut() {
            let g = &grads.tensors[name];
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; p.len()]);
            for ((pv, vv), &gv) in p.data_mut().iter_mut().zip(v.iter_mut()).zip(g.data()) {
                *vv = self.momentum * *vv - lr * gv;
                *pv += *vv;
            }
        }
        Ok(())
    }
}

/// Normal init with standard deviation `sqrt(2 / fan_in)`.
pub fn kaiming_normal<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| normal.sample(rng) as f32).collect();
    Tensor::new(shape.to_vec(), data).expect("valid shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_params(v: f32) -> LayerParams {
        let mut p = LayerParams::new();
        p.insert("p", Tensor::from_vec(vec![v]).unwrap()).unwrap();
        p
    }

    #[test]
    fn plain_step() {
        let mut p = scalar_params(1.0);
        let g = scalar_params(1.0);
        Sgd::new(0.0).step(&mut p, &g, 0.1).unwrap();
        assert!((p.get("p").unwrap().data()[0] - 0.9).abs() < 1e-7);
    }

    #[test]
    fn zero_gradient_decays_velocity() {
        let mut p = scalar_params(0.0);
        let mut sgd = Sgd::new(0.9);
        sgd.step(&mut p, &scalar_params(1.0), 0.1).unwrap();
        let before = p.get("p").unwrap().data()[0];
        sgd.step(&mut p, &scalar_params(0.0), 0.1).unwrap();
        let v = sgd.velocity("p").unwrap()[0];
        assert!((v - 0.9 * -0.1).abs() < 1e-7);
        assert!((p.get("p").unwrap().data()[0] - (before + v)).abs() < 1e-7);

        // Truly fresh zero gradient: nothing moves.
        let mut q = scalar_params(2.0);
        Sgd::new(0.9)
            .step(&mut q, &scalar_params(0.0), 0.1)
            .unwrap();
        assert_eq!(q.get("p").unwrap().data()[0], 2.0);
    }

    #[test]
    fn momentum_recursion() {
        let mut p = scalar_params(0.0);
        let mut sgd = Sgd::new(0.9);
        sgd.step(&mut p, &scalar_params(1.0), 0.1).unwrap();
        assert!((p.get("p").unwrap().data()[0] + 0.1).abs() < 1e-7);
        sgd.step(&mut p, &scalar_params(1.0), 0.1).unwrap();
        assert!((p.get("p").unwrap().data()[0] + 0.29).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = scalar_params(1.0);
        let err = Sgd::new(0.9)
            .step(&mut p, &scalar_params(f32::NAN), 0.1)
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "p"));
        assert_eq!(p.get("p").unwrap().data()[0], 1.0);
    }

    #[test]
    fn step_decay_schedule() {
        let cfg = SgdConfig {
            lr: 1.0,
            momentum: 0.9,
            batch_size: 1,
            epochs: 9,
            seed: 0,
        };
        assert_eq!(cfg.lr_at(5), 1.0);
        assert!((cfg.lr_at(6) - 0.1).abs() < 1e-7);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = scalar_params(1.0);
        assert!(p.insert("p", Tensor::zeros(&[1])).is_err());
    }
}

//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("Adam eps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable parameter from its `grad`.
    /// Nothing is modified if any trainable gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(Error::Dimension("optimizer state does not match parameter store".into()));
        }
        for p in store.iter().filter(|p| p.trainable) {
            if let Some(i) = p.grad.data().iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of `{}`[{i}]", p.name)));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            let grads = p.grad.data();
            let values = p.value.data_mut();
            for (((w, &g), m), v) in values
                .iter_mut()
                .zip(grads)
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::new(vec![1], vec![w]).unwrap()).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = scalar_store(0.7);
        let mut opt = Adam::new(AdamConfig::default(), &s);
        for _ in 0..10 {
            s.zero_grad();
            opt.step(&mut s).unwrap();
        }
        assert_eq!(s.by_name("w").unwrap().value.data(), &[0.7]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.0, -0.02] {
            let mut s = scalar_store(1.0);
            let mut opt = Adam::new(AdamConfig::default(), &s);
            s.iter_mut().next().unwrap().grad.data_mut()[0] = g;
            opt.step(&mut s).unwrap();
            let moved = s.by_name("w").unwrap().value.data()[0] - 1.0;
            assert!((moved + 1e-4 * f64::signum(g)).abs() < 1e-9, "{moved}");
        }
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut s = scalar_store(1.0);
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut opt = Adam::new(cfg, &s);
        for _ in 0..200 {
            let p = s.iter_mut().next().unwrap();
            p.grad.data_mut()[0] = 2.0 * p.value.data()[0];
            opt.step(&mut s).unwrap();
        }
        assert!(s.by_name("w").unwrap().value.data()[0].abs() < 0.05);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = scalar_store(1.0);
        s.add("bad", Tensor::zeros(&[2])).unwrap();
        let mut opt = Adam::new(AdamConfig::default(), &s);
        s.iter_mut().nth(1).unwrap().grad.data_mut()[1] = f64::NAN;
        let err = opt.step(&mut s).unwrap_err().to_string();
        assert!(err.contains("`bad`"), "{err}");
        assert_eq!(s.by_name("w").unwrap().value.data(), &[1.0]);
    }

    #[test]
    fn frozen_parameters_untouched() {
        let mut s = scalar_store(1.0);
        s.set_trainable(|_| false);
        let mut opt = Adam::new(AdamConfig::default(), &s);
        s.iter_mut().next().unwrap().grad.data_mut()[0] = 1.0;
        opt.step(&mut s).unwrap();
        assert_eq!(s.by_name("w").unwrap().value.data(), &[1.0]);
    }
}

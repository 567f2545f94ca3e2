use super::{ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub learning_rate: Scalar,
    pub momentum: Scalar,
    pub weight_decay: Scalar,
    pub lr_halving_period_iters: usize,
    pub minibatch: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 1e-3,
            momentum: 0.99,
            weight_decay: 5e-4,
            lr_halving_period_iters: 5000,
            minibatch: 1,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.weight_decay >= 0.0
            && (0.0..1.0).contains(&self.momentum)
            && self.minibatch >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid SGD configuration {self:?}")))
        }
    }

    /// Step-decayed rate: halved once per completed period.
    pub fn learning_rate_at(&self, iteration: usize) -> Scalar {
        if self.lr_halving_period_iters == 0 {
            return self.learning_rate;
        }
        let halvings = (iteration / self.lr_halving_period_iters) as i32;
        self.learning_rate * 0.5f64.powi(halvings)
    }
}

/// Momentum SGD with L2 weight decay. Velocity buffers are keyed by parameter index.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub config: SgdConfig,
    velocity: Vec<Option<Tensor>>,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Result<Self> {
        config.validate()?;
        Ok(Sgd {
            config,
            velocity: Vec::new(),
        })
    }

    /// `v <- m v - lr_t (g + wd p)`, `p <- p + v` for every parameter that
    /// received a gradient since the last step; clears gradients afterwards.
    pub fn step(&mut self, store: &mut ParamStore, iteration: usize) -> Result<()> {
        for id in store.ids() {
            if store.is_touched(id) && !store.get(id).grad.all_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of `{}` at iteration {iteration}",
                    store.name(id)
                )));
            }
        }
        let lr = self.config.learning_rate_at(iteration);
        let (m, wd) = (self.config.momentum, self.config.weight_decay);
        if self.velocity.len() < store.len() {
            self.velocity.resize(store.len(), None);
        }
        for id in store.ids() {
            if !store.is_touched(id) {
                continue;
            }
            let p = store.get_mut(id);
            let v = self.velocity[id.0].get_or_insert_with(|| Tensor::zeros(p.value.shape()));
            for ((vi, pi), gi) in v
                .data_mut()
                .iter_mut()
                .zip(p.value.data_mut())
                .zip(p.grad.data())
            {
                *vi = m * *vi - lr * (gi + wd * *pi);
                *pi += *vi;
            }
        }
        store.zero_grads();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halving_schedule() {
        let cfg = SgdConfig {
            learning_rate: 1e-3,
            lr_halving_period_iters: 5000,
            ..Default::default()
        };
        assert_eq!(cfg.learning_rate_at(0), 1e-3);
        assert_eq!(cfg.learning_rate_at(4999), 1e-3);
        assert!((cfg.learning_rate_at(10000) - 2.5e-4).abs() < 1e-18);
    }

    #[test]
    fn plain_step_and_zero_grad() {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap());
        let cfg = SgdConfig {
            learning_rate: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut sgd = Sgd::new(cfg).unwrap();

        store.accumulate_grad(id, &Tensor::zeros(&[2]));
        sgd.step(&mut store, 0).unwrap();
        assert_eq!(store.get(id).value.data(), &[1.0, -2.0]);

        store.accumulate_grad(id, &Tensor::from_vec(&[2], vec![0.5, 1.0]).unwrap());
        sgd.step(&mut store, 1).unwrap();
        assert_eq!(store.get(id).value.data(), &[1.0 - 0.05, -2.0 - 0.1]);
    }

    #[test]
    fn untouched_params_are_left_alone() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::filled(&[1], 1.0));
        let b = store.add("b", Tensor::filled(&[1], 1.0));
        let mut sgd = Sgd::new(SgdConfig::default()).unwrap();
        store.accumulate_grad(a, &Tensor::filled(&[1], 1.0));
        sgd.step(&mut store, 0).unwrap();
        assert_ne!(store.get(a).value.data()[0], 1.0);
        assert_eq!(store.get(b).value.data()[0], 1.0);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::filled(&[1], 1.0));
        store.accumulate_grad(a, &Tensor::filled(&[1], Scalar::NAN));
        let mut sgd = Sgd::new(SgdConfig::default()).unwrap();
        assert!(matches!(sgd.step(&mut store, 3), Err(Error::NonFinite(_))));
    }

    #[test]
    fn rejects_momentum_of_one() {
        assert!(Sgd::new(SgdConfig {
            momentum: 1.0,
            ..Default::default()
        })
        .is_err());
    }
}

//! Adam over named parameters.

use autograd::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{round_f32, Param};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam settings: {self:?}")))
        }
    }
}

/// Moment estimates for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub name: String,
    pub m: Tensor,
    pub v: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub steps: u64,
    pub moments: Vec<Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[&Param]) -> Self {
        let moments = params
            .iter()
            .map(|p| Moments {
                name: p.name().to_string(),
                m: Tensor::zeros(p.value().shape()),
                v: Tensor::zeros(p.value().shape()),
            })
            .collect();
        Self {
            config,
            steps: 0,
            moments,
        }
    }

    /// Applies one update. `grads[i]` belongs to `params[i]`; parameters
    /// without a gradient are left untouched along with their moments.
    /// Updated values are rounded to f32.
    pub fn step(&mut self, params: Vec<&mut Param>, grads: &[Option<Var>]) {
        assert_eq!(params.len(), self.moments.len(), "parameter list changed");
        assert_eq!(params.len(), grads.len());
        self.steps += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            eps,
        } = self.config;
        let t = self.steps as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for ((p, g), mo) in params.into_iter().zip(grads).zip(&mut self.moments) {
            debug_assert_eq!(p.name(), mo.name);
            let Some(g) = g else { continue };
            let g = g.value().data();
            let m = mo.m.data_mut();
            let v = mo.v.data_mut();
            let mut w = p.value().clone();
            for (i, wi) in w.data_mut().iter_mut().enumerate() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                *wi = round_f32(*wi - lr * mh / (vh.sqrt() + eps));
            }
            p.set(w);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use autograd::grad;

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = Param::new("x", Tensor::new(&[2], vec![3.0, -2.0]));
        let mut opt = Adam::new(
            AdamConfig {
                learning_rate: 0.1,
                ..AdamConfig::default()
            },
            &[&p],
        );
        for _ in 0..300 {
            let loss = p.var().square().sum_all();
            let g = grad(&loss, &[p.var().clone()], false);
            opt.step(vec![&mut p], &g);
        }
        assert!(p.value().max_abs() < 0.05, "{:?}", p.value());
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Param::new("x", Tensor::new(&[1], vec![1.0]));
        let mut opt = Adam::new(AdamConfig::default(), &[&p]);
        let g = vec![Some(Var::constant(Tensor::new(&[1], vec![0.5])))];
        opt.step(vec![&mut p], &g);
        assert!((p.value().data()[0] - (1.0 - 1e-4)).abs() < 1e-7);
        let before = p.value().clone();
        opt.step(vec![&mut p], &[None]);
        assert_eq!(*p.value(), before);
    }
}

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, param_count: usize) -> Self {
        Self {
            cfg,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut dyn ParamSet, grads: &dyn ParamSet) {
        let n = self.m.len();
        self.step_range(params, grads, 0..n);
    }

    /// Bias-corrected Adam update restricted to flat indices in `active`;
    /// moments outside it are left untouched.
    pub fn step_range(&mut self, params: &mut dyn ParamSet, grads: &dyn ParamSet, active: Range<usize>) {
        let g = grads.to_flat();
        assert_eq!(g.len(), self.m.len(), "gradient length differs from optimizer state");
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut offset = 0;
        params.visit_mut(&mut |_, p| {
            for (k, w) in p.iter_mut().enumerate() {
                let i = offset + k;
                if !active.contains(&i) {
                    continue;
                }
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            offset += p.len();
        });
        assert_eq!(offset, g.len(), "parameter length differs from gradients");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{Activation, Mlp};
    use crate::numerics::Prng;

    #[test]
    fn first_step_moves_by_lr() {
        // bias correction makes the first update lr * sign(g)
        let mut net = Mlp::new(&[2, 1], Activation::Identity, Activation::Identity, &mut Prng::new(1));
        let before = net.to_flat();
        let mut grads = net.clone();
        grads.assign_flat(&[0.5, -2.0, 3.0]);
        let mut opt = Adam::new(AdamConfig::default(), 3);
        opt.step(&mut net, &grads);
        let after = net.to_flat();
        let expected = [-1e-3, 1e-3, -1e-3];
        for ((a, b), e) in after.iter().zip(&before).zip(expected) {
            assert!((a - b - e).abs() < 1e-10);
        }
    }

    #[test]
    fn minimises_a_quadratic() {
        // f(w) = |w - c|^2 for a single dense layer treated as a vector
        let mut net = Mlp::new(&[3, 2], Activation::Identity, Activation::Identity, &mut Prng::new(2));
        let c: Vec<f64> = (0..net.param_count()).map(|i| i as f64 * 0.1 - 0.3).collect();
        let mut opt = Adam::new(AdamConfig { lr: 0.05, ..Default::default() }, c.len());
        for _ in 0..2000 {
            let w = net.to_flat();
            let mut g = net.clone();
            g.assign_flat(&w.iter().zip(&c).map(|(a, b)| 2.0 * (a - b)).collect::<Vec<_>>());
            opt.step(&mut net, &g);
        }
        let w = net.to_flat();
        assert!(w.iter().zip(&c).all(|(a, b)| (a - b).abs() < 1e-3));
        assert_eq!(opt.steps(), 2000);
    }

    #[test]
    fn inactive_range_is_frozen() {
        let mut net = Mlp::new(&[2, 2], Activation::Identity, Activation::Identity, &mut Prng::new(3));
        let before = net.to_flat();
        let mut g = net.clone();
        g.assign_flat(&[1.0; 6]);
        let mut opt = Adam::new(AdamConfig::default(), 6);
        opt.step_range(&mut net, &g, 4..6);
        let after = net.to_flat();
        assert_eq!(&after[..4], &before[..4]);
        assert_ne!(&after[4..], &before[4..]);
    }

    #[test]
    fn config_validation() {
        assert!(AdamConfig::default().validate().is_ok());
        assert!(AdamConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(AdamConfig { beta1: 1.0, ..Default::default() }.validate().is_err());
    }
}

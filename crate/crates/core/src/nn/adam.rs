use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Grads, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    m: Grads,
    v: Grads,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        Self {
            config,
            step: 0,
            m: params.zero_grads(),
            v: params.zero_grads(),
        }
    }

    pub fn update(&mut self, params: &mut ParamSet, grads: &Grads) {
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(beta1, t as f64);
        let bc2 = 1.0 - libm::pow(beta2, t as f64);
        for (((p, g), m), v) in params
            .params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for (((x, &gi), mi), vi) in p.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *x -= learning_rate * mhat / (libm::sqrt(vhat) + epsilon);
            }
        }
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction the first update is lr * sign(g) (up to eps).
        let mut ps = ParamSet::default();
        ps.push("w", vec![2], vec![1.0, -1.0]);
        let mut adam = Adam::new(AdamConfig::default(), &ps);
        adam.update(&mut ps, &vec![vec![0.5, -3.0]]);
        assert!((ps.params[0].data[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((ps.params[0].data[1] - (-1.0 + 1e-3)).abs() < 1e-9);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut ps = ParamSet::default();
        ps.push("w", vec![1], vec![3.0]);
        let mut adam = Adam::new(
            AdamConfig {
                learning_rate: 0.05,
                ..AdamConfig::default()
            },
            &ps,
        );
        for _ in 0..2000 {
            let w = ps.params[0].data[0];
            adam.update(&mut ps, &vec![vec![2.0 * (w - 0.5)]]);
        }
        assert!((ps.params[0].data[0] - 0.5).abs() < 1e-3);
    }
}

//! Adam with decoupled weight decay and per-parameter step scaling.

use crate::params::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Adam {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    /// Restores a state captured by [`Adam::moments`].
    pub fn from_state(config: AdamConfig, step: u64, first: Vec<Vec<f64>>, second: Vec<Vec<f64>>) -> Self {
        Adam {
            config,
            step,
            first,
            second,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, id: ParamId) -> (&[f64], &[f64]) {
        (&self.first[id.index()], &self.second[id.index()])
    }

    /// One update using each tensor's accumulated gradient (absent = zero).
    ///
    /// `scale(id)` multiplies the whole step of a parameter, weight decay
    /// included; a scale of exactly 0 leaves the parameter bitwise unchanged.
    pub fn step(&mut self, params: &mut ParamStore, lr: f64, scale: impl Fn(ParamId) -> f64) {
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bias1 = 1.0 - beta1.powi(self.step as i32);
        let bias2 = 1.0 - beta2.powi(self.step as i32);
        let ids: Vec<ParamId> = params.ids().collect();
        for id in ids {
            let s = scale(id);
            let tensor = params.get_mut(id);
            let grad = tensor.grad().map(<[f64]>::to_vec);
            let m = &mut self.first[id.index()];
            let v = &mut self.second[id.index()];
            for (i, p) in tensor.values_mut().iter_mut().enumerate() {
                let g = grad.as_ref().map_or(0.0, |g| g[i]);
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let adaptive = (m[i] / bias1) / ((v[i] / bias2).sqrt() + eps);
                let delta = s * lr * (adaptive + weight_decay * *p);
                *p -= delta;
            }
        }
    }
}

/// Learning rate after halving (or `factor`) once per completed interval.
pub fn decayed_lr(base: f64, factor: f64, interval_steps: usize, step: usize) -> f64 {
    if interval_steps == 0 {
        return base;
    }
    base * factor.powi((step / interval_steps) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor};

    fn store(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.add(
            "p",
            Tensor::from_vec(Shape::new(1, 1, 1, values.len()).unwrap(), values.to_vec()).unwrap(),
        );
        s
    }

    #[test]
    fn zero_gradient_only_decays() {
        let mut params = store(&[1.0, -2.0, 0.5]);
        let mut adam = Adam::new(AdamConfig::default(), &params);
        adam.step(&mut params, 1e-3, |_| 1.0);
        let factor = 1.0 - 1e-3 * 1e-6;
        for (v, orig) in params.iter().next().unwrap().1.values().iter().zip([1.0, -2.0, 0.5]) {
            assert!((v - orig * factor).abs() <= 1e-15 * orig.abs());
        }
    }

    #[test]
    fn zero_scale_is_bitwise_noop() {
        let mut params = store(&[1.0, -2.0, 0.5]);
        let id = params.ids().next().unwrap();
        params.get_mut(id).accumulate_grad(&[0.3, -0.1, 9.0]);
        let before = params.clone();
        let mut adam = Adam::new(AdamConfig::default(), &params);
        adam.step(&mut params, 1e-3, |_| 0.0);
        for (a, b) in params.get(id).values().iter().zip(before.get(id).values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut params = store(&[0.0, 0.0]);
        let id = params.ids().next().unwrap();
        params.get_mut(id).accumulate_grad(&[2.0, -5.0]);
        let mut adam = Adam::new(
            AdamConfig {
                weight_decay: 0.0,
                ..AdamConfig::default()
            },
            &params,
        );
        adam.step(&mut params, 0.01, |_| 1.0);
        let v = params.get(id).values();
        assert!((v[0] + 0.01).abs() < 1e-9 && (v[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn lr_halves_at_boundaries() {
        assert_eq!(decayed_lr(1e-3, 0.5, 100, 99), 1e-3);
        assert_eq!(decayed_lr(1e-3, 0.5, 100, 100), 5e-4);
        assert_eq!(decayed_lr(1e-3, 0.5, 100, 250), 2.5e-4);
    }
}

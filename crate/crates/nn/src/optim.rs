use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled (AdamW) weight decay; 0 gives plain Adam.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First/second moment state, one entry per parameter in store order.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros = || -> Vec<Tensor<T>> {
            store
                .iter()
                .map(|(_, p)| Tensor::zeros(p.tensor.shape()))
                .collect()
        };
        Self {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One bias-corrected Adam update using the gradients held in `store`.
/// Frozen parameters are skipped.
pub fn adam_step<T: Scalar>(
    store: &mut ParamStore<T>,
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamConfig,
) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    let (lr, eps, wd) = (T::of(lr), T::of(cfg.eps), T::of(cfg.weight_decay));
    for (i, p) in store.params_mut().iter_mut().enumerate() {
        if !p.trainable {
            continue;
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let g = p.gradient.data();
        for (j, w) in p.tensor.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + (T::one() - b1) * g[j];
            v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            if wd != T::zero() {
                *w -= lr * wd * *w;
            }
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Linear warmup followed by cosine decay to `min_lr`.
#[derive(Debug, Clone, Copy)]
pub struct CosineSchedule {
    pub base_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl CosineSchedule {
    pub fn lr(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let progress = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        self.min_lr + 0.5 * (self.base_lr - self.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("x", Tensor::scalar(v));
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = scalar_store(1.5);
        let mut st = AdamState::new(&s);
        for _ in 0..5 {
            adam_step(&mut s, &mut st, 0.1, &AdamConfig::default());
        }
        assert_eq!(s.value(crate::ParamId(0)).item(), 1.5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = scalar_store(0.0);
        s.set_grads(vec![Tensor::scalar(1.0)]).unwrap();
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &mut st, 0.01, &AdamConfig::default());
        let x = s.value(crate::ParamId(0)).item();
        assert!((x + 0.01).abs() < 1e-9, "{x}");
    }

    #[test]
    fn quadratic_loss_decreases_monotonically() {
        // f(x) = Σ (x_i - c_i)^2 with analytic gradient
        let c = [3.0, -2.0, 0.5, 7.0];
        let mut s = ParamStore::new();
        s.add("x", Tensor::zeros(&[4]));
        let mut st = AdamState::new(&s);
        let loss = |s: &ParamStore<f64>| -> f64 {
            s.value(crate::ParamId(0)).data().iter().zip(&c).map(|(x, c)| (x - c) * (x - c)).sum()
        };
        let mut prev = loss(&s);
        for _ in 0..100 {
            let g: Vec<f64> = s.value(crate::ParamId(0)).data().iter().zip(&c).map(|(x, c)| 2.0 * (x - c)).collect();
            s.set_grads(vec![Tensor::new(vec![4], g).unwrap()]).unwrap();
            adam_step(&mut s, &mut st, 0.01, &AdamConfig::default());
            let l = loss(&s);
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn weight_decay_shrinks_without_gradient() {
        let mut s = scalar_store(2.0);
        let mut st = AdamState::new(&s);
        let cfg = AdamConfig { weight_decay: 0.1, ..Default::default() };
        adam_step(&mut s, &mut st, 0.5, &cfg);
        assert!((s.value(crate::ParamId(0)).item() - 1.9).abs() < 1e-12);
    }

    #[test]
    fn schedule_shape() {
        let s = CosineSchedule { base_lr: 1.0, min_lr: 0.0, warmup_steps: 10, total_steps: 110 };
        assert!((s.lr(0) - 0.1).abs() < 1e-12);
        assert!((s.lr(9) - 1.0).abs() < 1e-12);
        assert!((s.lr(10) - 1.0).abs() < 1e-12);
        assert!((s.lr(60) - 0.5).abs() < 1e-12);
        assert!(s.lr(109) < 0.01);
        for k in 10..109 {
            assert!(s.lr(k + 1) <= s.lr(k));
        }
    }
}

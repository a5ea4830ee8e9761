use super::mlp::{MlpSpec, Params};

/// Adam optimizer state with bias correction.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Params,
    v: Params,
}

impl AdamState {
    pub fn new(spec: &MlpSpec, learning_rate: f64) -> Self {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Params::zeros_like(spec),
            v: Params::zeros_like(spec),
        }
    }

    /// One update of `params` in place.
    pub fn step(&mut self, params: &mut Params, grads: &Params) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.eps);
        let it = params
            .values_mut()
            .zip(grads.values())
            .zip(self.m.values_mut())
            .zip(self.v.values_mut());
        for (((p, g), m), v) in it {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Cosine decay from `base` at step 0 to `floor * base` at `total`.
pub fn cosine_lr(base: f64, floor: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let progress = (step as f64 / total as f64).min(1.0);
    let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    base * (floor + (1.0 - floor) * cos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Mlp};

    fn net() -> Mlp {
        Mlp::new(MlpSpec::relu_net(3, &[4], 2, Activation::Linear, 0.0), 9).unwrap()
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(1e-3, 0.1, 0, 100), 1e-3);
        assert!((cosine_lr(1e-3, 0.1, 100, 100) - 1e-4).abs() < 1e-15);
        assert!((cosine_lr(1e-3, 0.0, 50, 100) - 5e-4).abs() < 1e-15);
    }

    #[test]
    fn zero_grads_leave_params_and_count_step() {
        let mut n = net();
        let before = n.params.clone();
        let mut adam = AdamState::new(&n.spec, 1e-3);
        adam.step(&mut n.params, &Params::zeros_like(&n.spec));
        assert_eq!(n.params, before);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut n = net();
        let before = n.params.clone();
        let mut g = Params::zeros_like(&n.spec);
        g.values_mut().for_each(|x| *x = 0.7);
        let mut adam = AdamState::new(&n.spec, 0.0);
        for _ in 0..5 {
            adam.step(&mut n.params, &g);
        }
        assert_eq!(n.params, before);
    }

    #[test]
    fn constant_gradient_moves_by_learning_rate() {
        let mut n = net();
        let lr = 1e-3;
        let mut g = Params::zeros_like(&n.spec);
        for (i, x) in g.values_mut().enumerate() {
            *x = if i % 2 == 0 { 0.3 } else { -2.5 };
        }
        let mut adam = AdamState::new(&n.spec, lr);
        for _ in 0..200 {
            adam.step(&mut n.params, &g);
        }
        let before = n.params.clone();
        adam.step(&mut n.params, &g);
        for ((a, b), gi) in n.params.values().zip(before.values()).zip(g.values()) {
            let delta = b - a;
            assert!((delta.abs() - lr).abs() < 1e-9 * lr.max(1.0) + 1e-10, "{delta}");
            assert_eq!(delta.signum(), gi.signum());
        }
    }
}

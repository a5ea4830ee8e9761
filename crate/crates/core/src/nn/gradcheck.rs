use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::matrix::Matrix;
use super::mlp::Mlp;
use crate::error::Result;

/// Outcome of a finite-difference gradient check.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Relative error with a small floor so that two near-zero values compare equal.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

/// Compares backprop against central differences of `loss` on the batch `x`.
///
/// `loss` maps network outputs to a scalar and its gradient with respect to
/// those outputs. Dropout masks are drawn from a fixed seed on every forward so
/// the perturbed passes see the same mask. `stride` checks every n-th
/// parameter (1 checks all of them).
pub fn gradient_check<F>(net: &Mlp, x: &Matrix, loss: F, h: f64, stride: usize) -> Result<GradCheck>
where
    F: Fn(&Matrix) -> (f64, Matrix),
{
    const MASK_SEED: u64 = 0x5eed;
    let eval = |n: &Mlp| -> Result<f64> {
        let (out, _) = n.forward(x, true, &mut ChaCha8Rng::seed_from_u64(MASK_SEED))?;
        Ok(loss(&out).0)
    };
    let (out, cache) = net.forward(x, true, &mut ChaCha8Rng::seed_from_u64(MASK_SEED))?;
    let analytic = net.backward(&cache, &loss(&out).1);

    let mut probe = net.clone();
    let mut max_rel_error = 0.0f64;
    let mut checked = 0;
    let analytic_values: Vec<f64> = analytic.values().copied().collect();
    let n_params = analytic_values.len();
    for idx in (0..n_params).step_by(stride.max(1)) {
        let original = *param_mut(&mut probe, idx);
        *param_mut(&mut probe, idx) = original + h;
        let plus = eval(&probe)?;
        *param_mut(&mut probe, idx) = original - h;
        let minus = eval(&probe)?;
        *param_mut(&mut probe, idx) = original;
        let numeric = (plus - minus) / (2.0 * h);
        max_rel_error = max_rel_error.max(relative_error(analytic_values[idx], numeric));
        checked += 1;
    }
    Ok(GradCheck { max_rel_error, checked })
}

fn param_mut(net: &mut Mlp, mut idx: usize) -> &mut f64 {
    for layer in &mut net.params.layers {
        if idx < layer.weights.len() {
            return &mut layer.weights[idx];
        }
        idx -= layer.weights.len();
        if idx < layer.bias.len() {
            return &mut layer.bias[idx];
        }
        idx -= layer.bias.len();
    }
    panic!("parameter index out of range")
}

/// Half the squared norm of the outputs against fixed targets.
pub fn squared_error_loss(targets: &Matrix) -> impl Fn(&Matrix) -> (f64, Matrix) + '_ {
    move |out: &Matrix| {
        let diff: Vec<f64> = out.data.iter().zip(&targets.data).map(|(o, t)| o - t).collect();
        let loss = 0.5 * diff.iter().map(|d| d * d).sum::<f64>();
        (loss, Matrix::from_vec(out.rows, out.cols, diff))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, MlpSpec};
    use rand::Rng;

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn three_layer_net_matches_finite_differences() {
        for (output, dropout) in [(Activation::Linear, 0.0), (Activation::Sigmoid, 0.2)] {
            let net = Mlp::new(MlpSpec::relu_net(10, &[16, 12], 3, output, dropout), 4).unwrap();
            let x = random_batch(4, 10, 1);
            let t = random_batch(4, 3, 2);
            let r = gradient_check(&net, &x, squared_error_loss(&t), 1e-5, 1).unwrap();
            assert_eq!(r.checked, net.spec.n_params());
            assert!(r.max_rel_error < 1e-4, "{output:?}: {}", r.max_rel_error);
        }
    }

    #[test]
    fn broken_gradient_is_detected() {
        let net = Mlp::new(MlpSpec::relu_net(4, &[5], 1, Activation::Linear, 0.0), 4).unwrap();
        let x = random_batch(3, 4, 1);
        let t = random_batch(3, 1, 2);
        let base = squared_error_loss(&t);
        let wrong = |o: &Matrix| {
            let (l, mut g) = base(o);
            g.data.iter_mut().for_each(|v| *v *= 1.5);
            (l, g)
        };
        let r = gradient_check(&net, &x, wrong, 1e-5, 1).unwrap();
        assert!(r.max_rel_error > 0.1);
    }
}

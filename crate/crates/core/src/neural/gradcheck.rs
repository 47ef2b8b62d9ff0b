//! Finite-difference check of the backpropagated gradient.
//!
//! Samples whose central difference straddles a non-differentiable point
//! (a ReLU pre-activation, an absolute-error residual or an L1-penalized
//! weight changing sign between `w - h` and `w + h`) are skipped.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mlp::{sign, Mlp};
use super::{MlpConfig, NeuralError};

pub const STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so that two gradients that are
/// both essentially zero compare as equal.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Builds a network from `config` (dropout must be 0) and checks `samples`
/// parameters on the batch `(x, t)`.
pub fn gradient_check(
    config: &MlpConfig,
    x: &DMatrix<f64>,
    t: &DMatrix<f64>,
    samples: usize,
) -> Result<GradCheckReport, NeuralError> {
    config.validate()?;
    if config.dropout_rate != 0.0 {
        return Err(NeuralError::Config("gradient check needs dropout off".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let net = Mlp::new(config.shape(x.ncols()), config.activation, config.init_scheme, &mut rng);
    check_network(&net, config.l1_coeff, x, t, samples, config.seed)
}

/// Non-smooth state at the current parameters: signs of kinked
/// pre-activations, residual signs and weight signs.
fn kink_signature(net: &Mlp, x: &DMatrix<f64>, t: &DMatrix<f64>, l1: f64) -> Result<Vec<i8>, NeuralError> {
    let cache = net.forward_train(x, 0.0, None)?;
    let mut sig = Vec::new();
    if net.activation.has_kink() {
        for h in &cache.hidden {
            sig.extend(h.z.iter().map(|z| sign(*z) as i8));
        }
    }
    sig.extend((&cache.output - t).iter().map(|r| sign(*r) as i8));
    if l1 > 0.0 {
        for r in net.shape.weight_ranges() {
            sig.extend(net.params[r].iter().map(|w| sign(*w) as i8));
        }
    }
    Ok(sig)
}

/// Compares analytic and central-difference gradients for up to `samples`
/// randomly chosen parameters of `net`.
pub fn check_network(
    net: &Mlp,
    l1: f64,
    x: &DMatrix<f64>,
    t: &DMatrix<f64>,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport, NeuralError> {
    let (_, analytic) = net.loss_and_gradient(x, t, l1, 0.0, None)?;
    let mut order: Vec<usize> = (0..net.params.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut probe = net.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, max_abs_error: 0.0, checked: 0, skipped: 0 };
    for k in order {
        if report.checked == samples {
            break;
        }
        let w = net.params[k];
        probe.params[k] = w + STEP;
        let (up, sig_up) = (probe.loss(x, t, l1)?, kink_signature(&probe, x, t, l1)?);
        probe.params[k] = w - STEP;
        let (down, sig_down) = (probe.loss(x, t, l1)?, kink_signature(&probe, x, t, l1)?);
        probe.params[k] = w;
        if sig_up != sig_down {
            report.skipped += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * STEP);
        let a = analytic[k];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        report.max_rel_error = report.max_rel_error.max(rel);
        report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Activation, InitScheme};
    use crate::transform::NormMethod;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn config(activation: Activation, bn: bool, l1: f64) -> MlpConfig {
        MlpConfig {
            hidden_sizes: [6, 5],
            activation,
            dropout_rate: 0.0,
            use_batch_norm: bn,
            init_scheme: InitScheme::NormalScaled,
            l1_coeff: l1,
            learning_rate: 1e-3,
            output_width: 3,
            input_norm: NormMethod::None,
            target_norm: NormMethod::None,
            seed: 11,
        }
    }

    fn batch(n: usize, inputs: usize, outputs: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DMatrix::from_fn(n, inputs, |_, _| rng.sample(StandardNormal));
        let t = DMatrix::from_fn(n, outputs, |_, _| rng.sample(StandardNormal));
        (x, t)
    }

    #[test]
    fn tanh_network_ten_inputs() {
        let (x, t) = batch(8, 10, 3);
        let r = gradient_check(&config(Activation::Tanh, false, 0.0), &x, &t, 100).unwrap();
        assert_eq!(r.checked, 100);
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn linear_stack_is_exact() {
        let (x, t) = batch(8, 4, 3);
        let r = gradient_check(&config(Activation::Linear, false, 0.0), &x, &t, 100).unwrap();
        assert!(r.max_abs_error < 1e-8, "{r:?}");
    }

    #[test]
    fn zero_relu_network_skips_kinks() {
        let (x, t) = batch(8, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = config(Activation::Relu, false, 1e-3);
        let mut net = Mlp::new(cfg.shape(4), Activation::Relu, InitScheme::UniformScaled, &mut rng);
        net.params.fill(0.0);
        let r = check_network(&net, cfg.l1_coeff, &x, &t, usize::MAX, 1).unwrap();
        // weights sit on the L1 kink and hidden biases on the ReLU kink, so
        // only the output biases are checked
        assert_eq!(r.checked, 3);
        assert!(r.skipped > 0);
        assert!(r.max_abs_error < 1e-9, "{r:?}");
    }

    #[test]
    fn batch_norm_and_penalty() {
        let (x, t) = batch(12, 7, 3);
        for a in Activation::SEARCHABLE {
            let r = gradient_check(&config(a, true, 1e-2), &x, &t, 100).unwrap();
            assert!(r.max_rel_error < 1e-4, "{a:?}: {r:?}");
        }
    }

    #[test]
    fn dropout_is_rejected() {
        let (x, t) = batch(4, 3, 3);
        let mut cfg = config(Activation::Tanh, false, 0.0);
        cfg.dropout_rate = 0.2;
        assert!(matches!(gradient_check(&cfg, &x, &t, 10), Err(NeuralError::Config(_))));
    }
}

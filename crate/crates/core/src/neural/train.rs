//! Mini-batch Adam with early stopping on validation MAE.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{mean_absolute_error, Mlp};
use super::{MlpConfig, NeuralError};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping; 0 behaves
    /// like 1.
    pub patience: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self { batch_size: 32, max_epochs: 1000, patience: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training objective over the epoch's batches (MAE plus penalty).
    pub train_loss: f64,
    pub validation_mae: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were restored.
    pub best_epoch: usize,
}

impl TrainingLog {
    pub fn best_validation(&self) -> f64 {
        self.epochs.get(self.best_epoch).map_or(f64::INFINITY, |e| e.validation_mae)
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPSILON);
        }
    }
}

fn rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)])
}

/// Trains a fresh network on normalized data. Deterministic given
/// `config.seed`: the same seed drives initialization, shuffling and dropout.
pub fn train(
    config: &MlpConfig,
    settings: &TrainSettings,
    train_x: &DMatrix<f64>,
    train_y: &DMatrix<f64>,
    valid_x: &DMatrix<f64>,
    valid_y: &DMatrix<f64>,
) -> Result<(Mlp, TrainingLog), NeuralError> {
    config.validate()?;
    if train_x.nrows() == 0 {
        return Err(NeuralError::EmptySplit("training"));
    }
    if valid_x.nrows() == 0 {
        return Err(NeuralError::EmptySplit("validation"));
    }
    for (y, x) in [(train_y, train_x), (valid_y, valid_x)] {
        if y.ncols() != config.output_width || y.nrows() != x.nrows() {
            return Err(NeuralError::Config(format!(
                "targets are {}x{}, expected {}x{}",
                y.nrows(),
                y.ncols(),
                x.nrows(),
                config.output_width
            )));
        }
    }
    if settings.batch_size == 0 {
        return Err(NeuralError::Config("batch size must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = Mlp::new(config.shape(train_x.ncols()), config.activation, config.init_scheme, &mut rng);
    let mut adam = Adam::new(net.params.len(), config.learning_rate);
    let mut order: Vec<usize> = (0..train_x.nrows()).collect();
    let mut log = TrainingLog::default();
    let mut best: Option<Mlp> = None;
    let mut stale = 0;
    let patience = settings.patience.max(1);

    for epoch in 0..settings.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(settings.batch_size) {
            let (bx, by) = (rows(train_x, batch), rows(train_y, batch));
            let dropout_rng = (config.dropout_rate > 0.0).then_some(&mut rng);
            let (loss, grad, cache) =
                match net.loss_gradient_cache(&bx, &by, config.l1_coeff, config.dropout_rate, dropout_rng) {
                    Ok(v) => v,
                    Err(NeuralError::NonFinite(_)) => {
                        return Err(NeuralError::Diverged { epoch, loss: f64::NAN, log: Box::new(log) })
                    }
                    Err(e) => return Err(e),
                };
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(NeuralError::Diverged { epoch, loss, log: Box::new(log) });
            }
            adam.step(&mut net.params, &grad);
            net.update_running_stats(&cache);
            total += loss * batch.len() as f64;
        }
        let train_loss = total / train_x.nrows() as f64;
        let validation_mae = match net.predict(valid_x) {
            Ok(p) => mean_absolute_error(&p, valid_y),
            Err(NeuralError::NonFinite(_)) => f64::NAN,
            Err(e) => return Err(e),
        };
        if !validation_mae.is_finite() {
            return Err(NeuralError::Diverged { epoch, loss: validation_mae, log: Box::new(log) });
        }
        log.epochs.push(EpochRecord { epoch, train_loss, validation_mae });

        if validation_mae < log.best_validation() || best.is_none() {
            log.best_epoch = epoch;
            best = Some(net.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= patience {
                break;
            }
        }
    }
    Ok((best.unwrap_or(net), log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Activation, InitScheme};
    use crate::transform::NormMethod;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn config(activation: Activation) -> MlpConfig {
        MlpConfig {
            hidden_sizes: [8, 8],
            activation,
            dropout_rate: 0.0,
            use_batch_norm: false,
            init_scheme: InitScheme::UniformScaled,
            l1_coeff: 0.0,
            learning_rate: 1e-3,
            output_width: 2,
            input_norm: NormMethod::None,
            target_norm: NormMethod::None,
            seed: 3,
        }
    }

    /// y = W x with a fixed 4x2 map.
    fn linear_data(n: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = DMatrix::from_row_slice(4, 2, &[1.0, -0.5, 0.3, 0.8, -1.2, 0.1, 0.4, 0.6]);
        let x = DMatrix::from_fn(n, 4, |_, _| rng.sample(StandardNormal));
        let y = &x * w;
        (x, y)
    }

    #[test]
    fn learns_a_linear_map() {
        let (x, y) = linear_data(256, 1);
        let (vx, vy) = linear_data(64, 2);
        let scale = y.iter().map(|v| v.abs()).sum::<f64>() / y.len() as f64;
        let settings = TrainSettings { max_epochs: 3000, patience: 200, ..Default::default() };
        let (net, log) = train(&config(Activation::Linear), &settings, &x, &y, &vx, &vy).unwrap();
        let mae = mean_absolute_error(&net.predict(&x).unwrap(), &y);
        assert!(mae < 0.01 * scale, "train MAE {mae} vs scale {scale} after {} epochs", log.epochs.len());
    }

    #[test]
    fn restores_best_epoch() {
        let (x, y) = linear_data(64, 3);
        let (vx, vy) = linear_data(32, 4);
        let mut cfg = config(Activation::Tanh);
        cfg.learning_rate = 0.05;
        let settings = TrainSettings { max_epochs: 200, patience: 5, ..Default::default() };
        let (net, log) = train(&cfg, &settings, &x, &y, &vx, &vy).unwrap();
        let best = log.best_validation();
        assert!(log.epochs.iter().all(|e| best <= e.validation_mae));
        assert_eq!(mean_absolute_error(&net.predict(&vx).unwrap(), &vy), best);
    }

    #[test]
    fn zero_patience_stops_at_first_stall() {
        let (x, y) = linear_data(64, 5);
        let (vx, vy) = linear_data(32, 6);
        let mut cfg = config(Activation::Relu);
        cfg.learning_rate = 0.5;
        let settings = TrainSettings { max_epochs: 500, patience: 0, ..Default::default() };
        let (_, log) = train(&cfg, &settings, &x, &y, &vx, &vy).unwrap();
        let n = log.epochs.len();
        assert!(n < 500);
        let v: Vec<f64> = log.epochs.iter().map(|e| e.validation_mae).collect();
        // every epoch but the last improved on all earlier ones
        for i in 1..n - 1 {
            assert!(v[i] < v[..i].iter().cloned().fold(f64::INFINITY, f64::min));
        }
        assert!(v[n - 1] >= v[..n - 1].iter().cloned().fold(f64::INFINITY, f64::min));
    }

    #[test]
    fn same_seed_same_weights() {
        let (x, y) = linear_data(50, 7);
        let (vx, vy) = linear_data(20, 8);
        let mut cfg = config(Activation::Sigmoid);
        cfg.dropout_rate = 0.3;
        cfg.use_batch_norm = true;
        let settings = TrainSettings { max_epochs: 30, ..Default::default() };
        let a = train(&cfg, &settings, &x, &y, &vx, &vy).unwrap();
        let b = train(&cfg, &settings, &x, &y, &vx, &vy).unwrap();
        assert_eq!(a, b);
        cfg.seed += 1;
        assert_ne!(a.0, train(&cfg, &settings, &x, &y, &vx, &vy).unwrap().0);
    }

    #[test]
    fn divergence_is_reported() {
        let (mut x, y) = linear_data(40, 9);
        x.apply(|v| *v *= 1e300);
        let (vx, vy) = linear_data(10, 10);
        let mut cfg = config(Activation::Linear);
        cfg.learning_rate = 1e10;
        let settings = TrainSettings { max_epochs: 100, ..Default::default() };
        match train(&cfg, &settings, &x, &y, &vx, &vy) {
            Err(NeuralError::Diverged { .. }) => {}
            other => panic!("expected divergence, got {:?}", other.map(|r| r.1.epochs.len())),
        }
    }
}

//! Cross-entropy training for the victim MLP with analytic backprop.
//!
//! Training always runs with plain ReLU activations; quantization is an
//! inference-time defense applied by the wrapper, not something gradients
//! flow through.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::geometry::UnitBoxPoint;
use crate::models::dataset::LabeledDataset;
use crate::models::mlp::{Activation, MlpSpec};
use crate::models::ModelError;
use crate::seed;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 60, batch_size: 32, learning_rate: 0.5, seed: 0 }
    }
}

/// Final metrics of one training run; accuracy below expectations is reported
/// here rather than hidden.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub final_train_loss: f64,
    pub test_accuracy: f64,
}

/// He-style random initialization, deterministic per seed.
pub fn random_init(widths: &[usize], init_seed: u64) -> Result<MlpSpec, ModelError> {
    let mut spec = MlpSpec::zeroed(widths, Activation::Relu)?;
    let mut rng = seed::rng_from(seed::derive(init_seed, &[0x1417]));
    for (i, layer) in spec.layers_mut().iter_mut().enumerate() {
        let fan_in = widths[i] as f64;
        let scale = (2.0 / fan_in).sqrt();
        for w in &mut layer.weights {
            let n: f64 = rng.sample(StandardNormal);
            *w = scale * n;
        }
    }
    Ok(spec)
}

/// Minibatch gradient descent on softmax cross-entropy. Deterministic given
/// the config seed: the same seed yields bitwise-identical weights.
pub fn train_mlp(
    data: &LabeledDataset,
    widths: &[usize],
    config: &TrainConfig,
) -> Result<(MlpSpec, TrainReport), ModelError> {
    if data.train.is_empty() {
        return Err(ModelError::EmptySplit("train"));
    }
    if widths.first() != Some(&data.dim) || widths.last() != Some(&data.num_classes) {
        return Err(ModelError::InvalidSpec(format!(
            "widths {widths:?} do not match dataset dim {} / classes {}",
            data.dim, data.num_classes
        )));
    }
    if config.batch_size == 0 || config.learning_rate <= 0.0 {
        return Err(ModelError::InvalidSpec(
            "batch_size must be >= 1 and learning_rate > 0".into(),
        ));
    }

    let mut spec = random_init(widths, config.seed)?;
    let mut shuffle_rng = seed::rng_from(seed::derive(config.seed, &[0x5417]));
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut final_train_loss = f64::NAN;

    for _ in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            epoch_loss += sgd_batch(&mut spec, data, batch, config.learning_rate);
        }
        final_train_loss = epoch_loss / data.train.len() as f64;
    }

    let report = TrainReport {
        epochs_run: config.epochs,
        final_train_loss,
        test_accuracy: split_accuracy(&spec, &data.test),
    };
    Ok((spec, report))
}

/// Accuracy of the deterministic forward pass on a labeled split.
pub fn split_accuracy(spec: &MlpSpec, split: &[(UnitBoxPoint, usize)]) -> f64 {
    if split.is_empty() {
        return 0.0;
    }
    let correct = split
        .iter()
        .filter(|(x, y)| {
            spec.forward(x).map(|p| p.argmax() == *y).unwrap_or(false)
        })
        .count();
    correct as f64 / split.len() as f64
}

/// One minibatch step; returns the summed cross-entropy loss over the batch.
fn sgd_batch(
    spec: &mut MlpSpec,
    data: &LabeledDataset,
    batch: &[usize],
    learning_rate: f64,
) -> f64 {
    let widths = spec.widths().to_vec();
    let num_layers = widths.len() - 1;
    let mut grad_w: Vec<Vec<f64>> = widths
        .windows(2)
        .map(|w| vec![0.0; w[0] * w[1]])
        .collect();
    let mut grad_b: Vec<Vec<f64>> = widths[1..].iter().map(|&w| vec![0.0; w]).collect();
    let mut batch_loss = 0.0;

    for &idx in batch {
        let (x, label) = &data.train[idx];

        // Forward pass keeping post-activation values per layer.
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(num_layers + 1);
        activations.push(x.as_slice().to_vec());
        for (i, layer) in spec.layers().iter().enumerate() {
            let out_dim = widths[i + 1];
            let input = &activations[i];
            let mut pre = vec![0.0; out_dim];
            for row in 0..out_dim {
                let mut acc = layer.biases[row];
                let offset = row * input.len();
                for (col, &v) in input.iter().enumerate() {
                    acc += layer.weights[offset + col] * v;
                }
                pre[row] = acc;
            }
            if i != num_layers - 1 {
                for v in &mut pre {
                    *v = v.max(0.0);
                }
            }
            activations.push(pre);
        }

        let probs = super::mlp::softmax(activations.last().unwrap());
        batch_loss += -probs[*label].max(crate::loss::PROB_FLOOR).ln();

        // Backward: softmax + cross-entropy gives probs - onehot at the top.
        let mut delta: Vec<f64> = probs;
        delta[*label] -= 1.0;
        for i in (0..num_layers).rev() {
            let input = &activations[i];
            let in_dim = widths[i];
            for row in 0..widths[i + 1] {
                grad_b[i][row] += delta[row];
                let offset = row * in_dim;
                for (col, &v) in input.iter().enumerate() {
                    grad_w[i][offset + col] += delta[row] * v;
                }
            }
            if i > 0 {
                let layer = &spec.layers()[i];
                let mut next = vec![0.0; in_dim];
                for (col, n) in next.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for row in 0..widths[i + 1] {
                        acc += layer.weights[row * in_dim + col] * delta[row];
                    }
                    // ReLU gate on the post-activation value.
                    *n = if activations[i][col] > 0.0 { acc } else { 0.0 };
                }
                delta = next;
            }
        }
    }

    let step = learning_rate / batch.len() as f64;
    for (i, layer) in spec.layers_mut().iter_mut().enumerate() {
        for (w, g) in layer.weights.iter_mut().zip(&grad_w[i]) {
            *w -= step * g;
        }
        for (b, g) in layer.biases.iter_mut().zip(&grad_b[i]) {
            *b -= step * g;
        }
    }
    batch_loss
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::dataset::gaussian_blobs;

    #[test]
    fn training_is_deterministic_per_seed() {
        let data = gaussian_blobs(2, 2, 40, 20, 0.06, 5).unwrap();
        let config = TrainConfig { epochs: 10, ..TrainConfig::default() };
        let (a, _) = train_mlp(&data, &[2, 8, 2], &config).unwrap();
        let (b, _) = train_mlp(&data, &[2, 8, 2], &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let data = gaussian_blobs(2, 2, 40, 40, 0.06, 5).unwrap();
        let config = TrainConfig { epochs: 0, seed: 3, ..TrainConfig::default() };
        let (spec, report) = train_mlp(&data, &[2, 8, 2], &config).unwrap();
        assert_eq!(spec, random_init(&[2, 8, 2], 3).unwrap());
        assert_eq!(report.epochs_run, 0);
        // Untrained accuracy hovers near chance.
        assert!(report.test_accuracy < 0.85);
    }

    #[test]
    fn separable_blobs_train_to_high_accuracy() {
        let data = gaussian_blobs(2, 2, 80, 40, 0.05, 9).unwrap();
        let config = TrainConfig { epochs: 40, seed: 1, ..TrainConfig::default() };
        let (_, report) = train_mlp(&data, &[2, 16, 2], &config).unwrap();
        assert!(
            report.test_accuracy >= 0.95,
            "expected >= 0.95 accuracy, got {}",
            report.test_accuracy
        );
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let data = gaussian_blobs(2, 2, 10, 10, 0.05, 9).unwrap();
        let config = TrainConfig::default();
        assert!(train_mlp(&data, &[3, 8, 2], &config).is_err());
        assert!(train_mlp(&data, &[2, 8, 3], &config).is_err());
    }
}

//! Minimal dense feed-forward network with a softmax head.

use serde::{Deserialize, Serialize};

use crate::geometry::UnitBoxPoint;
use crate::loss::ProbVector;
use crate::models::ModelError;

/// Ceiling for post-ReLU activations under quantization (ReLU6 convention);
/// a bounded range makes uniform quantization well-defined.
pub const ACT_MAX: f64 = 6.0;

/// Hidden-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    /// ReLU rounded to the nearest of `levels` uniform levels over
    /// `[0, ACT_MAX]`. Piecewise constant, so finite differences vanish on
    /// many directions.
    QuantizedRelu { levels: u32 },
}

impl Activation {
    pub(crate) fn apply(&self, pre: f64) -> f64 {
        match self {
            Activation::Relu => pre.max(0.0),
            Activation::QuantizedRelu { levels } => quantize_relu(pre, *levels),
        }
    }
}

pub(crate) fn quantize_relu(pre: f64, levels: u32) -> f64 {
    debug_assert!(levels >= 2);
    let clamped = pre.clamp(0.0, ACT_MAX);
    let step = ACT_MAX / (levels - 1) as f64;
    (clamped / step).round() * step
}

/// One affine layer, weights row-major with shape `(out, in)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn affine(&self, input: &[f64], out_dim: usize) -> Vec<f64> {
        let in_dim = input.len();
        debug_assert_eq!(self.weights.len(), out_dim * in_dim);
        let mut out = Vec::with_capacity(out_dim);
        for row in 0..out_dim {
            let mut acc = self.biases[row];
            let offset = row * in_dim;
            for (col, &x) in input.iter().enumerate() {
                acc += self.weights[offset + col] * x;
            }
            out.push(acc);
        }
        out
    }
}

/// Weights and architecture of the victim network: layer widths (input
/// first, classes last), the hidden activation, and per-layer parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    widths: Vec<usize>,
    activation: Activation,
    layers: Vec<Layer>,
}

impl MlpSpec {
    /// Zero-initialized network; useful as a degenerate victim (its output is
    /// uniform for every input).
    pub fn zeroed(widths: &[usize], activation: Activation) -> Result<Self, ModelError> {
        Self::validate_widths(widths)?;
        Self::validate_activation(activation)?;
        let layers = widths
            .windows(2)
            .map(|w| Layer {
                weights: vec![0.0; w[0] * w[1]],
                biases: vec![0.0; w[1]],
            })
            .collect();
        Ok(Self { widths: widths.to_vec(), activation, layers })
    }

    /// Builds a spec from explicit layers, validating that shapes compose.
    pub fn from_layers(
        widths: Vec<usize>,
        activation: Activation,
        layers: Vec<Layer>,
    ) -> Result<Self, ModelError> {
        Self::validate_widths(&widths)?;
        Self::validate_activation(activation)?;
        if layers.len() != widths.len() - 1 {
            return Err(ModelError::InvalidSpec(format!(
                "expected {} layers for {} widths, got {}",
                widths.len() - 1,
                widths.len(),
                layers.len()
            )));
        }
        for (i, (layer, w)) in layers.iter().zip(widths.windows(2)).enumerate() {
            if layer.weights.len() != w[0] * w[1] {
                return Err(ModelError::InvalidSpec(format!(
                    "layer {i}: expected {} weights, got {}",
                    w[0] * w[1],
                    layer.weights.len()
                )));
            }
            if layer.biases.len() != w[1] {
                return Err(ModelError::InvalidSpec(format!(
                    "layer {i}: expected {} biases, got {}",
                    w[1],
                    layer.biases.len()
                )));
            }
            if layer.weights.iter().chain(&layer.biases).any(|v| !v.is_finite()) {
                return Err(ModelError::InvalidSpec(format!(
                    "layer {i}: non-finite parameter"
                )));
            }
        }
        Ok(Self { widths, activation, layers })
    }

    fn validate_widths(widths: &[usize]) -> Result<(), ModelError> {
        if widths.len() < 2 {
            return Err(ModelError::InvalidSpec(
                "need at least input and output widths".into(),
            ));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(ModelError::InvalidSpec("zero layer width".into()));
        }
        if *widths.last().unwrap() < 2 {
            return Err(ModelError::InvalidSpec(
                "output width must be at least 2 classes".into(),
            ));
        }
        Ok(())
    }

    fn validate_activation(activation: Activation) -> Result<(), ModelError> {
        if let Activation::QuantizedRelu { levels } = activation {
            if levels < 2 {
                return Err(ModelError::InvalidSpec(format!(
                    "quantized activation needs at least 2 levels, got {levels}"
                )));
            }
        }
        Ok(())
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Replaces the hidden activation (used by the quantization defense).
    pub fn with_activation(mut self, activation: Activation) -> Result<Self, ModelError> {
        Self::validate_activation(activation)?;
        self.activation = activation;
        Ok(self)
    }

    /// Logits before the softmax, with the configured hidden activation.
    pub(crate) fn logits(&self, input: &[f64]) -> Vec<f64> {
        let mut current = input.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let out_dim = self.widths[i + 1];
            let mut pre = layer.affine(&current, out_dim);
            if i != last {
                for v in &mut pre {
                    *v = self.activation.apply(*v);
                }
            }
            current = pre;
        }
        current
    }

    /// Full forward pass: affine layers with the configured activation,
    /// softmax at the output.
    pub fn forward(&self, x: &UnitBoxPoint) -> Result<ProbVector, ModelError> {
        if x.dim() != self.input_dim() {
            return Err(ModelError::ShapeMismatch {
                expected: self.input_dim(),
                got: x.dim(),
            });
        }
        let probs = softmax(&self.logits(x.as_slice()));
        ProbVector::new(probs).map_err(ModelError::from)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_outputs_uniform() {
        let spec = MlpSpec::zeroed(&[3, 4], Activation::Relu).unwrap();
        let x = UnitBoxPoint::new(vec![0.2, 0.9, 0.4]).unwrap();
        let probs = spec.forward(&x).unwrap();
        for &p in probs.as_slice() {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn single_linear_layer_matches_hand_computed_softmax() {
        // Oracle: logits computed by explicit matrix arithmetic.
        let weights = vec![1.0, -2.0, 0.5, 3.0]; // rows: [1, -2], [0.5, 3]
        let biases = vec![0.1, -0.1];
        let spec = MlpSpec::from_layers(
            vec![2, 2],
            Activation::Relu,
            vec![Layer { weights: weights.clone(), biases: biases.clone() }],
        )
        .unwrap();
        let x = [0.3, 0.7];
        let logit0 = weights[0] * x[0] + weights[1] * x[1] + biases[0];
        let logit1 = weights[2] * x[0] + weights[3] * x[1] + biases[1];
        let expected = softmax(&[logit0, logit1]);

        let probs = spec
            .forward(&UnitBoxPoint::new(x.to_vec()).unwrap())
            .unwrap();
        for (got, want) in probs.as_slice().iter().zip(&expected) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn quantized_relu_rounds_to_nearest_level() {
        // Two levels over [0, 6] are {0, 6}.
        assert_eq!(quantize_relu(0.1, 2), 0.0);
        assert_eq!(quantize_relu(5.9, 2), 6.0);
        assert_eq!(quantize_relu(-1.0, 2), 0.0);
        assert_eq!(quantize_relu(9.0, 2), 6.0);
        // Finer grid: step 6/15 = 0.4.
        let q = quantize_relu(0.55, 16);
        assert!((q - 0.4).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_wrong_input_dim() {
        let spec = MlpSpec::zeroed(&[3, 2], Activation::Relu).unwrap();
        let x = UnitBoxPoint::new(vec![0.1, 0.2]).unwrap();
        assert!(matches!(
            spec.forward(&x),
            Err(ModelError::ShapeMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::zeroed(&[4], Activation::Relu).is_err());
        assert!(MlpSpec::zeroed(&[4, 0, 2], Activation::Relu).is_err());
        assert!(MlpSpec::zeroed(&[4, 1], Activation::Relu).is_err());
        assert!(MlpSpec::zeroed(&[4, 2], Activation::QuantizedRelu { levels: 1 }).is_err());
        assert!(MlpSpec::zeroed(&[4, 2], Activation::QuantizedRelu { levels: 2 }).is_ok());
    }
}

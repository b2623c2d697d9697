//! The victim stack: a query-only classifier interface, a small MLP with
//! trainer and weight persistence, and defense wrappers that reproduce the
//! mechanisms of quantized activations, stochastic activation pruning, and
//! randomized input noise.

pub mod dataset;
pub mod mlp;
pub mod train;
pub mod weights_io;

use std::path::PathBuf;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::UnitBoxPoint;
use crate::loss::{LossError, ProbVector};
use crate::seed;

pub use dataset::{gaussian_blobs, two_moons, LabeledDataset};
pub use mlp::{softmax, Activation, Layer, MlpSpec, ACT_MAX};
pub use train::{random_init, split_accuracy, train_mlp, TrainConfig, TrainReport};
pub use weights_io::{load_model, parse_model, save_model, write_model, MODEL_FORMAT_VERSION};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("invalid defense parameters: {0}")]
    InvalidDefense(String),
    #[error("dataset split {0:?} is empty")]
    EmptySplit(&'static str),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error at line {line} ({field}): {reason}")]
    Parse { line: usize, field: String, reason: String },
    #[error("unsupported weight-file version: {found} (supported: 1)")]
    UnsupportedVersion { found: String },
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// A query-only classifier. For a fixed `(x, query_seed)` the output is
/// identical across calls; stochastic defenses draw all their randomness from
/// the seed. Implementations are immutable after construction, so `query` is
/// safe to call from many workers concurrently.
pub trait BlackboxModel: Send + Sync {
    fn query(&self, x: &UnitBoxPoint, query_seed: u64) -> ProbVector;
    fn input_dim(&self) -> usize;
    fn num_classes(&self) -> usize;
}

/// Predicted class of a query.
pub fn classify(model: &dyn BlackboxModel, x: &UnitBoxPoint, query_seed: u64) -> usize {
    model.query(x, query_seed).argmax()
}

/// Which defense mechanism wraps the victim network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DefenseKind {
    /// Pass-through; queries hit the vanilla network.
    None,
    /// Evaluate the network with activations rounded to `levels` uniform
    /// levels over `[0, ACT_MAX]`, making the input-to-logit map piecewise
    /// constant along many directions.
    Quantize { levels: u32 },
    /// Stochastic activation pruning: each hidden unit survives with
    /// probability `1 - (1 - |a_i| / sum_j |a_j|)^k` (`k` = layer width) and
    /// survivors are rescaled by the inverse keep probability.
    Sap,
    /// Uniform noise in `[-amplitude, amplitude]` added to the input and
    /// clamped back into the unit box before the query.
    InputNoise { amplitude: f64 },
}

impl std::fmt::Display for DefenseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DefenseKind::None => write!(f, "none"),
            DefenseKind::Quantize { levels } => write!(f, "quantize:{levels}"),
            DefenseKind::Sap => write!(f, "sap"),
            DefenseKind::InputNoise { amplitude } => write!(f, "noise:{amplitude}"),
        }
    }
}

impl FromStr for DefenseKind {
    type Err = ModelError;

    /// Accepts `none`, `sap`, `quantize:<levels>`, `noise:<amplitude>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "none" => return Ok(DefenseKind::None),
            "sap" => return Ok(DefenseKind::Sap),
            _ => {}
        }
        if let Some(levels) = s.strip_prefix("quantize:") {
            let levels: u32 = levels
                .parse()
                .map_err(|_| ModelError::InvalidDefense(format!("bad level count: {levels:?}")))?;
            if levels < 2 {
                return Err(ModelError::InvalidDefense(format!(
                    "quantize needs at least 2 levels, got {levels}"
                )));
            }
            return Ok(DefenseKind::Quantize { levels });
        }
        if let Some(amp) = s.strip_prefix("noise:") {
            let amplitude: f64 = amp
                .parse()
                .map_err(|_| ModelError::InvalidDefense(format!("bad amplitude: {amp:?}")))?;
            if !amplitude.is_finite() || amplitude < 0.0 {
                return Err(ModelError::InvalidDefense(format!(
                    "noise amplitude must be finite and >= 0, got {amplitude}"
                )));
            }
            return Ok(DefenseKind::InputNoise { amplitude });
        }
        Err(ModelError::InvalidDefense(format!("unknown defense: {s:?}")))
    }
}

/// The victim MLP behind an optional defense mechanism.
#[derive(Debug, Clone)]
pub struct DefendedMlp {
    spec: MlpSpec,
    kind: DefenseKind,
}

/// Wraps a trained network in a defense. `NONE` is a pass-through; the
/// stochastic kinds (`Sap`, `InputNoise`) consume the per-query seed.
pub fn wrap_defense(inner: MlpSpec, kind: DefenseKind) -> Result<DefendedMlp, ModelError> {
    let spec = match kind {
        DefenseKind::Quantize { levels } => {
            if levels < 2 {
                return Err(ModelError::InvalidDefense(format!(
                    "quantize needs at least 2 levels, got {levels}"
                )));
            }
            inner.with_activation(Activation::QuantizedRelu { levels })?
        }
        DefenseKind::InputNoise { amplitude } => {
            if !amplitude.is_finite() || amplitude < 0.0 {
                return Err(ModelError::InvalidDefense(format!(
                    "noise amplitude must be finite and >= 0, got {amplitude}"
                )));
            }
            inner
        }
        DefenseKind::None | DefenseKind::Sap => inner,
    };
    Ok(DefendedMlp { spec, kind })
}

impl DefendedMlp {
    pub fn kind(&self) -> DefenseKind {
        self.kind
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }
}

impl BlackboxModel for DefendedMlp {
    fn query(&self, x: &UnitBoxPoint, query_seed: u64) -> ProbVector {
        assert_eq!(x.dim(), self.spec.input_dim(), "query input dimension");
        let probs = match self.kind {
            DefenseKind::None | DefenseKind::Quantize { .. } => {
                return self.spec.forward(x).expect("dimensions checked above");
            }
            DefenseKind::Sap => {
                let mut rng = seed::rng_from(seed::derive(query_seed, &[0x5a9]));
                sap_logits(&self.spec, x.as_slice(), &mut rng)
            }
            DefenseKind::InputNoise { amplitude } => {
                let noisy = if amplitude == 0.0 {
                    x.clone()
                } else {
                    let mut rng = seed::rng_from(seed::derive(query_seed, &[0x401]));
                    let values = x
                        .as_slice()
                        .iter()
                        .map(|&v| v + rng.random_range(-amplitude..=amplitude))
                        .collect();
                    UnitBoxPoint::from_clamped(values)
                };
                return self.spec.forward(&noisy).expect("dimensions checked above");
            }
        };
        ProbVector::new(softmax(&probs)).expect("softmax output is a distribution")
    }

    fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    fn num_classes(&self) -> usize {
        self.spec.num_classes()
    }
}

/// Forward pass with stochastic activation pruning on every hidden layer;
/// returns the output logits.
fn sap_logits(spec: &MlpSpec, input: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    let widths = spec.widths();
    let num_layers = spec.layers().len();
    let mut current = input.to_vec();
    for (i, layer) in spec.layers().iter().enumerate() {
        let out_dim = widths[i + 1];
        let in_dim = widths[i];
        let mut pre = vec![0.0; out_dim];
        for row in 0..out_dim {
            let mut acc = layer.biases[row];
            let offset = row * in_dim;
            for (col, &v) in current.iter().enumerate() {
                acc += layer.weights[offset + col] * v;
            }
            pre[row] = acc;
        }
        if i != num_layers - 1 {
            for v in &mut pre {
                *v = v.max(0.0);
            }
            let total: f64 = pre.iter().map(|a| a.abs()).sum();
            if total > 0.0 {
                let k = out_dim as f64;
                for a in &mut pre {
                    let p = a.abs() / total;
                    let keep = 1.0 - (1.0 - p).powf(k);
                    let u: f64 = rng.random_range(0.0..1.0);
                    if keep > 0.0 && u < keep {
                        *a /= keep;
                    } else {
                        *a = 0.0;
                    }
                }
            }
        }
        current = pre;
    }
    current
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::dataset::gaussian_blobs;
    use crate::models::train::{train_mlp, TrainConfig};

    fn trained() -> MlpSpec {
        let data = gaussian_blobs(2, 2, 40, 20, 0.06, 5).unwrap();
        let config = TrainConfig { epochs: 15, ..TrainConfig::default() };
        train_mlp(&data, &[2, 8, 2], &config).unwrap().0
    }

    fn probe() -> UnitBoxPoint {
        UnitBoxPoint::new(vec![0.4, 0.6]).unwrap()
    }

    #[test]
    fn none_wrapper_matches_inner() {
        let spec = trained();
        let wrapped = wrap_defense(spec.clone(), DefenseKind::None).unwrap();
        let direct = spec.forward(&probe()).unwrap();
        let via_wrapper = wrapped.query(&probe(), 123);
        assert_eq!(direct, via_wrapper);
    }

    #[test]
    fn zero_amplitude_noise_matches_inner() {
        let spec = trained();
        let wrapped =
            wrap_defense(spec.clone(), DefenseKind::InputNoise { amplitude: 0.0 }).unwrap();
        assert_eq!(spec.forward(&probe()).unwrap(), wrapped.query(&probe(), 9));
    }

    #[test]
    fn stochastic_defenses_are_seed_deterministic() {
        let spec = trained();
        for kind in [DefenseKind::Sap, DefenseKind::InputNoise { amplitude: 0.05 }] {
            let wrapped = wrap_defense(spec.clone(), kind).unwrap();
            let a = wrapped.query(&probe(), 42);
            let b = wrapped.query(&probe(), 42);
            assert_eq!(a, b, "{kind}");
            // Different seeds generally give different outputs.
            let c = wrapped.query(&probe(), 43);
            assert!(a != c || kind == DefenseKind::Sap, "{kind}");
        }
    }

    #[test]
    fn queries_are_valid_probability_vectors() {
        let spec = trained();
        for kind in [
            DefenseKind::None,
            DefenseKind::Quantize { levels: 4 },
            DefenseKind::Sap,
            DefenseKind::InputNoise { amplitude: 0.1 },
        ] {
            let wrapped = wrap_defense(spec.clone(), kind).unwrap();
            for query_seed in 0..8 {
                let probs = wrapped.query(&probe(), query_seed);
                let sum: f64 = probs.as_slice().iter().sum();
                assert!((sum - 1.0).abs() < 1e-6);
                assert!(probs.as_slice().iter().all(|&p| p >= 0.0));
            }
        }
    }

    #[test]
    fn invalid_defense_parameters_are_rejected() {
        let spec = trained();
        assert!(wrap_defense(spec.clone(), DefenseKind::Quantize { levels: 1 }).is_err());
        assert!(
            wrap_defense(spec, DefenseKind::InputNoise { amplitude: -0.1 }).is_err()
        );
    }

    #[test]
    fn defense_spec_strings_parse_and_round_trip() {
        for text in ["none", "sap", "quantize:16", "noise:0.05"] {
            let kind: DefenseKind = text.parse().unwrap();
            assert_eq!(kind.to_string(), text);
        }
        assert!("quantize:1".parse::<DefenseKind>().is_err());
        assert!("quantize:x".parse::<DefenseKind>().is_err());
        assert!("noise:-1".parse::<DefenseKind>().is_err());
        assert!("noise:inf".parse::<DefenseKind>().is_err());
        assert!("thermometer".parse::<DefenseKind>().is_err());
        assert!("".parse::<DefenseKind>().is_err());
    }

    #[test]
    fn quantize_defense_flattens_the_landscape() {
        // Finite differences along random directions must be exactly zero on
        // a sizable share of probes: the quantized map is piecewise constant.
        let spec = trained();
        let defended = wrap_defense(spec, DefenseKind::Quantize { levels: 8 }).unwrap();
        let x = probe();
        let h = 1e-6;
        let mut flat = 0;
        let total = 40;
        let mut rng = crate::seed::rng_from(7);
        for _ in 0..total {
            let direction: Vec<f64> = (0..2)
                .map(|_| rng.random_range(-1.0..1.0f64))
                .collect();
            let shifted = UnitBoxPoint::from_clamped(
                x.as_slice()
                    .iter()
                    .zip(&direction)
                    .map(|(&v, &d)| v + h * d)
                    .collect(),
            );
            let a = defended.query(&x, 0);
            let b = defended.query(&shifted, 0);
            if a == b {
                flat += 1;
            }
        }
        assert!(flat > 0, "expected some exactly-flat directions, got none");
    }
}

//! Attack losses computed from black-box softmax outputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Floor applied to probabilities before taking logarithms, so confident
/// models cannot produce infinite margins.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("class label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid probability vector: {0}")]
    InvalidProbabilities(String),
}

/// A softmax output: non-negative entries summing to 1 (within 1e-6), with at
/// least two classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector {
    probs: Vec<f64>,
}

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self, LossError> {
        if probs.len() < 2 {
            return Err(LossError::InvalidProbabilities(format!(
                "need at least 2 classes, got {}",
                probs.len()
            )));
        }
        let mut sum = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(LossError::InvalidProbabilities(format!(
                    "entry {i} is {p}"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-6 {
            return Err(LossError::InvalidProbabilities(format!(
                "entries sum to {sum}"
            )));
        }
        Ok(Self { probs })
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// Predicted class: argmax with ties broken toward the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = LossError;
    fn try_from(probs: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(probs)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.probs
    }
}

fn check_label(probs: &ProbVector, label: usize) -> Result<(), LossError> {
    if label >= probs.num_classes() {
        return Err(LossError::LabelOutOfRange {
            label,
            classes: probs.num_classes(),
        });
    }
    Ok(())
}

/// Hinged log-probability margin
/// `max(0, log p_y - max_{c != y} log p_c)`.
///
/// Zero exactly when some other class is at least as probable as the true
/// one, i.e. when misclassification is achieved (or the margin is exactly at
/// the boundary). Probabilities are floored at [`PROB_FLOOR`] before the
/// logarithm.
pub fn cw_loss(probs: &ProbVector, true_label: usize) -> Result<f64, LossError> {
    check_label(probs, true_label)?;
    let log_true = probs.probs[true_label].max(PROB_FLOOR).ln();
    let best_other = probs
        .probs
        .iter()
        .enumerate()
        .filter(|(c, _)| *c != true_label)
        .map(|(_, &p)| p.max(PROB_FLOOR).ln())
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((log_true - best_other).max(0.0))
}

/// Negative probability of the true class, `-p_y`; the loss minimized by the
/// projected-sign NES baseline.
pub fn neg_prob_loss(probs: &ProbVector, true_label: usize) -> Result<f64, LossError> {
    check_label(probs, true_label)?;
    Ok(-probs.probs[true_label])
}

/// True when the predicted class differs from the true label. Exact ties go
/// to the lowest class index, so a tie with the true label on index 0 is not
/// adversarial.
pub fn is_adversarial(probs: &ProbVector, true_label: usize) -> Result<bool, LossError> {
    check_label(probs, true_label)?;
    Ok(probs.argmax() != true_label)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(values: &[f64]) -> ProbVector {
        ProbVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn cw_loss_values() {
        // Uniform output sits exactly on the hinge boundary.
        let uniform = probs(&[0.25; 4]);
        assert_eq!(cw_loss(&uniform, 2).unwrap(), 0.0);

        // ln(0.7) - ln(0.2), frozen from a direct evaluation.
        let skewed = probs(&[0.7, 0.2, 0.1]);
        assert!((cw_loss(&skewed, 0).unwrap() - 1.252_762_968_495_368).abs() < 1e-12);

        // Negative margin clips to zero.
        assert_eq!(cw_loss(&skewed, 1).unwrap(), 0.0);
    }

    #[test]
    fn cw_loss_floors_probabilities() {
        let confident = probs(&[1.0, 0.0, 0.0]);
        let loss = cw_loss(&confident, 0).unwrap();
        assert!(loss.is_finite());
        assert!((loss - (1.0f64.ln() - PROB_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn neg_prob_loss_values() {
        let p = probs(&[0.7, 0.2, 0.1]);
        assert_eq!(neg_prob_loss(&p, 0).unwrap(), -0.7);
        let one_hot = probs(&[0.0, 1.0]);
        assert_eq!(neg_prob_loss(&one_hot, 1).unwrap(), -1.0);
        let uniform = probs(&[0.1; 10]);
        assert!((neg_prob_loss(&uniform, 3).unwrap() + 0.1).abs() < 1e-12);
    }

    #[test]
    fn adversarial_flag_and_tie_break() {
        let on_label = probs(&[0.1, 0.8, 0.1]);
        assert!(!is_adversarial(&on_label, 1).unwrap());
        assert!(is_adversarial(&on_label, 0).unwrap());

        // Exact tie between the true class and a higher index: argmax picks
        // the lower index, so the point is not adversarial.
        let tie = probs(&[0.4, 0.4, 0.2]);
        assert!(!is_adversarial(&tie, 0).unwrap());
        assert!(is_adversarial(&tie, 1).unwrap());
    }

    #[test]
    fn label_out_of_range_is_an_error() {
        let p = probs(&[0.5, 0.5]);
        assert!(matches!(
            cw_loss(&p, 2),
            Err(LossError::LabelOutOfRange { label: 2, classes: 2 })
        ));
        assert!(neg_prob_loss(&p, 9).is_err());
        assert!(is_adversarial(&p, 2).is_err());
    }

    #[test]
    fn prob_vector_validation() {
        assert!(ProbVector::new(vec![1.0]).is_err());
        assert!(ProbVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbVector::new(vec![-0.1, 1.1]).is_err());
        assert!(ProbVector::new(vec![f64::NAN, 1.0]).is_err());
        assert!(ProbVector::new(vec![0.5, 0.5]).is_ok());
    }
}

#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    fn prob_strategy() -> impl Strategy<Value = ProbVector> {
        proptest::collection::vec(1e-9f64..1.0, 2..12).prop_map(|raw| {
            let sum: f64 = raw.iter().sum();
            ProbVector::new(raw.into_iter().map(|p| p / sum).collect()).unwrap()
        })
    }

    proptest! {
        #[test]
        fn cw_zero_iff_adversarial_or_boundary(p in prob_strategy(), label_pick in any::<proptest::sample::Index>()) {
            let label = label_pick.index(p.num_classes());
            let loss = cw_loss(&p, label).unwrap();
            let adv = is_adversarial(&p, label).unwrap();
            let best_other = p
                .as_slice()
                .iter()
                .enumerate()
                .filter(|(c, _)| *c != label)
                .map(|(_, &v)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let boundary = p.as_slice()[label] == best_other;
            // Exactly one of "positive margin" and "adversarial or boundary".
            prop_assert_eq!(loss > 0.0, !(adv || boundary));
        }

        #[test]
        fn cw_invariant_under_non_true_relabeling(p in prob_strategy(), label_pick in any::<proptest::sample::Index>(), rot in 1usize..8) {
            let label = label_pick.index(p.num_classes());
            let baseline = cw_loss(&p, label).unwrap();

            // Rotate the non-true entries; the hinge only sees their max.
            let mut others: Vec<f64> = p
                .as_slice()
                .iter()
                .enumerate()
                .filter(|(c, _)| *c != label)
                .map(|(_, &v)| v)
                .collect();
            let shift = rot % others.len();
            others.rotate_left(shift);
            let mut rebuilt = Vec::with_capacity(p.num_classes());
            let mut it = others.into_iter();
            for c in 0..p.num_classes() {
                if c == label {
                    rebuilt.push(p.as_slice()[label]);
                } else {
                    rebuilt.push(it.next().unwrap());
                }
            }
            let permuted = ProbVector::new(rebuilt).unwrap();
            let loss = cw_loss(&permuted, label).unwrap();
            prop_assert!((loss - baseline).abs() < 1e-12);
        }
    }
}

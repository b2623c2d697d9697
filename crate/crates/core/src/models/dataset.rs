//! Synthetic desk-scale datasets, generated deterministically from a seed.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::geometry::UnitBoxPoint;
use crate::models::ModelError;
use crate::seed;

/// Labeled samples with a train/test split. Labels are `< num_classes`.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub train: Vec<(UnitBoxPoint, usize)>,
    pub test: Vec<(UnitBoxPoint, usize)>,
    pub num_classes: usize,
    pub dim: usize,
}

impl LabeledDataset {
    fn validate(self) -> Result<Self, ModelError> {
        if self.train.is_empty() {
            return Err(ModelError::EmptySplit("train"));
        }
        if self.test.is_empty() {
            return Err(ModelError::EmptySplit("test"));
        }
        Ok(self)
    }
}

/// Isotropic Gaussian blobs in the unit box.
///
/// Class centers are drawn away from the box walls with rejection sampling
/// favoring well-separated draws, so a small budget still has room to cross a
/// decision boundary without leaving the box.
pub fn gaussian_blobs(
    num_classes: usize,
    dim: usize,
    train_per_class: usize,
    test_per_class: usize,
    spread: f64,
    dataset_seed: u64,
) -> Result<LabeledDataset, ModelError> {
    if num_classes < 2 || num_classes > 10 {
        return Err(ModelError::InvalidSpec(format!(
            "blobs need 2..=10 classes, got {num_classes}"
        )));
    }
    if dim == 0 || spread <= 0.0 {
        return Err(ModelError::InvalidSpec(
            "blobs need dim >= 1 and spread > 0".into(),
        ));
    }
    let mut rng = seed::rng_from(seed::derive(dataset_seed, &[0xb10b]));
    let margin = 0.2;
    let centers = draw_separated_centers(&mut rng, num_classes, dim, margin);

    let mut draw_split = |count: usize| {
        let mut samples = Vec::with_capacity(count * num_classes);
        for (label, center) in centers.iter().enumerate() {
            for _ in 0..count {
                let values: Vec<f64> = center
                    .iter()
                    .map(|&c| {
                        let noise: f64 = rng.sample(StandardNormal);
                        c + spread * noise
                    })
                    .collect();
                samples.push((UnitBoxPoint::from_clamped(values), label));
            }
        }
        samples
    };

    let train = draw_split(train_per_class);
    let test = draw_split(test_per_class);
    LabeledDataset { train, test, num_classes, dim }.validate()
}

fn draw_separated_centers(
    rng: &mut impl Rng,
    num_classes: usize,
    dim: usize,
    margin: f64,
) -> Vec<Vec<f64>> {
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    for _ in 0..64 {
        let candidate: Vec<Vec<f64>> = (0..num_classes)
            .map(|_| {
                (0..dim)
                    .map(|_| rng.random_range(margin..(1.0 - margin)))
                    .collect()
            })
            .collect();
        let mut min_dist = f64::INFINITY;
        for i in 0..num_classes {
            for j in (i + 1)..num_classes {
                let d: f64 = candidate[i]
                    .iter()
                    .zip(&candidate[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                min_dist = min_dist.min(d);
            }
        }
        if best.as_ref().is_none_or(|(score, _)| min_dist > *score) {
            best = Some((min_dist, candidate));
        }
    }
    best.expect("at least one draw").1
}

/// Two interleaved half-moons in 2-D, scaled into the unit box.
pub fn two_moons(
    train_per_class: usize,
    test_per_class: usize,
    noise: f64,
    dataset_seed: u64,
) -> Result<LabeledDataset, ModelError> {
    if noise < 0.0 {
        return Err(ModelError::InvalidSpec("moons noise must be >= 0".into()));
    }
    let mut rng = seed::rng_from(seed::derive(dataset_seed, &[0x3700_75]));

    let mut draw_split = |count: usize| {
        let mut samples = Vec::with_capacity(2 * count);
        for label in 0..2 {
            for _ in 0..count {
                let t: f64 = rng.random_range(0.0..std::f64::consts::PI);
                let (mut px, mut py) = if label == 0 {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                };
                let nx: f64 = rng.sample(StandardNormal);
                let ny: f64 = rng.sample(StandardNormal);
                px += noise * nx;
                py += noise * ny;
                // Raw coordinates live roughly in [-1, 2] x [-0.6, 1.1];
                // map them affinely into the box with a small margin.
                let x = 0.05 + 0.9 * (px + 1.2) / 3.4;
                let y = 0.05 + 0.9 * (py + 0.8) / 2.1;
                samples.push((UnitBoxPoint::from_clamped(vec![x, y]), label));
            }
        }
        samples
    };

    let train = draw_split(train_per_class);
    let test = draw_split(test_per_class);
    LabeledDataset { train, test, num_classes: 2, dim: 2 }.validate()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_deterministic_per_seed() {
        let a = gaussian_blobs(3, 2, 10, 5, 0.05, 42).unwrap();
        let b = gaussian_blobs(3, 2, 10, 5, 0.05, 42).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);

        let c = gaussian_blobs(3, 2, 10, 5, 0.05, 43).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn blobs_have_expected_shape() {
        let data = gaussian_blobs(4, 8, 12, 6, 0.05, 7).unwrap();
        assert_eq!(data.train.len(), 48);
        assert_eq!(data.test.len(), 24);
        assert_eq!(data.num_classes, 4);
        for (x, label) in data.train.iter().chain(&data.test) {
            assert_eq!(x.dim(), 8);
            assert!(*label < 4);
        }
    }

    #[test]
    fn moons_are_deterministic_and_in_box() {
        let a = two_moons(20, 10, 0.05, 11).unwrap();
        let b = two_moons(20, 10, 0.05, 11).unwrap();
        assert_eq!(a.train, b.train);
        for (x, label) in &a.test {
            assert_eq!(x.dim(), 2);
            assert!(*label < 2);
            for &v in x.as_slice() {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn parameter_validation() {
        assert!(gaussian_blobs(1, 2, 5, 5, 0.05, 0).is_err());
        assert!(gaussian_blobs(11, 2, 5, 5, 0.05, 0).is_err());
        assert!(gaussian_blobs(3, 0, 5, 5, 0.05, 0).is_err());
        assert!(gaussian_blobs(3, 2, 0, 5, 0.05, 0).is_err());
        assert!(two_moons(5, 5, -0.1, 0).is_err());
    }
}

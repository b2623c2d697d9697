//! Seed-space geometry: the change-of-variable pipeline and the ℓp clipping
//! and projection that keep attack candidates inside the feasible set.
//!
//! Candidates start as unconstrained seed vectors, are expanded to the input
//! dimension (identity or per-channel bilinear interpolation), squashed into
//! the unit box by `x = (tanh(v) + 1) / 2`, and finally projected onto the
//! ℓp-ball of radius `tau` around the benign input. All operations are pure
//! functions and safe to call concurrently.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Margin used when inverting the squash; keeps `atanh` away from its poles.
pub const UNSQUASH_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid grid pair: seed {seed:?} does not map onto target {target:?}")]
    InvalidGridPair { seed: GridShape, target: GridShape },
    #[error("coordinate {index} outside the unit box: {value}")]
    OutOfUnitBox { index: usize, value: f64 },
    #[error("non-finite coordinate at index {index}")]
    NonFinite { index: usize },
    #[error("budget tau must be positive and finite, got {0}")]
    InvalidTau(f64),
}

/// Which ℓp-ball bounds the perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L2,
    Linf,
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Norm::L2 => write!(f, "l2"),
            Norm::Linf => write!(f, "linf"),
        }
    }
}

/// Perturbation budget: the norm and the ball radius `tau` (in normalized
/// input units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBudget {
    pub norm: Norm,
    pub tau: f64,
}

impl NormBudget {
    pub fn new(norm: Norm, tau: f64) -> Result<Self, GeometryError> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(GeometryError::InvalidTau(tau));
        }
        Ok(Self { norm, tau })
    }
}

/// A point inside the unit box `[0, 1]^d`, the model input domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct UnitBoxPoint {
    values: Vec<f64>,
}

impl UnitBoxPoint {
    /// Validates that every coordinate lies in `[0, 1]`.
    pub fn new(values: Vec<f64>) -> Result<Self, GeometryError> {
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(GeometryError::NonFinite { index });
            }
            if !(0.0..=1.0).contains(&value) {
                return Err(GeometryError::OutOfUnitBox { index, value });
            }
        }
        Ok(Self { values })
    }

    /// Clamps each coordinate into `[0, 1]`. Non-finite inputs map to `0`.
    pub fn from_clamped(values: Vec<f64>) -> Self {
        let values = values
            .into_iter()
            .map(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 })
            .collect();
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

impl TryFrom<Vec<f64>> for UnitBoxPoint {
    type Error = GeometryError;
    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<UnitBoxPoint> for Vec<f64> {
    fn from(point: UnitBoxPoint) -> Self {
        point.values
    }
}

/// `height x width x channels` layout of a flattened grid, row-major with
/// channels innermost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl GridShape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels }
    }

    /// Flat `1 x dim x 1` grid, used when the seed space equals input space.
    pub fn flat(dim: usize) -> Self {
        Self { height: 1, width: dim, channels: 1 }
    }

    pub fn dim(&self) -> usize {
        self.height * self.width * self.channels
    }
}

/// A seed vector `z` living on a grid, with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedVector {
    values: Vec<f64>,
    shape: GridShape,
}

impl SeedVector {
    pub fn new(values: Vec<f64>, shape: GridShape) -> Result<Self, GeometryError> {
        if values.len() != shape.dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: shape.dim(),
                got: values.len(),
            });
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(GeometryError::NonFinite { index });
            }
        }
        Ok(Self { values, shape })
    }

    /// Flat seed with a `1 x d x 1` grid.
    pub fn flat(values: Vec<f64>) -> Result<Self, GeometryError> {
        let shape = GridShape::flat(values.len());
        Self::new(values, shape)
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

/// Coordinate of `dst` in source units under the align-corners convention.
fn source_coord(dst: usize, dst_len: usize, src_len: usize) -> f64 {
    if dst_len == 1 {
        (src_len - 1) as f64 / 2.0
    } else {
        dst as f64 * (src_len - 1) as f64 / (dst_len - 1) as f64
    }
}

/// Per-channel bilinear resample between two grids with the same channel
/// count. Linear in `values`; works in both the enlarging and the reducing
/// direction.
pub fn bilinear_resize(
    values: &[f64],
    from: GridShape,
    to: GridShape,
) -> Result<Vec<f64>, GeometryError> {
    if values.len() != from.dim() {
        return Err(GeometryError::DimensionMismatch {
            expected: from.dim(),
            got: values.len(),
        });
    }
    if from.channels != to.channels
        || from.height == 0
        || from.width == 0
        || from.channels == 0
        || to.height == 0
        || to.width == 0
    {
        return Err(GeometryError::InvalidGridPair { seed: from, target: to });
    }
    let at = |i: usize, j: usize, ch: usize| values[(i * from.width + j) * from.channels + ch];
    let mut out = Vec::with_capacity(to.dim());
    for i in 0..to.height {
        let y = source_coord(i, to.height, from.height);
        let y0 = y.floor() as usize;
        let y1 = (y0 + 1).min(from.height - 1);
        let fy = y - y0 as f64;
        for j in 0..to.width {
            let x = source_coord(j, to.width, from.width);
            let x0 = x.floor() as usize;
            let x1 = (x0 + 1).min(from.width - 1);
            let fx = x - x0 as f64;
            for ch in 0..to.channels {
                let top = at(y0, x0, ch) * (1.0 - fx) + at(y0, x1, ch) * fx;
                let bottom = at(y1, x0, ch) * (1.0 - fx) + at(y1, x1, ch) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Ok(out)
}

/// Maps a seed onto a (possibly larger) target grid: identity when the
/// dimensions already agree, per-channel bilinear interpolation otherwise.
pub fn upsample(z: &SeedVector, target: GridShape) -> Result<Vec<f64>, GeometryError> {
    if z.values.len() == target.dim() {
        return Ok(z.values.clone());
    }
    let from = z.shape;
    if from.channels != target.channels
        || target.height < from.height
        || target.width < from.width
    {
        return Err(GeometryError::InvalidGridPair { seed: from, target });
    }
    bilinear_resize(&z.values, from, target)
}

/// Coordinatewise squash `(tanh(v) + 1) / 2` into the unit box.
pub fn squash(v: &[f64]) -> UnitBoxPoint {
    let values = v.iter().map(|&x| 0.5 * (x.tanh() + 1.0)).collect();
    // tanh lands in [-1, 1], so the result is already a valid box point.
    UnitBoxPoint { values }
}

/// Inverse of [`squash`]: `atanh(2x - 1)` after clamping coordinates into
/// `[UNSQUASH_EPS, 1 - UNSQUASH_EPS]` to avoid the poles at 0 and 1.
pub fn unsquash(x: &UnitBoxPoint) -> Vec<f64> {
    x.values
        .iter()
        .map(|&v| {
            let clamped = v.clamp(UNSQUASH_EPS, 1.0 - UNSQUASH_EPS);
            (2.0 * clamped - 1.0).atanh()
        })
        .collect()
}

/// Rescales `delta` onto the ℓ2-ball of radius `tau` when it lies outside;
/// otherwise returns it unchanged. The branch carries a 1e-12 relative slack
/// so that re-clipping an already-clipped vector is bitwise a no-op.
pub fn clip_l2(delta: &[f64], tau: f64) -> Vec<f64> {
    let norm = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
    if norm > tau * (1.0 + 1e-12) {
        let scale = tau / norm;
        delta.iter().map(|d| d * scale).collect()
    } else {
        delta.to_vec()
    }
}

/// Coordinatewise clamp of `delta` into `[-tau, tau]`.
pub fn clip_linf(delta: &[f64], tau: f64) -> Vec<f64> {
    delta.iter().map(|d| d.clamp(-tau, tau)).collect()
}

fn clip(delta: &[f64], budget: &NormBudget) -> Vec<f64> {
    match budget.norm {
        Norm::L2 => clip_l2(delta, budget.tau),
        Norm::Linf => clip_linf(delta, budget.tau),
    }
}

/// Projection shared by the public API and the attack loops; accepts raw
/// candidate coordinates that may lie outside the unit box.
pub(crate) fn project_values(
    x: &UnitBoxPoint,
    candidate: &[f64],
    budget: &NormBudget,
) -> Result<UnitBoxPoint, GeometryError> {
    if candidate.len() != x.dim() {
        return Err(GeometryError::DimensionMismatch {
            expected: x.dim(),
            got: candidate.len(),
        });
    }
    let delta: Vec<f64> = candidate
        .iter()
        .zip(&x.values)
        .map(|(&c, &xi)| c - xi)
        .collect();
    let clipped = clip(&delta, budget);
    let values = x
        .values
        .iter()
        .zip(&clipped)
        .map(|(&xi, &d)| (xi + d).clamp(0.0, 1.0))
        .collect();
    Ok(UnitBoxPoint { values })
}

/// Projects `candidate` onto the feasible set around `x`: adds the ℓp-clipped
/// offset `clip_p(candidate - x)` to `x` and clamps the sum back into the
/// unit box. The result satisfies `||result - x||_p <= tau + 1e-9`.
pub fn project_to_ball(
    x: &UnitBoxPoint,
    candidate: &UnitBoxPoint,
    budget: &NormBudget,
) -> Result<UnitBoxPoint, GeometryError> {
    project_values(x, candidate.as_slice(), budget)
}

/// Perturbation norm between a candidate and the benign input.
pub fn offset_norm(x: &UnitBoxPoint, candidate: &UnitBoxPoint, norm: Norm) -> f64 {
    match norm {
        Norm::L2 => x
            .values
            .iter()
            .zip(&candidate.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt(),
        Norm::Linf => x
            .values
            .iter()
            .zip(&candidate.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max),
    }
}

/// True when `candidate` lies in the ℓp-ball around `x` (with a 1e-9 slack
/// for floating-point round-off).
pub fn within_budget(x: &UnitBoxPoint, candidate: &UnitBoxPoint, budget: &NormBudget) -> bool {
    offset_norm(x, candidate, budget.norm) <= budget.tau + 1e-9
}

/// The seed-to-input geometry of one experiment: a seed grid and the input
/// grid it expands onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSpace {
    seed: GridShape,
    input: GridShape,
}

impl SeedSpace {
    /// Seed space identical to the input space.
    pub fn identity(dim: usize) -> Self {
        let shape = GridShape::flat(dim);
        Self { seed: shape, input: shape }
    }

    pub fn new(seed: GridShape, input: GridShape) -> Result<Self, GeometryError> {
        if seed.channels != input.channels
            || input.height < seed.height
            || input.width < seed.width
            || seed.dim() == 0
        {
            return Err(GeometryError::InvalidGridPair { seed, target: input });
        }
        Ok(Self { seed, input })
    }

    pub fn seed_dim(&self) -> usize {
        self.seed.dim()
    }

    pub fn input_dim(&self) -> usize {
        self.input.dim()
    }

    pub fn seed_shape(&self) -> GridShape {
        self.seed
    }

    pub fn input_shape(&self) -> GridShape {
        self.input
    }

    /// Expands a seed vector to input dimension (identity or bilinear).
    ///
    /// Panics on a wrong-length seed; the shape is fixed at construction.
    pub fn expand(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.seed_dim(), "seed length mismatch");
        if self.seed == self.input {
            return z.to_vec();
        }
        bilinear_resize(z, self.seed, self.input).expect("shapes validated at construction")
    }

    /// Pulls an input-dimension vector back to seed dimension. The bilinear
    /// reduction is a left inverse of [`SeedSpace::expand`] only in the
    /// identity case; otherwise it is the resampling approximation used for
    /// warm starts.
    pub fn reduce(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.input_dim(), "input length mismatch");
        if self.seed == self.input {
            return v.to_vec();
        }
        bilinear_resize(v, self.input, self.seed).expect("shapes validated at construction")
    }

    /// Full change of variable `g(z)`: expand then squash into the unit box.
    pub fn transform(&self, z: &[f64]) -> UnitBoxPoint {
        squash(&self.expand(z))
    }
}


#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    fn delta_strategy() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-5.0f64..5.0, 1..24)
    }

    proptest! {
        #[test]
        fn clip_l2_bound_and_idempotent(delta in delta_strategy(), tau in 1e-6f64..1.0) {
            let clipped = clip_l2(&delta, tau);
            let norm = clipped.iter().map(|d| d * d).sum::<f64>().sqrt();
            prop_assert!(norm <= tau + 1e-9);
            let twice = clip_l2(&clipped, tau);
            for (a, b) in clipped.iter().zip(&twice) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn clip_linf_bound_and_idempotent(delta in delta_strategy(), tau in 1e-6f64..1.0) {
            let clipped = clip_linf(&delta, tau);
            for &c in &clipped {
                prop_assert!((-tau..=tau).contains(&c));
            }
            let twice = clip_linf(&clipped, tau);
            prop_assert_eq!(clipped, twice);
        }

        #[test]
        fn projection_is_a_fixed_point(
            x in proptest::collection::vec(0.0f64..=1.0, 1..16),
            offsets in proptest::collection::vec(-2.0f64..2.0, 1..16),
            tau in 1e-3f64..0.9,
            use_l2 in any::<bool>(),
        ) {
            let dim = x.len().min(offsets.len());
            let x = UnitBoxPoint::new(x[..dim].to_vec()).unwrap();
            let candidate: Vec<f64> = x.as_slice().iter().zip(&offsets[..dim]).map(|(a, b)| a + b).collect();
            let candidate = UnitBoxPoint::from_clamped(candidate);
            let norm = if use_l2 { Norm::L2 } else { Norm::Linf };
            let budget = NormBudget::new(norm, tau).unwrap();

            let projected = project_to_ball(&x, &candidate, &budget).unwrap();
            prop_assert!(within_budget(&x, &projected, &budget));
            let twice = project_to_ball(&x, &projected, &budget).unwrap();
            for (a, b) in projected.as_slice().iter().zip(twice.as_slice()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn squash_unsquash_round_trip(v in proptest::collection::vec(1e-6f64..=(1.0 - 1e-6), 1..16)) {
            let x = UnitBoxPoint::new(v).unwrap();
            let back = squash(&unsquash(&x));
            for (a, b) in x.as_slice().iter().zip(back.as_slice()) {
                prop_assert!((a - b).abs() < 1e-5);
            }
        }

        #[test]
        fn squash_is_monotone(a in -10.0f64..10.0, b in -10.0f64..10.0) {
            prop_assume!(a < b);
            let out = squash(&[a, b]);
            prop_assert!(out.as_slice()[0] < out.as_slice()[1]);
        }

        #[test]
        fn upsample_is_linear(
            z1 in proptest::collection::vec(-3.0f64..3.0, 4),
            z2 in proptest::collection::vec(-3.0f64..3.0, 4),
            a in -2.0f64..2.0,
            b in -2.0f64..2.0,
        ) {
            let shape = GridShape::new(2, 2, 1);
            let target = GridShape::new(5, 3, 1);
            let combo: Vec<f64> = z1.iter().zip(&z2).map(|(p, q)| a * p + b * q).collect();
            let lhs = upsample(&SeedVector::new(combo, shape).unwrap(), target).unwrap();
            let up1 = upsample(&SeedVector::new(z1, shape).unwrap(), target).unwrap();
            let up2 = upsample(&SeedVector::new(z2, shape).unwrap(), target).unwrap();
            for (l, (u1, u2)) in lhs.iter().zip(up1.iter().zip(&up2)) {
                prop_assert!((l - (a * u1 + b * u2)).abs() < 1e-9);
            }
        }
    }
}

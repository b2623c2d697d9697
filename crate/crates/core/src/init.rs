//! Initialization strategies for the search-distribution mean, including a
//! ridge-regression warm start fit on previously found adversarial examples.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{unsquash, SeedSpace, UnitBoxPoint};
use crate::nattack::DistParams;
use crate::seed::{self, STREAM_JITTER};
use crate::textfmt::{format_f64, parse_f64_row, parse_usize, LineCursor, TextError};

/// Ridge penalty used by the closed-form fit; a positive value keeps the
/// normal equations solvable even for degenerate design matrices.
pub const RIDGE_LAMBDA: f64 = 1e-3;

/// Minimum number of `(input, adversarial)` pairs required for a fit.
pub const MIN_PAIRS: usize = 10;

pub const INITIALIZER_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum InitError {
    #[error("need at least {MIN_PAIRS} pairs to fit an initializer, got {got}")]
    TooFewPairs { got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("normal equations are not positive definite")]
    NotPositiveDefinite,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error at line {line} ({field}): {reason}")]
    Parse { line: usize, field: String, reason: String },
    #[error("unsupported initializer-file version: {found} (supported: 1)")]
    UnsupportedVersion { found: String },
}

impl From<TextError> for InitError {
    fn from(e: TextError) -> Self {
        InitError::Parse { line: e.line, field: e.field, reason: e.reason }
    }
}

/// Cold start: pull the input back through the change of variable and add
/// optional Gaussian jitter. With `jitter_sigma = 0` the result is a pure
/// function of the input.
pub fn init_from_input(
    x: &UnitBoxPoint,
    space: &SeedSpace,
    sigma: f64,
    jitter_sigma: f64,
    jitter_seed: u64,
) -> DistParams {
    let mut mu = space.reduce(&unsquash(x));
    if jitter_sigma > 0.0 {
        let mut rng = seed::rng_from(seed::derive(jitter_seed, &[STREAM_JITTER]));
        for v in &mut mu {
            let n: f64 = rng.sample(StandardNormal);
            *v += jitter_sigma * n;
        }
    }
    DistParams { mu, sigma }
}

/// Linear predictor from an input to a seed-space offset; warm starts are
/// `mu_0 = pullback(x) + P(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionInitializer {
    input_dim: usize,
    seed_dim: usize,
    /// Row-major `(seed_dim, input_dim + 1)`; the final column is the
    /// intercept.
    weights: Vec<f64>,
}

impl RegressionInitializer {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn seed_dim(&self) -> usize {
        self.seed_dim
    }

    /// Predicted seed-space offset for one input.
    pub fn predict_offset(&self, x: &UnitBoxPoint) -> Vec<f64> {
        assert_eq!(x.dim(), self.input_dim, "initializer input dimension");
        let cols = self.input_dim + 1;
        (0..self.seed_dim)
            .map(|row| {
                let coeffs = &self.weights[row * cols..(row + 1) * cols];
                let mut acc = coeffs[self.input_dim];
                for (c, &v) in coeffs[..self.input_dim].iter().zip(x.as_slice()) {
                    acc += c * v;
                }
                acc
            })
            .collect()
    }

    /// Warm-start parameters for one input.
    pub fn init_params(&self, x: &UnitBoxPoint, space: &SeedSpace, sigma: f64) -> DistParams {
        let offset = self.predict_offset(x);
        let mut mu = space.reduce(&unsquash(x));
        for (m, o) in mu.iter_mut().zip(&offset) {
            *m += o;
        }
        DistParams { mu, sigma }
    }
}

/// Fits the warm-start predictor by closed-form ridge regression from inputs
/// to the seed-space offset between each adversarial example and its input.
/// The intercept is not penalized; fitting is deterministic.
pub fn fit_regression_initializer(
    pairs: &[(UnitBoxPoint, UnitBoxPoint)],
    space: &SeedSpace,
) -> Result<RegressionInitializer, InitError> {
    fit_regression_initializer_with_lambda(pairs, space, RIDGE_LAMBDA)
}

pub fn fit_regression_initializer_with_lambda(
    pairs: &[(UnitBoxPoint, UnitBoxPoint)],
    space: &SeedSpace,
    lambda: f64,
) -> Result<RegressionInitializer, InitError> {
    if pairs.len() < MIN_PAIRS {
        return Err(InitError::TooFewPairs { got: pairs.len() });
    }
    let input_dim = space.input_dim();
    let seed_dim = space.seed_dim();
    for (x, x_adv) in pairs {
        if x.dim() != input_dim || x_adv.dim() != input_dim {
            return Err(InitError::DimensionMismatch {
                expected: input_dim,
                got: x.dim().max(x_adv.dim()),
            });
        }
    }
    let cols = input_dim + 1;

    // Normal equations: (A^T A + lambda * diag(1..1, 0)) W = A^T T, where A
    // has rows [x, 1] and T has rows pullback(unsquash(x_adv)) - pullback(unsquash(x)).
    let mut gram = vec![0.0; cols * cols];
    let mut rhs = vec![0.0; cols * seed_dim];
    let mut feature = vec![0.0; cols];
    for (x, x_adv) in pairs {
        feature[..input_dim].copy_from_slice(x.as_slice());
        feature[input_dim] = 1.0;
        let from = space.reduce(&unsquash(x));
        let to = space.reduce(&unsquash(x_adv));
        for i in 0..cols {
            for j in 0..cols {
                gram[i * cols + j] += feature[i] * feature[j];
            }
            for (k, (t, f)) in to.iter().zip(&from).enumerate() {
                rhs[i * seed_dim + k] += feature[i] * (t - f);
            }
        }
    }
    for i in 0..input_dim {
        gram[i * cols + i] += lambda;
    }

    let lower = cholesky(&gram, cols).ok_or(InitError::NotPositiveDefinite)?;
    let mut weights = vec![0.0; seed_dim * cols];
    let mut column = vec![0.0; cols];
    for k in 0..seed_dim {
        for i in 0..cols {
            column[i] = rhs[i * seed_dim + k];
        }
        let solved = cholesky_solve(&lower, cols, &column);
        for i in 0..cols {
            weights[k * cols + i] = solved[i];
        }
    }

    Ok(RegressionInitializer { input_dim, seed_dim, weights })
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix,
/// or `None` when a pivot is not positive.
fn cholesky(matrix: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut lower = vec![0.0; n * n];
    for j in 0..n {
        let mut diag = matrix[j * n + j];
        for k in 0..j {
            diag -= lower[j * n + k] * lower[j * n + k];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return None;
        }
        let pivot = diag.sqrt();
        lower[j * n + j] = pivot;
        for i in (j + 1)..n {
            let mut acc = matrix[i * n + j];
            for k in 0..j {
                acc -= lower[i * n + k] * lower[j * n + k];
            }
            lower[i * n + j] = acc / pivot;
        }
    }
    Some(lower)
}

/// Solves `L L^T w = b` by forward and backward substitution.
fn cholesky_solve(lower: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut acc = b[i];
        for k in 0..i {
            acc -= lower[i * n + k] * y[k];
        }
        y[i] = acc / lower[i * n + i];
    }
    let mut w = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = y[i];
        for k in (i + 1)..n {
            acc -= lower[k * n + i] * w[k];
        }
        w[i] = acc / lower[i * n + i];
    }
    w
}

/// Serializes a fitted initializer into the shared structured-text format.
pub fn write_initializer(init: &RegressionInitializer) -> String {
    let mut out = String::new();
    out.push_str(&format!("version {INITIALIZER_FORMAT_VERSION}\n"));
    out.push_str("kind initializer\n");
    out.push_str(&format!("dims {} {}\n", init.input_dim, init.seed_dim));
    let cols = init.input_dim + 1;
    out.push_str(&format!("weights {} {}\n", init.seed_dim, cols));
    for row in 0..init.seed_dim {
        let cells: Vec<String> = init.weights[row * cols..(row + 1) * cols]
            .iter()
            .map(|&v| format_f64(v))
            .collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out.push_str("end\n");
    out
}

/// Parses the initializer text format, naming the offending field on failure.
pub fn parse_initializer(text: &str) -> Result<RegressionInitializer, InitError> {
    const MAX_DIM: usize = 1 << 20;
    let mut cursor = LineCursor::new(text);

    let (line, content) = cursor.expect_line("version")?;
    let version = content
        .strip_prefix("version ")
        .ok_or_else(|| TextError::new(line, "version", "expected `version <n>`"))?;
    if version.trim() != INITIALIZER_FORMAT_VERSION.to_string() {
        return Err(InitError::UnsupportedVersion { found: version.trim().to_string() });
    }

    let (line, content) = cursor.expect_line("kind")?;
    if content != "kind initializer" {
        return Err(TextError::new(
            line,
            "kind",
            format!("expected `kind initializer`, got {content:?}"),
        )
        .into());
    }

    let (line, content) = cursor.expect_line("dims")?;
    let rest = content
        .strip_prefix("dims")
        .ok_or_else(|| TextError::new(line, "dims", "expected `dims <input> <seed>`"))?;
    let dims: Vec<usize> = rest
        .split_whitespace()
        .map(|t| parse_usize(t, line, "dims"))
        .collect::<Result<_, _>>()?;
    if dims.len() != 2 {
        return Err(TextError::new(line, "dims", "expected exactly two dimensions").into());
    }
    let (input_dim, seed_dim) = (dims[0], dims[1]);
    if input_dim == 0 || seed_dim == 0 || input_dim > MAX_DIM || seed_dim > MAX_DIM {
        return Err(TextError::new(line, "dims", "dimension out of range").into());
    }
    let cols = input_dim + 1;

    let (line, content) = cursor.expect_line("weights")?;
    let expected = format!("weights {seed_dim} {cols}");
    if content != expected {
        return Err(TextError::new(
            line,
            "weights",
            format!("expected {expected:?}, got {content:?}"),
        )
        .into());
    }
    let mut weights = Vec::new();
    for _ in 0..seed_dim {
        let (line, content) = cursor.expect_line("weights row")?;
        weights.extend(parse_f64_row(line, content, cols, "weights row")?);
    }

    let (line, content) = cursor.expect_line("end")?;
    if content != "end" {
        return Err(TextError::new(line, "end", format!("expected `end`, got {content:?}")).into());
    }
    cursor.expect_end().map_err(InitError::from)?;

    Ok(RegressionInitializer { input_dim, seed_dim, weights })
}

pub fn save_initializer(init: &RegressionInitializer, path: &Path) -> Result<(), InitError> {
    std::fs::write(path, write_initializer(init))
        .map_err(|source| InitError::Io { path: path.to_path_buf(), source })
}

pub fn load_initializer(path: &Path) -> Result<RegressionInitializer, InitError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| InitError::Io { path: path.to_path_buf(), source })?;
    parse_initializer(&text)
}

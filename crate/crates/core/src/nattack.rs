//! The distribution-learning attack: gradient-free optimization of a
//! Gaussian `N(mu, sigma^2)` over seed space so that transformed, projected
//! samples are likely adversarial.
//!
//! Each iteration draws a batch of seeds around the current mean, pushes them
//! through the change-of-variable pipeline and the feasibility projection,
//! queries the model, z-scores the batch losses, and moves the mean along the
//! fitness-weighted noise:
//!
//! ```text
//! mu <- mu - eta / (b * sigma) * sum_i zscore(f)_i * eps_i
//! ```
//!
//! Batch evaluations run in parallel; every draw is keyed by
//! `(sample_seed, iteration, sample index)` so results are identical
//! regardless of worker scheduling.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    self, GeometryError, NormBudget, SeedSpace, UnitBoxPoint,
};
use crate::loss::{cw_loss, is_adversarial, neg_prob_loss};
use crate::models::BlackboxModel;
use crate::seed::{self, STREAM_QUERY, STREAM_SAMPLE};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("invalid attack configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Parameters of the search distribution: seed-space mean and scalar
/// bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistParams {
    pub mu: Vec<f64>,
    pub sigma: f64,
}

impl DistParams {
    pub fn new(mu: Vec<f64>, sigma: f64) -> Result<Self, AttackError> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(AttackError::InvalidConfig(format!(
                "sigma must be positive and finite, got {sigma}"
            )));
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(AttackError::InvalidConfig("mu has non-finite entries".into()));
        }
        Ok(Self { mu, sigma })
    }
}

/// Attack hyperparameters. Defaults are the reference setting: 600
/// iterations, batches of 300, bandwidth `sigma = 0.1` (variance 0.01), and a
/// constant learning rate of 0.008.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub budget: NormBudget,
    /// Maximum number of iterations `T`.
    pub max_iters: usize,
    /// Batch size `b`; at least 2 so the z-score has a usable spread.
    pub batch_size: usize,
    /// Learning rate `eta`.
    pub learning_rate: f64,
    /// Bandwidth of the search distribution.
    pub sigma: f64,
    pub sample_seed: u64,
    /// Stop at the first iteration whose batch contains an adversarial
    /// sample.
    pub early_stop: bool,
    /// Draw the batch as mirrored `(eps, -eps)` pairs; requires an even
    /// batch size.
    pub antithetic: bool,
}

impl AttackConfig {
    pub fn new(budget: NormBudget) -> Self {
        Self {
            budget,
            max_iters: 600,
            batch_size: 300,
            learning_rate: 0.008,
            sigma: 0.1,
            sample_seed: 0,
            early_stop: true,
            antithetic: false,
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if self.max_iters < 1 {
            return Err(AttackError::InvalidConfig("max_iters must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(AttackError::InvalidConfig("batch_size must be >= 2".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(AttackError::InvalidConfig(
                "learning_rate must be positive and finite".into(),
            ));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(AttackError::InvalidConfig(
                "sigma must be positive and finite".into(),
            ));
        }
        if self.antithetic && self.batch_size % 2 != 0 {
            return Err(AttackError::InvalidConfig(
                "antithetic sampling needs an even batch size".into(),
            ));
        }
        Ok(())
    }
}

/// Per-iteration batch statistics.
#[derive(Debug, Clone)]
pub struct BatchStats {
    /// Raw (pre-z-score) loss of each batch sample.
    pub losses: Vec<f64>,
    /// Whether each sample was adversarial for its feasible candidate.
    pub adversarial: Vec<bool>,
    /// Queries spent this iteration (= batch size).
    pub queries: u64,
    /// Batch-mean raw loss.
    pub mean_loss: f64,
    /// The first feasible adversarial candidate of the batch, if any.
    pub first_adversarial: Option<(usize, UnitBoxPoint)>,
}

/// Result of one attack run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub success: bool,
    /// The adversarial point, feasible by construction, when successful.
    pub adversarial: Option<UnitBoxPoint>,
    /// Total model queries: batch size times iterations executed.
    pub queries: u64,
    /// 1-based iteration at which the first adversarial sample appeared.
    pub first_success_iter: Option<usize>,
    /// Batch-mean loss per executed iteration.
    pub loss_trace: Vec<f64>,
    pub final_params: DistParams,
}

/// Loss evaluated on a projected candidate, plus the misclassification flag
/// obtained from the same query.
#[derive(Debug, Clone, Copy)]
pub struct CandidateEval {
    pub loss: f64,
    pub adversarial: bool,
}

/// A loss oracle over feasible candidates. The success probes reuse the same
/// queries as the loss, so an attack costs exactly `batch * iterations`
/// queries.
pub trait CandidateObjective: Sync {
    fn eval(&self, candidate: &UnitBoxPoint, query_seed: u64) -> CandidateEval;
}

/// Which scalar loss the objective reads off the softmax output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Hinged log-probability margin.
    CarliniWagner,
    /// Negative true-class probability, the baseline's loss.
    NegProb,
}

/// Adapter: a black-box model plus a label and loss choice.
pub struct ModelObjective<'a> {
    model: &'a dyn BlackboxModel,
    true_label: usize,
    loss: LossKind,
}

impl<'a> ModelObjective<'a> {
    pub fn new(
        model: &'a dyn BlackboxModel,
        true_label: usize,
        loss: LossKind,
    ) -> Result<Self, AttackError> {
        if true_label >= model.num_classes() {
            return Err(AttackError::InvalidConfig(format!(
                "label {true_label} out of range for {} classes",
                model.num_classes()
            )));
        }
        Ok(Self { model, true_label, loss })
    }
}

impl CandidateObjective for ModelObjective<'_> {
    fn eval(&self, candidate: &UnitBoxPoint, query_seed: u64) -> CandidateEval {
        let probs = self.model.query(candidate, query_seed);
        let loss = match self.loss {
            LossKind::CarliniWagner => cw_loss(&probs, self.true_label),
            LossKind::NegProb => neg_prob_loss(&probs, self.true_label),
        }
        .expect("label validated at construction");
        let adversarial =
            is_adversarial(&probs, self.true_label).expect("label validated at construction");
        CandidateEval { loss, adversarial }
    }
}

/// Z-scores a batch of losses with the population (1/b) standard deviation;
/// returns all zeros when the losses are constant.
///
/// Computed through an exact rational form, rounded to f64 once per entry:
/// batches related by a positive affine map (`a * f + c` with the transform
/// exact in floating point) produce bit-identical scores, which carries over
/// to bit-identical mean updates.
pub fn zscore(losses: &[f64]) -> Vec<f64> {
    let b = losses.len();
    if b == 0 {
        return Vec::new();
    }
    let exact: Vec<BigRational> = losses
        .iter()
        .map(|&f| BigRational::from_float(f).expect("losses must be finite"))
        .collect();
    let count = BigRational::from_integer(BigInt::from(b as u64));

    let mut total = BigRational::zero();
    for e in &exact {
        total = total + e;
    }
    // b * f_i - sum(f): proportional to the deviation from the mean.
    let devs: Vec<BigRational> = exact.iter().map(|e| e * &count - &total).collect();
    let mut dev_sq_sum = BigRational::zero();
    for d in &devs {
        dev_sq_sum = dev_sq_sum + d * d;
    }
    if dev_sq_sum.is_zero() {
        return vec![0.0; b];
    }
    devs.iter()
        .map(|d| {
            if d.is_zero() {
                return 0.0;
            }
            // z_i^2 = b * dev_i^2 / sum(dev^2), an exact scale-free rational.
            let ratio = d * d * &count / &dev_sq_sum;
            let magnitude = ratio.to_f64().unwrap_or(0.0).sqrt();
            if d.is_negative() {
                -magnitude
            } else {
                magnitude
            }
        })
        .collect()
}

/// Standard-normal noise for sample `index` of iteration `iter`, fully
/// determined by `(sample_seed, iter, index)` so batches can be evaluated in
/// any order. With `antithetic`, odd indices mirror their even partner.
pub(crate) fn draw_epsilon(
    sample_seed: u64,
    iter: u64,
    index: u64,
    dim: usize,
    antithetic: bool,
) -> Vec<f64> {
    let source = if antithetic { index / 2 } else { index };
    let mut rng = seed::rng_from(seed::derive(sample_seed, &[STREAM_SAMPLE, iter, source]));
    let mut eps: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    if antithetic && index % 2 == 1 {
        for e in &mut eps {
            *e = -*e;
        }
    }
    eps
}

pub(crate) fn query_seed(sample_seed: u64, iter: u64, index: u64) -> u64 {
    seed::derive(sample_seed, &[STREAM_QUERY, iter, index])
}

struct Sample {
    eps: Vec<f64>,
    loss: f64,
    adversarial: bool,
    candidate: UnitBoxPoint,
}

/// One optimization step against an arbitrary candidate objective.
pub fn nattack_step_with(
    params: &DistParams,
    x: &UnitBoxPoint,
    objective: &dyn CandidateObjective,
    space: &SeedSpace,
    config: &AttackConfig,
    iter: usize,
) -> Result<(DistParams, BatchStats), AttackError> {
    config.validate()?;
    let m = space.seed_dim();
    if params.mu.len() != m {
        return Err(AttackError::InvalidConfig(format!(
            "mu has {} entries but the seed space has {m}",
            params.mu.len()
        )));
    }
    if x.dim() != space.input_dim() {
        return Err(GeometryError::DimensionMismatch {
            expected: space.input_dim(),
            got: x.dim(),
        }
        .into());
    }
    let b = config.batch_size;

    let samples: Vec<Sample> = (0..b)
        .into_par_iter()
        .map(|i| {
            let eps = draw_epsilon(config.sample_seed, iter as u64, i as u64, m, config.antithetic);
            let z: Vec<f64> = params
                .mu
                .iter()
                .zip(&eps)
                .map(|(&mu_j, &e)| mu_j + params.sigma * e)
                .collect();
            let candidate = geometry::project_values(x, space.transform(&z).as_slice(), &config.budget)
                .expect("dimensions validated above");
            debug_assert!(geometry::within_budget(x, &candidate, &config.budget));
            let eval = objective.eval(&candidate, query_seed(config.sample_seed, iter as u64, i as u64));
            Sample { eps, loss: eval.loss, adversarial: eval.adversarial, candidate }
        })
        .collect();

    let losses: Vec<f64> = samples.iter().map(|s| s.loss).collect();
    let shaped = zscore(&losses);

    // Fixed-order accumulation: parallel evaluation must not perturb the sum.
    let mut acc = vec![0.0; m];
    for (sample, &f) in samples.iter().zip(&shaped) {
        for (a, &e) in acc.iter_mut().zip(&sample.eps) {
            *a += f * e;
        }
    }
    let scale = config.learning_rate / (b as f64 * params.sigma);
    let new_mu: Vec<f64> = params
        .mu
        .iter()
        .zip(&acc)
        .map(|(&mu_j, &a)| mu_j - scale * a)
        .collect();

    let adversarial: Vec<bool> = samples.iter().map(|s| s.adversarial).collect();
    let first_adversarial = samples
        .iter()
        .enumerate()
        .find(|(_, s)| s.adversarial)
        .map(|(i, s)| (i, s.candidate.clone()));
    let mean_loss = losses.iter().sum::<f64>() / b as f64;

    Ok((
        DistParams { mu: new_mu, sigma: params.sigma },
        BatchStats {
            losses,
            adversarial,
            queries: b as u64,
            mean_loss,
            first_adversarial,
        },
    ))
}

/// One optimization step against a model, using the hinged log-margin loss.
pub fn nattack_step(
    params: &DistParams,
    x: &UnitBoxPoint,
    true_label: usize,
    model: &dyn BlackboxModel,
    space: &SeedSpace,
    config: &AttackConfig,
    iter: usize,
) -> Result<(DistParams, BatchStats), AttackError> {
    let objective = ModelObjective::new(model, true_label, LossKind::CarliniWagner)?;
    nattack_step_with(params, x, &objective, space, config, iter)
}

/// Default initialization when none is supplied: pull the input back through
/// the change of variable, `mu_0 = atanh(2x - 1)` in the identity case.
pub fn default_init(x: &UnitBoxPoint, space: &SeedSpace, sigma: f64) -> DistParams {
    DistParams { mu: space.reduce(&geometry::unsquash(x)), sigma }
}

/// Runs the full attack. The caller is responsible for only attacking inputs
/// the model classifies correctly.
///
/// Candidates double as success probes: the run stops (under `early_stop`)
/// at the first iteration whose batch contains an adversarial sample, and
/// `queries` is exactly `batch_size * iterations executed`. On failure the
/// final distribution parameters are returned for post-hoc sampling.
pub fn run_nattack(
    x: &UnitBoxPoint,
    true_label: usize,
    model: &dyn BlackboxModel,
    space: &SeedSpace,
    config: &AttackConfig,
    init: Option<DistParams>,
) -> Result<AttackOutcome, AttackError> {
    config.validate()?;
    let objective = ModelObjective::new(model, true_label, LossKind::CarliniWagner)?;
    let mut params = match init {
        Some(p) => {
            if p.mu.len() != space.seed_dim() {
                return Err(AttackError::InvalidConfig(format!(
                    "initial mu has {} entries but the seed space has {}",
                    p.mu.len(),
                    space.seed_dim()
                )));
            }
            p
        }
        None => default_init(x, space, config.sigma),
    };

    let mut queries = 0u64;
    let mut loss_trace = Vec::new();
    let mut adversarial: Option<UnitBoxPoint> = None;
    let mut first_success_iter = None;

    for iter in 0..config.max_iters {
        let (next, stats) = nattack_step_with(&params, x, &objective, space, config, iter)?;
        params = next;
        queries += stats.queries;
        loss_trace.push(stats.mean_loss);
        if first_success_iter.is_none() {
            if let Some((_, candidate)) = stats.first_adversarial {
                first_success_iter = Some(iter + 1);
                adversarial = Some(candidate);
                if config.early_stop {
                    break;
                }
            }
        }
    }

    Ok(AttackOutcome {
        success: adversarial.is_some(),
        adversarial,
        queries,
        first_success_iter,
        loss_trace,
        final_params: params,
    })
}

/// Monte-Carlo estimate of the smoothed objective
/// `E_{z ~ N(mu, sigma^2)} f(z)` for an arbitrary seed-space function. The
/// closure also receives a per-sample query seed.
pub fn smoothed_objective_with<F>(
    params: &DistParams,
    n_samples: usize,
    sample_seed: u64,
    f: F,
) -> f64
where
    F: Fn(&[f64], u64) -> f64 + Sync,
{
    assert!(n_samples >= 1, "need at least one sample");
    let m = params.mu.len();
    let total: f64 = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let eps = draw_epsilon(sample_seed, 0, i as u64, m, false);
            let z: Vec<f64> = params
                .mu
                .iter()
                .zip(&eps)
                .map(|(&mu_j, &e)| mu_j + params.sigma * e)
                .collect();
            f(&z, query_seed(sample_seed, 0, i as u64))
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    total / n_samples as f64
}

/// Monte-Carlo estimate of the attack's smoothed objective: the expected
/// hinged log-margin of projected, transformed samples.
#[allow(clippy::too_many_arguments)]
pub fn smoothed_objective(
    params: &DistParams,
    x: &UnitBoxPoint,
    true_label: usize,
    model: &dyn BlackboxModel,
    space: &SeedSpace,
    budget: &NormBudget,
    n_samples: usize,
    sample_seed: u64,
) -> Result<f64, AttackError> {
    let objective = ModelObjective::new(model, true_label, LossKind::CarliniWagner)?;
    if x.dim() != space.input_dim() {
        return Err(GeometryError::DimensionMismatch {
            expected: space.input_dim(),
            got: x.dim(),
        }
        .into());
    }
    Ok(smoothed_objective_with(params, n_samples, sample_seed, |z, qseed| {
        let candidate = geometry::project_values(x, space.transform(z).as_slice(), budget)
            .expect("dimensions validated above");
        objective.eval(&candidate, qseed).loss
    }))
}

/// Plain (un-z-scored) NES estimate `1/(b*sigma) * sum_i f(mu + sigma*eps_i) * eps_i`
/// of the smoothed objective's gradient, evaluated directly in seed space.
pub fn raw_nes_estimate<F>(
    params: &DistParams,
    batch_size: usize,
    sample_seed: u64,
    antithetic: bool,
    f: F,
) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let m = params.mu.len();
    let contributions: Vec<Vec<f64>> = (0..batch_size)
        .into_par_iter()
        .map(|i| {
            let eps = draw_epsilon(sample_seed, 0, i as u64, m, antithetic);
            let z: Vec<f64> = params
                .mu
                .iter()
                .zip(&eps)
                .map(|(&mu_j, &e)| mu_j + params.sigma * e)
                .collect();
            let value = f(&z);
            eps.into_iter().map(|e| value * e).collect()
        })
        .collect();
    let mut estimate = vec![0.0; m];
    for contribution in &contributions {
        for (g, &c) in estimate.iter_mut().zip(contribution) {
            *g += c;
        }
    }
    let scale = 1.0 / (batch_size as f64 * params.sigma);
    for g in &mut estimate {
        *g *= scale;
    }
    estimate
}


#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn zscore_affine_invariance(
            raw in proptest::collection::vec(0u32..2_000_000, 2..40),
            scale_num in 1u32..64,
            shift_num in 0u32..1024,
        ) {
            // Dyadic losses keep the affine transform exact in f64.
            let losses: Vec<f64> = raw.iter().map(|&r| r as f64 / 1024.0).collect();
            let a = scale_num as f64 / 8.0;
            let c = shift_num as f64 / 8.0;
            let transformed: Vec<f64> = losses.iter().map(|&f| a * f + c).collect();
            let base = zscore(&losses);
            let shifted = zscore(&transformed);
            for (p, q) in base.iter().zip(&shifted) {
                prop_assert_eq!(p.to_bits(), q.to_bits());
            }
        }

        #[test]
        fn zscore_is_bounded_and_centered(losses in proptest::collection::vec(-100.0f64..100.0, 2..40)) {
            let z = zscore(&losses);
            let b = losses.len() as f64;
            for &v in &z {
                prop_assert!(v.abs() <= b.sqrt() + 1e-9);
            }
            let mean: f64 = z.iter().sum::<f64>() / b;
            prop_assert!(mean.abs() < 1e-9);
        }
    }
}

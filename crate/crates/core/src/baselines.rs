//! The projected-sign NES baseline and the ablation ladder between it and
//! the distribution-learning attack.
//!
//! The baseline estimates the input-space gradient with Gaussian smoothing
//! and takes signed, projected steps:
//!
//! ```text
//! x_{t+1} <- proj_S(x_t - eta * sign(1/(b*sigma) * sum_i f_i * eps_i))
//! ```
//!
//! Three toggles move it toward the main attack: evaluating losses on
//! projected candidates, generating candidates through the tanh change of
//! variable, and Algorithm-style fitness shaping (z-scored hinge-margin
//! losses with the plain mean update instead of the signed step). With every
//! toggle on, candidate generation and updates are bit-identical to
//! [`crate::nattack::run_nattack`] at equal seeds.

use serde::{Deserialize, Serialize};

use crate::geometry::{self, GeometryError, SeedSpace, UnitBoxPoint};
use crate::models::BlackboxModel;
use crate::nattack::{
    default_init, draw_epsilon, query_seed, zscore, AttackConfig, AttackError, AttackOutcome,
    BatchStats, CandidateObjective, DistParams, LossKind, ModelObjective,
};

/// Which pieces of the distribution-learning formulation are enabled.
/// All-false is the plain projected-sign NES baseline; all-true reproduces
/// the main attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct AblationFlags {
    /// Evaluate losses on `proj_S(candidate)` instead of the raw sample.
    pub projection_in_objective: bool,
    /// Generate candidates through the tanh change of variable; the iterate
    /// then lives in seed space.
    pub use_transform_g: bool,
    /// Z-score the batch losses (hinge-margin loss, plain mean update)
    /// instead of the signed step on the negative-probability loss.
    pub use_zscore: bool,
}

impl AblationFlags {
    /// The baseline: no projection in the objective, no transform, signed
    /// steps on the negative-probability loss.
    pub fn ql() -> Self {
        Self::default()
    }

    /// Every toggle on; equivalent to the main attack.
    pub fn full() -> Self {
        Self {
            projection_in_objective: true,
            use_transform_g: true,
            use_zscore: true,
        }
    }

    /// The cumulative ladder `[baseline, +projection, +transform, +zscore]`.
    pub fn ladder() -> [AblationFlags; 4] {
        [
            Self::ql(),
            Self { projection_in_objective: true, ..Self::ql() },
            Self {
                projection_in_objective: true,
                use_transform_g: true,
                ..Self::ql()
            },
            Self::full(),
        ]
    }

    pub fn loss_kind(&self) -> LossKind {
        if self.use_zscore {
            LossKind::CarliniWagner
        } else {
            LossKind::NegProb
        }
    }
}

impl std::fmt::Display for AblationFlags {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "proj={}+g={}+zscore={}",
            self.projection_in_objective as u8, self.use_transform_g as u8, self.use_zscore as u8
        )
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

struct AblationSample {
    eps: Vec<f64>,
    loss: f64,
    adversarial: bool,
    candidate: UnitBoxPoint,
}

/// One step of the flag-selected attack variant. `state` is the current
/// iterate: a feasible input-space point without the transform, the
/// seed-space mean with it.
fn ablation_step(
    state: &[f64],
    x: &UnitBoxPoint,
    objective: &dyn CandidateObjective,
    space: &SeedSpace,
    config: &AttackConfig,
    flags: AblationFlags,
    iter: usize,
) -> Result<(Vec<f64>, BatchStats), AttackError> {
    use rayon::prelude::*;

    let dim = state.len();
    let b = config.batch_size;

    let samples: Vec<AblationSample> = (0..b)
        .into_par_iter()
        .map(|i| {
            let eps =
                draw_epsilon(config.sample_seed, iter as u64, i as u64, dim, config.antithetic);
            let raw: Vec<f64> = state
                .iter()
                .zip(&eps)
                .map(|(&s, &e)| s + config.sigma * e)
                .collect();
            let (candidate, feasible) = if flags.use_transform_g {
                let mapped = space.transform(&raw);
                if flags.projection_in_objective {
                    let projected = geometry::project_values(x, mapped.as_slice(), &config.budget)
                        .expect("dimensions validated by caller");
                    (projected, true)
                } else {
                    let feasible = geometry::within_budget(x, &mapped, &config.budget);
                    (mapped, feasible)
                }
            } else if flags.projection_in_objective {
                let projected = geometry::project_values(x, &raw, &config.budget)
                    .expect("dimensions validated by caller");
                (projected, true)
            } else {
                // Raw probes may leave the feasible set; they are clamped to
                // the model domain and only feasible ones count as successes.
                let clamped = UnitBoxPoint::from_clamped(raw);
                let feasible = geometry::within_budget(x, &clamped, &config.budget);
                (clamped, feasible)
            };
            let eval =
                objective.eval(&candidate, query_seed(config.sample_seed, iter as u64, i as u64));
            AblationSample {
                eps,
                loss: eval.loss,
                adversarial: eval.adversarial && feasible,
                candidate,
            }
        })
        .collect();

    let losses: Vec<f64> = samples.iter().map(|s| s.loss).collect();

    let next_free: Vec<f64> = if flags.use_zscore {
        let shaped = zscore(&losses);
        let mut acc = vec![0.0; dim];
        for (sample, &f) in samples.iter().zip(&shaped) {
            for (a, &e) in acc.iter_mut().zip(&sample.eps) {
                *a += f * e;
            }
        }
        let scale = config.learning_rate / (b as f64 * config.sigma);
        state.iter().zip(&acc).map(|(&s, &a)| s - scale * a).collect()
    } else {
        let mut acc = vec![0.0; dim];
        for sample in &samples {
            for (a, &e) in acc.iter_mut().zip(&sample.eps) {
                *a += sample.loss * e;
            }
        }
        let scale = 1.0 / (b as f64 * config.sigma);
        state
            .iter()
            .zip(&acc)
            .map(|(&s, &a)| s - config.learning_rate * sign(scale * a))
            .collect()
    };

    // Input-space iterates are re-projected onto the feasible set; seed-space
    // means are unconstrained.
    let next_state = if flags.use_transform_g {
        next_free
    } else {
        geometry::project_values(x, &next_free, &config.budget)?.into_vec()
    };

    let adversarial: Vec<bool> = samples.iter().map(|s| s.adversarial).collect();
    let first_adversarial = samples
        .iter()
        .enumerate()
        .find(|(_, s)| s.adversarial)
        .map(|(i, s)| (i, s.candidate.clone()));
    let mean_loss = losses.iter().sum::<f64>() / b as f64;

    Ok((
        next_state,
        BatchStats {
            losses,
            adversarial,
            queries: b as u64,
            mean_loss,
            first_adversarial,
        },
    ))
}

/// One projected-sign NES step from the feasible iterate `x_t`: estimates the
/// gradient from `b` Gaussian probes around `x_t` (antithetic when the config
/// says so), takes a signed step of size `eta`, and projects back onto the
/// feasible set. The loss is the negative true-class probability.
pub fn ql_step(
    x_t: &UnitBoxPoint,
    x: &UnitBoxPoint,
    true_label: usize,
    model: &dyn BlackboxModel,
    config: &AttackConfig,
    iter: usize,
) -> Result<(UnitBoxPoint, BatchStats), AttackError> {
    config.validate()?;
    if x_t.dim() != x.dim() {
        return Err(GeometryError::DimensionMismatch {
            expected: x.dim(),
            got: x_t.dim(),
        }
        .into());
    }
    debug_assert!(geometry::within_budget(x, x_t, &config.budget));
    let objective = ModelObjective::new(model, true_label, LossKind::NegProb)?;
    let space = SeedSpace::identity(x.dim());
    let (next, stats) = ablation_step(
        x_t.as_slice(),
        x,
        &objective,
        &space,
        config,
        AblationFlags::ql(),
        iter,
    )?;
    Ok((UnitBoxPoint::new(next).expect("projected iterate is a box point"), stats))
}

/// Runs the attack variant selected by `flags`, with the same accounting as
/// the main attack: candidates double as success probes (only feasible ones
/// count), queries equal `batch * iterations`, and `early_stop` halts at the
/// first adversarial batch.
pub fn run_ablation(
    x: &UnitBoxPoint,
    true_label: usize,
    model: &dyn BlackboxModel,
    space: &SeedSpace,
    config: &AttackConfig,
    flags: AblationFlags,
) -> Result<AttackOutcome, AttackError> {
    config.validate()?;
    if x.dim() != space.input_dim() {
        return Err(GeometryError::DimensionMismatch {
            expected: space.input_dim(),
            got: x.dim(),
        }
        .into());
    }
    let objective = ModelObjective::new(model, true_label, flags.loss_kind())?;

    let mut state: Vec<f64> = if flags.use_transform_g {
        default_init(x, space, config.sigma).mu
    } else {
        x.as_slice().to_vec()
    };

    let mut queries = 0u64;
    let mut loss_trace = Vec::new();
    let mut adversarial: Option<UnitBoxPoint> = None;
    let mut first_success_iter = None;

    for iter in 0..config.max_iters {
        let (next, stats) = ablation_step(&state, x, &objective, space, config, flags, iter)?;
        state = next;
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

    // Input-space variants report the pulled-back iterate so failed runs
    // still expose a seed-space distribution for post-hoc sampling.
    let final_mu = if flags.use_transform_g {
        state
    } else {
        space.reduce(&geometry::unsquash(&UnitBoxPoint::from_clamped(state)))
    };

    Ok(AttackOutcome {
        success: adversarial.is_some(),
        adversarial,
        queries,
        first_success_iter,
        loss_trace,
        final_params: DistParams { mu: final_mu, sigma: config.sigma },
    })
}

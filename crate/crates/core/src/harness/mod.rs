//! Experiment orchestration: benchmark runs over correctly classified
//! inputs, success-vs-iteration curves, query-efficiency series, transfer
//! matrices, and result export.

pub mod export;
pub mod transfer;

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{run_ablation, AblationFlags};
use crate::geometry::{SeedSpace, UnitBoxPoint};
use crate::init::RegressionInitializer;
use crate::models::{BlackboxModel, ModelError};
use crate::nattack::{run_nattack, AttackConfig, AttackError, AttackOutcome};
use crate::seed::{self, STREAM_EVAL, STREAM_INPUT};

pub use export::{
    curve_svg, export_csv, export_curve_svg, export_json, export_transfer_csv,
    export_transfer_json, parse_report_json, report_to_csv_string, transfer_to_csv_string,
};
pub use transfer::{
    build_adversarial_pool, build_transfer_matrix, build_zoo, AdversarialPool, PoolEntry,
    TransferMatrix, ZooMemberSpec,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no correctly classified inputs to attack (split size {0})")]
    NoAttackableInputs(usize),
    #[error("degenerate victim: correctly classified inputs span a single class")]
    DegenerateVictim,
    #[error("invalid harness configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Which attack the benchmark runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum AttackSelector {
    /// The distribution-learning attack.
    NAttack,
    /// The projected-sign NES baseline (all ablation toggles off).
    Ql,
    /// An explicit point on the ablation ladder.
    Ablation { flags: AblationFlags },
}

impl std::fmt::Display for AttackSelector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AttackSelector::NAttack => write!(f, "nattack"),
            AttackSelector::Ql => write!(f, "ql"),
            AttackSelector::Ablation { flags } => write!(f, "ablation[{flags}]"),
        }
    }
}

/// Full benchmark configuration; echoed verbatim into every report so a
/// result file documents how it was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub attack: AttackSelector,
    pub attack_config: AttackConfig,
    /// How many correctly classified inputs to attack.
    pub num_inputs: usize,
    pub master_seed: u64,
    pub seed_space: SeedSpace,
    /// Free-form description of the victim and dataset.
    pub description: String,
}

impl BenchmarkConfig {
    pub fn new(attack: AttackSelector, attack_config: AttackConfig, input_dim: usize) -> Self {
        Self {
            attack,
            attack_config,
            num_inputs: 200,
            master_seed: 0,
            seed_space: SeedSpace::identity(input_dim),
            description: String::new(),
        }
    }
}

/// Outcome of attacking one input, keyed by its index in the original split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputOutcome {
    pub input_id: usize,
    pub label: usize,
    pub outcome: AttackOutcome,
}

/// Nearest-rank percentiles over per-input query counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPercentiles {
    pub p10: u64,
    pub p25: u64,
    pub p50: u64,
    pub p75: u64,
    pub p90: u64,
    pub mean: f64,
    /// Mean queries-to-first-success over successful inputs only.
    pub mean_per_success: Option<f64>,
}

/// One point of the query-efficiency series: success rate reached by an
/// iteration and the average queries spent per successful input up to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyPoint {
    pub iteration: usize,
    pub success_rate: f64,
    pub avg_queries_per_success: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub config: BenchmarkConfig,
    pub warm_start: bool,
    pub outcomes: Vec<InputOutcome>,
    pub success_rate: f64,
    /// Cumulative success fraction by iteration (1-based); non-decreasing.
    pub curve: Vec<f64>,
    /// Sum of per-outcome query counts.
    pub total_queries: u64,
    pub query_percentiles: QueryPercentiles,
    pub query_efficiency: Vec<EfficiencyPoint>,
    pub wall_clock_secs: f64,
    pub warnings: Vec<String>,
}

/// Runs the selected attack over the correctly classified members of
/// `samples`, in parallel, and aggregates the results.
///
/// Per-input seeds derive from `(master_seed, input index)`, so the report is
/// identical for any worker count. The optional warm-start initializer only
/// applies to the distribution-learning attack.
pub fn run_benchmark(
    model: &dyn BlackboxModel,
    samples: &[(UnitBoxPoint, usize)],
    bench: &BenchmarkConfig,
    warm: Option<&RegressionInitializer>,
) -> Result<BenchmarkReport, HarnessError> {
    let start = Instant::now();
    bench.attack_config.validate()?;
    if bench.num_inputs == 0 {
        return Err(HarnessError::InvalidConfig("num_inputs must be >= 1".into()));
    }
    if bench.seed_space.input_dim() != model.input_dim() {
        return Err(HarnessError::InvalidConfig(format!(
            "seed space maps to {} dims but the model expects {}",
            bench.seed_space.input_dim(),
            model.input_dim()
        )));
    }

    let mut warnings = Vec::new();
    let eligible = filter_correct(model, samples, bench.master_seed)?;
    if eligible.len() < bench.num_inputs {
        warnings.push(format!(
            "requested {} inputs but only {} are correctly classified; proceeding with {}",
            bench.num_inputs,
            eligible.len(),
            eligible.len()
        ));
    }
    if warm.is_some() && bench.attack != AttackSelector::NAttack {
        warnings.push("warm-start initializer ignored for baseline attacks".into());
    }
    let selected: Vec<(usize, &UnitBoxPoint, usize)> =
        eligible.into_iter().take(bench.num_inputs).collect();

    let outcomes: Vec<InputOutcome> = selected
        .par_iter()
        .map(|&(input_id, x, label)| {
            let config = AttackConfig {
                sample_seed: seed::derive(bench.master_seed, &[STREAM_INPUT, input_id as u64]),
                ..bench.attack_config.clone()
            };
            let outcome = attack_one(model, x, label, &bench.seed_space, &config, bench.attack, warm)?;
            Ok(InputOutcome { input_id, label, outcome })
        })
        .collect::<Result<_, HarnessError>>()?;

    let wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(assemble_report(bench.clone(), warm.is_some(), outcomes, wall_clock_secs, warnings))
}

/// Indices, inputs, and labels of the samples the model classifies correctly
/// under the per-input evaluation seed.
pub fn filter_correct<'a>(
    model: &dyn BlackboxModel,
    samples: &'a [(UnitBoxPoint, usize)],
    master_seed: u64,
) -> Result<Vec<(usize, &'a UnitBoxPoint, usize)>, HarnessError> {
    let eligible: Vec<(usize, &UnitBoxPoint, usize)> = samples
        .iter()
        .enumerate()
        .filter(|(idx, (x, y))| {
            let eval_seed = seed::derive(master_seed, &[STREAM_EVAL, *idx as u64]);
            model.query(x, eval_seed).argmax() == *y
        })
        .map(|(idx, (x, y))| (idx, x, *y))
        .collect();
    if eligible.is_empty() {
        return Err(HarnessError::NoAttackableInputs(samples.len()));
    }
    let first_label = eligible[0].2;
    if eligible.iter().all(|&(_, _, y)| y == first_label) {
        return Err(HarnessError::DegenerateVictim);
    }
    Ok(eligible)
}

pub(crate) fn attack_one(
    model: &dyn BlackboxModel,
    x: &UnitBoxPoint,
    label: usize,
    space: &SeedSpace,
    config: &AttackConfig,
    selector: AttackSelector,
    warm: Option<&RegressionInitializer>,
) -> Result<AttackOutcome, AttackError> {
    match selector {
        AttackSelector::NAttack => {
            let init = warm.map(|w| w.init_params(x, space, config.sigma));
            run_nattack(x, label, model, space, config, init)
        }
        AttackSelector::Ql => run_ablation(x, label, model, space, config, AblationFlags::ql()),
        AttackSelector::Ablation { flags } => run_ablation(x, label, model, space, config, flags),
    }
}

fn assemble_report(
    config: BenchmarkConfig,
    warm_start: bool,
    outcomes: Vec<InputOutcome>,
    wall_clock_secs: f64,
    warnings: Vec<String>,
) -> BenchmarkReport {
    let n = outcomes.len().max(1);
    let successes = outcomes.iter().filter(|o| o.outcome.success).count();
    let success_rate = successes as f64 / n as f64;
    let max_iters = config.attack_config.max_iters;
    let batch = config.attack_config.batch_size as u64;

    let mut curve = Vec::with_capacity(max_iters);
    let mut query_efficiency = Vec::with_capacity(max_iters);
    for t in 1..=max_iters {
        let reached: Vec<u64> = outcomes
            .iter()
            .filter_map(|o| o.outcome.first_success_iter)
            .filter(|&fsi| fsi <= t)
            .map(|fsi| fsi as u64 * batch)
            .collect();
        curve.push(reached.len() as f64 / n as f64);
        let avg = if reached.is_empty() {
            None
        } else {
            Some(reached.iter().sum::<u64>() as f64 / reached.len() as f64)
        };
        query_efficiency.push(EfficiencyPoint {
            iteration: t,
            success_rate: reached.len() as f64 / n as f64,
            avg_queries_per_success: avg,
        });
    }

    let total_queries = outcomes.iter().map(|o| o.outcome.queries).sum();
    let mut sorted_queries: Vec<u64> = outcomes.iter().map(|o| o.outcome.queries).collect();
    sorted_queries.sort_unstable();
    let pick = |p: f64| -> u64 {
        if sorted_queries.is_empty() {
            return 0;
        }
        let rank = ((p * sorted_queries.len() as f64).ceil() as usize).max(1);
        sorted_queries[rank - 1]
    };
    let success_queries: Vec<u64> = outcomes
        .iter()
        .filter(|o| o.outcome.success)
        .filter_map(|o| o.outcome.first_success_iter)
        .map(|fsi| fsi as u64 * batch)
        .collect();
    let query_percentiles = QueryPercentiles {
        p10: pick(0.10),
        p25: pick(0.25),
        p50: pick(0.50),
        p75: pick(0.75),
        p90: pick(0.90),
        mean: total_queries as f64 / n as f64,
        mean_per_success: if success_queries.is_empty() {
            None
        } else {
            Some(success_queries.iter().sum::<u64>() as f64 / success_queries.len() as f64)
        },
    };

    BenchmarkReport {
        config,
        warm_start,
        outcomes,
        success_rate,
        curve,
        total_queries,
        query_percentiles,
        query_efficiency,
        wall_clock_secs,
        warnings,
    }
}

/// Result of a bandwidth sweep under a fixed query budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSweep {
    pub entries: Vec<SigmaEntry>,
    pub best_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaEntry {
    pub sigma: f64,
    pub success_rate: f64,
    pub mean_queries_per_success: Option<f64>,
}

/// Runs the benchmark once per bandwidth and selects the one with the
/// highest success rate (ties: fewer queries per success, then smaller
/// sigma). Every entry uses the same iteration and batch budget.
pub fn sweep_sigma(
    model: &dyn BlackboxModel,
    samples: &[(UnitBoxPoint, usize)],
    bench: &BenchmarkConfig,
    sigmas: &[f64],
) -> Result<SigmaSweep, HarnessError> {
    if sigmas.is_empty() {
        return Err(HarnessError::InvalidConfig("sigma grid is empty".into()));
    }
    let mut entries = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let config = BenchmarkConfig {
            attack_config: AttackConfig { sigma, ..bench.attack_config.clone() },
            ..bench.clone()
        };
        let report = run_benchmark(model, samples, &config, None)?;
        entries.push(SigmaEntry {
            sigma,
            success_rate: report.success_rate,
            mean_queries_per_success: report.query_percentiles.mean_per_success,
        });
    }
    let best = entries
        .iter()
        .max_by(|a, b| {
            a.success_rate
                .partial_cmp(&b.success_rate)
                .unwrap()
                .then_with(|| {
                    let qa = a.mean_queries_per_success.unwrap_or(f64::INFINITY);
                    let qb = b.mean_queries_per_success.unwrap_or(f64::INFINITY);
                    qb.partial_cmp(&qa).unwrap()
                })
                .then_with(|| b.sigma.partial_cmp(&a.sigma).unwrap())
        })
        .expect("non-empty grid");
    Ok(SigmaSweep { best_sigma: best.sigma, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Norm, NormBudget};
    use crate::models::{
        gaussian_blobs, train_mlp, wrap_defense, DefenseKind, MlpSpec, TrainConfig,
    };

    fn quick_bench(attack: AttackSelector) -> (crate::models::DefendedMlp, Vec<(UnitBoxPoint, usize)>, BenchmarkConfig) {
        let data = gaussian_blobs(2, 2, 60, 40, 0.06, 5).unwrap();
        let train_config = TrainConfig { epochs: 20, ..Default::default() };
        let (spec, _) = train_mlp(&data, &[2, 12, 2], &train_config).unwrap();
        let model = wrap_defense(spec, DefenseKind::None).unwrap();
        let budget = NormBudget::new(Norm::Linf, 0.25).unwrap();
        let attack_config = AttackConfig {
            max_iters: 15,
            batch_size: 16,
            ..AttackConfig::new(budget)
        };
        let mut bench = BenchmarkConfig::new(attack, attack_config, 2);
        bench.num_inputs = 12;
        (model, data.test, bench)
    }

    #[test]
    fn benchmark_aggregates_are_consistent() {
        let (model, test, bench) = quick_bench(AttackSelector::NAttack);
        let report = run_benchmark(&model, &test, &bench, None).unwrap();
        assert_eq!(report.outcomes.len(), 12);

        // Success rate equals successes / inputs.
        let successes = report.outcomes.iter().filter(|o| o.outcome.success).count();
        assert!((report.success_rate - successes as f64 / 12.0).abs() < 1e-12);

        // Total queries is the sum of per-outcome queries.
        let sum: u64 = report.outcomes.iter().map(|o| o.outcome.queries).sum();
        assert_eq!(report.total_queries, sum);

        // The cumulative curve never decreases and ends at the success rate.
        for pair in report.curve.windows(2) {
            assert!(pair[1] >= pair[0]);
        }
        assert!((report.curve.last().unwrap() - report.success_rate).abs() < 1e-12);
    }

    #[test]
    fn reports_are_deterministic_for_a_fixed_master_seed() {
        let (model, test, bench) = quick_bench(AttackSelector::NAttack);
        let a = run_benchmark(&model, &test, &bench, None).unwrap();
        let b = run_benchmark(&model, &test, &bench, None).unwrap();
        assert_eq!(a.outcomes, b.outcomes);
        assert_eq!(a.curve, b.curve);

        let mut other = bench.clone();
        other.master_seed = 1;
        let c = run_benchmark(&model, &test, &other, None).unwrap();
        assert_ne!(a.outcomes, c.outcomes);
    }

    #[test]
    fn degenerate_victim_is_an_explicit_error() {
        // Uniform output: ties resolve to class 0, so only one class is ever
        // "correct" and the protocol is rejected.
        let data = gaussian_blobs(2, 2, 10, 20, 0.06, 5).unwrap();
        let spec = MlpSpec::zeroed(&[2, 2], crate::models::Activation::Relu).unwrap();
        let model = wrap_defense(spec, DefenseKind::None).unwrap();
        let budget = NormBudget::new(Norm::Linf, 0.1).unwrap();
        let bench = BenchmarkConfig::new(AttackSelector::NAttack, AttackConfig::new(budget), 2);
        match run_benchmark(&model, &data.test, &bench, None) {
            Err(HarnessError::DegenerateVictim) => {}
            other => panic!("expected degenerate-victim error, got {other:?}"),
        }
    }

    #[test]
    fn short_split_records_a_warning() {
        let (model, test, mut bench) = quick_bench(AttackSelector::Ql);
        bench.num_inputs = 10_000;
        let report = run_benchmark(&model, &test, &bench, None).unwrap();
        assert!(!report.warnings.is_empty());
        assert!(report.outcomes.len() <= test.len());
    }

    #[test]
    fn sigma_sweep_picks_a_grid_member() {
        let (model, test, mut bench) = quick_bench(AttackSelector::NAttack);
        bench.num_inputs = 6;
        bench.attack_config.max_iters = 8;
        let sweep = sweep_sigma(&model, &test, &bench, &[0.05, 0.1, 0.2]).unwrap();
        assert_eq!(sweep.entries.len(), 3);
        assert!(sweep.entries.iter().any(|e| e.sigma == sweep.best_sigma));
    }
}

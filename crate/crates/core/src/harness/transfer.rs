//! Transfer study: adversarial pools per source model and the cross-model
//! success-rate matrix.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::UnitBoxPoint;
use crate::harness::{attack_one, filter_correct, BenchmarkConfig, HarnessError};
use crate::loss::is_adversarial;
use crate::models::{
    train_mlp, wrap_defense, BlackboxModel, DefendedMlp, DefenseKind, LabeledDataset, ModelError,
    TrainConfig,
};
use crate::nattack::AttackConfig;
use crate::seed::{self, STREAM_INPUT, STREAM_SELECT, STREAM_TRANSFER};

/// One member of the model zoo: a defense wrapped around an MLP trained with
/// its own seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZooMemberSpec {
    pub defense: DefenseKind,
    pub train_seed: u64,
}

impl ZooMemberSpec {
    pub fn name(&self) -> String {
        format!("{}#{}", self.defense, self.train_seed)
    }
}

impl FromStr for ZooMemberSpec {
    type Err = ModelError;

    /// `vanilla[:train_seed]`, `sap[:train_seed]`,
    /// `quantize:<levels>[:train_seed]`, `noise:<amplitude>[:train_seed]`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() {
            return Err(ModelError::InvalidDefense("empty zoo member".into()));
        }
        let parts: Vec<&str> = s.split(':').collect();
        let parse_seed = |tok: Option<&&str>| -> Result<u64, ModelError> {
            match tok {
                None => Ok(0),
                Some(t) => t.parse().map_err(|_| {
                    ModelError::InvalidDefense(format!("bad train seed: {t:?}"))
                }),
            }
        };
        let (defense, seed_token) = match parts[0] {
            "vanilla" | "none" => {
                if parts.len() > 2 {
                    return Err(ModelError::InvalidDefense(format!("too many fields: {s:?}")));
                }
                (DefenseKind::None, parts.get(1))
            }
            "sap" => {
                if parts.len() > 2 {
                    return Err(ModelError::InvalidDefense(format!("too many fields: {s:?}")));
                }
                (DefenseKind::Sap, parts.get(1))
            }
            "quantize" | "noise" => {
                if parts.len() < 2 || parts.len() > 3 {
                    return Err(ModelError::InvalidDefense(format!(
                        "{} needs a parameter: {s:?}",
                        parts[0]
                    )));
                }
                let kind: DefenseKind = format!("{}:{}", parts[0], parts[1]).parse()?;
                (kind, parts.get(2))
            }
            other => {
                return Err(ModelError::InvalidDefense(format!("unknown zoo member: {other:?}")))
            }
        };
        Ok(ZooMemberSpec { defense, train_seed: parse_seed(seed_token)? })
    }
}

/// Trains one MLP per distinct train seed and wraps each requested defense
/// around it.
pub fn build_zoo(
    data: &LabeledDataset,
    widths: &[usize],
    train: &TrainConfig,
    members: &[ZooMemberSpec],
) -> Result<Vec<(String, DefendedMlp)>, ModelError> {
    let mut zoo = Vec::with_capacity(members.len());
    for member in members {
        let config = TrainConfig { seed: member.train_seed, ..train.clone() };
        let (spec, _) = train_mlp(data, widths, &config)?;
        zoo.push((member.name(), wrap_defense(spec, member.defense)?));
    }
    Ok(zoo)
}

/// An input the source model classified correctly together with the
/// adversarial example found for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub input: UnitBoxPoint,
    pub label: usize,
    pub adversarial: UnitBoxPoint,
}

/// Adversarial examples collected against one source model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialPool {
    pub source: String,
    pub entries: Vec<PoolEntry>,
}

/// Attacks shuffled, correctly classified inputs until `pool_size` successes
/// are collected (or the candidates run out, recording a warning). Attacks
/// run in parallel chunks; selection order is fixed by the master seed.
pub fn build_adversarial_pool(
    source_name: &str,
    model: &dyn BlackboxModel,
    samples: &[(UnitBoxPoint, usize)],
    bench: &BenchmarkConfig,
    pool_size: usize,
    warnings: &mut Vec<String>,
) -> Result<AdversarialPool, HarnessError> {
    bench.attack_config.validate()?;
    let mut eligible = filter_correct(model, samples, bench.master_seed)?;
    let mut rng = seed::rng_from(seed::derive(bench.master_seed, &[STREAM_SELECT]));
    eligible.shuffle(&mut rng);

    let mut entries = Vec::with_capacity(pool_size);
    for chunk in eligible.chunks(pool_size.max(8)) {
        if entries.len() >= pool_size {
            break;
        }
        let chunk_entries: Vec<Option<PoolEntry>> = chunk
            .par_iter()
            .map(|&(input_id, x, label)| {
                let config = AttackConfig {
                    sample_seed: seed::derive(bench.master_seed, &[STREAM_INPUT, input_id as u64]),
                    ..bench.attack_config.clone()
                };
                let outcome =
                    attack_one(model, x, label, &bench.seed_space, &config, bench.attack, None)?;
                Ok(outcome.adversarial.map(|adversarial| PoolEntry {
                    input: x.clone(),
                    label,
                    adversarial,
                }))
            })
            .collect::<Result<_, HarnessError>>()?;
        for entry in chunk_entries.into_iter().flatten() {
            if entries.len() >= pool_size {
                break;
            }
            entries.push(entry);
        }
    }

    if entries.len() < pool_size {
        warnings.push(format!(
            "pool for {source_name}: requested {pool_size} adversarial examples, found {}",
            entries.len()
        ));
    }
    Ok(AdversarialPool { source: source_name.to_string(), entries })
}

/// Square matrix of transfer success rates. Row = source model whose pool
/// supplied the adversarial examples, column = target model evaluating them.
/// Diagonal cells are 1 by pool construction; empty-pool cells are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub model_names: Vec<String>,
    /// `rates[source][target]`; `None` marks a cell with no samples.
    pub rates: Vec<Vec<Option<f64>>>,
    pub counts: Vec<Vec<usize>>,
    pub warnings: Vec<String>,
}

/// Evaluates every pool against every target model. Cell `(i, j)` is the
/// fraction of source-`i` adversarial examples the target `j` misclassifies.
pub fn build_transfer_matrix(
    models: &[(String, DefendedMlp)],
    pools: &[AdversarialPool],
    master_seed: u64,
    mut warnings: Vec<String>,
) -> TransferMatrix {
    assert_eq!(models.len(), pools.len(), "one pool per model");
    let n = models.len();
    let mut rates = vec![vec![None; n]; n];
    let mut counts = vec![vec![0usize; n]; n];

    for (i, pool) in pools.iter().enumerate() {
        if pool.entries.is_empty() {
            warnings.push(format!("pool for {} is empty; row {i} left absent", pool.source));
            continue;
        }
        for (j, (_, target)) in models.iter().enumerate() {
            counts[i][j] = pool.entries.len();
            if i == j {
                // Pool construction already certifies misclassification on
                // the source model.
                rates[i][j] = Some(1.0);
                continue;
            }
            let fooled = pool
                .entries
                .iter()
                .enumerate()
                .filter(|(k, entry)| {
                    let qseed = seed::derive(
                        master_seed,
                        &[STREAM_TRANSFER, i as u64, j as u64, *k as u64],
                    );
                    is_adversarial(&target.query(&entry.adversarial, qseed), entry.label)
                        .unwrap_or(false)
                })
                .count();
            rates[i][j] = Some(fooled as f64 / pool.entries.len() as f64);
        }
    }

    TransferMatrix {
        model_names: models.iter().map(|(name, _)| name.clone()).collect(),
        rates,
        counts,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Norm, NormBudget};
    use crate::harness::AttackSelector;
    use crate::models::gaussian_blobs;

    #[test]
    fn zoo_member_specs_parse() {
        let m: ZooMemberSpec = "vanilla".parse().unwrap();
        assert_eq!(m.defense, DefenseKind::None);
        assert_eq!(m.train_seed, 0);

        let m: ZooMemberSpec = "vanilla:3".parse().unwrap();
        assert_eq!(m.train_seed, 3);

        let m: ZooMemberSpec = "quantize:16:2".parse().unwrap();
        assert_eq!(m.defense, DefenseKind::Quantize { levels: 16 });
        assert_eq!(m.train_seed, 2);

        let m: ZooMemberSpec = "noise:0.05".parse().unwrap();
        assert_eq!(m.defense, DefenseKind::InputNoise { amplitude: 0.05 });

        let m: ZooMemberSpec = "sap:7".parse().unwrap();
        assert_eq!(m.defense, DefenseKind::Sap);
        assert_eq!(m.train_seed, 7);

        assert!("".parse::<ZooMemberSpec>().is_err());
        assert!("vanilla:x".parse::<ZooMemberSpec>().is_err());
        assert!("quantize".parse::<ZooMemberSpec>().is_err());
        assert!("quantize:1:2".parse::<ZooMemberSpec>().is_err());
        assert!("noise:0.1:2:9".parse::<ZooMemberSpec>().is_err());
        assert!("resnet".parse::<ZooMemberSpec>().is_err());
    }

    #[test]
    fn transfer_matrix_protocol() {
        let data = gaussian_blobs(2, 2, 60, 60, 0.06, 5).unwrap();
        let train = TrainConfig { epochs: 20, ..Default::default() };
        let members = [
            "vanilla:0".parse().unwrap(),
            "vanilla:1".parse().unwrap(),
            "quantize:8:0".parse().unwrap(),
        ];
        let zoo = build_zoo(&data, &[2, 12, 2], &train, &members).unwrap();

        let budget = NormBudget::new(Norm::Linf, 0.25).unwrap();
        let attack_config = AttackConfig {
            max_iters: 20,
            batch_size: 16,
            ..AttackConfig::new(budget)
        };
        let bench = BenchmarkConfig::new(AttackSelector::NAttack, attack_config, 2);

        let mut warnings = Vec::new();
        let pools: Vec<AdversarialPool> = zoo
            .iter()
            .map(|(name, model)| {
                build_adversarial_pool(name, model, &data.test, &bench, 8, &mut warnings).unwrap()
            })
            .collect();
        let matrix = build_transfer_matrix(&zoo, &pools, bench.master_seed, warnings);

        for i in 0..3 {
            if !pools[i].entries.is_empty() {
                assert_eq!(matrix.rates[i][i], Some(1.0));
            }
            for j in 0..3 {
                if let Some(rate) = matrix.rates[i][j] {
                    assert!((0.0..=1.0).contains(&rate));
                }
            }
        }
        // Independently seeded copies of the same architecture transfer
        // imperfectly in both directions.
        if let (Some(ab), Some(ba)) = (matrix.rates[0][1], matrix.rates[1][0]) {
            assert!(ab < 1.0 || ba < 1.0);
        }
    }

    #[test]
    fn empty_pool_leaves_cells_absent() {
        let data = gaussian_blobs(2, 2, 40, 30, 0.06, 5).unwrap();
        let train = TrainConfig { epochs: 20, ..Default::default() };
        let members = ["vanilla:0".parse().unwrap(), "vanilla:1".parse().unwrap()];
        let zoo = build_zoo(&data, &[2, 12, 2], &train, &members).unwrap();

        let pools = vec![
            AdversarialPool { source: "vanilla#0".into(), entries: vec![] },
            AdversarialPool { source: "vanilla#1".into(), entries: vec![] },
        ];
        let matrix = build_transfer_matrix(&zoo, &pools, 0, Vec::new());
        assert!(matrix.rates.iter().flatten().all(|c| c.is_none()));
        assert_eq!(matrix.warnings.len(), 2);
    }
}

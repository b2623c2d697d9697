// Scratch calibration driver (not part of the test suite).

use nattack::baselines::AblationFlags;
use nattack::geometry::{Norm, NormBudget, SeedSpace, UnitBoxPoint};
use nattack::harness::{run_benchmark, AttackSelector, BenchmarkConfig};
use nattack::models::{
    gaussian_blobs, train_mlp, wrap_defense, DefenseKind, TrainConfig,
};
use nattack::nattack::AttackConfig;

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "ladder".into());
    match mode.as_str() {
        "linear" => linear(),
        "vanilla64" => vanilla64(),
        "ladder" => ladder(),
        other => eprintln!("unknown mode {other}"),
    }
}

fn linear() {
    // Criterion-4 style: linear model, FGSM-feasible inputs.
    let tau = 0.3;
    let spread = 0.07;
    let data = gaussian_blobs(2, 2, 200, 200, spread, 0).unwrap();
    let tc = TrainConfig { epochs: 40, seed: 0, ..Default::default() };
    let (spec, rep) = train_mlp(&data, &[2, 2], &tc).unwrap();
    let model = wrap_defense(spec.clone(), DefenseKind::None).unwrap();
    let w = spec.layers()[0].weights.clone();
    let b = spec.layers()[0].biases.clone();
    let mut feasible: Vec<(UnitBoxPoint, usize)> = Vec::new();
    for (x, y) in &data.test {
        let other = 1 - *y;
        let wd: Vec<f64> = (0..2).map(|k| w[*y * 2 + k] - w[other * 2 + k]).collect();
        let bd = b[*y] - b[other];
        let margin: f64 = wd.iter().zip(x.as_slice()).map(|(a, c)| a * c).sum::<f64>() + bd;
        if margin < 0.0 {
            continue;
        }
        let xa: Vec<f64> = x
            .as_slice()
            .iter()
            .zip(&wd)
            .map(|(&xi, &wi)| (xi - tau * wi.signum()).clamp(0.0, 1.0))
            .collect();
        let adv_margin: f64 = wd.iter().zip(&xa).map(|(a, c)| a * c).sum::<f64>() + bd;
        if adv_margin < 0.0 {
            feasible.push((x.clone(), *y));
        }
    }
    println!(
        "linear tau={tau} spread={spread}: acc={:.3} fgsm-feasible={}",
        rep.test_accuracy,
        feasible.len()
    );
    feasible.truncate(200);
    let budget = NormBudget::new(Norm::Linf, tau).unwrap();
    let ac = AttackConfig { max_iters: 200, batch_size: 100, ..AttackConfig::new(budget) };
    let mut bench = BenchmarkConfig::new(AttackSelector::NAttack, ac, 2);
    bench.num_inputs = 200;
    let t0 = std::time::Instant::now();
    let report = run_benchmark(&model, &feasible, &bench, None).unwrap();
    println!(
        "nattack on feasible: success={:.3} wall={:.1}s",
        report.success_rate,
        t0.elapsed().as_secs_f64()
    );
}

fn vanilla64() {
    for (tau, spread, classes) in [(0.1, 0.06, 4), (0.15, 0.06, 4), (0.2, 0.08, 4)] {
        let data = gaussian_blobs(classes, 64, 60, 60, spread, 0).unwrap();
        let tc = TrainConfig { epochs: 40, seed: 0, ..Default::default() };
        let (spec, rep) = train_mlp(&data, &[64, 32, classes], &tc).unwrap();
        let model = wrap_defense(spec, DefenseKind::None).unwrap();
        let budget = NormBudget::new(Norm::Linf, tau).unwrap();
        let ac = AttackConfig { max_iters: 200, batch_size: 100, ..AttackConfig::new(budget) };
        let mut bench = BenchmarkConfig::new(AttackSelector::NAttack, ac, 64);
        bench.num_inputs = 200;
        let t0 = std::time::Instant::now();
        let report = run_benchmark(&model, &data.test, &bench, None).unwrap();
        println!(
            "vanilla64 tau={tau} spread={spread} classes={classes}: acc={:.3} success={:.3} meanq={:.0} wall={:.1}s",
            rep.test_accuracy,
            report.success_rate,
            report.query_percentiles.mean,
            t0.elapsed().as_secs_f64()
        );
    }
}

fn ladder() {
    let args: Vec<String> = std::env::args().collect();
    let tau: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.15);
    let levels: u32 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(8);
    let iters: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(60);
    let batch: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(40);
    let num_inputs: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(100);

    let rungs = AblationFlags::ladder();
    let mut means = [0.0; 4];
    let t0 = std::time::Instant::now();
    for dataset_seed in 0..5u64 {
        let data = gaussian_blobs(3, 2, 80, 120, 0.06, dataset_seed).unwrap();
        let tc = TrainConfig { epochs: 40, seed: dataset_seed, ..Default::default() };
        let (spec, rep) = train_mlp(&data, &[2, 16, 3], &tc).unwrap();
        let model = wrap_defense(spec, DefenseKind::Quantize { levels }).unwrap();
        print!("seed={dataset_seed} acc={:.3} |", rep.test_accuracy);
        for (r, flags) in rungs.iter().enumerate() {
            let budget = NormBudget::new(Norm::Linf, tau).unwrap();
            let ac = AttackConfig {
                max_iters: iters,
                batch_size: batch,
                antithetic: true,
                ..AttackConfig::new(budget)
            };
            let mut bench = BenchmarkConfig::new(
                AttackSelector::Ablation { flags: *flags },
                ac,
                2,
            );
            bench.num_inputs = num_inputs;
            bench.master_seed = dataset_seed;
            let report = run_benchmark(&model, &data.test, &bench, None).unwrap();
            means[r] += report.success_rate / 5.0;
            print!(" {}={:.3}", flags, report.success_rate);
        }
        println!();
    }
    println!(
        "tau={tau} levels={levels} T={iters} b={batch} n={num_inputs} -> ladder means: {:.3} {:.3} {:.3} {:.3}  ({:.1}s)",
        means[0], means[1], means[2], means[3],
        t0.elapsed().as_secs_f64()
    );
}

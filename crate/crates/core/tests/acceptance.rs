//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

use common::{
    brute_tomek, brute_weighted_mean, centralized_adam_round, finite_difference, plain_dp_sgd_client,
    random_matrix, rdp_quadrature, rng, tomek_instance, toy_partitions,
};
use fedfront::data::FEATURE_COLUMNS;
use fedfront::dp::{clip_gradient, compute_rdp, default_orders, l2_norm, privatize_batch, DpConfig, PrivacyAccountant};
use fedfront::experiment::{
    prepare_data, run_config, run_stage, synthetic_records, DataConfig, PreparedData, RunConfig, Stage, DESK_SEEDS,
};
use fedfront::federation::{aggregate, client_rng, client_update, run_training, ClientConfig, FederationConfig};
use fedfront::matrix::Matrix;
use fedfront::nn::{self, init_model, param_count, Activation, ModelArchitecture, ModelParams, TrainingConfig, Workspace};
use fedfront::resample::tomek_links;
use rand::Rng;
use rayon::prelude::*;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn prepared() -> Result<PreparedData, String> {
    let records = synthetic_records(42).map_err(|e| e.to_string())?;
    prepare_data(records, &DataConfig::default()).map_err(|e| e.to_string())
}

fn criterion_1() -> Outcome {
    let arch = ModelArchitecture::default();
    let total = param_count(&arch);
    let layers = arch.layer_param_counts();
    ensure!(total == 3137, "param_count = {total}");
    ensure!(layers == vec![1024, 2080, 33], "per-layer {layers:?}");
    ensure!(init_model(&arch, 0).len() == 3137, "flat vector length mismatch");
    Ok(format!("total {total}, layers {layers:?}"))
}

fn criterion_2() -> Outcome {
    let data = prepared()?;
    let sizes: Vec<usize> = data.raw_partitions.iter().map(|p| p.n_samples).collect();
    ensure!(FEATURE_COLUMNS.len() == 15, "{} feature names", FEATURE_COLUMNS.len());
    ensure!(data.test_features.cols() == 15, "{} feature columns", data.test_features.cols());
    ensure!(data.train_rows == 4088, "{} training rows", data.train_rows);
    ensure!(
        data.raw_partitions.iter().all(|p| p.features.cols() == 15),
        "partition width mismatch"
    );
    let mut expected = vec![408; 9];
    expected.push(416);
    ensure!(sizes == expected, "partition sizes {sizes:?}");
    Ok(format!(
        "15 columns, {} train / {} test rows, partitions {sizes:?}",
        data.train_rows,
        data.test_labels.len()
    ))
}

fn criterion_3() -> Outcome {
    let data = prepared()?;
    let mut total = 0;
    let mut detail = Vec::new();
    for (part, rep) in data.resampled_partitions.iter().zip(&data.resample_reports) {
        let n = part.n_samples;
        let share = part.positives() as f64 / n as f64;
        ensure!((740..=800).contains(&n), "client {} resampled to {n}", part.client_id);
        ensure!((0.48..=0.52).contains(&share), "client {} positive share {share:.4}", part.client_id);
        ensure!(rep.after_total() == n, "report total disagrees for client {}", part.client_id);
        total += n;
        detail.push(n.to_string());
    }
    ensure!(total.abs_diff(7798) <= 60, "ten-partition total {total}");
    Ok(format!("sizes [{}], total {total} (target 7798 +/- 60)", detail.join(",")))
}

fn criterion_4() -> Outcome {
    let arch = ModelArchitecture::default();
    let mut r = rng(2024);
    let mut worst = 0.0f64;
    let probes = 24;
    for probe in 0..probes {
        let params = init_model(&arch, 500 + probe);
        let x: Vec<f64> = (0..15).map(|_| r.random_range(-2.0..2.0)).collect();
        let y = (probe % 2) as f64;
        let mut grad = vec![0.0; params.len()];
        let mut ws = Workspace::new(&params);
        nn::sample_gradient(&params, &x, y, &mut ws, &mut grad);
        let fd = finite_difference(&params, &x, y, 1e-5);
        for (a, f) in grad.iter().zip(&fd) {
            worst = worst.max((a - f).abs() / a.abs().max(f.abs()).max(1e-6));
        }
    }
    ensure!(worst <= 1e-4, "worst finite-difference relative error {worst:.3e}");

    let mut worst_mean = 0.0f64;
    for seed in 0..6u64 {
        let params = init_model(&arch, seed);
        let n = 3 + 11 * seed as usize;
        let x = random_matrix(n, 15, 2.0, &mut r);
        let y: Vec<f64> = (0..n).map(|i| (i % 4 == 0) as u8 as f64).collect();
        let rows = nn::per_sample_gradients(&params, &x, &y).map_err(|e| e.to_string())?;
        let (_, batch) = nn::batch_gradient(&params, &x, &y).map_err(|e| e.to_string())?;
        for (j, b) in batch.iter().enumerate() {
            let mean = (0..n).map(|i| rows.row(i)[j]).sum::<f64>() / n as f64;
            worst_mean = worst_mean.max((mean - b).abs());
        }
    }
    ensure!(worst_mean <= 1e-10, "mean-of-per-sample vs batch gap {worst_mean:.3e}");
    Ok(format!(
        "{probes} probes, worst FD rel err {worst:.2e}; batch gap {worst_mean:.2e}"
    ))
}

fn criterion_5() -> Outcome {
    let mut r = rng(5);
    for _ in 0..2000 {
        let len = r.random_range(1..50);
        let scale = r.random_range(0.01..50.0);
        let g: Vec<f64> = (0..len).map(|_| r.random_range(-scale..scale)).collect();
        let c = r.random_range(0.05..10.0);
        let out = clip_gradient(&g, c);
        let (n_in, n_out) = (l2_norm(&g), l2_norm(&out));
        ensure!(
            (n_out - n_in.min(c)).abs() <= 1e-12 * n_in.max(1.0),
            "clip norm {n_out} for input {n_in}, C {c}"
        );
        if n_in <= c {
            ensure!(out == g, "short gradient was modified");
        }
    }

    let grads = Matrix::from_rows(&[
        vec![3.0, 0.0, -1.0],
        vec![0.1, 0.2, 0.3],
        vec![0.0, 5.0, 0.0],
        vec![0.5, 0.5, 0.5],
    ])
    .map_err(|e| e.to_string())?;
    let cfg = DpConfig {
        noise_multiplier: 1.0,
        max_grad_norm: 1.0,
        delta: 1e-5,
    };
    let quiet = DpConfig {
        noise_multiplier: 0.0,
        ..cfg
    };
    let clean = privatize_batch(&grads, &quiet, &mut rng(0)).map_err(|e| e.to_string())?;
    let draws = 100_000;
    let mut r = rng(123);
    let mut sum = [0.0; 3];
    let mut sq = [0.0; 3];
    for _ in 0..draws {
        let g = privatize_batch(&grads, &cfg, &mut r).map_err(|e| e.to_string())?;
        for c in 0..3 {
            let d = g[c] - clean[c];
            sum[c] += d;
            sq[c] += d * d;
        }
    }
    let target = cfg.noise_multiplier * cfg.max_grad_norm / 4.0;
    let mut worst = 0.0f64;
    for c in 0..3 {
        let mean = sum[c] / draws as f64;
        let std = (sq[c] / draws as f64 - mean * mean).sqrt();
        worst = worst.max((std / target - 1.0).abs());
    }
    ensure!(worst < 0.02, "noise std off by {:.2}%", worst * 100.0);
    Ok(format!("clip contract held on 2000 vectors; noise std within {:.3}%", worst * 100.0))
}

/// Epsilon of the desk schedule for one sigma: each client composes
/// rounds * epochs * ceil(n / batch) steps at q = batch / n.
fn schedule_epsilon(sizes: &[usize], sigma: f64, rounds: u64, epochs: u64, batch: usize) -> Result<f64, String> {
    let mut accountants = Vec::new();
    for &n in sizes {
        let mut a = PrivacyAccountant::new();
        let steps = rounds * epochs * n.div_ceil(batch) as u64;
        a.compose(sigma, batch as f64 / n as f64, steps).map_err(|e| e.to_string())?;
        accountants.push(a);
    }
    Ok(fedfront::dp::max_epsilon(&accountants, 1e-5).map_err(|e| e.to_string())?.epsilon)
}

fn criterion_6() -> Outcome {
    // (a)
    for sigma in [0.5, 1.0, 2.0] {
        for alpha in default_orders() {
            let v = compute_rdp(1.0, sigma, alpha);
            ensure!((v - alpha / (2.0 * sigma * sigma)).abs() <= 1e-12, "q=1 rdp at sigma {sigma} alpha {alpha}");
        }
    }
    // (b)
    let mut worst = 0.0f64;
    for q in [0.01, 0.05, 0.1] {
        for sigma in [0.5, 1.0, 2.0] {
            for alpha in default_orders() {
                let ours = compute_rdp(q, sigma, alpha);
                let oracle = rdp_quadrature(q, sigma, alpha);
                let rel = (ours - oracle).abs() / oracle.abs().max(1e-300);
                worst = worst.max(rel);
            }
        }
    }
    ensure!(worst <= 1e-6, "quadrature relative gap {worst:.2e}");
    // (c)
    let eps = |sigma: f64, q: f64, steps: u64| -> Result<f64, String> {
        let mut a = PrivacyAccountant::new();
        a.compose(sigma, q, steps).map_err(|e| e.to_string())?;
        Ok(a.epsilon(1e-5).map_err(|e| e.to_string())?.epsilon)
    };
    for (lo, hi) in [(0.5, 1.0), (1.0, 2.0)] {
        ensure!(eps(lo, 0.04, 500)? > eps(hi, 0.04, 500)?, "not decreasing in sigma");
    }
    for (lo, hi) in [(10, 100), (100, 1000)] {
        ensure!(eps(1.0, 0.04, lo)? < eps(1.0, 0.04, hi)?, "not increasing in steps");
    }
    for (lo, hi) in [(0.01, 0.04), (0.04, 0.1)] {
        ensure!(eps(1.0, lo, 500)? < eps(1.0, hi, 500)?, "not increasing in q");
    }
    // (d) end to end through the harness
    let data = prepared()?;
    let mut cfg = RunConfig::default();
    cfg.federation.rounds = 1;
    cfg.training.local_epochs = 1;
    let mut by_clip = Vec::new();
    for clip in [0.8, 1.0, 1.5] {
        cfg.dp.max_grad_norm = clip;
        let row = run_config(&data, true, 0.0, &cfg, 0).map_err(|e| e.to_string())?.row;
        by_clip.push(row.epsilon);
    }
    ensure!(
        by_clip.iter().all(|&e| e == by_clip[0]),
        "epsilon varies with C: {by_clip:?}"
    );
    // ordering over the full desk schedule
    let sizes: Vec<usize> = data.resampled_partitions.iter().map(|p| p.n_samples).collect();
    let e05 = schedule_epsilon(&sizes, 0.5, 30, 5, 32)?;
    let e20 = schedule_epsilon(&sizes, 2.0, 30, 5, 32)?;
    ensure!(e05 > 10.0 * e20, "sigma 0.5 gives {e05:.3}, sigma 2.0 gives {e20:.3}");
    Ok(format!(
        "quadrature gap {worst:.2e}; C-independent eps {:.4}; desk eps sigma=0.5 {e05:.2} vs sigma=2.0 {e20:.3}",
        by_clip[0]
    ))
}

fn criterion_7() -> Outcome {
    let data = prepared()?;
    let cfg = RunConfig::default();
    ensure!(cfg.federation.rounds == 30, "desk schedule is {} rounds", cfg.federation.rounds);
    ensure!(
        cfg.dp.noise_multiplier == 1.0 && cfg.dp.max_grad_norm == 1.0 && cfg.dp.delta == 1e-5,
        "unexpected DP defaults {:?}",
        cfg.dp
    );
    let stages = [Stage::Baseline, Stage::SmoteTomekFedAvg, Stage::SmoteTomekFedProx];
    let jobs: Vec<(Stage, u64)> = stages
        .iter()
        .flat_map(|&s| DESK_SEEDS.iter().map(move |&seed| (s, seed)))
        .collect();
    let rows: Vec<_> = jobs
        .par_iter()
        .map(|&(stage, seed)| run_stage(stage, &data, &cfg, seed))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let mean = |stage: Stage, f: fn(&fedfront::experiment::MetricsRow) -> f64| {
        let v: Vec<f64> = rows.iter().filter(|r| r.stage == stage.label()).map(f).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let base_recall = mean(Stage::Baseline, |r| r.recall);
    let base_acc = mean(Stage::Baseline, |r| r.accuracy);
    let avg_recall = mean(Stage::SmoteTomekFedAvg, |r| r.recall);
    let prox_recall = mean(Stage::SmoteTomekFedProx, |r| r.recall);
    let eps = mean(Stage::SmoteTomekFedAvg, |r| r.epsilon);
    let summary = format!(
        "baseline recall {base_recall:.4} acc {base_acc:.4}; fedavg recall {avg_recall:.4}; \
         fedprox recall {prox_recall:.4}; eps {eps:.2}"
    );
    ensure!(base_recall <= 0.05, "baseline recall too high: {summary}");
    ensure!(base_acc >= 0.80, "baseline accuracy too low: {summary}");
    ensure!(avg_recall >= 0.60, "fedavg recall too low: {summary}");
    ensure!(prox_recall >= avg_recall - 0.01, "fedprox below fedavg: {summary}");
    Ok(summary)
}

fn small_arch() -> ModelArchitecture {
    ModelArchitecture::new(vec![4, 8, 1], vec![Activation::Relu, Activation::Sigmoid]).unwrap()
}

fn criterion_8() -> Outcome {
    let arch = small_arch();
    let training = TrainingConfig {
        learning_rate: 0.01,
        batch_size: 16,
        local_epochs: 2,
    };
    // mu = 0 client against plain DP-SGD
    for seed in 0..10u64 {
        let parts = toy_partitions(1, 50 + 7 * seed as usize, 4, seed);
        let global = init_model(&arch, seed);
        let cfg = ClientConfig {
            training: training.clone(),
            dp: DpConfig {
                noise_multiplier: 1.1,
                max_grad_norm: 0.7,
                delta: 1e-5,
            },
            proximal_mu: 0.0,
        };
        let ours = client_update(&global, &parts[0], &cfg, &mut rng(seed)).map_err(|e| e.to_string())?;
        let plain = plain_dp_sgd_client(&global, &parts[0], &cfg.training, &cfg.dp, &mut rng(seed));
        ensure!(ours.params == plain, "mu = 0 client differs from plain DP-SGD at seed {seed}");
    }
    // single noiseless client against centralized Adam
    let parts = toy_partitions(1, 90, 4, 7);
    let fed = FederationConfig {
        num_clients: 1,
        rounds: 5,
        client_fraction: 1.0,
    };
    let cfg = ClientConfig {
        training: training.clone(),
        dp: DpConfig {
            noise_multiplier: 0.0,
            max_grad_norm: 1e9,
            delta: 1e-5,
        },
        proximal_mu: 0.0,
    };
    let out = run_training(&parts, &fed, &cfg, &arch, 3).map_err(|e| e.to_string())?;
    let mut w = init_model(&arch, 3);
    for round in 0..fed.rounds {
        w = centralized_adam_round(&w, &parts[0], &training, &mut client_rng(3, 0, round), false);
    }
    ensure!(out.params == w, "single-client run differs from centralized Adam");
    // aggregation against the brute-force weighted mean
    let mut r = rng(8);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let k = r.random_range(1..10);
        let updates: Vec<(ModelParams, usize)> = (0..k)
            .map(|_| {
                let w: Vec<f64> = (0..param_count(&arch)).map(|_| r.random_range(-3.0..3.0)).collect();
                (ModelParams::from_vec(&arch, w).unwrap(), r.random_range(1..1000))
            })
            .collect();
        let plain: Vec<(Vec<f64>, usize)> = updates.iter().map(|(p, n)| (p.weights().to_vec(), *n)).collect();
        let ours = aggregate(&updates).map_err(|e| e.to_string())?;
        for (a, b) in ours.weights().iter().zip(brute_weighted_mean(&plain)) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure!(worst <= 1e-12, "aggregate gap {worst:.2e}");
    Ok(format!("10 bit-identical client checks; centralized match exact; aggregate gap {worst:.1e}"))
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for (run, threads) in [("a", "1"), ("b", "4")] {
        let out_dir = dir.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_fedfront"))
            .args(["sweep", "--out-dir"])
            .arg(&out_dir)
            .args(["--mu", "0.01,0", "--sigma", "0.5,2", "--clip", "1", "--seed", "0,1"])
            .args(["--rounds", "2", "--epochs", "1"])
            .env("FEDFRONT_THREADS", threads)
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(
            status.status.success(),
            "sweep failed: {}",
            String::from_utf8_lossy(&status.stderr)
        );
        outputs.push(std::fs::read(out_dir.join("metrics.csv")).map_err(|e| e.to_string())?);
    }
    ensure!(outputs[0] == outputs[1], "metrics CSVs differ");
    let lines = outputs[0].iter().filter(|&&b| b == b'\n').count();
    ensure!(lines == 9, "expected 9 lines, got {lines}");
    Ok(format!("{} identical bytes across 1- and 4-thread sweeps", outputs[0].len()))
}

fn criterion_10() -> Outcome {
    let mut links = 0;
    for seed in 0..50 {
        let (x, y) = tomek_instance(seed);
        ensure!(x.rows() <= 200, "instance too large");
        let ours = tomek_links(&x, &y).map_err(|e| e.to_string())?;
        ensure!(ours == brute_tomek(&x, &y), "mismatch on instance {seed}");
        links += ours.len();
    }
    Ok(format!("50 instances, {links} links, all match"))
}

fn main() {
    let criteria: [(u32, fn() -> Outcome); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, f) in criteria {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n} PASS ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} FAIL ({secs:.1}s): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} of 10 criteria failed");
        std::process::exit(1);
    }
    println!("all 10 criteria passed");
}

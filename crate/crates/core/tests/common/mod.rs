//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use fedfront::data::ClientPartition;
use fedfront::dp::{self, DpConfig};
use fedfront::matrix::Matrix;
use fedfront::nn::{self, AdamState, ModelParams, TrainingConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    Matrix::new(rows, cols, data).unwrap()
}

/// Loss of one sample through the public forward pass.
pub fn sample_loss(params: &ModelParams, x: &[f64], y: f64) -> f64 {
    let m = Matrix::new(1, x.len(), x.to_vec()).unwrap();
    let p = nn::forward(params, &m).unwrap();
    nn::bce_loss(&p, &[y]).unwrap()
}

/// Central finite differences of the single-sample loss.
pub fn finite_difference(params: &ModelParams, x: &[f64], y: f64, h: f64) -> Vec<f64> {
    let mut probe = params.clone();
    (0..params.len())
        .map(|i| {
            let w = params.weights()[i];
            probe.weights_mut()[i] = w + h;
            let up = sample_loss(&probe, x, y);
            probe.weights_mut()[i] = w - h;
            let down = sample_loss(&probe, x, y);
            probe.weights_mut()[i] = w;
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        hi
    } else {
        hi + (lo - hi).exp().ln_1p()
    }
}

/// Per-step Renyi divergence of order `alpha` for the Poisson-subsampled
/// Gaussian mechanism, by direct numerical integration of
/// `E_{z ~ N(0, sigma^2)} [((1 - q) + q * exp((2z - 1) / (2 sigma^2)))^alpha]`
/// with composite Simpson's rule in log space.
pub fn rdp_quadrature(q: f64, sigma: f64, alpha: f64) -> f64 {
    let s2 = sigma * sigma;
    let log_norm = -(sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();
    let (log_keep, log_q) = ((1.0 - q).ln(), q.ln());
    let log_f = |z: f64| {
        let t = (2.0 * z - 1.0) / (2.0 * s2);
        log_norm - z * z / (2.0 * s2) + alpha * log_add(log_keep, log_q + t)
    };
    // the integrand peaks between 0 and roughly alpha
    let lo = -40.0 * sigma - 1.0;
    let hi = alpha + 40.0 * sigma + 1.0;
    let intervals = (((hi - lo) / (sigma / 400.0)).ceil() as usize).next_multiple_of(2);
    let h = (hi - lo) / intervals as f64;
    let values: Vec<f64> = (0..=intervals).map(|i| log_f(lo + i as f64 * h)).collect();
    let peak = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate() {
        let w = if i == 0 || i == intervals {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * (v - peak).exp();
    }
    let log_a = peak + (acc * h / 3.0).ln();
    log_a / (alpha - 1.0)
}

/// Random labelled instance of 2 to 200 rows; about a third use small
/// integer coordinates so exact distance ties are common.
pub fn tomek_instance(seed: u64) -> (Matrix, Vec<f64>) {
    let mut r = rng(seed);
    let n = r.random_range(2..=200);
    let d = r.random_range(1..=6);
    let x = if seed % 3 == 0 {
        let data = (0..n * d).map(|_| r.random_range(0..4) as f64).collect();
        Matrix::new(n, d, data).unwrap()
    } else {
        random_matrix(n, d, 3.0, &mut r)
    };
    let share = r.random_range(0.05..0.6);
    let y = (0..n).map(|_| (r.random::<f64>() < share) as u8 as f64).collect();
    (x, y)
}

/// Nearest other row of each row, ties to the lower index.
pub fn brute_nearest(x: &Matrix) -> Vec<usize> {
    (0..x.rows())
        .map(|i| {
            let mut best = (f64::INFINITY, usize::MAX);
            for j in 0..x.rows() {
                if j == i {
                    continue;
                }
                let d: f64 = x
                    .row(i)
                    .iter()
                    .zip(x.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best.0 {
                    best = (d, j);
                }
            }
            best.1
        })
        .collect()
}

/// Mutual nearest-neighbor pairs with different labels.
pub fn brute_tomek(x: &Matrix, y: &[f64]) -> Vec<(usize, usize)> {
    if x.rows() < 2 {
        return Vec::new();
    }
    let nn = brute_nearest(x);
    let mut out = Vec::new();
    for i in 0..x.rows() {
        let j = nn[i];
        if i < j && nn[j] == i && (y[i] > 0.5) != (y[j] > 0.5) {
            out.push((i, j));
        }
    }
    out
}

/// All rows sorted by (distance, index), first `k` kept.
pub fn brute_knn(x: &Matrix, k: usize) -> Vec<Vec<usize>> {
    (0..x.rows())
        .map(|i| {
            let mut c: Vec<(f64, usize)> = (0..x.rows())
                .filter(|&j| j != i)
                .map(|j| {
                    let d: f64 = x
                        .row(i)
                        .iter()
                        .zip(x.row(j))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (d, j)
                })
                .collect();
            c.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            c.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

/// Coordinate-wise weighted mean, accumulated client by client.
pub fn brute_weighted_mean(updates: &[(Vec<f64>, usize)]) -> Vec<f64> {
    let total: usize = updates.iter().map(|(_, n)| n).sum();
    let len = updates[0].0.len();
    (0..len)
        .map(|i| {
            updates
                .iter()
                .map(|(w, n)| w[i] * *n as f64)
                .sum::<f64>()
                / total as f64
        })
        .collect()
}

/// Plain DP-SGD client with no proximal term: shuffled batches, clipped and
/// noised mean gradients, fresh Adam.
pub fn plain_dp_sgd_client(
    global: &ModelParams,
    data: &ClientPartition,
    training: &TrainingConfig,
    dp_cfg: &DpConfig,
    rng: &mut impl Rng,
) -> ModelParams {
    let n = data.n_samples;
    let batch = training.batch_size.min(n);
    let mut w = global.clone();
    let mut adam = AdamState::new(w.len());
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..training.local_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch) {
            let x = data.features.select_rows(chunk);
            let y: Vec<f64> = chunk.iter().map(|&i| data.labels[i]).collect();
            let grads = nn::per_sample_gradients(&w, &x, &y).unwrap();
            let g = dp::privatize_batch(&grads, dp_cfg, rng).unwrap();
            adam.apply(w.weights_mut(), &g, training.learning_rate).unwrap();
        }
    }
    w
}

/// Mini-batch Adam on one dataset with no clipping and no noise. The batch
/// gradient is either the mean of per-sample rows (summed in row order) or
/// the batched backprop path.
pub fn centralized_adam_round(
    start: &ModelParams,
    data: &ClientPartition,
    training: &TrainingConfig,
    rng: &mut impl Rng,
    batched_path: bool,
) -> ModelParams {
    let n = data.n_samples;
    let batch = training.batch_size.min(n);
    let mut w = start.clone();
    let mut adam = AdamState::new(w.len());
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..training.local_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch) {
            let x = data.features.select_rows(chunk);
            let y: Vec<f64> = chunk.iter().map(|&i| data.labels[i]).collect();
            let g = if batched_path {
                nn::batch_gradient(&w, &x, &y).unwrap().1
            } else {
                let rows = nn::per_sample_gradients(&w, &x, &y).unwrap();
                let mut sum = vec![0.0; w.len()];
                for r in rows.iter_rows() {
                    sum.iter_mut().zip(r).for_each(|(s, v)| *s += v);
                }
                sum.iter_mut().for_each(|s| *s /= chunk.len() as f64);
                sum
            };
            adam.apply(w.weights_mut(), &g, training.learning_rate).unwrap();
        }
    }
    w
}

/// Small linearly separable-ish client partitions for federation tests.
pub fn toy_partitions(num_clients: usize, rows: usize, cols: usize, seed: u64) -> Vec<ClientPartition> {
    let mut r = rng(seed);
    (0..num_clients)
        .map(|c| {
            let x = random_matrix(rows, cols, 1.0, &mut r);
            let y: Vec<f64> = x
                .iter_rows()
                .map(|row| if row[0] + 0.5 * row[1] > 0.0 { 1.0 } else { 0.0 })
                .collect();
            ClientPartition::new(c, x, y).unwrap()
        })
        .collect()
}

/// Ranks-based area under the ROC curve.
pub fn auc(scores: &[f64], labels: &[f64]) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let pos = labels.iter().filter(|&&y| y > 0.5).count() as f64;
    let neg = labels.len() as f64 - pos;
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y > 0.5)
        .map(|(r, _)| r)
        .sum();
    (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg)
}

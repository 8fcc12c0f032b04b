//! DP-SGD gradient processing and Rényi-DP accounting.
//!
//! Each sample's gradient is clipped to L2 norm `C`; the clipped rows are
//! summed, Gaussian noise with standard deviation `sigma * C` is added to the
//! sum, and the result is divided by the batch size.
//!
//! The accountant tracks the Rényi divergence of the Poisson-subsampled
//! Gaussian mechanism over a fixed grid of orders and converts the total to
//! `(epsilon, delta)` with `eps = rdp(alpha) + ln(1/delta) / (alpha - 1)`,
//! minimized over the grid.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::matrix::Matrix;
use crate::{Error, Result};

pub const DEFAULT_DELTA: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpConfig {
    /// Ratio of the noise standard deviation to the clipping norm.
    pub noise_multiplier: f64,
    pub max_grad_norm: f64,
    pub delta: f64,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            noise_multiplier: 1.0,
            max_grad_norm: 1.0,
            delta: DEFAULT_DELTA,
        }
    }
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return Err(Error::Config(format!(
                "noise multiplier must be finite and >= 0, got {}",
                self.noise_multiplier
            )));
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(Error::Config(format!(
                "clipping norm must be > 0, got {}",
                self.max_grad_norm
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

#[inline]
pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales `g` in place by `1 / max(1, |g| / C)`.
pub fn clip_in_place(g: &mut [f64], max_norm: f64) {
    let norm = l2_norm(g);
    let factor = (norm / max_norm).max(1.0);
    if factor > 1.0 {
        g.iter_mut().for_each(|x| *x /= factor);
    }
}

pub fn clip_gradient(g: &[f64], max_norm: f64) -> Vec<f64> {
    let mut out = g.to_vec();
    clip_in_place(&mut out, max_norm);
    out
}

/// `(sum_i clip(g_i, C) + N(0, sigma^2 C^2 I)) / |B|`.
pub fn privatize_batch<R: Rng + ?Sized>(
    per_sample_grads: &Matrix,
    cfg: &DpConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let batch = per_sample_grads.rows();
    if batch == 0 {
        return Err(Error::Dimension("cannot privatize an empty batch".into()));
    }
    let mut sum = vec![0.0; per_sample_grads.cols()];
    let mut row = vec![0.0; per_sample_grads.cols()];
    for g in per_sample_grads.iter_rows() {
        row.copy_from_slice(g);
        clip_in_place(&mut row, cfg.max_grad_norm);
        sum.iter_mut().zip(&row).for_each(|(s, x)| *s += x);
    }
    let std = cfg.noise_multiplier * cfg.max_grad_norm;
    if std > 0.0 {
        for s in &mut sum {
            let z: f64 = StandardNormal.sample(rng);
            *s += std * z;
        }
    }
    let scale = batch as f64;
    sum.iter_mut().for_each(|s| *s /= scale);
    Ok(sum)
}

/// Poisson sampling rate assumed by the accountant for a loader that draws
/// `batch_size` of `n_samples` rows per step.
pub fn sample_rate(batch_size: usize, n_samples: usize) -> Result<f64> {
    if batch_size == 0 || batch_size > n_samples {
        return Err(Error::Config(format!(
            "batch size {batch_size} must lie in 1..={n_samples}"
        )));
    }
    Ok(batch_size as f64 / n_samples as f64)
}

/// Orders `1.25, 1.5, ..., 4.75` followed by the integers `5..=63`.
pub fn default_orders() -> Vec<f64> {
    (5..=19)
        .map(|i| f64::from(i) * 0.25)
        .chain((5..=63).map(f64::from))
        .collect()
}

#[inline]
fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(exp(a) - exp(b))`, clamped to `-inf` when `b >= a`.
#[inline]
fn log_sub(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    if b >= a {
        return f64::NEG_INFINITY;
    }
    a + (-(b - a).exp()).ln_1p()
}

/// `ln(erfc(x))`, using the asymptotic series once `erfc` would underflow.
fn log_erfc(x: f64) -> f64 {
    if x < 26.0 {
        return libm::erfc(x).ln();
    }
    let x2 = x * x;
    let inv = 1.0 / (2.0 * x2);
    // 1 - 1/(2x²) + 3/(2x²)² - 15/(2x²)³ + 105/(2x²)⁴
    let series = 1.0 - inv + 3.0 * inv * inv - 15.0 * inv.powi(3) + 105.0 * inv.powi(4);
    -x2 - (x * std::f64::consts::PI.sqrt()).ln() + series.ln()
}

/// `ln A_alpha` for integer `alpha` via the binomial expansion.
fn log_a_int(q: f64, sigma: f64, alpha: u32) -> f64 {
    let (ln_q, ln_1mq) = (q.ln(), (-q).ln_1p());
    let two_var = 2.0 * sigma * sigma;
    let a = f64::from(alpha);
    let mut log_binom = 0.0;
    let mut acc = f64::NEG_INFINITY;
    for i in 0..=alpha {
        let fi = f64::from(i);
        if i > 0 {
            log_binom += ((a - fi + 1.0) / fi).ln();
        }
        let term = log_binom + fi * ln_q + (a - fi) * ln_1mq + (fi * fi - fi) / two_var;
        acc = log_add(acc, term);
    }
    acc
}

/// `ln A_alpha` for fractional `alpha` via the erfc series.
fn log_a_frac(q: f64, sigma: f64, alpha: f64) -> f64 {
    let (ln_q, ln_1mq) = (q.ln(), (-q).ln_1p());
    let two_var = 2.0 * sigma * sigma;
    let z0 = sigma * sigma * (1.0 / q - 1.0).ln() + 0.5;
    let denom = std::f64::consts::SQRT_2 * sigma;
    let (mut a0, mut a1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut coef = 1.0f64;
    let mut log_abs_coef = 0.0f64;
    for i in 0..100_000u32 {
        let fi = f64::from(i);
        if i > 0 {
            let ratio = (alpha - fi + 1.0) / fi;
            coef *= ratio;
            log_abs_coef += ratio.abs().ln();
        }
        let j = alpha - fi;
        let log_t0 = log_abs_coef + fi * ln_q + j * ln_1mq;
        let log_t1 = log_abs_coef + j * ln_q + fi * ln_1mq;
        let log_e0 = 0.5f64.ln() + log_erfc((fi - z0) / denom);
        let log_e1 = 0.5f64.ln() + log_erfc((z0 - j) / denom);
        let s0 = log_t0 + (fi * fi - fi) / two_var + log_e0;
        let s1 = log_t1 + (j * j - j) / two_var + log_e1;
        if coef > 0.0 {
            a0 = log_add(a0, s0);
            a1 = log_add(a1, s1);
        } else {
            a0 = log_sub(a0, s0);
            a1 = log_sub(a1, s1);
        }
        if s0.max(s1) < -30.0 {
            break;
        }
    }
    log_add(a0, a1)
}

/// Per-step Rényi divergence of the Poisson-subsampled Gaussian mechanism at
/// order `alpha > 1`, for sampling rate `q` and noise multiplier `sigma`.
pub fn compute_rdp(q: f64, sigma: f64, alpha: f64) -> f64 {
    if q == 0.0 {
        return 0.0;
    }
    if sigma == 0.0 {
        return f64::INFINITY;
    }
    if q == 1.0 {
        return alpha / (2.0 * sigma * sigma);
    }
    let log_a = if alpha.fract() == 0.0 && alpha <= f64::from(u32::MAX) {
        log_a_int(q, sigma, alpha as u32)
    } else {
        log_a_frac(q, sigma, alpha)
    };
    log_a / (alpha - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacySpend {
    /// `f64::INFINITY` when some step ran without noise.
    pub epsilon: f64,
    pub delta: f64,
    /// The order that attains the minimum; NaN when unbounded or unused.
    pub optimal_order: f64,
}

impl PrivacySpend {
    pub fn is_unbounded(&self) -> bool {
        self.epsilon.is_infinite()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct StepCache {
    sigma: f64,
    q: f64,
    rdp: Vec<f64>,
}

/// Accumulated Rényi divergence per order.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyAccountant {
    orders: Vec<f64>,
    accumulated_rdp: Vec<f64>,
    steps_taken: u64,
    cache: Option<StepCache>,
}

impl Default for PrivacyAccountant {
    fn default() -> Self {
        Self::with_orders(default_orders()).expect("default orders are valid")
    }
}

impl PrivacyAccountant {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_orders(orders: Vec<f64>) -> Result<Self> {
        if let Some(bad) = orders.iter().find(|&&a| !(a > 1.0 && a.is_finite())) {
            return Err(Error::Config(format!("Rényi order {bad} must be > 1")));
        }
        Ok(Self {
            accumulated_rdp: vec![0.0; orders.len()],
            orders,
            steps_taken: 0,
            cache: None,
        })
    }

    pub fn orders(&self) -> &[f64] {
        &self.orders
    }

    pub fn accumulated_rdp(&self) -> &[f64] {
        &self.accumulated_rdp
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps_taken
    }

    fn per_step(&mut self, sigma: f64, q: f64) -> Result<&[f64]> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!(
                "noise multiplier must be finite and >= 0, got {sigma}"
            )));
        }
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::Config(format!("sample rate must lie in (0, 1], got {q}")));
        }
        let stale = !matches!(&self.cache, Some(c) if c.sigma == sigma && c.q == q);
        if stale {
            let rdp = self.orders.iter().map(|&a| compute_rdp(q, sigma, a)).collect();
            self.cache = Some(StepCache { sigma, q, rdp });
        }
        Ok(&self.cache.as_ref().expect("cache filled above").rdp)
    }

    /// Records one noisy step. `sigma = 0` is accepted and makes the
    /// accountant unbounded.
    pub fn step(&mut self, sigma: f64, q: f64) -> Result<()> {
        self.compose(sigma, q, 1)
    }

    /// Records `steps` identical noisy steps.
    pub fn compose(&mut self, sigma: f64, q: f64, steps: u64) -> Result<()> {
        let per_step = self.per_step(sigma, q)?.to_vec();
        for _ in 0..steps {
            for (acc, r) in self.accumulated_rdp.iter_mut().zip(&per_step) {
                *acc += r;
            }
        }
        self.steps_taken += steps;
        Ok(())
    }

    /// Adds another accountant's ledger (same order grid) to this one.
    pub fn absorb(&mut self, other: &PrivacyAccountant) -> Result<()> {
        if self.orders != other.orders {
            return Err(Error::Config("accountants use different order grids".into()));
        }
        for (a, b) in self.accumulated_rdp.iter_mut().zip(&other.accumulated_rdp) {
            *a += b;
        }
        self.steps_taken += other.steps_taken;
        Ok(())
    }

    pub fn epsilon(&self, delta: f64) -> Result<PrivacySpend> {
        if self.orders.is_empty() {
            return Err(Error::Config("accountant has an empty order grid".into()));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {delta}")));
        }
        if self.steps_taken == 0 {
            return Ok(PrivacySpend {
                epsilon: 0.0,
                delta,
                optimal_order: f64::NAN,
            });
        }
        let log_inv_delta = -delta.ln();
        let mut best = PrivacySpend {
            epsilon: f64::INFINITY,
            delta,
            optimal_order: f64::NAN,
        };
        for (&alpha, &rdp) in self.orders.iter().zip(&self.accumulated_rdp) {
            let eps = rdp + log_inv_delta / (alpha - 1.0);
            if eps < best.epsilon {
                best.epsilon = eps;
                best.optimal_order = alpha;
            }
        }
        best.epsilon = best.epsilon.max(0.0);
        Ok(best)
    }
}

/// Functional form of [`PrivacyAccountant::step`].
pub fn accountant_step(acct: &PrivacyAccountant, sigma: f64, q: f64) -> Result<PrivacyAccountant> {
    let mut next = acct.clone();
    next.step(sigma, q)?;
    Ok(next)
}

/// Privacy spend of the most exposed accountant.
pub fn max_epsilon<'a>(
    accountants: impl IntoIterator<Item = &'a PrivacyAccountant>,
    delta: f64,
) -> Result<PrivacySpend> {
    let mut worst: Option<PrivacySpend> = None;
    for acct in accountants {
        let spend = acct.epsilon(delta)?;
        if worst.is_none_or(|w| spend.epsilon > w.epsilon) {
            worst = Some(spend);
        }
    }
    worst.ok_or_else(|| Error::Config("no accountants to query".into()))
}

//! Simulated federated training.
//!
//! Every round, each selected client starts from the global weights, runs
//! `E` epochs of DP-SGD with Adam on its own partition, and returns its
//! weights. The server replaces the global model with the sample-weighted
//! mean of the returned weights. With `mu > 0` each client also carries the
//! proximal penalty `(mu / 2) * |w - w_global|^2`; its gradient is added to
//! every per-sample gradient before clipping.
//!
//! Client randomness comes from a ChaCha stream keyed by
//! `(seed, client_id, round)`, so results do not depend on the order or
//! thread in which clients run.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::ClientPartition;
use crate::dp::{self, DpConfig, PrivacyAccountant, PrivacySpend};
use crate::matrix::Matrix;
use crate::nn::{self, AdamState, ModelArchitecture, ModelParams, TrainingConfig, Workspace};
use crate::{Error, Result};

/// Local-training settings shared by every client.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClientConfig {
    pub training: TrainingConfig,
    pub dp: DpConfig,
    /// Proximal coefficient; zero gives the plain FedAvg local objective.
    pub proximal_mu: f64,
}

impl ClientConfig {
    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        self.dp.validate()?;
        if !(self.proximal_mu >= 0.0 && self.proximal_mu.is_finite()) {
            return Err(Error::Config(format!(
                "proximal mu must be finite and >= 0, got {}",
                self.proximal_mu
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FederationConfig {
    pub num_clients: usize,
    pub rounds: usize,
    pub client_fraction: f64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            num_clients: 10,
            rounds: 100,
            client_fraction: 1.0,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::Config("at least one client is required".into()));
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "client fraction must lie in (0, 1], got {}",
                self.client_fraction
            )));
        }
        Ok(())
    }

    /// `ceil(fraction * N)`, at least one.
    pub fn clients_per_round(&self) -> usize {
        ((self.client_fraction * self.num_clients as f64).ceil() as usize).clamp(1, self.num_clients)
    }
}

/// Random stream for one client in one round.
pub fn client_rng(seed: u64, client_id: usize, round: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((client_id as u64) << 32) | (round as u64 & 0xffff_ffff));
    rng
}

/// Stream used by the server for client selection.
fn selection_rng(seed: u64, round: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((u64::from(u32::MAX) << 32) | (round as u64 & 0xffff_ffff));
    rng
}

fn check_layout(w: &ModelParams, w_global: &ModelParams) -> Result<()> {
    if w.len() != w_global.len() {
        return Err(Error::Dimension(format!(
            "local model has {} weights, global has {}",
            w.len(),
            w_global.len()
        )));
    }
    Ok(())
}

/// `mu * (w - w_global)`.
pub fn proximal_gradient(w: &ModelParams, w_global: &ModelParams, mu: f64) -> Result<Vec<f64>> {
    check_layout(w, w_global)?;
    Ok(w.weights()
        .iter()
        .zip(w_global.weights())
        .map(|(a, b)| mu * (a - b))
        .collect())
}

/// `(mu / 2) * |w - w_global|^2`.
pub fn proximal_penalty(w: &ModelParams, w_global: &ModelParams, mu: f64) -> Result<f64> {
    check_layout(w, w_global)?;
    let sq: f64 = w
        .weights()
        .iter()
        .zip(w_global.weights())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(0.5 * mu * sq)
}

/// Result of one client's local training.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub params: ModelParams,
    /// Weight of this update in aggregation.
    pub n_samples: usize,
    /// Privacy spent by this update alone (one step per batch).
    pub accountant_delta: PrivacyAccountant,
    /// Mean standard loss over the last local epoch.
    pub train_loss: f64,
    pub warnings: Vec<String>,
}

pub fn client_update<R: rand::Rng + ?Sized>(
    global: &ModelParams,
    data: &ClientPartition,
    cfg: &ClientConfig,
    rng: &mut R,
) -> Result<ClientUpdate> {
    cfg.validate()?;
    let n = data.n_samples;
    if n == 0 {
        return Err(Error::Data(format!("client {} has no data", data.client_id)));
    }
    if data.features.cols() != global.input_width() {
        return Err(Error::Dimension(format!(
            "client {} has {} features, model expects {}",
            data.client_id,
            data.features.cols(),
            global.input_width()
        )));
    }
    let mut warnings = Vec::new();
    let mut batch_size = cfg.training.batch_size;
    if batch_size > n {
        warnings.push(format!(
            "client {}: batch size {batch_size} exceeds {n} samples; using {n}",
            data.client_id
        ));
        batch_size = n;
    }
    let q = dp::sample_rate(batch_size, n)?;
    let mu = cfg.proximal_mu;
    let sigma = cfg.dp.noise_multiplier;

    let mut local = global.clone();
    let mut adam = AdamState::new(global.len());
    let mut acct = PrivacyAccountant::new();
    let mut ws = Workspace::new(global);
    let mut full = Matrix::zeros(batch_size, global.len());
    let mut prox = vec![0.0; global.len()];
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_loss = 0.0;

    for _ in 0..cfg.training.local_epochs {
        order.shuffle(rng);
        epoch_loss = 0.0;
        for chunk in order.chunks(batch_size) {
            let mut short;
            let grads = if chunk.len() == batch_size {
                &mut full
            } else {
                short = Matrix::zeros(chunk.len(), global.len());
                &mut short
            };
            if mu != 0.0 {
                for ((p, w), g) in prox.iter_mut().zip(local.weights()).zip(global.weights()) {
                    *p = mu * (w - g);
                }
            }
            for (row, &i) in chunk.iter().enumerate() {
                let out = grads.row_mut(row);
                epoch_loss +=
                    nn::sample_gradient(&local, data.features.row(i), data.labels[i], &mut ws, out);
                if mu != 0.0 {
                    out.iter_mut().zip(&prox).for_each(|(g, p)| *g += p);
                }
            }
            let noisy = dp::privatize_batch(grads, &cfg.dp, rng)?;
            adam.apply(local.weights_mut(), &noisy, cfg.training.learning_rate)?;
            acct.step(sigma, q)?;
        }
        epoch_loss /= n as f64;
    }

    Ok(ClientUpdate {
        client_id: data.client_id,
        params: local,
        n_samples: n,
        accountant_delta: acct,
        train_loss: epoch_loss,
        warnings,
    })
}

/// Sample-count-weighted mean of client weights.
pub fn aggregate(updates: &[(ModelParams, usize)]) -> Result<ModelParams> {
    let (first, _) = updates
        .first()
        .ok_or_else(|| Error::Config("nothing to aggregate".into()))?;
    let mut total = 0usize;
    for (p, n) in updates {
        if !p.same_layout(first) {
            return Err(Error::Dimension("client models have different layouts".into()));
        }
        if *n == 0 {
            return Err(Error::Config("client update with zero samples".into()));
        }
        total += n;
    }
    // w_0 + sum_i (n_i / n) (w_i - w_0): the same convex combination, but
    // identical inputs come back bit for bit
    let base = first.weights();
    let mut shift = vec![0.0; first.len()];
    for (p, n) in updates {
        let weight = *n as f64 / total as f64;
        for ((s, w), b) in shift.iter_mut().zip(p.weights()).zip(base) {
            *s += weight * (w - b);
        }
    }
    let out = base.iter().zip(&shift).map(|(b, s)| b + s).collect();
    Ok(first.with_weights(out))
}

/// Server-side state carried between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct FederationState {
    pub global: ModelParams,
    /// Index of the next round to run.
    pub round: usize,
    /// One ledger per client, indexed by partition position.
    pub accountants: Vec<PrivacyAccountant>,
}

impl FederationState {
    pub fn new(global: ModelParams, num_clients: usize) -> Self {
        Self {
            global,
            round: 0,
            accountants: vec![PrivacyAccountant::new(); num_clients],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundResult {
    pub round_index: usize,
    pub selected: Vec<usize>,
    pub client_params: Vec<(ModelParams, usize)>,
    pub aggregated: ModelParams,
    pub per_client_accountants: Vec<PrivacyAccountant>,
    pub mean_train_loss: f64,
    pub warnings: Vec<String>,
}

fn select_clients(fed: &FederationConfig, seed: u64, round: usize) -> Vec<usize> {
    let k = fed.clients_per_round();
    if k == fed.num_clients {
        return (0..k).collect();
    }
    let all: Vec<usize> = (0..fed.num_clients).collect();
    let mut picked: Vec<usize> = all
        .choose_multiple(&mut selection_rng(seed, round), k)
        .copied()
        .collect();
    picked.sort_unstable();
    picked
}

/// Runs one communication round and returns the advanced state.
pub fn run_round(
    state: &FederationState,
    partitions: &[ClientPartition],
    fed: &FederationConfig,
    client_cfg: &ClientConfig,
    seed: u64,
) -> Result<(FederationState, RoundResult)> {
    fed.validate()?;
    if partitions.len() != fed.num_clients || state.accountants.len() != fed.num_clients {
        return Err(Error::Config(format!(
            "{} partitions and {} accountants for {} clients",
            partitions.len(),
            state.accountants.len(),
            fed.num_clients
        )));
    }
    let round = state.round;
    let selected = select_clients(fed, seed, round);
    let updates: Vec<ClientUpdate> = selected
        .par_iter()
        .map(|&c| {
            let mut rng = client_rng(seed, c, round);
            client_update(&state.global, &partitions[c], client_cfg, &mut rng)
        })
        .collect::<Result<_>>()?;

    let client_params: Vec<(ModelParams, usize)> = updates
        .iter()
        .map(|u| (u.params.clone(), u.n_samples))
        .collect();
    let aggregated = aggregate(&client_params)?;
    let mut accountants = state.accountants.clone();
    for (u, &c) in updates.iter().zip(&selected) {
        accountants[c].absorb(&u.accountant_delta)?;
    }
    let mean_train_loss =
        updates.iter().map(|u| u.train_loss).sum::<f64>() / updates.len() as f64;
    let warnings = updates.iter().flat_map(|u| u.warnings.clone()).collect();

    let next = FederationState {
        global: aggregated.clone(),
        round: round + 1,
        accountants: accountants.clone(),
    };
    Ok((
        next,
        RoundResult {
            round_index: round,
            selected,
            client_params,
            aggregated,
            per_client_accountants: accountants,
            mean_train_loss,
            warnings,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundSummary {
    pub round: usize,
    pub mean_train_loss: f64,
    /// Worst-client epsilon after this round.
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingOutcome {
    pub params: ModelParams,
    pub history: Vec<RoundSummary>,
    pub spend: PrivacySpend,
    pub warnings: Vec<String>,
}

/// Trains from a fresh seeded model for `fed.rounds` rounds. The reported
/// spend is the maximum over client accountants.
pub fn run_training(
    partitions: &[ClientPartition],
    fed: &FederationConfig,
    client_cfg: &ClientConfig,
    arch: &ModelArchitecture,
    seed: u64,
) -> Result<TrainingOutcome> {
    if partitions.is_empty() {
        return Err(Error::Config("no client partitions".into()));
    }
    client_cfg.validate()?;
    let delta = client_cfg.dp.delta;
    let mut state = FederationState::new(nn::init_model(arch, seed), fed.num_clients);
    let mut history = Vec::with_capacity(fed.rounds);
    let mut warnings = Vec::new();
    for _ in 0..fed.rounds {
        let (next, result) = run_round(&state, partitions, fed, client_cfg, seed)?;
        let spend = dp::max_epsilon(&next.accountants, delta)?;
        history.push(RoundSummary {
            round: result.round_index,
            mean_train_loss: result.mean_train_loss,
            epsilon: spend.epsilon,
        });
        if warnings.is_empty() {
            warnings = result.warnings;
        }
        state = next;
    }
    let spend = dp::max_epsilon(&state.accountants, delta)?;
    Ok(TrainingOutcome {
        params: state.global,
        history,
        spend,
        warnings,
    })
}

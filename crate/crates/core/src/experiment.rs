//! Stages, grid sweeps, evaluation and the metrics log.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{self, ClientPartition, PreprocessStats, RawRecord};
use crate::dp::DpConfig;
use crate::federation::{self, ClientConfig, FederationConfig, TrainingOutcome};
use crate::matrix::Matrix;
use crate::nn::{self, ModelArchitecture, ModelParams, TrainingConfig};
use crate::resample::{ResampleReport, SmoteTomek};
use crate::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const FEDPROX_MU: f64 = 0.01;
/// Round count used for quick runs; the full schedule is 100.
pub const DESK_ROUNDS: usize = 30;
pub const DESK_SEEDS: [u64; 3] = [0, 1, 2];
/// Size and positive count of the public stroke file after dropping the
/// single `gender = Other` row.
pub const SYNTH_ROWS: usize = 5109;
pub const SYNTH_POSITIVES: usize = 249;
pub const METRICS_HEADER: [&str; 10] = [
    "stage",
    "mu",
    "sigma",
    "clip",
    "seed",
    "epsilon",
    "accuracy",
    "recall",
    "precision",
    "f1",
];
/// Stage-column prefix for sweep cells that failed.
pub const ERROR_MARKER: &str = "error:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    let den = precision + recall;
    if den > 0.0 {
        2.0 * precision * recall / den
    } else {
        0.0
    }
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn f1(&self) -> f64 {
        f1_score(self.precision(), self.recall())
    }

    pub fn metrics(&self) -> Metrics {
        Metrics {
            accuracy: self.accuracy(),
            recall: self.recall(),
            precision: self.precision(),
            f1: self.f1(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

/// Thresholded evaluation: a row is predicted positive when the model
/// output is at least `threshold`.
pub fn evaluate(
    params: &ModelParams,
    features: &Matrix,
    labels: &[f64],
    threshold: f64,
) -> Result<(ConfusionCounts, Metrics)> {
    if labels.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty test set".into()));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let probs = nn::forward(params, features)?;
    if probs.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} predictions vs {} labels",
            probs.len(),
            labels.len()
        )));
    }
    Ok(confusion(&probs, labels, threshold))
}

fn confusion(probs: &[f64], labels: &[f64], threshold: f64) -> (ConfusionCounts, Metrics) {
    let mut c = ConfusionCounts::default();
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= threshold, y > 0.5) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    (c, c.metrics())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Baseline,
    SmoteTomekFedAvg,
    SmoteTomekFedProx,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Baseline, Stage::SmoteTomekFedAvg, Stage::SmoteTomekFedProx];

    pub fn label(self) -> &'static str {
        match self {
            Stage::Baseline => "baseline",
            Stage::SmoteTomekFedAvg => "smotetomek_fedavg",
            Stage::SmoteTomekFedProx => "smotetomek_fedprox",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.label() == s)
    }

    pub fn resampled(self) -> bool {
        self != Stage::Baseline
    }

    pub fn mu(self) -> f64 {
        match self {
            Stage::SmoteTomekFedProx => FEDPROX_MU,
            _ => 0.0,
        }
    }
}

/// Label for an arbitrary (resampling, mu) combination.
pub fn stage_label(resampled: bool, mu: f64) -> &'static str {
    match (resampled, mu > 0.0) {
        (false, false) => "baseline",
        (false, true) => "fedprox",
        (true, false) => "smotetomek_fedavg",
        (true, true) => "smotetomek_fedprox",
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub stage: String,
    pub mu: f64,
    pub sigma: f64,
    pub clip: f64,
    pub seed: u64,
    pub epsilon: f64,
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    /// Not written to the CSV.
    pub counts: Option<ConfusionCounts>,
    /// Set when the run failed; metrics are then NaN.
    pub error: Option<String>,
}

impl MetricsRow {
    fn failed(stage: &str, mu: f64, sigma: f64, clip: f64, seed: u64, message: String) -> Self {
        Self {
            stage: stage.to_string(),
            mu,
            sigma,
            clip,
            seed,
            epsilon: f64::NAN,
            accuracy: f64::NAN,
            recall: f64::NAN,
            precision: f64::NAN,
            f1: f64::NAN,
            counts: None,
            error: Some(message),
        }
    }

    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }
}

/// How the raw records become client partitions and a test set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataConfig {
    pub test_fraction: f64,
    pub num_clients: usize,
    /// Seeds the split and the per-client resampling streams.
    pub data_seed: u64,
    /// Shuffle the training matrix again before slicing it into clients.
    pub shuffle_before_partition: bool,
    pub resampler: SmoteTomek,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            num_clients: 10,
            data_seed: 42,
            shuffle_before_partition: false,
            resampler: SmoteTomek::default(),
        }
    }
}

/// Everything a run needs from the data side, computed once and shared by
/// every stage and sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub stats: PreprocessStats,
    pub train_rows: usize,
    pub test_features: Matrix,
    pub test_labels: Vec<f64>,
    pub raw_partitions: Vec<ClientPartition>,
    pub resampled_partitions: Vec<ClientPartition>,
    pub resample_reports: Vec<ResampleReport>,
}

impl PreparedData {
    pub fn partitions(&self, resampled: bool) -> &[ClientPartition] {
        if resampled {
            &self.resampled_partitions
        } else {
            &self.raw_partitions
        }
    }
}

pub fn prepare_data(records: Vec<RawRecord>, cfg: &DataConfig) -> Result<PreparedData> {
    let records = data::drop_other_gender(records);
    let (train, test) = data::stratified_split(&records, cfg.test_fraction, cfg.data_seed)?;
    let stats = data::fit_preprocessor(&train)?;
    let (train_x, train_y) = data::transform(&train, &stats)?;
    let (test_x, test_y) = data::transform(&test, &stats)?;
    let (train_x, train_y) = if cfg.shuffle_before_partition {
        data::shuffle_rows(&train_x.rows, &train_y, cfg.data_seed)
    } else {
        (train_x.rows, train_y)
    };
    let raw_partitions = data::partition_clients(&train_x, &train_y, cfg.num_clients)?;
    let mut resampled_partitions = Vec::with_capacity(raw_partitions.len());
    let mut resample_reports = Vec::with_capacity(raw_partitions.len());
    for p in &raw_partitions {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.data_seed);
        rng.set_stream(p.client_id as u64);
        let (x, y, report) = cfg.resampler.resample(&p.features, &p.labels, &mut rng)?;
        resampled_partitions.push(ClientPartition::new(p.client_id, x, y)?);
        resample_reports.push(report);
    }
    Ok(PreparedData {
        stats,
        train_rows: train_y.len(),
        test_features: test_x.rows,
        test_labels: test_y,
        raw_partitions,
        resampled_partitions,
        resample_reports,
    })
}

/// Synthetic stand-in with the size and class balance of the public file.
pub fn synthetic_records(seed: u64) -> Result<Vec<RawRecord>> {
    data::synth_dataset(SYNTH_ROWS, SYNTH_POSITIVES as f64 / SYNTH_ROWS as f64, seed)
}

/// Training settings shared by all runs of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub federation: FederationConfig,
    pub training: TrainingConfig,
    pub dp: DpConfig,
    pub architecture: ModelArchitecture,
    pub threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            federation: FederationConfig {
                rounds: DESK_ROUNDS,
                ..FederationConfig::default()
            },
            training: TrainingConfig::default(),
            dp: DpConfig::default(),
            architecture: ModelArchitecture::default(),
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub row: MetricsRow,
    pub outcome: TrainingOutcome,
}

/// Trains one configuration and evaluates it on the untouched test set.
pub fn run_config(
    data: &PreparedData,
    resampled: bool,
    mu: f64,
    cfg: &RunConfig,
    seed: u64,
) -> Result<RunOutput> {
    let partitions = data.partitions(resampled);
    let fed = FederationConfig {
        num_clients: partitions.len(),
        ..cfg.federation
    };
    let client = ClientConfig {
        training: cfg.training,
        dp: cfg.dp,
        proximal_mu: mu,
    };
    let outcome = federation::run_training(partitions, &fed, &client, &cfg.architecture, seed)?;
    let (counts, m) = evaluate(&outcome.params, &data.test_features, &data.test_labels, cfg.threshold)?;
    let row = MetricsRow {
        stage: stage_label(resampled, mu).to_string(),
        mu,
        sigma: cfg.dp.noise_multiplier,
        clip: cfg.dp.max_grad_norm,
        seed,
        epsilon: outcome.spend.epsilon,
        accuracy: m.accuracy,
        recall: m.recall,
        precision: m.precision,
        f1: m.f1,
        counts: Some(counts),
        error: None,
    };
    Ok(RunOutput { row, outcome })
}

pub fn run_stage(stage: Stage, data: &PreparedData, cfg: &RunConfig, seed: u64) -> Result<MetricsRow> {
    Ok(run_config(data, stage.resampled(), stage.mu(), cfg, seed)?.row)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub mu_values: Vec<f64>,
    pub sigma_values: Vec<f64>,
    pub clip_values: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            mu_values: vec![1.0, 0.1, 0.01],
            sigma_values: vec![0.5, 1.0, 1.5, 2.0],
            clip_values: vec![0.8, 1.0, 1.5],
            seeds: DESK_SEEDS.to_vec(),
        }
    }
}

/// One point of the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub mu: f64,
    pub sigma: f64,
    pub clip: f64,
    pub seed: u64,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        let lists = [
            ("mu", self.mu_values.is_empty()),
            ("sigma", self.sigma_values.is_empty()),
            ("clip", self.clip_values.is_empty()),
            ("seed", self.seeds.is_empty()),
        ];
        if let Some((name, _)) = lists.iter().find(|(_, empty)| *empty) {
            return Err(Error::Config(format!("{name} list is empty")));
        }
        if self.mu_values.iter().any(|&m| !(m >= 0.0 && m.is_finite())) {
            return Err(Error::Config("mu values must be finite and >= 0".into()));
        }
        if self.sigma_values.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
            return Err(Error::Config("sigma values must be finite and >= 0".into()));
        }
        if self.clip_values.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(Error::Config("clip values must be finite and > 0".into()));
        }
        Ok(())
    }

    /// Cells in log order: mu outermost, then sigma, clip, seed.
    pub fn cells(&self) -> Vec<SweepCell> {
        let mut out = Vec::new();
        for &mu in &self.mu_values {
            for &sigma in &self.sigma_values {
                for &clip in &self.clip_values {
                    for &seed in &self.seeds {
                        out.push(SweepCell { mu, sigma, clip, seed });
                    }
                }
            }
        }
        out
    }
}

/// Runs every grid cell. Cells run in parallel on the current rayon pool;
/// the returned rows follow [`SweepGrid::cells`] order. A failed cell
/// becomes an error row and the sweep carries on.
pub fn run_sweep(
    grid: &SweepGrid,
    data: &PreparedData,
    base: &RunConfig,
    resampled: bool,
) -> Result<Vec<MetricsRow>> {
    grid.validate()?;
    let rows = grid
        .cells()
        .par_iter()
        .map(|cell| {
            let cfg = RunConfig {
                dp: DpConfig {
                    noise_multiplier: cell.sigma,
                    max_grad_norm: cell.clip,
                    ..base.dp
                },
                ..base.clone()
            };
            run_config(data, resampled, cell.mu, &cfg, cell.seed)
                .map(|out| out.row)
                .unwrap_or_else(|e| {
                    MetricsRow::failed(
                        stage_label(resampled, cell.mu),
                        cell.mu,
                        cell.sigma,
                        cell.clip,
                        cell.seed,
                        e.to_string(),
                    )
                })
        })
        .collect();
    Ok(rows)
}

fn real(x: f64) -> String {
    format!("{x:.6}")
}

pub fn metrics_csv_string(rows: &[MetricsRow]) -> String {
    let mut out = METRICS_HEADER.join(",");
    out.push('\n');
    for r in rows {
        let stage = if r.is_error() {
            format!("{ERROR_MARKER}{}", r.stage)
        } else {
            r.stage.clone()
        };
        let fields = [
            stage,
            real(r.mu),
            real(r.sigma),
            real(r.clip),
            r.seed.to_string(),
            real(r.epsilon),
            real(r.accuracy),
            real(r.recall),
            real(r.precision),
            real(r.f1),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Writes the metrics log with every real at six decimals.
pub fn emit_metrics_csv(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(metrics_csv_string(rows).as_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_metrics_csv(file, &path.display().to_string())
}

pub fn parse_metrics_csv<R: std::io::Read>(reader: R, source: &str) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let schema = |message: String| Error::Schema {
        path: source.into(),
        message,
    };
    let header = rdr.headers().map_err(|e| schema(e.to_string()))?.clone();
    if header.iter().ne(METRICS_HEADER.iter().copied()) {
        return Err(schema(format!(
            "expected header `{}`",
            METRICS_HEADER.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| schema(e.to_string()))?;
        let field = |col: usize| -> Result<f64> {
            rec[col].parse::<f64>().map_err(|_| Error::Record {
                path: source.into(),
                row,
                column: METRICS_HEADER[col].to_string(),
                message: format!("not a number: `{}`", &rec[col]),
            })
        };
        let seed = rec[4].parse::<u64>().map_err(|_| Error::Record {
            path: source.into(),
            row,
            column: "seed".into(),
            message: format!("not an integer: `{}`", &rec[4]),
        })?;
        let (stage, error) = match rec[0].strip_prefix(ERROR_MARKER) {
            Some(s) => (s.to_string(), Some("run failed".to_string())),
            None => (rec[0].to_string(), None),
        };
        rows.push(MetricsRow {
            stage,
            mu: field(1)?,
            sigma: field(2)?,
            clip: field(3)?,
            seed,
            epsilon: field(5)?,
            accuracy: field(6)?,
            recall: field(7)?,
            precision: field(8)?,
            f1: field(9)?,
            counts: None,
            error,
        });
    }
    Ok(rows)
}

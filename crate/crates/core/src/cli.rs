//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 run failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{self, RawRecord};
use crate::dp::{DpConfig, DEFAULT_DELTA};
use crate::experiment::{
    self, DataConfig, PreparedData, RunConfig, Stage, SweepGrid, DESK_ROUNDS, SYNTH_POSITIVES,
    SYNTH_ROWS,
};
use crate::federation::{ClientConfig, FederationConfig};
use crate::manifest::RunManifest;
use crate::nn::TrainingConfig;
use crate::report;
use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUN: i32 = 3;
pub const THREADS_ENV: &str = "FEDFRONT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "fedfront", version, about = "Private federated training on imbalanced tabular data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Encode a stroke CSV into feature dumps plus fitted statistics
    Preprocess(PreprocessArgs),
    /// Write a synthetic stroke-schema CSV
    Synth(SynthArgs),
    /// Train and evaluate a single configuration
    Train(TrainArgs),
    /// Run the mu x sigma x clip x seed grid
    Sweep(SweepArgs),
    /// Draw the frontier and heatmap from a metrics CSV
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Stroke CSV; a synthetic stand-in is generated when omitted
    #[arg(long)]
    data: Option<PathBuf>,
    /// Seed for the split, resampling and the synthetic stand-in
    #[arg(long, default_value_t = 42)]
    data_seed: u64,
    #[arg(long, default_value_t = 10)]
    clients: usize,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    /// Train on the raw partitions instead of SMOTETomek output
    #[arg(long)]
    no_resample: bool,
}

#[derive(Debug, Args)]
struct ScheduleArgs {
    #[arg(long, default_value_t = DESK_ROUNDS)]
    rounds: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    client_fraction: f64,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = SYNTH_ROWS)]
    rows: usize,
    #[arg(long, default_value_t = SYNTH_POSITIVES as f64 / SYNTH_ROWS as f64)]
    positive_rate: f64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0, conflicts_with = "stage")]
    mu: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 1.0)]
    clip: f64,
    /// baseline, smotetomek_fedavg or smotetomek_fedprox
    #[arg(long, value_parser = parse_stage, conflicts_with = "no_resample")]
    stage: Option<Stage>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    schedule: ScheduleArgs,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seed: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "1.0,0.1,0.01")]
    mu: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.5,1.0,1.5,2.0")]
    sigma: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.8,1.0,1.5")]
    clip: Vec<f64>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    metrics: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    Stage::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Stage::ALL.iter().map(|s| s.label()).collect();
        format!("unknown stage `{s}`; expected one of {}", names.join(", "))
    })
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(Error),
    Run(Error),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Data(_) => EXIT_DATA,
            Failure::Run(_) => EXIT_RUN,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Data(e) => write!(f, "data error: {e}"),
            Failure::Run(e) => write!(f, "run failed: {e}"),
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn usage(e: Error) -> Failure {
    Failure::Usage(e.to_string())
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Preprocess(a) => preprocess(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Sweep(a) => sweep(a),
        Command::Report(a) => report_cmd(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("fedfront: {f}");
            f.code()
        }
    }
}

fn create_dir(dir: &Path) -> Outcome<()> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Run(Error::Io {
        path: dir.to_path_buf(),
        source: e,
    }))
}

fn load_records(data: &Option<PathBuf>, seed: u64) -> Outcome<(Vec<RawRecord>, String)> {
    match data {
        Some(path) => {
            let records = data::parse_csv(path).map_err(Failure::Data)?;
            Ok((records, path.display().to_string()))
        }
        None => {
            let records = experiment::synthetic_records(seed).map_err(Failure::Data)?;
            Ok((records, format!("synthetic:{SYNTH_ROWS}:{seed}")))
        }
    }
}

fn prepare(args: &DataArgs) -> Outcome<(PreparedData, DataConfig, String)> {
    let cfg = DataConfig {
        test_fraction: args.test_fraction,
        num_clients: args.clients,
        data_seed: args.data_seed,
        ..DataConfig::default()
    };
    if !(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0) {
        return Err(Failure::Usage(format!(
            "--test-fraction must lie in (0, 1), got {}",
            cfg.test_fraction
        )));
    }
    if cfg.num_clients == 0 {
        return Err(Failure::Usage("--clients must be at least 1".into()));
    }
    let (records, source) = load_records(&args.data, args.data_seed)?;
    let prepared = experiment::prepare_data(records, &cfg).map_err(Failure::Data)?;
    Ok((prepared, cfg, source))
}

fn run_config_from(schedule: &ScheduleArgs, clients: usize, sigma: f64, clip: f64) -> Outcome<RunConfig> {
    let cfg = RunConfig {
        federation: FederationConfig {
            num_clients: clients,
            rounds: schedule.rounds,
            client_fraction: schedule.client_fraction,
        },
        training: TrainingConfig {
            learning_rate: schedule.lr,
            batch_size: schedule.batch_size,
            local_epochs: schedule.epochs,
        },
        dp: DpConfig {
            noise_multiplier: sigma,
            max_grad_norm: clip,
            delta: schedule.delta,
        },
        ..RunConfig::default()
    };
    cfg.federation.validate().map_err(usage)?;
    ClientConfig {
        training: cfg.training,
        dp: cfg.dp,
        proximal_mu: 0.0,
    }
    .validate()
    .map_err(usage)?;
    Ok(cfg)
}

fn thread_pool() -> Outcome<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v.trim().parse::<usize>().map_err(|_| {
            Failure::Usage(format!("{THREADS_ENV} must be a non-negative integer, got `{v}`"))
        })?,
        _ => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Failure::Run(Error::Config(e.to_string())))
}

fn base_manifest(
    command: &str,
    source: &str,
    data_cfg: &DataConfig,
    run: &RunConfig,
    prepared: &PreparedData,
    resampled: bool,
) -> RunManifest {
    let mut m = RunManifest::new(command);
    m.push("data_source", source);
    m.push("data_seed", data_cfg.data_seed);
    m.push("test_fraction", data_cfg.test_fraction);
    m.push("train_rows", prepared.train_rows);
    m.push("test_rows", prepared.test_labels.len());
    m.push("num_clients", run.federation.num_clients);
    m.push("rounds", run.federation.rounds);
    m.push("client_fraction", run.federation.client_fraction);
    m.push("local_epochs", run.training.local_epochs);
    m.push("batch_size", run.training.batch_size);
    m.push("learning_rate", run.training.learning_rate);
    m.push("delta", run.dp.delta);
    m.push("threshold", run.threshold);
    m.push_list("architecture", run.architecture.layer_widths());
    m.push("resample", resampled);
    let sizes: Vec<usize> = prepared.raw_partitions.iter().map(|p| p.n_samples).collect();
    m.push_list("partition_sizes", &sizes);
    let sizes: Vec<usize> = prepared
        .resampled_partitions
        .iter()
        .map(|p| p.n_samples)
        .collect();
    m.push_list("resampled_partition_sizes", &sizes);
    m
}

fn write_manifest(m: &RunManifest, dir: &Path) -> Outcome<()> {
    m.write(dir.join("manifest.txt")).map_err(Failure::Run)
}

fn preprocess(a: PreprocessArgs) -> Outcome<()> {
    if !(a.test_fraction > 0.0 && a.test_fraction < 1.0) {
        return Err(Failure::Usage(format!(
            "--test-fraction must lie in (0, 1), got {}",
            a.test_fraction
        )));
    }
    let records = data::drop_other_gender(data::parse_csv(&a.data).map_err(Failure::Data)?);
    let (train, test) =
        data::stratified_split(&records, a.test_fraction, a.seed).map_err(Failure::Data)?;
    let stats = data::fit_preprocessor(&train).map_err(Failure::Data)?;
    let (train_x, train_y) = data::transform(&train, &stats).map_err(Failure::Data)?;
    let (test_x, test_y) = data::transform(&test, &stats).map_err(Failure::Data)?;
    create_dir(&a.out_dir)?;
    data::write_feature_dump(&train_x, &train_y, a.out_dir.join("features_train.csv"))
        .map_err(Failure::Run)?;
    data::write_feature_dump(&test_x, &test_y, a.out_dir.join("features_test.csv"))
        .map_err(Failure::Run)?;

    let mut m = RunManifest::new("preprocess");
    m.push("data_source", a.data.display());
    m.push("seed", a.seed);
    m.push("test_fraction", a.test_fraction);
    m.push("train_rows", train_y.len());
    m.push("test_rows", test_y.len());
    m.push("bmi_fill", stats.bmi_mean);
    m.push_list("scaler_means", &stats.scaler_means);
    m.push_list("scaler_stds", &stats.scaler_stds);
    m.push_list("feature_columns", train_x.column_names());
    write_manifest(&m, &a.out_dir)?;
    println!(
        "encoded {} training and {} test rows into {}",
        train_y.len(),
        test_y.len(),
        a.out_dir.display()
    );
    Ok(())
}

fn synth(a: SynthArgs) -> Outcome<()> {
    let records = data::synth_dataset(a.rows, a.positive_rate, a.seed).map_err(usage)?;
    create_dir(&a.out_dir)?;
    let path = a.out_dir.join("synthetic.csv");
    data::write_records_csv(&records, &path).map_err(Failure::Run)?;
    let mut m = RunManifest::new("synth");
    m.push("seed", a.seed);
    m.push("rows", a.rows);
    m.push("positive_rate", a.positive_rate);
    write_manifest(&m, &a.out_dir)?;
    println!("wrote {} records to {}", records.len(), path.display());
    Ok(())
}

fn train(a: TrainArgs) -> Outcome<()> {
    let (resampled, mu) = match a.stage {
        Some(stage) => (stage.resampled(), stage.mu()),
        None => (!a.data.no_resample, a.mu),
    };
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Failure::Usage(format!("--mu must be finite and >= 0, got {mu}")));
    }
    let run = run_config_from(&a.schedule, a.data.clients, a.sigma, a.clip)?;
    let (prepared, data_cfg, source) = prepare(&a.data)?;
    let out = experiment::run_config(&prepared, resampled, mu, &run, a.seed).map_err(Failure::Run)?;
    for w in &out.outcome.warnings {
        eprintln!("warning: {w}");
    }

    create_dir(&a.out_dir)?;
    experiment::emit_metrics_csv(std::slice::from_ref(&out.row), a.out_dir.join("metrics.csv"))
        .map_err(Failure::Run)?;
    let mut history = String::from("round,mean_train_loss,epsilon\n");
    for h in &out.outcome.history {
        history.push_str(&format!("{},{:.6},{:.6}\n", h.round, h.mean_train_loss, h.epsilon));
    }
    let path = a.out_dir.join("history.csv");
    std::fs::write(&path, history).map_err(|e| Failure::Run(Error::Io { path, source: e }))?;

    let mut m = base_manifest("train", &source, &data_cfg, &run, &prepared, resampled);
    m.push("stage", &out.row.stage);
    m.push("seed", a.seed);
    m.push("proximal_mu", mu);
    m.push("noise_multiplier", run.dp.noise_multiplier);
    m.push("max_grad_norm", run.dp.max_grad_norm);
    m.push("epsilon", out.row.epsilon);
    write_manifest(&m, &a.out_dir)?;

    let r = &out.row;
    println!(
        "{} seed={} epsilon={:.4} accuracy={:.4} recall={:.4} precision={:.4} f1={:.4}",
        r.stage, r.seed, r.epsilon, r.accuracy, r.recall, r.precision, r.f1
    );
    Ok(())
}

fn sweep(a: SweepArgs) -> Outcome<()> {
    let grid = SweepGrid {
        mu_values: a.mu,
        sigma_values: a.sigma,
        clip_values: a.clip,
        seeds: a.seed,
    };
    grid.validate().map_err(usage)?;
    let run = run_config_from(&a.schedule, a.data.clients, 1.0, 1.0)?;
    let pool = thread_pool()?;
    let (prepared, data_cfg, source) = prepare(&a.data)?;
    let resampled = !a.data.no_resample;
    let rows = pool
        .install(|| experiment::run_sweep(&grid, &prepared, &run, resampled))
        .map_err(usage)?;

    create_dir(&a.out_dir)?;
    experiment::emit_metrics_csv(&rows, a.out_dir.join("metrics.csv")).map_err(Failure::Run)?;
    let mut m = base_manifest("sweep", &source, &data_cfg, &run, &prepared, resampled);
    m.push_list("mu_values", &grid.mu_values);
    m.push_list("sigma_values", &grid.sigma_values);
    m.push_list("clip_values", &grid.clip_values);
    m.push_list("seeds", &grid.seeds);
    m.push("cells", rows.len());
    let failed = rows.iter().filter(|r| r.is_error()).count();
    m.push("failed_cells", failed);
    write_manifest(&m, &a.out_dir)?;
    for r in rows.iter().filter(|r| r.is_error()) {
        eprintln!(
            "cell mu={} sigma={} clip={} seed={} failed: {}",
            r.mu,
            r.sigma,
            r.clip,
            r.seed,
            r.error.as_deref().unwrap_or_default()
        );
    }
    println!(
        "{} rows ({} failed) written to {}",
        rows.len(),
        failed,
        a.out_dir.join("metrics.csv").display()
    );
    Ok(())
}

fn report_cmd(a: ReportArgs) -> Outcome<()> {
    let rows = experiment::read_metrics_csv(&a.metrics).map_err(Failure::Data)?;
    if rows.is_empty() {
        return Err(Failure::Data(Error::Data(format!(
            "{} has no rows",
            a.metrics.display()
        ))));
    }
    let frontier = report::frontier_svg(&rows).map_err(Failure::Data)?;
    let heatmap = report::epsilon_heatmap_svg(&rows).map_err(Failure::Data)?;
    create_dir(&a.out_dir)?;
    for (name, text) in [("frontier.svg", frontier), ("epsilon_heatmap.svg", heatmap)] {
        let path = a.out_dir.join(name);
        std::fs::write(&path, text).map_err(|e| Failure::Run(Error::Io { path, source: e }))?;
    }
    let mut m = RunManifest::new("report");
    m.push("metrics", a.metrics.display());
    m.push("rows", rows.len());
    write_manifest(&m, &a.out_dir)?;
    println!("wrote frontier.svg and epsilon_heatmap.svg to {}", a.out_dir.display());
    Ok(())
}

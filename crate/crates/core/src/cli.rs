//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on a usage error, 2 on a runtime error.
//! Outputs carry no timestamps; wall-clock times go to `*.timing.json`
//! sidecars next to the files they describe.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::audio::read_stereo;
use crate::dataset::{build_test_set, pack_manifest, PairBounds, TestSet};
use crate::error::Error;
use crate::eval::bench::{write_sweep_csv, write_sweep_timing_csv};
use crate::eval::{default_threshold, evaluate, sweep, BenchmarkEnv, SingleSourceBenchmark, SweepAxis, TwoSourceBenchmark};
use crate::gllim::{fit, FitConfig, GllimModel, PriorMode, TrainingSet};
use crate::posterior::{oracle_check, PosteriorEngine};
use crate::simroom::GridSpec;
use crate::spectro::{masked_features, noise_floor_epsilon, stft, BinauralSpectrogram, StftParams};

pub const SEED_ENV: &str = "BINLOC_SEED";

#[derive(Debug, Parser)]
#[command(name = "binloc", version, about = "Binaural sound-source localization and co-localization")]
pub struct Cli {
    /// Worker threads [default: available parallelism].
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Base random seed [default: 0]. BINLOC_SEED overrides it when set.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a filter bank, a training set and a packed test set.
    Simulate(SimulateArgs),
    /// Binaural spectrogram (.bnsp) from a stereo WAV or raw float32 file.
    Features(FeaturesArgs),
    /// Fit a model to a training set (.bnts).
    Train(TrainArgs),
    /// Localize the sources of one spectrogram.
    Localize(LocalizeArgs),
    /// Localize every item of a packed test set and score the estimates.
    Evaluate(EvaluateArgs),
    /// Train and evaluate over a range of K or N.
    Sweep(SweepArgs),
    /// Compare the closed-form posterior with brute-force quadrature.
    OracleCheck(OracleCheckArgs),
    /// Dataset utilities.
    #[command(subcommand)]
    Dataset(DatasetCommand),
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Bundle a manifest and its spectrograms into manifest.json + spec/NNN.bnsp.
    Pack(PackArgs),
}

#[derive(Debug, Clone, Args)]
pub struct StftArgs {
    #[arg(long, default_value_t = 16_000)]
    pub sample_rate: u32,
    /// Analysis window in samples; F = window / 2 bins are kept.
    #[arg(long, default_value_t = 1024)]
    pub window: usize,
    #[arg(long, default_value_t = 128)]
    pub hop: usize,
}

impl StftArgs {
    fn params(&self) -> Result<StftParams, CliError> {
        if self.window < 8 || self.window % 2 != 0 {
            return usage(format!("--window must be even and >= 8, got {}", self.window));
        }
        if self.hop == 0 || self.hop > self.window {
            return usage(format!("--hop must lie in 1..=window, got {}", self.hop));
        }
        if self.sample_rate == 0 {
            return usage("--sample-rate must be positive");
        }
        Ok(StftParams {
            sample_rate: self.sample_rate,
            window_len: self.window,
            hop: self.hop,
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct EnvArgs {
    #[command(flatten)]
    pub stft: StftArgs,
    #[arg(long, default_value_t = 0)]
    pub bank_seed: u64,
    /// Highest harmonic of the direction dependence of the filters.
    #[arg(long, default_value_t = 2)]
    pub order: usize,
    /// Training grid elevations.
    #[arg(long, default_value_t = 18)]
    pub grid_el: usize,
    /// Training grid azimuths.
    #[arg(long, default_value_t = 24)]
    pub grid_az: usize,
    /// Sensor noise standard deviation per bin.
    #[arg(long, default_value_t = 0.05)]
    pub noise_std: f64,
    /// Activity threshold as a multiple of the calibrated noise power.
    #[arg(long, default_value_t = 5.0)]
    pub epsilon_factor: f64,
    /// Frames per white-noise training recording.
    #[arg(long, default_value_t = 125)]
    pub train_frames: usize,
}

impl EnvArgs {
    fn env(&self) -> Result<BenchmarkEnv, CliError> {
        let stft = self.stft.params()?;
        if self.grid_el < 2 || self.grid_az < 2 {
            return usage(format!(
                "--grid-el and --grid-az must be >= 2, got {} and {}",
                self.grid_el, self.grid_az
            ));
        }
        if !(self.noise_std >= 0.0) {
            return usage(format!("--noise-std must be >= 0, got {}", self.noise_std));
        }
        if !(self.epsilon_factor > 0.0) {
            return usage(format!("--epsilon-factor must be > 0, got {}", self.epsilon_factor));
        }
        if self.train_frames == 0 {
            return usage("--train-frames must be >= 1");
        }
        Ok(BenchmarkEnv {
            stft,
            grid: GridSpec::default().with_counts(self.grid_el, self.grid_az),
            bank_seed: self.bank_seed,
            smoothness_order: self.order,
            noise_std: self.noise_std,
            epsilon_factor: self.epsilon_factor,
            train_frames: self.train_frames,
        })
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub env: EnvArgs,
    /// Sources per recording (M).
    #[arg(long, default_value_t = 1)]
    pub sources: usize,
    /// Training pairs kept for M = 1 [default: every grid node].
    #[arg(long)]
    pub num_train: Option<usize>,
    /// Training mixtures for M = 2.
    #[arg(long, default_value_t = 20_000)]
    pub num_pairs: usize,
    #[arg(long, default_value_t = 9)]
    pub test_el: usize,
    #[arg(long, default_value_t = 12)]
    pub test_az: usize,
    /// Test mixtures for M = 2.
    #[arg(long, default_value_t = 200)]
    pub test_count: usize,
    /// Fraction of nonzero bins of each sparse test source.
    #[arg(long, default_value_t = 0.3)]
    pub occupancy: f64,
    /// Test durations in seconds, cycled over items.
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    pub durations: Vec<f64>,
    /// Both test sources emit the same signal (M = 2).
    #[arg(long)]
    pub identical: bool,
    #[arg(long, default_value_t = 0.5)]
    pub level_spread_db: f64,
    #[arg(long, default_value_t = 20.0)]
    pub max_separation: f64,
    #[arg(long, default_value_t = 1.5)]
    pub min_separation: f64,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    /// Stereo `.wav`, or raw interleaved float32 with a `.json` sidecar.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1024)]
    pub window: usize,
    #[arg(long, default_value_t = 128)]
    pub hop: usize,
    /// Absolute activity threshold on |L|² + |R|².
    #[arg(long, conflicts_with = "noise")]
    pub epsilon: Option<f64>,
    /// Noise-only recording used to calibrate the threshold.
    #[arg(long)]
    pub noise: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub epsilon_factor: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training set (.bnts).
    #[arg(long)]
    pub data: PathBuf,
    /// Model JSON to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Components [default: 32 for one source, 100 for two].
    #[arg(short = 'k', long)]
    pub components: Option<usize>,
    #[arg(long, default_value = "free")]
    pub prior_mode: PriorMode,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub rel_tol: f64,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Binaural spectrogram (.bnsp).
    #[arg(long)]
    pub input: PathBuf,
    /// Report JSON [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Packed test set directory (manifest.json + spec/).
    #[arg(long)]
    pub test: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Outlier threshold in degrees [default: 5 for one source, 15 for two].
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, default_value = "results")]
    pub stem: String,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// K or N.
    #[arg(long)]
    pub axis: SweepAxis,
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<usize>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Components held fixed when sweeping N [default: 32 for one source, 100 for two].
    #[arg(short = 'k', long)]
    pub components: Option<usize>,
    #[arg(long, default_value = "free")]
    pub prior_mode: PriorMode,
    /// CSV to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleCheckArgs {
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    /// Grid nodes per axis.
    #[arg(long, default_value_t = 101)]
    pub nodes: usize,
    /// Allowed mean discrepancy in grid spacings.
    #[arg(long, default_value_t = 2.0)]
    pub mean_tol: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub weight_tol: f64,
}

#[derive(Debug, Args)]
pub struct PackArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

fn usage<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Usage(msg.into()))
}

type CliResult<T> = Result<T, CliError>;

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

/// `BINLOC_SEED` when set, else `--seed`, else 0.
pub fn resolve_seed(flag: Option<u64>) -> CliResult<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .or_else(|_| usage(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(flag.unwrap_or(0)),
    }
}

pub fn execute(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return usage("--threads must be >= 1");
        }
        // A pool may already exist when running in-process more than once.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let seed = resolve_seed(cli.seed)?;
    match cli.command {
        Command::Simulate(a) => simulate(a, seed),
        Command::Features(a) => features(a),
        Command::Train(a) => train(a, seed),
        Command::Localize(a) => localize(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Sweep(a) => sweep_cmd(a, seed),
        Command::OracleCheck(a) => oracle_check_cmd(a, seed),
        Command::Dataset(DatasetCommand::Pack(a)) => {
            pack_manifest(&a.manifest, &a.out)?;
            Ok(())
        }
    }
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(OsString::from).unwrap_or_default();
    name.push(".timing.json");
    path.with_file_name(name)
}

fn write_timing(path: &Path, start: Instant, extra: serde_json::Value) -> CliResult<()> {
    let mut v = json!({ "elapsed_ms": start.elapsed().as_secs_f64() * 1e3 });
    if let (Some(obj), Some(more)) = (v.as_object_mut(), extra.as_object()) {
        obj.extend(more.clone());
    }
    std::fs::write(path, serde_json::to_string_pretty(&v)?)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn default_k(l: usize) -> usize {
    if l <= 2 {
        32
    } else {
        100
    }
}

fn simulate(a: SimulateArgs, seed: u64) -> CliResult<()> {
    let start = Instant::now();
    let env = a.env.env()?;
    if !(a.occupancy > 0.0 && a.occupancy <= 1.0) {
        return usage(format!("--occupancy must lie in (0, 1], got {}", a.occupancy));
    }
    if a.durations.is_empty() || a.durations.iter().any(|d| !(*d > 0.0)) {
        return usage("--durations must be positive");
    }
    if a.min_separation < 0.0 || a.max_separation <= 0.0 {
        return usage("--min-separation must be >= 0 and --max-separation > 0");
    }
    let bank = env.bank()?;
    std::fs::create_dir_all(&a.out)?;
    bank.save_spec(&a.out.join("bank.json"))?;
    bank.write_dense(&a.out.join("bank.bnfb"))?;
    let (train, test_spec) = match a.sources {
        1 => {
            if a.identical {
                return usage("--identical needs --sources 2");
            }
            let cfg = SingleSourceBenchmark {
                env: env.clone(),
                num_train: a.num_train,
                test_el: a.test_el,
                test_az: a.test_az,
                occupancy: a.occupancy,
                durations: a.durations.clone(),
                seed,
                ..SingleSourceBenchmark::default()
            };
            (cfg.training(&bank)?, cfg.test_spec()?)
        }
        2 => {
            if a.num_train.is_some() {
                return usage("--num-train applies to --sources 1; use --num-pairs");
            }
            let cfg = TwoSourceBenchmark {
                env: env.clone(),
                num_pairs: a.num_pairs,
                bounds: PairBounds {
                    max_axis_separation: a.max_separation,
                    min_distance: a.min_separation,
                },
                level_spread_db: a.level_spread_db,
                test_count: a.test_count,
                occupancy: a.occupancy,
                durations: a.durations.clone(),
                identical_sources: a.identical,
                seed,
                ..TwoSourceBenchmark::default()
            };
            (cfg.training(&bank)?, cfg.test_spec()?)
        }
        m => return usage(format!("--sources must be 1 or 2, got {m}")),
    };
    train.save(&a.out.join("train.bnts"))?;
    build_test_set(&bank, &test_spec)?.pack(&a.out.join("test"))?;
    write_json(
        &a.out.join("simulate.json"),
        &json!({
            "version": 1,
            "sources": a.sources,
            "seed": seed,
            "env": env,
            "training_pairs": train.n(),
            "test_items": test_spec.items.len(),
            "test": test_spec,
        }),
    )?;
    write_timing(&a.out.join("simulate.timing.json"), start, json!({}))
}

fn features(a: FeaturesArgs) -> CliResult<()> {
    let start = Instant::now();
    let audio = read_stereo(&a.input)?;
    let params = StftArgs {
        sample_rate: audio.sample_rate,
        window: a.window,
        hop: a.hop,
    }
    .params()?;
    if !(a.epsilon_factor > 0.0) {
        return usage(format!("--epsilon-factor must be > 0, got {}", a.epsilon_factor));
    }
    let left = stft(&audio.left, &params)?;
    let right = stft(&audio.right, &params)?;
    let epsilon = match (a.epsilon, &a.noise) {
        (Some(e), _) => {
            if !(e >= 0.0) {
                return usage(format!("--epsilon must be >= 0, got {e}"));
            }
            e
        }
        (None, Some(p)) => {
            let noise = read_stereo(p)?;
            let nl = stft(&noise.left, &params)?;
            let nr = stft(&noise.right, &params)?;
            noise_floor_epsilon(&nl, &nr, a.epsilon_factor)?
        }
        (None, None) => 0.0,
    };
    masked_features(&left, &right, epsilon)?.save(&a.out)?;
    write_timing(&sidecar(&a.out), start, json!({ "epsilon": epsilon }))
}

fn train(a: TrainArgs, seed: u64) -> CliResult<()> {
    let start = Instant::now();
    if a.max_iter == 0 {
        return usage("--max-iter must be >= 1");
    }
    if !(a.rel_tol >= 0.0) {
        return usage(format!("--rel-tol must be >= 0, got {}", a.rel_tol));
    }
    let data = TrainingSet::load(&a.data)?;
    let k = a.components.unwrap_or_else(|| default_k(data.l()));
    if k == 0 {
        return usage("-k must be >= 1");
    }
    let out = fit(
        &data,
        k,
        &FitConfig {
            max_iter: a.max_iter,
            rel_tol: a.rel_tol,
            prior_mode: a.prior_mode,
            seed,
        },
    )?;
    out.model.save(&a.out)?;
    let mut trace_path = a.out.clone().into_os_string();
    trace_path.push(".trace.json");
    write_json(Path::new(&trace_path), &out.trace)?;
    write_timing(&sidecar(&a.out), start, json!({}))
}

fn load_checked_model(path: &Path) -> CliResult<PosteriorEngine> {
    let model = GllimModel::load(path)?;
    Ok(PosteriorEngine::new(&model)?)
}

fn localize(a: LocalizeArgs) -> CliResult<()> {
    let engine = load_checked_model(&a.model)?;
    let spec = BinauralSpectrogram::load(&a.input)?;
    let start = Instant::now();
    let report = engine.localize(&spec)?;
    let text = serde_json::to_string_pretty(&report)?;
    match &a.out {
        Some(p) => {
            std::fs::write(p, text)?;
            write_timing(&sidecar(p), start, json!({}))?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> CliResult<()> {
    let start = Instant::now();
    let engine = load_checked_model(&a.model)?;
    let test = TestSet::unpack(&a.test)?;
    let threshold = a.threshold.unwrap_or_else(|| default_threshold(engine.l() / 2));
    if !(threshold >= 0.0) {
        return usage(format!("--threshold must be >= 0, got {threshold}"));
    }
    let ev = evaluate(&engine, &test, threshold)?;
    ev.save(&a.out, &a.stem)?;
    write_timing(&a.out.join(format!("{}.timing.json", a.stem)), start, json!({}))
}

fn sweep_cmd(a: SweepArgs, seed: u64) -> CliResult<()> {
    let start = Instant::now();
    let data = TrainingSet::load(&a.data)?;
    let test = TestSet::unpack(&a.test)?;
    let k = a.components.unwrap_or_else(|| default_k(data.l()));
    if a.values.contains(&0) {
        return usage("--values must be positive");
    }
    let rows = sweep(a.axis, &a.values, &data, &test, k, a.prior_mode, seed)?;
    write_sweep_csv(a.axis, &rows, std::fs::File::create(&a.out)?)?;
    let mut timing = a.out.clone().into_os_string();
    timing.push(".timing.csv");
    write_sweep_timing_csv(&rows, std::fs::File::create(PathBuf::from(timing))?)?;
    write_timing(&sidecar(&a.out), start, json!({}))
}

fn oracle_check_cmd(a: OracleCheckArgs, seed: u64) -> CliResult<()> {
    if a.trials == 0 {
        return usage("--trials must be >= 1");
    }
    if a.nodes < 3 {
        return usage(format!("--nodes must be >= 3, got {}", a.nodes));
    }
    let c = oracle_check(a.trials, seed, a.nodes)?;
    println!("trials: {}", c.trials);
    println!("max mean error: {:.6} grid spacings", c.max_mean_error_spacings);
    println!("max weight error: {:.3e}", c.max_weight_error);
    if c.within(a.mean_tol, a.weight_tol) {
        Ok(())
    } else {
        Err(CliError::Runtime(Error::InvalidArgument(format!(
            "oracle disagreement above tolerance (mean < {} spacings, weight < {})",
            a.mean_tol, a.weight_tol
        ))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_and_bad_flags() {
        assert_eq!(run(["binloc", "train", "--help"]), 0);
        assert_eq!(run(["binloc", "train", "--bogus"]), 1);
        assert_eq!(run(["binloc"]), 1);
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().to_str().unwrap();
        assert_eq!(run(["binloc", "simulate", "--out", out, "--sources", "3"]), 1);
        assert_eq!(run(["binloc", "simulate", "--out", out, "--window", "7"]), 1);
        assert_eq!(run(["binloc", "oracle-check", "--trials", "0"]), 1);
        assert_eq!(run(["binloc", "--threads", "0", "oracle-check"]), 1);
    }

    #[test]
    fn missing_input_is_runtime_error() {
        let tmp = tempfile::tempdir().unwrap();
        let model = tmp.path().join("none.json");
        assert_eq!(
            run([
                "binloc",
                "localize",
                "--model",
                model.to_str().unwrap(),
                "--input",
                "missing.bnsp"
            ]),
            2
        );
    }

    #[test]
    fn sidecar_names() {
        assert_eq!(sidecar(Path::new("a/model.json")), PathBuf::from("a/model.json.timing.json"));
    }
}

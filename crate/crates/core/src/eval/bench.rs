//! Synthetic benchmarks: single-source and two-source localization on a
//! generated acoustic space, the GCC-PHAT baseline, and K/N sweeps.

use std::io::Write;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::phat::{gcc_phat_tdoa, GccPhatParams, TdoaRegressor};
use super::{default_threshold, evaluate, gtea, Evaluation, ItemResult};
use crate::dataset::{
    build_pair_training, build_single_source_training, build_test_set, off_grid_directions,
    random_pair_directions, render_test_item, GridRecordings, PairBounds, PairConfig, RecordingSource,
    TestSet, TestSetSpec,
};
use crate::direction::DirectionVector;
use crate::error::{Error, Result};
use crate::gllim::{fit, FitConfig, FitOutput, PriorMode, TrainingSet};
use crate::posterior::PosteriorEngine;
use crate::seed;
use crate::simroom::{make_filter_bank, to_audio, BankSpec, FilterBank, GridSpec, SourceKind};
use crate::spectro::StftParams;

/// The generated acoustic space shared by all benchmarks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkEnv {
    pub stft: StftParams,
    pub grid: GridSpec,
    pub bank_seed: u64,
    pub smoothness_order: usize,
    /// Sensor noise standard deviation per channel and bin.
    pub noise_std: f64,
    /// Activity threshold as a multiple of the calibrated noise power.
    pub epsilon_factor: f64,
    /// Frames per white-noise training recording.
    pub train_frames: usize,
}

impl Default for BenchmarkEnv {
    fn default() -> Self {
        Self {
            stft: StftParams::default(),
            grid: GridSpec::default(),
            bank_seed: 0,
            smoothness_order: 2,
            noise_std: 0.05,
            epsilon_factor: 5.0,
            train_frames: 125,
        }
    }
}

impl BenchmarkEnv {
    pub fn bank(&self) -> Result<FilterBank> {
        make_filter_bank(BankSpec::new(self.grid, self.stft, self.smoothness_order, self.bank_seed))
    }

    pub fn recordings<'a>(&self, bank: &'a FilterBank, seed: u64) -> Result<GridRecordings<'a>> {
        GridRecordings::new(bank, self.grid, self.train_frames, self.noise_std, seed)
    }
}

/// Fixed-K training plus evaluation on one test set.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkOutcome {
    pub fit: FitOutput,
    pub evaluation: Evaluation,
}

/// Random subset of `n` training rows; the whole set when `n` covers it.
pub fn subset_training(train: &TrainingSet, n: usize, seed: u64) -> Result<TrainingSet> {
    if n == 0 || n > train.n() {
        return Err(Error::InvalidArgument(format!(
            "cannot take {n} of {} training pairs",
            train.n()
        )));
    }
    if n == train.n() {
        return Ok(train.clone());
    }
    let mut rng = seed::rng(seed, seed::SUBSET, n as u64);
    let mut rows = sample(&mut rng, train.n(), n).into_vec();
    rows.sort_unstable();
    let x = DMatrix::from_fn(n, train.l(), |i, j| train.x[(rows[i], j)]);
    let y = DMatrix::from_fn(n, train.d(), |i, j| train.y[(rows[i], j)]);
    let mut meta = train.metadata.clone();
    if let Some(obj) = meta.as_object_mut() {
        obj.insert("subset".into(), serde_json::json!({ "n": n, "seed": seed }));
    }
    TrainingSet::new(x, y, meta)
}

/// Train with `k` components and evaluate on `test`.
pub fn train_and_evaluate(
    train: &TrainingSet,
    test: &TestSet,
    k: usize,
    prior_mode: PriorMode,
    seed: u64,
) -> Result<BenchmarkOutcome> {
    let fit = fit(
        train,
        k,
        &FitConfig {
            prior_mode,
            seed,
            ..FitConfig::default()
        },
    )?;
    let engine = PosteriorEngine::new(&fit.model)?;
    let threshold = default_threshold(train.l() / 2);
    let evaluation = evaluate(&engine, test, threshold)?;
    Ok(BenchmarkOutcome { fit, evaluation })
}

/// One source: grid training from white noise, off-grid sparse test items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleSourceBenchmark {
    pub env: BenchmarkEnv,
    pub k: usize,
    /// Training pairs used; `None` keeps every grid node.
    pub num_train: Option<usize>,
    pub test_el: usize,
    pub test_az: usize,
    pub occupancy: f64,
    pub durations: Vec<f64>,
    pub prior_mode: PriorMode,
    pub seed: u64,
}

impl Default for SingleSourceBenchmark {
    fn default() -> Self {
        Self {
            env: BenchmarkEnv::default(),
            k: 32,
            num_train: None,
            test_el: 9,
            test_az: 12,
            occupancy: 0.3,
            durations: vec![1.0],
            prior_mode: PriorMode::Free,
            seed: 0,
        }
    }
}

impl SingleSourceBenchmark {
    pub fn training(&self, bank: &FilterBank) -> Result<TrainingSet> {
        let full = build_single_source_training(bank, self.env.grid, self.env.train_frames, self.env.noise_std, self.seed)?;
        match self.num_train {
            Some(n) => subset_training(&full, n, self.seed),
            None => Ok(full),
        }
    }

    pub fn test_spec(&self) -> Result<TestSetSpec> {
        let dirs = off_grid_directions(&self.env.grid, self.test_el, self.test_az)?;
        let mut spec = TestSetSpec::new(dirs.into_iter().map(|d| vec![d]).collect(), SourceKind::Sparse, self.seed);
        spec.occupancy = self.occupancy;
        spec.durations = self.durations.clone();
        spec.noise_std = self.env.noise_std;
        spec.epsilon_factor = self.env.epsilon_factor;
        Ok(spec)
    }
}

pub fn run_single_source_benchmark(cfg: &SingleSourceBenchmark, bank: &FilterBank) -> Result<BenchmarkOutcome> {
    let train = cfg.training(bank)?;
    let test = build_test_set(bank, &cfg.test_spec()?)?;
    train_and_evaluate(&train, &test, cfg.k, cfg.prior_mode, cfg.seed)
}

/// Two sources: mixtures of grid recordings for training, random admissible
/// off-grid pairs for testing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoSourceBenchmark {
    pub env: BenchmarkEnv,
    pub k: usize,
    pub num_pairs: usize,
    pub bounds: PairBounds,
    pub level_spread_db: f64,
    pub test_count: usize,
    pub occupancy: f64,
    pub durations: Vec<f64>,
    /// Both test sources emit the same signal.
    pub identical_sources: bool,
    pub prior_mode: PriorMode,
    pub seed: u64,
}

impl Default for TwoSourceBenchmark {
    fn default() -> Self {
        Self {
            env: BenchmarkEnv::default(),
            k: 100,
            num_pairs: 20_000,
            bounds: PairBounds::default(),
            level_spread_db: 0.5,
            test_count: 200,
            occupancy: 0.3,
            durations: vec![1.0],
            identical_sources: false,
            prior_mode: PriorMode::Free,
            seed: 0,
        }
    }
}

impl TwoSourceBenchmark {
    pub fn training(&self, bank: &FilterBank) -> Result<TrainingSet> {
        let recs = self.env.recordings(bank, self.seed)?;
        build_pair_training(
            &recs,
            &PairConfig {
                num_pairs: self.num_pairs,
                bounds: self.bounds,
                level_spread_db: self.level_spread_db,
                seed: self.seed,
            },
        )
    }

    pub fn test_spec(&self) -> Result<TestSetSpec> {
        let pairs = random_pair_directions(&self.env.grid, self.test_count, &self.bounds, self.seed)?;
        let mut spec = TestSetSpec::new(pairs.into_iter().map(|p| p.to_vec()).collect(), SourceKind::Sparse, self.seed);
        spec.occupancy = self.occupancy;
        spec.durations = self.durations.clone();
        spec.noise_std = self.env.noise_std;
        spec.epsilon_factor = self.env.epsilon_factor;
        spec.identical_sources = self.identical_sources;
        spec.level_spread_db = self.level_spread_db;
        Ok(spec)
    }
}

pub fn run_two_source_benchmark(cfg: &TwoSourceBenchmark, bank: &FilterBank) -> Result<BenchmarkOutcome> {
    let train = cfg.training(bank)?;
    let test = build_test_set(bank, &cfg.test_spec()?)?;
    train_and_evaluate(&train, &test, cfg.k, cfg.prior_mode, cfg.seed)
}

/// GCC-PHAT delays of the training recordings mapped linearly to azimuth,
/// applied to the time-domain test recordings. Elevation is not estimated;
/// the grid centre is reported.
pub fn phat_baseline(
    bank: &FilterBank,
    env: &BenchmarkEnv,
    train_seed: u64,
    test: &TestSetSpec,
    params: &GccPhatParams,
) -> Result<Evaluation> {
    let recs = env.recordings(bank, train_seed)?;
    let mut tdoas = Vec::with_capacity(recs.len());
    let mut azimuths = Vec::with_capacity(recs.len());
    for i in 0..recs.len() {
        let audio = to_audio(&recs.recording(i)?);
        tdoas.push(gcc_phat_tdoa(&audio.left, &audio.right, params)?);
        azimuths.push(recs.direction(i).azimuth);
    }
    let reg = TdoaRegressor::fit(&tdoas, &azimuths)?;
    let el_centre = 0.5 * (env.grid.el_min + env.grid.el_max);
    let mut items = Vec::with_capacity(test.items.len());
    for (i, dirs) in test.items.iter().enumerate() {
        if dirs.len() != 1 {
            return Err(Error::InvalidArgument("the delay baseline handles one source".into()));
        }
        let start = std::time::Instant::now();
        let audio = to_audio(&render_test_item(bank, test, i)?);
        let az = reg.apply(gcc_phat_tdoa(&audio.left, &audio.right, params)?);
        let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
        let estimate = DirectionVector(vec![az, el_centre]);
        let truth = DirectionVector::from_directions(dirs);
        items.push(ItemResult {
            id: format!("{i:03}"),
            gtea: gtea(&estimate, &truth)?,
            truth,
            estimate,
            elapsed_ms,
        });
    }
    Evaluation::from_items("gcc-phat", items, default_threshold(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    K,
    N,
}

impl FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "k" => Ok(Self::K),
            "n" => Ok(Self::N),
            other => Err(Error::InvalidArgument(format!("sweep axis must be K or N, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: usize,
    pub k: usize,
    pub n: usize,
    pub mean_azimuth: f64,
    pub mean_elevation: f64,
    pub outlier_percent: f64,
    /// Wall-clock mean per test item; not part of the reproducible CSV.
    #[serde(skip)]
    pub localization_ms: f64,
}

/// Train and evaluate once per value of `axis`, holding everything else at
/// `k` and the full training set. Training and test data are built once.
pub fn sweep(
    axis: SweepAxis,
    values: &[usize],
    train: &TrainingSet,
    test: &TestSet,
    k: usize,
    prior_mode: PriorMode,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::EmptyInput("sweep values"));
    }
    values
        .iter()
        .map(|&v| {
            let (k, n) = match axis {
                SweepAxis::K => (v, train.n()),
                SweepAxis::N => (k, v),
            };
            let sub = subset_training(train, n, seed)?;
            let out = train_and_evaluate(&sub, test, k, prior_mode, seed)?;
            let s = &out.evaluation.summary.summary;
            Ok(SweepRow {
                value: v,
                k,
                n,
                mean_azimuth: s.azimuth.mean,
                mean_elevation: s.elevation.mean,
                outlier_percent: s.outlier_percent,
                localization_ms: out.evaluation.mean_localization_ms(),
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(axis: SweepAxis, rows: &[SweepRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["axis", "value", "K", "N", "mean_az", "mean_el", "outlier_percent"])?;
    let name = match axis {
        SweepAxis::K => "K",
        SweepAxis::N => "N",
    };
    for r in rows {
        out.write_record([
            name.to_string(),
            r.value.to_string(),
            r.k.to_string(),
            r.n.to_string(),
            r.mean_azimuth.to_string(),
            r.mean_elevation.to_string(),
            r.outlier_percent.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_sweep_timing_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["value", "localization_ms"])?;
    for r in rows {
        out.write_record([r.value.to_string(), format!("{:.3}", r.localization_ms)])?;
    }
    out.flush()?;
    Ok(())
}

//! Localization error metrics, result files and baselines.

pub mod bench;
pub mod phat;

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::TestSet;
use crate::direction::{Direction, DirectionVector};
use crate::error::{Error, Result};
use crate::posterior::PosteriorEngine;

pub use bench::{
    phat_baseline, run_single_source_benchmark, run_two_source_benchmark, sweep, BenchmarkEnv, BenchmarkOutcome, SingleSourceBenchmark,
    SweepAxis, SweepRow, TwoSourceBenchmark,
};
pub use phat::{gcc_phat_tdoa, GccPhatParams, TdoaRegressor};

pub const SUMMARY_FORMAT_VERSION: u32 = 1;

/// Per-source absolute errors after matching estimates to truths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gtea {
    /// `(azimuth error, elevation error)` in degrees, in truth order.
    pub errors: Vec<(f64, f64)>,
    /// `assignment[m]` is the estimate matched to truth `m`.
    pub assignment: Vec<usize>,
    /// The matching swapped at least one pair of sources.
    pub crossed: bool,
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

/// Ground-truth-to-estimate angle per source. For several sources the
/// assignment minimizing the total distance is used; ties keep input order.
pub fn gtea(estimate: &DirectionVector, truth: &DirectionVector) -> Result<Gtea> {
    if estimate.dim() != truth.dim() {
        return Err(Error::DimensionMismatch(format!(
            "estimate has {} coordinates, truth has {}",
            estimate.dim(),
            truth.dim()
        )));
    }
    let est = estimate.directions()?;
    let tru = truth.directions()?;
    if tru.len() > 6 {
        return Err(Error::InvalidArgument(format!(
            "assignment over {} sources is not supported",
            tru.len()
        )));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for p in permutations(tru.len()) {
        let cost: f64 = tru.iter().zip(&p).map(|(t, &e)| t.distance(&est[e])).sum();
        if best.as_ref().map_or(true, |(c, _)| cost < *c) {
            best = Some((cost, p));
        }
    }
    let (_, assignment) = best.expect("at least the identity permutation");
    let errors = tru
        .iter()
        .zip(&assignment)
        .map(|(t, &e)| axis_errors(&est[e], t))
        .collect();
    let crossed = assignment.iter().enumerate().any(|(m, &e)| m != e);
    Ok(Gtea {
        errors,
        assignment,
        crossed,
    })
}

fn axis_errors(est: &Direction, truth: &Direction) -> (f64, f64) {
    (
        (est.azimuth - truth.azimuth).abs(),
        (est.elevation - truth.elevation).abs(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisStats {
    pub mean: f64,
    pub std: f64,
}

/// Inlier statistics and outlier rate of a list of per-source errors.
///
/// A localization is an outlier when the Euclidean norm of its
/// `(azimuth, elevation)` error exceeds `threshold`. Means and population
/// standard deviations are taken over inliers only; they are `NaN`
/// (`null` in JSON) when every item is an outlier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub count: usize,
    pub inliers: usize,
    pub threshold_deg: f64,
    pub outlier_percent: f64,
    pub azimuth: AxisStats,
    pub elevation: AxisStats,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> AxisStats {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    AxisStats {
        mean,
        std: var.sqrt(),
    }
}

pub fn summarize(errors: &[(f64, f64)], threshold: f64) -> Result<ErrorSummary> {
    if errors.is_empty() {
        return Err(Error::EmptyInput("error list"));
    }
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::InvalidArgument(format!("threshold must be >= 0, got {threshold}")));
    }
    let inl: Vec<(f64, f64)> = errors
        .iter()
        .copied()
        .filter(|(a, e)| a.hypot(*e) <= threshold)
        .collect();
    Ok(ErrorSummary {
        count: errors.len(),
        inliers: inl.len(),
        threshold_deg: threshold,
        outlier_percent: 100.0 * (errors.len() - inl.len()) as f64 / errors.len() as f64,
        azimuth: mean_std(inl.iter().map(|e| e.0)),
        elevation: mean_std(inl.iter().map(|e| e.1)),
    })
}

/// Result for one test item.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemResult {
    pub id: String,
    pub truth: DirectionVector,
    pub estimate: DirectionVector,
    pub gtea: Gtea,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub version: u32,
    pub method: String,
    pub num_sources: usize,
    pub items: usize,
    /// How estimates are matched to truths when there are several sources.
    pub assignment: String,
    /// Items whose matching swapped the sources.
    pub crossed_percent: f64,
    pub summary: ErrorSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub method: String,
    pub items: Vec<ItemResult>,
    pub summary: EvaluationSummary,
}

/// Default outlier threshold: 5° for one source, 15° for several.
pub fn default_threshold(num_sources: usize) -> f64 {
    if num_sources <= 1 {
        5.0
    } else {
        15.0
    }
}

impl Evaluation {
    pub fn from_items(method: &str, items: Vec<ItemResult>, threshold: f64) -> Result<Self> {
        let first = items.first().ok_or(Error::EmptyInput("evaluation items"))?;
        let num_sources = first.truth.num_sources();
        let errors: Vec<(f64, f64)> = items.iter().flat_map(|it| it.gtea.errors.iter().copied()).collect();
        let crossed = items.iter().filter(|it| it.gtea.crossed).count();
        Ok(Self {
            method: method.to_string(),
            summary: EvaluationSummary {
                version: SUMMARY_FORMAT_VERSION,
                method: method.to_string(),
                num_sources,
                items: items.len(),
                assignment: if num_sources > 1 {
                    "min-total-distance".into()
                } else {
                    "identity".into()
                },
                crossed_percent: 100.0 * crossed as f64 / items.len() as f64,
                summary: summarize(&errors, threshold)?,
            },
            items,
        })
    }

    /// One row per (item, source): id, source, truth, estimate, errors, crossed, method.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "id", "source", "truth_az", "truth_el", "est_az", "est_el", "err_az", "err_el", "crossed", "method",
        ])?;
        for it in &self.items {
            let truth = it.truth.directions()?;
            let est = it.estimate.directions()?;
            for (m, (t, &e)) in truth.iter().zip(&it.gtea.assignment).enumerate() {
                let (ea, ee) = it.gtea.errors[m];
                out.write_record([
                    it.id.clone(),
                    m.to_string(),
                    t.azimuth.to_string(),
                    t.elevation.to_string(),
                    est[e].azimuth.to_string(),
                    est[e].elevation.to_string(),
                    ea.to_string(),
                    ee.to_string(),
                    it.gtea.crossed.to_string(),
                    self.method.clone(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Per-item wall-clock times, kept out of the reproducible outputs.
    pub fn write_timing_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["id", "method", "elapsed_ms"])?;
        for it in &self.items {
            out.write_record([it.id.clone(), self.method.clone(), format!("{:.3}", it.elapsed_ms)])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary)?)
    }

    /// `<stem>.csv`, `<stem>.summary.json` and `<stem>.timing.csv` in `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join(format!("{stem}.csv")))?)?;
        std::fs::write(dir.join(format!("{stem}.summary.json")), self.summary_json()?)?;
        self.write_timing_csv(std::fs::File::create(dir.join(format!("{stem}.timing.csv")))?)?;
        Ok(())
    }

    pub fn mean_localization_ms(&self) -> f64 {
        self.items.iter().map(|it| it.elapsed_ms).sum::<f64>() / self.items.len() as f64
    }
}

/// Localize every item of a test set and score it.
pub fn evaluate(engine: &PosteriorEngine, test: &TestSet, threshold: f64) -> Result<Evaluation> {
    if test.items.is_empty() {
        return Err(Error::EmptyInput("test set"));
    }
    let items = test
        .items
        .par_iter()
        .map(|it| {
            let start = std::time::Instant::now();
            let report = engine.localize(&it.spectrogram)?;
            let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
            let truth = it.entry.truth();
            if truth.dim() != engine.l() {
                return Err(Error::DimensionMismatch(format!(
                    "item {} has {} sources, the model localizes {}",
                    it.entry.id,
                    truth.num_sources(),
                    engine.l() / 2
                )));
            }
            let estimate = DirectionVector(report.estimate);
            Ok(ItemResult {
                id: it.entry.id.clone(),
                gtea: gtea(&estimate, &truth)?,
                truth,
                estimate,
                elapsed_ms,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Evaluation::from_items("sbm", items, threshold)
}

//! Training and test sets built from the synthetic acoustic space.
//!
//! Single-source training pairs are temporal means of white-noise recordings
//! at every grid node. Two-source pairs mix two such recordings and label the
//! result with the canonically ordered directions. Test items are rendered at
//! off-grid directions and stored as masked binaural spectrograms.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::direction::{Direction, DirectionVector};
use crate::error::{Error, Result};
use crate::gllim::TrainingSet;
use crate::seed;
use crate::simroom::{
    render_mixture, render_noise, sparse_source, white_noise_source, FilterBank, GridSpec,
    SourceKind,
};
use crate::spectro::{
    binaural_features, masked_features, mean_feature_vector, noise_floor_epsilon,
    BinauralSpectrogram, FeatureVector, StereoSpectrogram, StftParams,
};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub directions: Vec<Direction>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub spectrogram: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub audio: Option<String>,
    pub role: Role,
    pub kind: SourceKind,
}

impl ManifestEntry {
    pub fn truth(&self) -> DirectionVector {
        DirectionVector::canonical(&self.directions)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    /// Grid the training entries sit on and the test entries avoid.
    pub grid: GridSpec,
    pub stft: StftParams,
    /// Activity threshold applied to the stored spectrograms.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub epsilon: Option<f64>,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_FORMAT_VERSION {
            return Err(Error::Version {
                found: self.version,
                expected: MANIFEST_FORMAT_VERSION,
            });
        }
        let mut ids = HashSet::new();
        for e in &self.entries {
            if !ids.insert(e.id.as_str()) {
                return Err(Error::Format(format!("duplicate manifest id {:?}", e.id)));
            }
            if e.directions.is_empty() {
                return Err(Error::Format(format!("entry {:?} has no direction", e.id)));
            }
            for d in &e.directions {
                let bad = match e.role {
                    Role::Train => self.grid.distance_to_nearest_node(d) > 1e-9,
                    Role::Test => !self.grid.padded(2).contains(d),
                };
                if bad {
                    return Err(Error::DirectionOutOfRange {
                        azimuth: d.azimuth,
                        elevation: d.elevation,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Manifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        m.validate()?;
        Ok(m)
    }
}

/// Per-direction recordings, produced on demand.
pub trait RecordingSource: Sync {
    fn len(&self) -> usize;
    fn direction(&self, index: usize) -> Direction;
    fn recording(&self, index: usize) -> Result<StereoSpectrogram>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// White-noise recordings at every node of a grid, regenerated from
/// per-node seeds instead of being held in memory.
pub struct GridRecordings<'a> {
    pub bank: &'a FilterBank,
    pub grid: GridSpec,
    pub num_frames: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl<'a> GridRecordings<'a> {
    pub fn new(bank: &'a FilterBank, grid: GridSpec, num_frames: usize, noise_std: f64, seed: u64) -> Result<Self> {
        grid.validate()?;
        let padded = bank.padded_grid();
        for corner in [
            Direction::new(grid.az_min, grid.el_min),
            Direction::new(grid.az_max, grid.el_max),
        ] {
            if !padded.contains(&corner) {
                return Err(Error::DirectionOutOfRange {
                    azimuth: corner.azimuth,
                    elevation: corner.elevation,
                });
            }
        }
        if num_frames == 0 {
            return Err(Error::InvalidArgument("recordings need at least one frame".into()));
        }
        Ok(Self {
            bank,
            grid,
            num_frames,
            noise_std,
            seed,
        })
    }
}

impl RecordingSource for GridRecordings<'_> {
    fn len(&self) -> usize {
        self.grid.len()
    }

    fn direction(&self, index: usize) -> Direction {
        self.grid.node(index)
    }

    fn recording(&self, index: usize) -> Result<StereoSpectrogram> {
        let src = white_noise_source(
            &self.bank.spec.stft,
            self.num_frames,
            seed::derive(self.seed, seed::SOURCE, index as u64),
        );
        render_mixture(
            self.bank,
            &[self.grid.node(index)],
            &[&src.spectrogram],
            self.noise_std,
            seed::derive(self.seed, seed::NOISE, index as u64),
        )
    }
}

/// Recordings already held in memory.
pub struct StoredRecordings {
    pub items: Vec<(Direction, StereoSpectrogram)>,
}

impl RecordingSource for StoredRecordings {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn direction(&self, index: usize) -> Direction {
        self.items[index].0
    }

    fn recording(&self, index: usize) -> Result<StereoSpectrogram> {
        Ok(self.items[index].1.clone())
    }
}

/// Temporal mean of the unmasked features of a recording.
pub fn recording_feature_mean(rec: &StereoSpectrogram) -> Result<FeatureVector> {
    mean_feature_vector(&binaural_features(&rec.left, &rec.right)?)
}

fn assemble(xs: Vec<Vec<f64>>, ys: Vec<FeatureVector>, metadata: serde_json::Value) -> Result<TrainingSet> {
    let n = xs.len();
    let l = xs.first().map_or(0, Vec::len);
    let d = ys.first().map_or(0, FeatureVector::len);
    let x = DMatrix::from_row_iterator(n, l, xs.into_iter().flatten());
    let y = DMatrix::from_row_iterator(n, d, ys.into_iter().flat_map(|v| v.0));
    TrainingSet::new(x, y, metadata)
}

/// One white-noise recording per grid node → `(x_n, y_n)` with `L = 2`.
pub fn build_single_source_training(
    bank: &FilterBank,
    grid: GridSpec,
    num_frames: usize,
    noise_std: f64,
    seed: u64,
) -> Result<TrainingSet> {
    let recs = GridRecordings::new(bank, grid, num_frames, noise_std, seed)?;
    let ys = (0..recs.len())
        .into_par_iter()
        .map(|i| recording_feature_mean(&recs.recording(i)?))
        .collect::<Result<Vec<_>>>()?;
    let xs = (0..recs.len())
        .map(|i| DirectionVector::from_directions(&[recs.direction(i)]).0)
        .collect();
    assemble(
        xs,
        ys,
        json!({
            "sources": 1,
            "grid": grid,
            "num_frames": num_frames,
            "noise_std": noise_std,
            "seed": seed,
            "bank_seed": bank.spec.seed,
        }),
    )
}

/// Constraints on which two directions may form a pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairBounds {
    /// Largest allowed azimuth and elevation difference, degrees.
    pub max_axis_separation: f64,
    /// Smallest allowed distance, degrees.
    pub min_distance: f64,
}

impl Default for PairBounds {
    fn default() -> Self {
        Self {
            max_axis_separation: 20.0,
            min_distance: 1.5,
        }
    }
}

impl PairBounds {
    pub fn admits(&self, a: &Direction, b: &Direction) -> bool {
        (a.azimuth - b.azimuth).abs() <= self.max_axis_separation
            && (a.elevation - b.elevation).abs() <= self.max_axis_separation
            && a.distance(b) >= self.min_distance
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairConfig {
    pub num_pairs: usize,
    pub bounds: PairBounds,
    /// Level of the second source relative to the first is drawn uniformly in ±this, dB.
    pub level_spread_db: f64,
    pub seed: u64,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            num_pairs: 20_000,
            bounds: PairBounds::default(),
            level_spread_db: 0.5,
            seed: 0,
        }
    }
}

/// A sampled pair: indices into a recording source and the linear gain of the second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairDraw {
    pub first: usize,
    pub second: usize,
    pub gain: f64,
}

/// Distinct unordered admissible pairs, drawn without replacement.
pub fn sample_pairs(directions: &[Direction], config: &PairConfig) -> Result<Vec<PairDraw>> {
    if directions.len() < 2 {
        return Err(Error::InvalidArgument(
            "pair training needs at least two recordings".into(),
        ));
    }
    let mut eligible = Vec::new();
    for a in 0..directions.len() {
        for b in a + 1..directions.len() {
            if directions[a] == directions[b] {
                return Err(Error::InvalidArgument(format!(
                    "recordings {a} and {b} share direction ({}, {})",
                    directions[a].azimuth, directions[a].elevation
                )));
            }
            if config.bounds.admits(&directions[a], &directions[b]) {
                eligible.push((a, b));
            }
        }
    }
    if config.num_pairs > eligible.len() {
        return Err(Error::InvalidArgument(format!(
            "requested {} pairs but only {} distinct admissible pairs exist",
            config.num_pairs,
            eligible.len()
        )));
    }
    let mut rng = seed::rng(config.seed, seed::PAIRS, 0);
    let picks = sample(&mut rng, eligible.len(), config.num_pairs);
    let mut gain_rng = seed::rng(config.seed, seed::GAIN, 0);
    Ok(picks
        .into_iter()
        .map(|i| {
            let (a, b) = eligible[i];
            let db = if config.level_spread_db > 0.0 {
                gain_rng.gen_range(-config.level_spread_db..=config.level_spread_db)
            } else {
                0.0
            };
            PairDraw {
                first: a,
                second: b,
                gain: 10f64.powf(db / 20.0),
            }
        })
        .collect())
}

/// Sum two recordings, the second scaled by `gain`.
pub fn mix_recordings(a: &StereoSpectrogram, b: &StereoSpectrogram, gain: f64) -> Result<StereoSpectrogram> {
    let mut out = a.clone();
    out.add_scaled(b, gain)?;
    Ok(out)
}

/// Two-source training set (`L = 4`) from mixtures of single recordings.
///
/// Pairs are processed grouped by their first recording so that each
/// recording is produced once per group; output rows keep the sampled order.
pub fn build_pair_training<S: RecordingSource + ?Sized>(
    recordings: &S,
    config: &PairConfig,
) -> Result<TrainingSet> {
    let directions: Vec<Direction> = (0..recordings.len()).map(|i| recordings.direction(i)).collect();
    let draws = sample_pairs(&directions, config)?;
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); recordings.len()];
    for (row, p) in draws.iter().enumerate() {
        groups[p.first].push(row);
    }
    let computed = groups
        .par_iter()
        .enumerate()
        .filter(|(_, rows)| !rows.is_empty())
        .map(|(first, rows)| {
            let base = recordings.recording(first)?;
            rows.iter()
                .map(|&row| {
                    let p = draws[row];
                    let mix = mix_recordings(&base, &recordings.recording(p.second)?, p.gain)?;
                    Ok((row, recording_feature_mean(&mix)?))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ys: Vec<Option<FeatureVector>> = vec![None; draws.len()];
    for (row, y) in computed.into_iter().flatten() {
        ys[row] = Some(y);
    }
    let ys = ys.into_iter().map(|y| y.expect("every row computed")).collect();
    let xs = draws
        .iter()
        .map(|p| DirectionVector::canonical(&[directions[p.first], directions[p.second]]).0)
        .collect();
    assemble(
        xs,
        ys,
        json!({
            "sources": 2,
            "num_pairs": config.num_pairs,
            "bounds": config.bounds,
            "level_spread_db": config.level_spread_db,
            "seed": config.seed,
        }),
    )
}

/// Cell-centre directions of a training grid, `n_el × n_az` of them spread
/// evenly over the cells. None coincides with a grid node.
pub fn off_grid_directions(grid: &GridSpec, n_el: usize, n_az: usize) -> Result<Vec<Direction>> {
    grid.validate()?;
    if grid.n_el < 2 || grid.n_az < 2 {
        return Err(Error::InvalidArgument("off-grid positions need at least 2×2 nodes".into()));
    }
    let (cells_el, cells_az) = (grid.n_el - 1, grid.n_az - 1);
    if n_el == 0 || n_az == 0 || n_el > cells_el || n_az > cells_az {
        return Err(Error::InvalidArgument(format!(
            "cannot place {n_el}×{n_az} off-grid positions in {cells_el}×{cells_az} cells"
        )));
    }
    let pick = |n: usize, cells: usize| -> Vec<usize> {
        if n == 1 {
            return vec![cells / 2];
        }
        (0..n)
            .map(|i| ((i * (cells - 1)) as f64 / (n - 1) as f64).round() as usize)
            .collect()
    };
    let mut out = Vec::with_capacity(n_el * n_az);
    for i in pick(n_el, cells_el) {
        for j in pick(n_az, cells_az) {
            out.push(Direction::new(
                grid.azimuth(j) + 0.5 * grid.az_step(),
                grid.elevation(i) + 0.5 * grid.el_step(),
            ));
        }
    }
    Ok(out)
}

/// Random direction pairs inside `grid`, admissible under `bounds`, with both
/// members off the grid nodes.
pub fn random_pair_directions(
    grid: &GridSpec,
    count: usize,
    bounds: &PairBounds,
    seed: u64,
) -> Result<Vec<[Direction; 2]>> {
    grid.validate()?;
    let mut rng = seed::rng(seed, seed::TEST, 1);
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
        Direction::new(
            rng.gen_range(grid.az_min..grid.az_max),
            rng.gen_range(grid.el_min..grid.el_max),
        )
    };
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if attempts > 1000 * (count + 1) {
            return Err(Error::InvalidArgument(format!(
                "could not draw {count} admissible pairs inside the grid"
            )));
        }
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        if bounds.admits(&a, &b)
            && grid.distance_to_nearest_node(&a) > 0.0
            && grid.distance_to_nearest_node(&b) > 0.0
        {
            out.push([a, b]);
        }
    }
    Ok(out)
}

/// How test recordings are rendered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSetSpec {
    /// One list of source directions per item.
    pub items: Vec<Vec<Direction>>,
    pub kind: SourceKind,
    /// Fraction of nonzero bins of each sparse source.
    pub occupancy: f64,
    /// Item `i` lasts `durations[i % len]` seconds.
    pub durations: Vec<f64>,
    pub noise_std: f64,
    /// `ε` is this multiple of the mean noise power of a calibration recording.
    pub epsilon_factor: f64,
    /// All sources of an item emit the same signal.
    pub identical_sources: bool,
    pub level_spread_db: f64,
    pub seed: u64,
}

impl TestSetSpec {
    pub fn new(items: Vec<Vec<Direction>>, kind: SourceKind, seed: u64) -> Self {
        Self {
            items,
            kind,
            occupancy: 0.3,
            durations: vec![1.0],
            noise_std: 0.05,
            epsilon_factor: 5.0,
            identical_sources: false,
            level_spread_db: 0.5,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestItem {
    pub entry: ManifestEntry,
    pub spectrogram: BinauralSpectrogram,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestSet {
    pub manifest: Manifest,
    pub items: Vec<TestItem>,
}

/// Activity threshold calibrated on a noise-only recording.
pub fn calibrate_epsilon(params: &StftParams, noise_std: f64, factor: f64, seed: u64) -> Result<f64> {
    if !(noise_std > 0.0) {
        return Ok(0.0);
    }
    let frames = params.frames_for_duration(1.0);
    let noise = render_noise(params, frames, noise_std, seed::derive(seed, seed::CALIBRATION, 0));
    noise_floor_epsilon(&noise.left, &noise.right, factor)
}

/// Stereo recording of test item `index`, regenerated from its seed.
pub fn render_test_item(bank: &FilterBank, spec: &TestSetSpec, index: usize) -> Result<StereoSpectrogram> {
    let dirs = spec
        .items
        .get(index)
        .ok_or_else(|| Error::InvalidArgument(format!("no test item {index}")))?;
    if dirs.is_empty() {
        return Err(Error::InvalidArgument(format!("test item {index} has no source")));
    }
    if spec.durations.is_empty() {
        return Err(Error::InvalidArgument("test durations are empty".into()));
    }
    let params = bank.spec.stft;
    let frames = params.frames_for_duration(spec.durations[index % spec.durations.len()]);
    let item_seed = seed::derive(spec.seed, seed::TEST, index as u64);
    let mut sources = Vec::with_capacity(dirs.len());
    for m in 0..dirs.len() {
        let s = if spec.identical_sources { 0 } else { m as u64 };
        let src_seed = seed::derive(item_seed, seed::SOURCE, s);
        let sig = match spec.kind {
            SourceKind::White => white_noise_source(&params, frames, src_seed),
            SourceKind::Sparse => sparse_source(&params, frames, spec.occupancy, src_seed)?,
        };
        sources.push(sig.spectrogram);
    }
    let mut gain_rng = seed::rng(item_seed, seed::GAIN, 0);
    for s in sources.iter_mut().skip(1) {
        if spec.level_spread_db > 0.0 {
            let db: f64 = gain_rng.gen_range(-spec.level_spread_db..=spec.level_spread_db);
            *s = s.scaled(10f64.powf(db / 20.0).into());
        }
    }
    let refs: Vec<_> = sources.iter().collect();
    render_mixture(bank, dirs, &refs, spec.noise_std, seed::derive(item_seed, seed::NOISE, 0))
}

/// Render every test item and extract its masked features.
pub fn build_test_set(bank: &FilterBank, spec: &TestSetSpec) -> Result<TestSet> {
    let padded = bank.padded_grid();
    for d in spec.items.iter().flatten() {
        if !padded.contains(d) {
            return Err(Error::DirectionOutOfRange {
                azimuth: d.azimuth,
                elevation: d.elevation,
            });
        }
    }
    let epsilon = calibrate_epsilon(&bank.spec.stft, spec.noise_std, spec.epsilon_factor, spec.seed)?;
    let items = (0..spec.items.len())
        .into_par_iter()
        .map(|i| {
            let rec = render_test_item(bank, spec, i)?;
            let spectrogram = masked_features(&rec.left, &rec.right, epsilon)?;
            Ok(TestItem {
                entry: ManifestEntry {
                    id: format!("{i:03}"),
                    directions: spec.items[i].clone(),
                    spectrogram: None,
                    audio: None,
                    role: Role::Test,
                    kind: spec.kind,
                },
                spectrogram,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TestSet {
        manifest: Manifest {
            version: MANIFEST_FORMAT_VERSION,
            grid: bank.training_grid(),
            stft: bank.spec.stft,
            epsilon: Some(epsilon),
            entries: items.iter().map(|it| it.entry.clone()).collect(),
        },
        items,
    })
}

impl TestSet {
    /// Write `manifest.json` and `spec/NNN.bnsp` under `dir`.
    pub fn pack(&self, dir: &Path) -> Result<Manifest> {
        std::fs::create_dir_all(dir.join("spec"))?;
        let mut manifest = self.manifest.clone();
        for (entry, item) in manifest.entries.iter_mut().zip(&self.items) {
            let rel = format!("spec/{}.bnsp", entry.id);
            item.spectrogram.save(&dir.join(&rel))?;
            entry.spectrogram = Some(rel);
        }
        manifest.save(&dir.join("manifest.json"))?;
        Ok(manifest)
    }

    /// Read a directory written by [`TestSet::pack`].
    pub fn unpack(dir: &Path) -> Result<Self> {
        let manifest = Manifest::load(&dir.join("manifest.json"))?;
        let items = manifest
            .entries
            .iter()
            .map(|e| {
                let rel = e
                    .spectrogram
                    .as_ref()
                    .ok_or_else(|| Error::Format(format!("entry {:?} has no spectrogram path", e.id)))?;
                Ok(TestItem {
                    entry: e.clone(),
                    spectrogram: BinauralSpectrogram::load(&resolve(dir, rel))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { manifest, items })
    }
}

/// Bundle a manifest and the spectrograms it references into
/// `out/manifest.json` and `out/spec/NNN.bnsp`, numbered in manifest order.
pub fn pack_manifest(manifest_path: &Path, out: &Path) -> Result<Manifest> {
    let src_dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut manifest = Manifest::load(manifest_path)?;
    std::fs::create_dir_all(out.join("spec"))?;
    for (i, entry) in manifest.entries.iter_mut().enumerate() {
        let rel = entry
            .spectrogram
            .as_ref()
            .ok_or_else(|| Error::Format(format!("entry {:?} has no spectrogram path", entry.id)))?;
        let spec = BinauralSpectrogram::load(&resolve(src_dir, rel))?;
        let packed = format!("spec/{i:03}.bnsp");
        spec.save(&out.join(&packed))?;
        entry.spectrogram = Some(packed);
    }
    manifest.save(&out.join("manifest.json"))?;
    Ok(manifest)
}

fn resolve(dir: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

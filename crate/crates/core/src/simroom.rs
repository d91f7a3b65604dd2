//! Synthetic acoustic space: smooth direction-dependent binaural filter
//! banks, source spectrogram synthesis and the additive mixing model
//! `s_c(f,t) = Σ_m h_c(f, x_m) s_m(f,t) + g_c(f,t)`.
//!
//! Gains are defined analytically, sampled on a padded direction grid and
//! bilinearly interpolated between nodes. The analytic form is a low-order
//! random trigonometric expansion in (azimuth, elevation) per frequency bin,
//! plus a sinusoidal level shading and an interaural delay
//! `τ(az) = 0.7 ms · sin(az)` split evenly between the ears.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio::StereoAudio;
use crate::direction::Direction;
use crate::error::{Error, Result};
use crate::seed;
use crate::spectro::{istft, ComplexSpectrogram, StereoSpectrogram, StftParams};

pub const BANK_FORMAT_VERSION: u32 = 1;
const MAX_ITD_SECONDS: f64 = 0.7e-3;

/// A regular (azimuth, elevation) grid in degrees. Nodes are enumerated
/// elevation-major: node `i * n_az + j` sits at `(az_j, el_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub az_min: f64,
    pub az_max: f64,
    pub n_az: usize,
    pub el_min: f64,
    pub el_max: f64,
    pub n_el: usize,
}

impl Default for GridSpec {
    /// 24 azimuths × 18 elevations over a 28° × 21° field of view.
    fn default() -> Self {
        Self {
            az_min: -14.0,
            az_max: 14.0,
            n_az: 24,
            el_min: -10.5,
            el_max: 10.5,
            n_el: 18,
        }
    }
}

impl GridSpec {
    /// Same field of view with a different node count.
    pub fn with_counts(&self, n_el: usize, n_az: usize) -> Self {
        Self {
            n_az,
            n_el,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_az < 2 || self.n_el < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 2 nodes per axis, got {}x{}",
                self.n_el, self.n_az
            )));
        }
        if !(self.az_max > self.az_min && self.el_max > self.el_min) {
            return Err(Error::InvalidArgument("grid bounds are empty".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n_az * self.n_el
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn az_step(&self) -> f64 {
        (self.az_max - self.az_min) / (self.n_az - 1) as f64
    }

    pub fn el_step(&self) -> f64 {
        (self.el_max - self.el_min) / (self.n_el - 1) as f64
    }

    pub fn azimuth(&self, j: usize) -> f64 {
        self.az_min + j as f64 * self.az_step()
    }

    pub fn elevation(&self, i: usize) -> f64 {
        self.el_min + i as f64 * self.el_step()
    }

    pub fn node(&self, index: usize) -> Direction {
        Direction::new(self.azimuth(index % self.n_az), self.elevation(index / self.n_az))
    }

    pub fn nodes(&self) -> Vec<Direction> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    /// Extend by `pad` nodes on every side, keeping the spacing.
    pub fn padded(&self, pad: usize) -> Self {
        let (da, de) = (self.az_step(), self.el_step());
        Self {
            az_min: self.az_min - pad as f64 * da,
            az_max: self.az_max + pad as f64 * da,
            n_az: self.n_az + 2 * pad,
            el_min: self.el_min - pad as f64 * de,
            el_max: self.el_max + pad as f64 * de,
            n_el: self.n_el + 2 * pad,
        }
    }

    pub fn contains(&self, d: &Direction) -> bool {
        let tol = 1e-9;
        d.azimuth >= self.az_min - tol
            && d.azimuth <= self.az_max + tol
            && d.elevation >= self.el_min - tol
            && d.elevation <= self.el_max + tol
    }

    /// Distance to the nearest node.
    pub fn distance_to_nearest_node(&self, d: &Direction) -> f64 {
        let snap = |v: f64, lo: f64, step: f64, n: usize| {
            let k = ((v - lo) / step).round().clamp(0.0, (n - 1) as f64);
            lo + k * step
        };
        let a = snap(d.azimuth, self.az_min, self.az_step(), self.n_az);
        let e = snap(d.elevation, self.el_min, self.el_step(), self.n_el);
        d.distance(&Direction::new(a, e))
    }
}

/// Metadata from which a bank is regenerated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BankSpec {
    pub version: u32,
    /// Training grid; the bank covers it plus `pad` nodes on each side.
    pub grid: GridSpec,
    pub pad: usize,
    #[serde(rename = "F")]
    pub num_bins: usize,
    pub stft: StftParams,
    pub seed: u64,
    pub smoothness_order: usize,
    /// Mirror-symmetric head: `h_R(f, az, el) = h_L(f, -az, el)`.
    pub symmetric: bool,
}

impl BankSpec {
    pub fn new(grid: GridSpec, stft: StftParams, smoothness_order: usize, seed: u64) -> Self {
        Self {
            version: BANK_FORMAT_VERSION,
            grid,
            pad: 2,
            num_bins: stft.num_bins(),
            stft,
            seed,
            smoothness_order,
            symmetric: false,
        }
    }
}

#[derive(Debug, Clone)]
struct ChannelCoeffs {
    /// Per bin: ILD-like shading amplitudes (dB) for azimuth and elevation.
    az_shade_db: Vec<f64>,
    el_shade_db: Vec<f64>,
    /// Per bin, per harmonic: (amplitude, phase offset) for level (dB) and phase (rad).
    level: Vec<Vec<(usize, usize, f64, f64)>>,
    phase: Vec<Vec<(usize, usize, f64, f64)>>,
}

/// Analytic gain model plus its sampled node table.
#[derive(Debug, Clone)]
pub struct FilterBank {
    pub spec: BankSpec,
    padded: GridSpec,
    left: ChannelCoeffs,
    right: ChannelCoeffs,
    /// `[node * F + f]` over the padded grid.
    gains_left: Vec<Complex64>,
    gains_right: Vec<Complex64>,
}

fn harmonics(order: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..=order).flat_map(move |p| (0..=order).map(move |q| (p, q))).filter(|&(p, q)| (p, q) != (0, 0))
}

fn channel_coeffs<R: Rng>(rng: &mut R, num_bins: usize, order: usize) -> ChannelCoeffs {
    let mut az_shade_db = Vec::with_capacity(num_bins);
    let mut el_shade_db = Vec::with_capacity(num_bins);
    let mut level = Vec::with_capacity(num_bins);
    let mut phase = Vec::with_capacity(num_bins);
    for f in 0..num_bins {
        let rel = (f + 1) as f64 / num_bins as f64;
        // Head shadow grows with frequency.
        az_shade_db.push((1.5 + 4.5 * rel) * (0.8 + 0.4 * rng.gen::<f64>()));
        el_shade_db.push((0.5 + 1.5 * rel) * (0.5 + rng.gen::<f64>()));
        let mut lv = Vec::new();
        let mut ph = Vec::new();
        for (p, q) in harmonics(order) {
            let decay = 1.0 / (p + q) as f64;
            let a: f64 = StandardNormal.sample(rng);
            let b: f64 = StandardNormal.sample(rng);
            lv.push((p, q, 1.2 * decay * a, 2.0 * PI * rng.gen::<f64>()));
            ph.push((p, q, 0.25 * decay * b, 2.0 * PI * rng.gen::<f64>()));
        }
        level.push(lv);
        phase.push(ph);
    }
    ChannelCoeffs {
        az_shade_db,
        el_shade_db,
        level,
        phase,
    }
}

/// Build a bank covering `grid` (plus padding). Deterministic in `seed`.
pub fn make_filter_bank(spec: BankSpec) -> Result<FilterBank> {
    spec.grid.validate()?;
    if spec.num_bins < 4 {
        return Err(Error::InvalidArgument(format!(
            "filter bank needs F >= 4, got {}",
            spec.num_bins
        )));
    }
    if spec.num_bins != spec.stft.num_bins() {
        return Err(Error::InvalidArgument(format!(
            "F = {} disagrees with window_len/2 = {}",
            spec.num_bins,
            spec.stft.num_bins()
        )));
    }
    let mut rng = seed::rng(spec.seed, seed::BANK, 0);
    let left = channel_coeffs(&mut rng, spec.num_bins, spec.smoothness_order);
    let right = channel_coeffs(&mut rng, spec.num_bins, spec.smoothness_order);
    let padded = spec.grid.padded(spec.pad);
    let mut bank = FilterBank {
        spec,
        padded,
        left,
        right,
        gains_left: Vec::new(),
        gains_right: Vec::new(),
    };
    let f_bins = spec.num_bins;
    let mut gl = Vec::with_capacity(padded.len() * f_bins);
    let mut gr = Vec::with_capacity(padded.len() * f_bins);
    for node in padded.nodes() {
        for f in 0..f_bins {
            let (l, r) = bank.analytic_gain(f, &node);
            gl.push(l);
            gr.push(r);
        }
    }
    bank.gains_left = gl;
    bank.gains_right = gr;
    Ok(bank)
}

impl FilterBank {
    pub fn num_bins(&self) -> usize {
        self.spec.num_bins
    }

    pub fn training_grid(&self) -> GridSpec {
        self.spec.grid
    }

    pub fn padded_grid(&self) -> GridSpec {
        self.padded
    }

    fn bin_hz(&self, f: usize) -> f64 {
        (f + 1) as f64 * self.spec.stft.sample_rate as f64 / self.spec.stft.window_len as f64
    }

    /// Closed-form gains at an arbitrary direction, bypassing the node table.
    pub fn analytic_gain(&self, f: usize, d: &Direction) -> (Complex64, Complex64) {
        let left = self.channel_gain(&self.left, f, d.azimuth, d.elevation, 1.0);
        let right = if self.spec.symmetric {
            self.channel_gain(&self.left, f, -d.azimuth, d.elevation, 1.0)
        } else {
            self.channel_gain(&self.right, f, d.azimuth, d.elevation, -1.0)
        };
        (left, right)
    }

    fn channel_gain(&self, c: &ChannelCoeffs, f: usize, az: f64, el: f64, side: f64) -> Complex64 {
        let g = &self.padded;
        let az_half = 0.5 * (g.az_max - g.az_min);
        let el_half = 0.5 * (g.el_max - g.el_min);
        let (wa, we) = (PI / (2.0 * az_half), PI / (2.0 * el_half));
        let (u, v) = (az - 0.5 * (g.az_max + g.az_min), el - 0.5 * (g.el_max + g.el_min));

        // Level in dB: the left ear is shaded towards negative azimuth.
        let mut level_db = -0.5 * c.az_shade_db[f] * (wa * az).sin()
            + side * 0.5 * c.el_shade_db[f] * (we * el).sin();
        for &(p, q, amp, off) in &c.level[f] {
            level_db += amp * (p as f64 * wa * u + q as f64 * we * v + off).cos();
        }
        let tau = MAX_ITD_SECONDS * az.to_radians().sin();
        let mut phase = PI * self.bin_hz(f) * tau;
        for &(p, q, amp, off) in &c.phase[f] {
            phase += amp * (p as f64 * wa * u + q as f64 * we * v + off).cos();
        }
        Complex64::from_polar(10f64.powf(level_db / 20.0), phase)
    }

    /// Node gains `(h_L, h_R)` of padded-grid node `(i_el, j_az)`.
    pub fn node_gains(&self, i_el: usize, j_az: usize) -> (&[Complex64], &[Complex64]) {
        let f = self.spec.num_bins;
        let idx = (i_el * self.padded.n_az + j_az) * f;
        (&self.gains_left[idx..idx + f], &self.gains_right[idx..idx + f])
    }

    /// Bilinearly interpolated gains at `d`; exact at grid nodes.
    pub fn gains_at(&self, d: &Direction) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
        let g = &self.padded;
        if !g.contains(d) || !d.azimuth.is_finite() || !d.elevation.is_finite() {
            return Err(Error::DirectionOutOfRange {
                azimuth: d.azimuth,
                elevation: d.elevation,
            });
        }
        let locate = |v: f64, lo: f64, step: f64, n: usize| -> (usize, f64) {
            let mut pos = ((v - lo) / step).clamp(0.0, (n - 1) as f64);
            if (pos - pos.round()).abs() < 1e-9 {
                pos = pos.round();
            }
            let i0 = (pos.floor() as usize).min(n - 2);
            (i0, pos - i0 as f64)
        };
        let (j0, wa) = locate(d.azimuth, g.az_min, g.az_step(), g.n_az);
        let (i0, we) = locate(d.elevation, g.el_min, g.el_step(), g.n_el);
        let f_bins = self.spec.num_bins;
        let mut left = vec![Complex64::new(0.0, 0.0); f_bins];
        let mut right = vec![Complex64::new(0.0, 0.0); f_bins];
        let corners = [
            (i0, j0, (1.0 - we) * (1.0 - wa)),
            (i0, j0 + 1, (1.0 - we) * wa),
            (i0 + 1, j0, we * (1.0 - wa)),
            (i0 + 1, j0 + 1, we * wa),
        ];
        for (i, j, w) in corners {
            if w == 0.0 {
                continue;
            }
            let (nl, nr) = self.node_gains(i, j);
            for f in 0..f_bins {
                left[f] += nl[f] * w;
                right[f] += nr[f] * w;
            }
        }
        Ok((left, right))
    }

    /// Dense gain table: magic `BNFB`, u32 n_el, n_az, F, then per node and
    /// bin the little-endian f64 quadruple (L.re, L.im, R.re, R.im).
    pub fn write_dense(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(b"BNFB")?;
        for v in [self.padded.n_el, self.padded.n_az, self.spec.num_bins] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for (l, r) in self.gains_left.iter().zip(&self.gains_right) {
            for x in [l.re, l.im, r.re, r.im] {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_spec(&self, path: &Path) -> Result<()> {
        serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), &self.spec)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let spec: BankSpec = serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?;
        if spec.version != BANK_FORMAT_VERSION {
            return Err(Error::Version {
                found: spec.version,
                expected: BANK_FORMAT_VERSION,
            });
        }
        make_filter_bank(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    White,
    Sparse,
}

/// An emitted source spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSignal {
    pub kind: SourceKind,
    /// Fraction of nonzero time-frequency bins.
    pub occupancy: f64,
    pub spectrogram: ComplexSpectrogram,
}

fn complex_normal<R: Rng>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// I.i.d. unit-variance circular complex Gaussian in every bin.
pub fn white_noise_source(params: &StftParams, num_frames: usize, seed: u64) -> SourceSignal {
    let f_bins = params.num_bins();
    let mut rng = seed::rng(seed, seed::SOURCE, 0);
    let data = (0..f_bins * num_frames).map(|_| complex_normal(&mut rng)).collect();
    SourceSignal {
        kind: SourceKind::White,
        occupancy: 1.0,
        spectrogram: ComplexSpectrogram::from_vec(f_bins, num_frames, data, *params)
            .expect("sizes agree"),
    }
}

/// Speech-like sparse source: each frame holds a few contiguous active bands,
/// the total support is `round(occupancy · F · T)` bins.
pub fn sparse_source(
    params: &StftParams,
    num_frames: usize,
    occupancy: f64,
    seed: u64,
) -> Result<SourceSignal> {
    if !(occupancy > 0.0 && occupancy <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "occupancy must lie in (0, 1], got {occupancy}"
        )));
    }
    let f_bins = params.num_bins();
    if occupancy >= 1.0 {
        let mut s = white_noise_source(params, num_frames, seed);
        s.kind = SourceKind::Sparse;
        return Ok(s);
    }
    let mut rng = seed::rng(seed, seed::SOURCE, 1);
    let total = ((occupancy * (f_bins * num_frames) as f64).round() as usize).max(1);

    // Per-frame loudness varies; counts are allotted by largest remainder.
    let weights: Vec<f64> = (0..num_frames).map(|_| 0.4 + 1.2 * rng.gen::<f64>()).collect();
    let wsum: f64 = weights.iter().sum();
    let raw: Vec<f64> = weights.iter().map(|w| w / wsum * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| (r.floor() as usize).min(f_bins)).collect();
    let mut order: Vec<usize> = (0..num_frames).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    let mut assigned: usize = counts.iter().sum();
    let mut cursor = 0;
    while assigned < total {
        let t = order[cursor % num_frames];
        if counts[t] < f_bins {
            counts[t] += 1;
            assigned += 1;
        }
        cursor += 1;
    }

    let mut spec = ComplexSpectrogram::zeros(f_bins, num_frames, *params);
    for (t, &n_active) in counts.iter().enumerate() {
        if n_active == 0 {
            continue;
        }
        let bands = rng.gen_range(1..=4usize).min(n_active);
        let lengths = random_composition(&mut rng, n_active, bands, 1);
        let gaps = random_composition(&mut rng, f_bins - n_active, bands + 1, 0);
        let mut f = gaps[0];
        for (b, len) in lengths.iter().enumerate() {
            for _ in 0..*len {
                spec.set(f, t, complex_normal(&mut rng));
                f += 1;
            }
            f += gaps[b + 1];
        }
    }
    Ok(SourceSignal {
        kind: SourceKind::Sparse,
        occupancy: total as f64 / (f_bins * num_frames) as f64,
        spectrogram: spec,
    })
}

/// Split `total` into `parts` non-negative integers, each at least `min_each`.
fn random_composition<R: Rng>(rng: &mut R, total: usize, parts: usize, min_each: usize) -> Vec<usize> {
    let free = total - min_each * parts;
    let mut cuts: Vec<usize> = (0..parts - 1).map(|_| rng.gen_range(0..=free)).collect();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(parts);
    let mut prev = 0;
    for c in cuts {
        out.push(c - prev + min_each);
        prev = c;
    }
    out.push(free - prev + min_each);
    out
}

/// Mix sources emitted from `directions` and add circular Gaussian sensor
/// noise of standard deviation `noise_std` per channel.
pub fn render_mixture(
    bank: &FilterBank,
    directions: &[Direction],
    sources: &[&ComplexSpectrogram],
    noise_std: f64,
    noise_seed: u64,
) -> Result<StereoSpectrogram> {
    if directions.is_empty() || directions.len() != sources.len() {
        return Err(Error::InvalidArgument(format!(
            "need one source per direction, got {} directions and {} sources",
            directions.len(),
            sources.len()
        )));
    }
    let f_bins = bank.num_bins();
    let t_frames = sources[0].num_frames();
    for s in sources {
        if s.num_bins() != f_bins || s.num_frames() != t_frames {
            return Err(Error::DimensionMismatch(format!(
                "source is {}x{}, bank expects {f_bins} bins and all sources {t_frames} frames",
                s.num_bins(),
                s.num_frames()
            )));
        }
    }
    if !(noise_std >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise_std must be >= 0, got {noise_std}")));
    }
    let params = sources[0].params;
    let mut left = ComplexSpectrogram::zeros(f_bins, t_frames, params);
    let mut right = ComplexSpectrogram::zeros(f_bins, t_frames, params);
    for (d, src) in directions.iter().zip(sources) {
        let (hl, hr) = bank.gains_at(d)?;
        accumulate_filtered(left.data_mut(), src.data(), &hl, t_frames);
        accumulate_filtered(right.data_mut(), src.data(), &hr, t_frames);
    }
    if noise_std > 0.0 {
        add_noise(&mut left, noise_std, seed::derive(noise_seed, seed::NOISE, 0));
        add_noise(&mut right, noise_std, seed::derive(noise_seed, seed::NOISE, 1));
    }
    Ok(StereoSpectrogram { left, right })
}

fn accumulate_filtered(dst: &mut [Complex64], src: &[Complex64], gains: &[Complex64], t_frames: usize) {
    for (f, h) in gains.iter().enumerate() {
        let row = f * t_frames..(f + 1) * t_frames;
        for (o, s) in dst[row.clone()].iter_mut().zip(&src[row]) {
            *o += h * s;
        }
    }
}

fn add_noise(spec: &mut ComplexSpectrogram, std: f64, seed: u64) {
    let mut rng = seed::rng(seed, seed::NOISE, 2);
    for v in spec.data_mut() {
        *v += complex_normal(&mut rng) * std;
    }
}

/// Sensor noise alone, as recorded with every source silent.
pub fn render_noise(
    params: &StftParams,
    num_frames: usize,
    noise_std: f64,
    noise_seed: u64,
) -> StereoSpectrogram {
    let f_bins = params.num_bins();
    let mut left = ComplexSpectrogram::zeros(f_bins, num_frames, *params);
    let mut right = ComplexSpectrogram::zeros(f_bins, num_frames, *params);
    add_noise(&mut left, noise_std, seed::derive(noise_seed, seed::NOISE, 0));
    add_noise(&mut right, noise_std, seed::derive(noise_seed, seed::NOISE, 1));
    StereoSpectrogram { left, right }
}

/// Time-domain rendering by weighted overlap-add of both channels.
pub fn to_audio(stereo: &StereoSpectrogram) -> StereoAudio {
    StereoAudio {
        sample_rate: stereo.left.params.sample_rate,
        left: istft(&stereo.left),
        right: istft(&stereo.right),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_params() -> StftParams {
        StftParams {
            sample_rate: 16_000,
            window_len: 64,
            hop: 8,
        }
    }

    fn small_bank(seed: u64) -> FilterBank {
        make_filter_bank(BankSpec::new(GridSpec::default(), small_params(), 2, seed)).unwrap()
    }

    #[test]
    fn bank_is_deterministic() {
        let a = small_bank(4);
        let b = small_bank(4);
        assert_eq!(a.gains_left, b.gains_left);
        assert_eq!(a.gains_right, b.gains_right);
        let c = small_bank(5);
        assert_ne!(a.gains_left, c.gains_left);
    }

    #[test]
    fn gains_are_smooth_over_the_default_grid() {
        let bank = make_filter_bank(BankSpec::new(GridSpec::default(), StftParams::default(), 2, 0)).unwrap();
        let g = bank.training_grid();
        let mut worst: f64 = 0.0;
        for i in 0..g.n_el {
            for j in 0..g.n_az {
                let here = g.node(i * g.n_az + j);
                let (hl, hr) = bank.gains_at(&here).unwrap();
                assert!(hl.iter().chain(&hr).all(|v| v.norm() > 0.0 && v.norm().is_finite()));
                let mut neighbours = Vec::new();
                if j + 1 < g.n_az {
                    neighbours.push(g.node(i * g.n_az + j + 1));
                }
                if i + 1 < g.n_el {
                    neighbours.push(g.node((i + 1) * g.n_az + j));
                }
                for n in neighbours {
                    let (nl, nr) = bank.gains_at(&n).unwrap();
                    for f in 0..bank.num_bins() {
                        worst = worst.max((nl[f] - hl[f]).norm() / hl[f].norm());
                        worst = worst.max((nr[f] - hr[f]).norm() / hr[f].norm());
                    }
                }
            }
        }
        assert!(worst < 0.5, "largest relative step {worst}");
    }

    #[test]
    fn channels_differ() {
        let bank = small_bank(1);
        let (hl, hr) = bank.gains_at(&Direction::new(3.0, 2.0)).unwrap();
        assert!(hl.iter().zip(&hr).any(|(a, b)| (a - b).norm() > 1e-3));
    }

    #[test]
    fn symmetric_head_has_zero_ild_dead_ahead() {
        let mut spec = BankSpec::new(GridSpec::default(), small_params(), 3, 9);
        spec.symmetric = true;
        let bank = make_filter_bank(spec).unwrap();
        let centre = Direction::new(0.0, 0.0);
        let (hl, hr) = bank.gains_at(&centre).unwrap();
        for f in 0..bank.num_bins() {
            assert!((hl[f].norm() - hr[f].norm()).abs() < 1e-10);
            let (al, ar) = bank.analytic_gain(f, &centre);
            assert!((al.norm() - ar.norm()).abs() < 1e-10);
        }
    }

    #[test]
    fn interpolation_is_exact_at_nodes() {
        let bank = small_bank(2);
        let g = bank.padded_grid();
        for &(i, j) in &[(0, 0), (3, 7), (g.n_el - 1, g.n_az - 1), (5, g.n_az - 1)] {
            let d = Direction::new(g.azimuth(j), g.elevation(i));
            let (l, r) = bank.gains_at(&d).unwrap();
            let (nl, nr) = bank.node_gains(i, j);
            assert_eq!(l.as_slice(), nl);
            assert_eq!(r.as_slice(), nr);
        }
    }

    #[test]
    fn outside_padded_grid_is_an_error() {
        let bank = small_bank(2);
        let src = white_noise_source(&small_params(), 3, 0);
        let far = Direction::new(40.0, 0.0);
        let err = render_mixture(&bank, &[far], &[&src.spectrogram], 0.0, 0).unwrap_err();
        assert!(matches!(err, Error::DirectionOutOfRange { .. }));
    }

    #[test]
    fn unit_source_reproduces_gains() {
        let bank = small_bank(3);
        let p = small_params();
        let ones = ComplexSpectrogram::from_vec(32, 2, vec![Complex64::new(1.0, 0.0); 64], p).unwrap();
        let d = Direction::new(1.3, -4.1);
        let out = render_mixture(&bank, &[d], &[&ones], 0.0, 0).unwrap();
        let (hl, hr) = bank.gains_at(&d).unwrap();
        for f in 0..32 {
            for t in 0..2 {
                assert_eq!(out.left.get(f, t), hl[f]);
                assert_eq!(out.right.get(f, t), hr[f]);
            }
        }
    }

    #[test]
    fn silent_second_source_changes_nothing() {
        let bank = small_bank(3);
        let p = small_params();
        let a = white_noise_source(&p, 5, 1);
        let zero = ComplexSpectrogram::zeros(32, 5, p);
        let d1 = Direction::new(2.0, 1.0);
        let d2 = Direction::new(-5.0, 3.0);
        let one = render_mixture(&bank, &[d1], &[&a.spectrogram], 0.0, 0).unwrap();
        let two = render_mixture(&bank, &[d1, d2], &[&a.spectrogram, &zero], 0.0, 0).unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn rendering_is_linear() {
        let bank = small_bank(6);
        let p = small_params();
        let a = white_noise_source(&p, 4, 2);
        let g = Complex64::new(-1.7, 0.4);
        let scaled = a.spectrogram.scaled(g);
        let d = Direction::new(-3.3, 7.7);
        let base = render_mixture(&bank, &[d], &[&a.spectrogram], 0.0, 0).unwrap();
        let lin = render_mixture(&bank, &[d], &[&scaled], 0.0, 0).unwrap();
        for (x, y) in base.left.data().iter().zip(lin.left.data()) {
            assert!((x * g - y).norm() < 1e-12);
        }
        for (x, y) in base.right.data().iter().zip(lin.right.data()) {
            assert!((x * g - y).norm() < 1e-12);
        }
    }

    #[test]
    fn white_noise_statistics() {
        let p = StftParams {
            sample_rate: 16_000,
            window_len: 200,
            hop: 50,
        };
        let s = white_noise_source(&p, 100, 7);
        assert!(s.spectrogram.data().iter().all(|v| v.norm() > 0.0));
        let mean_power: f64 =
            s.spectrogram.data().iter().map(|v| v.norm_sqr()).sum::<f64>() / 10_000.0;
        assert!((mean_power - 1.0).abs() < 0.05, "mean power {mean_power}");
    }

    #[test]
    fn sparse_occupancy_is_respected() {
        let p = StftParams {
            sample_rate: 16_000,
            window_len: 200,
            hop: 50,
        };
        let s = sparse_source(&p, 100, 0.3, 7).unwrap();
        let nz = s.spectrogram.data().iter().filter(|v| v.norm() > 0.0).count();
        let occ = nz as f64 / 10_000.0;
        assert!((occ - 0.3).abs() < 0.02, "occupancy {occ}");
        assert_eq!(s.kind, SourceKind::Sparse);
        let full = sparse_source(&p, 100, 1.0, 7).unwrap();
        assert!(full.spectrogram.data().iter().all(|v| v.norm() > 0.0));
        assert!(sparse_source(&p, 10, 0.0, 1).is_err());
        assert!(sparse_source(&p, 10, 1.5, 1).is_err());
    }

    #[test]
    fn sparse_frames_are_banded() {
        let p = small_params();
        let s = sparse_source(&p, 50, 0.3, 3).unwrap();
        for t in 0..50 {
            let active: Vec<bool> = (0..32).map(|f| s.spectrogram.get(f, t).norm() > 0.0).collect();
            let runs = active.windows(2).filter(|w| !w[0] && w[1]).count() + active[0] as usize;
            assert!(runs <= 4, "frame {t} has {runs} bands");
        }
    }

    #[test]
    fn rendered_ild_matches_gain_ratio() {
        let bank = small_bank(8);
        let p = small_params();
        let g = bank.training_grid();
        let d = g.node(37);
        let src = white_noise_source(&p, 6, 4);
        let out = render_mixture(&bank, &[d], &[&src.spectrogram], 0.0, 0).unwrap();
        let feats = crate::spectro::binaural_features(&out.left, &out.right).unwrap();
        let (hl, hr) = bank.gains_at(&d).unwrap();
        for f in 0..32 {
            let expect = 20.0 * (hr[f].norm() / hl[f].norm()).log10();
            for t in 0..6 {
                assert!((feats.feature(f, t) - expect).abs() < 1e-9);
            }
        }
    }
}

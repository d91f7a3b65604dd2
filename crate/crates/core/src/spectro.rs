//! Short-time spectra and interaural features.
//!
//! A [`BinauralSpectrogram`] stacks three per-bin cues into `D = 3F` rows: the
//! interaural level difference (dB), then the cosine and sine of the
//! interaural phase difference. Each of the `F` retained bins is one of the
//! positive frequencies `1..=window_len/2`; DC is dropped.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGNITUDE_FLOOR: f64 = 1e-12;
const BNSP_MAGIC: &[u8; 4] = b"BNSP";

/// Framing parameters of the short-time Fourier transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftParams {
    pub sample_rate: u32,
    pub window_len: usize,
    pub hop: usize,
}

impl Default for StftParams {
    /// 64 ms Hann window with 8 ms hop at 16 kHz.
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            window_len: 1024,
            hop: 128,
        }
    }
}

impl StftParams {
    pub fn num_bins(&self) -> usize {
        self.window_len / 2
    }

    /// Number of frames covering `seconds` of audio at this hop.
    pub fn frames_for_duration(&self, seconds: f64) -> usize {
        ((seconds * self.sample_rate as f64) / self.hop as f64).round().max(1.0) as usize
    }
}

/// An `F × T` complex spectrogram stored frequency-major (`data[f * T + t]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    num_bins: usize,
    num_frames: usize,
    data: Vec<Complex64>,
    pub params: StftParams,
}

impl ComplexSpectrogram {
    pub fn zeros(num_bins: usize, num_frames: usize, params: StftParams) -> Self {
        Self {
            num_bins,
            num_frames,
            data: vec![Complex64::new(0.0, 0.0); num_bins * num_frames],
            params,
        }
    }

    pub fn from_vec(
        num_bins: usize,
        num_frames: usize,
        data: Vec<Complex64>,
        params: StftParams,
    ) -> Result<Self> {
        if data.len() != num_bins * num_frames {
            return Err(Error::DimensionMismatch(format!(
                "spectrogram data has {} entries, expected {num_bins}x{num_frames}",
                data.len()
            )));
        }
        if num_frames == 0 || num_bins == 0 {
            return Err(Error::InvalidArgument("spectrogram must be non-empty".into()));
        }
        Ok(Self {
            num_bins,
            num_frames,
            data,
            params,
        })
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    #[inline]
    pub fn get(&self, f: usize, t: usize) -> Complex64 {
        self.data[f * self.num_frames + t]
    }

    #[inline]
    pub fn set(&mut self, f: usize, t: usize, v: Complex64) {
        self.data[f * self.num_frames + t] = v;
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// `self += gain * other`.
    pub fn add_scaled(&mut self, other: &ComplexSpectrogram, gain: Complex64) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += gain * b;
        }
        Ok(())
    }

    pub fn scaled(&self, gain: Complex64) -> ComplexSpectrogram {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= gain);
        out
    }

    fn check_same_shape(&self, other: &ComplexSpectrogram) -> Result<()> {
        if self.num_bins != other.num_bins || self.num_frames != other.num_frames {
            return Err(Error::DimensionMismatch(format!(
                "spectrogram shapes differ: {}x{} vs {}x{}",
                self.num_bins, self.num_frames, other.num_bins, other.num_frames
            )));
        }
        if self.params.sample_rate != other.params.sample_rate {
            return Err(Error::DimensionMismatch(format!(
                "sample rates differ: {} vs {}",
                self.params.sample_rate, other.params.sample_rate
            )));
        }
        Ok(())
    }
}

/// Left and right channel spectrograms of one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoSpectrogram {
    pub left: ComplexSpectrogram,
    pub right: ComplexSpectrogram,
}

impl StereoSpectrogram {
    pub fn add_scaled(&mut self, other: &StereoSpectrogram, gain: f64) -> Result<()> {
        let g = Complex64::new(gain, 0.0);
        self.left.add_scaled(&other.left, g)?;
        self.right.add_scaled(&other.right, g)
    }
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

/// Hann-windowed STFT keeping bins `1..=window_len/2`.
pub fn stft(signal: &[f64], params: &StftParams) -> Result<ComplexSpectrogram> {
    let n = params.window_len;
    if n < 2 || n % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "window_len must be even and >= 2, got {n}"
        )));
    }
    if params.hop == 0 {
        return Err(Error::InvalidArgument("hop must be >= 1".into()));
    }
    if signal.len() < n {
        return Err(Error::SignalTooShort {
            len: signal.len(),
            window_len: n,
        });
    }
    let num_frames = (signal.len() - n) / params.hop + 1;
    let num_bins = n / 2;
    let window = hann(n);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut out = ComplexSpectrogram::zeros(num_bins, num_frames, *params);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..num_frames {
        let start = t * params.hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex64::new(signal[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for f in 0..num_bins {
            out.set(f, t, buf[f + 1]);
        }
    }
    Ok(out)
}

/// Weighted overlap-add inverse of [`stft`]. The dropped DC bin is taken as zero.
pub fn istft(spec: &ComplexSpectrogram) -> Vec<f64> {
    let params = spec.params;
    let n = params.window_len;
    let hop = params.hop;
    let frames = spec.num_frames();
    let bins = spec.num_bins().min(n / 2);
    let len = (frames - 1) * hop + n;
    let window = hann(n);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let mut out = vec![0.0; len];
    let mut norm = vec![0.0; len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..frames {
        buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for f in 0..bins {
            let k = f + 1;
            let v = spec.get(f, t);
            if k == n / 2 {
                buf[k] = Complex64::new(v.re, 0.0);
            } else {
                buf[k] = v;
                buf[n - k] = v.conj();
            }
        }
        ifft.process(&mut buf);
        let start = t * hop;
        for i in 0..n {
            out[start + i] += buf[i].re / n as f64 * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }
    for (o, w) in out.iter_mut().zip(&norm) {
        if *w > 1e-10 {
            *o /= w;
        }
    }
    out
}

/// Row layout of a [`BinauralSpectrogram`]: rows `0..F` hold ILD, `F..2F` the
/// IPD real part and `2F..3F` the IPD imaginary part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureLayout {
    IldIpdBlocks,
}

/// Interaural feature matrix `D × T` (row-major) with its activity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct BinauralSpectrogram {
    num_bins: usize,
    num_frames: usize,
    features: Vec<f64>,
    activity: Vec<bool>,
    pub layout: FeatureLayout,
}

impl BinauralSpectrogram {
    pub fn new(
        num_bins: usize,
        num_frames: usize,
        features: Vec<f64>,
        activity: Vec<bool>,
    ) -> Result<Self> {
        let d = 3 * num_bins;
        if features.len() != d * num_frames || activity.len() != d * num_frames {
            return Err(Error::DimensionMismatch(format!(
                "binaural spectrogram expects {d}x{num_frames} features and activity, got {} and {}",
                features.len(),
                activity.len()
            )));
        }
        if num_frames == 0 || num_bins == 0 {
            return Err(Error::InvalidArgument("binaural spectrogram must be non-empty".into()));
        }
        Ok(Self {
            num_bins,
            num_frames,
            features,
            activity,
            layout: FeatureLayout::IldIpdBlocks,
        })
    }

    /// Wrap an arbitrary `D × T` matrix whose row count need not be a multiple of 3.
    pub fn from_raw(
        dim: usize,
        num_frames: usize,
        features: Vec<f64>,
        activity: Vec<bool>,
    ) -> Result<Self> {
        if features.len() != dim * num_frames || activity.len() != dim * num_frames {
            return Err(Error::DimensionMismatch(format!(
                "expected {dim}x{num_frames} features and activity, got {} and {}",
                features.len(),
                activity.len()
            )));
        }
        if dim == 0 || num_frames == 0 {
            return Err(Error::InvalidArgument("binaural spectrogram must be non-empty".into()));
        }
        Ok(Self {
            num_bins: dim / 3,
            num_frames,
            features,
            activity,
            layout: FeatureLayout::IldIpdBlocks,
        })
    }

    pub fn dim(&self) -> usize {
        self.features.len() / self.num_frames
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut [f64] {
        &mut self.features
    }

    pub fn activity(&self) -> &[bool] {
        &self.activity
    }

    #[inline]
    pub fn feature(&self, d: usize, t: usize) -> f64 {
        self.features[d * self.num_frames + t]
    }

    #[inline]
    pub fn is_active(&self, d: usize, t: usize) -> bool {
        self.activity[d * self.num_frames + t]
    }

    pub fn active_count(&self) -> usize {
        self.activity.iter().filter(|&&a| a).count()
    }

    pub fn active_fraction(&self) -> f64 {
        self.active_count() as f64 / self.activity.len() as f64
    }

    /// Replace the activity mask (`D × T`, row-major).
    pub fn with_activity(mut self, activity: Vec<bool>) -> Result<Self> {
        if activity.len() != self.activity.len() {
            return Err(Error::DimensionMismatch(format!(
                "activity has {} entries, expected {}",
                activity.len(),
                self.activity.len()
            )));
        }
        self.activity = activity;
        Ok(self)
    }

    /// Write the `BNSP` binary format.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.dim();
        w.write_all(BNSP_MAGIC)?;
        w.write_all(&(d as u32).to_le_bytes())?;
        w.write_all(&(self.num_bins as u32).to_le_bytes())?;
        w.write_all(&(self.num_frames as u32).to_le_bytes())?;
        for v in &self.features {
            w.write_all(&v.to_le_bytes())?;
        }
        let bytes: Vec<u8> = self.activity.iter().map(|&a| a as u8).collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BNSP_MAGIC {
            return Err(Error::Format("missing BNSP magic".into()));
        }
        let mut word = [0u8; 4];
        let mut next_u32 = |r: &mut R| -> Result<usize> {
            r.read_exact(&mut word)?;
            Ok(u32::from_le_bytes(word) as usize)
        };
        let d = next_u32(&mut r)?;
        let f = next_u32(&mut r)?;
        let t = next_u32(&mut r)?;
        let n = d
            .checked_mul(t)
            .ok_or_else(|| Error::Format("BNSP dimensions overflow".into()))?;
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw)?;
        let features = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let mut act = vec![0u8; n];
        r.read_exact(&mut act)?;
        let activity = act.iter().map(|&b| b != 0).collect();
        let mut spec = Self::from_raw(d, t, features, activity)?;
        spec.num_bins = f;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let w = BufWriter::new(File::create(path)?);
        self.write_to(w)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

/// A temporal-mean feature vector of length `D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Level and phase cues of a single bin: `(ild_db, cos, sin)`.
#[inline]
pub fn bin_features(left: Complex64, right: Complex64) -> (f64, f64, f64) {
    let ml = left.norm().max(MAGNITUDE_FLOOR);
    let mr = right.norm().max(MAGNITUDE_FLOOR);
    let ild = 20.0 * (mr / ml).log10();
    let z = right * left.conj();
    let r = z.norm();
    if r > 0.0 && r.is_finite() {
        (ild, z.re / r, z.im / r)
    } else {
        (ild, 1.0, 0.0)
    }
}

/// Interaural features of a stereo pair; the activity mask is all ones.
pub fn binaural_features(
    left: &ComplexSpectrogram,
    right: &ComplexSpectrogram,
) -> Result<BinauralSpectrogram> {
    left.check_same_shape(right)?;
    let (f_bins, t_frames) = (left.num_bins(), left.num_frames());
    let mut features = vec![0.0; 3 * f_bins * t_frames];
    let (ild, rest) = features.split_at_mut(f_bins * t_frames);
    let (ipd_re, ipd_im) = rest.split_at_mut(f_bins * t_frames);
    for i in 0..f_bins * t_frames {
        let (a, c, s) = bin_features(left.data[i], right.data[i]);
        ild[i] = a;
        ipd_re[i] = c;
        ipd_im[i] = s;
    }
    let activity = vec![true; features.len()];
    BinauralSpectrogram::new(f_bins, t_frames, features, activity)
}

/// Per-bin activity: `|L|² + |R|² >= epsilon`, replicated over the three cue rows.
pub fn activity_mask(
    left: &ComplexSpectrogram,
    right: &ComplexSpectrogram,
    epsilon: f64,
) -> Result<Vec<bool>> {
    left.check_same_shape(right)?;
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let per_bin: Vec<bool> = left
        .data
        .iter()
        .zip(&right.data)
        .map(|(l, r)| l.norm_sqr() + r.norm_sqr() >= epsilon)
        .collect();
    let mut mask = Vec::with_capacity(3 * per_bin.len());
    for _ in 0..3 {
        mask.extend_from_slice(&per_bin);
    }
    Ok(mask)
}

/// Features plus the power-threshold activity mask.
pub fn masked_features(
    left: &ComplexSpectrogram,
    right: &ComplexSpectrogram,
    epsilon: f64,
) -> Result<BinauralSpectrogram> {
    let mask = activity_mask(left, right, epsilon)?;
    binaural_features(left, right)?.with_activity(mask)
}

/// Power threshold from a noise-only recording: `factor` times the mean summed power.
pub fn noise_floor_epsilon(
    noise_left: &ComplexSpectrogram,
    noise_right: &ComplexSpectrogram,
    factor: f64,
) -> Result<f64> {
    if noise_left.data.is_empty() || noise_right.data.is_empty() {
        return Err(Error::EmptyInput("noise recording"));
    }
    noise_left.check_same_shape(noise_right)?;
    if !(factor > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon factor must be > 0, got {factor}")));
    }
    let total: f64 = noise_left
        .data
        .iter()
        .zip(&noise_right.data)
        .map(|(l, r)| l.norm_sqr() + r.norm_sqr())
        .sum();
    Ok(factor * total / noise_left.data.len() as f64)
}

/// Temporal mean of a fully active spectrogram.
pub fn mean_feature_vector(spec: &BinauralSpectrogram) -> Result<FeatureVector> {
    if spec.activity.iter().any(|&a| !a) {
        return Err(Error::IncompleteSpectrogram);
    }
    let t = spec.num_frames;
    let values = spec
        .features
        .chunks_exact(t)
        .map(|row| row.iter().sum::<f64>() / t as f64)
        .collect();
    Ok(FeatureVector(values))
}

//! Stereo audio input/output: WAV (16-bit PCM or 32-bit float) and raw
//! interleaved float32 with a JSON sidecar header.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-channel audio as separate sample vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct StereoAudio {
    pub sample_rate: u32,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

/// Sidecar header for raw interleaved float32 files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawHeader {
    pub sample_rate: u32,
    pub channels: u16,
}

pub fn read_wav(path: &Path) -> Result<StereoAudio> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 2 {
        return Err(Error::Format(format!(
            "expected a two-channel WAV, found {} channels",
            spec.channels
        )));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::Format(format!(
                "unsupported WAV encoding {fmt:?} at {bits} bits"
            )))
        }
    };
    Ok(deinterleave(&samples, spec.sample_rate))
}

/// Write 32-bit float stereo WAV.
pub fn write_wav(path: &Path, audio: &StereoAudio) -> Result<()> {
    if audio.left.len() != audio.right.len() {
        return Err(Error::DimensionMismatch("channel lengths differ".into()));
    }
    let spec = hound::WavSpec {
        channels: 2,
        sample_rate: audio.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::new(BufWriter::new(File::create(path)?), spec)?;
    for (l, r) in audio.left.iter().zip(&audio.right) {
        w.write_sample(*l as f32)?;
        w.write_sample(*r as f32)?;
    }
    w.finalize()?;
    Ok(())
}

/// Sidecar path for a raw file: `name.raw` → `name.raw.json`.
pub fn raw_sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn read_raw_f32(path: &Path) -> Result<StereoAudio> {
    let header: RawHeader =
        serde_json::from_reader(BufReader::new(File::open(raw_sidecar_path(path))?))?;
    if header.channels != 2 {
        return Err(Error::Format(format!(
            "expected two channels in raw header, found {}",
            header.channels
        )));
    }
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format("raw stereo file length is not a multiple of 8".into()));
    }
    let samples: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
        .collect();
    Ok(deinterleave(&samples, header.sample_rate))
}

/// Dispatch on extension: `.wav` or raw float32 otherwise.
pub fn read_stereo(path: &Path) -> Result<StereoAudio> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("wav") => read_wav(path),
        _ => read_raw_f32(path),
    }
}

fn deinterleave(samples: &[f64], sample_rate: u32) -> StereoAudio {
    let left = samples.iter().step_by(2).copied().collect();
    let right = samples.iter().skip(1).step_by(2).copied().collect();
    StereoAudio {
        sample_rate,
        left,
        right,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let audio = StereoAudio {
            sample_rate: 16_000,
            left: vec![0.0, 0.25, -0.5],
            right: vec![1.0, -1.0, 0.125],
        };
        write_wav(&path, &audio).unwrap();
        assert_eq!(read_stereo(&path).unwrap(), audio);
    }

    #[test]
    fn pcm16_is_scaled() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for v in [16384i16, -32768, 0, 8192] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        let a = read_wav(&path).unwrap();
        assert_eq!(a.left, vec![0.5, 0.0]);
        assert_eq!(a.right, vec![-1.0, 0.25]);
    }

    #[test]
    fn raw_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.raw");
        let mut f = File::create(&path).unwrap();
        for v in [0.5f32, -0.5, 0.25, 1.0] {
            f.write_all(&v.to_le_bytes()).unwrap();
        }
        let header = RawHeader {
            sample_rate: 16_000,
            channels: 2,
        };
        std::fs::write(raw_sidecar_path(&path), serde_json::to_string(&header).unwrap()).unwrap();
        let a = read_stereo(&path).unwrap();
        assert_eq!(a.left, vec![0.5, 0.25]);
        assert_eq!(a.right, vec![-0.5, 1.0]);
    }
}

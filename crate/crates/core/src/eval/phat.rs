//! GCC-PHAT time-difference-of-arrival and a linear TDOA → azimuth map.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Histogram and correlation resolution in samples.
const LAG_STEP: f64 = 0.5;
const SILENCE: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GccPhatParams {
    pub frame_len: usize,
    pub hop: usize,
    /// Largest delay searched, in samples.
    pub max_lag: usize,
}

impl Default for GccPhatParams {
    fn default() -> Self {
        Self {
            frame_len: 1024,
            hop: 512,
            max_lag: 16,
        }
    }
}

/// Delay of `right` relative to `left` in fractional samples; positive
/// when the right channel lags.
///
/// Each frame's phase-transform cross-correlation is evaluated on a
/// half-sample lag grid. Frame peaks vote into a histogram over that grid,
/// the correlations are pooled, and the dominant bin is refined by a
/// parabola through the pooled correlation.
pub fn gcc_phat_tdoa(left: &[f64], right: &[f64], params: &GccPhatParams) -> Result<f64> {
    let max_lag = params.max_lag;
    if left.len() != right.len() {
        return Err(Error::DimensionMismatch(format!(
            "channels have {} and {} samples",
            left.len(),
            right.len()
        )));
    }
    if max_lag == 0 || left.len() < 2 * max_lag {
        return Err(Error::InvalidArgument(format!(
            "need max_lag >= 1 and at least 2·max_lag samples, got max_lag {max_lag} and {} samples",
            left.len()
        )));
    }
    if params.hop == 0 {
        return Err(Error::InvalidArgument("hop must be >= 1".into()));
    }
    let frame = params.frame_len.min(left.len()).max(2 * max_lag);
    let nfft = (2 * frame).next_power_of_two();
    let up = 2 * nfft;
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(nfft);
    let inv = planner.plan_fft_inverse(up);

    let bins = 2 * max_lag + 1;
    let lags = 2 * bins - 1;
    let mut pooled = vec![0.0; lags];
    let mut votes = vec![0.0; lags];
    let mut any = false;
    let mut start = 0;
    loop {
        let end = (start + frame).min(left.len());
        let mut l: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); nfft];
        let mut r = l.clone();
        let mut energy = 0.0;
        for i in start..end {
            l[i - start].re = left[i];
            r[i - start].re = right[i];
            energy += left[i] * left[i] + right[i] * right[i];
        }
        if energy > SILENCE {
            fwd.process(&mut l);
            fwd.process(&mut r);
            let mut spec = vec![Complex64::new(0.0, 0.0); up];
            for k in 0..nfft {
                let c = r[k] * l[k].conj();
                let m = c.norm();
                let v = if m > SILENCE { c / m } else { Complex64::new(0.0, 0.0) };
                // Zero-padding the spectrum doubles the lag resolution.
                let half = nfft / 2;
                if k < half {
                    spec[k] = v;
                } else if k == half {
                    spec[k] = v * 0.5;
                    spec[up - half] = v * 0.5;
                } else {
                    spec[up - nfft + k] = v;
                }
            }
            inv.process(&mut spec);
            let corr: Vec<f64> = (0..lags)
                .map(|i| {
                    let lag_half = i as isize - (lags as isize - 1) / 2;
                    spec[lag_half.rem_euclid(up as isize) as usize].re / nfft as f64
                })
                .collect();
            let (peak, &height) = corr
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .expect("nonempty");
            if height > 0.0 {
                votes[peak] += height;
                any = true;
            }
            for (p, c) in pooled.iter_mut().zip(&corr) {
                *p += c;
            }
        }
        if end == left.len() {
            break;
        }
        start += params.hop;
    }
    if !any {
        return Err(Error::NoSignal);
    }
    let best = votes
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("nonempty")
        .0;
    let offset = if best > 0 && best + 1 < lags {
        let (a, b, c) = (pooled[best - 1], pooled[best], pooled[best + 1]);
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    } else {
        0.0
    };
    let centre = (lags as f64 - 1.0) / 2.0;
    Ok((best as f64 + offset - centre) * LAG_STEP)
}

/// Least-squares line `azimuth = slope · tdoa + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdoaRegressor {
    pub slope: f64,
    pub intercept: f64,
}

impl TdoaRegressor {
    pub fn fit(tdoas: &[f64], azimuths: &[f64]) -> Result<Self> {
        if tdoas.len() != azimuths.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} delays and {} azimuths",
                tdoas.len(),
                azimuths.len()
            )));
        }
        if tdoas.len() < 2 {
            return Err(Error::Degenerate(format!("need at least 2 samples, got {}", tdoas.len())));
        }
        let n = tdoas.len() as f64;
        let mx = tdoas.iter().sum::<f64>() / n;
        let my = azimuths.iter().sum::<f64>() / n;
        let sxx: f64 = tdoas.iter().map(|x| (x - mx).powi(2)).sum();
        let sxy: f64 = tdoas.iter().zip(azimuths).map(|(x, y)| (x - mx) * (y - my)).sum();
        if !(sxx > 1e-12 * n * (1.0 + mx * mx)) {
            return Err(Error::Degenerate("all delays are equal".into()));
        }
        let slope = sxy / sxx;
        Ok(Self {
            slope,
            intercept: my - slope * mx,
        })
    }

    pub fn apply(&self, tdoa: f64) -> f64 {
        self.slope * tdoa + self.intercept
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    /// Circular fractional delay by a linear phase ramp; band-limited by construction.
    fn fractional_delay(x: &[f64], delay: f64) -> Vec<f64> {
        let n = x.len();
        let mut planner = FftPlanner::<f64>::new();
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        planner.plan_fft_forward(n).process(&mut buf);
        for (k, v) in buf.iter_mut().enumerate() {
            let f = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
            if k == n / 2 {
                *v = Complex64::new(0.0, 0.0);
            } else {
                *v *= Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * f * delay / n as f64);
            }
        }
        planner.plan_fft_inverse(n).process(&mut buf);
        buf.iter().map(|v| v.re / n as f64).collect()
    }

    #[test]
    fn integer_delay_is_exact() {
        let x = noise(8192, 1);
        let mut y = vec![0.0; x.len()];
        y[8..].copy_from_slice(&x[..x.len() - 8]);
        let d = gcc_phat_tdoa(&x, &y, &GccPhatParams::default()).unwrap();
        assert!((d - 8.0).abs() < 0.1, "delay {d}");
        let back = gcc_phat_tdoa(&y, &x, &GccPhatParams::default()).unwrap();
        assert!((back + 8.0).abs() < 0.1, "delay {back}");
    }

    #[test]
    fn zero_delay() {
        let x = noise(4096, 2);
        assert!(gcc_phat_tdoa(&x, &x, &GccPhatParams::default()).unwrap().abs() < 1e-9);
    }

    #[test]
    fn fractional_delay_within_quarter_sample() {
        let x = noise(16384, 3);
        for delay in [3.5, -2.25, 1.75] {
            let y = fractional_delay(&x, delay);
            let d = gcc_phat_tdoa(&x, &y, &GccPhatParams::default()).unwrap();
            assert!((d - delay).abs() < 0.25, "delay {d} vs {delay}");
        }
    }

    #[test]
    fn amplitude_invariant() {
        let x = noise(8192, 4);
        let y = fractional_delay(&x, 2.3);
        let p = GccPhatParams::default();
        let d0 = gcc_phat_tdoa(&x, &y, &p).unwrap();
        let ys: Vec<f64> = y.iter().map(|v| v * 7.5).collect();
        let xs: Vec<f64> = x.iter().map(|v| v * 0.01).collect();
        assert!((gcc_phat_tdoa(&x, &ys, &p).unwrap() - d0).abs() < 1e-6);
        assert!((gcc_phat_tdoa(&xs, &y, &p).unwrap() - d0).abs() < 1e-6);
    }

    #[test]
    fn silence_and_bad_lengths() {
        let z = vec![0.0; 2048];
        assert!(matches!(gcc_phat_tdoa(&z, &z, &GccPhatParams::default()), Err(Error::NoSignal)));
        let x = noise(20, 5);
        assert!(gcc_phat_tdoa(&x, &x, &GccPhatParams::default()).is_err());
        assert!(gcc_phat_tdoa(&x, &x[..10], &GccPhatParams::default()).is_err());
    }

    #[test]
    fn regressor_exact_and_noisy() {
        let t = [-2.0, -1.0, 0.5, 3.0];
        let az: Vec<f64> = t.iter().map(|x| 4.0 * x - 1.0).collect();
        let r = TdoaRegressor::fit(&t, &az).unwrap();
        for (x, y) in t.iter().zip(&az) {
            assert!((r.apply(*x) - y).abs() < 1e-12);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 200;
        let xs: Vec<f64> = (0..n).map(|i| -3.0 + 6.0 * i as f64 / n as f64).collect();
        let sigma = 0.5;
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| {
                let z: f64 = StandardNormal.sample(&mut rng);
                2.5 * x + 0.3 + sigma * z
            })
            .collect();
        let r = TdoaRegressor::fit(&xs, &ys).unwrap();
        let mx = xs.iter().sum::<f64>() / n as f64;
        let se = sigma / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>().sqrt();
        assert!((r.slope - 2.5).abs() < 3.0 * se);
    }

    #[test]
    fn regressor_rejects_degenerate_input() {
        assert!(TdoaRegressor::fit(&[1.0], &[2.0]).is_err());
        assert!(TdoaRegressor::fit(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]).is_err());
    }
}

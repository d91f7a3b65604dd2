//! Closed-form direction posterior for a sparse binaural spectrogram.
//!
//! Conditioned on component `k`, every active observation `y'_dt` is a
//! Gaussian linear measurement of `x` with row `a_dk` and variance `σ²_d`, so
//! the posterior stays Gaussian:
//!
//! ```text
//! V_k⁻¹ = Γ_k⁻¹ + Σ_dt χ_dt a_dk a_dkᵀ / σ²_d
//! μ_k   = V_k (Γ_k⁻¹ c_k + Σ_dt χ_dt a_dk (y'_dt − b_dk) / σ²_d)
//! log ν_k = log π_k + ½ log|V_k| − ½ log|Γ_k|
//!           − ½ (Σ_dt χ_dt (y'_dt − b_dk)² / σ²_d + c_kᵀ Γ_k⁻¹ c_k − μ_kᵀ V_k⁻¹ μ_k) + const
//! ```
//!
//! Inactive entries are skipped, never multiplied by zero, so their stored
//! values cannot influence the result.

mod oracle;

use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::direction::DirectionVector;
use crate::error::{Error, Result};
use crate::gllim::GllimModel;
use crate::numeric::{logsumexp, spd_inverse_logdet, KahanSum};
use crate::spectro::BinauralSpectrogram;

pub use oracle::{grid_oracle_posterior, oracle_check, random_oracle_instance, OracleCheck, OracleGrid, OraclePosterior};

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorComponent {
    pub nu: f64,
    pub mu: DVector<f64>,
    pub v: DMatrix<f64>,
}

/// `p(x | S) = Σ_k ν_k N(x; μ_k, V_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGmm {
    pub components: Vec<PosteriorComponent>,
}

impl PosteriorGmm {
    pub fn l(&self) -> usize {
        self.components.first().map_or(0, |c| c.mu.len())
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.nu).collect()
    }
}

/// `Σ_k ν_k μ_k`.
pub fn posterior_mean(gmm: &PosteriorGmm) -> DirectionVector {
    let mut out = vec![0.0; gmm.l()];
    for c in &gmm.components {
        for (o, m) in out.iter_mut().zip(c.mu.iter()) {
            *o += c.nu * m;
        }
    }
    DirectionVector(out)
}

struct Prepared {
    log_pi: f64,
    gamma_inv: DMatrix<f64>,
    log_det_gamma: f64,
    gamma_inv_c: DVector<f64>,
    c_gamma_inv_c: f64,
    /// Rows of `A_k`, row-major D×L.
    a: Vec<f64>,
    b: Vec<f64>,
}

/// Model-dependent quantities precomputed once for many spectrograms.
pub struct PosteriorEngine {
    l: usize,
    d: usize,
    inv_sigma2: Vec<f64>,
    components: Vec<Prepared>,
    field_of_view: Vec<(f64, f64)>,
}

impl PosteriorEngine {
    pub fn new(model: &GllimModel) -> Result<Self> {
        model.validate()?;
        let (l, d) = (model.l(), model.d());
        let mut components = Vec::with_capacity(model.k());
        let mut fov = vec![(f64::INFINITY, f64::NEG_INFINITY); l];
        for (i, c) in model.components.iter().enumerate() {
            let (gamma_inv, log_det_gamma) = spd_inverse_logdet(&c.gamma, &format!("Gamma_{i}"))?;
            let gamma_inv_c = &gamma_inv * &c.c;
            let mut a = Vec::with_capacity(d * l);
            for dd in 0..d {
                a.extend(c.a.row(dd).iter());
            }
            for j in 0..l {
                let spread = 2.0 * c.gamma[(j, j)].sqrt();
                fov[j].0 = fov[j].0.min(c.c[j] - spread);
                fov[j].1 = fov[j].1.max(c.c[j] + spread);
            }
            components.push(Prepared {
                log_pi: c.pi.ln(),
                c_gamma_inv_c: c.c.dot(&gamma_inv_c),
                gamma_inv,
                log_det_gamma,
                gamma_inv_c,
                a,
                b: c.b.as_slice().to_vec(),
            });
        }
        Ok(Self {
            l,
            d,
            inv_sigma2: model.sigma2.iter().map(|s| 1.0 / s).collect(),
            components,
            field_of_view: fov,
        })
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Per-axis range covered by the model's regions (centres ± 2 std).
    pub fn field_of_view(&self) -> &[(f64, f64)] {
        &self.field_of_view
    }

    pub fn posterior(&self, spec: &BinauralSpectrogram) -> Result<PosteriorGmm> {
        let active = ActiveEntries::collect(spec, self.d)?;
        let l = self.l;
        let mut log_nu = Vec::with_capacity(self.components.len());
        let mut parts = Vec::with_capacity(self.components.len());
        for comp in &self.components {
            let mut p_acc = vec![KahanSum::new(); l * l];
            let mut h_acc = vec![KahanSum::new(); l];
            let mut q_acc = KahanSum::new();
            for dd in 0..self.d {
                let values = active.row(dd);
                if values.is_empty() {
                    continue;
                }
                let b = comp.b[dd];
                let mut se = KahanSum::new();
                let mut sse = KahanSum::new();
                for &y in values {
                    let e = y - b;
                    se.add(e);
                    sse.add(e * e);
                }
                let w = self.inv_sigma2[dd];
                let a = &comp.a[dd * l..(dd + 1) * l];
                let nw = values.len() as f64 * w;
                let sw = se.value() * w;
                for i in 0..l {
                    for j in 0..=i {
                        p_acc[i * l + j].add(nw * a[i] * a[j]);
                    }
                    h_acc[i].add(sw * a[i]);
                }
                q_acc.add(sse.value() * w);
            }
            let mut precision = comp.gamma_inv.clone();
            for i in 0..l {
                for j in 0..=i {
                    let v = p_acc[i * l + j].value();
                    precision[(i, j)] += v;
                    if i != j {
                        precision[(j, i)] += v;
                    }
                }
            }
            let rhs = DVector::from_fn(l, |i, _| comp.gamma_inv_c[i] + h_acc[i].value());
            let (v, log_det_precision) = spd_inverse_logdet(&precision, "posterior precision")?;
            let mu = &v * &rhs;
            let lv = comp.log_pi
                - 0.5 * log_det_precision
                - 0.5 * comp.log_det_gamma
                - 0.5 * (q_acc.value() + comp.c_gamma_inv_c - mu.dot(&rhs));
            log_nu.push(lv);
            parts.push((mu, v));
        }
        let lse = logsumexp(&log_nu);
        if !lse.is_finite() {
            return Err(Error::InvalidArgument("posterior weights are not finite".into()));
        }
        Ok(PosteriorGmm {
            components: parts
                .into_iter()
                .zip(log_nu)
                .map(|((mu, v), lv)| PosteriorComponent {
                    nu: (lv - lse).exp(),
                    mu,
                    v,
                })
                .collect(),
        })
    }

    /// Posterior, its mean, and a serializable report.
    pub fn localize(&self, spec: &BinauralSpectrogram) -> Result<LocalizationReport> {
        let gmm = self.posterior(spec)?;
        let estimate = posterior_mean(&gmm);
        let mut warnings = Vec::new();
        for (j, (&v, &(lo, hi))) in estimate.0.iter().zip(&self.field_of_view).enumerate() {
            if v < lo || v > hi {
                warnings.push(format!(
                    "estimate coordinate {j} = {v:.3} lies outside the trained range [{lo:.3}, {hi:.3}]"
                ));
            }
        }
        Ok(LocalizationReport {
            version: REPORT_FORMAT_VERSION,
            num_sources: self.l / 2,
            estimate: estimate.0,
            gmm: gmm
                .components
                .iter()
                .map(|c| ReportComponent {
                    nu: c.nu,
                    mu: c.mu.as_slice().to_vec(),
                    v: (0..self.l)
                        .map(|i| c.v.row(i).iter().copied().collect())
                        .collect(),
                })
                .collect(),
            active_fraction: spec.active_fraction(),
            warnings,
            elapsed_ms: None,
        })
    }
}

/// Active feature values grouped by feature row, in time order.
struct ActiveEntries {
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl ActiveEntries {
    fn collect(spec: &BinauralSpectrogram, d: usize) -> Result<Self> {
        if spec.dim() != d {
            return Err(Error::DimensionMismatch(format!(
                "spectrogram has D = {}, model expects {d}",
                spec.dim()
            )));
        }
        let t_frames = spec.num_frames();
        let mut offsets = Vec::with_capacity(d + 1);
        let mut values = Vec::new();
        offsets.push(0);
        for dd in 0..d {
            for t in 0..t_frames {
                if spec.is_active(dd, t) {
                    let v = spec.feature(dd, t);
                    if !v.is_finite() {
                        return Err(Error::NonFiniteFeature { row: dd, col: t });
                    }
                    values.push(v);
                }
            }
            offsets.push(values.len());
        }
        if values.is_empty() {
            return Err(Error::EmptySpectrogram);
        }
        Ok(Self { offsets, values })
    }

    fn row(&self, d: usize) -> &[f64] {
        &self.values[self.offsets[d]..self.offsets[d + 1]]
    }
}

pub fn spectrogram_posterior(model: &GllimModel, spec: &BinauralSpectrogram) -> Result<PosteriorGmm> {
    PosteriorEngine::new(model)?.posterior(spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportComponent {
    pub nu: f64,
    pub mu: Vec<f64>,
    #[serde(rename = "V")]
    pub v: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub version: u32,
    pub num_sources: usize,
    pub estimate: Vec<f64>,
    pub gmm: Vec<ReportComponent>,
    pub active_fraction: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    /// Wall-clock time; left out of reproducible outputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<f64>,
}

impl LocalizationReport {
    pub fn with_elapsed(mut self, elapsed: Duration) -> Self {
        self.elapsed_ms = Some(elapsed.as_secs_f64() * 1e3);
        self
    }
}

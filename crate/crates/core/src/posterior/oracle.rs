//! Brute-force posterior by quadrature: evaluates
//! `Σ_k π_k N(x; c_k, Γ_k) Π_dt N(y'_dt; a_dkᵀ x + b_dk, σ²_d)^χ_dt`
//! at every node of a regular grid, without any of the closed-form algebra.

use rand::Rng;
use serde::Serialize;

use super::{posterior_mean, spectrogram_posterior};
use crate::error::{Error, Result};
use crate::gllim::synthetic::{random_model, RandomModelSpec};
use crate::gllim::GllimModel;
use crate::numeric::spd_inverse_logdet;
use crate::seed;
use crate::spectro::BinauralSpectrogram;

/// Regular grid over one or two direction axes.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleGrid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub nodes: usize,
}

impl OracleGrid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, nodes: usize) -> Result<Self> {
        if nodes < 2 {
            return Err(Error::InvalidArgument(format!(
                "oracle grid needs at least 2 nodes per axis, got {nodes}"
            )));
        }
        if lo.len() != hi.len() || lo.is_empty() || lo.len() > 2 {
            return Err(Error::InvalidArgument(
                "oracle grid supports one or two axes".into(),
            ));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(b > a)) {
            return Err(Error::InvalidArgument("oracle grid bounds are empty".into()));
        }
        Ok(Self { lo, hi, nodes })
    }

    /// Bounding box of `points` padded by `pad_fraction` of its extent per axis.
    pub fn from_bounding_box(points: &[Vec<f64>], pad_fraction: f64, nodes: usize) -> Result<Self> {
        let l = points.first().map_or(0, Vec::len);
        let mut lo = vec![f64::INFINITY; l];
        let mut hi = vec![f64::NEG_INFINITY; l];
        for p in points {
            for j in 0..l {
                lo[j] = lo[j].min(p[j]);
                hi[j] = hi[j].max(p[j]);
            }
        }
        for j in 0..l {
            let pad = pad_fraction * (hi[j] - lo[j]);
            lo[j] -= pad;
            hi[j] += pad;
        }
        Self::new(lo, hi, nodes)
    }

    /// Union of `c_k ± n_std · sqrt(Γ_k[j,j])` over components.
    pub fn around_prior(model: &GllimModel, n_std: f64, nodes: usize) -> Result<Self> {
        let l = model.l();
        let mut lo = vec![f64::INFINITY; l];
        let mut hi = vec![f64::NEG_INFINITY; l];
        for c in &model.components {
            for j in 0..l {
                let s = n_std * c.gamma[(j, j)].sqrt();
                lo[j] = lo[j].min(c.c[j] - s);
                hi[j] = hi[j].max(c.c[j] + s);
            }
        }
        Self::new(lo, hi, nodes)
    }

    pub fn dims(&self) -> usize {
        self.lo.len()
    }

    pub fn spacing(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| (b - a) / (self.nodes - 1) as f64)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.pow(self.dims() as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinates of node `index`; the last axis varies fastest.
    pub fn node(&self, index: usize) -> Vec<f64> {
        let h = self.spacing();
        let mut rest = index;
        let mut out = vec![0.0; self.dims()];
        for j in (0..self.dims()).rev() {
            out[j] = self.lo[j] + (rest % self.nodes) as f64 * h[j];
            rest /= self.nodes;
        }
        out
    }

    fn trapezoid_weight(&self, index: usize) -> f64 {
        let mut w = 1.0;
        let mut rest = index;
        for _ in 0..self.dims() {
            let i = rest % self.nodes;
            if i == 0 || i == self.nodes - 1 {
                w *= 0.5;
            }
            rest /= self.nodes;
        }
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OraclePosterior {
    pub grid: OracleGrid,
    /// Quadrature mass per node, summing to one.
    pub probabilities: Vec<f64>,
    pub mean: Vec<f64>,
    /// Posterior mass of each mixture component.
    pub weights: Vec<f64>,
}

pub fn grid_oracle_posterior(
    model: &GllimModel,
    spec: &BinauralSpectrogram,
    grid: &OracleGrid,
) -> Result<OraclePosterior> {
    let l = model.l();
    if l > 2 || grid.dims() != l {
        return Err(Error::InvalidArgument(format!(
            "grid oracle needs L <= 2 matching the grid, got L = {l} and a {}-axis grid",
            grid.dims()
        )));
    }
    if spec.dim() != model.d() {
        return Err(Error::DimensionMismatch(format!(
            "spectrogram has D = {}, model expects {}",
            spec.dim(),
            model.d()
        )));
    }
    let mut observed = Vec::new();
    for d in 0..spec.dim() {
        for t in 0..spec.num_frames() {
            if spec.is_active(d, t) {
                observed.push((d, spec.feature(d, t)));
            }
        }
    }
    if observed.is_empty() {
        return Err(Error::EmptySpectrogram);
    }
    let priors = model
        .components
        .iter()
        .enumerate()
        .map(|(i, c)| spd_inverse_logdet(&c.gamma, &format!("Gamma_{i}")))
        .collect::<Result<Vec<_>>>()?;

    let k = model.k();
    let n = grid.len();
    let mut log_terms = vec![0.0; n * k];
    for node in 0..n {
        let x = grid.node(node);
        for (i, c) in model.components.iter().enumerate() {
            let (ginv, logdet) = &priors[i];
            let mut quad = 0.0;
            for a in 0..l {
                for b in 0..l {
                    quad += (x[a] - c.c[a]) * ginv[(a, b)] * (x[b] - c.c[b]);
                }
            }
            let mut lik = 0.0;
            for &(d, y) in &observed {
                let mut pred = c.b[d];
                for j in 0..l {
                    pred += c.a[(d, j)] * x[j];
                }
                lik += (y - pred) * (y - pred) / model.sigma2[d];
            }
            log_terms[node * k + i] = c.pi.ln() - 0.5 * logdet - 0.5 * quad - 0.5 * lik;
        }
    }
    let top = log_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut mass = vec![0.0; k];
    let mut probabilities = vec![0.0; n];
    for node in 0..n {
        let w = grid.trapezoid_weight(node);
        for i in 0..k {
            let v = w * (log_terms[node * k + i] - top).exp();
            mass[i] += v;
            probabilities[node] += v;
        }
    }
    let total: f64 = mass.iter().sum();
    let mut mean = vec![0.0; l];
    for (node, p) in probabilities.iter_mut().enumerate() {
        *p /= total;
        for (m, xj) in mean.iter_mut().zip(grid.node(node)) {
            *m += *p * xj;
        }
    }
    Ok(OraclePosterior {
        grid: grid.clone(),
        probabilities,
        mean,
        weights: mass.iter().map(|m| m / total).collect(),
    })
}

/// Worst-case disagreement between the closed-form posterior and the grid
/// oracle over random small instances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleCheck {
    pub trials: usize,
    /// Largest mean discrepancy in units of the finer grid spacing.
    pub max_mean_error_spacings: f64,
    pub max_weight_error: f64,
}

impl OracleCheck {
    pub fn within(&self, mean_spacings: f64, weight_tol: f64) -> bool {
        self.max_mean_error_spacings < mean_spacings && self.max_weight_error < weight_tol
    }
}

/// Random instance `trial`: `K <= 3`, `L = 2`, `D <= 8`, `T <= 5`, about 70% active entries.
pub fn random_oracle_instance(seed: u64, trial: usize) -> (GllimModel, BinauralSpectrogram) {
    let mut rng = seed::rng(seed, seed::SYNTH, trial as u64);
    let k = rng.gen_range(1..=3);
    let d = rng.gen_range(2..=8);
    let t = rng.gen_range(1..=5);
    let spec = RandomModelSpec {
        k,
        l: 2,
        d,
        centre_spread: 3.0,
        gamma_std: (1.0, 2.0),
        a_std: 0.15,
        b_std: 1.0,
        sigma2: (0.5, 1.5),
    };
    let model = random_model(&spec, rng.gen());
    let values = (0..d * t).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let mut activity: Vec<bool> = (0..d * t).map(|_| rng.gen::<f64>() < 0.7).collect();
    activity[0] = true;
    let s = BinauralSpectrogram::from_raw(d, t, values, activity).expect("sizes agree");
    (model, s)
}

/// Compare [`spectrogram_posterior`] with [`grid_oracle_posterior`] on
/// `trials` random instances, each on a `nodes × nodes` grid spanning the
/// prior mixture ± 7 standard deviations.
pub fn oracle_check(trials: usize, seed: u64, nodes: usize) -> Result<OracleCheck> {
    let mut out = OracleCheck {
        trials,
        max_mean_error_spacings: 0.0,
        max_weight_error: 0.0,
    };
    for trial in 0..trials {
        let (m, s) = random_oracle_instance(seed, trial);
        let grid = OracleGrid::around_prior(&m, 7.0, nodes)?;
        let o = grid_oracle_posterior(&m, &s, &grid)?;
        let g = spectrogram_posterior(&m, &s)?;
        let mean = posterior_mean(&g);
        let h = grid.spacing();
        let err = (mean.0[0] - o.mean[0]).hypot(mean.0[1] - o.mean[1]) / h[0].min(h[1]);
        out.max_mean_error_spacings = out.max_mean_error_spacings.max(err);
        for (c, w) in g.components.iter().zip(&o.weights) {
            out.max_weight_error = out.max_weight_error.max((c.nu - w).abs());
        }
    }
    Ok(out)
}

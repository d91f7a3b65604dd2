//! Gaussian locally-linear mapping from directions `x ∈ ℝᴸ` to features
//! `y ∈ ℝᴰ`:
//!
//! ```text
//! p(Z = k) = π_k,  p(x | Z = k) = N(c_k, Γ_k),  y = A_k x + b_k + e,  e ~ N(0, diag Σ)
//! ```
//!
//! with one diagonal `Σ` shared by all components. Training is by EM; the
//! inverse conditional `p(x | y)` is available in closed form.

mod em;
mod inverse;
mod io;
pub mod synthetic;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{logsumexp, spd_inverse_logdet, LN_2PI};

pub use em::{
    e_step, fit, init_params, log_likelihood, m_step, FitConfig, FitOutput, FitTrace,
    Responsibilities,
};
pub use inverse::{inverse_density_params, inverse_predict, InverseComponent, InverseParams};
pub use io::{MODEL_FORMAT_VERSION, TRAINING_FORMAT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorMode {
    /// Mixing weights estimated by EM.
    #[default]
    Free,
    /// Mixing weights held at `1/K`.
    Fixed,
}

impl std::str::FromStr for PriorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "free" => Ok(Self::Free),
            "fixed" => Ok(Self::Fixed),
            other => Err(Error::InvalidArgument(format!(
                "prior mode must be 'free' or 'fixed', got '{other}'"
            ))),
        }
    }
}

/// One affine region of the mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub pi: f64,
    /// Region centre, length L.
    pub c: DVector<f64>,
    /// Region covariance, L×L.
    pub gamma: DMatrix<f64>,
    /// Local linear map, D×L.
    pub a: DMatrix<f64>,
    /// Local offset, length D.
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GllimModel {
    pub components: Vec<Component>,
    /// Diagonal of the shared observation covariance, length D.
    pub sigma2: DVector<f64>,
    pub prior_mode: PriorMode,
}

/// Shape of the shared observation covariance, for parameter counting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseStructure {
    /// One variance `σ²` for every feature dimension.
    Isotropic,
    /// One variance per feature dimension.
    Diagonal,
}

/// Free parameters of a low-to-high mapping with a single isotropic noise
/// variance: `K(1 + L + L(L+1)/2 + DL + D)`. The weight simplex removes one
/// degree of freedom and the shared variance adds it back.
pub fn count_parameters(d: usize, l: usize, k: usize) -> usize {
    count_parameters_with(d, l, k, NoiseStructure::Isotropic)
}

pub fn count_parameters_with(d: usize, l: usize, k: usize, noise: NoiseStructure) -> usize {
    let per_component = 1 + l + l * (l + 1) / 2 + d * l + d;
    let noise = match noise {
        NoiseStructure::Isotropic => 1,
        NoiseStructure::Diagonal => d,
    };
    k * per_component - 1 + noise
}

impl GllimModel {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn l(&self) -> usize {
        self.components.first().map_or(0, |c| c.c.len())
    }

    pub fn d(&self) -> usize {
        self.sigma2.len()
    }

    /// Free parameters of this model, with its diagonal `Σ`.
    pub fn num_parameters(&self) -> usize {
        count_parameters_with(self.d(), self.l(), self.k(), NoiseStructure::Diagonal)
    }

    /// Check shapes, positivity and weight normalization.
    pub fn validate(&self) -> Result<()> {
        let (k, l, d) = (self.k(), self.l(), self.d());
        if k == 0 || l == 0 || d == 0 {
            return Err(Error::InvalidArgument(format!(
                "model dimensions must be positive, got K={k} L={l} D={d}"
            )));
        }
        for (i, c) in self.components.iter().enumerate() {
            let ok = c.c.len() == l
                && c.gamma.shape() == (l, l)
                && c.a.shape() == (d, l)
                && c.b.len() == d;
            if !ok {
                return Err(Error::DimensionMismatch(format!(
                    "component {i} shapes disagree with L={l}, D={d}"
                )));
            }
            if !(c.pi > 0.0) || !c.pi.is_finite() {
                return Err(Error::InvalidArgument(format!("component {i} has weight {}", c.pi)));
            }
            let finite = c.c.iter().chain(c.gamma.iter()).chain(c.a.iter()).chain(c.b.iter());
            if !finite.into_iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidArgument(format!("component {i} has non-finite entries")));
            }
        }
        if !self.sigma2.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidArgument("sigma2 must be positive and finite".into()));
        }
        let total: f64 = self.components.iter().map(|c| c.pi).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("weights sum to {total}, expected 1")));
        }
        Ok(())
    }

    /// `Σ_k w_k(x) (A_k x + b_k)` with `w_k(x) ∝ π_k N(x; c_k, Γ_k)`.
    pub fn forward_predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.l() {
            return Err(Error::DimensionMismatch(format!(
                "direction has length {}, model expects L = {}",
                x.len(),
                self.l()
            )));
        }
        let xv = DVector::from_column_slice(x);
        let mut logw = Vec::with_capacity(self.k());
        for (i, c) in self.components.iter().enumerate() {
            let (inv, logdet) = spd_inverse_logdet(&c.gamma, &format!("Gamma_{i}"))?;
            let diff = &xv - &c.c;
            let quad = diff.dot(&(&inv * &diff));
            logw.push(c.pi.ln() - 0.5 * (self.l() as f64 * LN_2PI + logdet + quad));
        }
        let lse = logsumexp(&logw);
        let mut out = DVector::zeros(self.d());
        for (c, lw) in self.components.iter().zip(&logw) {
            let w = (lw - lse).exp();
            out += (&c.a * &xv + &c.b) * w;
        }
        Ok(out.as_slice().to_vec())
    }
}

/// Paired directions and feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    /// N×L directions in degrees.
    pub x: DMatrix<f64>,
    /// N×D feature vectors.
    pub y: DMatrix<f64>,
    /// Free-form generation provenance.
    pub metadata: serde_json::Value,
}

impl TrainingSet {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>, metadata: serde_json::Value) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "X has {} rows, Y has {}",
                x.nrows(),
                y.nrows()
            )));
        }
        if x.nrows() == 0 || x.ncols() == 0 || y.ncols() == 0 {
            return Err(Error::EmptyInput("training set"));
        }
        if let Some(pos) = x.iter().chain(y.iter()).position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "training set has a non-finite value at flat index {pos}"
            )));
        }
        Ok(Self { x, y, metadata })
    }

    /// Build from row vectors.
    pub fn from_rows(xs: &[Vec<f64>], ys: &[Vec<f64>], metadata: serde_json::Value) -> Result<Self> {
        let n = xs.len();
        if n == 0 || ys.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} directions against {} feature vectors",
                n,
                ys.len()
            )));
        }
        let (l, d) = (xs[0].len(), ys[0].len());
        if xs.iter().any(|r| r.len() != l) || ys.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch("ragged training rows".into()));
        }
        let x = DMatrix::from_fn(n, l, |i, j| xs[i][j]);
        let y = DMatrix::from_fn(n, d, |i, j| ys[i][j]);
        Self::new(x, y, metadata)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn l(&self) -> usize {
        self.x.ncols()
    }

    pub fn d(&self) -> usize {
        self.y.ncols()
    }

    pub fn x_row(&self, n: usize) -> DVector<f64> {
        self.x.row(n).transpose()
    }

    pub fn y_row(&self, n: usize) -> DVector<f64> {
        self.y.row(n).transpose()
    }
}

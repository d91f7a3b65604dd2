//! Random models and samples drawn from them, for testing and calibration.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Component, GllimModel, PriorMode, TrainingSet};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomModelSpec {
    pub k: usize,
    pub l: usize,
    pub d: usize,
    /// Centres uniform in `[-spread, spread]` per axis.
    pub centre_spread: f64,
    /// Region standard deviations uniform in this range, randomly rotated.
    pub gamma_std: (f64, f64),
    /// Entries of `A_k` are `N(0, a_std²)`.
    pub a_std: f64,
    pub b_std: f64,
    /// Noise variances uniform in this range.
    pub sigma2: (f64, f64),
}

impl Default for RandomModelSpec {
    fn default() -> Self {
        Self {
            k: 2,
            l: 2,
            d: 4,
            centre_spread: 10.0,
            gamma_std: (1.0, 3.0),
            a_std: 1.0,
            b_std: 1.0,
            sigma2: (0.5, 1.5),
        }
    }
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn random_model(spec: &RandomModelSpec, seed: u64) -> GllimModel {
    let mut rng = seed::rng(seed, seed::SYNTH, 0);
    let (k, l, d) = (spec.k, spec.l, spec.d);
    let raw_pi: Vec<f64> = (0..k).map(|_| rng.gen_range(0.5..1.5)).collect();
    let total: f64 = raw_pi.iter().sum();
    let components = raw_pi
        .iter()
        .map(|p| {
            let c = DVector::from_fn(l, |_, _| rng.gen_range(-spec.centre_spread..=spec.centre_spread));
            let q = DMatrix::from_fn(l, l, |_, _| normal(&mut rng)).qr().q();
            let s = DVector::from_fn(l, |_, _| rng.gen_range(spec.gamma_std.0..=spec.gamma_std.1).powi(2));
            let gamma = &q * DMatrix::from_diagonal(&s) * q.transpose();
            let gamma = (&gamma + gamma.transpose()) * 0.5;
            Component {
                pi: p / total,
                c,
                gamma,
                a: DMatrix::from_fn(d, l, |_, _| spec.a_std * normal(&mut rng)),
                b: DVector::from_fn(d, |_, _| spec.b_std * normal(&mut rng)),
            }
        })
        .collect();
    let sigma2 = DVector::from_fn(d, |_, _| rng.gen_range(spec.sigma2.0..=spec.sigma2.1));
    GllimModel {
        components,
        sigma2,
        prior_mode: PriorMode::Free,
    }
}

impl GllimModel {
    /// Draw `n` joint samples `(x, y)` from the generative model.
    pub fn sample(&self, n: usize, seed: u64) -> TrainingSet {
        let mut rng = seed::rng(seed, seed::SYNTH, 1);
        let (l, d) = (self.l(), self.d());
        let chols: Vec<DMatrix<f64>> = self
            .components
            .iter()
            .map(|c| {
                c.gamma
                    .clone()
                    .cholesky()
                    .expect("component covariance is positive definite")
                    .unpack()
            })
            .collect();
        let sd = self.sigma2.map(f64::sqrt);
        let mut x = DMatrix::zeros(n, l);
        let mut y = DMatrix::zeros(n, d);
        for i in 0..n {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let k = self
                .components
                .iter()
                .position(|c| {
                    acc += c.pi;
                    u < acc
                })
                .unwrap_or(self.k() - 1);
            let c = &self.components[k];
            let z = DVector::from_fn(l, |_, _| normal(&mut rng));
            let xi = &c.c + &chols[k] * z;
            let mean = &c.a * &xi + &c.b;
            for dd in 0..d {
                y[(i, dd)] = mean[dd] + sd[dd] * normal(&mut rng);
            }
            x.row_mut(i).copy_from(&xi.transpose());
        }
        TrainingSet {
            x,
            y,
            metadata: serde_json::json!({ "source": "model sample", "seed": seed }),
        }
    }
}

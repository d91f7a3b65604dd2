use nalgebra::{DMatrix, DVector};

use super::GllimModel;
use crate::error::{Error, Result};
use crate::numeric::{logsumexp, spd_inverse_logdet, KahanSum, LN_2PI};

/// Parameters of `p(x | y, Z = k) = N(A*_k y + b*_k, Σ*_k)` and of the
/// marginal `p(y | Z = k) = N(c*_k, Γ*_k)`.
///
/// `Γ*_k = Σ + A_k Γ_k A_kᵀ` is D×D and never formed; its inverse and
/// log-determinant follow from the Woodbury identity.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseComponent {
    pub log_pi: f64,
    pub c_star: DVector<f64>,
    /// L×D.
    pub a_star: DMatrix<f64>,
    pub b_star: DVector<f64>,
    /// L×L.
    pub sigma_star: DMatrix<f64>,
    /// `A_kᵀ Σ⁻¹`, L×D.
    at_sinv: DMatrix<f64>,
    log_det_gamma_star: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InverseParams {
    pub components: Vec<InverseComponent>,
    inv_sigma2: DVector<f64>,
}

pub fn inverse_density_params(model: &GllimModel) -> Result<InverseParams> {
    model.validate()?;
    let inv_sigma2 = model.sigma2.map(|s| 1.0 / s);
    let log_det_sigma: f64 = model.sigma2.iter().map(|s| s.ln()).sum();
    let mut components = Vec::with_capacity(model.k());
    for (i, c) in model.components.iter().enumerate() {
        let (gamma_inv, log_det_gamma) = spd_inverse_logdet(&c.gamma, &format!("Gamma_{i}"))?;
        let mut at_sinv = c.a.transpose();
        for (mut col, w) in at_sinv.column_iter_mut().zip(inv_sigma2.iter()) {
            col *= *w;
        }
        let precision = &gamma_inv + &at_sinv * &c.a;
        let (sigma_star, neg_log_det) = spd_inverse_logdet(&precision, &format!("Sigma*_{i}"))?;
        let a_star = &sigma_star * &at_sinv;
        let b_star = &sigma_star * (&gamma_inv * &c.c - &at_sinv * &c.b);
        components.push(InverseComponent {
            log_pi: c.pi.ln(),
            c_star: &c.a * &c.c + &c.b,
            a_star,
            b_star,
            sigma_star,
            at_sinv,
            log_det_gamma_star: log_det_sigma + log_det_gamma + neg_log_det,
        });
    }
    Ok(InverseParams {
        components,
        inv_sigma2,
    })
}

impl InverseParams {
    pub fn d(&self) -> usize {
        self.inv_sigma2.len()
    }

    pub fn l(&self) -> usize {
        self.components[0].b_star.len()
    }

    fn check(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.d() {
            return Err(Error::DimensionMismatch(format!(
                "feature vector has length {}, model expects D = {}",
                y.len(),
                self.d()
            )));
        }
        Ok(())
    }

    /// `log π_k + log N(y; c*_k, Γ*_k)` per component.
    pub fn log_joint(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check(y)?;
        let d = self.d() as f64;
        Ok(self
            .components
            .iter()
            .map(|c| {
                let e = DVector::from_fn(y.len(), |i, _| y[i] - c.c_star[i]);
                let mut q = KahanSum::new();
                for (ei, wi) in e.iter().zip(self.inv_sigma2.iter()) {
                    q.add(ei * ei * wi);
                }
                let u = &c.at_sinv * &e;
                let quad = q.value() - u.dot(&(&c.sigma_star * &u));
                c.log_pi - 0.5 * (d * LN_2PI + c.log_det_gamma_star + quad)
            })
            .collect())
    }

    /// Normalized weights `w_k(y)`.
    pub fn weights(&self, y: &[f64]) -> Result<Vec<f64>> {
        let lj = self.log_joint(y)?;
        let lse = logsumexp(&lj);
        Ok(lj.iter().map(|v| (v - lse).exp()).collect())
    }

    /// Per-component conditional means `A*_k y + b*_k`.
    pub fn conditional_means(&self, y: &[f64]) -> Result<Vec<DVector<f64>>> {
        self.check(y)?;
        let yv = DVector::from_column_slice(y);
        Ok(self
            .components
            .iter()
            .map(|c| &c.a_star * &yv + &c.b_star)
            .collect())
    }

    pub fn predict(&self, y: &[f64]) -> Result<Vec<f64>> {
        let w = self.weights(y)?;
        let means = self.conditional_means(y)?;
        let mut out = DVector::zeros(self.l());
        for (wk, m) in w.iter().zip(&means) {
            out += m * *wk;
        }
        Ok(out.as_slice().to_vec())
    }
}

/// `Σ_k w_k(y) (A*_k y + b*_k)`.
pub fn inverse_predict(model: &GllimModel, y: &[f64]) -> Result<Vec<f64>> {
    inverse_density_params(model)?.predict(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gllim::synthetic::{random_model, RandomModelSpec};
    use crate::gllim::{Component, PriorMode};

    fn dense_gaussian_logpdf(y: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
        let (inv, logdet) = spd_inverse_logdet(cov, "cov").unwrap();
        let e = y - mean;
        -0.5 * (y.len() as f64 * LN_2PI + logdet + e.dot(&(&inv * &e)))
    }

    #[test]
    fn uninformative_map_returns_prior() {
        let mut m = random_model(&RandomModelSpec::default(), 1);
        for c in &mut m.components {
            c.a.fill(0.0);
        }
        let p = inverse_density_params(&m).unwrap();
        for (ic, c) in p.components.iter().zip(&m.components) {
            assert!(ic.a_star.iter().all(|&v| v == 0.0));
            assert!((&ic.b_star - &c.c).amax() < 1e-12);
            assert!((&ic.sigma_star - &c.gamma).amax() < 1e-12);
        }
    }

    #[test]
    fn scalar_conditioning() {
        let (c, g, a, b, s) = (1.5, 2.0, 0.7, -0.3, 0.4);
        let m = GllimModel {
            components: vec![Component {
                pi: 1.0,
                c: DVector::from_element(1, c),
                gamma: DMatrix::from_element(1, 1, g),
                a: DMatrix::from_element(1, 1, a),
                b: DVector::from_element(1, b),
            }],
            sigma2: DVector::from_element(1, s),
            prior_mode: PriorMode::Free,
        };
        let p = inverse_density_params(&m).unwrap();
        let ic = &p.components[0];
        let var = 1.0 / (1.0 / g + a * a / s);
        assert!((ic.sigma_star[(0, 0)] - var).abs() < 1e-14);
        assert!((ic.a_star[(0, 0)] - var * a / s).abs() < 1e-14);
        assert!((ic.b_star[0] - var * (c / g - a * b / s)).abs() < 1e-14);
        assert!((ic.c_star[0] - (a * c + b)).abs() < 1e-14);
        let y = 0.9;
        let lj = p.log_joint(&[y]).unwrap()[0];
        let gs = s + a * a * g;
        let expect = -0.5 * (LN_2PI + gs.ln() + (y - a * c - b).powi(2) / gs);
        assert!((lj - expect).abs() < 1e-13);
    }

    #[test]
    fn noiseless_limit_inverts_the_map() {
        let spec = RandomModelSpec {
            k: 2,
            l: 2,
            d: 5,
            sigma2: (1e-10, 1e-10),
            ..RandomModelSpec::default()
        };
        let m = random_model(&spec, 4);
        let p = inverse_density_params(&m).unwrap();
        let x = DVector::from_vec(vec![2.5, -1.0]);
        for (ic, c) in p.components.iter().zip(&m.components) {
            let y = &c.a * &x + &c.b;
            let back = &ic.a_star * y + &ic.b_star;
            assert!((back - &x).amax() < 1e-6);
        }
    }

    #[test]
    fn matches_dense_bayes_inversion() {
        for seed in 0..20 {
            let k = 1 + (seed as usize % 3);
            let l = 1 + (seed as usize % 2);
            let d = 2 + (seed as usize % 3);
            let spec = RandomModelSpec {
                k,
                l,
                d,
                a_std: 0.5,
                ..RandomModelSpec::default()
            };
            let m = random_model(&spec, seed);
            let p = inverse_density_params(&m).unwrap();
            let y = m.sample(1, seed + 50).y_row(0);
            let dense_lj: Vec<f64> = m
                .components
                .iter()
                .map(|c| {
                    let gs = DMatrix::from_diagonal(&m.sigma2) + &c.a * &c.gamma * c.a.transpose();
                    c.pi.ln() + dense_gaussian_logpdf(&y, &(&c.a * &c.c + &c.b), &gs)
                })
                .collect();
            let lse = logsumexp(&dense_lj);
            let w = p.weights(y.as_slice()).unwrap();
            let means = p.conditional_means(y.as_slice()).unwrap();
            for (i, c) in m.components.iter().enumerate() {
                assert!((w[i] - (dense_lj[i] - lse).exp()).abs() < 1e-8);
                let gs = DMatrix::from_diagonal(&m.sigma2) + &c.a * &c.gamma * c.a.transpose();
                let gain = &c.gamma * c.a.transpose() * gs.clone().try_inverse().unwrap();
                let mean = &c.c + &gain * (&y - (&c.a * &c.c + &c.b));
                let cov = &c.gamma - &gain * &c.a * &c.gamma;
                assert!((&means[i] - mean).amax() < 1e-8);
                assert!((&p.components[i].sigma_star - cov).amax() < 1e-8);
            }
        }
    }

    #[test]
    fn single_component_prediction_is_affine() {
        let spec = RandomModelSpec {
            k: 1,
            ..RandomModelSpec::default()
        };
        let m = random_model(&spec, 9);
        let p = inverse_density_params(&m).unwrap();
        let y = [0.3, -1.2, 2.0, 0.1];
        let expect = &p.components[0].a_star * DVector::from_column_slice(&y) + &p.components[0].b_star;
        assert_eq!(inverse_predict(&m, &y).unwrap(), expect.as_slice().to_vec());
    }

    #[test]
    fn separated_regions_select_their_map() {
        let spec = RandomModelSpec {
            k: 3,
            l: 2,
            d: 6,
            centre_spread: 1.0,
            gamma_std: (0.5, 0.5),
            a_std: 1.0,
            b_std: 0.0,
            sigma2: (1e-6, 1e-6),
        };
        let mut m = random_model(&spec, 12);
        for (i, c) in m.components.iter_mut().enumerate() {
            c.c[0] = 100.0 * i as f64;
            c.b[i] = 1000.0 * (i + 1) as f64;
        }
        let p = inverse_density_params(&m).unwrap();
        for (i, c) in m.components.iter().enumerate() {
            let y: Vec<f64> = (&c.a * &c.c + &c.b).as_slice().to_vec();
            let own = &p.components[i].a_star * DVector::from_column_slice(&y) + &p.components[i].b_star;
            let got = p.predict(&y).unwrap();
            assert!((DVector::from_vec(got) - own).amax() < 1e-6);
            let fwd = m.forward_predict(c.c.as_slice()).unwrap();
            assert!((DVector::from_vec(fwd) - (&c.a * &c.c + &c.b)).amax() < 1e-6);
        }
    }

    #[test]
    fn forward_then_inverse_round_trip() {
        let spec = RandomModelSpec {
            k: 1,
            l: 2,
            d: 8,
            sigma2: (1e-6, 1e-6),
            ..RandomModelSpec::default()
        };
        let m = random_model(&spec, 30);
        let p = inverse_density_params(&m).unwrap();
        for x in [[0.0, 0.0], [3.0, -2.0], [-7.5, 4.25]] {
            let y = m.forward_predict(&x).unwrap();
            let back = p.predict(&y).unwrap();
            assert!((back[0] - x[0]).abs() < 0.01 && (back[1] - x[1]).abs() < 0.01);
        }
    }
}

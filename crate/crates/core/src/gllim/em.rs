use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Component, GllimModel, PriorMode, TrainingSet};
use crate::error::{Error, Result};
use crate::numeric::{floor_eigenvalues, logsumexp, spd_inverse_logdet, symmetrize, KahanSum, LN_2PI};
use crate::seed;

const KMEANS_ATTEMPTS: usize = 10;
const LLOYD_MAX_ITER: usize = 100;
const SQ_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iter: usize,
    pub rel_tol: f64,
    pub prior_mode: PriorMode,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            rel_tol: 1e-6,
            prior_mode: PriorMode::Free,
            seed: 0,
        }
    }
}

/// Posterior component memberships `r_kn` (N×K) and the log-likelihood of
/// the parameters they were computed from.
#[derive(Debug, Clone)]
pub struct Responsibilities {
    pub r: DMatrix<f64>,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    /// Log-likelihood after initialization and after every M-step.
    pub log_likelihood: Vec<f64>,
    /// Component count alongside each log-likelihood entry.
    pub num_components: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

impl FitTrace {
    /// Iterations whose M-step removed components. EM monotonicity only
    /// applies across the remaining transitions.
    pub fn pruning_steps(&self) -> Vec<usize> {
        (1..self.num_components.len())
            .filter(|&i| self.num_components[i] < self.num_components[i - 1])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutput {
    pub model: GllimModel,
    pub trace: FitTrace,
}

/// Data-derived covariance floors and the feature mean used for centring.
struct DataStats {
    gamma_floor: f64,
    sigma2_floor: f64,
    y_mean: DVector<f64>,
}

impl DataStats {
    fn new(train: &TrainingSet) -> Self {
        let n = train.n() as f64;
        let var = |col: nalgebra::DVectorView<f64>| {
            let mean = col.sum() / n;
            (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n, mean)
        };
        let trace_x: f64 = (0..train.l()).map(|j| var(train.x.column(j)).0).sum();
        let mut y_mean = DVector::zeros(train.d());
        let mut var_y = 0.0;
        for d in 0..train.d() {
            let (v, m) = var(train.y.column(d));
            y_mean[d] = m;
            var_y += v;
        }
        let positive = |v: f64| if v > 0.0 { v } else { 1.0 };
        Self {
            gamma_floor: 1e-8 * positive(trace_x) / train.l() as f64,
            sigma2_floor: 1e-8 * positive(var_y / train.d() as f64),
            y_mean,
        }
    }
}

fn check_dims(model: &GllimModel, train: &TrainingSet) -> Result<()> {
    if model.l() != train.l() || model.d() != train.d() {
        return Err(Error::DimensionMismatch(format!(
            "model is L={} D={}, training set is L={} D={}",
            model.l(),
            model.d(),
            train.l(),
            train.d()
        )));
    }
    Ok(())
}

/// `r_kn ∝ π_k N(x_n; c_k, Γ_k) N(y_n; A_k x_n + b_k, Σ)`, normalized in the
/// log domain.
///
/// The feature residual is expanded around a model-derived reference so the
/// `N×D` work reduces to one matrix product against all stacked `[A_k b_k]`.
pub fn e_step(model: &GllimModel, train: &TrainingSet) -> Result<Responsibilities> {
    check_dims(model, train)?;
    let (n, k, l, d) = (train.n(), model.k(), model.l(), model.d());
    let lp1 = l + 1;

    let mut reference = DVector::zeros(d);
    for c in &model.components {
        reference += (&c.a * &c.c + &c.b) * c.pi;
    }
    let inv_s2 = model.sigma2.map(|s| 1.0 / s);
    let log_det_sigma: f64 = model.sigma2.iter().map(|s| s.ln()).sum();

    let mut bmat = DMatrix::zeros(d, k * lp1);
    let mut quad = Vec::with_capacity(k);
    let mut gamma_inv = Vec::with_capacity(k);
    let mut consts = Vec::with_capacity(k);
    for (i, c) in model.components.iter().enumerate() {
        let mut at = DMatrix::zeros(d, lp1);
        at.columns_mut(0, l).copy_from(&c.a);
        at.column_mut(l).copy_from(&(&c.b - &reference));
        for j in 0..lp1 {
            bmat.column_mut(i * lp1 + j)
                .copy_from(&at.column(j).component_mul(&inv_s2));
        }
        quad.push(symmetrize(at.tr_mul(&bmat.columns(i * lp1, lp1))));
        let (ginv, logdet) = spd_inverse_logdet(&c.gamma, &format!("Gamma_{i}"))?;
        gamma_inv.push(ginv);
        consts.push(
            c.pi.ln()
                - 0.5 * (l as f64 * LN_2PI + logdet)
                - 0.5 * (d as f64 * LN_2PI + log_det_sigma),
        );
    }

    let mut g = &train.y * &bmat;
    let shift = bmat.tr_mul(&reference);
    for j in 0..k * lp1 {
        g.column_mut(j).add_scalar_mut(-shift[j]);
    }
    let mut ysq = DVector::<f64>::zeros(n);
    for dd in 0..d {
        let (rf, w) = (reference[dd], inv_s2[dd]);
        for (acc, v) in ysq.iter_mut().zip(train.y.column(dd).iter()) {
            let e = v - rf;
            *acc += e * e * w;
        }
    }

    let mut r = DMatrix::zeros(n, k);
    let mut ll = KahanSum::new();
    let mut logj = vec![0.0; k];
    let mut xt = vec![1.0; lp1];
    let mut dx = vec![0.0; l];
    for nn in 0..n {
        for j in 0..l {
            xt[j] = train.x[(nn, j)];
        }
        for (i, c) in model.components.iter().enumerate() {
            let mut cross = 0.0;
            for j in 0..lp1 {
                cross += g[(nn, i * lp1 + j)] * xt[j];
            }
            let qm = &quad[i];
            let mut quad_y = 0.0;
            for a in 0..lp1 {
                for b in 0..lp1 {
                    quad_y += xt[a] * qm[(a, b)] * xt[b];
                }
            }
            for j in 0..l {
                dx[j] = xt[j] - c.c[j];
            }
            let gi = &gamma_inv[i];
            let mut quad_x = 0.0;
            for a in 0..l {
                for b in 0..l {
                    quad_x += dx[a] * gi[(a, b)] * dx[b];
                }
            }
            logj[i] = consts[i] - 0.5 * quad_x - 0.5 * (ysq[nn] - 2.0 * cross + quad_y);
        }
        let lse = logsumexp(&logj);
        if !lse.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "log-likelihood of training point {nn} is not finite"
            )));
        }
        ll.add(lse);
        for i in 0..k {
            r[(nn, i)] = (logj[i] - lse).exp();
        }
    }
    Ok(Responsibilities {
        r,
        log_likelihood: ll.value(),
    })
}

/// `Σ_n log Σ_k π_k N(x_n; c_k, Γ_k) N(y_n; A_k x_n + b_k, Σ)`.
pub fn log_likelihood(model: &GllimModel, train: &TrainingSet) -> Result<f64> {
    Ok(e_step(model, train)?.log_likelihood)
}

/// Closed-form maximization of the expected complete-data log-likelihood.
/// Components with effective mass below `L + 1` are removed first.
pub fn m_step(resp: &Responsibilities, train: &TrainingSet, prior_mode: PriorMode) -> Result<GllimModel> {
    m_step_with(&resp.r, train, prior_mode, &DataStats::new(train))
}

fn m_step_with(
    r_in: &DMatrix<f64>,
    train: &TrainingSet,
    prior_mode: PriorMode,
    stats: &DataStats,
) -> Result<GllimModel> {
    let (n, l, d) = (train.n(), train.l(), train.d());
    if r_in.nrows() != n || r_in.ncols() == 0 {
        return Err(Error::DimensionMismatch(format!(
            "responsibilities are {}x{}, training set has {n} rows",
            r_in.nrows(),
            r_in.ncols()
        )));
    }
    let lp1 = l + 1;
    let column_mass = |r: &DMatrix<f64>, i: usize| {
        let mut s = KahanSum::new();
        r.column(i).iter().for_each(|&v| s.add(v));
        s.value()
    };
    let keep: Vec<usize> = (0..r_in.ncols())
        .filter(|&i| column_mass(r_in, i) >= lp1 as f64)
        .collect();
    if keep.is_empty() {
        return Err(Error::TrainingCollapsed(format!(
            "every component has fewer than {lp1} effective points"
        )));
    }
    let k = keep.len();
    let mut r = r_in.select_columns(&keep);
    if k < r_in.ncols() {
        for mut row in r.row_iter_mut() {
            let s: f64 = row.sum();
            if s > 0.0 {
                row /= s;
            } else {
                row.fill(1.0 / k as f64);
            }
        }
    }
    let mass: Vec<f64> = (0..k).map(|i| column_mass(&r, i)).collect();

    let mut xbar = Vec::with_capacity(k);
    let mut sxx = Vec::with_capacity(k);
    for i in 0..k {
        let w = r.column(i);
        let mut xb = DVector::zeros(l);
        for nn in 0..n {
            for j in 0..l {
                xb[j] += w[nn] * train.x[(nn, j)];
            }
        }
        xb /= mass[i];
        let mut s = DMatrix::zeros(l, l);
        for nn in 0..n {
            for a in 0..l {
                let da = train.x[(nn, a)] - xb[a];
                for b in 0..=a {
                    s[(a, b)] += w[nn] * da * (train.x[(nn, b)] - xb[b]);
                }
            }
        }
        for a in 0..l {
            for b in 0..a {
                s[(b, a)] = s[(a, b)];
            }
        }
        xbar.push(xb);
        sxx.push(s);
    }

    // Weighted first moments of Y against centred [x; 1], one product for all k.
    let mut wt = DMatrix::zeros(k * lp1, n);
    for i in 0..k {
        for nn in 0..n {
            let w = r[(nn, i)];
            for j in 0..l {
                wt[(i * lp1 + j, nn)] = w * (train.x[(nn, j)] - xbar[i][j]);
            }
            wt[(i * lp1 + l, nn)] = w;
        }
    }
    let p = &wt * &train.y;
    let syy = weighted_centered_squares(&r, &train.y, &stats.y_mean);

    let mut resid_sum = DVector::<f64>::zeros(d);
    let mut components = Vec::with_capacity(k);
    for i in 0..k {
        let m = mass[i];
        let syx = DMatrix::from_fn(d, l, |dd, j| p[(i * lp1 + j, dd)]);
        let a = &syx * sym_pinv(&sxx[i]);
        let mut b = DVector::zeros(d);
        for dd in 0..d {
            let yc = (p[(i * lp1 + l, dd)] - m * stats.y_mean[dd]) / m;
            let ad = a.row(dd);
            let mut a_xb = 0.0;
            let mut a_syx = 0.0;
            let mut a_s_a = 0.0;
            for j in 0..l {
                a_xb += ad[j] * xbar[i][j];
                a_syx += ad[j] * syx[(dd, j)];
                for jj in 0..l {
                    a_s_a += ad[j] * sxx[i][(j, jj)] * ad[jj];
                }
            }
            b[dd] = stats.y_mean[dd] + yc - a_xb;
            let resid = syy[(i, dd)] - m * yc * yc - 2.0 * a_syx + a_s_a;
            resid_sum[dd] += resid.max(0.0);
        }
        let gamma = floor_eigenvalues(&(&sxx[i] / m), stats.gamma_floor);
        let pi = match prior_mode {
            PriorMode::Free => m / n as f64,
            PriorMode::Fixed => 1.0 / k as f64,
        };
        components.push(Component {
            pi,
            c: xbar[i].clone(),
            gamma,
            a,
            b,
        });
    }
    if prior_mode == PriorMode::Free {
        let total: f64 = components.iter().map(|c| c.pi).sum();
        components.iter_mut().for_each(|c| c.pi /= total);
    }
    let sigma2 = resid_sum.map(|s| (s / n as f64).max(stats.sigma2_floor));
    Ok(GllimModel {
        components,
        sigma2,
        prior_mode,
    })
}

/// `S[k, d] = Σ_n r_nk (y_nd − ȳ_d)²`, in column blocks.
fn weighted_centered_squares(r: &DMatrix<f64>, y: &DMatrix<f64>, y_mean: &DVector<f64>) -> DMatrix<f64> {
    let (n, d) = y.shape();
    let rt = r.transpose();
    let mut out = DMatrix::zeros(r.ncols(), d);
    let mut start = 0;
    while start < d {
        let width = SQ_CHUNK.min(d - start);
        let block = DMatrix::from_fn(n, width, |nn, j| {
            let e = y[(nn, start + j)] - y_mean[start + j];
            e * e
        });
        out.columns_mut(start, width).copy_from(&(&rt * block));
        start += width;
    }
    out
}

/// Moore-Penrose inverse of a small symmetric positive-semidefinite matrix.
fn sym_pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let tol = max * m.nrows() as f64 * f64::EPSILON * 16.0;
    let inv = eig.eigenvalues.map(|v| if v > tol { 1.0 / v } else { 0.0 });
    let q = &eig.eigenvectors;
    symmetrize(q * DMatrix::from_diagonal(&inv) * q.transpose())
}

fn sq_dist(x: &DMatrix<f64>, n: usize, c: &[f64]) -> f64 {
    c.iter().enumerate().map(|(j, cj)| (x[(n, j)] - cj).powi(2)).sum()
}

fn kmeans_pp<R: Rng>(x: &DMatrix<f64>, k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = x.nrows();
    let row = |i: usize| x.row(i).iter().copied().collect::<Vec<_>>();
    let mut centers = vec![row(rng.gen_range(0..n))];
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(x, i, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            dist.iter()
                .position(|&v| {
                    acc += v;
                    acc > target
                })
                .unwrap_or(n - 1)
        } else {
            rng.gen_range(0..n)
        };
        let c = row(pick);
        for (i, dv) in dist.iter_mut().enumerate() {
            *dv = dv.min(sq_dist(x, i, &c));
        }
        centers.push(c);
    }
    centers
}

/// Lloyd iterations from the given centres; returns hard labels.
fn lloyd(x: &DMatrix<f64>, mut centers: Vec<Vec<f64>>) -> Vec<usize> {
    let (n, l) = x.shape();
    let k = centers.len();
    let mut labels = vec![usize::MAX; n];
    for _ in 0..LLOYD_MAX_ITER {
        let mut changed = false;
        for (i, lab) in labels.iter_mut().enumerate() {
            let best = (0..k)
                .map(|c| (c, sq_dist(x, i, &centers[c])))
                .fold((0, f64::INFINITY), |acc, v| if v.1 < acc.1 { v } else { acc })
                .0;
            if *lab != best {
                *lab = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; l]; k];
        let mut counts = vec![0usize; k];
        for (i, &lab) in labels.iter().enumerate() {
            counts[lab] += 1;
            for j in 0..l {
                sums[lab][j] += x[(i, j)];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    labels
}

/// k-means++ on the directions, hard assignment, then one M-step.
pub fn init_params(train: &TrainingSet, k: usize, seed: u64, prior_mode: PriorMode) -> Result<GllimModel> {
    init_with(train, k, seed, prior_mode, &DataStats::new(train))
}

fn init_with(
    train: &TrainingSet,
    k: usize,
    seed: u64,
    prior_mode: PriorMode,
    stats: &DataStats,
) -> Result<GllimModel> {
    let (n, l) = (train.n(), train.l());
    if k == 0 {
        return Err(Error::InvalidArgument("K must be positive".into()));
    }
    if n < k * (l + 1) {
        return Err(Error::InvalidArgument(format!(
            "N = {n} is below K(L+1) = {}",
            k * (l + 1)
        )));
    }
    for attempt in 0..KMEANS_ATTEMPTS {
        let mut rng = seed::rng(seed, seed::KMEANS, attempt as u64);
        let labels = lloyd(&train.x, kmeans_pp(&train.x, k, &mut rng));
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&c| counts[c] += 1);
        if counts.contains(&0) {
            continue;
        }
        let r = DMatrix::from_fn(n, k, |i, c| if labels[i] == c { 1.0 } else { 0.0 });
        return m_step_with(&r, train, prior_mode, stats);
    }
    Err(Error::EmptyCluster {
        attempts: KMEANS_ATTEMPTS,
    })
}

/// EM from a k-means++ start until the relative log-likelihood gain drops
/// below `rel_tol` or `max_iter` M-steps have run.
pub fn fit(train: &TrainingSet, k: usize, config: &FitConfig) -> Result<FitOutput> {
    let stats = DataStats::new(train);
    let mut model = init_with(train, k, config.seed, config.prior_mode, &stats)?;
    let mut resp = e_step(&model, train)?;
    let mut trace = FitTrace {
        log_likelihood: vec![resp.log_likelihood],
        num_components: vec![model.k()],
        ..FitTrace::default()
    };
    for it in 0..config.max_iter {
        let next = m_step_with(&resp.r, train, config.prior_mode, &stats)?;
        let next_resp = e_step(&next, train)?;
        let prev = resp.log_likelihood;
        let cur = next_resp.log_likelihood;
        model = next;
        resp = next_resp;
        trace.log_likelihood.push(cur);
        trace.num_components.push(model.k());
        trace.iterations = it + 1;
        let pruned = trace.num_components[it + 1] < trace.num_components[it];
        if !pruned && (cur - prev) < config.rel_tol * prev.abs() {
            trace.converged = true;
            break;
        }
    }
    Ok(FitOutput { model, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gllim::synthetic::{random_model, RandomModelSpec};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gauss_logpdf_diag(y: &DVector<f64>, mean: &DVector<f64>, var: &DVector<f64>) -> f64 {
        let mut s = KahanSum::new();
        for d in 0..y.len() {
            s.add(-0.5 * (LN_2PI + var[d].ln() + (y[d] - mean[d]).powi(2) / var[d]));
        }
        s.value()
    }

    /// Direct Bayes evaluation, one density at a time.
    fn direct_joint(model: &GllimModel, x: &DVector<f64>, y: &DVector<f64>) -> Vec<f64> {
        model
            .components
            .iter()
            .map(|c| {
                let (inv, logdet) = spd_inverse_logdet(&c.gamma, "g").unwrap();
                let diff = x - &c.c;
                let lx = -0.5 * (x.len() as f64 * LN_2PI + logdet + diff.dot(&(&inv * &diff)));
                c.pi.ln() + lx + gauss_logpdf_diag(y, &(&c.a * x + &c.b), &model.sigma2)
            })
            .collect()
    }

    fn small_instance(seed: u64, k: usize, n: usize) -> (GllimModel, TrainingSet) {
        let spec = RandomModelSpec {
            k,
            l: 2,
            d: 4,
            ..RandomModelSpec::default()
        };
        let model = random_model(&spec, seed);
        let train = model.sample(n, seed + 100);
        (model, train)
    }

    #[test]
    fn e_step_matches_direct_bayes() {
        let (model, train) = small_instance(3, 3, 5);
        let resp = e_step(&model, &train).unwrap();
        let mut ll = 0.0;
        for n in 0..5 {
            let lj = direct_joint(&model, &train.x_row(n), &train.y_row(n));
            let lse = logsumexp(&lj);
            ll += lse;
            for k in 0..3 {
                assert!((resp.r[(n, k)] - (lj[k] - lse).exp()).abs() < 1e-10);
            }
            assert!((resp.r.row(n).sum() - 1.0).abs() < 1e-10);
        }
        assert_relative_eq!(resp.log_likelihood, ll, max_relative = 1e-10);
    }

    #[test]
    fn e_step_trivial_cases() {
        let (mut model, train) = small_instance(1, 1, 10);
        let r = e_step(&model, &train).unwrap();
        assert!(r.r.iter().all(|&v| v == 1.0));
        let mut twin = model.components[0].clone();
        twin.pi = 0.5;
        model.components[0].pi = 0.5;
        model.components.push(twin);
        let r = e_step(&model, &train).unwrap();
        assert!(r.r.iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn log_likelihood_of_point_at_mean() {
        let model = GllimModel {
            components: vec![Component {
                pi: 1.0,
                c: DVector::from_vec(vec![1.0, 2.0]),
                gamma: DMatrix::identity(2, 2),
                a: DMatrix::zeros(3, 2),
                b: DVector::from_vec(vec![0.5, 0.5, 0.5]),
            }],
            sigma2: DVector::from_element(3, 1.0),
            prior_mode: PriorMode::Free,
        };
        let train = TrainingSet::from_rows(
            &[vec![1.0, 2.0]],
            &[vec![0.5, 0.5, 0.5]],
            serde_json::Value::Null,
        )
        .unwrap();
        let ll = log_likelihood(&model, &train).unwrap();
        assert!((ll + 2.5 * LN_2PI).abs() < 1e-13);
    }

    #[test]
    fn duplicated_data_doubles_log_likelihood() {
        let (model, train) = small_instance(5, 2, 4);
        let ll = log_likelihood(&model, &train).unwrap();
        let x = DMatrix::from_fn(8, 2, |i, j| train.x[(i % 4, j)]);
        let y = DMatrix::from_fn(8, 4, |i, j| train.y[(i % 4, j)]);
        let doubled = TrainingSet::new(x, y, serde_json::Value::Null).unwrap();
        assert_relative_eq!(log_likelihood(&model, &doubled).unwrap(), 2.0 * ll, max_relative = 1e-12);
    }

    #[test]
    fn concentrated_responsibilities_give_ordinary_least_squares() {
        let (_, train) = small_instance(2, 1, 40);
        let mut r = DMatrix::zeros(40, 2);
        r.column_mut(1).fill(1.0);
        let resp = Responsibilities {
            r,
            log_likelihood: 0.0,
        };
        let model = m_step(&resp, &train, PriorMode::Free).unwrap();
        assert_eq!(model.k(), 1);
        let design = DMatrix::from_fn(40, 3, |i, j| if j < 2 { train.x[(i, j)] } else { 1.0 });
        let coef = design.clone().svd(true, true).solve(&train.y, 1e-14).unwrap();
        let c = &model.components[0];
        for d in 0..4 {
            for j in 0..2 {
                assert!((c.a[(d, j)] - coef[(j, d)]).abs() < 1e-9);
            }
            assert!((c.b[d] - coef[(2, d)]).abs() < 1e-9);
        }
    }

    #[test]
    fn noiseless_linear_data_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a: DMatrix<f64> = DMatrix::from_fn(5, 2, |_, _| StandardNormal.sample(&mut rng));
        let b: DVector<f64> = DVector::from_fn(5, |_, _| StandardNormal.sample(&mut rng));
        let xs: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.gen_range(-10.0..10.0), rng.gen_range(-5.0..5.0)]).collect();
        let ys: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| {
                let xv = DVector::<f64>::from_column_slice(x);
                let y: DVector<f64> = &a * xv + &b;
                y.as_slice().to_vec()
            })
            .collect();
        let train = TrainingSet::from_rows(&xs, &ys, serde_json::Value::Null).unwrap();
        let out = fit(&train, 1, &FitConfig::default()).unwrap();
        let c = &out.model.components[0];
        assert!((&c.a - &a).amax() < 1e-8);
        assert!((&c.b - &b).amax() < 1e-8);
        let floor = DataStats::new(&train).sigma2_floor;
        assert!(out.model.sigma2.iter().all(|&s| s == floor));
    }

    #[test]
    fn uniform_responsibilities_give_identical_maps() {
        let (_, train) = small_instance(4, 2, 30);
        let resp = Responsibilities {
            r: DMatrix::from_element(30, 3, 1.0 / 3.0),
            log_likelihood: 0.0,
        };
        let m = m_step(&resp, &train, PriorMode::Free).unwrap();
        assert_eq!(m.components[0].a, m.components[1].a);
        assert_eq!(m.components[1].b, m.components[2].b);
        for c in &m.components {
            assert!((&c.gamma - c.gamma.transpose()).amax() < 1e-12);
        }
    }

    #[test]
    fn small_components_are_pruned() {
        let (_, train) = small_instance(4, 2, 30);
        let mut r = DMatrix::zeros(30, 2);
        r.column_mut(0).fill(1.0);
        r[(0, 0)] = 0.0;
        r[(0, 1)] = 1.0;
        let m = m_step(&Responsibilities { r, log_likelihood: 0.0 }, &train, PriorMode::Free).unwrap();
        assert_eq!(m.k(), 1);
        assert_eq!(m.components[0].pi, 1.0);
        let none = Responsibilities {
            r: DMatrix::from_element(2, 1, 1.0),
            log_likelihood: 0.0,
        };
        let tiny = TrainingSet::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]], &[vec![1.0], vec![2.0]], serde_json::Value::Null).unwrap();
        assert!(matches!(m_step(&none, &tiny, PriorMode::Free), Err(Error::TrainingCollapsed(_))));
    }

    #[test]
    fn init_single_cluster_is_global_fit() {
        let (_, train) = small_instance(6, 2, 50);
        let m = init_params(&train, 1, 0, PriorMode::Free).unwrap();
        let mean: Vec<f64> = (0..2).map(|j| train.x.column(j).mean()).collect();
        assert!((m.components[0].c[0] - mean[0]).abs() < 1e-12);
        assert!((m.components[0].c[1] - mean[1]).abs() < 1e-12);
        let again = init_params(&train, 1, 0, PriorMode::Free).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn init_separates_blobs() {
        let pts = [
            (0.0, 0.0), (1.0, 0.2), (0.3, 1.1), (0.8, 0.9), (0.1, 0.5), (0.6, 0.4),
            (20.0, 20.0), (21.0, 20.5), (20.4, 21.2), (20.9, 20.1), (20.2, 20.7), (21.1, 21.0),
        ];
        let xs: Vec<Vec<f64>> = pts.iter().map(|p| vec![p.0, p.1]).collect();
        let ys: Vec<Vec<f64>> = pts.iter().map(|p| vec![p.0 * 2.0 + p.1, p.1 - p.0]).collect();
        let train = TrainingSet::from_rows(&xs, &ys, serde_json::Value::Null).unwrap();
        // Exhaustive 2-means over all splits of 12 points.
        let mut best = (f64::INFINITY, 0u32);
        for mask in 1u32..(1 << 11) {
            let mut cost = 0.0;
            for side in [true, false] {
                let members: Vec<_> = (0..12).filter(|i| ((mask >> i) & 1 == 1) == side).collect();
                let cx = members.iter().map(|&i| pts[i].0).sum::<f64>() / members.len() as f64;
                let cy = members.iter().map(|&i| pts[i].1).sum::<f64>() / members.len() as f64;
                cost += members.iter().map(|&i| (pts[i].0 - cx).powi(2) + (pts[i].1 - cy).powi(2)).sum::<f64>();
            }
            if cost < best.0 {
                best = (cost, mask);
            }
        }
        assert!(best.1 == 0b1111_1100_0000 || best.1 == 0b0000_0011_1111);
        let m = init_params(&train, 2, 3, PriorMode::Free).unwrap();
        let mut cs: Vec<f64> = m.components.iter().map(|c| c.c[0]).collect();
        cs.sort_by(f64::total_cmp);
        assert!(cs[0] >= 0.0 && cs[0] <= 1.0);
        assert!(cs[1] >= 20.0 && cs[1] <= 21.1);
    }

    #[test]
    fn em_is_monotone_and_fixed_prior_holds() {
        for seed in 0..3 {
            let (_, train) = small_instance(seed, 3, 150);
            for mode in [PriorMode::Free, PriorMode::Fixed] {
                let cfg = FitConfig {
                    prior_mode: mode,
                    seed,
                    max_iter: 60,
                    ..FitConfig::default()
                };
                let out = fit(&train, 3, &cfg).unwrap();
                let pruned = out.trace.pruning_steps();
                for (i, w) in out.trace.log_likelihood.windows(2).enumerate() {
                    if !pruned.contains(&(i + 1)) {
                        assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "seed {seed} step {i}: {} -> {}", w[0], w[1]);
                    }
                }
                if mode == PriorMode::Fixed {
                    let k = out.model.k() as f64;
                    assert!(out.model.components.iter().all(|c| c.pi == 1.0 / k));
                }
            }
        }
    }

    #[test]
    fn recovers_generating_model_likelihood() {
        let spec = RandomModelSpec {
            k: 3,
            l: 2,
            d: 8,
            centre_spread: 20.0,
            gamma_std: (0.5, 1.5),
            ..RandomModelSpec::default()
        };
        let mut truth = random_model(&spec, 21);
        for (c, centre) in truth.components.iter_mut().zip([[-15.0, 0.0], [0.0, 10.0], [15.0, -5.0]]) {
            c.c = DVector::from_column_slice(&centre);
        }
        let train = truth.sample(600, 22);
        let held = truth.sample(600, 23);
        let out = fit(&train, 3, &FitConfig { seed: 1, ..FitConfig::default() }).unwrap();
        let ll_fit = log_likelihood(&out.model, &held).unwrap();
        let ll_true = log_likelihood(&truth, &held).unwrap();
        assert!((ll_fit - ll_true).abs() <= 0.02 * ll_true.abs(), "{ll_fit} vs {ll_true}");
    }
}

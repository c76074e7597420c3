//! Mixed-effects risk-factor model with truncated Dirichlet-process-mixture
//! random effects, fitted by a blocked Gibbs sampler.
//!
//! For one factor the model is
//! `y_ij = x_iᵀβ + b_iᵀ(1, P1(t_ij), P2(t_ij)) + ε_ij`, `ε ~ N(0, σ²)`,
//! with `b_i | z_i = k ~ N(μ_k, Σ_k)`, stick-breaking weights over `K`
//! components, `μ_k ~ N(μ0, D)` and `Σ_k ~ IW(R1, c)`.

use std::io::Write;
use std::path::Path;

use nalgebra::{Cholesky, SMatrix, SVector};
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::legendre::{legendre_basis, FeatureTriple, TrajectoryCoefficients};
use crate::seed;
use crate::stats::LN_SQRT_2PI;

type V3 = SVector<f64, 3>;
type M3 = SMatrix<f64, 3, 3>;
type V4 = SVector<f64, 4>;
type M4 = SMatrix<f64, 4, 4>;
type M34 = SMatrix<f64, 3, 4>;

const DIM: usize = 3;
const FIXED_PRIOR_VAR: f64 = 100.0;
const SIGMA_PRIOR: (f64, f64) = (0.01, 0.01);
const REGULARIZE: f64 = 1e-8;

/// Hyperparameters left unset are filled in from the data (Taddy-style
/// empirical defaults) when the sampler starts.
#[derive(Debug, Clone)]
pub struct DpmConfig {
    pub truncation: usize,
    /// Gamma shape and rate for the concentration `α`.
    pub alpha_prior: (f64, f64),
    pub base_mean: Option<[f64; 3]>,
    pub base_scale: Option<[[f64; 3]; 3]>,
    pub iw_scale: Option<[[f64; 3]; 3]>,
    pub iw_df: Option<f64>,
    pub n_iter: usize,
    pub n_burn: usize,
    pub thin: usize,
    pub seed: u64,
    /// Lower limit of the area feature.
    pub area_origin: f64,
}

impl Default for DpmConfig {
    fn default() -> Self {
        DpmConfig {
            truncation: 20,
            alpha_prior: (1.0, 1.0),
            base_mean: None,
            base_scale: None,
            iw_scale: None,
            iw_df: None,
            n_iter: 1500,
            n_burn: 500,
            thin: 5,
            seed: 1,
            area_origin: 0.0,
        }
    }
}

impl DpmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.truncation < 1 {
            return Err(Error::invalid("truncation must be >= 1"));
        }
        if self.n_iter <= self.n_burn {
            return Err(Error::invalid("n_iter must exceed n_burn"));
        }
        if self.thin == 0 {
            return Err(Error::invalid("thin must be >= 1"));
        }
        if !(self.alpha_prior.0 > 0.0 && self.alpha_prior.1 > 0.0) {
            return Err(Error::invalid("alpha prior parameters must be > 0"));
        }
        if let Some(c) = self.iw_df {
            if c <= (DIM + 1) as f64 {
                return Err(Error::invalid("inverse-Wishart df must exceed dim + 1"));
            }
        }
        Ok(())
    }

    pub fn n_retained(&self) -> usize {
        (self.n_iter - self.n_burn).div_ceil(self.thin)
    }
}

/// Truncation level from the prior mean of `α` and the sample size,
/// `ceil(5·E[α]·ln n)` clamped to `[2, 50]`.
pub fn truncation_rule(n: usize, alpha_prior: (f64, f64)) -> usize {
    let mean = alpha_prior.0 / alpha_prior.1;
    let k = (5.0 * mean * (n.max(2) as f64).ln()).ceil() as usize;
    k.clamp(2, 50)
}

#[derive(Debug, Clone)]
pub struct DpmState {
    pub sticks: Vec<f64>,
    pub weights: Vec<f64>,
    pub means: Vec<[f64; 3]>,
    pub covariances: Vec<[[f64; 3]; 3]>,
    pub assignments: Vec<usize>,
    pub concentration: f64,
    pub sigma: f64,
    /// Covariate effects for sex, race, LH, AH.
    pub fixed: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpmDiagnostic {
    pub iteration: usize,
    pub log_likelihood: f64,
    pub concentration: f64,
    pub occupied: usize,
}

#[derive(Debug, Clone)]
pub struct DpmFit {
    pub factor: usize,
    pub subject_ids: Vec<String>,
    pub states: Vec<DpmState>,
    /// `draws[r][i]`: trajectory of subject `i` in retained state `r`.
    pub draws: Vec<Vec<TrajectoryCoefficients>>,
    pub diagnostics: Vec<DpmDiagnostic>,
    pub area_origin: f64,
}

/// Standard stick-breaking weights: `π_1 = V_1`, `π_k = V_k ∏_{l<k}(1 − V_l)`,
/// `π_K = 1 − Σ_{k<K} π_k`.
pub fn stick_breaking_weights(sticks: &[f64]) -> Result<Vec<f64>> {
    if let Some(v) = sticks.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        return Err(Error::OutOfRange(format!("stick fraction {v} outside (0, 1)")));
    }
    Ok(weights_unchecked(sticks))
}

fn weights_unchecked(sticks: &[f64]) -> Vec<f64> {
    let mut w = Vec::with_capacity(sticks.len() + 1);
    let mut remaining = 1.0;
    for &v in sticks {
        w.push(v * remaining);
        remaining *= 1.0 - v;
    }
    let head: f64 = w.iter().sum();
    w.push((1.0 - head).max(0.0));
    w
}

/// Draws `α | V ~ Gamma(a + K − 1, b − Σ log(1 − V_k))` (shape, rate).
pub fn update_concentration<R: Rng + ?Sized>(
    sticks: &[f64],
    a: f64,
    b: f64,
    rng: &mut R,
) -> Result<f64> {
    if let Some(v) = sticks.iter().find(|v| !(**v >= 0.0 && **v < 1.0)) {
        return Err(Error::OutOfRange(format!(
            "stick fraction {v} makes log(1 - V) singular"
        )));
    }
    let (shape, rate) = concentration_posterior(sticks, a, b);
    Ok(Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::Numerical(e.to_string()))?
        .sample(rng))
}

/// Shape and rate of the conditional for `α`.
pub fn concentration_posterior(sticks: &[f64], a: f64, b: f64) -> (f64, f64) {
    let s: f64 = sticks.iter().map(|v| (-v).ln_1p()).sum();
    (a + sticks.len() as f64, b - s)
}

struct SubjectData {
    rows: Vec<V3>,
    values: Vec<f64>,
    ztz: M3,
    zty: V3,
    ztx: M34,
    xtx: M4,
    xty: V4,
    x: V4,
}

fn design_row(age: f64, scale: f64) -> V3 {
    let (p1, p2) = legendre_basis(age, scale).expect("scale validated");
    V3::new(1.0, p1, p2)
}

fn prepare(cohort: &Cohort, factor: usize) -> Result<Vec<SubjectData>> {
    if factor >= cohort.n_factors() {
        return Err(Error::invalid(format!("factor {factor} out of range")));
    }
    let grouped = cohort.grouped_longitudinal();
    cohort
        .subjects
        .iter()
        .zip(grouped)
        .map(|(s, mut g)| {
            let obs = std::mem::take(&mut g[factor]);
            if obs.is_empty() {
                return Err(Error::invalid(format!(
                    "{}: no observations for factor {}",
                    s.id,
                    factor + 1
                )));
            }
            let x = V4::from(s.fixed_covariates());
            let mut d = SubjectData {
                rows: obs.iter().map(|o| design_row(o.0, cohort.t_max)).collect(),
                values: obs.iter().map(|o| o.1).collect(),
                ztz: M3::zeros(),
                zty: V3::zeros(),
                ztx: M34::zeros(),
                xtx: M4::zeros(),
                xty: V4::zeros(),
                x,
            };
            for &(age, y) in &obs {
                let z = design_row(age, cohort.t_max);
                d.ztz += z * z.transpose();
                d.zty += z * y;
                d.ztx += z * x.transpose();
                d.xtx += x * x.transpose();
                d.xty += x * y;
            }
            Ok(d)
        })
        .collect()
}

fn to_arr3(v: &V3) -> [f64; 3] {
    [v[0], v[1], v[2]]
}

fn to_mat3(m: &M3) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = m[(i, j)];
        }
    }
    out
}

fn from_mat3(a: &[[f64; 3]; 3]) -> M3 {
    M3::from_fn(|i, j| a[i][j])
}

fn chol3(m: &M3) -> Result<Cholesky<f64, nalgebra::Const<3>>> {
    let sym = 0.5 * (m + m.transpose());
    Cholesky::new(sym)
        .or_else(|| Cholesky::new(sym + M3::identity() * REGULARIZE * (1.0 + sym.trace())))
        .ok_or_else(|| Error::Numerical("covariance not positive definite".into()))
}

fn mvn_draw<R: Rng + ?Sized>(mean: &V3, cov_chol_lower: &M3, rng: &mut R) -> V3 {
    let z = V3::from_fn(|_, _| StandardNormal.sample(rng));
    mean + cov_chol_lower * z
}

/// Draw from `N(prec⁻¹ rhs, prec⁻¹)`.
fn gaussian_from_precision<R: Rng + ?Sized>(prec: &M3, rhs: &V3, rng: &mut R) -> Result<V3> {
    let ch = chol3(prec)?;
    let mean = ch.solve(rhs);
    let z = V3::from_fn(|_, _| StandardNormal.sample(rng));
    // L Lᵀ = prec  ⇒  x = mean + L⁻ᵀ z has covariance prec⁻¹
    let lt = ch.l().transpose();
    let step = lt
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::Numerical("singular precision".into()))?;
    Ok(mean + step)
}

/// Draws `Σ ~ IW(scale, df)` via a Bartlett-decomposed Wishart on `Σ⁻¹`.
fn inverse_wishart<R: Rng + ?Sized>(scale: &M3, df: f64, rng: &mut R) -> Result<M3> {
    let inv_scale = chol3(scale)?.inverse();
    let l = chol3(&inv_scale)?.l();
    let mut a = M3::zeros();
    for i in 0..DIM {
        let chi2 = Gamma::new(0.5 * (df - i as f64), 2.0)
            .map_err(|e| Error::Numerical(e.to_string()))?
            .sample(rng);
        a[(i, i)] = chi2.sqrt();
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    let la = l * a;
    let w = la * la.transpose();
    Ok(chol3(&w)?.inverse())
}

struct Hyper {
    mu0: V3,
    d_chol: M3,
    d_inv: M3,
    r1: M3,
    c: f64,
}

fn empirical_hyper(data: &[SubjectData], config: &DpmConfig) -> Result<Hyper> {
    // Pooled least squares for the centre, ridge-shrunk per-subject fits for spread.
    let mut ztz = M3::zeros();
    let mut zty = V3::zeros();
    for d in data {
        ztz += d.ztz;
        zty += d.zty;
    }
    let pooled = chol3(&(ztz + M3::identity() * 1e-6))?.solve(&zty);
    let est: Vec<V3> = data
        .iter()
        .map(|d| {
            chol3(&(d.ztz + M3::identity() * 1e-3))
                .map(|c| c.solve(&(d.zty + pooled * 1e-3)))
                .unwrap_or(pooled)
        })
        .collect();
    let mut resid_ss = 0.0;
    let mut n_obs = 0usize;
    for d in data {
        for (z, &y) in d.rows.iter().zip(&d.values) {
            n_obs += 1;
            resid_ss += (y - z.dot(&pooled)).powi(2);
        }
    }
    let n = est.len() as f64;
    let mean = est.iter().fold(V3::zeros(), |a, b| a + b) / n;
    let mut cov = M3::zeros();
    for b in &est {
        let dv = b - mean;
        cov += dv * dv.transpose();
    }
    cov /= (n - 1.0).max(1.0);
    let floor = 1e-2 * (resid_ss / n_obs.max(1) as f64).max(1e-8);
    for i in 0..DIM {
        cov[(i, i)] = cov[(i, i)].max(floor);
    }
    let mu0 = config.base_mean.map(V3::from).unwrap_or(mean);
    let d = config.base_scale.map(|m| from_mat3(&m)).unwrap_or(cov * 4.0);
    let r1 = config.iw_scale.map(|m| from_mat3(&m)).unwrap_or(cov);
    let c = config.iw_df.unwrap_or((DIM + 2) as f64);
    let d_ch = chol3(&d)?;
    Ok(Hyper {
        mu0,
        d_chol: d_ch.l(),
        d_inv: d_ch.inverse(),
        r1,
        c,
    })
}

struct Cluster {
    mean: V3,
    cov: M3,
    prec: M3,
    log_det: f64,
}

impl Cluster {
    fn new(mean: V3, cov: M3) -> Result<Self> {
        let ch = chol3(&cov)?;
        let chol_l = ch.l();
        let log_det = 2.0 * (0..DIM).map(|i| chol_l[(i, i)].ln()).sum::<f64>();
        Ok(Cluster {
            mean,
            cov,
            prec: ch.inverse(),
            log_det,
        })
    }

    fn log_density(&self, b: &V3) -> f64 {
        let d = b - self.mean;
        let q = (self.prec * d).dot(&d);
        -(DIM as f64) * LN_SQRT_2PI - 0.5 * self.log_det - 0.5 * q
    }
}

/// Runs the blocked Gibbs sampler for one factor over every subject of
/// `cohort` (typically one ICD stratum of the dead).
pub fn fit_dpm_model(cohort: &Cohort, factor: usize, config: &DpmConfig) -> Result<DpmFit> {
    config.validate()?;
    if cohort.is_empty() {
        return Err(Error::invalid("empty stratum"));
    }
    let data = prepare(cohort, factor)?;
    let hyper = empirical_hyper(&data, config)?;
    let mut rng = seed::rng_for(config.seed, &[seed::stage::RISK, factor as u64]);
    let n = data.len();
    let k_max = config.truncation;
    let (a_alpha, b_alpha) = config.alpha_prior;

    // Initial state
    let mut b: Vec<V3> = data
        .iter()
        .map(|d| {
            chol3(&(d.ztz + hyper.d_inv))
                .map(|c| c.solve(&(d.zty + hyper.d_inv * hyper.mu0)))
                .unwrap_or(hyper.mu0)
        })
        .collect();
    let n_start = k_max.min(5);
    let mut z: Vec<usize> = (0..n).map(|_| rng.random_range(0..n_start)).collect();
    let mut fixed = V4::zeros();
    let total_obs: usize = data.iter().map(|d| d.values.len()).sum();
    let mut sigma2 = {
        let ss: f64 = data
            .iter()
            .zip(&b)
            .map(|(d, bi)| {
                d.rows
                    .iter()
                    .zip(&d.values)
                    .map(|(z, &y)| (y - z.dot(bi)).powi(2))
                    .sum::<f64>()
            })
            .sum();
        (ss / total_obs as f64).max(1e-6)
    };
    let mut alpha = a_alpha / b_alpha;
    let mut sticks = vec![0.5; k_max - 1];
    let mut clusters: Vec<Cluster> = (0..k_max)
        .map(|_| Cluster::new(hyper.mu0, hyper.r1))
        .collect::<Result<_>>()?;

    let mut states = Vec::with_capacity(config.n_retained());
    let mut draws = Vec::with_capacity(config.n_retained());
    let mut diagnostics = Vec::with_capacity(config.n_iter);
    let mut counts = vec![0usize; k_max];

    for iter in 0..config.n_iter {
        // (i) cluster parameters
        counts.iter_mut().for_each(|c| *c = 0);
        let mut sums = vec![V3::zeros(); k_max];
        for (i, &k) in z.iter().enumerate() {
            counts[k] += 1;
            sums[k] += b[i];
        }
        for k in 0..k_max {
            let mean = if counts[k] == 0 {
                mvn_draw(&hyper.mu0, &hyper.d_chol, &mut rng)
            } else {
                let prec = hyper.d_inv + clusters[k].prec * counts[k] as f64;
                let rhs = hyper.d_inv * hyper.mu0 + clusters[k].prec * sums[k];
                gaussian_from_precision(&prec, &rhs, &mut rng)?
            };
            let mut scatter = M3::zeros();
            for (i, &zi) in z.iter().enumerate() {
                if zi == k {
                    let dv = b[i] - mean;
                    scatter += dv * dv.transpose();
                }
            }
            let mut cov = inverse_wishart(&(hyper.r1 + scatter), hyper.c + counts[k] as f64, &mut rng)?;
            if counts[k] < DIM + 2 {
                cov += M3::identity() * REGULARIZE;
            }
            clusters[k] = Cluster::new(mean, cov)?;
        }

        // (ii) assignments
        let weights = weights_unchecked(&sticks);
        let log_w: Vec<f64> = weights.iter().map(|w| w.max(1e-300).ln()).collect();
        let mut probs = vec![0.0; k_max];
        for i in 0..n {
            let mut mx = f64::NEG_INFINITY;
            for k in 0..k_max {
                probs[k] = log_w[k] + clusters[k].log_density(&b[i]);
                mx = mx.max(probs[k]);
            }
            let mut total = 0.0;
            for p in probs.iter_mut() {
                *p = (*p - mx).exp();
                total += *p;
            }
            let mut u = rng.random::<f64>() * total;
            let mut chosen = k_max - 1;
            for (k, p) in probs.iter().enumerate() {
                if u < *p {
                    chosen = k;
                    break;
                }
                u -= p;
            }
            z[i] = chosen;
        }

        // (iii) sticks
        counts.iter_mut().for_each(|c| *c = 0);
        for &k in &z {
            counts[k] += 1;
        }
        let mut tail: usize = counts.iter().sum();
        for k in 0..k_max.saturating_sub(1) {
            tail -= counts[k];
            let beta = Beta::new(1.0 + counts[k] as f64, alpha + tail as f64)
                .map_err(|e| Error::Numerical(e.to_string()))?;
            sticks[k] = beta.sample(&mut rng).clamp(1e-12, 1.0 - 1e-12);
        }

        // (iv) concentration
        alpha = update_concentration(&sticks, a_alpha, b_alpha, &mut rng)?.max(1e-8);

        // (v) subject coefficients
        for (i, d) in data.iter().enumerate() {
            let c = &clusters[z[i]];
            let prec = c.prec + d.ztz / sigma2;
            let rhs = c.prec * c.mean + (d.zty - d.ztx * fixed) / sigma2;
            b[i] = gaussian_from_precision(&prec, &rhs, &mut rng)?;
        }

        // (vi) fixed effects and residual variance
        let mut prec = M4::identity() / FIXED_PRIOR_VAR;
        let mut rhs = V4::zeros();
        for (d, bi) in data.iter().zip(&b) {
            prec += d.xtx / sigma2;
            rhs += (d.xty - d.ztx.transpose() * bi) / sigma2;
        }
        let sym = 0.5 * (prec + prec.transpose());
        let ch = Cholesky::new(sym).ok_or_else(|| Error::Numerical("fixed-effect precision".into()))?;
        let mean = ch.solve(&rhs);
        let zf = V4::from_fn(|_, _| StandardNormal.sample(&mut rng));
        fixed = mean
            + ch.l()
                .transpose()
                .solve_upper_triangular(&zf)
                .ok_or_else(|| Error::Numerical("fixed-effect precision".into()))?;

        let mut ssr = 0.0;
        for (d, bi) in data.iter().zip(&b) {
            let off = d.x.dot(&fixed);
            for (z, &y) in d.rows.iter().zip(&d.values) {
                let r = y - off - z.dot(bi);
                ssr += r * r;
            }
        }
        let shape = SIGMA_PRIOR.0 + 0.5 * total_obs as f64;
        let rate = SIGMA_PRIOR.1 + 0.5 * ssr;
        let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::Numerical(e.to_string()))?;
        sigma2 = 1.0 / g.sample(&mut rng);

        let log_lik = -(total_obs as f64) * (LN_SQRT_2PI + 0.5 * sigma2.ln()) - 0.5 * ssr / sigma2;
        diagnostics.push(DpmDiagnostic {
            iteration: iter,
            log_likelihood: log_lik,
            concentration: alpha,
            occupied: counts.iter().filter(|&&c| c > 0).count(),
        });

        if iter >= config.n_burn && (iter - config.n_burn).is_multiple_of(config.thin) {
            let fixed_arr = [fixed[0], fixed[1], fixed[2], fixed[3]];
            draws.push(
                data.iter()
                    .zip(&b)
                    .map(|(d, bi)| TrajectoryCoefficients {
                        b0: bi[0],
                        b1: bi[1],
                        b2: bi[2],
                        fixed_offset: d.x.dot(&fixed),
                        scale: cohort.t_max,
                    })
                    .collect(),
            );
            states.push(DpmState {
                sticks: sticks.clone(),
                weights: weights_unchecked(&sticks),
                means: clusters.iter().map(|c| to_arr3(&c.mean)).collect(),
                covariances: clusters.iter().map(|c| to_mat3(&c.cov)).collect(),
                assignments: z.clone(),
                concentration: alpha,
                sigma: sigma2.sqrt(),
                fixed: fixed_arr,
            });
        }
    }

    Ok(DpmFit {
        factor,
        subject_ids: cohort.subjects.iter().map(|s| s.id.clone()).collect(),
        states,
        draws,
        diagnostics,
        area_origin: config.area_origin,
    })
}

/// Density of the random-effects mixture `Σ π_k N(b; μ_k, Σ_k)` for one state.
pub fn mixture_density(state: &DpmState, b: [f64; 3]) -> Result<f64> {
    let b = V3::from(b);
    let mut total = 0.0;
    for ((w, m), c) in state.weights.iter().zip(&state.means).zip(&state.covariances) {
        let cl = Cluster::new(V3::from(*m), from_mat3(c))?;
        total += w * cl.log_density(&b).exp();
    }
    Ok(total)
}

/// Evenly spaced positions of `m` draws among `available` retained draws.
pub fn select_draws(available: usize, m: usize) -> Result<Vec<usize>> {
    if m == 0 || m > available {
        return Err(Error::invalid(format!(
            "cannot select {m} draws from {available}"
        )));
    }
    Ok((0..m).map(|j| (j + 1) * available / m - 1).collect())
}

impl DpmFit {
    /// Feature draws for subject `i` at age `t`, one per selected retained draw.
    pub fn posterior_features(&self, subject: usize, t: f64, m: usize) -> Result<Vec<FeatureTriple>> {
        select_draws(self.draws.len(), m)?
            .into_iter()
            .map(|r| crate::legendre::features(&self.draws[r][subject], self.area_origin, t))
            .collect()
    }

    /// Mean over retained draws of each subject's coefficients.
    pub fn posterior_mean_coefficients(&self) -> Vec<[f64; 3]> {
        let r = self.draws.len() as f64;
        (0..self.subject_ids.len())
            .map(|i| {
                let mut acc = [0.0; 3];
                for d in &self.draws {
                    acc[0] += d[i].b0 / r;
                    acc[1] += d[i].b1 / r;
                    acc[2] += d[i].b2 / r;
                }
                acc
            })
            .collect()
    }

    pub fn write_diagnostics(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "iteration,log_likelihood,alpha,occupied")?;
        for d in &self.diagnostics {
            writeln!(
                out,
                "{},{},{},{}",
                d.iteration, d.log_likelihood, d.concentration, d.occupied
            )?;
        }
        Ok(())
    }
}

/// Posterior feature draws at each subject's death age: `features[i][g][m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePosterior {
    pub subject_ids: Vec<String>,
    pub features: Vec<Vec<Vec<FeatureTriple>>>,
}

impl FeaturePosterior {
    pub fn n_draws(&self) -> usize {
        self.features
            .first()
            .and_then(|f| f.first())
            .map_or(0, Vec::len)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("subject_id,factor,draw_m,value,slope,area\n");
        for (id, per_factor) in self.subject_ids.iter().zip(&self.features) {
            for (g, draws) in per_factor.iter().enumerate() {
                for (m, f) in draws.iter().enumerate() {
                    out.push_str(&format!(
                        "{id},{},{},{},{},{}\n",
                        g + 1,
                        m + 1,
                        f.value,
                        f.slope,
                        f.area
                    ));
                }
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Reads a feature CSV; `eval_age` is not stored and comes back as NaN.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut ids: Vec<String> = Vec::new();
        let mut features: Vec<Vec<Vec<FeatureTriple>>> = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::MalformedRow {
                file: path.display().to_string(),
                line: i + 1,
                message: msg.to_string(),
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad("expected 6 fields"));
            }
            let g: usize = f[1].parse().map_err(|_| bad("factor"))?;
            let m: usize = f[2].parse().map_err(|_| bad("draw_m"))?;
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad("number"));
            if ids.last().map(String::as_str) != Some(f[0]) {
                ids.push(f[0].to_string());
                features.push(Vec::new());
            }
            let subj = features.last_mut().expect("pushed above");
            if g == 0 || m == 0 {
                return Err(bad("indices are 1-based"));
            }
            if subj.len() < g {
                subj.resize(g, Vec::new());
            }
            if subj[g - 1].len() != m - 1 {
                return Err(bad("draws out of order"));
            }
            subj[g - 1].push(FeatureTriple {
                value: num(f[3])?,
                slope: num(f[4])?,
                area: num(f[5])?,
                eval_age: f64::NAN,
            });
        }
        Ok(FeaturePosterior {
            subject_ids: ids,
            features,
        })
    }
}

/// Fits every factor on `cohort` (in parallel) and evaluates `m` feature
/// draws at each subject's evaluation age.
pub fn fit_risk_factors(
    cohort: &Cohort,
    eval_ages: &[f64],
    m: usize,
    config: &DpmConfig,
) -> Result<(Vec<DpmFit>, FeaturePosterior)> {
    let fits: Vec<DpmFit> = (0..cohort.n_factors())
        .into_par_iter()
        .map(|g| fit_dpm_model(cohort, g, config))
        .collect::<Result<_>>()?;
    let mut features = Vec::with_capacity(cohort.len());
    for (i, &age) in eval_ages.iter().enumerate() {
        let per_factor = fits
            .iter()
            .map(|f| f.posterior_features(i, age.clamp(0.0, cohort.t_max), m))
            .collect::<Result<Vec<_>>>()?;
        features.push(per_factor);
    }
    Ok((
        fits,
        FeaturePosterior {
            subject_ids: cohort.subjects.iter().map(|s| s.id.clone()).collect(),
            features,
        },
    ))
}


#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn stick_breaking_examples() {
        assert_eq!(stick_breaking_weights(&[0.5, 0.5]).unwrap(), vec![0.5, 0.25, 0.25]);
        assert_eq!(stick_breaking_weights(&[0.3]).unwrap(), vec![0.3, 0.7]);
        let w = stick_breaking_weights(&[1.0 - 1e-9, 0.5, 0.5]).unwrap();
        assert!(w[0] > 1.0 - 1e-8 && w[1..].iter().all(|&x| x < 1e-8));
        assert_eq!(stick_breaking_weights(&[]).unwrap(), vec![1.0]);
        assert!(stick_breaking_weights(&[1.0]).is_err());
        assert!(stick_breaking_weights(&[0.0]).is_err());
    }

    #[test]
    fn literal_product_from_index_two_would_not_sum_to_one() {
        // Sethuraman weights for V = (0.5, 0.5, 0.5): 0.5, 0.25, 0.125, 0.125.
        let w = stick_breaking_weights(&[0.5, 0.5, 0.5]).unwrap();
        assert_eq!(w, vec![0.5, 0.25, 0.125, 0.125]);
    }

    #[test]
    fn concentration_posterior_parameters() {
        let (shape, rate) = concentration_posterior(&[0.5], 1.0, 1.0);
        assert_eq!(shape, 2.0);
        assert!((rate - (1.0 + 2f64.ln())).abs() < 1e-12);
        assert!((shape / rate - 1.1813).abs() < 1e-4);
        assert_eq!(concentration_posterior(&[0.0, 0.0], 2.0, 3.0), (4.0, 3.0));
        let mut rng = seed::Rng::seed_from_u64(4);
        assert!(update_concentration(&[1.0], 1.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn concentration_draws_match_conditional_mean_and_are_reproducible() {
        let mut rng = seed::Rng::seed_from_u64(11);
        let draws: Vec<f64> = (0..40_000)
            .map(|_| update_concentration(&[0.5], 1.0, 1.0, &mut rng).unwrap())
            .collect();
        let m = crate::stats::mean(&draws);
        assert!((m - 1.1813).abs() < 0.02, "{m}");
        let a = update_concentration(&[0.2, 0.4], 1.0, 1.0, &mut seed::Rng::seed_from_u64(5)).unwrap();
        let b = update_concentration(&[0.2, 0.4], 1.0, 1.0, &mut seed::Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn concentration_conditional_matches_unnormalized_density() {
        // Oracle: Gamma(a,b) prior times Π Beta(V_k; 1, α), normalised by quadrature.
        let sticks = [0.3, 0.6, 0.1];
        let (a, b) = (2.0, 1.5);
        let log_un = |alpha: f64| {
            (a - 1.0) * alpha.ln() - b * alpha
                + sticks
                    .iter()
                    .map(|v: &f64| alpha.ln() + (alpha - 1.0) * (-v).ln_1p())
                    .sum::<f64>()
        };
        let h = 1e-3;
        let grid: Vec<f64> = (1..40_000).map(|i| i as f64 * h).collect();
        let w: Vec<f64> = grid.iter().map(|&x| log_un(x).exp()).collect();
        let z: f64 = w.iter().sum();
        let mean_oracle: f64 = grid.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() / z;
        let (shape, rate) = concentration_posterior(&sticks, a, b);
        assert!((mean_oracle - shape / rate).abs() < 1e-3);
    }

    #[test]
    fn truncation_rule_is_clamped() {
        assert_eq!(truncation_rule(150, (1.0, 1.0)), 26);
        assert_eq!(truncation_rule(10_000_000, (5.0, 1.0)), 50);
        assert_eq!(truncation_rule(2, (0.01, 1.0)), 2);
    }

    #[test]
    fn select_draws_is_even_and_checked() {
        assert_eq!(select_draws(10, 2).unwrap(), vec![4, 9]);
        assert_eq!(select_draws(3, 3).unwrap(), vec![0, 1, 2]);
        assert!(select_draws(3, 4).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = DpmConfig::default();
        c.n_burn = c.n_iter;
        assert!(c.validate().is_err());
        let mut c = DpmConfig::default();
        c.iw_df = Some(3.5);
        assert!(c.validate().is_err());
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn weights_sum_to_one(v in proptest::collection::vec(1e-6f64..(1.0 - 1e-6), 0..40)) {
            let w = stick_breaking_weights(&v).unwrap();
            prop_assert_eq!(w.len(), v.len() + 1);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

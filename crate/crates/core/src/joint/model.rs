//! Cached data and the unconstrained log posterior with its gradient.
//!
//! Internally each factor is rescaled to `(y − c_g)/sd_g`; linked features
//! are standardized by constants (`f̃ = (f − center)/scale`) and hazard
//! covariates are centered. Both shifts are absorbed by the spline, so the
//! data-scale `α = α̃/scale` and `γ` are unaffected.

use nalgebra::{DMatrix, Matrix3, Vector3};

use super::bspline::BaselineHazard;
use super::fit::JointConfig;
use super::nuts::LogDensity;
use super::priors::{self, correlation_cholesky, correlation_cholesky_grad, link_prior, n_cpc};
use super::quadrature;
use super::{JointModelState, SurvivalRecord};
use crate::cohort::{Cohort, HAZARD_COVARIATE_NAMES};
use crate::error::{Error, Result};
use crate::legendre::{feature_weights, Feature};
use crate::stats::{logistic, LN_SQRT_2PI};

#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub g: usize,
    pub q: usize,
    pub n_links: usize,
    pub n_cov: usize,
    pub n_psi: usize,
    pub n: usize,
    pub beta: usize,
    pub log_sigma: usize,
    pub psi: usize,
    pub gamma: usize,
    pub d: usize,
    pub log_tau: usize,
    pub logit_pi: usize,
    pub log_s2: usize,
    pub log_sre: usize,
    pub cpc: usize,
    pub z: usize,
    pub len: usize,
}

impl Layout {
    fn new(g: usize, n_feat: usize, n_cov: usize, n_psi: usize, n: usize) -> Self {
        let q = 3 * g;
        let n_links = g * n_feat;
        let beta = 0;
        let log_sigma = beta + q;
        let psi = log_sigma + g;
        let gamma = psi + n_psi;
        let d = gamma + n_cov;
        let log_tau = d + n_links;
        let logit_pi = log_tau + n_links;
        let log_s2 = logit_pi + g;
        let log_sre = log_s2 + 1;
        let cpc = log_sre + q;
        let z = cpc + n_cpc(q);
        Layout {
            g,
            q,
            n_links,
            n_cov,
            n_psi,
            n,
            beta,
            log_sigma,
            psi,
            gamma,
            d,
            log_tau,
            logit_pi,
            log_s2,
            log_sre,
            cpc,
            z,
            len: z + n * q,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct LongStats {
    n: f64,
    xtx: Matrix3<f64>,
    xty: Vector3<f64>,
    yty: f64,
}

/// Per-subject cache. Rows `0..n_nodes` are quadrature nodes, the last row
/// is the observed time.
#[derive(Debug, Clone)]
struct SubjectCache {
    event: bool,
    weights: Vec<f64>,
    basis_first: Vec<usize>,
    basis: Vec<f64>,
    /// `f̃ = a + v·θ` per (row, link).
    link_a: Vec<f64>,
    link_v: Vec<[f64; 3]>,
    covariates: Vec<f64>,
    long: Vec<LongStats>,
}

/// Prepared data for one joint fit.
#[derive(Debug, Clone)]
pub struct JointData {
    pub(crate) layout: Layout,
    links: Vec<Feature>,
    factor_names: Vec<String>,
    subject_ids: Vec<String>,
    t_scale: f64,
    hazard_template: BaselineHazard,
    /// Data scaling per factor: `y_std = (y − center)/scale`.
    y_center: Vec<f64>,
    y_scale: Vec<f64>,
    feat_center: Vec<f64>,
    feat_scale: Vec<f64>,
    cov_center: Vec<f64>,
    subjects: Vec<SubjectCache>,
    entry_ages: Vec<f64>,
    times: Vec<f64>,
    raw_covariates: Vec<Vec<f64>>,
    tau0: f64,
    s2_prior: (f64, f64),
    pi_prior: (f64, f64),
    fixed_sd: f64,
    re_sd_prior: f64,
    spline_sd: (f64, f64),
    init: Vec<f64>,
}

fn design(age: f64, scale: f64) -> Vector3<f64> {
    let w = feature_weights(Feature::Value, 0.0, age, scale);
    Vector3::new(w[0], w[1], w[2])
}

impl JointData {
    pub fn new(cohort: &Cohort, events: &[u8], config: &JointConfig) -> Result<Self> {
        config.validate()?;
        let n = cohort.len();
        if events.len() != n {
            return Err(Error::invalid("one event indicator per subject is required"));
        }
        if events.iter().any(|&e| e > 1) {
            return Err(Error::invalid("event indicators must be 0/1"));
        }
        if !events.contains(&1) {
            return Err(Error::invalid("the joint model needs at least one event"));
        }
        let g_count = cohort.n_factors();
        if g_count == 0 {
            return Err(Error::invalid("no longitudinal factors"));
        }
        let t_scale = cohort.t_max;
        let grouped = cohort.grouped_longitudinal();
        for (s, per) in cohort.subjects.iter().zip(&grouped) {
            if per.iter().all(Vec::is_empty) {
                return Err(Error::invalid(format!("{}: no longitudinal data", s.id)));
            }
        }
        let times: Vec<f64> = (0..n).map(|i| cohort.event(i).observed_time).collect();
        if let Some(i) = times.iter().position(|&t| !(t > 0.0)) {
            return Err(Error::invalid(format!(
                "{}: observed time must be > 0",
                cohort.subjects[i].id
            )));
        }
        let entry_ages: Vec<f64> = cohort.subjects.iter().map(|s| s.baseline_age).collect();

        // factor scaling
        let mut y_center = Vec::with_capacity(g_count);
        let mut y_scale = Vec::with_capacity(g_count);
        for g in 0..g_count {
            let ys: Vec<f64> = grouped.iter().flat_map(|p| p[g].iter().map(|o| o.1)).collect();
            if ys.len() < 2 {
                return Err(Error::invalid(format!("factor {} has fewer than 2 observations", g + 1)));
            }
            let m = crate::stats::mean(&ys);
            let sd = crate::stats::variance(&ys).sqrt();
            y_center.push(m);
            y_scale.push(if sd > 0.0 { sd } else { 1.0 });
        }

        // longitudinal sufficient statistics on the standardized scale
        let long: Vec<Vec<LongStats>> = grouped
            .iter()
            .map(|per| {
                (0..g_count)
                    .map(|g| {
                        let mut st = LongStats::default();
                        for &(age, y) in &per[g] {
                            let x = design(age, t_scale);
                            let ys = (y - y_center[g]) / y_scale[g];
                            st.n += 1.0;
                            st.xtx += x * x.transpose();
                            st.xty += x * ys;
                            st.yty += ys * ys;
                        }
                        st
                    })
                    .collect()
            })
            .collect();

        // pooled and ridge per-subject fits for initialisation and feature scaling
        let mut beta0 = Vec::with_capacity(g_count);
        let mut sigma0 = Vec::with_capacity(g_count);
        let mut theta0: Vec<Vec<Vector3<f64>>> = vec![Vec::with_capacity(g_count); n];
        for g in 0..g_count {
            let mut xtx = Matrix3::identity() * 1e-6;
            let mut xty = Vector3::zeros();
            let mut yty = 0.0;
            let mut cnt = 0.0;
            for s in &long {
                xtx += s[g].xtx;
                xty += s[g].xty;
                yty += s[g].yty;
                cnt += s[g].n;
            }
            let b = xtx
                .cholesky()
                .ok_or_else(|| Error::Numerical("singular pooled design".into()))?
                .solve(&xty);
            let rss = (yty - 2.0 * b.dot(&xty) + (b.transpose() * xtx * b)[0]).max(1e-12);
            beta0.push(b);
            sigma0.push((rss / cnt).sqrt().max(0.05));
            for (i, s) in long.iter().enumerate() {
                let lam = 1.0;
                let a = s[g].xtx + Matrix3::identity() * lam;
                let th = a
                    .cholesky()
                    .map(|c| c.solve(&(s[g].xty + b * lam)))
                    .unwrap_or(b);
                theta0[i].push(th);
            }
        }

        let links = config.links.clone();
        let n_feat = links.len();
        // feature standardization from the ridge trajectories at the observed time
        let mut feat_center = Vec::with_capacity(g_count * n_feat);
        let mut feat_scale = Vec::with_capacity(g_count * n_feat);
        for g in 0..g_count {
            for &f in &links {
                let vals: Vec<f64> = (0..n)
                    .map(|i| {
                        let age = (entry_ages[i] + times[i]).min(t_scale);
                        let w = feature_weights(f, 0.0, age, t_scale);
                        y_center[g] * w[0]
                            + y_scale[g] * (0..3).map(|k| w[k] * theta0[i][g][k]).sum::<f64>()
                    })
                    .collect();
                let m = crate::stats::mean(&vals);
                let sd = if vals.len() > 1 { crate::stats::variance(&vals).sqrt() } else { 0.0 };
                feat_center.push(m);
                feat_scale.push(if sd > 1e-12 * m.abs().max(1.0) { sd } else { 1.0 });
            }
        }

        let raw_covariates: Vec<Vec<f64>> = cohort
            .subjects
            .iter()
            .map(|s| s.hazard_covariates().to_vec())
            .collect();
        let n_cov = HAZARD_COVARIATE_NAMES.len();
        let cov_center: Vec<f64> = (0..n_cov)
            .map(|k| raw_covariates.iter().map(|w| w[k]).sum::<f64>() / n as f64)
            .collect();

        let upper = times.iter().copied().fold(0.0, f64::max);
        let event_times: Vec<f64> = times
            .iter()
            .zip(events)
            .filter(|(_, &e)| e == 1)
            .map(|(&t, _)| t)
            .collect();
        let hazard_template = BaselineHazard::at_quantiles(&event_times, config.n_knots, upper)?;
        let breaks = hazard_template.breakpoints();
        let n_psi = hazard_template.n_basis();
        let deg1 = hazard_template.degree + 1;

        let mut subjects = Vec::with_capacity(n);
        for i in 0..n {
            let mut rows: Vec<(f64, f64)> = quadrature::nodes(times[i], &breaks);
            rows.push((times[i], 0.0));
            let mut basis_first = Vec::with_capacity(rows.len());
            let mut basis = Vec::with_capacity(rows.len() * deg1);
            let mut link_a = Vec::with_capacity(rows.len() * g_count * n_feat);
            let mut link_v = Vec::with_capacity(rows.len() * g_count * n_feat);
            for &(t, _) in &rows {
                let (first, vals) = hazard_template.basis(t.min(upper))?;
                basis_first.push(first);
                basis.extend(vals);
                let age = (entry_ages[i] + t).min(t_scale);
                for g in 0..g_count {
                    for (j, &f) in links.iter().enumerate() {
                        let l = g * n_feat + j;
                        let w = feature_weights(f, 0.0, age, t_scale);
                        link_a.push((y_center[g] * w[0] - feat_center[l]) / feat_scale[l]);
                        let k = y_scale[g] / feat_scale[l];
                        link_v.push([w[0] * k, w[1] * k, w[2] * k]);
                    }
                }
            }
            subjects.push(SubjectCache {
                event: events[i] == 1,
                weights: rows[..rows.len() - 1].iter().map(|r| r.1).collect(),
                basis_first,
                basis,
                link_a,
                link_v,
                covariates: raw_covariates[i]
                    .iter()
                    .zip(&cov_center)
                    .map(|(w, c)| w - c)
                    .collect(),
                long: long[i].clone(),
            });
        }

        let layout = Layout::new(g_count, n_feat, n_cov, n_psi, n);
        let mut data = JointData {
            layout,
            links,
            factor_names: cohort.factor_names.clone(),
            subject_ids: cohort.subjects.iter().map(|s| s.id.clone()).collect(),
            t_scale,
            hazard_template,
            y_center,
            y_scale,
            feat_center,
            feat_scale,
            cov_center,
            subjects,
            entry_ages,
            times,
            raw_covariates,
            tau0: config.tau0,
            s2_prior: config.s2_prior,
            pi_prior: config.pi_prior,
            fixed_sd: config.fixed_prior_sd,
            re_sd_prior: config.re_sd_prior,
            spline_sd: config.spline_prior_sd,
            init: Vec::new(),
        };
        data.init = data.build_initial(&beta0, &sigma0, &theta0, events);
        Ok(data)
    }

    fn build_initial(
        &self,
        beta0: &[Vector3<f64>],
        sigma0: &[f64],
        theta0: &[Vec<Vector3<f64>>],
        events: &[u8],
    ) -> Vec<f64> {
        let l = &self.layout;
        let mut x = vec![0.0; l.len];
        for g in 0..l.g {
            for k in 0..3 {
                x[l.beta + 3 * g + k] = beta0[g][k];
            }
            x[l.log_sigma + g] = sigma0[g].ln();
            for k in 0..3 {
                let dev: Vec<f64> = theta0.iter().map(|t| t[g][k] - beta0[g][k]).collect();
                let sd = if dev.len() > 1 { crate::stats::variance(&dev).sqrt() } else { 0.0 };
                x[l.log_sre + 3 * g + k] = sd.max(0.05).ln();
            }
        }
        // piecewise-constant rates between knots, mapped to the spline by Greville abscissae
        let mut edges = vec![0.0];
        edges.extend(self.hazard_template.breakpoints());
        edges.push(self.hazard_template.boundary.1);
        let mut ev = vec![0.5; edges.len() - 1];
        let mut expo = vec![1e-9; edges.len() - 1];
        for (i, &t) in self.times.iter().enumerate() {
            for s in 0..edges.len() - 1 {
                let (a, b) = (edges[s], edges[s + 1]);
                expo[s] += (t.min(b) - a).max(0.0);
                if events[i] == 1 && t > a && t <= b {
                    ev[s] += 1.0;
                }
            }
        }
        let rates: Vec<f64> = ev.iter().zip(&expo).map(|(e, x)| (e / x).ln()).collect();
        let h = &self.hazard_template;
        let mut full = vec![h.boundary.0; h.degree + 1];
        full.extend(&h.interior);
        full.extend(vec![h.boundary.1; h.degree + 1]);
        for k in 0..l.n_psi {
            let grev = full[k + 1..k + 1 + h.degree].iter().sum::<f64>() / h.degree as f64;
            let s = edges.partition_point(|&e| e <= grev).clamp(1, edges.len() - 1) - 1;
            x[l.psi + k] = rates[s];
        }
        for j in 0..l.n_links {
            x[l.log_tau + j] = 0.5f64.ln();
        }
        x
    }

    pub fn dim(&self) -> usize {
        self.layout.len
    }

    pub fn n_subjects(&self) -> usize {
        self.layout.n
    }

    /// Deterministic starting point before jitter.
    pub fn initial_point(&self) -> Vec<f64> {
        self.init.clone()
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    fn unpack_link(&self, x: &[f64], l: usize) -> (f64, f64) {
        let lay = &self.layout;
        let d = x[lay.d + l];
        let tau = x[lay.log_tau + l].exp();
        (d, tau)
    }

    /// `α̃` per link (standardized feature scale).
    fn alphas(&self, x: &[f64]) -> Vec<f64> {
        (0..self.layout.n_links)
            .map(|l| {
                let (d, tau) = self.unpack_link(x, l);
                d * tau
            })
            .collect()
    }

    fn scaled_cholesky(&self, x: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
        let lay = &self.layout;
        let (lc, lp) = correlation_cholesky(&x[lay.cpc..lay.cpc + n_cpc(lay.q)], lay.q)?;
        let mut ls = lc.clone();
        for j in 0..lay.q {
            let s = x[lay.log_sre + j].exp();
            for k in 0..=j {
                ls[(j, k)] *= s;
            }
        }
        Ok((lc, ls, lp))
    }

    /// Standardized coefficients `θ_g = β_g + b_g` for subject `i`.
    fn thetas(&self, x: &[f64], ls: &DMatrix<f64>, i: usize) -> (Vec<f64>, Vec<f64>) {
        let lay = &self.layout;
        let z = &x[lay.z + i * lay.q..lay.z + (i + 1) * lay.q];
        let mut b = vec![0.0; lay.q];
        for j in 0..lay.q {
            let mut acc = 0.0;
            for k in 0..=j {
                acc += ls[(j, k)] * z[k];
            }
            b[j] = acc;
        }
        let theta: Vec<f64> = (0..lay.q).map(|j| x[lay.beta + j] + b[j]).collect();
        (theta, b)
    }

    /// Log posterior (up to a constant) and its gradient.
    pub fn log_posterior_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        match self.eval(x, Some(grad)) {
            Ok(v) if v.is_finite() => v,
            _ => f64::NEG_INFINITY,
        }
    }

    pub fn log_posterior(&self, x: &[f64]) -> f64 {
        match self.eval(x, None) {
            Ok(v) if v.is_finite() => v,
            _ => f64::NEG_INFINITY,
        }
    }

    fn eval(&self, x: &[f64], mut grad: Option<&mut [f64]>) -> Result<f64> {
        let lay = self.layout;
        if x.len() != lay.len {
            return Err(Error::invalid("parameter vector has the wrong length"));
        }
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let want = grad.is_some();
        let mut scratch = if want { vec![0.0; lay.len] } else { Vec::new() };
        let gr = &mut scratch;

        let n_feat = self.links.len();
        let sigma: Vec<f64> = (0..lay.g).map(|g| x[lay.log_sigma + g].exp()).collect();
        let psi = &x[lay.psi..lay.psi + lay.n_psi];
        let gamma = &x[lay.gamma..lay.gamma + lay.n_cov];
        let alpha = self.alphas(x);
        let (lc, ls, lp_corr) = self.scaled_cholesky(x)?;
        let deg1 = self.hazard_template.degree + 1;

        let mut lp = lp_corr;
        let mut g_ls = DMatrix::<f64>::zeros(lay.q, lay.q);
        let mut d_alpha = vec![0.0; lay.n_links];
        let mut ca_sum = vec![0.0; lay.n_links];
        let mut cv_sum = vec![[0.0; 3]; lay.n_links];

        for (i, s) in self.subjects.iter().enumerate() {
            let (theta, _) = self.thetas(x, &ls, i);
            let mut d_theta = vec![0.0; lay.q];

            for g in 0..lay.g {
                let st = &s.long[g];
                if st.n == 0.0 {
                    continue;
                }
                let th = Vector3::new(theta[3 * g], theta[3 * g + 1], theta[3 * g + 2]);
                let xtxth = st.xtx * th;
                let r2 = (st.yty - 2.0 * th.dot(&st.xty) + th.dot(&xtxth)).max(0.0);
                let s2 = sigma[g] * sigma[g];
                lp += -st.n * (sigma[g].ln() + LN_SQRT_2PI) - 0.5 * r2 / s2;
                if want {
                    let dth = (st.xty - xtxth) / s2;
                    for k in 0..3 {
                        d_theta[3 * g + k] += dth[k];
                    }
                    gr[lay.log_sigma + g] += -st.n + r2 / s2;
                }
            }

            let base: f64 = s.covariates.iter().zip(gamma).map(|(w, g)| w * g).sum();
            let n_rows = s.weights.len() + 1;
            let mut c_sum = 0.0;
            // per-link sums of c·a and c·v over rows
            ca_sum.iter_mut().for_each(|v| *v = 0.0);
            cv_sum.iter_mut().for_each(|v| *v = [0.0; 3]);
            for r in 0..n_rows {
                let is_event_row = r + 1 == n_rows;
                if is_event_row && !s.event {
                    continue;
                }
                let first = s.basis_first[r];
                let bv = &s.basis[r * deg1..(r + 1) * deg1];
                let mut eta = base;
                for (b, p) in bv.iter().zip(&psi[first..first + deg1]) {
                    eta += b * p;
                }
                let row_links = r * lay.n_links;
                let a_row = &s.link_a[row_links..row_links + lay.n_links];
                let v_row = &s.link_v[row_links..row_links + lay.n_links];
                for l in 0..lay.n_links {
                    let g = l / n_feat;
                    let v = &v_row[l];
                    let f = a_row[l] + v[0] * theta[3 * g] + v[1] * theta[3 * g + 1] + v[2] * theta[3 * g + 2];
                    eta += alpha[l] * f;
                }
                let c = if is_event_row {
                    lp += eta;
                    1.0
                } else {
                    let h = s.weights[r] * eta.exp();
                    lp -= h;
                    -h
                };
                if !want {
                    continue;
                }
                c_sum += c;
                for (gp, b) in gr[lay.psi + first..lay.psi + first + deg1].iter_mut().zip(bv) {
                    *gp += c * b;
                }
                for l in 0..lay.n_links {
                    let v = &v_row[l];
                    ca_sum[l] += c * a_row[l];
                    let cv = &mut cv_sum[l];
                    cv[0] += c * v[0];
                    cv[1] += c * v[1];
                    cv[2] += c * v[2];
                }
            }
            if want {
                for l in 0..lay.n_links {
                    let g = l / n_feat;
                    let cv = cv_sum[l];
                    d_alpha[l] += ca_sum[l]
                        + cv[0] * theta[3 * g]
                        + cv[1] * theta[3 * g + 1]
                        + cv[2] * theta[3 * g + 2];
                    for k in 0..3 {
                        d_theta[3 * g + k] += alpha[l] * cv[k];
                    }
                }
            }
            if !lp.is_finite() {
                return Ok(f64::NEG_INFINITY);
            }

            let z = &x[lay.z + i * lay.q..lay.z + (i + 1) * lay.q];
            lp -= 0.5 * z.iter().map(|v| v * v).sum::<f64>();
            if want {
                for (k, w) in s.covariates.iter().enumerate() {
                    gr[lay.gamma + k] += c_sum * w;
                }
                for j in 0..lay.q {
                    gr[lay.beta + j] += d_theta[j];
                }
                let zoff = lay.z + i * lay.q;
                for k in 0..lay.q {
                    let mut acc = -z[k];
                    for j in k..lay.q {
                        acc += ls[(j, k)] * d_theta[j];
                    }
                    gr[zoff + k] = acc;
                }
                for j in 0..lay.q {
                    if d_theta[j] != 0.0 {
                        for k in 0..=j {
                            g_ls[(j, k)] += d_theta[j] * z[k];
                        }
                    }
                }
            }
        }

        // fixed effects, covariate effects, spline smoothness
        let fv = self.fixed_sd * self.fixed_sd;
        for j in 0..lay.q {
            let b = x[lay.beta + j];
            lp -= 0.5 * b * b / fv;
            if want {
                gr[lay.beta + j] -= b / fv;
            }
        }
        for k in 0..lay.n_cov {
            let c = gamma[k];
            lp -= 0.5 * c * c / fv;
            if want {
                gr[lay.gamma + k] -= c / fv;
            }
        }
        let (sd_first, sd_diff) = self.spline_sd;
        lp -= 0.5 * (psi[0] / sd_first).powi(2);
        if want {
            gr[lay.psi] -= psi[0] / (sd_first * sd_first);
        }
        for k in 1..lay.n_psi {
            let dlt = psi[k] - psi[k - 1];
            lp -= 0.5 * (dlt / sd_diff).powi(2);
            if want {
                let gd = dlt / (sd_diff * sd_diff);
                gr[lay.psi + k] -= gd;
                gr[lay.psi + k - 1] += gd;
            }
        }

        // random-effect scales and correlation
        for j in 0..lay.q {
            let ls_j = x[lay.log_sre + j];
            let s = ls_j.exp();
            let (v, dv) = priors::half_normal_log(s, self.re_sd_prior);
            lp += v + ls_j;
            if want {
                let mut ds = dv;
                for k in 0..=j {
                    ds += g_ls[(j, k)] * lc[(j, k)];
                }
                gr[lay.log_sre + j] += ds * s + 1.0;
            }
        }
        if want {
            let mut up = DMatrix::<f64>::zeros(lay.q, lay.q);
            for j in 0..lay.q {
                let s = x[lay.log_sre + j].exp();
                for k in 0..=j {
                    up[(j, k)] = s * g_ls[(j, k)];
                }
            }
            let cg = correlation_cholesky_grad(&x[lay.cpc..lay.cpc + n_cpc(lay.q)], lay.q, &up);
            for (p, v) in cg.into_iter().enumerate() {
                gr[lay.cpc + p] += v;
            }
        }

        // spike-and-slab links
        let ls2 = x[lay.log_s2];
        let s2 = ls2.exp();
        let s = s2.sqrt();
        let mut d_s = 0.0;
        let pis: Vec<f64> = (0..lay.g).map(|g| logistic(x[lay.logit_pi + g])).collect();
        let mut d_pi = vec![0.0; lay.g];
        for l in 0..lay.n_links {
            let g = l / n_feat;
            let (d, tau) = self.unpack_link(x, l);
            let pr = link_prior(d, tau, pis[g], self.tau0, s);
            lp += pr.value + tau.ln();
            if want {
                let da = d_alpha[l];
                gr[lay.d + l] += da * tau + pr.d_d;
                gr[lay.log_tau + l] += da * d * tau + pr.d_tau * tau + 1.0;
                d_pi[g] += pr.d_pi;
                d_s += pr.d_s;
            }
        }
        let (pa, pb) = self.pi_prior;
        for g in 0..lay.g {
            let p = pis[g];
            lp += pa * p.ln() + pb * (1.0 - p).ln();
            if want {
                gr[lay.logit_pi + g] += d_pi[g] * p * (1.0 - p) + pa * (1.0 - p) - pb * p;
            }
        }
        let (ia, ib) = self.s2_prior;
        let (v, dv) = priors::inv_gamma_log(s2, ia, ib);
        lp += v + ls2;
        if want {
            gr[lay.log_s2] += dv * s2 + 1.0 + d_s * 0.5 * s;
        }

        if let Some(g) = grad {
            g.copy_from_slice(gr);
        }
        Ok(lp)
    }

    /// Names of the derived quantities reported per draw.
    pub fn derived_names(&self) -> Vec<String> {
        let mut out: Vec<String> = HAZARD_COVARIATE_NAMES.iter().map(|c| format!("gamma_{c}")).collect();
        for g in &self.factor_names {
            for f in &self.links {
                out.push(format!("alpha_{g}_{}", f.name()));
            }
        }
        for g in &self.factor_names {
            for k in 0..3 {
                out.push(format!("beta_{g}_{k}"));
            }
        }
        for g in &self.factor_names {
            out.push(format!("sigma_{g}"));
        }
        for g in &self.factor_names {
            for k in 0..3 {
                out.push(format!("re_sd_{g}_{k}"));
            }
        }
        for g in &self.factor_names {
            out.push(format!("pi_{g}"));
        }
        out.push("s2".into());
        for g in &self.factor_names {
            for f in &self.links {
                out.push(format!("inclusion_{g}_{}", f.name()));
            }
        }
        out
    }

    /// Data-scale quantities for one unconstrained draw, ordered as
    /// [`derived_names`](Self::derived_names).
    pub fn derived(&self, x: &[f64]) -> Vec<f64> {
        let lay = &self.layout;
        let n_feat = self.links.len();
        let mut out: Vec<f64> = x[lay.gamma..lay.gamma + lay.n_cov].to_vec();
        let alpha = self.alphas(x);
        for l in 0..lay.n_links {
            out.push(alpha[l] / self.feat_scale[l]);
        }
        for g in 0..lay.g {
            for k in 0..3 {
                let b = x[lay.beta + 3 * g + k] * self.y_scale[g];
                out.push(if k == 0 { b + self.y_center[g] } else { b });
            }
        }
        for g in 0..lay.g {
            out.push(x[lay.log_sigma + g].exp() * self.y_scale[g]);
        }
        for g in 0..lay.g {
            for k in 0..3 {
                out.push(x[lay.log_sre + 3 * g + k].exp() * self.y_scale[g]);
            }
        }
        let pis: Vec<f64> = (0..lay.g).map(|g| logistic(x[lay.logit_pi + g])).collect();
        out.extend(&pis);
        let s2 = x[lay.log_s2].exp();
        out.push(s2);
        for l in 0..lay.n_links {
            let (d, tau) = self.unpack_link(x, l);
            out.push(link_prior(d, tau, pis[l / n_feat], self.tau0, s2.sqrt()).inclusion);
        }
        out
    }

    /// Data-scale state for an unconstrained point. The spline coefficients
    /// absorb the covariate and feature centering.
    pub fn state(&self, x: &[f64]) -> Result<JointModelState> {
        let lay = &self.layout;
        let n_feat = self.links.len();
        let alpha = self.alphas(x);
        let gamma = x[lay.gamma..lay.gamma + lay.n_cov].to_vec();
        let mut shift = -gamma.iter().zip(&self.cov_center).map(|(g, c)| g * c).sum::<f64>();
        for l in 0..lay.n_links {
            shift -= alpha[l] * self.feat_center[l] / self.feat_scale[l];
        }
        let mut hazard = self.hazard_template.clone();
        hazard.coefficients = x[lay.psi..lay.psi + lay.n_psi].iter().map(|p| p + shift).collect();
        let (lc, _, _) = self.scaled_cholesky(x)?;
        Ok(JointModelState {
            links: self.links.clone(),
            beta: (0..lay.g)
                .map(|g| {
                    let s = self.y_scale[g];
                    [
                        self.y_center[g] + s * x[lay.beta + 3 * g],
                        s * x[lay.beta + 3 * g + 1],
                        s * x[lay.beta + 3 * g + 2],
                    ]
                })
                .collect(),
            sigma: (0..lay.g).map(|g| x[lay.log_sigma + g].exp() * self.y_scale[g]).collect(),
            hazard,
            gamma,
            alpha: (0..lay.g)
                .map(|g| (0..n_feat).map(|j| alpha[g * n_feat + j] / self.feat_scale[g * n_feat + j]).collect())
                .collect(),
            re_sd: (0..lay.q).map(|j| x[lay.log_sre + j].exp() * self.y_scale[j / 3]).collect(),
            re_corr_chol: lc,
            pi: (0..lay.g).map(|g| logistic(x[lay.logit_pi + g])).collect(),
            s2: x[lay.log_s2].exp(),
            t_scale: self.t_scale,
        })
    }

    /// Survival record of subject `i` with its data-scale random effects at `x`.
    pub fn survival_record(&self, i: usize, x: &[f64]) -> Result<SurvivalRecord> {
        let (_, ls, _) = self.scaled_cholesky(x)?;
        let (_, b) = self.thetas(x, &ls, i);
        Ok(SurvivalRecord {
            observed_time: self.times[i],
            event: u8::from(self.subjects[i].event),
            covariates: self.raw_covariates[i].clone(),
            entry_age: self.entry_ages[i],
            random_effects: (0..self.layout.g)
                .map(|g| {
                    let s = self.y_scale[g];
                    [s * b[3 * g], s * b[3 * g + 1], s * b[3 * g + 2]]
                })
                .collect(),
        })
    }

    /// Longitudinal plus survival log-likelihood of subject `i` (no priors).
    pub fn subject_loglik(&self, i: usize, x: &[f64]) -> Result<f64> {
        let lay = &self.layout;
        let mut only = self.clone();
        only.subjects = vec![self.subjects[i].clone()];
        only.layout.n = 1;
        only.layout.len = lay.z + lay.q;
        let mut xi = x[..lay.z].to_vec();
        xi.extend_from_slice(&x[lay.z + i * lay.q..lay.z + (i + 1) * lay.q]);
        let with = only.eval(&xi, None)?;
        let z = &xi[lay.z..];
        only.subjects.clear();
        only.layout.n = 0;
        only.layout.len = lay.z;
        let without = only.eval(&xi[..lay.z], None)?;
        Ok(with - without + 0.5 * z.iter().map(|v| v * v).sum::<f64>())
    }

    /// Jacobian of the standardized-to-data scaling for longitudinal
    /// log-likelihoods: `Σ_g n_ig·ln sd_g` for subject `i`.
    pub fn longitudinal_scale_correction(&self, i: usize) -> f64 {
        self.subjects[i]
            .long
            .iter()
            .zip(&self.y_scale)
            .map(|(s, sd)| s.n * sd.ln())
            .sum()
    }
}

impl LogDensity for JointData {
    fn dim(&self) -> usize {
        self.layout.len
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.log_posterior_grad(x, grad)
    }
}

//! Fitting entry point.

use std::path::Path;

use rand::Rng;

use super::model::JointData;
use super::nuts::{self, NutsConfig, NutsDraw};
use super::priors::compute_tau0;
use super::summary::{write_draw_archive, PosteriorSummary};
use crate::cohort::Cohort;
use crate::error::{Error, Result};
use crate::legendre::Feature;
use crate::seed;

#[derive(Debug, Clone)]
pub struct JointConfig {
    /// Features linked into the hazard for every factor.
    pub links: Vec<Feature>,
    pub n_knots: usize,
    pub tau0: f64,
    /// Inverse-Gamma `(a, b)` for `s²`.
    pub s2_prior: (f64, f64),
    /// Beta `(c, d)` for `π_g`.
    pub pi_prior: (f64, f64),
    pub fixed_prior_sd: f64,
    pub re_sd_prior: f64,
    /// Prior sds of the first spline coefficient and of successive differences.
    pub spline_prior_sd: (f64, f64),
    pub nuts: NutsConfig,
    /// Half-width of the uniform jitter applied to the starting point.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            links: Feature::ALL.to_vec(),
            n_knots: 5,
            tau0: compute_tau0(1.0, 10.0).expect("valid constants"),
            s2_prior: (1.0, 1.0),
            pi_prior: (1.0, 1.0),
            fixed_prior_sd: 10.0,
            re_sd_prior: 1.0,
            spline_prior_sd: (10.0, 1.0),
            nuts: NutsConfig::default(),
            jitter: 0.1,
            seed: 1,
        }
    }
}

impl JointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.links.is_empty() {
            return Err(Error::invalid("at least one linked feature is required"));
        }
        let positive = [
            self.tau0,
            self.s2_prior.0,
            self.s2_prior.1,
            self.pi_prior.0,
            self.pi_prior.1,
            self.fixed_prior_sd,
            self.re_sd_prior,
            self.spline_prior_sd.0,
            self.spline_prior_sd.1,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("prior parameters must be > 0"));
        }
        if self.nuts.n_samples < 2 || self.nuts.max_depth == 0 {
            return Err(Error::invalid("need >= 2 samples and max_depth >= 1"));
        }
        if !(self.nuts.target_accept > 0.0 && self.nuts.target_accept < 1.0) {
            return Err(Error::invalid("target_accept must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerStats {
    pub divergences: usize,
    pub mean_accept: f64,
    pub step_size: f64,
    pub mean_depth: f64,
    pub total_leapfrog: usize,
}

#[derive(Debug, Clone)]
pub struct JointFit {
    pub names: Vec<String>,
    /// Derived data-scale quantities per retained draw.
    pub draws: Vec<Vec<f64>>,
    pub summary: PosteriorSummary,
    pub stats: SamplerStats,
    /// Posterior mean of the unconstrained parameters.
    pub mean_position: Vec<f64>,
}

impl JointFit {
    /// Posterior means keyed by parameter name.
    pub fn estimates(&self) -> Vec<(String, f64)> {
        self.summary
            .parameters
            .iter()
            .map(|p| (p.parameter.clone(), p.mean))
            .collect()
    }

    pub fn write_archive(&self, path: &Path) -> Result<()> {
        write_draw_archive(path, &self.names, &self.draws)
    }
}

fn starting_point<R: Rng>(data: &JointData, jitter: f64, rng: &mut R) -> Result<Vec<f64>> {
    let base = data.initial_point();
    for _ in 0..10 {
        let x: Vec<f64> = base
            .iter()
            .map(|v| v + jitter * (2.0 * rng.random::<f64>() - 1.0))
            .collect();
        let mut g = vec![0.0; x.len()];
        let lp = data.log_posterior_grad(&x, &mut g);
        if lp.is_finite() && g.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    Err(Error::Numerical(
        "log posterior not finite at 10 jittered starting points".into(),
    ))
}

/// Fits the joint model with `events` as the event indicators.
pub fn fit_joint_model(cohort: &Cohort, events: &[u8], config: &JointConfig) -> Result<JointFit> {
    let data = JointData::new(cohort, events, config)?;
    fit_prepared(&data, config)
}

pub(crate) fn fit_prepared(data: &JointData, config: &JointConfig) -> Result<JointFit> {
    let mut rng = seed::rng_for(config.seed, &[seed::stage::JOINT]);
    let init = starting_point(data, config.jitter, &mut rng)?;
    let draws: Vec<NutsDraw> = nuts::sample(data, &init, &config.nuts, &mut rng);
    let names = data.derived_names();
    let derived: Vec<Vec<f64>> = draws.iter().map(|d| data.derived(&d.position)).collect();
    let summary = PosteriorSummary::from_draws(&names, &derived)?;
    let n = draws.len() as f64;
    let mut mean_position = vec![0.0; data.dim()];
    for d in &draws {
        for (m, v) in mean_position.iter_mut().zip(&d.position) {
            *m += v / n;
        }
    }
    let stats = SamplerStats {
        divergences: draws.iter().filter(|d| d.divergent).count(),
        mean_accept: draws.iter().map(|d| d.accept_stat).sum::<f64>() / n,
        step_size: draws.last().map_or(f64::NAN, |d| d.step_size),
        mean_depth: draws.iter().map(|d| d.depth as f64).sum::<f64>() / n,
        total_leapfrog: draws.iter().map(|d| d.n_leapfrog).sum(),
    };
    Ok(JointFit {
        names,
        draws: derived,
        summary,
        stats,
        mean_position,
    })
}

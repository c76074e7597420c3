//! Joint longitudinal–survival model.
//!
//! Each factor `g` follows `y = Ψ_g(age) + ε`, `Ψ_g` a Legendre trajectory
//! with subject-level coefficients `β_g + b_gi`. The hazard on the follow-up
//! scale is `λ₀(t) exp(wᵀγ + Σ_g Σ_j α_gj f_gj(s_i + t))` with `s_i` the entry
//! age and `f_gj` the value, slope or area of `Ψ_g`.

pub mod bspline;
mod fit;
mod model;
mod nuts;
pub mod priors;
pub mod quadrature;
pub mod summary;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use bspline::{log_baseline_hazard, BaselineHazard};
pub use fit::{fit_joint_model, JointConfig, JointFit, SamplerStats};
pub use model::JointData;
pub use nuts::{LogDensity, NutsConfig, NutsDraw};
pub use priors::{
    compute_tau0, halfnormal_mixture_logprior, implied_covariance, noncentered_random_effects,
    spike_slab_logprior,
};
pub use summary::{ParameterSummary, PosteriorSummary};

use crate::error::{Error, Result};
use crate::legendre::{feature_weights, Feature};
use crate::stats::norm_logpdf;

/// Parameter values on the data scale.
#[derive(Debug, Clone)]
pub struct JointModelState {
    pub links: Vec<Feature>,
    /// Fixed trajectory coefficients per factor.
    pub beta: Vec<[f64; 3]>,
    pub sigma: Vec<f64>,
    pub hazard: BaselineHazard,
    pub gamma: Vec<f64>,
    /// `alpha[g][j]` multiplies feature `links[j]` of factor `g`.
    pub alpha: Vec<Vec<f64>>,
    pub re_sd: Vec<f64>,
    pub re_corr_chol: DMatrix<f64>,
    pub pi: Vec<f64>,
    pub s2: f64,
    /// Legendre time scale.
    pub t_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub observed_time: f64,
    pub event: u8,
    pub covariates: Vec<f64>,
    pub entry_age: f64,
    /// Random effects per factor on the data scale.
    pub random_effects: Vec<[f64; 3]>,
}

impl JointModelState {
    /// Linked feature `j` of factor `g` at `age` for the given random effects.
    pub fn feature(&self, g: usize, j: usize, b: &[f64; 3], age: f64) -> f64 {
        let w = feature_weights(self.links[j], 0.0, age, self.t_scale);
        (0..3).map(|k| w[k] * (self.beta[g][k] + b[k])).sum()
    }
}

/// `log λ₀(t) + wᵀγ + Σ_g Σ_j α_gj f_gj(s + t)`.
pub fn log_hazard(state: &JointModelState, record: &SurvivalRecord, t: f64) -> Result<f64> {
    if record.covariates.len() != state.gamma.len() {
        return Err(Error::invalid("covariate length does not match gamma"));
    }
    if record.random_effects.len() != state.beta.len() {
        return Err(Error::invalid("random effects do not match the factor count"));
    }
    let age = record.entry_age + t;
    if !(0.0..=state.t_scale).contains(&age) {
        return Err(Error::OutOfRange(format!("age {age} outside [0, {}]", state.t_scale)));
    }
    let mut eta = log_baseline_hazard(&state.hazard, t)?;
    eta += record.covariates.iter().zip(&state.gamma).map(|(w, g)| w * g).sum::<f64>();
    for (g, alphas) in state.alpha.iter().enumerate() {
        for (j, a) in alphas.iter().enumerate() {
            if *a != 0.0 {
                eta += a * state.feature(g, j, &record.random_effects[g], age);
            }
        }
    }
    Ok(eta)
}

/// `∫₀ᵀ λ(s) ds` by Gauss–Legendre quadrature split at the spline knots.
pub fn cumulative_hazard(state: &JointModelState, record: &SurvivalRecord, upper: f64) -> Result<f64> {
    if upper < 0.0 {
        return Err(Error::invalid("upper limit must be >= 0"));
    }
    let mut err = None;
    let value = quadrature::cumulative_hazard(
        |t| match log_hazard(state, record, t) {
            Ok(v) => v,
            Err(e) => {
                err.get_or_insert(e);
                0.0
            }
        },
        upper,
        &state.hazard.breakpoints(),
    )?;
    match err {
        Some(e) => Err(e),
        None => Ok(value),
    }
}

/// `δ·log λ(T) − Λ(T)`.
pub fn survival_loglik(state: &JointModelState, record: &SurvivalRecord) -> Result<f64> {
    if !(record.observed_time > 0.0) {
        return Err(Error::invalid("observed time must be > 0"));
    }
    let cum = cumulative_hazard(state, record, record.observed_time)?;
    let event = if record.event == 1 {
        log_hazard(state, record, record.observed_time)?
    } else {
        0.0
    };
    Ok(event - cum)
}

/// Gaussian log-likelihood of `(age, y)` observations of factor `g`.
pub fn longitudinal_loglik(
    state: &JointModelState,
    g: usize,
    random_effects: &[f64; 3],
    observations: &[(f64, f64)],
) -> Result<f64> {
    let sigma = state.sigma[g];
    if !(sigma > 0.0) {
        return Err(Error::invalid("sigma must be > 0"));
    }
    observations
        .iter()
        .map(|&(age, y)| {
            let w = feature_weights(Feature::Value, 0.0, age, state.t_scale);
            let mu: f64 = (0..3).map(|k| w[k] * (state.beta[g][k] + random_effects[k])).sum();
            Ok(norm_logpdf(y, mu, sigma))
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::LN_SQRT_2PI;

    fn flat_state(links: Vec<Feature>, alpha: Vec<Vec<f64>>, gamma: Vec<f64>) -> JointModelState {
        let g = alpha.len();
        JointModelState {
            links,
            beta: vec![[97.5, 0.0, 0.0]; g],
            sigma: vec![1.0; g],
            hazard: BaselineHazard::new((0.0, 20.0), vec![5.0], 3, vec![0.0; 5]).unwrap(),
            gamma,
            alpha,
            re_sd: vec![1.0; 3 * g],
            re_corr_chol: DMatrix::identity(3 * g, 3 * g),
            pi: vec![0.5; g],
            s2: 1.0,
            t_scale: 31.0,
        }
    }

    fn record(w: Vec<f64>, g: usize, t: f64, event: u8) -> SurvivalRecord {
        SurvivalRecord {
            observed_time: t,
            event,
            covariates: w,
            entry_age: 3.0,
            random_effects: vec![[0.0; 3]; g],
        }
    }

    #[test]
    fn log_hazard_examples() {
        let s = flat_state(vec![Feature::Value], vec![vec![0.0]], vec![0.0]);
        assert_eq!(log_hazard(&s, &record(vec![1.0], 1, 2.0, 1), 1.0).unwrap(), 0.0);
        let s = flat_state(vec![Feature::Value], vec![vec![0.0]], vec![2f64.ln()]);
        assert!((log_hazard(&s, &record(vec![1.0], 1, 2.0, 1), 1.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        let s = flat_state(vec![Feature::Value], vec![vec![0.02]], vec![0.0]);
        assert!((log_hazard(&s, &record(vec![0.0], 1, 2.0, 1), 1.0).unwrap() - 1.95).abs() < 1e-12);
    }

    #[test]
    fn survival_examples() {
        let s = flat_state(vec![Feature::Value], vec![vec![0.0]], vec![0.0]);
        let r = record(vec![0.0], 1, 2.5, 0);
        assert!((survival_loglik(&s, &r).unwrap() + 2.5).abs() < 1e-12);
        let r = record(vec![0.0], 1, 1.0, 1);
        assert!((survival_loglik(&s, &r).unwrap() + 1.0).abs() < 1e-12);
        assert!((cumulative_hazard(&s, &r, 4.2).unwrap() - 4.2).abs() < 1e-12);
        assert_eq!(cumulative_hazard(&s, &r, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn linked_area_feature_integrates_trajectory() {
        // Ψ ≡ 97.5 so the area from 0 to age is 97.5·age and λ = exp(α·97.5·(s + t)).
        let s = flat_state(vec![Feature::Area], vec![vec![0.001]], vec![0.0]);
        let r = record(vec![0.0], 1, 4.0, 1);
        let a: f64 = 0.001 * 97.5;
        let exact = ((a * (3.0 + 4.0)).exp() - (a * 3.0).exp()) / a;
        assert!((cumulative_hazard(&s, &r, 4.0).unwrap() - exact).abs() < 1e-10 * exact);
        let ll = survival_loglik(&s, &r).unwrap();
        assert!((ll - (a * 7.0 - exact)).abs() < 1e-9);
    }

    #[test]
    fn longitudinal_examples() {
        let s = flat_state(vec![Feature::Value], vec![vec![0.0]], vec![0.0]);
        let b = [0.0; 3];
        let ll = longitudinal_loglik(&s, 0, &b, &[(2.0, 97.5), (9.0, 97.5)]).unwrap();
        assert!((ll + 2.0 * LN_SQRT_2PI).abs() < 1e-12);
        assert!((LN_SQRT_2PI - 0.918939).abs() < 1e-6);
        let mut wide = s.clone();
        wide.sigma[0] = 2.0;
        let l2 = longitudinal_loglik(&wide, 0, &b, &[(2.0, 97.5)]).unwrap();
        assert!((l2 - (-LN_SQRT_2PI - 2f64.ln())).abs() < 1e-12);
        assert_eq!(longitudinal_loglik(&s, 0, &b, &[]).unwrap(), 0.0);
    }

    #[test]
    fn input_checks() {
        let s = flat_state(vec![Feature::Value], vec![vec![0.0]], vec![0.0]);
        assert!(log_hazard(&s, &record(vec![], 1, 1.0, 1), 0.5).is_err());
        assert!(survival_loglik(&s, &record(vec![0.0], 1, 0.0, 1)).is_err());
        assert!(log_hazard(&s, &record(vec![0.0], 1, 1.0, 1), 40.0).is_err());
    }
}

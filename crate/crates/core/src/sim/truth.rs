//! Generating parameters for simulated cohorts.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix};

use crate::error::{Error, Result};
use crate::kvconfig::KvConfig;

/// Covariates entering the misclassification model, in coefficient order.
/// BMI and death age are standardised with fixed constants.
pub const DELTA_COVARIATE_NAMES: [&str; 7] =
    ["intercept", "sex", "race", "lh", "ah", "bmi_std", "death_age_std"];

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateTruth {
    pub p_sex: f64,
    pub p_race: f64,
    /// Education categories are below high school (`p_lh`), above high
    /// school (`p_ah`) and high school otherwise.
    pub p_lh: f64,
    pub p_ah: f64,
    pub bmi_mean: f64,
    pub bmi_sd: f64,
    /// Poisson means of heart failure, MI and stroke counts.
    pub nonfatal_rates: [f64; 3],
}

impl Default for CovariateTruth {
    fn default() -> Self {
        CovariateTruth {
            p_sex: 0.45,
            p_race: 0.25,
            p_lh: 0.2,
            p_ah: 0.4,
            bmi_mean: 27.5,
            bmi_sd: 4.5,
            nonfatal_rates: [0.2, 0.1, 0.15],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTruth {
    pub n: usize,
    pub factor_names: Vec<String>,
    /// Legendre coefficients of the population trajectory per factor.
    pub beta: Vec<[f64; 3]>,
    pub sigma: Vec<f64>,
    /// Random-effect standard deviations per factor.
    pub re_sd: Vec<[f64; 3]>,
    /// Correlations (b0,b1), (b0,b2), (b1,b2) within each factor.
    pub re_corr_within: [f64; 3],
    /// Correlation between random intercepts of different factors.
    pub re_corr_between: f64,
    /// Hazard coefficients for base age, BMI, LH, AH, sex, race.
    pub gamma: [f64; 6],
    /// Current-value link per factor.
    pub alpha: Vec<f64>,
    pub log_hazard_offset: f64,
    pub weibull_shape: f64,
    /// Mean of the exponential censoring time (competing death).
    pub censoring_mean: f64,
    /// Administrative end of follow-up; subjects reaching it are alive.
    pub follow_up: f64,
    pub visit_interval: f64,
    pub max_visits: usize,
    pub entry_age_max: f64,
    pub t_max: f64,
    pub covariates: CovariateTruth,
    /// Misclassification coefficients for `C = 0` and `C = 1`.
    pub delta: [Vec<f64>; 2],
}

impl Default for SimulationTruth {
    /// Three factors (blood pressure, glucose, cholesterol), uncalibrated.
    fn default() -> Self {
        let mut delta0 = vec![0.0; DELTA_COVARIATE_NAMES.len()];
        let mut delta1 = delta0.clone();
        delta0[0] = 0.77;
        delta1[0] = 2.83;
        SimulationTruth {
            n: 600,
            factor_names: vec!["bp".into(), "glucose".into(), "chol".into()],
            beta: vec![[125.0, 6.0, 1.0], [105.0, 4.0, 1.0], [200.0, -8.0, -3.0]],
            sigma: vec![8.0, 15.0, 20.0],
            re_sd: vec![[12.0, 5.0, 2.0], [18.0, 6.0, 3.0], [30.0, 10.0, 4.0]],
            re_corr_within: [0.3, -0.1, 0.2],
            re_corr_between: 0.2,
            gamma: [0.05, 0.02, 0.035, -0.489, 0.474, -0.470],
            alpha: vec![-0.05, 0.0, 0.032],
            log_hazard_offset: -3.0,
            weibull_shape: 1.75,
            censoring_mean: 8.0,
            follow_up: 12.0,
            visit_interval: 3.0,
            max_visits: 5,
            entry_age_max: 19.0,
            t_max: 31.0,
            covariates: CovariateTruth::default(),
            delta: [delta0, delta1],
        }
    }
}

impl SimulationTruth {
    pub fn n_factors(&self) -> usize {
        self.factor_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.n_factors();
        if g == 0 {
            return Err(Error::invalid("at least one factor is required"));
        }
        if self.beta.len() != g || self.sigma.len() != g || self.re_sd.len() != g || self.alpha.len() != g {
            return Err(Error::invalid("per-factor truth vectors must match the factor count"));
        }
        if !(self.weibull_shape > 0.0) {
            return Err(Error::invalid("Weibull shape must be > 0"));
        }
        if !(self.censoring_mean > 0.0) {
            return Err(Error::invalid("censoring mean must be > 0"));
        }
        if !(self.follow_up > 0.0) {
            return Err(Error::invalid("follow-up must be > 0"));
        }
        if self.sigma.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid("residual sds must be > 0"));
        }
        if !(self.visit_interval > 0.0) || self.max_visits == 0 {
            return Err(Error::invalid("visit schedule must be positive"));
        }
        let last_visit = self.entry_age_max + (self.max_visits - 1) as f64 * self.visit_interval;
        if last_visit > self.t_max + 1e-9 {
            return Err(Error::invalid(format!(
                "visits reach age {last_visit} beyond t_max {}",
                self.t_max
            )));
        }
        if self.delta.iter().any(|d| d.len() != DELTA_COVARIATE_NAMES.len()) {
            return Err(Error::invalid(format!(
                "delta coefficient vectors need {} entries",
                DELTA_COVARIATE_NAMES.len()
            )));
        }
        let c = &self.covariates;
        for p in [c.p_sex, c.p_race, c.p_lh, c.p_ah] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid("covariate probabilities must lie in [0, 1]"));
            }
        }
        if c.p_lh + c.p_ah > 1.0 {
            return Err(Error::invalid("p_lh + p_ah must not exceed 1"));
        }
        if !(c.bmi_sd > 0.0) || c.nonfatal_rates.iter().any(|&r| r < 0.0) {
            return Err(Error::invalid("bad BMI sd or nonfatal rates"));
        }
        self.random_effect_cholesky().map(|_| ())
    }

    /// Random-effect covariance over the stacked `(b_g0, b_g1, b_g2)` blocks.
    pub fn random_effect_covariance(&self) -> DMatrix<f64> {
        let q = 3 * self.n_factors();
        let sd: Vec<f64> = self.re_sd.iter().flatten().copied().collect();
        let [r01, r02, r12] = self.re_corr_within;
        DMatrix::from_fn(q, q, |i, j| {
            let corr = if i == j {
                1.0
            } else if i / 3 == j / 3 {
                match (i % 3).min(j % 3) + (i % 3).max(j % 3) {
                    1 => r01,
                    2 => r02,
                    _ => r12,
                }
            } else if i % 3 == 0 && j % 3 == 0 {
                self.re_corr_between
            } else {
                0.0
            };
            corr * sd[i.min(j)] * sd[i.max(j)]
        })
    }

    pub(crate) fn random_effect_cholesky(&self) -> Result<DMatrix<f64>> {
        Cholesky::new(self.random_effect_covariance())
            .map(|c| c.l())
            .ok_or_else(|| Error::invalid("random-effect covariance is not positive definite"))
    }

    pub fn from_config(cfg: &KvConfig) -> Result<Self> {
        let d = SimulationTruth::default();
        let factor_names: Vec<String> = match cfg.raw("factors") {
            Some(s) => s.split(',').map(|f| f.trim().to_string()).collect(),
            None => d.factor_names.clone(),
        };
        let g = factor_names.len();
        let triple = |key: &str, fallback: Option<[f64; 3]>| -> Result<[f64; 3]> {
            match cfg.get_vec(key)? {
                Some(v) if v.len() == 3 => Ok([v[0], v[1], v[2]]),
                Some(_) => Err(Error::Config(format!("{key}: expected 3 values"))),
                None => fallback.ok_or_else(|| Error::Config(format!("missing key {key}"))),
            }
        };
        let same_factors = factor_names == d.factor_names;
        let mut beta = Vec::with_capacity(g);
        let mut re_sd = Vec::with_capacity(g);
        for (j, name) in factor_names.iter().enumerate() {
            beta.push(triple(&format!("beta_{name}"), same_factors.then(|| d.beta[j]))?);
            re_sd.push(triple(&format!("re_sd_{name}"), same_factors.then(|| d.re_sd[j]))?);
        }
        let per_factor = |key: &str, fallback: &[f64]| -> Result<Vec<f64>> {
            let v = match cfg.get_vec(key)? {
                Some(v) => v,
                None if same_factors => fallback.to_vec(),
                None => return Err(Error::Config(format!("missing key {key}"))),
            };
            if v.len() != g {
                return Err(Error::Config(format!("{key}: expected {g} values")));
            }
            Ok(v)
        };
        let fixed = |key: &str, fallback: &[f64]| -> Result<Vec<f64>> {
            let v = cfg.get_vec(key)?.unwrap_or_else(|| fallback.to_vec());
            if v.len() != fallback.len() {
                return Err(Error::Config(format!("{key}: expected {} values", fallback.len())));
            }
            Ok(v)
        };
        let within = fixed("re_corr_within", &d.re_corr_within)?;
        let gamma = fixed("gamma", &d.gamma)?;
        let rates = fixed("nonfatal_rates", &d.covariates.nonfatal_rates)?;
        let dc = &d.covariates;
        let truth = SimulationTruth {
            n: cfg.get_or("n", d.n)?,
            beta,
            sigma: per_factor("sigma", &d.sigma)?,
            re_sd,
            re_corr_within: [within[0], within[1], within[2]],
            re_corr_between: cfg.get_or("re_corr_between", d.re_corr_between)?,
            gamma: gamma.try_into().expect("length checked"),
            alpha: per_factor("alpha", &d.alpha)?,
            log_hazard_offset: cfg.get_or("log_hazard_offset", d.log_hazard_offset)?,
            weibull_shape: cfg.get_or("weibull_shape", d.weibull_shape)?,
            censoring_mean: cfg.get_or("censoring_mean", d.censoring_mean)?,
            follow_up: cfg.get_or("follow_up", d.follow_up)?,
            visit_interval: cfg.get_or("visit_interval", d.visit_interval)?,
            max_visits: cfg.get_or("max_visits", d.max_visits)?,
            entry_age_max: cfg.get_or("entry_age_max", d.entry_age_max)?,
            t_max: cfg.get_or("t_max", d.t_max)?,
            covariates: CovariateTruth {
                p_sex: cfg.get_or("p_sex", dc.p_sex)?,
                p_race: cfg.get_or("p_race", dc.p_race)?,
                p_lh: cfg.get_or("p_lh", dc.p_lh)?,
                p_ah: cfg.get_or("p_ah", dc.p_ah)?,
                bmi_mean: cfg.get_or("bmi_mean", dc.bmi_mean)?,
                bmi_sd: cfg.get_or("bmi_sd", dc.bmi_sd)?,
                nonfatal_rates: [rates[0], rates[1], rates[2]],
            },
            delta: [
                fixed("delta_c0", &d.delta[0])?,
                fixed("delta_c1", &d.delta[1])?,
            ],
            factor_names,
        };
        truth.validate()?;
        Ok(truth)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_config(&KvConfig::load(path)?)
    }

    pub fn to_config(&self) -> KvConfig {
        let mut cfg = KvConfig::default();
        cfg.set("n", self.n);
        cfg.set("factors", self.factor_names.join(","));
        for (j, name) in self.factor_names.iter().enumerate() {
            cfg.set_vec(&format!("beta_{name}"), &self.beta[j]);
            cfg.set_vec(&format!("re_sd_{name}"), &self.re_sd[j]);
        }
        cfg.set_vec("sigma", &self.sigma);
        cfg.set_vec("re_corr_within", &self.re_corr_within);
        cfg.set("re_corr_between", self.re_corr_between);
        cfg.set_vec("gamma", &self.gamma);
        cfg.set_vec("alpha", &self.alpha);
        cfg.set("log_hazard_offset", self.log_hazard_offset);
        cfg.set("weibull_shape", self.weibull_shape);
        cfg.set("censoring_mean", self.censoring_mean);
        cfg.set("follow_up", self.follow_up);
        cfg.set("visit_interval", self.visit_interval);
        cfg.set("max_visits", self.max_visits);
        cfg.set("entry_age_max", self.entry_age_max);
        cfg.set("t_max", self.t_max);
        let c = &self.covariates;
        cfg.set("p_sex", c.p_sex);
        cfg.set("p_race", c.p_race);
        cfg.set("p_lh", c.p_lh);
        cfg.set("p_ah", c.p_ah);
        cfg.set("bmi_mean", c.bmi_mean);
        cfg.set("bmi_sd", c.bmi_sd);
        cfg.set_vec("nonfatal_rates", &c.nonfatal_rates);
        cfg.set_vec("delta_c0", &self.delta[0]);
        cfg.set_vec("delta_c1", &self.delta[1]);
        cfg
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_config().to_text()).map_err(|e| Error::io(path, e))
    }

    /// True values of the hazard parameters under the names used by the
    /// joint model summaries (`gamma_*`, `alpha_<factor>_value`).
    pub fn hazard_parameters(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = crate::cohort::HAZARD_COVARIATE_NAMES
            .iter()
            .zip(self.gamma)
            .map(|(n, v)| (format!("gamma_{n}"), v))
            .collect();
        for (name, a) in self.factor_names.iter().zip(&self.alpha) {
            out.push((format!("alpha_{name}_value"), *a));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let t = SimulationTruth::default();
        t.validate().unwrap();
        let back = SimulationTruth::from_config(&KvConfig::parse(&t.to_config().to_text()).unwrap()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn covariance_blocks() {
        let t = SimulationTruth::default();
        let d = t.random_effect_covariance();
        assert_eq!(d.nrows(), 9);
        assert!((d[(0, 0)] - 144.0).abs() < 1e-12);
        assert!((d[(0, 1)] - 0.3 * 12.0 * 5.0).abs() < 1e-12);
        assert!((d[(1, 2)] - 0.2 * 5.0 * 2.0).abs() < 1e-12);
        assert!((d[(0, 3)] - 0.2 * 12.0 * 18.0).abs() < 1e-12);
        assert_eq!(d[(1, 4)], 0.0);
        assert_eq!(d.transpose(), d);
    }

    #[test]
    fn invalid_truths() {
        let mut t = SimulationTruth::default();
        t.weibull_shape = 0.0;
        assert!(t.validate().is_err());
        let mut t = SimulationTruth::default();
        t.censoring_mean = -1.0;
        assert!(t.validate().is_err());
        let mut t = SimulationTruth::default();
        t.re_corr_within = [0.99, 0.99, -0.99];
        assert!(t.validate().is_err());
        let mut t = SimulationTruth::default();
        t.alpha.pop();
        assert!(t.validate().is_err());
    }
}

//! Simulated cohorts with known truth, misclassified cause indicators, and
//! the replicated comparison of adjudicated, unadjudicated and pipeline
//! analyses.

mod calibrate;
mod study;
mod truth;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};

use crate::cohort::{Cohort, EventRecord, LongitudinalRecord, Subject};
use crate::error::{Error, Result};
use crate::joint::quadrature;
use crate::seed::{self, stage};
use crate::stats::logistic;

pub use calibrate::{
    calibrate_delta_intercepts, calibrate_hazard_offset, calibrate_truth, stratum_probabilities,
    dead_confusion, CalibrationTarget, ConfusionConvention, ShareBase,
};
pub use study::{
    read_estimates, read_metrics_tables, report_tables, run_simulation_study, write_estimates, Method, MetricRow, MetricsTable,
    ReplicateEstimate, StudyConfig, StudyOutcome,
};
pub use truth::{CovariateTruth, SimulationTruth, DELTA_COVARIATE_NAMES};

/// Search cap for event times when follow-up is unbounded.
const SEARCH_LIMIT: f64 = 500.0;

/// Hazard of one simulated subject on the follow-up time scale:
/// `a·t^(a−1)·exp(log_scale + Σ_g α_g·Ψ_g(entry_age + t))`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectHazard {
    pub shape: f64,
    /// Offset plus the covariate part of the linear predictor.
    pub log_scale: f64,
    /// `(α_g, Legendre coefficients)` of each linked trajectory.
    pub links: Vec<(f64, [f64; 3])>,
    pub entry_age: f64,
    pub t_scale: f64,
}

impl SubjectHazard {
    /// Pure Weibull hazard `a·t^(a−1)·exp(log_scale)`.
    pub fn weibull(shape: f64, log_scale: f64) -> Self {
        SubjectHazard {
            shape,
            log_scale,
            links: Vec::new(),
            entry_age: 0.0,
            t_scale: 1.0,
        }
    }

    pub fn log_hazard(&self, t: f64) -> f64 {
        let u = 2.0 * (self.entry_age + t) / self.t_scale - 1.0;
        let p2 = 0.5 * (3.0 * u * u - 1.0);
        let linked: f64 = self
            .links
            .iter()
            .map(|(a, c)| a * (c[0] + c[1] * u + c[2] * p2))
            .sum();
        self.shape.ln() + (self.shape - 1.0) * t.ln() + self.log_scale + linked
    }

    pub fn cumulative(&self, t: f64) -> Result<f64> {
        quadrature::cumulative_hazard(|s| self.log_hazard(s), t, &segment_breaks(t))
    }
}

/// Segment edges at 1 and then every 2 time units.
fn segment_breaks(upper: f64) -> Vec<f64> {
    let mut out = vec![1.0];
    let mut b = 3.0;
    while b < upper {
        out.push(b);
        b += 2.0;
    }
    out
}

/// Solves `Λ(T) = e` for `T` in `[1e−8, horizon]` by safeguarded Newton
/// iteration. Returns `None` when `Λ(horizon) < e` (no event before the
/// horizon).
pub fn invert_cumulative_hazard(hazard: &SubjectHazard, e: f64, horizon: f64) -> Result<Option<f64>> {
    if !(e > 0.0) || !e.is_finite() {
        return Err(Error::invalid(format!("target {e} must be positive and finite")));
    }
    let horizon = if horizon.is_finite() { horizon } else { SEARCH_LIMIT };
    let mut lo = 1e-8;
    let mut hi = horizon;
    let f_lo = hazard.cumulative(lo)?;
    let f_hi = hazard.cumulative(hi)?;
    if f_hi < e {
        return Ok(None);
    }
    if f_lo >= e {
        return Ok(Some(lo));
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = hazard.cumulative(t)?;
        if !(f_lo..=f_hi).contains(&f) {
            return Err(Error::Numerical(format!(
                "cumulative hazard not monotone at t = {t} (state {hazard:?})"
            )));
        }
        let r = f - e;
        if r.abs() <= 1e-8 {
            return Ok(Some(t));
        }
        if r < 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        if hi - lo <= 1e-15 * hi {
            return Ok(Some(t));
        }
        let step = t - r / hazard.log_hazard(t).exp();
        t = if step > lo && step < hi { step } else { 0.5 * (lo + hi) };
    }
    Err(Error::Numerical(format!(
        "hazard inversion did not converge for target {e} (state {hazard:?})"
    )))
}

/// Misclassification covariates in the order of [`DELTA_COVARIATE_NAMES`].
pub fn delta_covariates(subject: &Subject, death_age: f64, truth: &SimulationTruth) -> Vec<f64> {
    vec![
        1.0,
        subject.sex as f64,
        subject.race as f64,
        subject.educ_lh as f64,
        subject.educ_ah as f64,
        (subject.bmi - truth.covariates.bmi_mean) / truth.covariates.bmi_sd,
        (death_age - 15.0) / 10.0,
    ]
}

/// ICD-coded indicator: 1 iff `u < logistic(δ_Cᵀx)`.
pub fn generate_delta(c: u8, x: &[f64], delta: &[Vec<f64>; 2], u: f64) -> Result<u8> {
    if !(0.0..1.0).contains(&u) {
        return Err(Error::invalid(format!("uniform {u} outside [0, 1)")));
    }
    if c > 1 {
        return Err(Error::invalid("C must be 0 or 1"));
    }
    let coef = &delta[c as usize];
    if coef.len() != x.len() {
        return Err(Error::invalid("delta and covariate lengths differ"));
    }
    let eta: f64 = coef.iter().zip(x).map(|(d, v)| d * v).sum();
    Ok(u8::from(u < logistic(eta)))
}

/// Draws before visit noise and cause coding: enough for calibration.
pub(crate) struct Latent {
    pub subject: Subject,
    /// Trajectory coefficients (population plus random effect) per factor.
    pub coefficients: Vec<[f64; 3]>,
    pub hazard: SubjectHazard,
    pub e: f64,
    pub censor: f64,
}

pub(crate) fn subject_id(i: usize) -> String {
    format!("S{:05}", i + 1)
}

pub(crate) fn draw_latent<R: Rng>(truth: &SimulationTruth, chol: &DMatrix<f64>, i: usize, rng: &mut R) -> Latent {
    let cv = &truth.covariates;
    let sex = u8::from(rng.random::<f64>() < cv.p_sex);
    let race = u8::from(rng.random::<f64>() < cv.p_race);
    let u: f64 = rng.random();
    let (educ_lh, educ_ah) = if u < cv.p_lh {
        (1, 0)
    } else if u < cv.p_lh + cv.p_ah {
        (0, 1)
    } else {
        (0, 0)
    };
    let z: f64 = StandardNormal.sample(rng);
    let bmi = (cv.bmi_mean + cv.bmi_sd * z).max(12.0);
    let baseline_age = truth.entry_age_max * rng.random::<f64>();
    let mut nonfatal_counts = [0u32; 3];
    for (c, &rate) in nonfatal_counts.iter_mut().zip(&cv.nonfatal_rates) {
        if rate > 0.0 {
            *c = Poisson::new(rate).expect("positive rate").sample(rng) as u32;
        }
    }
    let q = chol.nrows();
    let z: Vec<f64> = (0..q).map(|_| StandardNormal.sample(rng)).collect();
    let b = chol * nalgebra::DVector::from_vec(z);
    let coefficients: Vec<[f64; 3]> = truth
        .beta
        .iter()
        .enumerate()
        .map(|(g, beta)| [beta[0] + b[3 * g], beta[1] + b[3 * g + 1], beta[2] + b[3 * g + 2]])
        .collect();
    let subject = Subject {
        id: subject_id(i),
        sex,
        race,
        educ_lh,
        educ_ah,
        bmi,
        baseline_age,
        nonfatal_counts,
    };
    let w = subject.hazard_covariates();
    let log_scale = truth.log_hazard_offset + truth.gamma.iter().zip(w).map(|(g, x)| g * x).sum::<f64>();
    let hazard = SubjectHazard {
        shape: truth.weibull_shape,
        log_scale,
        links: truth
            .alpha
            .iter()
            .zip(&coefficients)
            .filter(|(a, _)| **a != 0.0)
            .map(|(a, c)| (*a, *c))
            .collect(),
        entry_age: baseline_age,
        t_scale: truth.t_max,
    };
    let e: f64 = Exp1.sample(rng);
    let censor = if truth.censoring_mean.is_finite() {
        truth.censoring_mean * Distribution::<f64>::sample(&Exp1, rng)
    } else {
        f64::INFINITY
    };
    Latent {
        subject,
        coefficients,
        hazard,
        e,
        censor,
    }
}

/// Simulates `truth.n` subjects. Subject `i` uses its own counter-based
/// stream, so a cohort of size `n` is a prefix of any larger cohort with the
/// same seed.
///
/// Follow-up is time since entry. A subject whose event time precedes both
/// the censoring time and the end of follow-up has `C = 1`; a subject whose
/// censoring time comes first died of another cause (`C = 0`); everyone else
/// is alive at the end of follow-up. `Δ` is drawn for the dead.
pub fn simulate_cohort(truth: &SimulationTruth, seed: u64) -> Result<Cohort> {
    truth.validate()?;
    let chol = truth.random_effect_cholesky()?;
    let mut subjects = Vec::with_capacity(truth.n);
    let mut events = Vec::with_capacity(truth.n);
    let mut longitudinal = Vec::new();
    for i in 0..truth.n {
        let mut rng = seed::rng_for(seed, &[stage::SIMULATE, i as u64]);
        let lat = draw_latent(truth, &chol, i, &mut rng);
        let event_time = invert_cumulative_hazard(&lat.hazard, lat.e, truth.follow_up)?;
        let t_event = event_time.unwrap_or(f64::INFINITY);
        let observed = t_event.min(lat.censor).min(truth.follow_up);
        let c = u8::from(t_event <= lat.censor && t_event <= truth.follow_up);
        let dead = c == 1 || lat.censor < truth.follow_up;
        for v in 0..truth.max_visits {
            let t = v as f64 * truth.visit_interval;
            if t > observed {
                break;
            }
            let age = lat.subject.baseline_age + t;
            let u = 2.0 * age / truth.t_max - 1.0;
            let p2 = 0.5 * (3.0 * u * u - 1.0);
            for (g, c) in lat.coefficients.iter().enumerate() {
                let noise: f64 = StandardNormal.sample(&mut rng);
                longitudinal.push(LongitudinalRecord {
                    subject_id: lat.subject.id.clone(),
                    factor: g + 1,
                    age,
                    value: c[0] + c[1] * u + c[2] * p2 + truth.sigma[g] * noise,
                });
            }
        }
        let death_age = lat.subject.baseline_age + observed;
        let delta = if dead {
            let x = delta_covariates(&lat.subject, death_age, truth);
            Some(generate_delta(c, &x, &truth.delta, rng.random())?)
        } else {
            None
        };
        events.push(EventRecord {
            subject_id: lat.subject.id.clone(),
            dead,
            death_age: dead.then_some(death_age),
            delta,
            c_adjudicated: dead.then_some(c),
            observed_time: observed,
            event_indicator: c,
        });
        subjects.push(lat.subject);
    }
    Cohort::new(subjects, longitudinal, events, truth.t_max, truth.factor_names.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn weibull_inversion_examples() {
        let h = SubjectHazard::weibull(1.75, 0.0);
        let t = invert_cumulative_hazard(&h, 1.0, 12.0).unwrap().unwrap();
        assert!((t - 1.0).abs() < 1e-8);
        let t = invert_cumulative_hazard(&h, 0.5, 12.0).unwrap().unwrap();
        assert!((t - 0.5f64.powf(1.0 / 1.75)).abs() < 1e-8);
        assert!((t - 0.6731).abs() < 2e-4);
        assert_eq!(invert_cumulative_hazard(&h, 1e6, 12.0).unwrap(), None);
        assert!(invert_cumulative_hazard(&h, 0.0, 12.0).is_err());
    }

    #[test]
    fn delta_examples() {
        let zero = [vec![0.0; 2], vec![0.0; 2]];
        assert_eq!(generate_delta(1, &[1.0, 3.0], &zero, 0.49).unwrap(), 1);
        assert_eq!(generate_delta(0, &[1.0, 3.0], &zero, 0.51).unwrap(), 0);
        let big = [vec![-800.0, 0.0], vec![800.0, 0.0]];
        assert_eq!(generate_delta(1, &[1.0, 0.0], &big, 0.999_999).unwrap(), 1);
        assert_eq!(generate_delta(0, &[1.0, 0.0], &big, 0.0).unwrap(), 0);
        assert!(generate_delta(1, &[1.0, 0.0], &zero, 1.0).is_err());
    }

    #[test]
    fn cohort_structure() {
        let mut truth = SimulationTruth::default();
        truth.n = 200;
        let c = simulate_cohort(&truth, 3).unwrap();
        assert_eq!(c.len(), 200);
        for (s, e) in c.subjects.iter().zip(&c.events) {
            assert!(e.observed_time <= truth.follow_up);
            if e.dead {
                assert!((e.death_age.unwrap() - s.baseline_age - e.observed_time).abs() < 1e-12);
            } else {
                assert_eq!(e.observed_time, truth.follow_up);
            }
        }
        for r in &c.longitudinal {
            let i: usize = r.subject_id[1..].parse::<usize>().unwrap() - 1;
            assert!(r.age - c.subjects[i].baseline_age <= c.events[i].observed_time + 1e-12);
        }
        // prefix property
        truth.n = 50;
        let small = simulate_cohort(&truth, 3).unwrap();
        assert_eq!(small.subjects[..], c.subjects[..50]);
        assert_eq!(small.events[..], c.events[..50]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn doubling_hazard_halves_target(e in 0.01f64..5.0, scale in -1.0f64..1.0) {
            let h = SubjectHazard {
                shape: 1.75,
                log_scale: scale,
                links: vec![(0.02, [100.0, 5.0, -2.0])],
                entry_age: 4.0,
                t_scale: 31.0,
            };
            let mut h2 = h.clone();
            h2.log_scale += 2f64.ln();
            let t1 = invert_cumulative_hazard(&h, e / 2.0, 1e3).unwrap();
            let t2 = invert_cumulative_hazard(&h2, e, 1e3).unwrap();
            match (t1, t2) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-6 * a.max(1.0)),
                (a, b) => prop_assert_eq!(a, b),
            }
        }
    }
}

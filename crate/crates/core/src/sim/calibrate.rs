//! Calibration of the hazard offset and misclassification intercepts.

use crate::cohort::{confusion_metrics, ConfusionTable};
use crate::error::{Error, Result};
use crate::seed::{self, stage};
use crate::stats::logistic;

use super::{delta_covariates, draw_latent, simulate_cohort, SimulationTruth};

/// How the two target rates are read from the confusion table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfusionConvention {
    /// Conditioned on the ICD code: `P(C=1 | Δ=1)` and `P(C=0 | Δ=0)`.
    Column,
    /// Conditioned on the adjudicated cause: `P(Δ=1 | C=1)` and `P(Δ=0 | C=0)`.
    Row,
}

/// Denominator of the event share.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShareBase {
    Dead,
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTarget {
    pub event_share: f64,
    pub share_base: ShareBase,
    pub sensitivity: f64,
    pub specificity: f64,
    pub convention: ConfusionConvention,
    pub n_pilot: usize,
    pub seed: u64,
}

impl CalibrationTarget {
    /// Half of the deaths are events and the coded/adjudicated table has
    /// column rates 0.58 and 0.85.
    pub fn desk_scale() -> Self {
        CalibrationTarget {
            event_share: 0.5,
            share_base: ShareBase::Dead,
            sensitivity: 0.58,
            specificity: 0.85,
            convention: ConfusionConvention::Column,
            n_pilot: 20_000,
            seed: 20_240_601,
        }
    }

    /// 800 events among 1200 subjects with the rates read row-wise; the
    /// column reading is infeasible at that event share.
    pub fn full_scale() -> Self {
        CalibrationTarget {
            event_share: 2.0 / 3.0,
            share_base: ShareBase::All,
            convention: ConfusionConvention::Row,
            ..Self::desk_scale()
        }
    }
}

/// `(P(Δ=1 | C=1), P(Δ=1 | C=0))` reproducing the target rates when a share
/// `q` of the coded population has `C = 1`.
pub fn stratum_probabilities(
    q: f64,
    sensitivity: f64,
    specificity: f64,
    convention: ConfusionConvention,
) -> Result<(f64, f64)> {
    for (name, v) in [("event share", q), ("sensitivity", sensitivity), ("specificity", specificity)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::invalid(format!("{name} {v} outside (0, 1)")));
        }
    }
    let (a, b) = match convention {
        ConfusionConvention::Row => (sensitivity, 1.0 - specificity),
        ConfusionConvention::Column => {
            // q·a·(1−p) = p·(1−q)·b  and  v·q·(1−a) = (1−v)·(1−q)·(1−b)
            let (p, v) = (sensitivity, specificity);
            let (a11, a12, r1) = (q * (1.0 - p), -p * (1.0 - q), 0.0);
            let (a21, a22) = (v * q, -(1.0 - v) * (1.0 - q));
            let r2 = v * q - (1.0 - v) * (1.0 - q);
            let det = a11 * a22 - a12 * a21;
            if det.abs() < 1e-14 {
                return Err(Error::invalid("degenerate confusion targets"));
            }
            ((r1 * a22 - a12 * r2) / det, (a11 * r2 - a21 * r1) / det)
        }
    };
    if !(a > 0.0 && a < 1.0 && b > 0.0 && b < 1.0) {
        return Err(Error::invalid(format!(
            "targets infeasible at event share {q}: P(Δ=1|C=1) = {a}, P(Δ=1|C=0) = {b}"
        )));
    }
    Ok((a, b))
}

fn bisect(mut lo: f64, mut hi: f64, mut f: impl FnMut(f64) -> f64, target: f64) -> f64 {
    // f increasing
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Log-hazard offset giving the target event share on a pilot population.
///
/// With common random numbers a subject has an event iff the offset exceeds
/// `ln E − ln Λ₀(min(censor, follow-up))`, so the share is a step function of
/// the offset computed from one pass over the pilot.
pub fn calibrate_hazard_offset(truth: &SimulationTruth, target: &CalibrationTarget) -> Result<f64> {
    truth.validate()?;
    if !(target.event_share > 0.0 && target.event_share < 1.0) || target.n_pilot == 0 {
        return Err(Error::invalid("event share must lie in (0, 1) with a nonempty pilot"));
    }
    let chol = truth.random_effect_cholesky()?;
    let mut thresholds = Vec::with_capacity(target.n_pilot);
    for i in 0..target.n_pilot {
        let mut rng = seed::rng_for(target.seed, &[stage::SIMULATE, i as u64]);
        let lat = draw_latent(truth, &chol, i, &mut rng);
        let end = lat.censor.min(truth.follow_up);
        let log_cum = lat.hazard.cumulative(end)?.ln() - truth.log_hazard_offset;
        thresholds.push((lat.e.ln() - log_cum, lat.censor < truth.follow_up));
    }
    let share = |offset: f64| {
        let events = thresholds.iter().filter(|(k, _)| *k <= offset).count() as f64;
        let base = match target.share_base {
            ShareBase::All => thresholds.len() as f64,
            ShareBase::Dead => thresholds
                .iter()
                .filter(|(k, cens)| *k <= offset || *cens)
                .count() as f64,
        };
        events / base
    };
    Ok(bisect(-60.0, 60.0, share, target.event_share))
}

/// Misclassification intercepts (slopes held fixed) for `C = 0` and `C = 1`.
pub fn calibrate_delta_intercepts(truth: &SimulationTruth, target: &CalibrationTarget) -> Result<[f64; 2]> {
    let mut pilot = truth.clone();
    pilot.n = target.n_pilot;
    let cohort = simulate_cohort(&pilot, target.seed)?;
    let mut strata: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    for (s, e) in cohort.subjects.iter().zip(&cohort.events) {
        if let (true, Some(c), Some(age)) = (e.dead, e.c_adjudicated, e.death_age) {
            strata[c as usize].push(delta_covariates(s, age, truth));
        }
    }
    let n1 = strata[1].len() as f64;
    let n_dead = n1 + strata[0].len() as f64;
    if strata.iter().any(Vec::is_empty) {
        return Err(Error::invalid("pilot has no deaths in one cause stratum"));
    }
    let (p1, p0) = stratum_probabilities(n1 / n_dead, target.sensitivity, target.specificity, target.convention)?;
    let mut out = [0.0; 2];
    for (c, p) in [(0usize, p0), (1, p1)] {
        let slopes = &truth.delta[c][1..];
        let rows = &strata[c];
        let mean_prob = |b0: f64| {
            rows.iter()
                .map(|x| logistic(b0 + slopes.iter().zip(&x[1..]).map(|(d, v)| d * v).sum::<f64>()))
                .sum::<f64>()
                / rows.len() as f64
        };
        out[c] = bisect(-40.0, 40.0, mean_prob, p);
    }
    Ok(out)
}

/// Calibrates the hazard offset, then the misclassification intercepts.
pub fn calibrate_truth(truth: &SimulationTruth, target: &CalibrationTarget) -> Result<SimulationTruth> {
    let mut out = truth.clone();
    out.log_hazard_offset = calibrate_hazard_offset(truth, target)?;
    let [d0, d1] = calibrate_delta_intercepts(&out, target)?;
    out.delta[0][0] = d0;
    out.delta[1][0] = d1;
    Ok(out)
}

/// Confusion table of `(C, Δ)` over the dead of a simulated cohort.
pub fn dead_confusion(cohort: &crate::cohort::Cohort) -> Result<crate::cohort::ConfusionMetrics> {
    let t = ConfusionTable::from_pairs(
        cohort
            .events
            .iter()
            .filter_map(|e| Some((e.c_adjudicated?, e.delta?))),
    );
    confusion_metrics(&t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_convention_is_direct() {
        let (a, b) = stratum_probabilities(0.3, 0.58, 0.85, ConfusionConvention::Row).unwrap();
        assert!((a - 0.58).abs() < 1e-15 && (b - 0.15).abs() < 1e-12);
    }

    #[test]
    fn column_convention_reproduces_predictive_rates() {
        for &q in &[0.2, 0.29, 0.5] {
            let (a, b) = stratum_probabilities(q, 0.58, 0.85, ConfusionConvention::Column).unwrap();
            let ppv = q * a / (q * a + (1.0 - q) * b);
            let npv = (1.0 - q) * (1.0 - b) / ((1.0 - q) * (1.0 - b) + q * (1.0 - a));
            assert!((ppv - 0.58).abs() < 1e-12 && (npv - 0.85).abs() < 1e-12, "q={q}");
        }
    }

    #[test]
    fn column_convention_infeasible_at_two_thirds() {
        assert!(stratum_probabilities(2.0 / 3.0, 0.58, 0.85, ConfusionConvention::Column).is_err());
    }
}

//! Multiple adjudication: probability-of-event draws for the coded deaths of
//! a target cohort, binary adjudicated event sets drawn from them, one joint
//! fit per set, and pooling with a Monte Carlo standard error.

mod config;
mod run;

use crate::error::{Error, Result};

pub use config::{bart_config_from, dpm_config_from, joint_config_from, PipelineConfig};
pub use run::{
    adjudication_sets, adjudication_sets_with_forests, bart_columns, run_pipeline, AdjudicationSet, Adjudications, Manifest,
    NSelectionReport, PipelineResult, PooledParameter, StageTimings,
    write_weights,
};

/// 1 iff `u < w`.
pub fn generate_adjudication(w_hat: f64, u: f64) -> Result<u8> {
    if !(0.0..=1.0).contains(&w_hat) {
        return Err(Error::invalid(format!("probability {w_hat} outside [0, 1]")));
    }
    if !(0.0..1.0).contains(&u) {
        return Err(Error::invalid(format!("uniform {u} outside [0, 1)")));
    }
    Ok(u8::from(u < w_hat))
}

/// Mean and Monte Carlo standard error `√(Σ(θ_i − θ̄)²/N)/√N`.
pub fn mcse(estimates: &[f64]) -> Result<(f64, f64)> {
    if estimates.is_empty() {
        return Err(Error::invalid("no estimates to pool"));
    }
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let sst: f64 = estimates.iter().map(|v| (v - mean).powi(2)).sum();
    Ok((mean, (sst / n / n).sqrt()))
}

/// `θ̄ ± 1.96·mcse`.
pub fn credible_interval(estimate: f64, mcse: f64) -> (f64, f64) {
    (estimate - 1.96 * mcse, estimate + 1.96 * mcse)
}

/// One unit in the second significant digit of `|θ|`; `epsilon_min` when
/// `θ` is zero or not finite.
pub fn epsilon_for_estimate(theta: f64, epsilon_min: f64) -> f64 {
    if theta == 0.0 || !theta.is_finite() {
        return epsilon_min;
    }
    let mut e = theta.abs().log10().floor();
    // guard against log10 rounding just below an exact power of ten
    if 10f64.powf(e + 1.0) <= theta.abs() {
        e += 1.0;
    }
    10f64.powf(e - 1.0)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NSelection {
    pub per_parameter: Vec<usize>,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub l: usize,
}

/// Most balanced `M ≤ K ≤ L` with `M·K·L ≥ n`: smallest `L/M`, then the
/// smallest product.
pub fn balanced_factorization(n: usize) -> (usize, usize, usize) {
    let n = n.max(1);
    let mut best = (1, 1, n);
    let mut key = (n as f64, n);
    let c = (1..=n).find(|v| v * v * v >= n).expect("n itself qualifies");
    for m in 1..=c {
        for k in m.. {
            let l = n.div_ceil(m * k).max(k);
            let cand = (l as f64 / m as f64, m * k * l);
            if cand.0 < key.0 || (cand.0 == key.0 && cand.1 < key.1) {
                key = cand;
                best = (m, k, l);
            }
            if l == k {
                break;
            }
        }
    }
    best
}

/// Fits needed so that `√SST_p / N ≤ ε_p` holds with the pilot's `SST`
/// held fixed, i.e. `N_p = ⌈√SST_p / ε_p⌉`.
pub fn choose_n(sst_pilot: &[f64], epsilon: &[f64]) -> Result<NSelection> {
    if sst_pilot.is_empty() {
        return Err(Error::invalid("pilot run missing: no SST values"));
    }
    if sst_pilot.len() != epsilon.len() {
        return Err(Error::invalid("one tolerance per parameter is required"));
    }
    let mut per_parameter = Vec::with_capacity(sst_pilot.len());
    for (&s, &e) in sst_pilot.iter().zip(epsilon) {
        if !(s >= 0.0) || !(e > 0.0) {
            return Err(Error::invalid("SST must be >= 0 and tolerances > 0"));
        }
        let ratio = s.sqrt() / e;
        // tolerate rounding just above an integer
        let np = (ratio * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        per_parameter.push(np);
    }
    let n = *per_parameter.iter().max().expect("nonempty");
    let (m, k, l) = balanced_factorization(n);
    Ok(NSelection {
        per_parameter,
        n,
        m,
        k,
        l,
    })
}

/// Alternative rule treating `SST/N_pilot` as a per-fit variance:
/// `N_p = ⌈(SST_p/N_pilot)/ε_p²⌉`.
pub fn variance_based_n(sst_pilot: &[f64], n_pilot: usize, epsilon: &[f64]) -> Result<usize> {
    if sst_pilot.is_empty() || n_pilot == 0 || sst_pilot.len() != epsilon.len() {
        return Err(Error::invalid("pilot run missing or mismatched tolerances"));
    }
    Ok(sst_pilot
        .iter()
        .zip(epsilon)
        .map(|(s, e)| ((s / n_pilot as f64) / (e * e) * (1.0 - 1e-12)).ceil().max(1.0) as usize)
        .max()
        .expect("nonempty"))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CostEstimate {
    /// `T^F + T^fit + T^pred + T^JM` (unlimited cores).
    pub ideal: f64,
    /// `T^F + M·T^fit/cores + T^pred + N·T^JM/cores`.
    pub realistic: f64,
}

/// Cost model from per-stage timings: `fit` is one BART fit and `joint` one
/// joint fit.
pub fn estimate_cost(features: f64, fit: f64, predict: f64, joint: f64, m: usize, n: usize, cores: usize) -> Result<CostEstimate> {
    if [features, fit, predict, joint].iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::invalid("timings must be nonnegative"));
    }
    if cores == 0 {
        return Err(Error::invalid("at least one core is required"));
    }
    let c = cores as f64;
    Ok(CostEstimate {
        ideal: features + fit + predict + joint,
        realistic: features + m as f64 * fit / c + predict + n as f64 * joint / c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn adjudication_examples() {
        assert_eq!(generate_adjudication(0.63, 0.5).unwrap(), 1);
        assert_eq!(generate_adjudication(0.0, 0.0).unwrap(), 0);
        assert_eq!(generate_adjudication(1.0, 0.999_999).unwrap(), 1);
        assert!(generate_adjudication(1.2, 0.5).is_err());
        assert!(generate_adjudication(0.5, 1.0).is_err());
    }

    #[test]
    fn mcse_examples() {
        assert_eq!(mcse(&[2.0, 2.0, 2.0]).unwrap(), (2.0, 0.0));
        let (m, s) = mcse(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        // direct evaluation: SST = 2, N = 3
        assert!((s - (2.0f64 / 3.0 / 3.0).sqrt()).abs() < 1e-15);
        assert!((s - 0.471405).abs() < 1e-6);
        assert_eq!(mcse(&[5.0]).unwrap(), (5.0, 0.0));
        assert!(mcse(&[]).is_err());
    }

    #[test]
    fn interval_examples() {
        let (lo, hi) = credible_interval(0.0235, 0.00074);
        assert!((lo - 0.022_049_6).abs() < 1e-9 && (hi - 0.024_950_4).abs() < 1e-9);
        // reported as (0.0220, 0.0249) after rounding
        assert!((lo - 0.0220).abs() < 1e-4 && (hi - 0.0249).abs() < 1e-4);
        assert_eq!(credible_interval(3.0, 0.0), (3.0, 3.0));
        let (lo, hi) = credible_interval(1.0, 1.0);
        assert!((lo + 0.96).abs() < 1e-15 && (hi - 2.96).abs() < 1e-15);
    }

    #[test]
    fn epsilon_examples() {
        assert!((epsilon_for_estimate(0.25, 1e-4) - 0.01).abs() < 1e-15);
        assert!((epsilon_for_estimate(0.025, 1e-4) - 0.001).abs() < 1e-16);
        assert!((epsilon_for_estimate(2.5, 1e-4) - 0.1).abs() < 1e-15);
        assert!((epsilon_for_estimate(-0.47, 1e-4) - 0.01).abs() < 1e-15);
        assert!((epsilon_for_estimate(1000.0, 1e-4) - 100.0).abs() < 1e-9);
        assert_eq!(epsilon_for_estimate(0.0, 1e-4), 1e-4);
    }

    #[test]
    fn choose_n_examples() {
        let s = choose_n(&[2.0], &[0.1]).unwrap();
        assert_eq!(s.per_parameter, vec![15]);
        assert!(s.m * s.k * s.l >= 15 && s.m <= s.k && s.k <= s.l);
        assert_eq!(choose_n(&[0.0], &[0.1]).unwrap().n, 1);
        assert!(choose_n(&[], &[]).is_err());
        // an outcome of N = 210, as in a 3·5·14 design
        let s = choose_n(&[4.41], &[0.01]).unwrap();
        assert_eq!(s.n, 210);
        assert!(s.m * s.k * s.l >= 210);
        assert_eq!((s.m, s.k, s.l), (6, 6, 6));
        assert_eq!(balanced_factorization(27), (3, 3, 3));
        assert_eq!(balanced_factorization(1), (1, 1, 1));
        assert_eq!(variance_based_n(&[2.0], 2, &[0.1]).unwrap(), 100);
    }

    #[test]
    fn cost_examples() {
        let c = estimate_cost(1.0, 2.0, 3.0, 4.0, 1, 1, 1).unwrap();
        assert_eq!(c.ideal, 10.0);
        assert_eq!(estimate_cost(0.0, 0.0, 0.0, 0.0, 3, 27, 1).unwrap().ideal, 0.0);
        assert_eq!(estimate_cost(1.0, 1.0, 1.0, 1.0, 3, 27, 1).unwrap().realistic, 32.0);
        assert!(estimate_cost(-1.0, 0.0, 0.0, 0.0, 1, 1, 1).is_err());
    }

    proptest! {
        #[test]
        fn factorization_covers_and_is_ordered(n in 1usize..5000) {
            let (m, k, l) = balanced_factorization(n);
            prop_assert!(m <= k && k <= l && m * k * l >= n);
            // the cube-root triple is always available, so the ratio is bounded
            let c = (n as f64).cbrt().ceil() as usize;
            prop_assert!(l as f64 / m as f64 <= c as f64);
        }

        #[test]
        fn mcse_is_order_invariant(mut v in proptest::collection::vec(-10.0f64..10.0, 1..30)) {
            let a = mcse(&v).unwrap();
            v.reverse();
            let b = mcse(&v).unwrap();
            prop_assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
        }
    }
}

//! Cohorts with possibly misclassified event indicators.
//!
//! Ages are kept on the original (already centred) age scale. The time axis
//! used for survival fitting is time since entry: `observed_time` is follow-up
//! length and a dead subject's `death_age` equals `baseline_age + observed_time`.

mod confusion;
mod io;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub use confusion::{confusion_metrics, ConfusionMetrics, ConfusionTable};
pub use io::{read_cohort, read_cohort_dir, write_cohort_dir, CohortFiles};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    pub sex: u8,
    pub race: u8,
    pub educ_lh: u8,
    pub educ_ah: u8,
    pub bmi: f64,
    pub baseline_age: f64,
    /// Heart failure, myocardial infarction and stroke counts.
    pub nonfatal_counts: [u32; 3],
}

impl Subject {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("sex", self.sex),
            ("race", self.race),
            ("educ_lh", self.educ_lh),
            ("educ_ah", self.educ_ah),
        ] {
            if v > 1 {
                return Err(Error::invalid(format!("{}: {name} must be 0/1", self.id)));
            }
        }
        if self.educ_lh == 1 && self.educ_ah == 1 {
            return Err(Error::invalid(format!(
                "{}: educ_lh and educ_ah both set",
                self.id
            )));
        }
        if !(self.bmi > 0.0) || !self.bmi.is_finite() {
            return Err(Error::invalid(format!("{}: bmi must be > 0", self.id)));
        }
        if !self.baseline_age.is_finite() {
            return Err(Error::invalid(format!("{}: baseline_age not finite", self.id)));
        }
        Ok(())
    }

    /// The four binary covariates entering the longitudinal fixed effects:
    /// sex, race, below-high-school, above-high-school.
    pub fn fixed_covariates(&self) -> [f64; 4] {
        [
            self.sex as f64,
            self.race as f64,
            self.educ_lh as f64,
            self.educ_ah as f64,
        ]
    }

    /// Hazard covariates in the order base-age, BMI, LH, AH, sex, race.
    pub fn hazard_covariates(&self) -> [f64; 6] {
        [
            self.baseline_age,
            self.bmi,
            self.educ_lh as f64,
            self.educ_ah as f64,
            self.sex as f64,
            self.race as f64,
        ]
    }
}

pub const HAZARD_COVARIATE_NAMES: [&str; 6] = ["base_age", "bmi", "lh", "ah", "sex", "race"];

#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalRecord {
    pub subject_id: String,
    /// 1-based factor index.
    pub factor: usize,
    pub age: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub subject_id: String,
    pub dead: bool,
    pub death_age: Option<f64>,
    /// ICD-coded cause indicator; only defined for the dead.
    pub delta: Option<u8>,
    /// Adjudicated cause indicator; only defined for the dead.
    pub c_adjudicated: Option<u8>,
    pub observed_time: f64,
    pub event_indicator: u8,
}

impl EventRecord {
    pub fn validate(&self) -> Result<()> {
        let id = &self.subject_id;
        if !(self.observed_time > 0.0) {
            return Err(Error::invalid(format!("{id}: observed_time must be > 0")));
        }
        if self.dead != self.death_age.is_some() {
            return Err(Error::invalid(format!("{id}: death_age present iff dead")));
        }
        if !self.dead && (self.delta.is_some() || self.c_adjudicated.is_some()) {
            return Err(Error::invalid(format!(
                "{id}: delta/c_adjudicated defined only for the dead"
            )));
        }
        if self.dead && self.delta.is_none() {
            return Err(Error::invalid(format!("{id}: dead subject without delta")));
        }
        for v in [self.delta, self.c_adjudicated].into_iter().flatten() {
            if v > 1 {
                return Err(Error::invalid(format!("{id}: indicator must be 0/1")));
            }
        }
        if self.event_indicator > 1 || (!self.dead && self.event_indicator == 1) {
            return Err(Error::invalid(format!("{id}: bad event_indicator")));
        }
        Ok(())
    }
}

/// Which indicator is treated as the event when fitting survival models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventSource {
    /// The stored `event_indicator` column.
    Observed,
    /// `C`: adjudicated cause (0 for the alive).
    Adjudicated,
    /// `Δ`: ICD-coded cause (0 for the alive).
    Unadjudicated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub subjects: Vec<Subject>,
    pub longitudinal: Vec<LongitudinalRecord>,
    pub events: Vec<EventRecord>,
    /// Upper end of the age interval used for the Legendre shift.
    pub t_max: f64,
    pub factor_names: Vec<String>,
}

impl Cohort {
    /// Builds a cohort and checks cross references. Events are reordered to
    /// follow subject order.
    pub fn new(
        subjects: Vec<Subject>,
        longitudinal: Vec<LongitudinalRecord>,
        events: Vec<EventRecord>,
        t_max: f64,
        factor_names: Vec<String>,
    ) -> Result<Self> {
        let mut index = HashMap::with_capacity(subjects.len());
        for (i, s) in subjects.iter().enumerate() {
            s.validate()?;
            if index.insert(s.id.clone(), i).is_some() {
                return Err(Error::DuplicateSubject(s.id.clone()));
            }
        }
        if !(t_max > 0.0) {
            return Err(Error::invalid("t_max must be > 0"));
        }
        let g = factor_names.len();
        for r in &longitudinal {
            if !index.contains_key(&r.subject_id) {
                return Err(Error::UnknownSubject(r.subject_id.clone()));
            }
            if r.factor == 0 || r.factor > g {
                return Err(Error::invalid(format!(
                    "{}: factor {} outside 1..={g}",
                    r.subject_id, r.factor
                )));
            }
            if !(0.0..=t_max).contains(&r.age) {
                return Err(Error::OutOfRange(format!(
                    "{}: age {} outside [0, {t_max}]",
                    r.subject_id, r.age
                )));
            }
        }
        let mut slots: Vec<Option<EventRecord>> = vec![None; subjects.len()];
        for e in events {
            e.validate()?;
            let &i = index
                .get(&e.subject_id)
                .ok_or_else(|| Error::UnknownSubject(e.subject_id.clone()))?;
            if slots[i].is_some() {
                return Err(Error::invalid(format!("{}: duplicate event row", e.subject_id)));
            }
            slots[i] = Some(e);
        }
        let events = slots
            .into_iter()
            .zip(&subjects)
            .map(|(e, s)| e.ok_or_else(|| Error::invalid(format!("{}: no event row", s.id))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Cohort {
            subjects,
            longitudinal,
            events,
            t_max,
            factor_names,
        })
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn n_factors(&self) -> usize {
        self.factor_names.len()
    }

    /// Event row for subject `i` (events follow subject order).
    pub fn event(&self, i: usize) -> &EventRecord {
        &self.events[i]
    }

    /// Longitudinal observations grouped by subject position and factor:
    /// `out[i][g]` holds `(age, value)` pairs in file order.
    pub fn grouped_longitudinal(&self) -> Vec<Vec<Vec<(f64, f64)>>> {
        let index: HashMap<&str, usize> = self
            .subjects
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect();
        let mut out = vec![vec![Vec::new(); self.n_factors()]; self.len()];
        for r in &self.longitudinal {
            out[index[r.subject_id.as_str()]][r.factor - 1].push((r.age, r.value));
        }
        out
    }

    /// Event indicator per subject under the given source.
    pub fn event_indicators(&self, source: EventSource) -> Vec<u8> {
        self.events
            .iter()
            .map(|e| match source {
                EventSource::Observed => e.event_indicator,
                EventSource::Adjudicated => e.c_adjudicated.unwrap_or(0),
                EventSource::Unadjudicated => e.delta.unwrap_or(0),
            })
            .collect()
    }

    /// Sub-cohort with the subjects at `positions` (in that order) and all
    /// their records.
    pub fn select(&self, positions: &[usize]) -> Cohort {
        let keep: HashMap<&str, ()> = positions
            .iter()
            .map(|&i| (self.subjects[i].id.as_str(), ()))
            .collect();
        Cohort {
            subjects: positions.iter().map(|&i| self.subjects[i].clone()).collect(),
            events: positions.iter().map(|&i| self.events[i].clone()).collect(),
            longitudinal: self
                .longitudinal
                .iter()
                .filter(|r| keep.contains_key(r.subject_id.as_str()))
                .cloned()
                .collect(),
            t_max: self.t_max,
            factor_names: self.factor_names.clone(),
        }
    }
}

/// Random subject-level split into `(A, B)` with `|A| = round(fraction_a · n)`.
pub fn split_cohort(cohort: &Cohort, fraction_a: f64, seed: u64) -> Result<(Cohort, Cohort)> {
    if !(fraction_a > 0.0 && fraction_a < 1.0) {
        return Err(Error::invalid(format!(
            "split fraction {fraction_a} outside (0, 1)"
        )));
    }
    if cohort.is_empty() {
        return Err(Error::invalid("cannot split an empty cohort"));
    }
    let n = cohort.len();
    let n_a = (fraction_a * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng_for(seed, &[seed::stage::SPLIT]));
    let (a, b) = order.split_at(n_a);
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    Ok((cohort.select(&a), cohort.select(&b)))
}

/// Keeps only dead subjects together with all of their records.
pub fn filter_dead(cohort: &Cohort) -> Cohort {
    let dead: Vec<usize> = (0..cohort.len()).filter(|&i| cohort.events[i].dead).collect();
    cohort.select(&dead)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn subject(id: &str) -> Subject {
        Subject {
            id: id.to_string(),
            sex: 1,
            race: 0,
            educ_lh: 0,
            educ_ah: 1,
            bmi: 27.5,
            baseline_age: 4.0,
            nonfatal_counts: [0, 1, 0],
        }
    }

    pub(crate) fn event(id: &str, dead: bool) -> EventRecord {
        EventRecord {
            subject_id: id.to_string(),
            dead,
            death_age: dead.then_some(7.5),
            delta: dead.then_some(1),
            c_adjudicated: dead.then_some(0),
            observed_time: 3.5,
            event_indicator: 0,
        }
    }

    pub(crate) fn toy(n_dead: usize, n_alive: usize) -> Cohort {
        let mut subjects = Vec::new();
        let mut events = Vec::new();
        let mut long = Vec::new();
        for i in 0..n_dead + n_alive {
            let id = format!("s{i}");
            subjects.push(subject(&id));
            events.push(event(&id, i < n_dead));
            long.push(LongitudinalRecord {
                subject_id: id.clone(),
                factor: 1,
                age: 4.0,
                value: 120.0 + i as f64,
            });
        }
        Cohort::new(subjects, long, events, 31.0, vec!["bp".into()]).unwrap()
    }

    #[test]
    fn filter_dead_cases() {
        assert_eq!(filter_dead(&toy(3, 2)).len(), 3);
        assert!(filter_dead(&toy(0, 4)).is_empty());
        let all = toy(4, 0);
        assert_eq!(filter_dead(&all), all);
        let f = filter_dead(&toy(3, 2));
        assert_eq!(f.longitudinal.len(), 3);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let c = toy(60, 40);
        let (a, b) = split_cohort(&c, 0.75, 9).unwrap();
        assert_eq!((a.len(), b.len()), (75, 25));
        let (a2, _) = split_cohort(&c, 0.75, 9).unwrap();
        assert_eq!(a, a2);
        let small = toy(2, 2);
        let (a, b) = split_cohort(&small, 0.5, 1).unwrap();
        assert_eq!((a.len(), b.len()), (2, 2));
        let mut ids: Vec<_> = a.subjects.iter().chain(&b.subjects).map(|s| s.id.clone()).collect();
        ids.sort();
        let mut orig: Vec<_> = small.subjects.iter().map(|s| s.id.clone()).collect();
        orig.sort();
        assert_eq!(ids, orig);
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let c = toy(2, 2);
        assert!(split_cohort(&c, 0.0, 1).is_err());
        assert!(split_cohort(&c, 1.0, 1).is_err());
    }

    #[test]
    fn rejects_orphans_and_duplicates() {
        let s = vec![subject("a")];
        let err = Cohort::new(s.clone(), vec![], vec![event("b", true)], 31.0, vec![]).unwrap_err();
        assert!(err.to_string().contains("unknown subject"));
        let err = Cohort::new(
            vec![subject("a"), subject("a")],
            vec![],
            vec![event("a", true)],
            31.0,
            vec![],
        )
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateSubject(_)));
    }

    #[test]
    fn subject_invariants() {
        let mut s = subject("x");
        s.educ_lh = 1;
        assert!(s.validate().is_err());
        let mut s = subject("x");
        s.bmi = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn alive_subjects_carry_no_cause() {
        let mut e = event("x", false);
        e.delta = Some(1);
        assert!(e.validate().is_err());
    }
}

#[cfg(test)]
mod proptests {
    use super::tests::toy;
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn split_is_a_partition(seed in any::<u64>(), n in 1usize..60, frac in 0.05f64..0.95) {
            let c = toy(n, 0);
            let (a, b) = split_cohort(&c, frac, seed).unwrap();
            prop_assert_eq!(a.len() + b.len(), n);
            let ids_a: std::collections::HashSet<_> = a.subjects.iter().map(|s| &s.id).collect();
            prop_assert!(b.subjects.iter().all(|s| !ids_a.contains(&s.id)));
        }
    }
}

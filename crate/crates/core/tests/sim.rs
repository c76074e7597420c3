use adjudicate::cohort::ConfusionTable;
use adjudicate::seed::rng_for;
use adjudicate::sim::{
    calibrate_truth, dead_confusion, invert_cumulative_hazard, simulate_cohort, CalibrationTarget,
    SimulationTruth, SubjectHazard,
};
use rand_distr::{Distribution, Exp1};

fn desk_truth() -> SimulationTruth {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/truth_desk.txt");
    SimulationTruth::load(std::path::Path::new(path)).unwrap()
}

fn weibull_draws(n: usize) -> Vec<f64> {
    let h = SubjectHazard::weibull(1.75, 0.0);
    let mut rng = rng_for(17, &[]);
    let mut t: Vec<f64> = (0..n)
        .map(|_| {
            let e: f64 = Exp1.sample(&mut rng);
            invert_cumulative_hazard(&h, e, f64::INFINITY).unwrap().unwrap()
        })
        .collect();
    t.sort_by(|a, b| a.total_cmp(b));
    t
}

#[test]
fn weibull_event_times() {
    let t = weibull_draws(100_000);
    let median = 0.5 * (t[49_999] + t[50_000]);
    let analytic = 2f64.ln().powf(1.0 / 1.75);
    assert!((analytic - 0.8109).abs() < 3e-4);
    assert!((median - analytic).abs() < 0.01, "median {median}");
    // Kolmogorov distance between the empirical and exp(-t^1.75) survival
    let n = t.len() as f64;
    let sup = t
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let s = (-x.powf(1.75)).exp();
            let above = 1.0 - i as f64 / n;
            let below = 1.0 - (i + 1) as f64 / n;
            (s - above).abs().max((s - below).abs())
        })
        .fold(0.0, f64::max);
    assert!(sup <= 0.01, "sup-norm {sup}");
}

#[test]
fn censoring_only_limit() {
    let mut truth = desk_truth();
    truth.n = 10_000;
    truth.log_hazard_offset = -60.0;
    // trajectories are extrapolated far past t_max; keep them out of the hazard
    truth.alpha = vec![0.0; 3];
    truth.follow_up = 1.0e4;
    let cohort = simulate_cohort(&truth, 3).unwrap();
    assert!(cohort.events.iter().all(|e| e.event_indicator == 0));
    let mean = cohort.events.iter().map(|e| e.observed_time).sum::<f64>() / cohort.len() as f64;
    assert!((mean - 8.0).abs() < 0.1, "mean {mean}");
}

#[test]
fn simulated_confusion_matches_calibration_targets() {
    let mut truth = desk_truth();
    truth.n = 10_000;
    let cohort = simulate_cohort(&truth, 99).unwrap();
    let m = dead_confusion(&cohort).unwrap();
    assert!((m.sensitivity - 0.58).abs() <= 0.05, "{m:?}");
    assert!((m.specificity - 0.85).abs() <= 0.05, "{m:?}");
    let dead: Vec<_> = cohort.events.iter().filter(|e| e.dead).collect();
    let share = dead.iter().filter(|e| e.c_adjudicated == Some(1)).count() as f64 / dead.len() as f64;
    assert!((share - 0.5).abs() < 0.03, "event share among the dead {share}");
}

#[test]
fn full_scale_preset() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/truth_full.txt");
    let truth = SimulationTruth::load(std::path::Path::new(path)).unwrap();
    assert_eq!(truth.n, 1200);
    let cohort = simulate_cohort(&truth, 5).unwrap();
    let events = cohort.events.iter().filter(|e| e.event_indicator == 1).count() as f64;
    assert!((events - 800.0).abs() <= 40.0, "{events} events");
    assert!((cohort.len() as f64 - events - 400.0).abs() <= 20.0);
    // rates read row-wise: P(Δ=1 | C=1) and P(Δ=0 | C=0)
    let t = ConfusionTable::from_pairs(
        cohort
            .events
            .iter()
            .filter_map(|e| Some((e.c_adjudicated?, e.delta?))),
    );
    let sens = t.n11 as f64 / (t.n11 + t.n10) as f64;
    let spec = t.n00 as f64 / (t.n00 + t.n01) as f64;
    assert!((sens - 0.58).abs() <= 0.05 && (spec - 0.85).abs() <= 0.05, "{sens} {spec}");
}

#[test]
fn checked_in_truth_is_reproducible() {
    let recalibrated = calibrate_truth(&SimulationTruth::default(), &CalibrationTarget::desk_scale()).unwrap();
    let stored = desk_truth();
    assert!((recalibrated.log_hazard_offset - stored.log_hazard_offset).abs() < 1e-9);
    for c in 0..2 {
        assert!((recalibrated.delta[c][0] - stored.delta[c][0]).abs() < 1e-9);
    }
}

#[test]
fn larger_cohort_extends_smaller_one() {
    let mut truth = desk_truth();
    truth.n = 40;
    let small = simulate_cohort(&truth, 8).unwrap();
    truth.n = 80;
    let large = simulate_cohort(&truth, 8).unwrap();
    assert_eq!(small.subjects[..], large.subjects[..40]);
    assert_eq!(small.events[..], large.events[..40]);
}

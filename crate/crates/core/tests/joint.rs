use adjudicate::cohort::{Cohort, EventSource};
use adjudicate::joint::{fit_joint_model, longitudinal_loglik, survival_loglik, JointConfig, JointData};
use adjudicate::legendre::Feature;
use adjudicate::seed::rng_for;
use adjudicate::sim::{simulate_cohort, SimulationTruth};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn truth(n: usize) -> SimulationTruth {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/truth_desk.txt");
    let mut t = SimulationTruth::load(std::path::Path::new(path)).unwrap();
    t.n = n;
    t
}

fn small_fit() -> JointConfig {
    let mut c = JointConfig {
        links: vec![Feature::Value],
        n_knots: 3,
        ..Default::default()
    };
    c.nuts.n_warmup = 150;
    c.nuts.n_samples = 150;
    c.nuts.max_depth = 6;
    c
}

#[test]
fn gradient_matches_central_differences() {
    let cohort = simulate_cohort(&truth(50), 11).unwrap();
    let events = cohort.event_indicators(EventSource::Adjudicated);
    let data = JointData::new(&cohort, &events, &JointConfig::default()).unwrap();
    let x0 = data.initial_point();
    let mut rng = rng_for(3, &[]);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let x: Vec<f64> = x0
            .iter()
            .map(|v| v + 0.3 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        let mut g = vec![0.0; x.len()];
        data.log_posterior_grad(&x, &mut g);
        // a random subset keeps the check under a second per point
        for _ in 0..40 {
            let j = rng.random_range(0..x.len());
            let mut up = x.clone();
            let mut dn = x.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (data.log_posterior(&up) - data.log_posterior(&dn)) / (2.0 * h);
            let rel = (g[j] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(rel);
            assert!(rel < 1e-4, "coordinate {j}: analytic {} vs numeric {fd}", g[j]);
        }
    }
    assert!(worst.is_finite());
}

#[test]
fn subject_loglik_matches_reference_likelihood() {
    let cohort = simulate_cohort(&truth(30), 5).unwrap();
    let events = cohort.event_indicators(EventSource::Adjudicated);
    let data = JointData::new(&cohort, &events, &JointConfig::default()).unwrap();
    let long = cohort.grouped_longitudinal();
    let mut rng = rng_for(9, &[]);
    let x: Vec<f64> = data
        .initial_point()
        .iter()
        .map(|v| v + 0.2 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect();
    let state = data.state(&x).unwrap();
    for (i, id) in data.subject_ids().iter().enumerate() {
        let pos = cohort.subjects.iter().position(|s| &s.id == id).unwrap();
        let rec = data.survival_record(i, &x).unwrap();
        let mut reference = survival_loglik(&state, &rec).unwrap();
        for g in 0..cohort.n_factors() {
            reference += longitudinal_loglik(&state, g, &rec.random_effects[g], &long[pos][g]).unwrap();
        }
        // the sampler works with standardized outcomes
        let got = data.subject_loglik(i, &x).unwrap() - data.longitudinal_scale_correction(i);
        assert!(
            (got - reference).abs() < 1e-8 * reference.abs().max(1.0),
            "{id}: {got} vs {reference}"
        );
    }
}

#[test]
fn identical_summaries_after_relabelling_subjects() {
    let cohort = simulate_cohort(&truth(40), 21).unwrap();
    let mut relabelled = cohort.clone();
    let rename = |s: &str| s.replacen('S', "P", 1);
    for s in &mut relabelled.subjects {
        s.id = rename(&s.id);
    }
    for e in &mut relabelled.events {
        e.subject_id = rename(&e.subject_id);
    }
    for r in &mut relabelled.longitudinal {
        r.subject_id = rename(&r.subject_id);
    }
    let mut cfg = small_fit();
    cfg.nuts.n_warmup = 60;
    cfg.nuts.n_samples = 40;
    let events = cohort.event_indicators(EventSource::Adjudicated);
    let a = fit_joint_model(&cohort, &events, &cfg).unwrap();
    let b = fit_joint_model(&relabelled, &events, &cfg).unwrap();
    assert_eq!(a.summary, b.summary);
}

fn fit_truth(cohort: &Cohort, truth: &SimulationTruth, seed: u64) -> Vec<(String, f64, f64, f64)> {
    let mut cfg = small_fit();
    cfg.seed = seed;
    let fit = fit_joint_model(cohort, &cohort.event_indicators(EventSource::Adjudicated), &cfg).unwrap();
    truth
        .hazard_parameters()
        .into_iter()
        .map(|(name, t)| {
            let p = fit.summary.get(&name).unwrap();
            (name, t, p.mean, p.sd)
        })
        .collect()
}

#[test]
fn posterior_means_recover_simulation_truth() {
    let t = truth(600);
    let cohort = simulate_cohort(&t, 2024).unwrap();
    let rows = fit_truth(&cohort, &t, 1);
    let within = rows
        .iter()
        .filter(|(_, t, m, sd)| (m - t).abs() <= 3.0 * sd)
        .count();
    assert!(within >= 8, "{rows:?}");
}

#[test]
fn null_links_stay_near_zero() {
    let mut t = truth(300);
    t.alpha = vec![0.0; 3];
    let cohort = simulate_cohort(&t, 77).unwrap();
    let mut cfg = small_fit();
    cfg.seed = 4;
    let fit = fit_joint_model(&cohort, &cohort.event_indicators(EventSource::Adjudicated), &cfg).unwrap();
    for name in ["alpha_bp_value", "alpha_glucose_value", "alpha_chol_value"] {
        let j = fit.names.iter().position(|n| n == name).unwrap();
        let mean_abs = fit.draws.iter().map(|d| d[j].abs()).sum::<f64>() / fit.draws.len() as f64;
        assert!(mean_abs < 0.05, "{name}: E|alpha| = {mean_abs}");
    }
}

use adjudicate::cohort::{Cohort, EventRecord, LongitudinalRecord, Subject};
use adjudicate::dpm::{fit_dpm_model, mixture_density, truncation_rule, DpmConfig, DpmFit};
use adjudicate::legendre::{features, TrajectoryCoefficients};
use adjudicate::seed::rng_for;
use rand::Rng;
use rand_distr::{Distribution, Normal};

const T_MAX: f64 = 30.0;

/// Five visits per subject, fixed effects zero, `b_i` from `draw_b`.
fn synthetic<F: FnMut(&mut adjudicate::seed::Rng) -> [f64; 3]>(
    n: usize,
    sigma: f64,
    seed: u64,
    mut draw_b: F,
) -> (Cohort, Vec<[f64; 3]>) {
    let mut rng = rng_for(seed, &[]);
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut subjects = Vec::new();
    let mut events = Vec::new();
    let mut long = Vec::new();
    let mut truth = Vec::new();
    for i in 0..n {
        let id = format!("p{i}");
        let start: f64 = rng.random_range(0.0..18.0);
        subjects.push(Subject {
            id: id.clone(),
            sex: u8::from(rng.random::<f64>() < 0.5),
            race: u8::from(rng.random::<f64>() < 0.3),
            educ_lh: 0,
            educ_ah: u8::from(rng.random::<f64>() < 0.4),
            bmi: 27.0,
            baseline_age: start,
            nonfatal_counts: [0; 3],
        });
        events.push(EventRecord {
            subject_id: id.clone(),
            dead: false,
            death_age: None,
            delta: None,
            c_adjudicated: None,
            observed_time: 12.0,
            event_indicator: 0,
        });
        let b = draw_b(&mut rng);
        truth.push(b);
        let coef = TrajectoryCoefficients::new(b, 0.0, T_MAX).unwrap();
        for v in 0..5 {
            let age = start + 3.0 * v as f64;
            long.push(LongitudinalRecord {
                subject_id: id.clone(),
                factor: 1,
                age,
                value: adjudicate::legendre::trajectory_value(&coef, age).unwrap()
                    + noise.sample(&mut rng),
            });
        }
    }
    let cohort = Cohort::new(subjects, long, events, T_MAX, vec!["f".into()]).unwrap();
    (cohort, truth)
}

fn normal3(mean: [f64; 3], sd: [f64; 3]) -> impl FnMut(&mut adjudicate::seed::Rng) -> [f64; 3] {
    move |rng| {
        let mut out = [0.0; 3];
        for j in 0..3 {
            out[j] = Normal::new(mean[j], sd[j]).unwrap().sample(rng);
        }
        out
    }
}

fn posterior_sd(fit: &DpmFit, i: usize, j: usize, mean: f64) -> f64 {
    let r = fit.draws.len() as f64;
    let ss: f64 = fit
        .draws
        .iter()
        .map(|d| {
            let c = &d[i];
            let v = [c.b0, c.b1, c.b2][j];
            (v - mean).powi(2)
        })
        .sum();
    (ss / (r - 1.0)).sqrt()
}

#[test]
fn single_cluster_recovery_and_sigma() {
    let (cohort, truth) = synthetic(300, 3.0, 21, normal3([120.0, 6.0, 1.0], [10.0, 4.0, 2.0]));
    let cfg = DpmConfig {
        truncation: truncation_rule(300, (1.0, 1.0)),
        n_iter: 2000,
        n_burn: 500,
        thin: 5,
        seed: 3,
        ..Default::default()
    };
    let fit = fit_dpm_model(&cohort, 0, &cfg).unwrap();
    assert_eq!(fit.draws.len(), cfg.n_retained());
    let post = fit.posterior_mean_coefficients();
    let mut covered = 0;
    for (i, (p, t)) in post.iter().zip(&truth).enumerate() {
        if (0..3).all(|j| (p[j] - t[j]).abs() <= 3.0 * posterior_sd(&fit, i, j, p[j])) {
            covered += 1;
        }
    }
    assert!(covered as f64 >= 0.95 * 300.0, "covered {covered}");

    let sigma = fit.states.iter().map(|s| s.sigma).sum::<f64>() / fit.states.len() as f64;
    assert!((sigma - 3.0).abs() / 3.0 < 0.10, "sigma {sigma}");

    // the last stick carries negligible mass
    let k = cfg.truncation;
    let tail = fit.states.iter().map(|s| s.weights[k - 1]).sum::<f64>() / fit.states.len() as f64;
    assert!(tail < 0.01, "tail {tail}");
}

#[test]
fn one_component_truncation_is_parametric() {
    let (cohort, _) = synthetic(60, 3.0, 5, normal3([100.0, 0.0, 0.0], [5.0, 2.0, 1.0]));
    let cfg = DpmConfig { truncation: 1, n_iter: 200, n_burn: 100, thin: 2, ..Default::default() };
    let fit = fit_dpm_model(&cohort, 0, &cfg).unwrap();
    for s in &fit.states {
        assert_eq!(s.weights, vec![1.0]);
        assert!(s.assignments.iter().all(|&z| z == 0));
    }
}

#[test]
fn bimodal_intercepts_are_separated() {
    let n = 300;
    let (cohort, truth) = synthetic(n, 1.0, 9, |rng: &mut adjudicate::seed::Rng| {
        let centre = if rng.random::<f64>() < 0.5 { 95.0 } else { 105.0 };
        [
            Normal::new(centre, 1.0).unwrap().sample(rng),
            Normal::new(2.0, 0.5).unwrap().sample(rng),
            Normal::new(0.0, 0.3).unwrap().sample(rng),
        ]
    });
    let cfg = DpmConfig {
        truncation: truncation_rule(n, (1.0, 1.0)),
        n_iter: 1500,
        n_burn: 500,
        thin: 5,
        seed: 17,
        ..Default::default()
    };
    let fit = fit_dpm_model(&cohort, 0, &cfg).unwrap();
    // Cluster labels are arbitrary, so name each cluster by which side of 100 its mean falls.
    let mut correct = 0;
    for i in 0..n {
        let high_votes = fit
            .states
            .iter()
            .filter(|s| s.means[s.assignments[i]][0] > 100.0)
            .count();
        let modal_high = 2 * high_votes > fit.states.len();
        if modal_high == (truth[i][0] > 100.0) {
            correct += 1;
        }
    }
    assert!(correct as f64 >= 0.9 * n as f64, "correct {correct}");
}

#[test]
fn mixture_density_ignores_cluster_labels() {
    let (cohort, _) = synthetic(80, 2.0, 2, normal3([50.0, 1.0, 0.0], [8.0, 2.0, 1.0]));
    let cfg = DpmConfig { truncation: 6, n_iter: 120, n_burn: 60, thin: 10, ..Default::default() };
    let fit = fit_dpm_model(&cohort, 0, &cfg).unwrap();
    let state = fit.states.last().unwrap();
    let mut permuted = state.clone();
    let order = [3, 0, 5, 1, 4, 2];
    permuted.weights = order.iter().map(|&k| state.weights[k]).collect();
    permuted.means = order.iter().map(|&k| state.means[k]).collect();
    permuted.covariances = order.iter().map(|&k| state.covariances[k]).collect();
    for b0 in [30.0, 45.0, 50.0, 62.0] {
        for b1 in [-2.0, 1.0, 4.0] {
            for b2 in [-1.0, 0.5] {
                let a = mixture_density(state, [b0, b1, b2]).unwrap();
                let p = mixture_density(&permuted, [b0, b1, b2]).unwrap();
                assert!((a - p).abs() <= 1e-10 * a.abs().max(1e-300), "{a} {p}");
            }
        }
    }
}

fn fit_with(draws: Vec<TrajectoryCoefficients>) -> DpmFit {
    DpmFit {
        factor: 0,
        subject_ids: vec!["a".into()],
        states: Vec::new(),
        draws: draws.into_iter().map(|d| vec![d]).collect(),
        diagnostics: Vec::new(),
        area_origin: 0.0,
    }
}

#[test]
fn posterior_feature_examples() {
    let c = TrajectoryCoefficients::new([1.0, 2.0, 3.0], 10.0, T_MAX).unwrap();
    let fit = fit_with(vec![c; 6]);
    let f = fit.posterior_features(0, 12.0, 3).unwrap();
    assert_eq!(f.len(), 3);
    assert!(f.windows(2).all(|w| w[0] == w[1]));
    let one = fit.posterior_features(0, 12.0, 1).unwrap();
    assert_eq!(one[0], features(&c, 0.0, 12.0).unwrap());

    let zero = fit_with(vec![TrajectoryCoefficients::new([0.0; 3], 4.0, T_MAX).unwrap(); 2]);
    let f = zero.posterior_features(0, 7.0, 2).unwrap();
    for t in f {
        assert_eq!(t.value, 4.0);
        assert_eq!(t.slope, 0.0);
        assert!((t.area - 28.0).abs() < 1e-12);
    }
    assert!(fit.posterior_features(0, T_MAX + 1.0, 1).is_err());
}

#[test]
fn fit_is_reproducible() {
    let (cohort, _) = synthetic(40, 2.0, 4, normal3([10.0, 1.0, 0.0], [2.0, 1.0, 0.5]));
    let cfg = DpmConfig { truncation: 4, n_iter: 60, n_burn: 20, thin: 4, seed: 99, ..Default::default() };
    let a = fit_dpm_model(&cohort, 0, &cfg).unwrap();
    let b = fit_dpm_model(&cohort, 0, &cfg).unwrap();
    assert_eq!(a.draws, b.draws);
    assert!(fit_dpm_model(&cohort, 1, &cfg).is_err());
}

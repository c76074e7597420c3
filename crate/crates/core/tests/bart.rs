use adjudicate::bart::{fit_bart_probit, BartConfig, Design};
use adjudicate::seed::rng_for;
use adjudicate::stats::{auc, norm_cdf};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn quick() -> BartConfig {
    BartConfig { n_trees: 50, n_burn: 300, n_post: 300, n_keep: 60, ..Default::default() }
}

#[test]
fn separable_binary_covariate() {
    let rows: Vec<Vec<f64>> = (0..400).map(|i| vec![f64::from(i % 2)]).collect();
    let labels: Vec<u8> = (0..400).map(|i| (i % 2) as u8).collect();
    let d = Design::new(vec!["x".into()], rows).unwrap();
    let fit = fit_bart_probit(&d, &labels, &quick()).unwrap();
    let test = Design::new(vec!["x".into()], vec![vec![1.0], vec![0.0]]).unwrap();
    let p = fit.predict_mean(&test).unwrap();
    assert!(p[0] >= 0.9, "{p:?}");
    assert!(p[1] <= 0.1, "{p:?}");
}

#[test]
fn intercept_only_matches_base_rate() {
    let mut rng = rng_for(8, &[]);
    let n = 500;
    let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>()]).collect();
    let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.3)).collect();
    let base = labels.iter().map(|&l| f64::from(l)).sum::<f64>() / n as f64;
    let cfg = BartConfig {
        n_trees: 1,
        allow_grow: false,
        n_burn: 500,
        n_post: 2000,
        n_keep: 400,
        ..Default::default()
    };
    let fit = fit_bart_probit(&Design::new(vec!["x".into()], rows.clone()).unwrap(), &labels, &cfg).unwrap();
    for f in &fit.forests {
        assert_eq!(f.trees[0].n_leaves(), 1);
    }
    let p = fit.predict_mean(&Design::new(vec!["x".into()], rows[..5].to_vec()).unwrap()).unwrap();
    for v in p {
        assert!((v - base).abs() < 0.03, "{v} vs {base}");
    }
}

fn probit_data(n: usize, seed: u64) -> (Design, Vec<u8>, Vec<f64>) {
    let mut rng = rng_for(seed, &[]);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut truth = Vec::new();
    for _ in 0..n {
        let x1: f64 = StandardNormal.sample(&mut rng);
        let x2: f64 = rng.random();
        let b = f64::from(u8::from(rng.random::<f64>() < 0.4));
        let f = 1.2 * x1 + 1.5 * (x2 - 0.5) + 0.6 * b - 0.2;
        let p = norm_cdf(f);
        truth.push(p);
        labels.push(u8::from(rng.random::<f64>() < p));
        rows.push(vec![x1, x2, b]);
    }
    (Design::new(vec!["x1".into(), "x2".into(), "b".into()], rows).unwrap(), labels, truth)
}

#[test]
fn predictions_track_probit_truth() {
    let (train, labels, _) = probit_data(600, 1);
    let (test, test_labels, truth) = probit_data(400, 2);
    let fit = fit_bart_probit(&train, &labels, &quick()).unwrap();
    let p = fit.predict_mean(&test).unwrap();
    assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    let mae = p.iter().zip(&truth).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64;
    assert!(mae < 0.1, "mae {mae}");
    let flags: Vec<bool> = test_labels.iter().map(|&l| l == 1).collect();
    assert!(auc(&p, &flags) > 0.75);
}

#[test]
fn row_permutation_changes_only_monte_carlo_noise() {
    let (train, labels, _) = probit_data(300, 3);
    let mut order: Vec<usize> = (0..300).collect();
    order.reverse();
    let permuted = Design::new(
        train.columns.clone(),
        order.iter().map(|&i| train.rows[i].clone()).collect(),
    )
    .unwrap();
    let permuted_labels: Vec<u8> = order.iter().map(|&i| labels[i]).collect();
    let cfg = BartConfig { n_post: 1000, n_keep: 200, ..quick() };
    let (probe, _, _) = probit_data(20, 4);
    let a = fit_bart_probit(&train, &labels, &cfg).unwrap().predict_mean(&probe).unwrap();
    let b = fit_bart_probit(&permuted, &permuted_labels, &cfg).unwrap().predict_mean(&probe).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 0.08, "{x} vs {y}");
    }
}

#[test]
fn same_seed_same_forests() {
    let (train, labels, _) = probit_data(100, 5);
    let cfg = BartConfig { n_trees: 10, n_burn: 20, n_post: 20, n_keep: 4, ..Default::default() };
    let a = fit_bart_probit(&train, &labels, &cfg).unwrap();
    let b = fit_bart_probit(&train, &labels, &cfg).unwrap();
    for (x, y) in a.forests.iter().zip(&b.forests) {
        assert_eq!(x.to_json_line().unwrap(), y.to_json_line().unwrap());
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("forests.jsonl");
    a.write_forests(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 4);
    let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(v["trees"].as_array().unwrap().len(), 10);
}

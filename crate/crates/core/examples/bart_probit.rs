//! Classify synthetic deaths with BART probit and check calibration.

use adjudicate::bart::{fit_bart_probit, BartConfig, Design};
use adjudicate::seed::rng_for;
use adjudicate::stats::{auc, norm_cdf};
use rand::Rng;

fn data(n: usize, seed: u64) -> (Design, Vec<u8>) {
    let mut rng = rng_for(seed, &[]);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n {
        let age: f64 = rng.random_range(0.0..31.0);
        let bp: f64 = rng.random_range(100.0..180.0);
        let coded = f64::from(u8::from(rng.random::<f64>() < 0.5));
        let p = norm_cdf(-1.0 + 0.03 * age + 0.015 * (bp - 140.0) + 1.2 * coded);
        labels.push(u8::from(rng.random::<f64>() < p));
        rows.push(vec![age, bp, coded]);
    }
    (Design::new(vec!["age".into(), "bp".into(), "coded".into()], rows).unwrap(), labels)
}

fn main() -> adjudicate::Result<()> {
    let (train, labels) = data(800, 1);
    let (test, test_labels) = data(400, 2);
    let config = BartConfig {
        n_trees: 50,
        n_burn: 300,
        n_post: 300,
        n_keep: 20,
        ..Default::default()
    };
    let fit = fit_bart_probit(&train, &labels, &config)?;
    let draws = fit.predict_draws(&test)?;
    let mean = fit.predict_mean(&test)?;
    let flags: Vec<bool> = test_labels.iter().map(|&l| l == 1).collect();
    println!("{} retained forests, held-out AUC {:.3}", draws.len(), auc(&mean, &flags));
    for i in 0..5 {
        let spread: Vec<String> = draws.iter().take(4).map(|d| format!("{:.2}", d[i])).collect();
        println!("row {i}: mean {:.3}, draws {}", mean[i], spread.join(" "));
    }
    Ok(())
}

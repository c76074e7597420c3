//! Fit the joint longitudinal-survival model to a simulated cohort and
//! compare hazard coefficients with the truth.

use std::path::Path;

use adjudicate::cohort::EventSource;
use adjudicate::joint::{fit_joint_model, JointConfig};
use adjudicate::legendre::Feature;
use adjudicate::sim::{simulate_cohort, SimulationTruth};

fn main() -> adjudicate::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/truth_desk.txt");
    let mut truth = SimulationTruth::load(&path)?;
    truth.n = 300;
    let cohort = simulate_cohort(&truth, 3)?;
    let mut config = JointConfig {
        links: vec![Feature::Value],
        n_knots: 3,
        ..Default::default()
    };
    config.nuts.n_warmup = 200;
    config.nuts.n_samples = 200;
    let fit = fit_joint_model(&cohort, &cohort.event_indicators(EventSource::Adjudicated), &config)?;
    println!("{:<22} {:>8} {:>8} {:>8} {:>18}", "parameter", "truth", "mean", "sd", "95% interval");
    for (name, t) in truth.hazard_parameters() {
        let p = fit.summary.get(&name).expect("hazard parameter");
        println!("{name:<22} {t:>8.3} {:>8.3} {:>8.3} ({:>7.3}, {:>7.3})", p.mean, p.sd, p.q025, p.q975);
    }
    let s = &fit.stats;
    println!("divergences {}, mean acceptance {:.2}, mean tree depth {:.1}", s.divergences, s.mean_accept, s.mean_depth);
    Ok(())
}

//! Fit the mixture model to the blood-pressure trajectories of a simulated
//! cohort and draw features at the end of follow-up.

use std::path::Path;

use adjudicate::dpm::{fit_dpm_model, DpmConfig};
use adjudicate::sim::{simulate_cohort, SimulationTruth};

fn main() -> adjudicate::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/truth_desk.txt");
    let mut truth = SimulationTruth::load(&path)?;
    truth.n = 200;
    let cohort = simulate_cohort(&truth, 1)?;
    let config = DpmConfig {
        n_iter: 600,
        n_burn: 300,
        thin: 10,
        ..Default::default()
    };
    let fit = fit_dpm_model(&cohort, 0, &config)?;
    let b = fit.posterior_mean_coefficients();
    println!("posterior mean coefficients of the first three subjects:");
    for (i, c) in b.iter().take(3).enumerate() {
        println!("  {} {:>8.2} {:>7.2} {:>6.2}", cohort.subjects[i].id, c[0], c[1], c[2]);
    }
    let i = 0;
    let age = cohort.subjects[i].baseline_age + cohort.events[i].observed_time;
    for f in fit.posterior_features(i, age.min(cohort.t_max), 3)? {
        println!("draw at age {:.2}: value {:.2}, slope {:.3}, area {:.1}", f.eval_age, f.value, f.slope, f.area);
    }
    let mut log = Vec::new();
    fit.write_diagnostics(&mut log).expect("in-memory write");
    let text = String::from_utf8_lossy(&log);
    println!("last diagnostics row: {}", text.lines().last().unwrap_or(""));
    Ok(())
}

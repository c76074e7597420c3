//! Multiple adjudication of a target cohort using a reference cohort with
//! known causes of death.

use std::path::Path;

use adjudicate::cohort::split_cohort;
use adjudicate::legendre::Feature;
use adjudicate::pipeline::{run_pipeline, PipelineConfig};
use adjudicate::sim::{simulate_cohort, SimulationTruth};

fn main() -> adjudicate::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/truth_desk.txt");
    let mut truth = SimulationTruth::load(&path)?;
    truth.n = 300;
    let cohort = simulate_cohort(&truth, 9)?;
    let (reference, target) = split_cohort(&cohort, 0.75, 9)?;

    let mut config = PipelineConfig {
        m: 2,
        k: 2,
        l: 1,
        seed: 5,
        out_dir: Some(std::env::temp_dir().join("adjudicate-example")),
        ..Default::default()
    };
    config.dpm.n_iter = 400;
    config.dpm.n_burn = 200;
    config.dpm.thin = 10;
    config.bart.n_trees = 50;
    config.bart.n_burn = 200;
    config.bart.n_post = 200;
    config.joint.links = vec![Feature::Value];
    config.joint.n_knots = 3;
    config.joint.nuts.n_warmup = 150;
    config.joint.nuts.n_samples = 150;

    let result = run_pipeline(&reference, &target, &config)?;
    let truth_of = truth.hazard_parameters();
    println!("{:<22} {:>8} {:>9} {:>8} {:>20}", "parameter", "truth", "estimate", "mcse", "interval");
    for p in &result.parameters {
        let t = truth_of.iter().find(|x| x.0 == p.parameter).map_or(f64::NAN, |x| x.1);
        println!("{:<22} {t:>8.3} {:>9.4} {:>8.4} ({:>8.4}, {:>8.4})", p.parameter, p.estimate, p.mcse, p.lo, p.hi);
    }
    let m = &result.manifest;
    println!("{} fits; joint fit {:.1} s; realistic cost {:.0} s", m.n_fits, m.timings.joint_fit, m.cost.realistic);
    if let Some(sel) = &m.n_selection {
        println!("fits needed for the tolerances: {} as {:?}", sel.literal_n, sel.literal_mkl);
    }
    println!("outputs in {}", config.out_dir.unwrap().display());
    Ok(())
}

//! A two-replicate simulation study comparing adjudicated, unadjudicated
//! and pipeline analyses, with the metric tables written to a directory.

use std::path::Path;

use adjudicate::kvconfig::KvConfig;
use adjudicate::sim::{report_tables, run_simulation_study, SimulationTruth, StudyConfig};

fn main() -> adjudicate::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut truth = SimulationTruth::load(&dir.join("truth_desk.txt"))?;
    truth.n = 200;
    let mut config = StudyConfig::from_config(&KvConfig::load(&dir.join("study_desk.txt"))?)?;
    config.replicates = 2;
    config.pipeline.m = 1;
    config.pipeline.l = 1;

    let outcome = run_simulation_study(&truth, &config)?;
    println!("{:<22} {:<14} {:>8} {:>8} {:>6}", "parameter", "method", "bias", "rmse", "cover");
    for r in &outcome.table.rows {
        println!("{:<22} {:<14} {:>8.4} {:>8.4} {:>6.2}", r.parameter, r.method.to_string(), r.bias, r.rmse, r.coverage);
    }
    let out = std::env::temp_dir().join("adjudicate-study");
    report_tables(&outcome.table, &out)?;
    println!("{} failed analyses; tables in {}", outcome.failures.len(), out.display());
    Ok(())
}

//! Simulate a cohort from the checked-in truth and tabulate coded against
//! adjudicated causes of death.

use std::path::Path;

use adjudicate::cohort::ConfusionTable;
use adjudicate::sim::{dead_confusion, simulate_cohort, SimulationTruth};

fn main() -> adjudicate::Result<()> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/truth_desk.txt");
    let truth = SimulationTruth::load(&path)?;
    let cohort = simulate_cohort(&truth, 42)?;

    let dead = cohort.events.iter().filter(|e| e.dead).count();
    let events = cohort.events.iter().filter(|e| e.event_indicator == 1).count();
    println!("{} subjects, {} visits, {dead} dead, {events} adjudicated events", cohort.len(), cohort.longitudinal.len() / cohort.n_factors());

    let t = ConfusionTable::from_pairs(cohort.events.iter().filter_map(|e| Some((e.c_adjudicated?, e.delta?))));
    println!("            coded 1  coded 0");
    println!("adjudicated 1 {:>6} {:>8}", t.n11, t.n10);
    println!("adjudicated 0 {:>6} {:>8}", t.n01, t.n00);
    let m = dead_confusion(&cohort)?;
    println!("sensitivity {:.3}, specificity {:.3}", m.sensitivity, m.specificity);

    let s = &cohort.subjects[0];
    println!("first subject: {} entering at age {:.2}", s.id, s.baseline_age);
    for r in cohort.longitudinal.iter().filter(|r| r.subject_id == s.id) {
        println!("  factor {} age {:>6.2} value {:>8.2}", r.factor, r.age, r.value);
    }
    Ok(())
}

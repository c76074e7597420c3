use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use adjudicate::cohort::{read_cohort_dir, split_cohort, write_cohort_dir, EventSource};
use adjudicate::dpm::{fit_risk_factors, DpmConfig};
use adjudicate::joint::{fit_joint_model, JointConfig};
use adjudicate::kvconfig::KvConfig;
use adjudicate::pipeline::{
    adjudication_sets_with_forests, dpm_config_from, joint_config_from, run_pipeline,
    write_weights, PipelineConfig,
};
use adjudicate::sim::{
    calibrate_truth, read_estimates, report_tables, run_simulation_study, simulate_cohort,
    write_estimates, CalibrationTarget, MetricsTable, SimulationTruth, StudyConfig,
};
use adjudicate::{Error, Result};

#[derive(Parser)]
#[command(name = "adjudicate", version, about = "Survival inference with misclassified event indicators")]
struct Cli {
    /// Root seed; overrides `seed` in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; overrides `threads` in the config file.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Calibration {
    None,
    DeskScale,
    FullScale,
}

#[derive(Clone, Copy, ValueEnum)]
enum Events {
    Observed,
    Adjudicated,
    Unadjudicated,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a cohort from a truth configuration (`--config`).
    Simulate {
        #[arg(long)]
        out: PathBuf,
        /// Number of subjects; overrides `n` of the truth.
        #[arg(long)]
        n: Option<usize>,
        /// Recalibrate the hazard offset and misclassification intercepts.
        #[arg(long, value_enum, default_value = "none")]
        calibrate: Calibration,
        /// Also write `reference/` and `target/` with this reference share.
        #[arg(long)]
        split: Option<f64>,
        /// Write the (possibly calibrated) truth here.
        #[arg(long)]
        write_truth: Option<PathBuf>,
    },
    /// Fit the risk-factor mixture models and write feature draws.
    FitRisk {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Feature draws per subject.
        #[arg(long, default_value_t = 3)]
        draws: usize,
    },
    /// Fit the cause classifier on a reference cohort and write probability
    /// draws for the dead of a target cohort.
    FitBart {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the joint longitudinal-survival model.
    FitJoint {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long, value_enum, default_value = "observed")]
        events: Events,
        #[arg(long)]
        out: PathBuf,
        /// Also write the retained draws.
        #[arg(long)]
        draws: bool,
    },
    /// Multiple-adjudication pipeline.
    Pipeline {
        #[command(subcommand)]
        action: PipelineAction,
    },
    /// Replicated comparison of adjudicated, unadjudicated and pipeline fits.
    Study {
        #[arg(long)]
        out: PathBuf,
        /// Truth file; the calibrated default truth when absent.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Rebuild and print metric tables from a study's `estimates.csv`.
    Report {
        /// Study output directory.
        #[arg(long = "in")]
        input: PathBuf,
        /// Where to write the tables; defaults to the input directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum PipelineAction {
    /// Run all steps; cohorts come from `reference`/`target` config keys
    /// (relative to the config file) or the flags.
    Run {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        target: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<KvConfig> {
    match path {
        Some(p) => KvConfig::load(p),
        None => Ok(KvConfig::default()),
    }
}

/// Warn about keys that none of the configuration readers recognise.
fn warn_unknown_keys(cfg: &KvConfig) {
    let probe = KvConfig::parse(&cfg.to_text()).unwrap_or_default();
    let _ = SimulationTruth::from_config(&probe);
    let _ = StudyConfig::from_config(&probe);
    let _ = PipelineConfig::from_config(&probe);
    for key in ["reference", "target", "truth"] {
        let _ = probe.raw(key);
    }
    for key in probe.unread_keys() {
        log::warn!("unknown configuration key `{key}`");
    }
}

fn config_relative(config: Option<&Path>, cfg: &KvConfig, key: &str) -> Option<PathBuf> {
    let raw = PathBuf::from(cfg.raw(key)?);
    let base = config.and_then(Path::parent).unwrap_or(Path::new(""));
    Some(if raw.is_absolute() { raw } else { base.join(raw) })
}

fn override_common(cfg: &mut KvConfig, cli: &Cli) {
    if let Some(s) = cli.seed {
        cfg.set("seed", s);
    }
    if let Some(t) = cli.threads {
        cfg.set("threads", t);
    }
}

fn init_threads(threads: Option<usize>) {
    if let Some(t) = threads {
        // only fails if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
}

fn calibration_target(c: Calibration) -> Option<CalibrationTarget> {
    match c {
        Calibration::None => None,
        Calibration::DeskScale => Some(CalibrationTarget::desk_scale()),
        Calibration::FullScale => Some(CalibrationTarget::full_scale()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn print_table(table: &MetricsTable) {
    let methods: Vec<String> = table.methods.iter().map(|m| m.to_string()).collect();
    println!("{:<22} {:>9} | {}", "parameter", "truth", methods.join(" | "));
    for p in &table.parameters {
        let mut line = format!("{p:<22}");
        for (j, m) in table.methods.iter().enumerate() {
            let Some(r) = table.get(p, *m) else { continue };
            if j == 0 {
                line.push_str(&format!(" {:>9.4} |", r.truth));
            }
            line.push_str(&format!(
                " bias {:>8.4} rmse {:>7.4} cov {:>4.2} len {:>7.4} n {:>3} |",
                r.bias, r.rmse, r.coverage, r.ci_length, r.n
            ));
        }
        println!("{line}");
    }
}

fn run(cli: &Cli) -> Result<()> {
    let config_path = cli.config.as_deref();
    let mut cfg = load_config(config_path)?;
    override_common(&mut cfg, cli);
    warn_unknown_keys(&cfg);
    match &cli.command {
        Command::Simulate {
            out,
            n,
            calibrate,
            split,
            write_truth,
        } => {
            let mut truth = SimulationTruth::from_config(&cfg)?;
            if let Some(n) = n {
                truth.n = *n;
            }
            if let Some(target) = calibration_target(*calibrate) {
                truth = calibrate_truth(&truth, &target)?;
            }
            let seed = cfg.get_or("seed", 1u64)?;
            let cohort = simulate_cohort(&truth, seed)?;
            write_cohort_dir(&cohort, out)?;
            if let Some(f) = split {
                let (a, b) = split_cohort(&cohort, *f, seed)?;
                write_cohort_dir(&a, &out.join("reference"))?;
                write_cohort_dir(&b, &out.join("target"))?;
            }
            if let Some(p) = write_truth {
                truth.save(p)?;
            }
            let dead = cohort.events.iter().filter(|e| e.dead).count();
            let events = cohort.events.iter().filter(|e| e.event_indicator == 1).count();
            println!("{} subjects, {dead} dead, {events} events", cohort.len());
        }
        Command::FitRisk { cohort, out, draws } => {
            init_threads(cli.threads);
            let cohort = read_cohort_dir(cohort)?;
            let mut dpm = dpm_config_from(&cfg, DpmConfig::default())?;
            dpm.seed = cfg.get_or("seed", dpm.seed)?;
            let ages: Vec<f64> = cohort
                .subjects
                .iter()
                .zip(&cohort.events)
                .map(|(s, e)| e.death_age.unwrap_or(s.baseline_age + e.observed_time))
                .collect();
            let (fits, features) = fit_risk_factors(&cohort, &ages, *draws, &dpm)?;
            create_dir(out)?;
            features.write_csv(&out.join("features.csv"))?;
            for (fit, name) in fits.iter().zip(&cohort.factor_names) {
                let p = out.join(format!("diagnostics_{name}.csv"));
                let mut f = std::fs::File::create(&p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
                fit.write_diagnostics(&mut f).map_err(|e| Error::Io { path: p.clone(), source: e })?;
            }
        }
        Command::FitBart { reference, target, out } => {
            init_threads(cli.threads);
            let pc = PipelineConfig::from_config(&cfg)?;
            let reference = read_cohort_dir(reference)?;
            let target = read_cohort_dir(target)?;
            let adj = adjudication_sets_with_forests(&reference, &target, &pc, Some(&out.join("forests")))?;
            write_weights(&out.join("weights.csv"), &target, &adj)?;
        }
        Command::FitJoint {
            cohort,
            events,
            out,
            draws,
        } => {
            let cohort = read_cohort_dir(cohort)?;
            let mut jc = joint_config_from(&cfg, JointConfig::default())?;
            jc.seed = cfg.get_or("seed", jc.seed)?;
            let source = match events {
                Events::Observed => EventSource::Observed,
                Events::Adjudicated => EventSource::Adjudicated,
                Events::Unadjudicated => EventSource::Unadjudicated,
            };
            let fit = fit_joint_model(&cohort, &cohort.event_indicators(source), &jc)?;
            create_dir(out)?;
            fit.summary.write_csv(&out.join("summary.csv"))?;
            if *draws {
                fit.write_archive(&out.join("draws.bin"))?;
            }
            let s = &fit.stats;
            println!(
                "divergences {}, mean acceptance {:.3}, step size {:.4}",
                s.divergences, s.mean_accept, s.step_size
            );
        }
        Command::Pipeline {
            action:
                PipelineAction::Run {
                    out,
                    resume,
                    reference,
                    target,
                },
        } => {
            let mut pc = PipelineConfig::from_config(&cfg)?;
            pc.out_dir = Some(out.clone());
            pc.resume = *resume;
            let reference = reference
                .clone()
                .or_else(|| config_relative(config_path, &cfg, "reference"))
                .ok_or_else(|| Error::Config("no reference cohort (flag or `reference` key)".into()))?;
            let target = target
                .clone()
                .or_else(|| config_relative(config_path, &cfg, "target"))
                .ok_or_else(|| Error::Config("no target cohort (flag or `target` key)".into()))?;
            let result = run_pipeline(&read_cohort_dir(&reference)?, &read_cohort_dir(&target)?, &pc)?;
            print!("{}", result.result_csv());
        }
        Command::Study { out, truth, replicates } => {
            let mut sc = StudyConfig::from_config(&cfg)?;
            if let Some(r) = replicates {
                sc.replicates = *r;
            }
            let truth = match truth.clone().or_else(|| config_relative(config_path, &cfg, "truth")) {
                Some(p) => SimulationTruth::load(&p)?,
                None => calibrate_truth(&SimulationTruth::default(), &CalibrationTarget::desk_scale())?,
            };
            let outcome = run_simulation_study(&truth, &sc)?;
            create_dir(out)?;
            truth.save(&out.join("truth.txt"))?;
            write_estimates(&out.join("estimates.csv"), &outcome.estimates, &truth.hazard_parameters())?;
            report_tables(&outcome.table, out)?;
            let mut failures = String::from("replicate,method,message\n");
            for (r, m, msg) in &outcome.failures {
                failures.push_str(&format!("{r},{m},\"{}\"\n", msg.replace('"', "'")));
            }
            write_file(&out.join("failures.csv"), &failures)?;
            print_table(&outcome.table);
            println!(
                "{} replicates in {:.1} s, {} failed analyses",
                sc.replicates,
                outcome.seconds,
                outcome.failures.len()
            );
        }
        Command::Report { input, out } => {
            let (estimates, truth) = read_estimates(&input.join("estimates.csv"))?;
            let mut methods: Vec<_> = estimates.iter().map(|e| e.method).collect();
            methods.sort();
            methods.dedup();
            let table = MetricsTable::from_estimates(&estimates, &truth, &methods)?;
            report_tables(&table, out.as_deref().unwrap_or(input))?;
            print_table(&table);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

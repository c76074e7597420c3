//! Pipeline driver.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{choose_n, credible_interval, epsilon_for_estimate, estimate_cost, generate_adjudication, mcse, variance_based_n, CostEstimate, PipelineConfig};
use crate::bart::{fit_bart_probit, BartConfig, Design};
use crate::cohort::{filter_dead, Cohort};
use crate::dpm::{fit_risk_factors, DpmConfig, FeaturePosterior};
use crate::error::{Error, Result};
use crate::joint::summary::{read_draw_archive, write_draw_archive, PosteriorSummary};
use crate::joint::{fit_joint_model, JointConfig};
use crate::seed::{self, stage};
use crate::stats::quantile_sorted;

/// One adjudicated event set for the target cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjudicationSet {
    /// 0-based `(m, k, l)`.
    pub index: (usize, usize, usize),
    /// `A` for the dead of the target cohort, in cohort order.
    pub dead: Vec<u8>,
    /// `A*` for every subject (0 for the alive).
    pub all: Vec<u8>,
}

/// Probability draws and the adjudicated sets derived from them.
#[derive(Debug, Clone)]
pub struct Adjudications {
    /// Positions of the dead within the target cohort.
    pub dead_positions: Vec<usize>,
    /// `w[m][k][j]`: probability for dead subject `j`.
    pub w: Vec<Vec<Vec<f64>>>,
    pub sets: Vec<AdjudicationSet>,
    /// Seconds spent on feature fits, per-`m` BART fits (mean) and prediction.
    pub features_seconds: f64,
    pub bart_seconds_per_m: f64,
    pub predict_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    /// `T^F`: risk-factor fits for both strata and both cohorts.
    pub features: f64,
    /// `T^fit`: BART fits for one feature draw (both strata).
    pub bart_fit: f64,
    /// `T^pred`: probability draws and adjudication.
    pub predict: f64,
    /// `T^JM`: mean time of one joint fit.
    pub joint_fit: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NSelectionReport {
    pub tolerances: Vec<(String, f64)>,
    pub literal_n: usize,
    pub literal_mkl: (usize, usize, usize),
    pub variance_based_n: usize,
    pub note: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub software: String,
    pub version: String,
    pub seed: u64,
    pub m: usize,
    pub k: usize,
    pub l: usize,
    pub n_fits: usize,
    pub threads: usize,
    /// Sub-seeds as `(stage, coordinates, seed)`.
    pub seeds: Vec<(String, Vec<usize>, u64)>,
    pub timings: StageTimings,
    pub cost: CostEstimate,
    pub n_selection: Option<NSelectionReport>,
    pub resumed_fits: usize,
    pub target_subjects: usize,
    pub target_dead: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledParameter {
    pub parameter: String,
    pub estimate: f64,
    pub mcse: f64,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    /// Posterior mean from each fit, in `(m, k, l)` order.
    pub per_fit: Vec<f64>,
    /// 2.5% and 97.5% quantiles of the draws pooled over all fits.
    pub posterior_lo: f64,
    pub posterior_hi: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub parameters: Vec<PooledParameter>,
    pub manifest: Manifest,
    pub adjudications: Adjudications,
}

impl PipelineResult {
    pub fn get(&self, name: &str) -> Option<&PooledParameter> {
        self.parameters.iter().find(|p| p.parameter == name)
    }

    /// `parameter,estimate,mcse,lo,hi`.
    pub fn result_csv(&self) -> String {
        let mut out = String::from("parameter,estimate,mcse,lo,hi\n");
        for p in &self.parameters {
            out.push_str(&format!("{},{},{},{},{}\n", p.parameter, p.estimate, p.mcse, p.lo, p.hi));
        }
        out
    }
}

const COVARIATE_COLUMNS: [&str; 10] = [
    "sex", "race", "lh", "ah", "bmi", "base_age", "death_age", "hf", "mi", "stroke",
];

/// Predictor columns of the classifier: covariates, death age, nonfatal
/// event counts and the value/slope/area features of every factor.
pub fn bart_columns(factor_names: &[String]) -> Vec<String> {
    let mut cols: Vec<String> = COVARIATE_COLUMNS.iter().map(|s| s.to_string()).collect();
    for f in factor_names {
        for feat in ["value", "slope", "area"] {
            cols.push(format!("{f}_{feat}"));
        }
    }
    cols
}

fn design_for(dead: &Cohort, features: &FeaturePosterior, m: usize) -> Result<Design> {
    let rows = dead
        .subjects
        .iter()
        .zip(&dead.events)
        .zip(&features.features)
        .map(|((s, e), per_factor)| {
            let mut row = vec![
                s.sex as f64,
                s.race as f64,
                s.educ_lh as f64,
                s.educ_ah as f64,
                s.bmi,
                s.baseline_age,
                e.death_age.unwrap_or(s.baseline_age + e.observed_time),
                s.nonfatal_counts[0] as f64,
                s.nonfatal_counts[1] as f64,
                s.nonfatal_counts[2] as f64,
            ];
            for draws in per_factor {
                let f = draws[m];
                row.extend([f.value, f.slope, f.area]);
            }
            row
        })
        .collect();
    Design::new(bart_columns(&dead.factor_names), rows)
}

fn stratum(dead: &Cohort, d: u8) -> (Vec<usize>, Cohort) {
    let pos: Vec<usize> = (0..dead.len()).filter(|&i| dead.events[i].delta == Some(d)).collect();
    let sub = dead.select(&pos);
    (pos, sub)
}

fn death_ages(c: &Cohort) -> Vec<f64> {
    c.subjects
        .iter()
        .zip(&c.events)
        .map(|(s, e)| e.death_age.unwrap_or(s.baseline_age + e.observed_time))
        .collect()
}

fn dpm_with_seed(base: &DpmConfig, root: u64, cohort_tag: u64, d: u8) -> DpmConfig {
    DpmConfig {
        seed: seed::derive(root, &[stage::RISK, cohort_tag, d as u64]),
        ..base.clone()
    }
}

fn bart_with_seed(base: &BartConfig, root: u64, d: u8, m: usize, k: usize) -> BartConfig {
    BartConfig {
        n_keep: k,
        seed: seed::derive(root, &[stage::BART, d as u64, m as u64]),
        ..base.clone()
    }
}

/// Steps 1–3: probability draws `ŵ` for the dead of `target` and the
/// `M·K·L` adjudicated sets.
pub fn adjudication_sets(reference: &Cohort, target: &Cohort, config: &PipelineConfig) -> Result<Adjudications> {
    adjudication_sets_with_forests(reference, target, config, None)
}

/// As [`adjudication_sets`], also writing every retained forest to
/// `forest_dir/forests_d{Δ}_m{m}.jsonl`.
pub fn adjudication_sets_with_forests(
    reference: &Cohort,
    target: &Cohort,
    config: &PipelineConfig,
    forest_dir: Option<&Path>,
) -> Result<Adjudications> {
    config.validate()?;
    if reference.factor_names != target.factor_names {
        return Err(Error::invalid("reference and target cohorts have different factors"));
    }
    let ref_dead = filter_dead(reference);
    let dead_positions: Vec<usize> = (0..target.len()).filter(|&i| target.events[i].dead).collect();
    let tgt_dead = target.select(&dead_positions);
    if ref_dead.events.iter().any(|e| e.c_adjudicated.is_none()) {
        return Err(Error::invalid("reference cohort lacks adjudicated causes for its dead"));
    }
    let (m_n, k_n, l_n) = (config.m, config.k, config.l);
    let mut w = vec![vec![vec![f64::NAN; tgt_dead.len()]; k_n]; m_n];
    let mut features_seconds = 0.0;
    let mut bart_seconds = 0.0;
    let mut predict_seconds = 0.0;

    for d in [0u8, 1] {
        let (tgt_pos, tgt_sub) = stratum(&tgt_dead, d);
        if tgt_sub.is_empty() {
            continue;
        }
        let (_, ref_sub) = stratum(&ref_dead, d);
        if ref_sub.is_empty() {
            return Err(Error::invalid(format!(
                "reference cohort has no deaths with coded cause {d}"
            )));
        }
        let labels: Vec<u8> = ref_sub.events.iter().map(|e| e.c_adjudicated.unwrap_or(0)).collect();
        let t = Instant::now();
        let (_, ref_feat) = fit_risk_factors(&ref_sub, &death_ages(&ref_sub), m_n, &dpm_with_seed(&config.dpm, config.seed, 0, d))?;
        let (_, tgt_feat) = fit_risk_factors(&tgt_sub, &death_ages(&tgt_sub), m_n, &dpm_with_seed(&config.dpm, config.seed, 1, d))?;
        features_seconds += t.elapsed().as_secs_f64();

        let single = labels.iter().all(|&c| c == labels[0]);
        for m in 0..m_n {
            let t = Instant::now();
            let probs: Vec<Vec<f64>> = if single {
                // nothing to learn: every coded death in this stratum shares the reference label
                log::warn!("coded cause {d}: reference labels are all {}", labels[0]);
                vec![vec![labels[0] as f64; tgt_sub.len()]; k_n]
            } else {
                let train = design_for(&ref_sub, &ref_feat, m)?;
                let fit = fit_bart_probit(&train, &labels, &bart_with_seed(&config.bart, config.seed, d, m, k_n))?;
                bart_seconds += t.elapsed().as_secs_f64();
                if let Some(dir) = forest_dir {
                    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                    fit.write_forests(&dir.join(format!("forests_d{d}_m{}.jsonl", m + 1)))?;
                }
                let t = Instant::now();
                let out = fit.predict_draws(&design_for(&tgt_sub, &tgt_feat, m)?)?;
                predict_seconds += t.elapsed().as_secs_f64();
                out
            };
            for (k, pk) in probs.iter().enumerate() {
                for (j, &p) in tgt_pos.iter().zip(pk) {
                    w[m][k][*j] = p;
                }
            }
        }
    }

    let t = Instant::now();
    let mut sets = Vec::with_capacity(config.n_fits());
    for m in 0..m_n {
        for k in 0..k_n {
            for l in 0..l_n {
                let mut rng = seed::rng_for(config.seed, &[stage::UNIFORM, m as u64, k as u64, l as u64]);
                let dead: Vec<u8> = w[m][k]
                    .iter()
                    .map(|&p| generate_adjudication(p, rng.random()))
                    .collect::<Result<_>>()?;
                let mut all = vec![0u8; target.len()];
                for (&pos, &a) in dead_positions.iter().zip(&dead) {
                    all[pos] = a;
                }
                sets.push(AdjudicationSet {
                    index: (m, k, l),
                    dead,
                    all,
                });
            }
        }
    }
    predict_seconds += t.elapsed().as_secs_f64();
    Ok(Adjudications {
        dead_positions,
        w,
        sets,
        features_seconds,
        bart_seconds_per_m: bart_seconds / m_n as f64,
        predict_seconds,
    })
}

struct FitOutcome {
    summary: PosteriorSummary,
    /// Draws of the pooled parameters.
    draws: Vec<Vec<f64>>,
    seconds: f64,
    resumed: bool,
}

fn fit_dir(out: &Path, (m, k, l): (usize, usize, usize)) -> PathBuf {
    out.join("fits").join(format!("{}_{}_{}", m + 1, k + 1, l + 1))
}

fn joint_with_seed(base: &JointConfig, root: u64, (m, k, l): (usize, usize, usize)) -> JointConfig {
    JointConfig {
        seed: seed::derive(root, &[stage::JOINT, m as u64, k as u64, l as u64]),
        ..base.clone()
    }
}

fn hazard_parameter(name: &str) -> bool {
    name.starts_with("gamma_") || name.starts_with("alpha_")
}

fn run_fit(
    target: &Cohort,
    set: &AdjudicationSet,
    config: &PipelineConfig,
    wanted: Option<&[String]>,
) -> Result<FitOutcome> {
    let dir = config.out_dir.as_ref().map(|o| fit_dir(o, set.index));
    if let (true, Some(dir)) = (config.resume, &dir) {
        let (s, d) = (dir.join("estimates.csv"), dir.join("draws.bin"));
        if s.exists() && d.exists() {
            let summary = PosteriorSummary::read_csv(&s)?;
            let (_, draws) = read_draw_archive(&d)?;
            return Ok(FitOutcome {
                summary,
                draws,
                seconds: 0.0,
                resumed: true,
            });
        }
    }
    let t = Instant::now();
    let fit = fit_joint_model(target, &set.all, &joint_with_seed(&config.joint, config.seed, set.index))?;
    let names = pooled_names(&fit.names, wanted)?;
    let cols: Vec<usize> = names
        .iter()
        .map(|n| fit.names.iter().position(|x| x == n).expect("name from fit"))
        .collect();
    let draws: Vec<Vec<f64>> = fit.draws.iter().map(|d| cols.iter().map(|&c| d[c]).collect()).collect();
    if let Some(dir) = &dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        fit.summary.write_csv(&dir.join("estimates.csv"))?;
        write_draw_archive(&dir.join("draws.bin"), &names, &draws)?;
    }
    Ok(FitOutcome {
        summary: fit.summary,
        draws,
        seconds: t.elapsed().as_secs_f64(),
        resumed: false,
    })
}

fn pooled_names(available: &[String], wanted: Option<&[String]>) -> Result<Vec<String>> {
    match wanted {
        Some(w) => {
            for n in w {
                if !available.contains(n) {
                    return Err(Error::invalid(format!("unknown parameter {n:?}")));
                }
            }
            Ok(w.to_vec())
        }
        None => Ok(available.iter().filter(|n| hazard_parameter(n)).cloned().collect()),
    }
}

/// `subject_id,m,k,w_hat` for the dead of `target`.
pub fn write_weights(path: &Path, target: &Cohort, adj: &Adjudications) -> Result<()> {
    let mut out = String::from("subject_id,m,k,w_hat\n");
    for (m, per_m) in adj.w.iter().enumerate() {
        for (k, ws) in per_m.iter().enumerate() {
            for (&pos, w) in adj.dead_positions.iter().zip(ws) {
                out.push_str(&format!("{},{},{},{}\n", target.events[pos].subject_id, m + 1, k + 1, w));
            }
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn write_sets(path: &Path, target: &Cohort, adj: &Adjudications) -> Result<()> {
    let mut out = String::from("m,k,l,subject_id,a_star\n");
    for s in &adj.sets {
        for (subj, a) in target.subjects.iter().zip(&s.all) {
            out.push_str(&format!("{},{},{},{},{}\n", s.index.0 + 1, s.index.1 + 1, s.index.2 + 1, subj.id, a));
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Steps 1–6. With `config.out_dir` set, writes `result.csv`,
/// `manifest.json`, `posterior_intervals.csv`, `weights.csv`,
/// `adjudications.csv` and per-fit files under `fits/m_k_l/`.
pub fn run_pipeline(reference: &Cohort, target: &Cohort, config: &PipelineConfig) -> Result<PipelineResult> {
    let start = Instant::now();
    let forest_dir = config.out_dir.as_ref().map(|o| o.join("forests"));
    let adj = adjudication_sets_with_forests(reference, target, config, forest_dir.as_deref())?;
    if let Some(out) = &config.out_dir {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        write_weights(&out.join("weights.csv"), target, &adj)?;
        write_sets(&out.join("adjudications.csv"), target, &adj)?;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let wanted = config.parameters.as_deref();
    let outcomes: Vec<FitOutcome> = pool.install(|| {
        adj.sets
            .par_iter()
            .map(|set| {
                let (m, k, l) = set.index;
                run_fit(target, set, config, wanted).map_err(|e| Error::Stage {
                    stage: "joint fit",
                    m: m + 1,
                    k: k + 1,
                    l: l + 1,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let names: Vec<String> = match wanted {
        Some(w) => w.to_vec(),
        None => outcomes[0]
            .summary
            .parameters
            .iter()
            .map(|p| p.parameter.clone())
            .filter(|n| hazard_parameter(n))
            .collect(),
    };
    let mut parameters = Vec::with_capacity(names.len());
    for (j, name) in names.iter().enumerate() {
        let per_fit: Vec<f64> = outcomes
            .iter()
            .map(|o| {
                o.summary
                    .get(name)
                    .map(|p| p.mean)
                    .ok_or_else(|| Error::invalid(format!("fit lacks parameter {name}")))
            })
            .collect::<Result<_>>()?;
        let (estimate, se) = mcse(&per_fit)?;
        let (lo, hi) = credible_interval(estimate, se);
        let mut pooled: Vec<f64> = outcomes.iter().flat_map(|o| o.draws.iter().map(move |d| d[j])).collect();
        pooled.sort_by(|a, b| a.total_cmp(b));
        parameters.push(PooledParameter {
            parameter: name.clone(),
            estimate,
            mcse: se,
            lo,
            hi,
            n: per_fit.len(),
            per_fit,
            posterior_lo: quantile_sorted(&pooled, 0.025),
            posterior_hi: quantile_sorted(&pooled, 0.975),
        });
    }

    let fitted: Vec<f64> = outcomes.iter().filter(|o| !o.resumed).map(|o| o.seconds).collect();
    let joint_fit = if fitted.is_empty() { 0.0 } else { fitted.iter().sum::<f64>() / fitted.len() as f64 };
    let timings = StageTimings {
        features: adj.features_seconds,
        bart_fit: adj.bart_seconds_per_m,
        predict: adj.predict_seconds,
        joint_fit,
        total: start.elapsed().as_secs_f64(),
    };
    let n_fits = config.n_fits();
    let cost = estimate_cost(timings.features, timings.bart_fit, timings.predict, timings.joint_fit, config.m, n_fits, config.threads)?;
    let tolerances: Vec<(String, f64)> = parameters
        .iter()
        .map(|p| {
            let e = config
                .epsilon
                .get(&p.parameter)
                .copied()
                .unwrap_or_else(|| epsilon_for_estimate(p.estimate, config.epsilon_min));
            (p.parameter.clone(), e)
        })
        .collect();
    let sst: Vec<f64> = parameters
        .iter()
        .map(|p| p.per_fit.iter().map(|v| (v - p.estimate).powi(2)).sum())
        .collect();
    let eps: Vec<f64> = tolerances.iter().map(|t| t.1).collect();
    let n_selection = if parameters.is_empty() {
        None
    } else {
        let lit = choose_n(&sst, &eps)?;
        Some(NSelectionReport {
            tolerances,
            literal_n: lit.n,
            literal_mkl: (lit.m, lit.k, lit.l),
            variance_based_n: variance_based_n(&sst, n_fits, &eps)?,
            note: "literal rule ceil(sqrt(SST)/eps) holds the pilot SST fixed; \
                   the variance-based rule uses SST/N as the per-fit variance"
                .into(),
        })
    };
    let mut seeds = Vec::new();
    for d in 0..2usize {
        for c in 0..2usize {
            seeds.push(("risk".to_string(), vec![c, d], seed::derive(config.seed, &[stage::RISK, c as u64, d as u64])));
        }
        for m in 0..config.m {
            seeds.push(("bart".to_string(), vec![d, m + 1], seed::derive(config.seed, &[stage::BART, d as u64, m as u64])));
        }
    }
    for s in &adj.sets {
        let (m, k, l) = s.index;
        let coords = vec![m + 1, k + 1, l + 1];
        seeds.push(("uniform".into(), coords.clone(), seed::derive(config.seed, &[stage::UNIFORM, m as u64, k as u64, l as u64])));
        seeds.push(("joint".into(), coords, seed::derive(config.seed, &[stage::JOINT, m as u64, k as u64, l as u64])));
    }
    let manifest = Manifest {
        software: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: config.seed,
        m: config.m,
        k: config.k,
        l: config.l,
        n_fits,
        threads: config.threads,
        seeds,
        timings,
        cost,
        n_selection,
        resumed_fits: outcomes.iter().filter(|o| o.resumed).count(),
        target_subjects: target.len(),
        target_dead: adj.dead_positions.len(),
    };
    let result = PipelineResult {
        parameters,
        manifest,
        adjudications: adj,
    };
    if let Some(out) = &config.out_dir {
        let p = out.join("result.csv");
        std::fs::write(&p, result.result_csv()).map_err(|e| Error::io(&p, e))?;
        let mut iv = String::from("parameter,q025,q975\n");
        for q in &result.parameters {
            iv.push_str(&format!("{},{},{}\n", q.parameter, q.posterior_lo, q.posterior_hi));
        }
        let p = out.join("posterior_intervals.csv");
        std::fs::write(&p, iv).map_err(|e| Error::io(&p, e))?;
        let p = out.join("manifest.json");
        std::fs::write(&p, serde_json::to_string_pretty(&result.manifest)?).map_err(|e| Error::io(&p, e))?;
    }
    Ok(result)
}

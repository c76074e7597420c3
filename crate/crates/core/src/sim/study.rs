//! Replicated comparison of adjudicated, unadjudicated and pipeline analyses.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use super::{simulate_cohort, SimulationTruth};
use crate::cohort::{split_cohort, Cohort, EventSource};
use crate::error::{Error, Result};
use crate::joint::{fit_joint_model, JointConfig};
use crate::kvconfig::KvConfig;
use crate::pipeline::{run_pipeline, PipelineConfig};
use crate::seed::{self, stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    /// Joint model on `C`.
    Adjudicated,
    /// Joint model on `Δ`.
    Unadjudicated,
    /// Multiple adjudication with a reference cohort.
    Pipeline,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Adjudicated, Method::Unadjudicated, Method::Pipeline];

    pub fn name(self) -> &'static str {
        match self {
            Method::Adjudicated => "adjudicated",
            Method::Unadjudicated => "unadjudicated",
            Method::Pipeline => "pipeline",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub replicates: usize,
    pub seed: u64,
    /// Share of each simulated cohort used as the adjudicated reference.
    pub reference_fraction: f64,
    pub methods: Vec<Method>,
    /// Replicates run concurrently.
    pub threads: usize,
    /// Sampler settings for all joint fits and the pipeline's `M, K, L`.
    /// `out_dir`, `resume` and `seed` are overridden per replicate.
    pub pipeline: PipelineConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            replicates: 100,
            seed: 1,
            reference_fraction: 0.75,
            methods: Method::ALL.to_vec(),
            threads: 1,
            pipeline: PipelineConfig {
                m: 2,
                k: 2,
                l: 2,
                ..PipelineConfig::default()
            },
        }
    }
}

impl StudyConfig {
    /// Reads `replicates`, `seed`, `reference_fraction`, `methods` and
    /// `threads` plus every pipeline key (`m`, `k`, `l`, `dpm.*`, ...).
    pub fn from_config(cfg: &KvConfig) -> Result<Self> {
        let d = StudyConfig::default();
        let base = KvConfig::parse(&format!("m = 2\nk = 2\nl = 2\n{}", cfg.to_text()))?;
        let out = StudyConfig {
            replicates: cfg.get_or("replicates", d.replicates)?,
            seed: cfg.get_or("seed", d.seed)?,
            reference_fraction: cfg.get_or("reference_fraction", d.reference_fraction)?,
            methods: match cfg.raw("methods") {
                Some(s) => s.split(',').map(|m| m.trim().parse()).collect::<Result<_>>()?,
                None => d.methods,
            },
            threads: cfg.get_or("threads", d.threads)?,
            pipeline: PipelineConfig::from_config(&base)?,
        };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::invalid("at least one replicate is required"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("no methods selected"));
        }
        if self.threads == 0 {
            return Err(Error::invalid("threads must be >= 1"));
        }
        if !(self.reference_fraction > 0.0 && self.reference_fraction < 1.0) {
            return Err(Error::invalid("reference fraction must be in (0, 1)"));
        }
        if self.methods.contains(&Method::Pipeline) {
            self.pipeline.validate()?;
        } else {
            self.pipeline.joint.validate()?;
        }
        Ok(())
    }
}

/// Point estimate and 95% interval of one parameter from one analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateEstimate {
    pub replicate: usize,
    pub method: Method,
    pub parameter: String,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub parameter: String,
    pub method: Method,
    pub truth: f64,
    pub bias: f64,
    /// `|mean estimate − truth|`.
    pub abs_bias: f64,
    pub mean: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub ci_length: f64,
    /// Replicates contributing.
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub methods: Vec<Method>,
    /// Parameter order of the report.
    pub parameters: Vec<String>,
    pub rows: Vec<MetricRow>,
}

impl MetricsTable {
    pub fn get(&self, parameter: &str, method: Method) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.parameter == parameter && r.method == method)
    }

    /// Aggregates replicate estimates against `truth`.
    pub fn from_estimates(
        estimates: &[ReplicateEstimate],
        truth: &[(String, f64)],
        methods: &[Method],
    ) -> Result<Self> {
        if methods.is_empty() {
            return Err(Error::invalid("no methods selected"));
        }
        let mut rows = Vec::new();
        for (parameter, t) in truth {
            for &method in methods {
                let mut est: Vec<&ReplicateEstimate> = estimates
                    .iter()
                    .filter(|e| e.method == method && &e.parameter == parameter)
                    .collect();
                // aggregation order must not depend on completion order
                est.sort_by_key(|e| e.replicate);
                let n = est.len();
                if n == 0 {
                    rows.push(MetricRow {
                        parameter: parameter.clone(),
                        method,
                        truth: *t,
                        bias: f64::NAN,
                        abs_bias: f64::NAN,
                        mean: f64::NAN,
                        rmse: f64::NAN,
                        coverage: f64::NAN,
                        ci_length: f64::NAN,
                        n,
                    });
                    continue;
                }
                let nf = n as f64;
                let mean = est.iter().map(|e| e.estimate).sum::<f64>() / nf;
                let mse = est.iter().map(|e| (e.estimate - t).powi(2)).sum::<f64>() / nf;
                let covered = est.iter().filter(|e| e.lo <= *t && *t <= e.hi).count();
                rows.push(MetricRow {
                    parameter: parameter.clone(),
                    method,
                    truth: *t,
                    bias: mean - t,
                    abs_bias: (mean - t).abs(),
                    mean,
                    rmse: mse.sqrt(),
                    coverage: covered as f64 / nf,
                    ci_length: est.iter().map(|e| e.hi - e.lo).sum::<f64>() / nf,
                    n,
                });
            }
        }
        Ok(MetricsTable {
            methods: methods.to_vec(),
            parameters: truth.iter().map(|p| p.0.clone()).collect(),
            rows,
        })
    }
}

#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub table: MetricsTable,
    pub estimates: Vec<ReplicateEstimate>,
    /// `(replicate, method, message)` of every failed analysis.
    pub failures: Vec<(usize, Method, String)>,
    pub seconds: f64,
}

fn joint_estimates(
    cohort: &Cohort,
    events: &[u8],
    config: &JointConfig,
    names: &[String],
) -> Result<Vec<(String, f64, f64, f64)>> {
    let fit = fit_joint_model(cohort, events, config)?;
    names
        .iter()
        .map(|n| {
            let p = fit
                .summary
                .get(n)
                .ok_or_else(|| Error::invalid(format!("joint fit lacks {n}")))?;
            Ok((n.clone(), p.mean, p.q025, p.q975))
        })
        .collect()
}

fn run_method(
    method: Method,
    reference: &Cohort,
    target: &Cohort,
    config: &StudyConfig,
    rep_seed: u64,
    names: &[String],
) -> Result<Vec<(String, f64, f64, f64)>> {
    let mut joint = config.pipeline.joint.clone();
    joint.seed = seed::derive(rep_seed, &[stage::JOINT, method as u64]);
    match method {
        Method::Adjudicated => joint_estimates(target, &target.event_indicators(EventSource::Adjudicated), &joint, names),
        Method::Unadjudicated => joint_estimates(target, &target.event_indicators(EventSource::Unadjudicated), &joint, names),
        Method::Pipeline => {
            let pc = PipelineConfig {
                seed: rep_seed,
                threads: 1,
                out_dir: None,
                resume: false,
                parameters: Some(names.to_vec()),
                ..config.pipeline.clone()
            };
            let r = run_pipeline(reference, target, &pc)?;
            Ok(r.parameters
                .into_iter()
                .map(|p| (p.parameter, p.estimate, p.posterior_lo, p.posterior_hi))
                .collect())
        }
    }
}

/// Simulates `config.replicates` cohorts from `truth`, splits each into a
/// reference and a target part, and compares the selected analyses on the
/// target. Failed analyses are logged and excluded.
pub fn run_simulation_study(truth: &SimulationTruth, config: &StudyConfig) -> Result<StudyOutcome> {
    config.validate()?;
    truth.validate()?;
    let start = std::time::Instant::now();
    let params = truth.hazard_parameters();
    let names: Vec<String> = params.iter().map(|p| p.0.clone()).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;

    type Rep = (Vec<ReplicateEstimate>, Vec<(usize, Method, String)>);
    let per_rep: Vec<Rep> = pool.install(|| {
        (0..config.replicates)
            .into_par_iter()
            .map(|r| {
                let rep_seed = seed::derive(config.seed, &[stage::REPLICATE, r as u64]);
                let mut est = Vec::new();
                let mut fail = Vec::new();
                let split = simulate_cohort(truth, rep_seed)
                    .and_then(|c| split_cohort(&c, config.reference_fraction, rep_seed));
                let (reference, target) = match split {
                    Ok(s) => s,
                    Err(e) => {
                        log::warn!("replicate {r}: simulation failed: {e}");
                        for &m in &config.methods {
                            fail.push((r, m, e.to_string()));
                        }
                        return (est, fail);
                    }
                };
                for &m in &config.methods {
                    match run_method(m, &reference, &target, config, rep_seed, &names) {
                        Ok(v) => est.extend(v.into_iter().map(|(parameter, estimate, lo, hi)| ReplicateEstimate {
                            replicate: r,
                            method: m,
                            parameter,
                            estimate,
                            lo,
                            hi,
                        })),
                        Err(e) => {
                            log::warn!("replicate {r}, {m}: {e}");
                            fail.push((r, m, e.to_string()));
                        }
                    }
                }
                log::info!("replicate {} of {} done", r + 1, config.replicates);
                (est, fail)
            })
            .collect()
    });
    let mut estimates = Vec::new();
    let mut failures = Vec::new();
    for (e, f) in per_rep {
        estimates.extend(e);
        failures.extend(f);
    }
    let table = MetricsTable::from_estimates(&estimates, &params, &config.methods)?;
    Ok(StudyOutcome {
        table,
        estimates,
        failures,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// `replicate,method,parameter,truth,estimate,lo,hi`.
pub fn write_estimates(path: &Path, estimates: &[ReplicateEstimate], truth: &[(String, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["replicate", "method", "parameter", "truth", "estimate", "lo", "hi"])
        .map_err(|e| csv_error(path, e))?;
    let mut sorted: Vec<&ReplicateEstimate> = estimates.iter().collect();
    sorted.sort_by_key(|e| (e.replicate, e.method));
    for e in sorted {
        let t = truth
            .iter()
            .find(|p| p.0 == e.parameter)
            .map(|p| p.1)
            .ok_or_else(|| Error::invalid(format!("no truth for {}", e.parameter)))?;
        w.write_record([
            e.replicate.to_string(),
            e.method.to_string(),
            e.parameter.clone(),
            t.to_string(),
            e.estimate.to_string(),
            e.lo.to_string(),
            e.hi.to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Inverse of [`write_estimates`]: the estimates and the truth in order of
/// first appearance.
pub fn read_estimates(path: &Path) -> Result<(Vec<ReplicateEstimate>, Vec<(String, f64)>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut est = Vec::new();
    let mut truth: Vec<(String, f64)> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let bad = |what: &str| Error::MalformedRow {
            file: path.display().to_string(),
            line: i + 2,
            message: format!("bad {what}"),
        };
        if rec.len() != 7 {
            return Err(bad("column count"));
        }
        let num = |j: usize, what: &str| rec[j].parse::<f64>().map_err(|_| bad(what));
        let parameter = rec[2].to_string();
        let t = num(3, "truth")?;
        if !truth.iter().any(|p| p.0 == parameter) {
            truth.push((parameter.clone(), t));
        }
        est.push(ReplicateEstimate {
            replicate: rec[0].parse().map_err(|_| bad("replicate"))?,
            method: rec[1].parse()?,
            parameter,
            estimate: num(4, "estimate")?,
            lo: num(5, "lo")?,
            hi: num(6, "hi")?,
        });
    }
    Ok((est, truth))
}

const TABLES: [(&str, [&str; 2]); 3] = [
    ("bias.csv", ["bias", "abs_bias"]),
    ("rmse.csv", ["mean", "rmse"]),
    ("coverage.csv", ["coverage", "ci_length"]),
];

fn metric(row: &MetricRow, name: &str) -> f64 {
    match name {
        "bias" => row.bias,
        "abs_bias" => row.abs_bias,
        "mean" => row.mean,
        "rmse" => row.rmse,
        "coverage" => row.coverage,
        "ci_length" => row.ci_length,
        _ => unreachable!("metric names are fixed"),
    }
}

fn set_metric(row: &mut MetricRow, name: &str, v: f64) {
    match name {
        "bias" => row.bias = v,
        "abs_bias" => row.abs_bias = v,
        "mean" => row.mean = v,
        "rmse" => row.rmse = v,
        "coverage" => row.coverage = v,
        "ci_length" => row.ci_length = v,
        _ => unreachable!("metric names are fixed"),
    }
}

/// Writes `bias.csv` (bias, absolute bias), `rmse.csv` (mean, RMSE) and
/// `coverage.csv` (coverage, CI length, replicates used): one row per
/// parameter with `truth` and one column per method and metric.
pub fn report_tables(table: &MetricsTable, dir: &Path) -> Result<()> {
    if table.methods.is_empty() || table.parameters.is_empty() {
        return Err(Error::invalid("empty metrics table"));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (file, metrics) in TABLES {
        let path = dir.join(file);
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
        let mut header = vec!["parameter".to_string(), "truth".to_string()];
        for m in &table.methods {
            for x in metrics {
                header.push(format!("{m}_{x}"));
            }
        }
        if file == "coverage.csv" {
            header.extend(table.methods.iter().map(|m| format!("{m}_n")));
        }
        w.write_record(&header).map_err(|e| csv_error(&path, e))?;
        for p in &table.parameters {
            let mut rec = vec![p.clone()];
            let mut counts = Vec::new();
            for (j, &m) in table.methods.iter().enumerate() {
                let row = table
                    .get(p, m)
                    .ok_or_else(|| Error::invalid(format!("missing row {p}/{m}")))?;
                if j == 0 {
                    rec.push(row.truth.to_string());
                }
                rec.extend(metrics.iter().map(|x| metric(row, x).to_string()));
                counts.push(row.n.to_string());
            }
            if file == "coverage.csv" {
                rec.extend(counts);
            }
            w.write_record(&rec).map_err(|e| csv_error(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::invalid(format!("{}: {e}", path.display()))
}

/// Reads the three files written by [`report_tables`].
pub fn read_metrics_tables(dir: &Path) -> Result<MetricsTable> {
    let mut table: Option<MetricsTable> = None;
    for (file, metrics) in TABLES {
        let path = dir.join(file);
        let mut r = csv::Reader::from_path(&path).map_err(|e| csv_error(&path, e))?;
        let header: Vec<String> = r
            .headers()
            .map_err(|e| csv_error(&path, e))?
            .iter()
            .map(String::from)
            .collect();
        let methods: Vec<Method> = header[2..]
            .iter()
            .filter_map(|h| h.strip_suffix(&format!("_{}", metrics[0])))
            .filter_map(|h| Method::from_str(h).ok())
            .collect();
        let t = table.get_or_insert_with(|| MetricsTable {
            methods: methods.clone(),
            parameters: Vec::new(),
            rows: Vec::new(),
        });
        if t.methods != methods {
            return Err(Error::invalid(format!("{}: method columns differ", path.display())));
        }
        let first = t.parameters.is_empty();
        for rec in r.records() {
            let rec = rec.map_err(|e| csv_error(&path, e))?;
            let field = |name: &str| -> Result<f64> {
                let i = header
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| Error::invalid(format!("{}: no column {name}", path.display())))?;
                rec[i]
                    .parse()
                    .map_err(|_| Error::invalid(format!("{}: bad number in {name}", path.display())))
            };
            let p = rec[0].to_string();
            let truth = field("truth")?;
            if first {
                t.parameters.push(p.clone());
            }
            for &m in &methods {
                let pos = t.rows.iter().position(|x| x.parameter == p && x.method == m);
                let i = match pos {
                    Some(i) => i,
                    None => {
                        t.rows.push(MetricRow {
                            parameter: p.clone(),
                            method: m,
                            truth,
                            bias: f64::NAN,
                            abs_bias: f64::NAN,
                            mean: f64::NAN,
                            rmse: f64::NAN,
                            coverage: f64::NAN,
                            ci_length: f64::NAN,
                            n: 0,
                        });
                        t.rows.len() - 1
                    }
                };
                for x in metrics {
                    let v = field(&format!("{m}_{x}"))?;
                    set_metric(&mut t.rows[i], x, v);
                }
                if file == "coverage.csv" {
                    t.rows[i].n = field(&format!("{m}_n"))? as usize;
                }
            }
        }
    }
    table.ok_or_else(|| Error::invalid("no tables read"))
}

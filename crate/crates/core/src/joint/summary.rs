//! Posterior summaries with split-chain diagnostics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{mean, quantile_sorted};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSummary {
    pub parameter: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    pub ess: f64,
    pub rhat: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PosteriorSummary {
    pub parameters: Vec<ParameterSummary>,
}

fn autocov(x: &[f64], lag: usize) -> f64 {
    let m = mean(x);
    let n = x.len();
    (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / n as f64
}

fn var1(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

/// Split-R̂ and effective sample size from one chain cut into two halves.
pub fn split_diagnostics(draws: &[f64]) -> (f64, f64) {
    let half = draws.len() / 2;
    if half < 4 {
        return (f64::NAN, f64::NAN);
    }
    let chains = [&draws[..half], &draws[draws.len() - half..]];
    let n = half as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = chains.iter().map(|c| var1(c)).sum::<f64>() / 2.0;
    let b_over_n = var1(&means);
    let var_plus = (n - 1.0) / n * w + b_over_n;
    if !(w > 0.0) {
        return (if b_over_n > 0.0 { f64::INFINITY } else { 1.0 }, n * 2.0);
    }
    let rhat = (var_plus / w).sqrt();
    let rho = |t: usize| {
        let acov = chains.iter().map(|c| autocov(c, t)).sum::<f64>() / 2.0;
        1.0 - (w - acov) / var_plus
    };
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut t = 0;
    while t + 1 < half {
        let mut pair = rho(t) + rho(t + 1);
        if pair <= 0.0 {
            break;
        }
        pair = pair.min(prev);
        tau += 2.0 * pair;
        prev = pair;
        t += 2;
    }
    let total = 2.0 * n;
    let ess = total / tau.max(1.0 / total.log10());
    (rhat, ess)
}

impl PosteriorSummary {
    /// `draws[s][p]` is draw `s` of parameter `p`.
    pub fn from_draws(names: &[String], draws: &[Vec<f64>]) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::invalid("no draws to summarise"));
        }
        let mut parameters = Vec::with_capacity(names.len());
        for (p, name) in names.iter().enumerate() {
            let col: Vec<f64> = draws.iter().map(|d| d[p]).collect();
            let mut sorted = col.clone();
            sorted.sort_by(f64::total_cmp);
            let (rhat, ess) = split_diagnostics(&col);
            parameters.push(ParameterSummary {
                parameter: name.clone(),
                mean: mean(&col),
                sd: var1(&col).sqrt(),
                q025: quantile_sorted(&sorted, 0.025),
                q975: quantile_sorted(&sorted, 0.975),
                ess,
                rhat,
            });
        }
        Ok(PosteriorSummary { parameters })
    }

    pub fn get(&self, name: &str) -> Option<&ParameterSummary> {
        self.parameters.iter().find(|p| p.parameter == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("parameter,mean,sd,q025,q975,ess,rhat\n");
        for p in &self.parameters {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                p.parameter, p.mean, p.sd, p.q025, p.q975, p.ess, p.rhat
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Config(e.to_string()))?;
        let mut parameters = Vec::new();
        for (i, row) in rdr.deserialize().enumerate() {
            let p: ParameterSummary = row.map_err(|e| Error::MalformedRow {
                file: path.display().to_string(),
                line: i + 2,
                message: e.to_string(),
            })?;
            parameters.push(p);
        }
        Ok(PosteriorSummary { parameters })
    }
}

/// Writes draws as little-endian `f64` columns plus a JSON sidecar naming them.
pub fn write_draw_archive(path: &Path, names: &[String], draws: &[Vec<f64>]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 * names.len() * draws.len());
    for p in 0..names.len() {
        for d in draws {
            bytes.extend_from_slice(&d[p].to_le_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let sidecar = path.with_extension("json");
    let meta = serde_json::json!({
        "columns": names,
        "n_draws": draws.len(),
        "layout": "column-major little-endian f64",
    });
    std::fs::write(&sidecar, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&sidecar, e))
}

/// Reads an archive written by [`write_draw_archive`].
pub fn read_draw_archive(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let sidecar = path.with_extension("json");
    let meta: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?,
    )?;
    let names: Vec<String> = serde_json::from_value(meta["columns"].clone())?;
    let n: usize = serde_json::from_value(meta["n_draws"].clone())?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != 8 * n * names.len() {
        return Err(Error::invalid("draw archive size does not match its sidecar"));
    }
    let mut draws = vec![vec![0.0; names.len()]; n];
    for (k, chunk) in bytes.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        draws[k % n][k / n] = v;
    }
    Ok((names, draws))
}

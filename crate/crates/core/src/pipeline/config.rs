//! Pipeline and module configuration from flat key-value files.
//!
//! Module settings use prefixed keys (`dpm.n_iter`, `bart.n_trees`,
//! `joint.links`, ...); pipeline settings are unprefixed.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::bart::BartConfig;
use crate::dpm::DpmConfig;
use crate::error::{Error, Result};
use crate::joint::JointConfig;
use crate::kvconfig::KvConfig;
use crate::legendre::Feature;

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub m: usize,
    pub k: usize,
    pub l: usize,
    /// Per-parameter tolerance; parameters without an entry use
    /// [`super::epsilon_for_estimate`].
    pub epsilon: BTreeMap<String, f64>,
    pub epsilon_min: f64,
    pub seed: u64,
    /// Upper bound on concurrently running joint fits.
    pub threads: usize,
    /// Directory for intermediate artifacts and results.
    pub out_dir: Option<PathBuf>,
    /// Reuse per-fit results already present under `out_dir`.
    pub resume: bool,
    /// Parameters to pool; `None` pools every hazard coefficient.
    pub parameters: Option<Vec<String>>,
    pub dpm: DpmConfig,
    pub bart: BartConfig,
    pub joint: JointConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            m: 3,
            k: 3,
            l: 3,
            epsilon: BTreeMap::new(),
            epsilon_min: 1e-4,
            seed: 1,
            threads: 1,
            out_dir: None,
            resume: false,
            parameters: None,
            dpm: DpmConfig::default(),
            bart: BartConfig::default(),
            joint: JointConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn n_fits(&self) -> usize {
        self.m * self.k * self.l
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.k == 0 || self.l == 0 {
            return Err(Error::invalid("M, K and L must be >= 1"));
        }
        if self.epsilon.values().any(|e| !(*e > 0.0)) || !(self.epsilon_min > 0.0) {
            return Err(Error::invalid("tolerances must be > 0"));
        }
        if self.threads == 0 {
            return Err(Error::invalid("threads must be >= 1"));
        }
        if self.dpm.n_retained() < self.m {
            return Err(Error::invalid(format!(
                "risk-factor sampler retains {} draws, fewer than M = {}",
                self.dpm.n_retained(),
                self.m
            )));
        }
        if self.bart.n_post < self.k {
            return Err(Error::invalid("BART post burn-in iterations fewer than K"));
        }
        self.dpm.validate()?;
        self.joint.validate()
    }

    pub fn from_config(cfg: &KvConfig) -> Result<Self> {
        let d = PipelineConfig::default();
        let mut epsilon = BTreeMap::new();
        for key in cfg.keys() {
            if let Some(p) = key.strip_prefix("epsilon.") {
                epsilon.insert(p.to_string(), cfg.require::<f64>(key)?);
            }
        }
        let out = PipelineConfig {
            m: cfg.get_or("m", d.m)?,
            k: cfg.get_or("k", d.k)?,
            l: cfg.get_or("l", d.l)?,
            epsilon,
            epsilon_min: cfg.get_or("epsilon_min", d.epsilon_min)?,
            seed: cfg.get_or("seed", d.seed)?,
            threads: cfg.get_or("threads", d.threads)?,
            out_dir: cfg.raw("out_dir").map(PathBuf::from),
            resume: cfg.get_or("resume", false)?,
            parameters: cfg
                .raw("parameters")
                .map(|s| s.split(',').map(|p| p.trim().to_string()).collect()),
            dpm: dpm_config_from(cfg, d.dpm)?,
            bart: bart_config_from(cfg, d.bart)?,
            joint: joint_config_from(cfg, d.joint)?,
        };
        out.validate()?;
        Ok(out)
    }
}

pub fn dpm_config_from(cfg: &KvConfig, base: DpmConfig) -> Result<DpmConfig> {
    let alpha = cfg.get_vec("dpm.alpha_prior")?;
    let out = DpmConfig {
        truncation: cfg.get_or("dpm.truncation", base.truncation)?,
        alpha_prior: match alpha {
            Some(v) if v.len() == 2 => (v[0], v[1]),
            Some(_) => return Err(Error::Config("dpm.alpha_prior: expected 2 values".into())),
            None => base.alpha_prior,
        },
        n_iter: cfg.get_or("dpm.n_iter", base.n_iter)?,
        n_burn: cfg.get_or("dpm.n_burn", base.n_burn)?,
        thin: cfg.get_or("dpm.thin", base.thin)?,
        seed: cfg.get_or("dpm.seed", base.seed)?,
        ..base
    };
    out.validate()?;
    Ok(out)
}

pub fn bart_config_from(cfg: &KvConfig, base: BartConfig) -> Result<BartConfig> {
    let out = BartConfig {
        n_trees: cfg.get_or("bart.n_trees", base.n_trees)?,
        alpha_split: cfg.get_or("bart.alpha_split", base.alpha_split)?,
        beta_depth: cfg.get_or("bart.beta_depth", base.beta_depth)?,
        k: cfg.get_or("bart.k", base.k)?,
        n_burn: cfg.get_or("bart.n_burn", base.n_burn)?,
        n_post: cfg.get_or("bart.n_post", base.n_post)?,
        n_keep: cfg.get_or("bart.n_keep", base.n_keep)?,
        grid_size: cfg.get_or("bart.grid_size", base.grid_size)?,
        seed: cfg.get_or("bart.seed", base.seed)?,
        ..base
    };
    out.validate()?;
    Ok(out)
}

pub fn joint_config_from(cfg: &KvConfig, base: JointConfig) -> Result<JointConfig> {
    let links = match cfg.raw("joint.links") {
        Some(s) => s
            .split(',')
            .map(|f| {
                Feature::parse(f.trim())
                    .ok_or_else(|| Error::Config(format!("joint.links: unknown feature {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?,
        None => base.links.clone(),
    };
    let mut out = JointConfig {
        links,
        n_knots: cfg.get_or("joint.n_knots", base.n_knots)?,
        tau0: cfg.get_or("joint.tau0", base.tau0)?,
        fixed_prior_sd: cfg.get_or("joint.fixed_prior_sd", base.fixed_prior_sd)?,
        re_sd_prior: cfg.get_or("joint.re_sd_prior", base.re_sd_prior)?,
        jitter: cfg.get_or("joint.jitter", base.jitter)?,
        seed: cfg.get_or("joint.seed", base.seed)?,
        ..base
    };
    out.nuts.n_warmup = cfg.get_or("joint.n_warmup", out.nuts.n_warmup)?;
    out.nuts.n_samples = cfg.get_or("joint.n_samples", out.nuts.n_samples)?;
    out.nuts.max_depth = cfg.get_or("joint.max_depth", out.nuts.max_depth)?;
    out.nuts.target_accept = cfg.get_or("joint.target_accept", out.nuts.target_accept)?;
    out.validate()?;
    Ok(out)
}

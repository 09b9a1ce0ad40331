//! Run configuration: a plain key-value text format with dotted keys for
//! groups and simulation targets.
//!
//! ```text
//! # comments start with '#'
//! structure = bifactor
//! groups.dif = q1,q3,q6
//! groups.ddf = q2,q4
//! families = gumbel,t5,bvn
//! nq = 25
//! seed = 17
//! code_offset = 1
//! # simulation-only keys
//! n = 500
//! k = 5
//! tau.common = 0.45,0.55
//! tau.group = 0.30,0.35
//! ```

use crate::error::CliError;
use factor_copula::copula::Family;
use factor_copula::model::Structure;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub structure: Structure,
    /// Ordered groups: (name, item names). Must partition the data columns.
    pub groups: Vec<(String, Vec<String>)>,
    /// Per-factor families (fit/gof) or candidate menu (select/diagnose).
    pub families: Option<Vec<Family>>,
    pub nq: usize,
    pub seed: u64,
    pub code_offset: i64,
    /// Optimizer options.
    pub max_iter: usize,
    pub grad_tol: f64,
    pub obj_tol: f64,
    // Simulation keys.
    pub n: Option<usize>,
    pub k: Option<usize>,
    pub tau_common: Option<Vec<f64>>,
    pub tau_group: Option<Vec<f64>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            structure: Structure::BiFactor,
            groups: Vec::new(),
            families: None,
            nq: factor_copula::quadrature::DEFAULT_NQ,
            seed: 0,
            code_offset: 0,
            max_iter: 500,
            grad_tol: 1e-5,
            obj_tol: 1e-9,
            n: None,
            k: None,
            tau_common: None,
            tau_group: None,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| CliError::data(format!("config line {}: {msg}", lineno + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected 'key = value', got '{line}'")))?;
            let key = key.trim();
            let value = value.trim();
            match key {
                "structure" => {
                    cfg.structure = Structure::parse_tag(value)
                        .ok_or_else(|| err(format!("unknown structure '{value}'")))?;
                }
                "families" => {
                    let fams = value
                        .split(',')
                        .map(|t| {
                            Family::parse_tag(t.trim())
                                .ok_or_else(|| err(format!("unknown family '{}'", t.trim())))
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    cfg.families = Some(fams);
                }
                "nq" => cfg.nq = parse_num(value).map_err(err)?,
                "seed" => cfg.seed = parse_num(value).map_err(err)?,
                "code_offset" => cfg.code_offset = parse_num(value).map_err(err)?,
                "max_iter" => cfg.max_iter = parse_num(value).map_err(err)?,
                "grad_tol" => cfg.grad_tol = parse_num(value).map_err(err)?,
                "obj_tol" => cfg.obj_tol = parse_num(value).map_err(err)?,
                "n" => cfg.n = Some(parse_num(value).map_err(err)?),
                "k" => cfg.k = Some(parse_num(value).map_err(err)?),
                "tau.common" => cfg.tau_common = Some(parse_list(value).map_err(err)?),
                "tau.group" => cfg.tau_group = Some(parse_list(value).map_err(err)?),
                _ => {
                    if let Some(name) = key.strip_prefix("groups.") {
                        let items: Vec<String> = value
                            .split(',')
                            .map(|s| s.trim().to_string())
                            .filter(|s| !s.is_empty())
                            .collect();
                        if items.is_empty() {
                            return Err(err(format!("group '{name}' has no items")));
                        }
                        cfg.groups.push((name.to_string(), items));
                    } else {
                        return Err(err(format!("unknown key '{key}'")));
                    }
                }
            }
        }
        Ok(cfg)
    }

    /// Group sizes in configuration order.
    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(|(_, items)| items.len()).collect()
    }

    /// Item names in group-major order.
    pub fn grouped_items(&self) -> Vec<String> {
        self.groups
            .iter()
            .flat_map(|(_, items)| items.iter().cloned())
            .collect()
    }
}

fn parse_num<T: std::str::FromStr>(value: &str) -> Result<T, String> {
    value
        .parse::<T>()
        .map_err(|_| format!("cannot parse number '{value}'"))
}

fn parse_list(value: &str) -> Result<Vec<f64>, String> {
    value
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| format!("cannot parse number '{}'", t.trim()))
        })
        .collect()
}

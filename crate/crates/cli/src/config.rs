//! Optional key-value configuration file. Command-line flags override file
//! values, which override built-in defaults.

use std::path::Path;

use anyhow::Context;
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,
    pub lambda_points: Option<usize>,
    pub split_ratio: Option<f64>,
    pub split_mode: Option<String>,
    pub seed: Option<u64>,
    pub target_col: Option<String>,
    pub format: Option<String>,
    pub rounds: Option<usize>,
    pub mode: Option<String>,
    pub risk_source: Option<String>,
    pub kernel_bandwidth: Option<String>,
    pub omega: Option<String>,
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub p: Option<usize>,
    pub gamma: Option<f64>,
    pub snr: Option<f64>,
    pub r2: Option<f64>,
    pub noise_var: Option<f64>,
    pub reps: Option<usize>,
    pub cov: Option<String>,
    pub signal: Option<String>,
    pub signal_draw: Option<String>,
    pub entry_dist: Option<String>,
    pub stabilizer: Option<f64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config file {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config file {}", p.display()))
            }
        }
    }
}

/// Flag value if given, else config-file value, else the default.
pub fn resolve<T: Clone>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

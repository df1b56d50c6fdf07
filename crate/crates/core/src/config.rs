//! Run configuration: a flat `key = value` text file (one key per line,
//! `#` comments), with CLI-flag overrides layered on top.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bidding::{RiskParams, SolveOptions};
use crate::fleet::FleetSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Independent,
    Cooptimized,
    Both,
}

impl RunMode {
    pub fn runs_independent(self) -> bool {
        matches!(self, RunMode::Independent | RunMode::Both)
    }

    pub fn runs_cooptimized(self) -> bool {
        matches!(self, RunMode::Cooptimized | RunMode::Both)
    }
}

impl std::str::FromStr for RunMode {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "independent" => Ok(RunMode::Independent),
            "cooptimized" => Ok(RunMode::Cooptimized),
            "both" => Ok(RunMode::Both),
            other => Err(ConfigError::BadValue {
                key: "mode".into(),
                value: other.into(),
                expected: "independent | cooptimized | both".into(),
            }),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config read: {0}")]
    Io(#[from] std::io::Error),
    #[error("config line {line}: expected 'key = value', got '{text}'")]
    BadLine { line: usize, text: String },
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("config key '{key}': cannot parse '{value}' ({expected})")]
    BadValue {
        key: String,
        value: String,
        expected: String,
    },
    #[error("config: {0}")]
    Invalid(String),
}

/// Full description of one pipeline run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub fleet: FleetSpec,
    pub n_scenarios: usize,
    pub seed: u64,
    pub risk: RiskParams,
    pub fee_eur_mwh: f64,
    pub mode: RunMode,
    /// Synthetic price-day label used when no CSV is given.
    pub price_day: String,
    /// Observed day-ahead price CSV; empty means the synthetic fallback.
    pub da_prices_csv: Option<PathBuf>,
    /// Observed 15-minute market history CSV; empty means the bundled
    /// synthetic parameter set.
    pub history_csv: Option<PathBuf>,
    pub trim_quantile: f64,
    /// Degenerate-chain override for dry runs: "all_none" forces a chain
    /// that never activates either direction.
    pub chain_override: Option<String>,
    pub out_dir: PathBuf,
    pub solve: SolveOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            fleet: FleetSpec::default(),
            n_scenarios: 1000,
            seed: 1,
            risk: RiskParams::default(),
            fee_eur_mwh: 0.0,
            mode: RunMode::Both,
            price_day: "duck_curve".into(),
            da_prices_csv: None,
            history_csv: None,
            trim_quantile: 0.01,
            chain_override: None,
            out_dir: PathBuf::from("out"),
            solve: SolveOptions::default(),
        }
    }
}

impl RunConfig {
    /// Parse a flat key=value config file.
    pub fn from_file<P: AsRef<Path>>(path: P) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str_contents(&text)
    }

    pub fn from_str_contents(text: &str) -> Result<Self, ConfigError> {
        let mut config = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::BadLine {
                line: i + 1,
                text: raw.to_string(),
            })?;
            config.set(key.trim(), value.trim())?;
        }
        Ok(config)
    }

    /// Set one key; used by the file parser and CLI overrides alike.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str, expected: &str) -> Result<T, ConfigError> {
            value.parse().map_err(|_| ConfigError::BadValue {
                key: key.into(),
                value: value.into(),
                expected: expected.into(),
            })
        }
        let opt_path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        match key {
            "n_vehicles" => self.fleet.n_vehicles = parse(key, value, "integer >= 1")?,
            "energy_lognormal_mu" => self.fleet.energy_lognormal_mu = parse(key, value, "float")?,
            "energy_lognormal_sigma" => {
                self.fleet.energy_lognormal_sigma = parse(key, value, "float > 0")?
            }
            "arrival_mean_h" => self.fleet.arrival_mean_h = parse(key, value, "hour of day")?,
            "arrival_sd_h" => self.fleet.arrival_sd_h = parse(key, value, "hours > 0")?,
            "departure_mean_h" => self.fleet.departure_mean_h = parse(key, value, "hour of day")?,
            "departure_sd_h" => self.fleet.departure_sd_h = parse(key, value, "hours > 0")?,
            "power_kw" => self.fleet.power_kw = parse(key, value, "kW > 0")?,
            "horizon_start_h" => self.fleet.horizon_start_h = parse(key, value, "hour of day")?,
            "seed" => {
                self.seed = parse(key, value, "integer")?;
                self.fleet.rng_seed = self.seed;
            }
            "n_scenarios" => self.n_scenarios = parse(key, value, "integer >= 1")?,
            "beta" => self.risk.beta = parse(key, value, "float in [0,1]")?,
            "alpha" => self.risk.alpha = parse(key, value, "float in [0,1)")?,
            "fee_eur_mwh" => self.fee_eur_mwh = parse(key, value, "EUR/MWh >= 0")?,
            "mode" => self.mode = value.parse()?,
            "price_day" => self.price_day = value.to_string(),
            "da_prices_csv" => self.da_prices_csv = opt_path(value),
            "history_csv" => self.history_csv = opt_path(value),
            "trim_quantile" => self.trim_quantile = parse(key, value, "float in [0,0.1]")?,
            "chain_override" => {
                self.chain_override = (!value.is_empty()).then(|| value.to_string())
            }
            "out_dir" => self.out_dir = PathBuf::from(value),
            "gap_tol" => self.solve.gap_tol = parse(key, value, "float > 0")?,
            "max_nodes" => self.solve.max_nodes = parse(key, value, "integer")?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_scenarios == 0 {
            return Err(ConfigError::Invalid("n_scenarios must be >= 1".into()));
        }
        self.risk
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.fleet
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for (what, path) in [
            ("da_prices_csv", &self.da_prices_csv),
            ("history_csv", &self.history_csv),
        ] {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(ConfigError::Invalid(format!(
                        "{what} path does not exist: {}",
                        p.display()
                    )));
                }
            }
        }
        if let Some(ov) = &self.chain_override {
            if ov != "all_none" {
                return Err(ConfigError::Invalid(format!(
                    "chain_override must be 'all_none' or empty, got '{ov}'"
                )));
            }
        }
        if self.da_prices_csv.is_none()
            && crate::defaults::synthetic_prices(&self.price_day).is_none()
        {
            return Err(ConfigError::Invalid(format!(
                "price_day '{}' is not a bundled synthetic day (duck_curve | double_peak) \
                 and no da_prices_csv was given",
                self.price_day
            )));
        }
        Ok(())
    }

    /// Canonical key=value rendering, used for hashing and the MANIFEST.
    pub fn canonical_lines(&self) -> Vec<String> {
        let mut map = BTreeMap::new();
        let f = &self.fleet;
        map.insert("n_vehicles", f.n_vehicles.to_string());
        map.insert("energy_lognormal_mu", f.energy_lognormal_mu.to_string());
        map.insert("energy_lognormal_sigma", f.energy_lognormal_sigma.to_string());
        map.insert("arrival_mean_h", f.arrival_mean_h.to_string());
        map.insert("arrival_sd_h", f.arrival_sd_h.to_string());
        map.insert("departure_mean_h", f.departure_mean_h.to_string());
        map.insert("departure_sd_h", f.departure_sd_h.to_string());
        map.insert("power_kw", f.power_kw.to_string());
        map.insert("horizon_start_h", f.horizon_start_h.to_string());
        map.insert("seed", self.seed.to_string());
        map.insert("n_scenarios", self.n_scenarios.to_string());
        map.insert("beta", self.risk.beta.to_string());
        map.insert("alpha", self.risk.alpha.to_string());
        map.insert("fee_eur_mwh", self.fee_eur_mwh.to_string());
        map.insert(
            "mode",
            match self.mode {
                RunMode::Independent => "independent".into(),
                RunMode::Cooptimized => "cooptimized".into(),
                RunMode::Both => "both".into(),
            },
        );
        map.insert("price_day", self.price_day.clone());
        map.insert(
            "da_prices_csv",
            self.da_prices_csv
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        map.insert(
            "history_csv",
            self.history_csv
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        map.insert("trim_quantile", self.trim_quantile.to_string());
        map.insert(
            "chain_override",
            self.chain_override.clone().unwrap_or_default(),
        );
        map.insert("gap_tol", self.solve.gap_tol.to_string());
        map.insert("max_nodes", self.solve.max_nodes.to_string());
        map.into_iter()
            .map(|(k, v)| format!("{k} = {v}"))
            .collect()
    }

    /// FNV-1a hash of the canonical rendering (out_dir excluded, so the same
    /// run written elsewhere hashes identically).
    pub fn hash(&self) -> String {
        let mut hash: u64 = 0xcbf29ce484222325;
        for line in self.canonical_lines() {
            for b in line.bytes().chain([b'\n']) {
                hash ^= b as u64;
                hash = hash.wrapping_mul(0x100000001b3);
            }
        }
        format!("{hash:016x}")
    }
}

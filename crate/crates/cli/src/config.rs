//! Experiment configuration: file loading, `QWORK_` environment overrides
//! and resolution into core types.

use std::fmt;
use std::path::Path;

use qwork::fluct::MIN_TRIALS;
use qwork::interferometer::{NoiseModel, DEFAULT_RATE_KHZ, DEFAULT_SAMPLES};
use qwork::quench::{Direction, InverseTemperature, QuenchProtocol};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Fraction of the backward magnetization lost over the acquisition window.
pub const BACKWARD_ATTENUATION: f64 = 0.2;
/// Forward to backward decay ratio.
pub const DECAY_RATIO: f64 = 4.0;

/// `k_B T/h` in kHz, or one of the two limits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TemperatureRepr", into = "TemperatureRepr")]
pub enum Temperature {
    Zero,
    Kt(f64),
    Infinite,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TemperatureRepr {
    Kt(f64),
    Name(String),
}

impl TryFrom<TemperatureRepr> for Temperature {
    type Error = String;

    fn try_from(r: TemperatureRepr) -> std::result::Result<Self, String> {
        match r {
            TemperatureRepr::Kt(k) if k.is_finite() && k > 0.0 => Ok(Temperature::Kt(k)),
            TemperatureRepr::Kt(k) => Err(format!("kT must be a positive number of kHz, got {k}")),
            TemperatureRepr::Name(s) => match s.as_str() {
                "zero" => Ok(Temperature::Zero),
                "infinite" => Ok(Temperature::Infinite),
                _ => Err(format!("expected a kT in kHz, \"zero\" or \"infinite\", got \"{s}\"")),
            },
        }
    }
}

impl From<Temperature> for TemperatureRepr {
    fn from(t: Temperature) -> Self {
        match t {
            Temperature::Zero => TemperatureRepr::Name("zero".into()),
            Temperature::Infinite => TemperatureRepr::Name("infinite".into()),
            Temperature::Kt(k) => TemperatureRepr::Kt(k),
        }
    }
}

impl Temperature {
    pub fn beta(self) -> InverseTemperature {
        match self {
            Temperature::Zero => InverseTemperature::Infinite,
            Temperature::Infinite => InverseTemperature::zero(),
            Temperature::Kt(k) => InverseTemperature::Finite(1.0 / k),
        }
    }

    pub fn from_beta(beta: InverseTemperature) -> Self {
        match beta {
            InverseTemperature::Infinite => Temperature::Zero,
            InverseTemperature::Finite(b) if b == 0.0 => Temperature::Infinite,
            InverseTemperature::Finite(b) => Temperature::Kt(1.0 / b),
        }
    }

    /// File-name component: `zero`, `infinite` or the kT value.
    pub fn label(self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Temperature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Temperature::Zero => f.write_str("zero"),
            Temperature::Infinite => f.write_str("infinite"),
            Temperature::Kt(k) => write!(f, "{k}"),
        }
    }
}

/// Noise settings; unset decay rates follow the default calibration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_f_per_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_b_per_ms: Option<f64>,
    #[serde(default)]
    pub rf_sigma: f64,
    #[serde(default)]
    pub c_dephasing: f64,
    #[serde(default = "default_readout_sigma")]
    pub readout_sigma: f64,
}

fn default_readout_sigma() -> f64 {
    0.01
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            gamma_f_per_ms: None,
            gamma_b_per_ms: None,
            rf_sigma: 0.0,
            c_dephasing: 0.0,
            readout_sigma: default_readout_sigma(),
        }
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        Self {
            gamma_f_per_ms: Some(0.0),
            gamma_b_per_ms: Some(0.0),
            rf_sigma: 0.0,
            c_dephasing: 0.0,
            readout_sigma: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_nu1")]
    pub nu1_khz: f64,
    #[serde(default = "default_nu2")]
    pub nu2_khz: f64,
    #[serde(default = "default_tau")]
    pub tau_ms: f64,
    #[serde(default = "default_temperatures")]
    pub temperatures: Vec<Temperature>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_rate")]
    pub rate_khz: f64,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default = "default_mc_trials")]
    pub mc_trials: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_nu1() -> f64 {
    2.5
}
fn default_nu2() -> f64 {
    1.0
}
fn default_tau() -> f64 {
    0.1
}
fn default_temperatures() -> Vec<Temperature> {
    vec![
        Temperature::Zero,
        Temperature::Kt(1.9),
        Temperature::Kt(3.1),
        Temperature::Kt(6.0),
        Temperature::Infinite,
    ]
}
fn default_samples() -> usize {
    DEFAULT_SAMPLES
}
fn default_rate() -> f64 {
    DEFAULT_RATE_KHZ
}
fn default_mc_trials() -> usize {
    1000
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            nu1_khz: default_nu1(),
            nu2_khz: default_nu2(),
            tau_ms: default_tau(),
            temperatures: default_temperatures(),
            samples: default_samples(),
            rate_khz: default_rate(),
            noise: NoiseConfig::default(),
            mc_trials: default_mc_trials(),
            seed: 0,
        }
    }
}

const TOP_LEVEL: [&str; 9] =
    ["nu1_khz", "nu2_khz", "tau_ms", "temperatures", "samples", "rate_khz", "noise", "mc_trials", "seed"];
const NOISE_FIELDS: [&str; 5] = ["gamma_f_per_ms", "gamma_b_per_ms", "rf_sigma", "c_dephasing", "readout_sigma"];

fn parse_env_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `QWORK_<FIELD>` and `QWORK_NOISE_<FIELD>` overrides; other
/// `QWORK_` variables are left to the command line parser.
pub fn apply_env_overrides<I, K, V>(table: &mut toml::Table, vars: I)
where
    I: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    for (key, value) in vars {
        let Some(name) = key.as_ref().strip_prefix("QWORK_") else { continue };
        let name = name.to_ascii_lowercase();
        let value = parse_env_value(value.as_ref());
        if let Some(field) = name.strip_prefix("noise_").filter(|f| NOISE_FIELDS.contains(f)) {
            let noise = table
                .entry("noise")
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            if let toml::Value::Table(t) = noise {
                t.insert(field.to_string(), value);
            }
        } else if TOP_LEVEL.contains(&name.as_str()) && name != "noise" {
            table.insert(name, value);
        }
    }
}

fn schema_error(e: impl fmt::Display) -> CliError {
    let msg = e.to_string();
    let field = msg
        .split('`')
        .nth(1)
        .unwrap_or("<document>")
        .to_string();
    CliError::config(field, msg.trim().replace('\n', " "))
}

impl ExperimentConfig {
    /// Reference protocol and temperatures with the default noise calibration.
    pub fn reference() -> Self {
        Self::default()
    }

    /// Parses TOML, or JSON when `path` ends in `.json`, then applies
    /// environment overrides and validates.
    pub fn load<I, K, V>(path: Option<&Path>, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut table = match path {
            None => toml::Table::new(),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                if p.extension().is_some_and(|e| e == "json") {
                    let v: serde_json::Value = serde_json::from_str(&text).map_err(schema_error)?;
                    toml::Table::try_from(v).map_err(schema_error)?
                } else {
                    text.parse::<toml::Table>().map_err(schema_error)?
                }
            }
        };
        apply_env_overrides(&mut table, env);
        let cfg: ExperimentConfig = toml::Value::Table(table).try_into().map_err(schema_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(CliError::config(name, format!("must be a positive finite number, got {v}")))
            }
        };
        positive("nu1_khz", self.nu1_khz)?;
        positive("nu2_khz", self.nu2_khz)?;
        positive("tau_ms", self.tau_ms)?;
        positive("rate_khz", self.rate_khz)?;
        if self.temperatures.is_empty() {
            return Err(CliError::config("temperatures", "must not be empty"));
        }
        let mut labels: Vec<String> = self.temperatures.iter().map(|t| t.label()).collect();
        labels.sort();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(CliError::config("temperatures", format!("duplicate entry {}", w[0])));
        }
        if self.samples < 2 {
            return Err(CliError::config("samples", format!("must be at least 2, got {}", self.samples)));
        }
        if self.mc_trials < MIN_TRIALS {
            return Err(CliError::config(
                "mc_trials",
                format!("must be at least {MIN_TRIALS}, got {}", self.mc_trials),
            ));
        }
        let n = &self.noise;
        for (name, v) in [
            ("gamma_f_per_ms", n.gamma_f_per_ms.unwrap_or(0.0)),
            ("gamma_b_per_ms", n.gamma_b_per_ms.unwrap_or(0.0)),
            ("rf_sigma", n.rf_sigma),
            ("c_dephasing", n.c_dephasing),
            ("readout_sigma", n.readout_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CliError::config(name, format!("must be >= 0, got {v}")));
            }
        }
        if n.c_dephasing > 1.0 {
            return Err(CliError::config("c_dephasing", format!("must be <= 1, got {}", n.c_dephasing)));
        }
        Ok(())
    }

    /// Acquisition window `(n − 1)/rate`, ms.
    pub fn window_ms(&self) -> f64 {
        (self.samples - 1) as f64 / self.rate_khz
    }

    /// Resolves unset decay rates: the backward envelope loses
    /// [`BACKWARD_ATTENUATION`] over the window and the forward rate is
    /// [`DECAY_RATIO`] times smaller.
    pub fn noise_model(&self) -> NoiseModel {
        let n = &self.noise;
        let calibrated = -(1.0 - BACKWARD_ATTENUATION).ln() / self.window_ms();
        let (gamma_f, gamma_b) = match (n.gamma_f_per_ms, n.gamma_b_per_ms) {
            (Some(f), Some(b)) => (f, b),
            (Some(f), None) => (f, DECAY_RATIO * f),
            (None, Some(b)) => (b / DECAY_RATIO, b),
            (None, None) => (calibrated / DECAY_RATIO, calibrated),
        };
        NoiseModel { gamma_f, gamma_b, rf_sigma: n.rf_sigma, c_dephasing: n.c_dephasing, readout_sigma: n.readout_sigma }
    }

    pub fn protocol(&self, direction: Direction) -> Result<QuenchProtocol> {
        QuenchProtocol::new(self.nu1_khz, self.nu2_khz, self.tau_ms, direction)
            .map_err(|e| CliError::config("tau_ms", e.to_string()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

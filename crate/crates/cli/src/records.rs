//! On-disk JSON records. Keys carry their units.

use std::collections::{BTreeMap, BTreeSet};

use qwork::fluct::{ConsistencyFlags, CrooksFit, CrooksPoint, Estimate, JarzynskiReport};
use qwork::interferometer::{NoiseModel, SeriesMeta};
use qwork::qcore::C64;
use qwork::qpt::{ProcessReport, QptReport};
use qwork::quench::{Direction, InverseTemperature, QuenchProtocol};
use qwork::spectral::{omega_index, FitModel, ReconstructedDistribution, Tone, PARAMS, TONES};
use serde::{Deserialize, Serialize};

use crate::config::Temperature;

/// `β` as a number, or the string `"infinite"`.
pub mod beta_json {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Finite(f64),
        Name(String),
    }

    pub fn serialize<S: Serializer>(b: &InverseTemperature, s: S) -> Result<S::Ok, S::Error> {
        match b {
            InverseTemperature::Finite(v) => Repr::Finite(*v),
            InverseTemperature::Infinite => Repr::Name("infinite".into()),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<InverseTemperature, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Finite(v) => InverseTemperature::new(v).map_err(serde::de::Error::custom),
            Repr::Name(s) if s == "infinite" => Ok(InverseTemperature::Infinite),
            Repr::Name(s) => Err(serde::de::Error::custom(format!("expected a number or \"infinite\", got \"{s}\""))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseRecord {
    pub gamma_f_per_ms: f64,
    pub gamma_b_per_ms: f64,
    pub rf_sigma: f64,
    pub c_dephasing: f64,
    pub readout_sigma: f64,
}

impl From<NoiseModel> for NoiseRecord {
    fn from(n: NoiseModel) -> Self {
        Self {
            gamma_f_per_ms: n.gamma_f,
            gamma_b_per_ms: n.gamma_b,
            rf_sigma: n.rf_sigma,
            c_dephasing: n.c_dephasing,
            readout_sigma: n.readout_sigma,
        }
    }
}

impl From<NoiseRecord> for NoiseModel {
    fn from(n: NoiseRecord) -> Self {
        Self {
            gamma_f: n.gamma_f_per_ms,
            gamma_b: n.gamma_b_per_ms,
            rf_sigma: n.rf_sigma,
            c_dephasing: n.c_dephasing,
            readout_sigma: n.readout_sigma,
        }
    }
}

/// Sidecar of a series CSV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesMetaRecord {
    pub direction: Direction,
    pub nu1_khz: f64,
    pub nu2_khz: f64,
    pub tau_ms: f64,
    pub temperature: Temperature,
    #[serde(with = "beta_json")]
    pub beta_per_khz: InverseTemperature,
    pub noise: NoiseRecord,
    pub seed: u64,
    pub rate_khz: f64,
}

impl From<&SeriesMeta> for SeriesMetaRecord {
    fn from(m: &SeriesMeta) -> Self {
        Self {
            direction: m.protocol.direction,
            nu1_khz: m.protocol.nu1,
            nu2_khz: m.protocol.nu2,
            tau_ms: m.protocol.tau,
            temperature: Temperature::from_beta(m.beta),
            beta_per_khz: m.beta,
            noise: m.noise.into(),
            seed: m.seed,
            rate_khz: m.rate_khz,
        }
    }
}

impl SeriesMetaRecord {
    pub fn protocol(&self) -> qwork::Result<QuenchProtocol> {
        QuenchProtocol::new(self.nu1_khz, self.nu2_khz, self.tau_ms, self.direction)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToneRecord {
    pub omega_khz: f64,
    pub sigma_omega_khz: f64,
    pub alpha_re: f64,
    pub alpha_im: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomRecord {
    pub work_khz: f64,
    pub prob: f64,
    pub sigma_work_khz: f64,
    pub sigma_prob: f64,
}

pub fn parameter_names() -> Vec<String> {
    let mut names = vec!["gamma_per_ms".to_string()];
    names.extend((1..=TONES).map(|k| format!("omega_khz[{k}]")));
    for k in 1..=TONES {
        names.push(format!("alpha_re[{k}]"));
        names.push(format!("alpha_im[{k}]"));
    }
    names
}

/// Fitted model, its covariance and the derived work distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitRecord {
    pub gamma_per_ms: f64,
    pub sigma_gamma_per_ms: f64,
    pub tones: Vec<ToneRecord>,
    pub residual_rms: f64,
    pub iterations: usize,
    pub samples: usize,
    pub parameters: Vec<String>,
    pub covariance: Vec<Vec<f64>>,
    /// Absent when the amplitudes do not define a distribution.
    pub distribution: Option<Vec<AtomRecord>>,
    pub source: Option<SeriesMetaRecord>,
}

impl FitRecord {
    pub fn new(m: &FitModel, d: Option<&ReconstructedDistribution>, source: Option<SeriesMetaRecord>) -> Self {
        Self {
            gamma_per_ms: m.gamma,
            sigma_gamma_per_ms: m.sigma(0),
            tones: (0..TONES)
                .map(|k| ToneRecord {
                    omega_khz: m.tones[k].omega,
                    sigma_omega_khz: m.sigma(omega_index(k)),
                    alpha_re: m.tones[k].alpha.re,
                    alpha_im: m.tones[k].alpha.im,
                })
                .collect(),
            residual_rms: m.residual_rms,
            iterations: m.iterations,
            samples: m.samples,
            parameters: parameter_names(),
            covariance: m.covariance.iter().map(|r| r.to_vec()).collect(),
            distribution: d.map(|d| {
                d.atoms
                    .iter()
                    .map(|a| AtomRecord {
                        work_khz: a.work,
                        prob: a.prob,
                        sigma_work_khz: a.sigma_work,
                        sigma_prob: a.sigma_prob,
                    })
                    .collect()
            }),
            source,
        }
    }

    pub fn model(&self) -> Result<FitModel, String> {
        if self.tones.len() != TONES {
            return Err(format!("{} tones, expected {TONES}", self.tones.len()));
        }
        if self.covariance.len() != PARAMS || self.covariance.iter().any(|r| r.len() != PARAMS) {
            return Err(format!("covariance must be {PARAMS}x{PARAMS}"));
        }
        let tones: [Tone; TONES] = std::array::from_fn(|k| Tone {
            omega: self.tones[k].omega_khz,
            alpha: C64::new(self.tones[k].alpha_re, self.tones[k].alpha_im),
        });
        if tones.windows(2).any(|w| w[0].omega > w[1].omega) {
            return Err("tones must ascend in omega_khz".into());
        }
        let mut covariance = [[0.0; PARAMS]; PARAMS];
        for (dst, src) in covariance.iter_mut().zip(&self.covariance) {
            dst.copy_from_slice(src);
        }
        Ok(FitModel {
            gamma: self.gamma_per_ms,
            tones,
            covariance,
            residual_rms: self.residual_rms,
            iterations: self.iterations,
            samples: self.samples,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrooksPointRecord {
    pub work_khz: f64,
    pub ln_ratio: f64,
    pub sigma: f64,
}

impl From<&CrooksPoint> for CrooksPointRecord {
    fn from(p: &CrooksPoint) -> Self {
        Self { work_khz: p.work, ln_ratio: p.ln_ratio, sigma: p.sigma }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrooksRecord {
    pub beta_per_khz: f64,
    pub sigma_beta_per_khz: f64,
    /// `−βΔF`
    pub intercept: f64,
    pub sigma_intercept: f64,
    pub cov_intercept_beta_per_khz: f64,
    pub delta_f_khz: Option<f64>,
    pub sigma_delta_f_khz: Option<f64>,
    pub cov_beta_delta_f: Option<f64>,
    pub weighted: bool,
    pub warnings: Vec<String>,
    pub points: Vec<CrooksPointRecord>,
}

impl From<&CrooksFit> for CrooksRecord {
    fn from(c: &CrooksFit) -> Self {
        Self {
            beta_per_khz: c.beta_est,
            sigma_beta_per_khz: c.sigma_beta,
            intercept: c.intercept,
            sigma_intercept: c.sigma_intercept,
            cov_intercept_beta_per_khz: c.cov_intercept_beta,
            delta_f_khz: c.delta_f_est,
            sigma_delta_f_khz: c.sigma_delta_f,
            cov_beta_delta_f: c.cov_beta_delta_f,
            weighted: c.weighted,
            warnings: c.warnings.clone(),
            points: c.points.iter().map(Into::into).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JarzynskiRecord {
    pub beta_per_khz: f64,
    pub lhs_continuation: Estimate,
    pub rhs_crooks: Estimate,
    pub rhs_theory: Estimate,
    pub flags: ConsistencyFlags,
}

impl From<&JarzynskiReport> for JarzynskiRecord {
    fn from(r: &JarzynskiReport) -> Self {
        Self {
            beta_per_khz: r.beta,
            lhs_continuation: r.lhs_continuation,
            rhs_crooks: r.rhs_crooks,
            rhs_theory: r.rhs_theory,
            flags: r.flags,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    NotApplicable,
}

/// Output of `verify` for one forward/backward pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyRecord {
    pub temperature: Option<Temperature>,
    pub status: Status,
    pub reason: Option<String>,
    pub crooks: Option<CrooksRecord>,
    pub jarzynski: Option<JarzynskiRecord>,
    pub delta_f_theory_khz: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessRecord {
    pub direction: Direction,
    /// Rows and columns in the basis `(i𝟙, σx, σy, σz)`.
    pub xi_re: [[f64; 4]; 4],
    pub xi_im: [[f64; 4]; 4],
    pub worst_case_distance: f64,
    pub unitality_deviation: f64,
    pub imag_norm: f64,
    /// Initial populations `(ground, excited)` at infinite temperature.
    pub p0: [f64; 2],
    /// `pcond[n][m] = p(m | n)`.
    pub pcond: [[f64; 2]; 2],
}

impl From<&ProcessReport> for ProcessRecord {
    fn from(r: &ProcessReport) -> Self {
        Self {
            direction: r.direction,
            xi_re: r.xi.real_part(),
            xi_im: r.xi.imag_part(),
            worst_case_distance: r.metrics.worst_case_distance,
            unitality_deviation: r.metrics.unitality_deviation,
            imag_norm: r.metrics.imag_norm,
            p0: r.table.p0,
            pcond: r.table.pcond,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QptRecord {
    pub rf_sigma: f64,
    pub seed: u64,
    pub microreversibility_deviation: f64,
    pub forward: ProcessRecord,
    pub backward: ProcessRecord,
}

impl QptRecord {
    pub fn new(r: &QptReport, seed: u64) -> Self {
        Self {
            rf_sigma: r.rf_sigma,
            seed,
            microreversibility_deviation: r.microreversibility_deviation,
            forward: (&r.forward).into(),
            backward: (&r.backward).into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config_digest: String,
    /// Paths relative to the run directory.
    pub artifacts: BTreeSet<String>,
    /// Wall-clock time per stage, ms.
    pub stage_ms: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(config_digest: String) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_digest,
            ..Default::default()
        }
    }
}

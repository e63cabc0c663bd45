//! Run summary: recovered temperatures, Jarzynski columns, tomography.

use std::fmt::Write;

use qwork::fluct::{ConsistencyFlags, Estimate};
use qwork::quench::{temperature_from_population, Direction};
use qwork::spectral::{conditional_estimate, distribution_from_fit};
use serde::{Deserialize, Serialize};

use crate::commands::{Layout, DIRECTIONS};
use crate::config::{ExperimentConfig, Temperature};
use crate::error::{CliError, Result};
use crate::io::read_json;
use crate::records::{FitRecord, QptRecord, Status, VerifyRecord};

/// Populations this close to 0 or ½ are read as the limiting temperatures.
const POPULATION_EDGE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveredTemperature {
    /// Excited initial population from the fitted amplitudes; `None` when
    /// the amplitudes do not define a distribution.
    pub p1: Option<f64>,
    /// `None` for a population inversion or an undefined population.
    pub kt_khz: Option<Temperature>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureRow {
    pub prepared: Temperature,
    pub forward: RecoveredTemperature,
    pub backward: RecoveredTemperature,
    pub average_kt_khz: Option<Temperature>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JarzynskiRow {
    pub prepared: Temperature,
    pub status: Status,
    pub beta_per_khz: Option<f64>,
    pub lhs_continuation: Option<Estimate>,
    pub rhs_crooks: Option<Estimate>,
    pub rhs_theory: Option<Estimate>,
    pub flags: Option<ConsistencyFlags>,
    pub crooks_beta_per_khz: Option<Estimate>,
    pub crooks_delta_f_khz: Option<Estimate>,
    pub delta_f_theory_khz: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QptSummary {
    pub rf_sigma: f64,
    pub worst_case_distance_forward: f64,
    pub worst_case_distance_backward: f64,
    pub unitality_deviation_forward: f64,
    pub unitality_deviation_backward: f64,
    pub microreversibility_deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub config_digest: String,
    pub temperatures: Vec<TemperatureRow>,
    pub jarzynski: Vec<JarzynskiRow>,
    pub qpt: QptSummary,
    /// Every applicable row agrees on all three comparisons.
    pub all_flags: bool,
}

/// Stage outputs the report needs that are absent from the run directory.
pub fn missing_stages(layout: &Layout, cfg: &ExperimentConfig) -> Vec<String> {
    let mut missing = Vec::new();
    let mut check = |stage: &str, path: std::path::PathBuf| {
        if !path.exists() {
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            missing.push(format!("{stage} ({name})"));
        }
    };
    for &d in &DIRECTIONS {
        for &t in &cfg.temperatures {
            check("simulate", layout.series(d, t));
        }
    }
    for &d in &DIRECTIONS {
        for &t in &cfg.temperatures {
            check("fit", layout.fit(d, t));
        }
    }
    for &t in &cfg.temperatures {
        check("verify", layout.verify(t));
    }
    check("qpt", layout.qpt());
    missing
}

fn recovered(fit: &FitRecord, direction: Direction, layout_path: &std::path::Path) -> Result<RecoveredTemperature> {
    let model = fit.model().map_err(|m| CliError::schema(layout_path, m))?;
    let source = fit.source.ok_or_else(|| CliError::schema(layout_path, "fit has no source metadata"))?;
    let p = source
        .protocol()
        .map_err(|e| CliError::schema(layout_path, e.to_string()))?
        .with_direction(direction);
    let p1 = distribution_from_fit(&model)
        .ok()
        .map(|d| conditional_estimate(&d, p.initial_half_gap(), p.final_half_gap()).p0[1]);
    let kt_khz = p1.and_then(|p1| population_temperature(p1, p.initial_half_gap()));
    Ok(RecoveredTemperature { p1, kt_khz })
}

fn population_temperature(p1: f64, nu: f64) -> Option<Temperature> {
    if p1 <= POPULATION_EDGE {
        Some(Temperature::Zero)
    } else if p1 >= 0.5 - POPULATION_EDGE {
        (p1 <= 0.5 + POPULATION_EDGE).then_some(Temperature::Infinite)
    } else {
        temperature_from_population(p1, nu).ok().map(Temperature::Kt)
    }
}

fn average(a: Option<Temperature>, b: Option<Temperature>) -> Option<Temperature> {
    match (a?, b?) {
        (Temperature::Kt(x), Temperature::Kt(y)) => Some(Temperature::Kt(0.5 * (x + y))),
        (x, y) if x == y => Some(x),
        _ => None,
    }
}

pub fn build(layout: &Layout, cfg: &ExperimentConfig) -> Result<ReportRecord> {
    let missing = missing_stages(layout, cfg);
    if !missing.is_empty() {
        return Err(CliError::MissingStages(missing));
    }
    let mut temperatures = Vec::new();
    let mut jarzynski = Vec::new();
    for &t in &cfg.temperatures {
        let pf = layout.fit(Direction::Forward, t);
        let pb = layout.fit(Direction::Backward, t);
        let forward = recovered(&read_json(&pf)?, Direction::Forward, &pf)?;
        let backward = recovered(&read_json(&pb)?, Direction::Backward, &pb)?;
        temperatures.push(TemperatureRow {
            prepared: t,
            forward,
            backward,
            average_kt_khz: average(forward.kt_khz, backward.kt_khz),
        });
        let v: VerifyRecord = read_json(&layout.verify(t))?;
        let j = v.jarzynski;
        let c = v.crooks.as_ref();
        jarzynski.push(JarzynskiRow {
            prepared: t,
            status: v.status,
            beta_per_khz: j.map(|j| j.beta_per_khz),
            lhs_continuation: j.map(|j| j.lhs_continuation),
            rhs_crooks: j.map(|j| j.rhs_crooks),
            rhs_theory: j.map(|j| j.rhs_theory),
            flags: j.map(|j| j.flags),
            crooks_beta_per_khz: c.map(|c| Estimate { value: c.beta_per_khz, sigma: c.sigma_beta_per_khz }),
            crooks_delta_f_khz: c.and_then(|c| Some(Estimate { value: c.delta_f_khz?, sigma: c.sigma_delta_f_khz? })),
            delta_f_theory_khz: v.delta_f_theory_khz,
            warnings: c.map(|c| c.warnings.clone()).unwrap_or_default(),
        });
    }
    let q: QptRecord = read_json(&layout.qpt())?;
    let all_flags = jarzynski
        .iter()
        .filter(|r| r.status == Status::Ok)
        .all(|r| r.flags.is_some_and(|f| f.all()));
    Ok(ReportRecord {
        config_digest: cfg.digest(),
        temperatures,
        jarzynski,
        qpt: QptSummary {
            rf_sigma: q.rf_sigma,
            worst_case_distance_forward: q.forward.worst_case_distance,
            worst_case_distance_backward: q.backward.worst_case_distance,
            unitality_deviation_forward: q.forward.unitality_deviation,
            unitality_deviation_backward: q.backward.unitality_deviation,
            microreversibility_deviation: q.microreversibility_deviation,
        },
        all_flags,
    })
}

fn p1(p: Option<f64>) -> String {
    p.map(|p| format!("{p:.4}")).unwrap_or_else(|| "n/a".into())
}

fn kt(t: Option<Temperature>) -> String {
    match t {
        None => "n/a".into(),
        Some(Temperature::Kt(k)) => format!("{k:.3}"),
        Some(t) => t.to_string(),
    }
}

fn est(e: Option<Estimate>) -> String {
    match e {
        Some(e) => format!("{:.5} ± {:.5}", e.value, e.sigma),
        None => "n/a".into(),
    }
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

/// Plain-text rendering of a report.
pub fn render(r: &ReportRecord) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "config sha256 {}", r.config_digest);
    let _ = writeln!(s);
    let _ = writeln!(s, "Initial temperatures from fitted populations (kT/h, kHz)");
    let _ = writeln!(
        s,
        "{:<10} {:>10} {:>9} {:>10} {:>9} {:>10}",
        "prepared", "p1 fwd", "kT fwd", "p1 bwd", "kT bwd", "kT avg"
    );
    for row in &r.temperatures {
        let _ = writeln!(
            s,
            "{:<10} {:>10} {:>9} {:>10} {:>9} {:>10}",
            row.prepared.to_string(),
            p1(row.forward.p1),
            kt(row.forward.kt_khz),
            p1(row.backward.p1),
            kt(row.backward.kt_khz),
            kt(row.average_kt_khz),
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "Jarzynski: <exp(-bW)> by continuation, exp(a) from the Crooks line, Z_t/Z_0");
    let _ = writeln!(
        s,
        "{:<10} {:>8} {:>22} {:>22} {:>22} {:>6} {:>6} {:>6}",
        "prepared", "beta", "continuation", "crooks", "theory", "L=C", "L=T", "C=T"
    );
    for row in &r.jarzynski {
        if row.status == Status::NotApplicable {
            let _ = writeln!(s, "{:<10} {:>8} {:>22} {:>22} {:>22} {:>6} {:>6} {:>6}", row.prepared.to_string(), "n/a", "n/a", "n/a", "n/a", "n/a", "n/a", "n/a");
            continue;
        }
        let beta = row.beta_per_khz.map(|b| format!("{b:.4}")).unwrap_or_else(|| "n/a".into());
        let flags = row.flags.map(|f| [f.lhs_vs_crooks, f.lhs_vs_theory, f.crooks_vs_theory].map(yes_no));
        let [a, b, c] = flags.unwrap_or(["n/a"; 3]);
        let _ = writeln!(
            s,
            "{:<10} {:>8} {:>22} {:>22} {:>22} {:>6} {:>6} {:>6}",
            row.prepared.to_string(),
            beta,
            est(row.lhs_continuation),
            est(row.rhs_crooks),
            est(row.rhs_theory),
            a,
            b,
            c
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "Crooks line (1/kHz, kHz)");
    let _ = writeln!(s, "{:<10} {:>22} {:>22} {:>10}", "prepared", "beta", "delta F", "theory");
    for row in &r.jarzynski {
        let theory = row.delta_f_theory_khz.map(|v| format!("{v:.5}")).unwrap_or_else(|| "n/a".into());
        let _ = writeln!(
            s,
            "{:<10} {:>22} {:>22} {:>10}",
            row.prepared.to_string(),
            est(row.crooks_beta_per_khz),
            est(row.crooks_delta_f_khz),
            theory
        );
        for w in &row.warnings {
            let _ = writeln!(s, "  warning: {w}");
        }
    }
    let _ = writeln!(s);
    let q = &r.qpt;
    let _ = writeln!(s, "Process tomography at rf_sigma = {}", q.rf_sigma);
    let _ = writeln!(s, "  worst-case distance   forward {:.3e}  backward {:.3e}", q.worst_case_distance_forward, q.worst_case_distance_backward);
    let _ = writeln!(s, "  unitality deviation   forward {:.3e}  backward {:.3e}", q.unitality_deviation_forward, q.unitality_deviation_backward);
    let _ = writeln!(s, "  micro-reversibility   {:.3e}", q.microreversibility_deviation);
    let _ = writeln!(s);
    let _ = writeln!(s, "all consistency flags: {}", yes_no(r.all_flags));
    s
}

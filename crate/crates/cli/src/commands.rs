//! Stages of a run: simulate, fit, verify, qpt, report.

use std::path::{Path, PathBuf};
use std::time::Instant;

use qwork::fluct::{crooks_fit, crooks_points, jarzynski_report};
use qwork::interferometer::{sample_series_with, Interferometer};
use qwork::qpt::analyze;
use qwork::quench::{Direction, InverseTemperature};
use qwork::spectral::{distribution_from_fit, fit_series, fit_series_with_hint};
use qwork::tpm::{delta_f_theory, work_values};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Temperature};
use crate::error::{CliError, Context, Result};
use crate::io::{read_json, read_series, write_atomic, write_json, write_series};
use crate::records::{
    CrooksRecord, FitRecord, JarzynskiRecord, QptRecord, RunManifest, SeriesMetaRecord, Status, VerifyRecord,
};
use crate::report;

pub const DIRECTIONS: [Direction; 2] = [Direction::Forward, Direction::Backward];

/// File names inside a run directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn series(&self, d: Direction, t: Temperature) -> PathBuf {
        self.root.join(format!("series_{}_{}.csv", d.label(), t.label()))
    }

    pub fn fit(&self, d: Direction, t: Temperature) -> PathBuf {
        self.root.join(format!("fit_{}_{}.json", d.label(), t.label()))
    }

    pub fn verify(&self, t: Temperature) -> PathBuf {
        self.root.join(format!("verify_{}.json", t.label()))
    }

    pub fn crooks_points(&self, t: Temperature) -> PathBuf {
        self.root.join(format!("crooks_points_{}.csv", t.label()))
    }

    pub fn qpt(&self) -> PathBuf {
        self.root.join("qpt.json")
    }

    pub fn report_json(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn report_txt(&self) -> PathBuf {
        self.root.join("report.txt")
    }

    fn relative(&self, p: &Path) -> String {
        p.strip_prefix(&self.root).unwrap_or(p).to_string_lossy().into_owned()
    }

    pub fn load_config(&self) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = read_json(&self.config())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Records a finished stage and its outputs in `manifest.json`.
    pub fn record_stage(&self, cfg: &ExperimentConfig, stage: &str, started: Instant, outputs: &[PathBuf]) -> Result<()> {
        let digest = cfg.digest();
        let mut m = match read_json::<RunManifest>(&self.manifest()) {
            Ok(m) if m.config_digest == digest => m,
            _ => RunManifest::new(digest),
        };
        m.artifacts.insert(self.relative(&self.config()));
        m.artifacts.extend(outputs.iter().map(|p| self.relative(p)));
        m.artifacts.retain(|a| self.root.join(a).exists());
        m.stage_ms.insert(stage.to_string(), started.elapsed().as_secs_f64() * 1e3);
        write_json(&self.manifest(), &m)
    }

    fn write_config(&self, cfg: &ExperimentConfig) -> Result<()> {
        if let Ok(old) = read_json::<ExperimentConfig>(&self.config()) {
            if old == *cfg {
                return Ok(());
            }
        }
        write_json(&self.config(), cfg)
    }
}

/// Sidecar path of a series CSV: `x.csv` → `x.meta.json`.
pub fn meta_path(series: &Path) -> PathBuf {
    series.with_extension("meta.json")
}

/// Writes one series CSV and metadata sidecar per (direction, temperature).
pub fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    let layout = Layout::new(out);
    layout.write_config(cfg)?;
    let noise = cfg.noise_model();
    let interferometers = DIRECTIONS
        .par_iter()
        .map(|&d| Ok(Interferometer::new(&cfg.protocol(d)?)))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, Temperature)> =
        (0..DIRECTIONS.len()).flat_map(|i| cfg.temperatures.iter().map(move |&t| (i, t))).collect();
    let written = jobs
        .par_iter()
        .map(|&(i, t)| {
            let d = DIRECTIONS[i];
            let s = sample_series_with(&interferometers[i], t.beta(), &noise, cfg.samples, cfg.rate_khz, cfg.seed)
                .context(|| format!("simulate {} at {}", d.label(), t))?;
            let path = layout.series(d, t);
            write_series(&path, &s)?;
            let mut meta = SeriesMetaRecord::from(s.meta.as_ref().expect("sampled series carry metadata"));
            meta.temperature = t;
            write_json(&meta_path(&path), &meta)?;
            Ok(vec![path.clone(), meta_path(&path)])
        })
        .collect::<Result<Vec<_>>>()?
        .concat();
    layout.record_stage(cfg, "simulate", started, &written)?;
    Ok(written)
}

/// Fits one series; the sidecar, when present, supplies expected
/// frequencies for sparse spectra and travels into the output.
pub fn fit_file(series: &Path, out: &Path) -> Result<FitRecord> {
    let s = read_series(series)?;
    let mp = meta_path(series);
    let meta: Option<SeriesMetaRecord> = if mp.exists() { Some(read_json(&mp)?) } else { None };
    let what = || format!("fit {}", series.display());
    let model = match &meta {
        Some(m) => {
            let hint = work_values(&m.protocol().context(what)?).context(what)?;
            fit_series_with_hint(&s, &hint)
        }
        None => fit_series(&s),
    }
    .context(what)?;
    let dist = match distribution_from_fit(&model) {
        Ok(d) => Some(d),
        Err(qwork::Error::DegenerateModel) => None,
        Err(e) => return Err(e).context(what),
    };
    let rec = FitRecord::new(&model, dist.as_ref(), meta);
    write_json(out, &rec)?;
    Ok(rec)
}

pub fn fit_run(run: &Path) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    let layout = Layout::new(run);
    let cfg = layout.load_config()?;
    let jobs: Vec<(Direction, Temperature)> =
        DIRECTIONS.iter().flat_map(|&d| cfg.temperatures.iter().map(move |&t| (d, t))).collect();
    let written = jobs
        .par_iter()
        .map(|&(d, t)| {
            let out = layout.fit(d, t);
            fit_file(&layout.series(d, t), &out)?;
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    layout.record_stage(&cfg, "fit", started, &written)?;
    Ok(written)
}

fn load_fit(path: &Path) -> Result<(FitRecord, qwork::spectral::FitModel)> {
    let rec: FitRecord = read_json(path)?;
    let model = rec.model().map_err(|m| CliError::schema(path, m))?;
    Ok((rec, model))
}

/// Crooks fit and three-way Jarzynski comparison for one pair of fits.
///
/// The preparation temperature and protocol come from the forward fit's
/// provenance; without it only the Crooks fit is reported.
pub fn verify_pair(forward: &Path, backward: &Path, mc_trials: usize, seed: u64) -> Result<VerifyRecord> {
    let (rf, mf) = load_fit(forward)?;
    let (rb, mb) = load_fit(backward)?;
    let source = rf.source;
    if let (Some(a), Some(b)) = (&rf.source, &rb.source) {
        if a.beta_per_khz != b.beta_per_khz {
            return Err(CliError::Usage(format!(
                "{} and {} were prepared at different temperatures",
                forward.display(),
                backward.display()
            )));
        }
    }
    let temperature = source.map(|s| s.temperature);
    let beta = source.map(|s| s.beta_per_khz);
    if beta == Some(InverseTemperature::Infinite) {
        return Ok(VerifyRecord {
            temperature,
            status: Status::NotApplicable,
            reason: Some("ground-state preparation: the backward atoms paired with W > 0 carry no weight".into()),
            crooks: None,
            jarzynski: None,
            delta_f_theory_khz: None,
        });
    }
    let what = || format!("verify {} / {}", forward.display(), backward.display());
    let df = distribution_from_fit(&mf).context(what)?;
    let db = distribution_from_fit(&mb).context(what)?;
    let crooks = crooks_fit(&crooks_points(&df, &db).context(what)?).context(what)?;
    let (jarzynski, delta_f_theory_khz) = match (source, beta) {
        (Some(s), Some(b)) => {
            let p = s.protocol().context(what)?.with_direction(Direction::Forward);
            let r = jarzynski_report(&mf, &crooks, &p, b, mc_trials, seed).context(what)?;
            let theory = delta_f_theory(b, p.initial_half_gap(), p.final_half_gap()).delta_f;
            (Some(JarzynskiRecord::from(&r)), Some(theory).filter(|v| v.is_finite()))
        }
        _ => (None, None),
    };
    Ok(VerifyRecord {
        temperature,
        status: Status::Ok,
        reason: None,
        crooks: Some(CrooksRecord::from(&crooks)),
        jarzynski,
        delta_f_theory_khz,
    })
}

/// `W_khz,ln_ratio,sigma` rows of a Crooks fit.
pub fn crooks_csv(c: &CrooksRecord) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(["W_khz", "ln_ratio", "sigma"]).expect("in-memory write");
    for p in &c.points {
        w.write_record([p.work_khz, p.ln_ratio, p.sigma].map(|x| format!("{x:.16e}"))).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Writes the verification JSON and, next to it, `crooks_points.csv`.
pub fn verify_files(forward: &Path, backward: &Path, out: &Path, mc_trials: usize, seed: u64) -> Result<VerifyRecord> {
    let rec = verify_pair(forward, backward, mc_trials, seed)?;
    write_json(out, &rec)?;
    if let Some(c) = &rec.crooks {
        let dir = out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        write_atomic(&dir.join("crooks_points.csv"), &crooks_csv(c))?;
    }
    Ok(rec)
}

pub fn verify_run(run: &Path) -> Result<Vec<PathBuf>> {
    let started = Instant::now();
    let layout = Layout::new(run);
    let cfg = layout.load_config()?;
    let written = cfg
        .temperatures
        .par_iter()
        .map(|&t| {
            let seed = cfg.seed ^ t.beta().value().to_bits();
            let rec = verify_pair(
                &layout.fit(Direction::Forward, t),
                &layout.fit(Direction::Backward, t),
                cfg.mc_trials,
                seed,
            )?;
            let mut out = vec![layout.verify(t)];
            write_json(&out[0], &rec)?;
            if let Some(c) = &rec.crooks {
                out.push(layout.crooks_points(t));
                write_atomic(&out[1], &crooks_csv(c))?;
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?
        .concat();
    layout.record_stage(&cfg, "verify", started, &written)?;
    Ok(written)
}

/// Process tomography of both quench directions under the configured rf
/// inhomogeneity.
pub fn qpt(cfg: &ExperimentConfig, out: &Path) -> Result<QptRecord> {
    let started = Instant::now();
    let layout = Layout::new(out);
    layout.write_config(cfg)?;
    let p = cfg.protocol(Direction::Forward)?;
    let report = analyze(&p, cfg.noise.rf_sigma, cfg.seed).context(|| "qpt".into())?;
    let rec = QptRecord::new(&report, cfg.seed);
    write_json(&layout.qpt(), &rec)?;
    layout.record_stage(cfg, "qpt", started, &[layout.qpt()])?;
    Ok(rec)
}

/// Aggregates a completed run into `report.json` and `report.txt`.
pub fn report_run(run: &Path) -> Result<report::ReportRecord> {
    let started = Instant::now();
    let layout = Layout::new(run);
    if !layout.config().exists() {
        return Err(CliError::MissingStages(vec![format!(
            "simulate or qpt ({} not found)",
            layout.relative(&layout.config())
        )]));
    }
    let cfg = layout.load_config()?;
    let rec = report::build(&layout, &cfg)?;
    write_json(&layout.report_json(), &rec)?;
    write_atomic(&layout.report_txt(), report::render(&rec).as_bytes())?;
    layout.record_stage(&cfg, "report", started, &[layout.report_json(), layout.report_txt()])?;
    Ok(rec)
}

/// All five stages in order.
pub fn pipeline(cfg: &ExperimentConfig, out: &Path) -> Result<report::ReportRecord> {
    simulate(cfg, out)?;
    fit_run(out)?;
    verify_run(out)?;
    qpt(cfg, out)?;
    report_run(out)
}

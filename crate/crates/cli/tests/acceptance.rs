//! One line per acceptance criterion; exits nonzero if any fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use qwork::fluct::{crooks_fit, crooks_points, jarzynski_continuation};
use qwork::interferometer::{
    sample_series_with, uniform_grid, Interferometer, NoiseModel, PulseSimulator, DEFAULT_RATE_KHZ, DEFAULT_SAMPLES,
};
use qwork::qcore::C64;
use qwork::qpt::analyze;
use qwork::quench::{temperature_from_population, Direction, InverseTemperature, QuenchProtocol};
use qwork::spectral::{distribution_from_fit, fit_series, FitModel};
use qwork::tpm::{chi_exact, jarzynski_lhs, ExactStatistics, TransitionTable};
use qwork_cli::config::ExperimentConfig;

const DIRS: [Direction; 2] = [Direction::Forward, Direction::Backward];
const REFERENCE_KT: [f64; 3] = [1.9, 3.1, 6.0];
const NU1: f64 = 2.5;
const NU2: f64 = 1.0;

fn temperatures() -> [InverseTemperature; 5] {
    [
        InverseTemperature::Infinite,
        InverseTemperature::Finite(1.0 / 1.9),
        InverseTemperature::Finite(1.0 / 3.1),
        InverseTemperature::Finite(1.0 / 6.0),
        InverseTemperature::Finite(0.0),
    ]
}

/// `(1/β) ln(cosh βν₁ / cosh βν₂)`.
fn delta_f(beta: f64) -> f64 {
    ((beta * NU1).cosh() / (beta * NU2).cosh()).ln() / beta
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(n: usize, name: &str, o: Outcome) -> bool {
    println!("criterion {n} {}: {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    o.pass
}

fn interferometers() -> Vec<Interferometer> {
    DIRS.iter().map(|&d| Interferometer::new(&QuenchProtocol::reference(d))).collect()
}

fn noiseless_fit(ifm: &Interferometer, beta: InverseTemperature, noise: &NoiseModel) -> FitModel {
    let s = sample_series_with(ifm, beta, noise, DEFAULT_SAMPLES, DEFAULT_RATE_KHZ, 0).unwrap();
    fit_series(&s).unwrap()
}

fn oracle_equivalence() -> Outcome {
    let oracles: Vec<Vec<ExactStatistics>> = DIRS
        .iter()
        .map(|&d| temperatures().iter().map(|&b| ExactStatistics::compute(&QuenchProtocol::reference(d), b).unwrap()).collect())
        .collect();
    let start = Instant::now();
    let ifms = interferometers();
    let mut worst: f64 = 0.0;
    let mut points = 0;
    for (ifm, exact) in ifms.iter().zip(&oracles) {
        for (beta, ex) in temperatures().into_iter().zip(exact) {
            let s = sample_series_with(ifm, beta, &NoiseModel::noiseless(), DEFAULT_SAMPLES, DEFAULT_RATE_KHZ, 0).unwrap();
            for (&u, &v) in s.u_grid.iter().zip(&s.samples) {
                worst = worst.max((v - chi_exact(&ex.distribution, u)).norm());
                points += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: points == 3600 && worst < 1e-9 && secs < 5.0,
        detail: format!("{points} points, max |series - chi| = {worst:.2e} (< 1e-9), {secs:.2} s (< 5 s)"),
    }
}

fn peak_positions() -> Outcome {
    let start = Instant::now();
    let ifms = interferometers();
    let expected = [-3.5, -1.5, 1.5, 3.5];
    let decay = ExperimentConfig::reference().noise_model();
    let decayed = NoiseModel { readout_sigma: 0.0, ..decay };
    let (mut clean, mut damped): (f64, f64) = (0.0, 0.0);
    for ifm in &ifms {
        for beta in &temperatures()[1..] {
            for (noise, worst) in [(NoiseModel::noiseless(), &mut clean), (decayed, &mut damped)] {
                let fit = noiseless_fit(ifm, *beta, &noise);
                for (w, e) in fit.omegas().iter().zip(expected) {
                    *worst = worst.max((w - e).abs());
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: clean < 0.05 && damped < 0.1 && secs < 10.0,
        detail: format!(
            "max |omega - (+-1.5, +-3.5)| noiseless {clean:.2e} kHz (< 0.05), decayed {damped:.2e} kHz (< 0.1), {secs:.2} s (< 10 s)"
        ),
    }
}

fn jarzynski_exactness() -> Outcome {
    let ifm = Interferometer::new(&QuenchProtocol::reference(Direction::Forward));
    let (mut fitted, mut oracle): (f64, f64) = (0.0, 0.0);
    for kt in REFERENCE_KT {
        let b = 1.0 / kt;
        let beta = InverseTemperature::Finite(b);
        let target = (b * delta_f(b)).exp();
        let fit = noiseless_fit(&ifm, beta, &NoiseModel::noiseless());
        fitted = fitted.max((jarzynski_continuation(&fit, b).unwrap() * target - 1.0).abs());
        let ex = ExactStatistics::compute(&QuenchProtocol::reference(Direction::Forward), beta).unwrap();
        oracle = oracle.max((jarzynski_lhs(&ex.distribution, beta).unwrap() * target - 1.0).abs());
    }
    Outcome {
        pass: fitted < 1e-6 && oracle < 1e-10,
        detail: format!("max |<e^-bW> e^(b dF) - 1| fitted {fitted:.2e} (< 1e-6), oracle {oracle:.2e} (< 1e-10)"),
    }
}

fn crooks_recovery() -> Outcome {
    let ifms = interferometers();
    let (mut beta_err, mut df_err): (f64, f64) = (0.0, 0.0);
    for kt in REFERENCE_KT {
        let b = 1.0 / kt;
        let beta = InverseTemperature::Finite(b);
        let d: Vec<_> = ifms
            .iter()
            .map(|ifm| distribution_from_fit(&noiseless_fit(ifm, beta, &NoiseModel::noiseless())).unwrap())
            .collect();
        let c = crooks_fit(&crooks_points(&d[0], &d[1]).unwrap()).unwrap();
        beta_err = beta_err.max((c.beta_est / b - 1.0).abs());
        df_err = df_err.max((c.delta_f_est.unwrap() / delta_f(b) - 1.0).abs());
    }
    let noise = ExperimentConfig::reference().noise_model();
    let mut counts = Vec::new();
    for kt in REFERENCE_KT {
        let b = 1.0 / kt;
        let beta = InverseTemperature::Finite(b);
        let good = (0..100u64)
            .filter(|&seed| {
                let d: Option<Vec<_>> = ifms
                    .iter()
                    .map(|ifm| {
                        let s = sample_series_with(ifm, beta, &noise, DEFAULT_SAMPLES, DEFAULT_RATE_KHZ, seed).ok()?;
                        distribution_from_fit(&fit_series(&s).ok()?).ok()
                    })
                    .collect();
                let Some(d) = d else { return false };
                crooks_points(&d[0], &d[1])
                    .and_then(|p| crooks_fit(&p))
                    .is_ok_and(|c| (c.beta_est / b - 1.0).abs() < 0.02)
            })
            .count();
        counts.push(good);
    }
    Outcome {
        pass: beta_err < 1e-6 && df_err < 1e-6 && counts.iter().all(|&c| c >= 90),
        detail: format!(
            "noiseless rel. error beta {beta_err:.2e}, dF {df_err:.2e} (< 1e-6); noisy seeds with beta within 2% at kT 1.9/3.1/6.0: {}/{}/{} of 100 (>= 90)",
            counts[0], counts[1], counts[2]
        ),
    }
}

fn temperature_estimation() -> Outcome {
    let cases = [(0.07, NU1, 1.93, 2.0, 0.1), (0.25, NU2, 1.82, 1.8, 0.1), (0.16, NU1, 3.02, 3.0, 0.1), (0.34, NU2, 3.01, 3.1, 0.2)];
    let mut pass = true;
    let mut parts = Vec::new();
    for (p1, nu, quoted, centre, tol) in cases {
        let kt = temperature_from_population(p1, nu).unwrap();
        pass &= (kt - centre).abs() <= tol && (kt - quoted).abs() < 0.01;
        parts.push(format!("({p1}, {nu}) -> {kt:.4} in {centre}+-{tol}"));
    }
    Outcome { pass, detail: parts.join("; ") }
}

fn microreversibility() -> Outcome {
    let tables: Vec<TransitionTable> = DIRS
        .iter()
        .map(|&d| ExactStatistics::compute(&QuenchProtocol::reference(d), InverseTemperature::Finite(0.3)).unwrap().table)
        .collect();
    let (f, b) = (&tables[0], &tables[1]);
    let mut micro: f64 = 0.0;
    for n in 0..2 {
        for m in 0..2 {
            micro = micro.max((b.pcond[m][n] - f.pcond[n][m]).abs());
        }
    }
    let symmetry = tables
        .iter()
        .map(|t| (t.pcond[0][0] - t.pcond[1][1]).abs().max((t.pcond[0][1] - t.pcond[1][0]).abs()))
        .fold(0.0, f64::max);
    let mut re: f64 = 0.0;
    for ifm in interferometers() {
        let series: Vec<Vec<C64>> = temperatures()
            .iter()
            .map(|&b| sample_series_with(&ifm, b, &NoiseModel::noiseless(), DEFAULT_SAMPLES, DEFAULT_RATE_KHZ, 0).unwrap().samples)
            .collect();
        for s in &series[1..] {
            for (x, y) in s.iter().zip(&series[0]) {
                re = re.max((x.re - y.re).abs());
            }
        }
    }
    Outcome {
        pass: micro < 1e-10 && symmetry < 1e-10 && re < 1e-9,
        detail: format!(
            "max |pB(n|m) - pF(m|n)| {micro:.2e} (< 1e-10), row symmetry {symmetry:.2e} (< 1e-10), Re spread over 5 temperatures {re:.2e} (< 1e-9)"
        ),
    }
}

fn tomography() -> Outcome {
    let p = QuenchProtocol::reference(Direction::Forward);
    let sweep: Vec<_> = (0..=10).map(|k| analyze(&p, k as f64 / 100.0, 2024).unwrap()).collect();
    let ideal = &sweep[0];
    let procs = [&ideal.forward, &ideal.backward];
    let imag = procs.iter().map(|r| r.metrics.imag_norm).fold(0.0, f64::max);
    let dist = procs.iter().map(|r| r.metrics.worst_case_distance).fold(0.0, f64::max);
    let unital = procs.iter().map(|r| r.metrics.unitality_deviation).fold(0.0, f64::max);
    let monotone = |get: &dyn Fn(&qwork::qpt::QptReport) -> [f64; 2]| {
        sweep.windows(2).all(|w| {
            let (a, b) = (get(&w[0]), get(&w[1]));
            b[0] >= a[0] && b[1] >= a[1]
        })
    };
    let wc = |r: &qwork::qpt::QptReport| [r.forward.metrics.worst_case_distance, r.backward.metrics.worst_case_distance];
    let un = |r: &qwork::qpt::QptReport| [r.forward.metrics.unitality_deviation, r.backward.metrics.unitality_deviation];
    let (m_wc, m_un) = (monotone(&wc), monotone(&un));
    let last = &sweep[10];
    Outcome {
        pass: imag < 1e-9 && dist < 1e-8 && unital < 1e-10 && m_wc && m_un,
        detail: format!(
            "ideal max|Im xi| {imag:.2e} (< 1e-9), worst-case {dist:.2e} (< 1e-8), unitality {unital:.2e} (< 1e-10); \
             rf sweep 0..0.10 monotone worst-case {m_wc} (F/B at 0.10: {:.2e}/{:.2e}), unitality {m_un} (F/B at 0.10: {:.2e}/{:.2e})",
            last.forward.metrics.worst_case_distance,
            last.backward.metrics.worst_case_distance,
            last.forward.metrics.unitality_deviation,
            last.backward.metrics.unitality_deviation
        ),
    }
}

fn dephasing_commutation() -> Outcome {
    let full = NoiseModel { c_dephasing: 1.0, ..NoiseModel::noiseless() };
    let mut worst: f64 = 0.0;
    for ifm in interferometers() {
        let p = *ifm.protocol();
        let clean = PulseSimulator::with_ideal_propagator(&p, &NoiseModel::noiseless(), 0, *ifm.propagator()).unwrap();
        let dephased = PulseSimulator::with_ideal_propagator(&p, &full, 0, *ifm.propagator()).unwrap();
        for u in uniform_grid(DEFAULT_SAMPLES, DEFAULT_RATE_KHZ) {
            let seq = ifm.compile(u).unwrap();
            for beta in temperatures() {
                worst = worst.max((dephased.run(&seq, beta).unwrap() - clean.run(&seq, beta).unwrap()).norm());
            }
        }
    }
    Outcome { pass: worst < 1e-9, detail: format!("max |readout change| at c = 1 over 3600 runs {worst:.2e} (< 1e-9)") }
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            let mut bytes = fs::read(&p).unwrap();
            if name == "manifest.json" {
                let mut m: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                m.as_object_mut().unwrap().remove("stage_ms");
                bytes = serde_json::to_vec(&m).unwrap();
            }
            (name, bytes)
        })
        .collect();
    v.sort();
    v
}

fn full_pipeline() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_qwork");
    let mut times = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let start = Instant::now();
        let mut ok = true;
        for args in [
            vec!["simulate", "--out"],
            vec!["fit", "--run"],
            vec!["verify", "--run"],
            vec!["qpt", "--out"],
            vec!["report", "--run"],
        ] {
            let status = Command::new(bin).args(&args).arg(&out).env_clear().stdout(std::process::Stdio::null()).status().unwrap();
            ok &= status.success();
        }
        times.push(start.elapsed().as_secs_f64());
        if !ok {
            return Outcome { pass: false, detail: format!("a stage failed in run {name}") };
        }
    }
    let (a, b) = (tree(&dir.path().join("a")), tree(&dir.path().join("b")));
    let series = a.iter().filter(|(n, _)| n.starts_with("series_") && n.ends_with(".csv")).count();
    let identical = a == b;
    let slowest = times.iter().cloned().fold(0.0, f64::max);
    Outcome {
        pass: series == 10 && identical && slowest < 60.0,
        detail: format!(
            "{series} series, 1000 MC trials, {slowest:.2} s on {} core(s) (< 60 s), identical trees across two runs: {identical}",
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        ),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("oracle equivalence", oracle_equivalence),
        ("peak positions", peak_positions),
        ("Jarzynski exactness", jarzynski_exactness),
        ("Crooks recovery", crooks_recovery),
        ("temperature estimation", temperature_estimation),
        ("micro-reversibility and unitality", microreversibility),
        ("process tomography", tomography),
        ("dephasing commutation", dephasing_commutation),
        ("full pipeline", full_pipeline),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !report(i + 1, name, run()) {
            failed += 1;
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

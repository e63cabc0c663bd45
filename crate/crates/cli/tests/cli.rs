use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qwork_cli::records::{FitRecord, QptRecord, Status, VerifyRecord};
use qwork_cli::report::ReportRecord;

fn qwork(args: &[&str], env: &[(&str, &str)]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qwork"))
        .args(args)
        .env_clear()
        .envs(env.iter().copied())
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = qwork(args, &[]);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, text).unwrap();
    p
}

const NOISELESS: &str = "[noise]\ngamma_f_per_ms = 0.0\ngamma_b_per_ms = 0.0\nreadout_sigma = 0.0\n";

fn rows(p: &Path) -> Vec<String> {
    fs::read_to_string(p).unwrap().lines().skip(1).map(String::from).collect()
}

fn read<T: serde::de::DeserializeOwned>(p: &Path) -> T {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn default_config_simulate_ten_series_of_360_rows() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    ok(&["simulate", "--out", s(&run)]);
    let series: Vec<_> = fs::read_dir(&run)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().unwrap() == "csv")
        .collect();
    assert_eq!(series.len(), 10);
    for p in &series {
        assert_eq!(rows(p).len(), 360, "{}", p.display());
        assert!(p.with_extension("meta.json").exists());
    }
    let manifest: serde_json::Value = read(&run.join("manifest.json"));
    for a in manifest["artifacts"].as_array().unwrap() {
        assert!(run.join(a.as_str().unwrap()).exists());
    }
    assert!(manifest["stage_ms"]["simulate"].as_f64().unwrap() > 0.0);
}

#[test]
fn two_samples_start_at_the_identity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "samples = 2\ntemperatures = [3.1]\n[noise]\nreadout_sigma = 0.0\n");
    let run = dir.path().join("run");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&run)]);
    let r = rows(&run.join("series_forward_3.1.csv"));
    assert_eq!(r.len(), 2);
    let first: Vec<f64> = r[0].split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(first[0], 0.0);
    assert!((first[1] - 1.0).abs() < 1e-12 && first[2].abs() < 1e-12, "{first:?}");
}

#[test]
fn same_seed_gives_byte_identical_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "samples = 60\ntemperatures = [1.9, \"infinite\"]\nseed = 11\n");
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for run in [&a, &b] {
        ok(&["pipeline", "--config", s(&cfg), "--out", s(run)]);
    }
    ok(&["simulate", "--config", s(&cfg), "--out", s(&c), "--seed", "12"]);
    assert_eq!(tree(&a), tree(&b));
    let ma: serde_json::Value = read(&a.join("manifest.json"));
    let mb: serde_json::Value = read(&b.join("manifest.json"));
    assert_eq!(ma["artifacts"], mb["artifacts"]);
    assert_eq!(ma["config_digest"], mb["config_digest"]);
    let name = "series_forward_1.9.csv";
    assert_ne!(fs::read(a.join(name)).unwrap(), fs::read(c.join(name)).unwrap());
}

#[test]
fn invalid_configs_exit_with_usage_code_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    for (text, field) in [("samples = 1", "samples"), ("[noise]\nrf_sigma = -1.0", "rf_sigma"), ("temprature = 3", "temprature")] {
        let cfg = config(dir.path(), text);
        let out = qwork(&["simulate", "--config", s(&cfg), "--out", s(&dir.path().join("x"))], &[]);
        assert_eq!(out.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&out.stderr).contains(field));
    }
    let out = qwork(&["simulate"], &[]);
    assert_eq!(out.status.code(), Some(2));
    let out = qwork(&["transmogrify"], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn environment_overrides_reach_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = qwork(
        &["simulate"],
        &[("QWORK_OUT", s(&run)), ("QWORK_SAMPLES", "7"), ("QWORK_TEMPERATURES", "[2.0]"), ("QWORK_THREADS", "1")],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(rows(&run.join("series_backward_2.csv")).len(), 7);
}

#[test]
fn fit_noiseless_series() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), &format!("temperatures = [3.1]\n{NOISELESS}"));
    let run = dir.path().join("run");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&run)]);
    let out = dir.path().join("fit.json");
    ok(&["fit", "--series", s(&run.join("series_forward_3.1.csv")), "--out", s(&out)]);
    let rec: FitRecord = read(&out);
    assert!(rec.residual_rms < 1e-8, "{}", rec.residual_rms);
    for (t, w) in rec.tones.iter().zip([-3.5, -1.5, 1.5, 3.5]) {
        assert!((t.omega_khz - w).abs() < 0.05);
    }
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(serde_json::to_string_pretty(&rec).unwrap() + "\n", text);
}

#[test]
fn empty_series_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("empty.csv");
    fs::write(&p, "").unwrap();
    let out = qwork(&["fit", "--series", s(&p), "--out", s(&dir.path().join("f.json"))], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));
    assert!(!dir.path().join("f.json").exists());
}

#[test]
fn truncated_series_still_fits_with_wider_sigmas() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "temperatures = [3.1]\nseed = 5\n");
    let run = dir.path().join("run");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&run)]);
    let full = run.join("series_forward_3.1.csv");
    let short = dir.path().join("short.csv");
    let text = fs::read_to_string(&full).unwrap();
    fs::write(&short, text.lines().take(11).map(|l| format!("{l}\n")).collect::<String>()).unwrap();
    fs::copy(full.with_extension("meta.json"), short.with_extension("meta.json")).unwrap();
    ok(&["fit", "--series", s(&full), "--out", s(&dir.path().join("full.json"))]);
    ok(&["fit", "--series", s(&short), "--out", s(&dir.path().join("short.json"))]);
    let a: FitRecord = read(&dir.path().join("full.json"));
    let b: FitRecord = read(&dir.path().join("short.json"));
    assert_eq!(b.samples, 10);
    for (x, y) in a.tones.iter().zip(&b.tones) {
        assert!(y.sigma_omega_khz > x.sigma_omega_khz, "{} vs {}", y.sigma_omega_khz, x.sigma_omega_khz);
    }
}

fn noiseless_pair(dir: &Path, temperature: &str) -> (PathBuf, PathBuf) {
    let cfg = config(dir, &format!("temperatures = [{temperature}]\n{NOISELESS}"));
    let run = dir.join("run");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&run)]);
    ok(&["fit", "--run", s(&run)]);
    let label = temperature.trim_matches('"');
    (run.join(format!("fit_forward_{label}.json")), run.join(format!("fit_backward_{label}.json")))
}

#[test]
fn verify_noiseless_pair_recovers_beta() {
    let dir = tempfile::tempdir().unwrap();
    let (f, b) = noiseless_pair(dir.path(), "1.9");
    let out = dir.path().join("v/verify.json");
    ok(&["verify", "--forward", s(&f), "--backward", s(&b), "--out", s(&out)]);
    let v: VerifyRecord = read(&out);
    let c = v.crooks.unwrap();
    assert!((c.beta_per_khz * 1.9 - 1.0).abs() < 1e-6, "{}", c.beta_per_khz);
    assert!(v.jarzynski.unwrap().flags.all());
    let csv = fs::read_to_string(dir.path().join("v/crooks_points.csv")).unwrap();
    assert!(csv.starts_with("W_khz,ln_ratio,sigma\n"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn verify_at_infinite_temperature_warns_about_the_slope() {
    let dir = tempfile::tempdir().unwrap();
    let (f, b) = noiseless_pair(dir.path(), "\"infinite\"");
    let out = dir.path().join("verify.json");
    ok(&["verify", "--forward", s(&f), "--backward", s(&b), "--out", s(&out)]);
    let v: VerifyRecord = read(&out);
    let c = v.crooks.unwrap();
    assert!(c.delta_f_khz.is_none());
    assert!(c.warnings.iter().any(|w| w.contains("infinite temperature")), "{:?}", c.warnings);
}

#[test]
fn verify_with_a_missing_backward_fit_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let (f, _) = noiseless_pair(dir.path(), "3.1");
    let out = qwork(
        &["verify", "--forward", s(&f), "--backward", s(&dir.path().join("nope.json")), "--out", s(&dir.path().join("v.json"))],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
}

fn qpt_record(dir: &Path, text: &str) -> QptRecord {
    let cfg = config(dir, text);
    let run = dir.join("qpt");
    ok(&["qpt", "--config", s(&cfg), "--out", s(&run)]);
    read(&run.join("qpt.json"))
}

#[test]
fn qpt_metrics_respond_to_rf_inhomogeneity() {
    let dir = tempfile::tempdir().unwrap();
    let ideal = qpt_record(dir.path(), "");
    let noisy = qpt_record(dir.path(), "[noise]\nrf_sigma = 0.05\n");
    for (i, n) in [(&ideal.forward, &noisy.forward), (&ideal.backward, &noisy.backward)] {
        assert!(i.worst_case_distance < 1e-8 && i.unitality_deviation < 1e-8 && i.imag_norm < 1e-8);
        assert!(n.worst_case_distance > i.worst_case_distance);
    }
    assert!(ideal.microreversibility_deviation < 1e-10);
    assert!(noisy.microreversibility_deviation > ideal.microreversibility_deviation);
}

#[test]
fn qpt_of_a_null_protocol_is_the_identity() {
    let dir = tempfile::tempdir().unwrap();
    let q = qpt_record(dir.path(), "nu1_khz = 1.7\nnu2_khz = 1.7\ntau_ms = 1e-7\n");
    for p in [&q.forward, &q.backward] {
        let mut e00 = [[0.0; 4]; 4];
        e00[0][0] = 1.0;
        for i in 0..4 {
            for j in 0..4 {
                assert!((p.xi_re[i][j] - e00[i][j]).abs() < 1e-5, "{:?}", p.xi_re);
                assert!(p.xi_im[i][j].abs() < 1e-5);
            }
        }
    }
}

#[test]
fn noiseless_report_agrees_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), NOISELESS);
    let run = dir.path().join("run");
    let text = ok(&["pipeline", "--config", s(&cfg), "--out", s(&run)]);
    assert!(text.contains("all consistency flags: yes"));
    let r: ReportRecord = read(&run.join("report.json"));
    assert!(r.all_flags);
    assert_eq!(r.jarzynski.len(), 5);
    let zero = &r.jarzynski[0];
    assert_eq!(zero.status, Status::NotApplicable);
    assert!(zero.flags.is_none() && zero.lhs_continuation.is_none());
    for row in &r.temperatures[1..4] {
        let qwork_cli::config::Temperature::Kt(k) = row.prepared else { panic!() };
        for rec in [row.forward, row.backward] {
            let Some(qwork_cli::config::Temperature::Kt(x)) = rec.kt_khz else { panic!("{rec:?}") };
            assert!((x / k - 1.0).abs() < 1e-6, "{x} vs {k}");
        }
    }
    assert_eq!(fs::read_to_string(run.join("report.txt")).unwrap(), text.trim_end().to_string() + "\n");
}

#[test]
fn partial_run_lists_missing_stages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "temperatures = [3.1]\nsamples = 40\n");
    let run = dir.path().join("run");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&run)]);
    ok(&["fit", "--run", s(&run)]);
    let out = qwork(&["report", "--run", s(&run)], &[]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("verify (verify_3.1.json)") && err.contains("qpt (qpt.json)"), "{err}");
    assert!(!err.contains("simulate ("));
    let out = qwork(&["report", "--run", s(&dir.path().join("nothing"))], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing stages"));
}

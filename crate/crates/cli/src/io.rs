//! Atomic file output and the series CSV format.

use std::fs;
use std::io::Write;
use std::path::Path;

use qwork::interferometer::MagnetizationSeries;
use qwork::qcore::C64;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, Context, Result};

pub const SERIES_HEADER: [&str; 3] = ["u_ms", "re", "im"];

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let name = path.file_name().ok_or_else(|| CliError::Usage(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| CliError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("records serialize");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::schema(path, e.to_string()))
}

fn number(x: f64) -> String {
    format!("{x:.16e}")
}

/// `u_ms,re,im` with 17 significant digits and `\n` line ends.
pub fn series_csv(series: &MagnetizationSeries) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(SERIES_HEADER).expect("in-memory write");
    for (u, s) in series.u_grid.iter().zip(&series.samples) {
        w.write_record([number(*u), number(s.re), number(s.im)]).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn write_series(path: &Path, series: &MagnetizationSeries) -> Result<()> {
    write_atomic(path, &series_csv(series))
}

pub fn read_series(path: &Path) -> Result<MagnetizationSeries> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.iter().all(|b| b.is_ascii_whitespace()) {
        return Err(CliError::schema(path, "empty file; expected header u_ms,re,im"));
    }
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes.as_slice());
    let header = r.headers().map_err(|e| CliError::schema(path, e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != SERIES_HEADER {
        return Err(CliError::schema(
            path,
            format!("header is `{}`, expected `u_ms,re,im`", header.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let (mut grid, mut samples) = (Vec::new(), Vec::new());
    for (k, rec) in r.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| CliError::schema(path, format!("line {line}: {e}")))?;
        let field = |i: usize| -> Result<f64> {
            let v: f64 = rec[i]
                .trim()
                .parse()
                .map_err(|_| CliError::schema(path, format!("line {line}: `{}` is not a number", &rec[i])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(CliError::schema(path, format!("line {line}: non-finite value")))
            }
        };
        grid.push(field(0)?);
        samples.push(C64::new(field(1)?, field(2)?));
    }
    if grid.len() < 2 {
        return Err(CliError::schema(path, format!("{} data row(s); at least 2 required", grid.len())));
    }
    MagnetizationSeries::new(grid, samples).context(|| format!("{}", path.display()))
}

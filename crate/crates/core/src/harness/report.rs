//! CSV and JSON output of sweep results.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use super::cdf::CdfTable;
use super::sweep::SweepResult;

pub const CSV_HEADER: &str = "frequency_hz,mse_ls,mse_lmmse,mse_sage,crlb_mean,crlb_simplified,eta_mc,eta_approx,se_bits,ser";
pub const CDF_HEADER: &str = "value,cdf";

fn field(out: &mut String, value: Option<f64>) {
    out.push(',');
    if let Some(v) = value {
        write!(out, "{v:e}").expect("writing to a String cannot fail");
    }
}

/// Main results table; missing values are empty fields.
pub fn render_csv(result: &SweepResult) -> String {
    let mut out = String::with_capacity(64 * (result.rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &result.rows {
        write!(out, "{:e}", r.frequency).expect("writing to a String cannot fail");
        for v in [
            r.mse_ls,
            r.mse_lmmse,
            r.mse_sage,
            r.crlb_mean,
            r.crlb_simplified,
            r.eta_mc,
            r.eta_approx,
            r.se_bits,
            r.ser,
        ] {
            field(&mut out, v);
        }
        out.push('\n');
    }
    out
}

pub fn render_cdf(table: &CdfTable) -> String {
    let mut out = String::from(CDF_HEADER);
    out.push('\n');
    for (v, c) in table.values.iter().zip(&table.cdf) {
        writeln!(out, "{v:e},{c:e}").expect("writing to a String cannot fail");
    }
    out
}

/// Writes the results table to `path` and every CDF table next to it as
/// `<stem>_cdf_<name>_f<index>.csv`. Returns the CDF file paths.
pub fn write_report(result: &SweepResult, path: &Path) -> io::Result<Vec<PathBuf>> {
    fs::write(path, render_csv(result))?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into());
    let dir = path.parent().unwrap_or(Path::new(""));
    let mut written = Vec::with_capacity(result.cdfs.len());
    for c in &result.cdfs {
        let index = result
            .rows
            .iter()
            .position(|r| r.frequency == c.frequency)
            .unwrap_or(0);
        let file = dir.join(format!("{stem}_cdf_{}_f{index:03}.csv", c.name));
        fs::write(&file, render_cdf(&c.table))?;
        written.push(file);
    }
    Ok(written)
}

/// Stores the full result for later re-rendering.
pub fn write_results(result: &SweepResult, path: &Path) -> io::Result<()> {
    let text = serde_json::to_string_pretty(result).map_err(io::Error::other)?;
    fs::write(path, text + "\n")
}

pub fn read_results(path: &Path) -> io::Result<SweepResult> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

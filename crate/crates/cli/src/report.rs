//! Report envelope, fixed-width tables and CSV rows.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use streamap::{Error, EvalReport, Result};

use crate::config::RunConfig;

#[derive(Debug, Serialize)]
pub struct Report<'a, T: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub config: &'a RunConfig,
    pub warnings: &'a [String],
    pub result: T,
}

/// One table line: a label plus the six AP columns.
#[derive(Debug, Clone, Serialize)]
pub struct Row {
    pub label: String,
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ap_small: Option<f64>,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
}

impl Row {
    pub fn new(label: impl Into<String>, r: &EvalReport) -> Self {
        Row {
            label: label.into(),
            ap: r.ap,
            ap50: r.ap50,
            ap75: r.ap75,
            ap_small: r.ap_small,
            ap_medium: r.ap_medium,
            ap_large: r.ap_large,
        }
    }

    /// A row carrying only the headline value.
    pub fn headline(label: impl Into<String>, ap: Option<f64>) -> Self {
        Row {
            label: label.into(),
            ap,
            ap50: None,
            ap75: None,
            ap_small: None,
            ap_medium: None,
            ap_large: None,
        }
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.1}", 100.0 * v))
}

/// AP columns in percent, `-` where undefined.
pub fn table(headline: &str, rows: &[Row]) -> String {
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(8);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}",
        "", headline, "AP50", "AP75", "APs", "APm", "APl"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}",
            r.label,
            cell(r.ap),
            cell(r.ap50),
            cell(r.ap75),
            cell(r.ap_small),
            cell(r.ap_medium),
            cell(r.ap_large)
        );
    }
    out
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_csv(path: &Path, rows: &[Row]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => io_error(path, io),
        other => Error::Validation(format!("{}: {other:?}", path.display())),
    })?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Validation(format!("cannot serialize report: {e}")))?;
    text.push('\n');
    if path == Path::new("-") {
        std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| io_error(path, e))
    } else {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        }
        fs::write(path, text).map_err(|e| io_error(path, e))
    }
}

/// What a subcommand hands back to `main`.
pub struct Outcome {
    pub json: serde_json::Value,
    /// Human-readable summary.
    pub table: String,
    /// CSV rows, if the command produces AP rows.
    pub rows: Vec<Row>,
    /// Set when the headline metric could not be computed.
    pub undefined: bool,
    pub output: PathBuf,
    pub csv: Option<PathBuf>,
}

impl Outcome {
    pub fn emit(&self) -> Result<()> {
        write_json(&self.output, &self.json)?;
        if let Some(path) = &self.csv {
            write_csv(path, &self.rows)?;
        }
        if self.output == Path::new("-") {
            eprint!("{}", self.table);
        } else {
            print!("{}", self.table);
        }
        Ok(())
    }
}

//! Report bundle, content hashing and the json / csv / md emitters.

use parabola_core::schrodinger::ExponentFit;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// One measured quantity, laid out as `(R, p, measured, predicted, ratio)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub example: String,
    pub quantity: String,
    pub r: u64,
    pub p: Option<f64>,
    pub measured: f64,
    pub predicted: Option<f64>,
    /// `measured / predicted`.
    pub ratio: Option<f64>,
}

impl Row {
    pub fn new(example: &str, quantity: &str, r: u64, p: Option<f64>, measured: f64, predicted: Option<f64>) -> Row {
        let ratio = predicted.filter(|v| *v != 0.0).map(|v| measured / v);
        Row { example: example.into(), quantity: quantity.into(), r, p, measured, predicted, ratio }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CriterionResult {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        CriterionResult { name: name.into(), passed, detail: detail.into() }
    }

    /// `PASS name: detail` or `FAIL name: detail`.
    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub experiment: String,
    pub config: ExperimentConfig,
    pub rows: Vec<Row>,
    pub fits: Vec<ExponentFit>,
    pub criteria: Vec<CriterionResult>,
    pub notes: Vec<String>,
    pub memory_estimate_bytes: u64,
    /// Wall-clock time; omitted in deterministic mode.
    pub elapsed_ms: Option<u64>,
    /// SHA-256 of the JSON report with this field empty.
    pub content_hash: String,
}

impl Report {
    pub fn new(config: &ExperimentConfig) -> Report {
        Report {
            schema_version: SCHEMA_VERSION,
            experiment: config.experiment.name().into(),
            config: config.clone(),
            rows: Vec::new(),
            fits: Vec::new(),
            criteria: Vec::new(),
            notes: Vec::new(),
            memory_estimate_bytes: 0,
            elapsed_ms: None,
            content_hash: String::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }

    pub fn compute_hash(&self) -> String {
        let mut copy = self.clone();
        copy.content_hash.clear();
        let bytes = serde_json::to_vec(&copy).expect("report serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn seal(&mut self) {
        self.content_hash = self.compute_hash();
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Report> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("bad report: {e}")))
    }

    pub fn rows_csv(&self) -> String {
        let mut out = String::from("example,quantity,R,p,measured,predicted,ratio\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{:e},{},{}",
                r.example,
                r.quantity,
                r.r,
                r.p.map(|p| p.to_string()).unwrap_or_default(),
                r.measured,
                opt(r.predicted),
                opt(r.ratio)
            );
        }
        out
    }

    pub fn fits_csv(&self) -> String {
        let mut out = String::from("name,family,p,slope,residual,prediction,comparison,band,passes,flagged\n");
        for f in &self.fits {
            let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.6},{:?},{},{},{}",
                f.name,
                f.family,
                f.p,
                opt(f.slope),
                opt(f.residual),
                f.prediction,
                f.comparison,
                f.band,
                f.passes,
                f.flagged.as_deref().unwrap_or("")
            );
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {}\n", self.experiment);
        let _ = writeln!(out, "schema {} | sha256 {}\n", self.schema_version, self.content_hash);
        let _ = writeln!(out, "| example | quantity | R | p | measured | predicted | ratio |");
        let _ = writeln!(out, "|---|---|---|---|---|---|---|");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4e}")).unwrap_or_else(|| "-".into());
        for r in &self.rows {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {:.4e} | {} | {} |",
                r.example,
                r.quantity,
                r.r,
                r.p.map(|p| p.to_string()).unwrap_or_else(|| "-".into()),
                r.measured,
                opt(r.predicted),
                opt(r.ratio)
            );
        }
        let _ = writeln!(out, "\n| fit | family | p | slope | predicted | band | pass |");
        let _ = writeln!(out, "|---|---|---|---|---|---|---|");
        for f in &self.fits {
            let slope = f.slope.map(|s| format!("{s:.4}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {:.4} | {:?} {} | {} |",
                f.name, f.family, f.p, slope, f.prediction, f.comparison, f.band, f.passes
            );
        }
        if !self.criteria.is_empty() {
            out.push('\n');
            for c in &self.criteria {
                let _ = writeln!(out, "- {}", c.line());
            }
        }
        for n in &self.notes {
            let _ = writeln!(out, "\n> {n}");
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
    Md,
}

impl std::str::FromStr for Format {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "md" => Ok(Format::Md),
            _ => Err(CliError::Config(format!("unknown format `{s}`"))),
        }
    }
}

/// A finished run: the report plus experiment-specific CSV sidecars.
#[derive(Clone, Debug)]
pub struct Bundle {
    pub report: Report,
    pub sidecars: Vec<(String, String)>,
}

/// Writes the report in each format (plus sidecars with csv) and returns the paths written.
pub fn emit(bundle: &Bundle, formats: &[Format], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let stem = bundle.report.experiment.clone();
    let mut written = Vec::new();
    let mut put = |name: String, body: &str| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
        Ok(())
    };
    for f in formats {
        match f {
            Format::Json => put(format!("{stem}.json"), &bundle.report.to_json())?,
            Format::Md => put(format!("{stem}.md"), &bundle.report.to_markdown())?,
            Format::Csv => {
                put(format!("{stem}.csv"), &bundle.report.rows_csv())?;
                put(format!("{stem}_fits.csv"), &bundle.report.fits_csv())?;
                for (name, body) in &bundle.sidecars {
                    put(format!("{stem}_{name}.csv"), body)?;
                }
            }
        }
    }
    Ok(written)
}

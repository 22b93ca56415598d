//! Plain-text `key = value` experiment configuration.

use serde::{Deserialize, Serialize};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    KappaScan,
    SquareVerify,
    EnvelopeVerify,
    BroadNarrow,
    Bilinear,
    SchrodingerFls,
    Certificates,
    ExamplesSuite,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::KappaScan,
        Experiment::SquareVerify,
        Experiment::EnvelopeVerify,
        Experiment::BroadNarrow,
        Experiment::Bilinear,
        Experiment::SchrodingerFls,
        Experiment::Certificates,
        Experiment::ExamplesSuite,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::KappaScan => "kappa-scan",
            Experiment::SquareVerify => "square-verify",
            Experiment::EnvelopeVerify => "envelope-verify",
            Experiment::BroadNarrow => "broad-narrow",
            Experiment::Bilinear => "bilinear",
            Experiment::SchrodingerFls => "schrodinger-fls",
            Experiment::Certificates => "certificates",
            Experiment::ExamplesSuite => "examples-suite",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s.trim())
            .ok_or_else(|| CliError::Config(format!("unknown experiment `{}`", s.trim())))
    }
}

/// Fully resolved run configuration. Every field has a per-experiment default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub r: Vec<u64>,
    pub p: Vec<f64>,
    /// Branching factors of the cap tree.
    pub k: Vec<u64>,
    pub family: String,
    pub kappa: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub c: Option<f64>,
    pub lambda: Option<f64>,
    pub seed: u64,
    /// Random fields or pairs per grid.
    pub trials: usize,
    /// Sample points per field.
    pub points: usize,
    /// Separation threshold in units of `K^{-1}|tau|`.
    pub threshold: f64,
    /// Slope tolerance of exponent fits.
    pub tolerance: f64,
    /// Atom spacing of unit-scale measures.
    pub resolution: f64,
    /// Exact certificates up to this `R`.
    pub exact_max_r: u64,
    pub memory_cap_mb: u64,
    pub deterministic: bool,
    pub out: String,
}

const KEYS: [&str; 20] = [
    "experiment",
    "R",
    "p",
    "K",
    "family",
    "kappa",
    "alpha",
    "beta",
    "c",
    "lambda",
    "seed",
    "trials",
    "points",
    "threshold",
    "tolerance",
    "resolution",
    "exact_max_r",
    "memory_cap_mb",
    "deterministic",
    "out",
];

impl ExperimentConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        let base = ExperimentConfig {
            experiment,
            r: vec![64, 256, 1024],
            p: vec![2.0, 3.0, 4.0],
            k: vec![4],
            family: "all".into(),
            kappa: None,
            alpha: None,
            beta: None,
            c: None,
            lambda: None,
            seed: 7,
            trials: 20,
            points: 10_000,
            threshold: 1.0,
            tolerance: 0.1,
            resolution: 1.0 / 32.0,
            exact_max_r: 64,
            memory_cap_mb: 8192,
            deterministic: true,
            out: "reports".into(),
        };
        match experiment {
            Experiment::KappaScan => ExperimentConfig { family: "ball".into(), ..base },
            Experiment::BroadNarrow => ExperimentConfig { r: vec![64, 256], family: "random".into(), threshold: 0.5, ..base },
            Experiment::Bilinear => {
                ExperimentConfig { r: vec![64, 256], k: vec![2, 4], family: "mixed".into(), trials: 100, ..base }
            }
            Experiment::SchrodingerFls => ExperimentConfig { r: vec![256, 1024, 4096], family: "chirp".into(), ..base },
            Experiment::Certificates => ExperimentConfig { r: vec![64, 256], ..base },
            Experiment::ExamplesSuite => ExperimentConfig { r: vec![64, 256], family: "paper".into(), ..base },
            _ => base,
        }
    }

    /// Parses `key = value` lines. `#` starts a comment; the experiment key is required.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", no + 1)))?;
            let k = k.trim();
            if !KEYS.contains(&k) {
                return Err(CliError::Config(format!("line {}: unknown key `{k}`", no + 1)));
            }
            if pairs.iter().any(|(p, _)| p == k) {
                return Err(CliError::Config(format!("line {}: duplicate key `{k}`", no + 1)));
            }
            pairs.push((k.to_string(), v.trim().to_string()));
        }
        let exp = pairs
            .iter()
            .find(|(k, _)| k == "experiment")
            .ok_or_else(|| CliError::Config("missing `experiment` key".into()))?
            .1
            .parse()?;
        let mut cfg = ExperimentConfig::defaults(exp);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let opt = |v: &str| -> Result<Option<f64>> {
            if v.is_empty() || v == "none" {
                Ok(None)
            } else {
                parse_f64(v).map(Some)
            }
        };
        match key {
            "experiment" => {
                let e: Experiment = v.parse()?;
                if e != self.experiment {
                    return Err(CliError::Config(format!("experiment is already `{}`", self.experiment)));
                }
            }
            "R" => self.r = parse_list(v, parse_u64)?,
            "p" => self.p = parse_list(v, parse_f64)?,
            "K" => self.k = parse_list(v, parse_u64)?,
            "family" => self.family = v.to_string(),
            "kappa" => self.kappa = opt(v)?,
            "alpha" => self.alpha = opt(v)?,
            "beta" => self.beta = opt(v)?,
            "c" => self.c = opt(v)?,
            "lambda" => self.lambda = opt(v)?,
            "seed" => self.seed = parse_u64(v)?,
            "trials" => self.trials = parse_u64(v)? as usize,
            "points" => self.points = parse_u64(v)? as usize,
            "threshold" => self.threshold = parse_f64(v)?,
            "tolerance" => self.tolerance = parse_f64(v)?,
            "resolution" => self.resolution = parse_f64(v)?,
            "exact_max_r" => self.exact_max_r = parse_u64(v)?,
            "memory_cap_mb" => self.memory_cap_mb = parse_u64(v)?,
            "deterministic" => {
                self.deterministic = match v {
                    "true" | "1" | "yes" => true,
                    "false" | "0" | "no" => false,
                    _ => return Err(CliError::Config(format!("`{v}` is not a boolean"))),
                }
            }
            "out" => self.out = v.to_string(),
            _ => return Err(CliError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.r.is_empty() || self.p.is_empty() || self.k.is_empty() {
            return Err(CliError::Config("R, p and K must be non-empty".into()));
        }
        if self.p.iter().any(|p| !(p.is_finite() && *p >= 1.0)) {
            return Err(CliError::Config(format!("p values {:?} must be at least 1", self.p)));
        }
        if self.k.iter().any(|&k| k < 2) {
            return Err(CliError::Config(format!("K values {:?} must be at least 2", self.k)));
        }
        if !(self.tolerance > 0.0 && self.threshold >= 0.0 && self.resolution > 0.0 && self.resolution <= 1.0) {
            return Err(CliError::Config("tolerance, threshold or resolution out of range".into()));
        }
        Ok(())
    }

    /// Canonical text form: every key in a fixed order, unset options omitted.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let list = |v: &[String]| v.join(", ");
        let _ = writeln!(out, "experiment = {}", self.experiment);
        let _ = writeln!(out, "R = {}", list(&self.r.iter().map(|v| v.to_string()).collect::<Vec<_>>()));
        let _ = writeln!(out, "p = {}", list(&self.p.iter().map(|v| v.to_string()).collect::<Vec<_>>()));
        let _ = writeln!(out, "K = {}", list(&self.k.iter().map(|v| v.to_string()).collect::<Vec<_>>()));
        let _ = writeln!(out, "family = {}", self.family);
        for (k, v) in [("kappa", self.kappa), ("alpha", self.alpha), ("beta", self.beta), ("c", self.c), ("lambda", self.lambda)] {
            if let Some(v) = v {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "trials = {}", self.trials);
        let _ = writeln!(out, "points = {}", self.points);
        let _ = writeln!(out, "threshold = {}", self.threshold);
        let _ = writeln!(out, "tolerance = {}", self.tolerance);
        let _ = writeln!(out, "resolution = {}", self.resolution);
        let _ = writeln!(out, "exact_max_r = {}", self.exact_max_r);
        let _ = writeln!(out, "memory_cap_mb = {}", self.memory_cap_mb);
        let _ = writeln!(out, "deterministic = {}", self.deterministic);
        let _ = writeln!(out, "out = {}", self.out);
        out
    }
}

/// Decimal or `a/b`.
pub fn parse_f64(s: &str) -> Result<f64> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let (a, b): (f64, f64) = (a.trim().parse().map_err(|_| bad(s))?, b.trim().parse().map_err(|_| bad(s))?);
            a / b
        }
        None => s.parse().map_err(|_| bad(s))?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad(s))
    }
}

fn parse_u64(s: &str) -> Result<u64> {
    s.trim().parse().map_err(|_| bad(s))
}

fn bad(s: &str) -> CliError {
    CliError::Config(format!("cannot parse `{s}`"))
}

fn parse_list<T>(s: &str, item: fn(&str) -> Result<T>) -> Result<Vec<T>> {
    s.split(',').filter(|t| !t.trim().is_empty()).map(item).collect()
}

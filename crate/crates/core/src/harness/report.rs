//! Experiment reports and their on-disk form.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::RateFit;

/// One row of `series.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub grid_value: f64,
    pub time: f64,
    pub estimate: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
    pub min_r2: f64,
}

impl Window {
    pub fn contains(&self, fit: &RateFit, value: f64) -> bool {
        value >= self.lo && value <= self.hi && fit.r2 >= self.min_r2
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold, pass: value <= threshold }
    }

    pub fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold, pass: value >= threshold }
    }

    pub fn flag(name: impl Into<String>, ok: bool) -> Self {
        let v = if ok { 1.0 } else { 0.0 };
        Self { name: name.into(), value: v, threshold: 1.0, pass: ok }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    /// Resolved configuration, defaults filled in.
    pub config: ExperimentConfig,
    pub seed: u64,
    pub version: String,
    pub points: Vec<SeriesPoint>,
    pub fit: Option<RateFit>,
    pub window: Option<Window>,
    pub checks: Vec<Check>,
    /// Experiment-specific extras (λ*, blow-up flags, adaptive statistics).
    pub details: serde_json::Value,
    pub pass: bool,
    pub wall_clock_seconds: f64,
}

impl ExperimentReport {
    pub fn new(experiment: &str, config: ExperimentConfig, seed: u64) -> Self {
        Self {
            experiment: experiment.into(),
            config,
            seed,
            version: env!("CARGO_PKG_VERSION").into(),
            points: Vec::new(),
            fit: None,
            window: None,
            checks: Vec::new(),
            details: serde_json::Value::Null,
            pass: false,
            wall_clock_seconds: 0.0,
        }
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Sets `pass` from the checks.
    pub fn finish(&mut self) {
        self.pass = !self.checks.is_empty() && self.checks.iter().all(|c| c.pass);
    }

    pub fn series_csv(&self) -> String {
        let mut s = String::from("grid_value,time,estimate,stderr\n");
        for p in &self.points {
            // `{}` on f64 prints the shortest round-tripping form.
            let _ = writeln!(s, "{},{},{},{}", p.grid_value, p.time, p.estimate, p.stderr);
        }
        s
    }

    /// Writes `series.csv` and `report.json` into `dir`, creating it.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("series.csv"), self.series_csv())?;
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join("report.json"), json)?;
        Ok(())
    }
}

pub fn parse_series_csv(text: &str) -> Result<Vec<SeriesPoint>> {
    let mut lines = text.lines();
    if lines.next() != Some("grid_value,time,estimate,stderr") {
        return Err(Error::InvalidState("series.csv: unexpected header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let v: Vec<f64> = l
                .split(',')
                .map(|x| x.parse::<f64>().map_err(|e| Error::InvalidState(format!("series.csv: {e}"))))
                .collect::<Result<_>>()?;
            match v[..] {
                [grid_value, time, estimate, stderr] => Ok(SeriesPoint { grid_value, time, estimate, stderr }),
                _ => Err(Error::InvalidState(format!("series.csv: bad row {l:?}"))),
            }
        })
        .collect()
}

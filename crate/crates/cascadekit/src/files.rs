//! JSON and CSV files other than the record dumps.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use cascadekit_core::calibration::{Temperature, TemperatureSet};
use cascadekit_core::metrics::ReliabilityBin;
use cascadekit_core::thresholds::SweepPoint;
use cascadekit_core::{CascadeDecision, ModelLadder};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Pretty JSON with a trailing newline. Field order follows the type, so equal
/// values always produce equal bytes.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::file(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json(value))
}

pub fn read_ladder(path: &Path) -> Result<ModelLadder> {
    read_json(path)
}

pub fn read_temperatures(path: &Path) -> Result<TemperatureSet> {
    let fitted: Vec<Temperature> = read_json(path)?;
    Ok(TemperatureSet::from_fitted(&fitted))
}

/// One decision per line, in dataset order.
pub fn traces_jsonl(decisions: &[CascadeDecision]) -> String {
    let mut out = String::new();
    for d in decisions {
        out.push_str(&serde_json::to_string(d).expect("serializable"));
        out.push('\n');
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `lambda,speedup,accuracy,mean_cost,exit_0..exit_{n-1}`.
pub fn sweep_csv(points: &[SweepPoint], num_stages: usize) -> String {
    let mut out = String::from("lambda,speedup,accuracy,mean_cost");
    for i in 0..num_stages {
        write!(out, ",exit_{i}").unwrap();
    }
    out.push('\n');
    for p in points {
        write!(out, "{},{},{},{}", p.lambda, p.speedup, opt(p.accuracy), p.mean_cost).unwrap();
        for c in &p.exit_histogram {
            write!(out, ",{c}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// `lower,upper,count,mean_conf,acc`; empty bins leave the last two blank.
pub fn bins_csv(bins: &[ReliabilityBin]) -> String {
    let mut out = String::from("lower,upper,count,mean_conf,acc\n");
    for b in bins {
        writeln!(
            out,
            "{},{},{},{},{}",
            b.lower,
            b.upper,
            b.count,
            opt(b.mean_confidence),
            opt(b.accuracy)
        )
        .unwrap();
    }
    out
}

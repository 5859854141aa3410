//! One-parameter sweeps over an experiment config.

use std::fmt::Write as _;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::experiment::{run_experiment, ResultsRecord};
use super::report::{aggregate, emit_report, result_rows};
use crate::{Error, Result};

/// Short names accepted in place of full dotted paths.
const ALIASES: [(&str, &str); 6] = [
    ("k", "clustering.k"),
    ("steps", "training.steps"),
    ("inner_lr", "training.inner_lr"),
    ("outer_lr", "training.outer_lr"),
    ("shots", "meta_test.shots"),
    ("conv_width", "network.conv_width"),
];

fn parse_value(raw: &str) -> toml::Value {
    let raw = raw.trim();
    if let Ok(i) = raw.parse::<i64>() {
        toml::Value::Integer(i)
    } else if let Ok(f) = raw.parse::<f64>() {
        toml::Value::Float(f)
    } else if let Ok(b) = raw.parse::<bool>() {
        toml::Value::Boolean(b)
    } else {
        toml::Value::String(raw.to_string())
    }
}

/// Returns a copy of `config` with the dotted `key` set to `raw`.
pub fn apply_override(config: &ExperimentConfig, key: &str, raw: &str) -> Result<ExperimentConfig> {
    let path = ALIASES.iter().find(|(a, _)| *a == key).map_or(key, |(_, p)| p);
    let mut root = toml::Value::try_from(config).map_err(|e| Error::Config(e.to_string()))?;
    let parts: Vec<&str> = path.split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut node = &mut root;
    for p in parents {
        node = node
            .get_mut(*p)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{path}`")))?;
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("`{path}` is not inside a table")))?;
    let mut value = parse_value(raw);
    if let (Some(toml::Value::Float(_)), toml::Value::Integer(i)) = (table.get(*last), &value) {
        value = toml::Value::Float(*i as f64);
    }
    table.insert(last.to_string(), value);
    let text = toml::to_string(&root).map_err(|e| Error::Config(e.to_string()))?;
    let out = ExperimentConfig::from_toml(&text).map_err(|e| Error::Config(format!("`{path}` = {raw}: {e}")))?;
    out.validate()?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: String,
    pub variant: String,
    pub final_mean: Option<f64>,
    pub failures: usize,
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub param: String,
    pub points: Vec<SweepPoint>,
}

impl SweepRecord {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{},variant,final_accuracy,failures,best\n", self.param);
        for p in &self.points {
            let acc = p.final_mean.map_or(String::from("nan"), |a| a.to_string());
            let _ = writeln!(s, "{},{},{acc},{},{}", p.value, p.variant, p.failures, p.best);
        }
        s
    }
}

/// Runs the experiment once per value, each into `<out>/<param>=<value>`,
/// and marks the value with the best mean final accuracy per variant.
/// Ties go to the earlier value.
pub fn run_sweep(config: &ExperimentConfig, param: &str, values: &[String]) -> Result<SweepRecord> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let base = config.output.dir.clone();
    let configs = values
        .iter()
        .map(|v| {
            let mut c = apply_override(config, param, v)?;
            c.output.dir = base.join(format!("{param}={}", v.trim()));
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut points = Vec::new();
    for (value, cfg) in values.iter().zip(&configs) {
        info!("sweep {param} = {value}");
        let record: ResultsRecord = run_experiment(cfg)?;
        emit_report(&record, &cfg.output.dir)?;
        let series = aggregate(&result_rows(&record));
        for v in cfg.variants() {
            points.push(SweepPoint {
                value: value.trim().to_string(),
                final_mean: series.iter().find(|s| s.variant == v.name).and_then(|s| s.final_mean()),
                failures: record.failures().filter(|r| r.variant == v.name).count(),
                variant: v.name,
                best: false,
            });
        }
    }
    let variants: Vec<String> = config.variants().into_iter().map(|v| v.name).collect();
    for name in variants {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate().filter(|(_, p)| p.variant == name) {
            if let Some(a) = p.final_mean {
                if best.is_none_or(|(_, b)| a > b) {
                    best = Some((i, a));
                }
            }
        }
        if let Some((i, _)) = best {
            points[i].best = true;
        }
    }
    let record = SweepRecord {
        param: param.to_string(),
        points,
    };
    write_sweep(&record, &base)?;
    Ok(record)
}

fn write_sweep(record: &SweepRecord, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("sweep.csv");
    std::fs::write(&path, record.to_csv()).map_err(|e| Error::io(&path, e))
}

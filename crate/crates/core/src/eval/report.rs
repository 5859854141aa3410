//! CSV tables and plots derived from a finished experiment.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::experiment::ResultsRecord;
use super::protocol::AccuracyCurve;
use crate::{Error, Result};

pub const RESULTS_HEADER: &str = "variant,k,seed,num_classes,accuracy";

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub variant: String,
    pub k: usize,
    pub seed: u64,
    pub num_classes: usize,
    pub accuracy: f64,
}

/// Per-variant mean and spread over seeds at each class count.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantSeries {
    pub variant: String,
    /// `(num_classes, mean, min, max)`
    pub points: Vec<(usize, f64, f64, f64)>,
}

impl VariantSeries {
    pub fn final_mean(&self) -> Option<f64> {
        self.points.last().map(|p| p.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub results_csv: PathBuf,
    pub timing_csv: PathBuf,
    pub plot: PathBuf,
    pub ood_csv: Option<PathBuf>,
}

fn rows_of<'a>(record: &'a ResultsRecord, pick: impl Fn(&'a super::RunRecord) -> Option<&'a AccuracyCurve>) -> Vec<ResultRow> {
    let mut rows = Vec::new();
    for run in &record.runs {
        if let Some(curve) = pick(run) {
            for p in &curve.points {
                rows.push(ResultRow {
                    variant: run.variant.clone(),
                    k: run.k,
                    seed: run.seed,
                    num_classes: p.num_classes,
                    accuracy: p.accuracy,
                });
            }
        }
    }
    rows
}

pub fn result_rows(record: &ResultsRecord) -> Vec<ResultRow> {
    rows_of(record, |r| r.curve.as_ref())
}

/// Rows are written in record order; `{}` on f64 prints the shortest
/// string that parses back to the same value.
pub fn rows_to_csv(rows: &[ResultRow]) -> String {
    let mut s = String::from(RESULTS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.variant, r.k, r.seed, r.num_classes, r.accuracy);
    }
    s
}

pub fn read_results_csv(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_results_csv(&text)
}

pub fn parse_results_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(RESULTS_HEADER) {
        return Err(Error::Format(format!("results table must start with `{RESULTS_HEADER}`")));
    }
    let bad = |n: usize, what: &str| Error::Format(format!("results line {}: bad {what}", n + 2));
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(n, "field count"));
            }
            Ok(ResultRow {
                variant: f[0].to_string(),
                k: f[1].parse().map_err(|_| bad(n, "k"))?,
                seed: f[2].parse().map_err(|_| bad(n, "seed"))?,
                num_classes: f[3].parse().map_err(|_| bad(n, "num_classes"))?,
                accuracy: f[4].parse().map_err(|_| bad(n, "accuracy"))?,
            })
        })
        .collect()
}

/// Groups rows by variant (first-appearance order) and class count.
pub fn aggregate(rows: &[ResultRow]) -> Vec<VariantSeries> {
    let mut order: Vec<String> = Vec::new();
    let mut by: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for r in rows {
        let vi = match order.iter().position(|v| *v == r.variant) {
            Some(i) => i,
            None => {
                order.push(r.variant.clone());
                order.len() - 1
            }
        };
        by.entry((vi, r.num_classes)).or_default().push(r.accuracy);
    }
    order
        .into_iter()
        .enumerate()
        .map(|(vi, variant)| {
            let points = by
                .range((vi, 0)..=(vi, usize::MAX))
                .map(|(&(_, n), accs)| {
                    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
                    let min = accs.iter().copied().fold(f64::INFINITY, f64::min);
                    let max = accs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    (n, mean, min, max)
                })
                .collect();
            VariantSeries { variant, points }
        })
        .collect()
}

fn timing_csv(record: &ResultsRecord) -> String {
    let mut per: Vec<(String, Vec<f64>)> = Vec::new();
    for run in record.runs.iter().filter(|r| r.error.is_none()) {
        match per.iter_mut().find(|(v, _)| *v == run.variant) {
            Some((_, xs)) => xs.push(run.step_ms_mean),
            None => per.push((run.variant.clone(), vec![run.step_ms_mean])),
        }
    }
    let mut s = String::from("variant,step_ms_mean\n");
    for (v, xs) in per {
        let _ = writeln!(s, "{v},{:.4}", xs.iter().sum::<f64>() / xs.len() as f64);
    }
    s
}

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

/// Mean accuracy per variant with a shaded min-max band over seeds.
pub fn plot_series(series: &[VariantSeries], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let max_n = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .max()
        .unwrap_or(1)
        .max(2);
    let err = |e: &dyn std::fmt::Display| Error::Format(format!("plot {}: {e}", path.display()));
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(1f64..max_n as f64, 0f64..1f64)
        .map_err(|e| err(&e))?;
    chart
        .configure_mesh()
        .x_desc("classes learned")
        .y_desc("accuracy")
        .draw()
        .map_err(|e| err(&e))?;
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut band: Vec<(f64, f64)> = s.points.iter().map(|p| (p.0 as f64, p.3)).collect();
        band.extend(s.points.iter().rev().map(|p| (p.0 as f64, p.2)));
        chart
            .draw_series(std::iter::once(Polygon::new(band, color.mix(0.2).filled())))
            .map_err(|e| err(&e))?;
        chart
            .draw_series(LineSeries::new(s.points.iter().map(|p| (p.0 as f64, p.1)), color.stroke_width(2)))
            .map_err(|e| err(&e))?
            .label(s.variant.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| err(&e))?;
    root.present().map_err(|e| err(&e))?;
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `results.csv`, `timing.csv` and `accuracy.svg` (plus the
/// out-of-distribution table and plot when present) into `dir`.
pub fn emit_report(record: &ResultsRecord, dir: impl AsRef<Path>) -> Result<ReportFiles> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rows = result_rows(record);
    let results_csv = dir.join("results.csv");
    write(&results_csv, &rows_to_csv(&rows))?;
    let timing = dir.join("timing.csv");
    write(&timing, &timing_csv(record))?;
    let plot = dir.join("accuracy.svg");
    plot_series(&aggregate(&rows), &plot)?;
    let ood_rows = rows_of(record, |r| r.ood_curve.as_ref());
    let ood_csv = if ood_rows.is_empty() {
        None
    } else {
        let p = dir.join("ood_results.csv");
        write(&p, &rows_to_csv(&ood_rows))?;
        plot_series(&aggregate(&ood_rows), dir.join("ood_accuracy.svg"))?;
        Some(p)
    };
    Ok(ReportFiles {
        results_csv,
        timing_csv: timing,
        plot,
        ood_csv,
    })
}

/// Human-readable summary: final accuracy per variant.
pub fn summary(record: &ResultsRecord) -> String {
    let mut s = String::new();
    for series in aggregate(&result_rows(record)) {
        if let Some(&(n, mean, min, max)) = series.points.last() {
            let _ = writeln!(
                s,
                "{:<24} {n:>3} classes  mean {mean:.3}  min {min:.3}  max {max:.3}",
                series.variant
            );
        }
    }
    for run in record.failures() {
        let _ = writeln!(
            s,
            "{:<24} seed {} failed: {}",
            run.variant,
            run.seed,
            run.error.as_deref().unwrap_or("")
        );
    }
    s
}

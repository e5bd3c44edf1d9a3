//! Static SVG figures for evaluation reports.

use std::path::Path;

use hdsr::label::{FIRST_YEAR, NUM_CLASSES};
use hdsr::EvalReport;
use plotters::prelude::*;

use crate::settings::{CliError, CliResult};

pub const PER_CLASS: &str = "per_class_accuracy.svg";
pub const DISTRIBUTION: &str = "class_distribution.svg";
pub const NLD: &str = "nld_histogram.svg";

const SIZE: (u32, u32) = (1000, 420);
const NLD_BINS: [&str; 6] = ["0", "0.25", "0.5", "0.75", "1", ">1"];

fn plot_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Internal(format!("plot: {e}"))
}

/// Grouped bars: `values[series][category]`.
fn grouped_bars(path: &Path, title: &str, y_label: &str, categories: &[String], series: &[(String, Vec<f64>)]) -> CliResult {
    let y_max = series.iter().flat_map(|(_, v)| v.iter().copied()).fold(0.0f64, f64::max).max(1.0) * 1.05;
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let n = categories.len();
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..n as f64, 0.0..y_max)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n.min(32))
        .x_label_formatter(&|x| categories.get(x.floor() as usize).cloned().unwrap_or_default())
        .y_desc(y_label)
        .draw()
        .map_err(plot_err)?;
    let k = series.len().max(1) as f64;
    for (s, (name, values)) in series.iter().enumerate() {
        let color = Palette99::pick(s).to_rgba();
        let bars = values.iter().enumerate().map(move |(i, &v)| {
            let x0 = i as f64 + 0.1 + 0.8 * s as f64 / k;
            Rectangle::new([(x0, 0.0), (x0 + 0.8 / k, v)], color.filled())
        });
        chart
            .draw_series(bars)
            .map_err(plot_err)?
            .label(name.clone())
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], color.filled()));
    }
    if series.len() > 1 {
        chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}

fn per_class_accuracy(r: &EvalReport) -> Vec<f64> {
    let mut v = vec![0.0; NUM_CLASSES];
    for c in &r.per_class {
        if c.support > 0 {
            v[c.label.index()] = 100.0 * c.correct as f64 / c.support as f64;
        }
    }
    v
}

fn supports(r: &EvalReport) -> Vec<f64> {
    let mut v = vec![0.0; NUM_CLASSES];
    for c in &r.per_class {
        v[c.label.index()] = c.support as f64;
    }
    v
}

fn nld_histogram(r: &EvalReport) -> Vec<f64> {
    let mut v = vec![0.0; NLD_BINS.len()];
    for rec in &r.records {
        let bin = if rec.nld > 1.0 { 5 } else { (rec.nld * 4.0).round() as usize };
        v[bin] += 1.0;
    }
    v
}

/// Per-class accuracy bars, test-class distribution and NLD histogram.
pub fn write_all(dir: &Path, reports: &[(String, &EvalReport)]) -> CliResult {
    let years: Vec<String> = (0..NUM_CLASSES).map(|i| format!("{}", (FIRST_YEAR as usize + i) % 100)).collect();
    let acc: Vec<(String, Vec<f64>)> = reports.iter().map(|(n, r)| (n.clone(), per_class_accuracy(r))).collect();
    grouped_bars(&dir.join(PER_CLASS), "Per-class accuracy (year, last two digits)", "accuracy %", &years, &acc)?;
    let dist = vec![("test strings".to_string(), supports(reports[0].1))];
    grouped_bars(&dir.join(DISTRIBUTION), "Test strings per class", "count", &years, &dist)?;
    let bins: Vec<String> = NLD_BINS.iter().map(|s| s.to_string()).collect();
    let hist: Vec<(String, Vec<f64>)> = reports.iter().map(|(n, r)| (n.clone(), nld_histogram(r))).collect();
    grouped_bars(&dir.join(NLD), "NLD per test string", "strings", &bins, &hist)
}

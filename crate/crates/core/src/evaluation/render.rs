//! Report rendering: aligned text table (the familiar method × band
//! grid), a tidy CSV of every cell, and a distributions JSON for external
//! box-plot tooling. Numbers in the text table and CSV are presented at
//! two decimals; the JSON exports keep full precision.

use super::{method_sort_key, EvaluationReport, CANONICAL_METHODS};
use crate::corpus::QualityBand;
use std::collections::BTreeSet;
use std::fmt::Write;

fn ordered_methods(report: &EvaluationReport) -> Vec<&str> {
    let mut methods: BTreeSet<&str> = CANONICAL_METHODS.into_iter().collect();
    methods.extend(report.band_means.keys().map(String::as_str));
    methods.extend(report.mad.keys().map(String::as_str));
    methods.extend(report.distributions.keys().map(String::as_str));
    let mut ordered: Vec<&str> = methods.into_iter().collect();
    ordered.sort_by_key(|m| method_sort_key(m));
    ordered
}

fn bands_in(report: &EvaluationReport) -> Vec<QualityBand> {
    let mut bands: Vec<QualityBand> = QualityBand::LABELLED.to_vec();
    if report
        .band_means
        .values()
        .any(|cells| cells.contains_key(&QualityBand::Unknown))
    {
        bands.push(QualityBand::Unknown);
    }
    bands
}

fn cell(report: &EvaluationReport, method: &str, band: QualityBand) -> String {
    report
        .band_means
        .get(method)
        .and_then(|cells| cells.get(&band))
        .map(|v| format!("{v:.2}"))
        .unwrap_or_else(|| "-".to_string())
}

/// Aligned text report: the method × band average grid, then MAD,
/// clustering, and the five-number distributions.
pub fn render_text(report: &EvaluationReport) -> String {
    let methods = ordered_methods(report);
    let bands = bands_in(report);

    let mut out = String::new();
    out.push_str("Average score by method and quality band (out of 10)\n");
    let name_width = methods
        .iter()
        .map(|m| m.len())
        .chain(["Method".len()])
        .max()
        .unwrap_or(6);
    let col_width = 10;

    let _ = write!(out, "{:<name_width$}", "Method");
    for band in &bands {
        let _ = write!(out, "{:>col_width$}", band.label());
    }
    out.push('\n');
    for method in &methods {
        let _ = write!(out, "{method:<name_width$}");
        for band in &bands {
            let _ = write!(out, "{:>col_width$}", cell(report, method, *band));
        }
        out.push('\n');
    }

    out.push_str("\nMean absolute difference vs Human TA\n");
    for method in &methods {
        if let Some(value) = report.mad.get(*method) {
            let _ = writeln!(out, "{method:<name_width$}{value:>col_width$.2}");
        }
    }

    out.push_str("\nRound-number clustering (fraction of integer scores)\n");
    for method in &methods {
        if let Some(value) = report.clustering.get(*method) {
            let _ = writeln!(out, "{method:<name_width$}{value:>col_width$.2}");
        }
    }

    out.push_str("\nScore distributions (min / q1 / median / q3 / max)\n");
    for method in &methods {
        if let Some(d) = report.distributions.get(*method) {
            let _ = writeln!(
                out,
                "{method:<name_width$}  {:.2} / {:.2} / {:.2} / {:.2} / {:.2}",
                d.min, d.q1, d.median, d.q3, d.max
            );
        }
    }

    if !report.exclusions.is_empty() {
        out.push_str("\nExclusions\n");
        for exclusion in &report.exclusions {
            let _ = writeln!(out, "- {exclusion}");
        }
    }
    out
}

/// Tidy CSV: `metric,method,band,value` with one row per cell.
pub fn render_csv(report: &EvaluationReport) -> String {
    let methods = ordered_methods(report);
    let bands = bands_in(report);
    let mut out = String::from("metric,method,band,value\n");
    let quote = |s: &str| {
        if s.contains(',') || s.contains('"') {
            format!("\"{}\"", s.replace('"', "\"\""))
        } else {
            s.to_string()
        }
    };
    for method in &methods {
        for band in &bands {
            if let Some(value) = report.band_means.get(*method).and_then(|c| c.get(band)) {
                let _ = writeln!(
                    out,
                    "band_mean,{},{},{value:.2}",
                    quote(method),
                    band.label()
                );
            }
        }
    }
    for method in &methods {
        if let Some(value) = report.mad.get(*method) {
            let _ = writeln!(out, "mad,{},,{value:.2}", quote(method));
        }
    }
    for method in &methods {
        if let Some(value) = report.clustering.get(*method) {
            let _ = writeln!(out, "clustering,{},,{value:.2}", quote(method));
        }
    }
    for method in &methods {
        if let Some(d) = report.distributions.get(*method) {
            for (stat, value) in [
                ("dist_min", d.min),
                ("dist_q1", d.q1),
                ("dist_median", d.median),
                ("dist_q3", d.q3),
                ("dist_max", d.max),
            ] {
                let _ = writeln!(out, "{stat},{},,{value:.2}", quote(method));
            }
        }
    }
    out
}

/// Full-precision distributions for external box-plot rendering.
pub fn render_distributions_json(report: &EvaluationReport) -> String {
    let mut text =
        serde_json::to_string_pretty(&report.distributions).expect("distributions serialize");
    text.push('\n');
    text
}

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::protocol::AccuracyReport;
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Table,
    Plot,
}

impl FromStr for ReportFormat {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Self::Json),
            "table" => Ok(Self::Table),
            "plot" => Ok(Self::Plot),
            other => Err(invalid(format!("unknown report format {other:?}"))),
        }
    }
}

/// `mean±std` with two decimals.
pub fn table_cell(mean: f64, std: f64) -> String {
    format!("{mean:.2}±{std:.2}")
}

pub fn table_row(report: &AccuracyReport) -> String {
    format!(
        "| {} | {} |",
        report.dataset,
        table_cell(report.mean, report.std)
    )
}

fn table(report: &AccuracyReport) -> String {
    let mut s = String::from("| Dataset | Accuracy (%) |\n|---|---|\n");
    s.push_str(&table_row(report));
    s.push('\n');
    writeln!(
        s,
        "\nconfig {}; ± is the {}.",
        report.config_hash, report.std_kind
    )
    .unwrap();
    s
}

fn plot(report: &AccuracyReport) -> String {
    let (w, h, pad) = (60.0 * report.folds.len() as f64 + 80.0, 320.0, 40.0);
    let plot_h = h - 2.0 * pad;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>").unwrap();
    writeln!(
        s,
        "<text x=\"{pad}\" y=\"20\" font-size=\"13\">{} per-fold accuracy: {}</text>",
        report.dataset,
        table_cell(report.mean, report.std)
    )
    .unwrap();
    let base = h - pad;
    writeln!(
        s,
        "<line x1=\"{pad}\" y1=\"{base}\" x2=\"{}\" y2=\"{base}\" stroke=\"black\"/>",
        w - 20.0
    )
    .unwrap();
    let mean_y = base - plot_h * report.mean / 100.0;
    for (i, f) in report.folds.iter().enumerate() {
        let x = pad + 10.0 + 60.0 * i as f64;
        let bh = plot_h * f.accuracy / 100.0;
        writeln!(
            s,
            "<rect x=\"{x}\" y=\"{}\" width=\"40\" height=\"{bh}\" fill=\"steelblue\"/>",
            base - bh
        )
        .unwrap();
        writeln!(
            s,
            "<text x=\"{}\" y=\"{}\">{:.1}</text>",
            x + 4.0,
            base - bh - 4.0,
            f.accuracy
        )
        .unwrap();
        writeln!(
            s,
            "<text x=\"{}\" y=\"{}\">fold {}</text>",
            x + 2.0,
            base + 14.0,
            f.fold
        )
        .unwrap();
    }
    writeln!(
        s,
        "<line x1=\"{pad}\" y1=\"{mean_y}\" x2=\"{}\" y2=\"{mean_y}\" stroke=\"firebrick\" stroke-dasharray=\"4 3\"/>",
        w - 20.0
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}

/// Writes `report` into `dir` as `report.json`, `report.md` or `report.svg`.
pub fn emit_report(report: &AccuracyReport, format: ReportFormat, dir: &Path) -> Result<PathBuf> {
    if report.folds.is_empty() {
        return Err(invalid("report has no folds"));
    }
    std::fs::create_dir_all(dir)?;
    let (name, body) = match format {
        ReportFormat::Json => ("report.json", serde_json::to_string_pretty(report)?),
        ReportFormat::Table => ("report.md", table(report)),
        ReportFormat::Plot => ("report.svg", plot(report)),
    };
    let path = dir.join(name);
    std::fs::write(&path, body)?;
    Ok(path)
}

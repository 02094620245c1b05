//! Results tables and confusion-matrix figures.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::metrics::{ConfusionReport, EvalReport};
use super::stats::{aggregate_seeds, render_single, AggregateResult};
use crate::error::{Error, Result};

/// One table cell: per-seed accuracies of one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub row: String,
    pub col: String,
    pub values: Vec<f64>,
    pub config_hash: String,
}

impl Cell {
    pub fn aggregate(&self) -> Option<AggregateResult> {
        aggregate_seeds(&self.values).ok()
    }

    pub fn render(&self) -> String {
        match (self.aggregate(), self.values.as_slice()) {
            (Some(a), _) => a.render(),
            (None, [v]) => render_single(*v),
            (None, _) => "n/a".to_string(),
        }
    }
}

/// Accuracy table, e.g. architectures × backbones.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub title: String,
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub cells: Vec<Cell>,
}

impl ResultsTable {
    pub fn new(title: impl Into<String>) -> Self {
        ResultsTable {
            title: title.into(),
            ..Default::default()
        }
    }

    /// Adds or replaces a cell; rows and columns keep first-seen order.
    pub fn insert(&mut self, row: &str, col: &str, values: Vec<f64>, config_hash: &str) {
        if !self.rows.iter().any(|r| r == row) {
            self.rows.push(row.to_string());
        }
        if !self.cols.iter().any(|c| c == col) {
            self.cols.push(col.to_string());
        }
        self.cells.retain(|c| !(c.row == row && c.col == col));
        self.cells.push(Cell {
            row: row.to_string(),
            col: col.to_string(),
            values,
            config_hash: config_hash.to_string(),
        });
    }

    pub fn cell(&self, row: &str, col: &str) -> Option<&Cell> {
        self.cells.iter().find(|c| c.row == row && c.col == col)
    }

    /// Plain-text grid with one rendered cell per (row, col).
    pub fn render_text(&self) -> String {
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut line = vec![r.clone()];
                line.extend(
                    self.cols
                        .iter()
                        .map(|c| self.cell(r, c).map(Cell::render).unwrap_or_else(|| "-".into())),
                );
                line
            })
            .collect();
        let mut header = vec![String::new()];
        header.extend(self.cols.iter().cloned());
        let widths: Vec<usize> = (0..header.len())
            .map(|i| {
                std::iter::once(&header)
                    .chain(&body)
                    .map(|l| l[i].chars().count())
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let fmt_line = |l: &Vec<String>| {
            l.iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s:<w$}", w = *w))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = String::new();
        if !self.title.is_empty() {
            writeln!(out, "{}", self.title).unwrap();
        }
        writeln!(out, "{}", fmt_line(&header)).unwrap();
        for l in &body {
            writeln!(out, "{}", fmt_line(l)).unwrap();
        }
        out
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::from("row,col,n,mean,half_width,rendered,values,config_hash\n");
        for r in &self.rows {
            for c in &self.cols {
                let Some(cell) = self.cell(r, c) else { continue };
                let n = cell.values.len();
                let mean = cell.values.iter().sum::<f64>() / n.max(1) as f64;
                let hw = cell
                    .aggregate()
                    .map(|a| format!("{:.6}", a.half_width))
                    .unwrap_or_default();
                let values = cell
                    .values
                    .iter()
                    .map(|v| format!("{v:.6}"))
                    .collect::<Vec<_>>()
                    .join(";");
                writeln!(
                    out,
                    "{},{},{n},{mean:.6},{hw},{},{values},{}",
                    csv_field(r),
                    csv_field(c),
                    csv_field(&cell.render()),
                    cell.config_hash
                )
                .unwrap();
            }
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn confusion_csv(report: &ConfusionReport, config_hash: &str) -> String {
    let mut out = format!("# head={} config_hash={}\n", report.head, config_hash);
    out.push_str("true\\pred");
    for c in &report.classes {
        write!(out, ",{}", csv_field(c)).unwrap();
    }
    out.push('\n');
    for (name, row) in report.classes.iter().zip(&report.normalized) {
        out.push_str(&csv_field(name));
        for v in row {
            write!(out, ",{v:.6}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Heat map of a row-normalized matrix: darker blue is closer to 1.
pub fn confusion_image(report: &ConfusionReport) -> RgbImage {
    const CELL: u32 = 24;
    let n = report.classes.len() as u32;
    RgbImage::from_fn(n * CELL + 1, n * CELL + 1, |x, y| {
        if x % CELL == 0 || y % CELL == 0 {
            return Rgb([64, 64, 64]);
        }
        let (i, j) = ((y / CELL) as usize, (x / CELL) as usize);
        let v = report.normalized[i][j].clamp(0.0, 1.0);
        let fade = |c: f64| (255.0 - v * (255.0 - c)).round() as u8;
        Rgb([fade(8.0), fade(48.0), fade(107.0)])
    })
}

#[derive(Clone, Debug, Default)]
pub struct ReportFiles {
    pub table_text: PathBuf,
    pub table_csv: PathBuf,
    pub confusion: Vec<PathBuf>,
}

/// Writes `results.txt`, `results.csv` and, for each labelled evaluation, a
/// CSV and PNG per confusion matrix. File names carry the config hash prefix.
pub fn emit_report(
    table: &ResultsTable,
    evaluations: &[(String, EvalReport)],
    out_dir: &Path,
) -> Result<ReportFiles> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let write = |name: &str, text: &str| -> Result<PathBuf> {
        let p = out_dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    };
    let mut files = ReportFiles {
        table_text: write("results.txt", &table.render_text())?,
        table_csv: write("results.csv", &table.render_csv())?,
        confusion: Vec::new(),
    };
    for (label, report) in evaluations {
        let hash = report.config_hash.clone().unwrap_or_default();
        let short = &hash[..hash.len().min(8)];
        for cm in &report.confusion {
            let stem = format!("confusion_{}_{}_{}", sanitize(label), cm.head, short);
            files.confusion.push(write(&format!("{stem}.csv"), &confusion_csv(cm, &hash))?);
            let png = out_dir.join(format!("{stem}.png"));
            confusion_image(cm).save(&png).map_err(|e| Error::Io {
                path: png.clone(),
                source: std::io::Error::other(e.to_string()),
            })?;
            files.confusion.push(png);
        }
    }
    Ok(files)
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

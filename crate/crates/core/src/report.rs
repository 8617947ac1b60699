//! Report files: lossless JSON, and Markdown/CSV tables rounded to two
//! decimals. Also builds the numbered comparison tables and a small SVG
//! chart of a k sweep.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetId;
use crate::error::{Error, Result};
use crate::eval::{F1, MSE, NA, PRECISION, RECALL, RHO, TRAIN_F1, TRAIN_MSE, TRAIN_RHO};
use crate::experiment::{ExperimentBundle, SweepReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Markdown,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::InvalidParameter(format!("unknown report format {other:?}"))),
        }
    }
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Markdown => "md",
            ReportFormat::Csv => "csv",
        }
    }
}

pub fn round2(v: f64) -> String {
    format!("{v:.2}")
}

fn cell(v: Option<f64>) -> String {
    v.filter(|x| x.is_finite()).map(round2).unwrap_or_else(|| "–".to_string())
}

/// A labelled grid of optional numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

impl Table {
    pub fn new(title: impl Into<String>, columns: Vec<String>) -> Table {
        Table {
            title: title.into(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, label: impl Into<String>, values: Vec<Option<f64>>) {
        self.rows.push((label.into(), values));
    }

    pub fn get(&self, row: &str, column: &str) -> Option<f64> {
        let j = self.columns.iter().position(|c| c == column)?;
        self.rows.iter().find(|(l, _)| l == row).and_then(|(_, v)| v[j])
    }

    /// Pipe table with right-aligned numbers padded to a common width.
    pub fn to_markdown(&self) -> String {
        let first = std::iter::once("".to_string()).chain(self.rows.iter().map(|(l, _)| l.clone()));
        let label_w = first.map(|l| l.chars().count()).max().unwrap_or(0).max(4);
        let widths: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .map(|(j, c)| {
                self.rows
                    .iter()
                    .map(|(_, v)| cell(v[j]).chars().count())
                    .chain(std::iter::once(c.chars().count()))
                    .max()
                    .unwrap_or(4)
            })
            .collect();
        let mut out = format!("### {}\n\n", self.title);
        let _ = write!(out, "| {:<label_w$} |", "");
        for (c, w) in self.columns.iter().zip(&widths) {
            let _ = write!(out, " {c:>w$} |");
        }
        out.push('\n');
        let _ = write!(out, "|{}|", "-".repeat(label_w + 2));
        for w in &widths {
            let _ = write!(out, "{}:|", "-".repeat(w + 1));
        }
        out.push('\n');
        for (label, values) in &self.rows {
            let _ = write!(out, "| {label:<label_w$} |");
            for (v, w) in values.iter().zip(&widths) {
                let _ = write!(out, " {:>w$} |", cell(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["row".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for (label, values) in &self.rows {
            let mut rec = vec![label.clone()];
            rec.extend(values.iter().map(|v| v.filter(|x| x.is_finite()).map(round2).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Metric columns shown for a bundle, in display order.
const BUNDLE_METRICS: [&str; 9] = [F1, PRECISION, RECALL, RHO, NA, MSE, TRAIN_F1, TRAIN_RHO, TRAIN_MSE];

/// Run labels in display order; unknown labels follow alphabetically.
const RUN_ORDER: [&str; 10] = [
    "sys",
    "upper",
    "rand",
    "rand-upper",
    "shuffle",
    "shuffle-upper",
    "taxshuffle",
    "taxshuffle-upper",
    "cdiff",
    "cdiff-upper",
];

pub fn bundle_table(bundle: &ExperimentBundle) -> Table {
    let metrics: Vec<&str> = BUNDLE_METRICS
        .iter()
        .copied()
        .filter(|m| bundle.reports.values().any(|r| r.aggregate.contains_key(*m)))
        .collect();
    let mut table = Table::new(
        format!("{} ({} {}, k={})", bundle.name, bundle.dataset, bundle.method, bundle.size),
        metrics.iter().map(|m| m.to_string()).collect(),
    );
    let mut labels: Vec<&String> = bundle.reports.keys().collect();
    labels.sort_by_key(|l| (RUN_ORDER.iter().position(|o| o == l).unwrap_or(RUN_ORDER.len()), l.to_string()));
    for label in labels {
        let r = &bundle.reports[label];
        table.push(label.clone(), metrics.iter().map(|m| r.get(m)).collect());
    }
    table
}

pub fn bundle_markdown(bundle: &ExperimentBundle) -> String {
    let mut out = format!("# {}\n\n", bundle.name);
    let _ = writeln!(out, "- dataset: {}", bundle.dataset);
    let _ = writeln!(out, "- method: {} (size {})", bundle.method, bundle.size);
    let _ = writeln!(out, "- headline metric: {}", bundle.headline_metric);
    let _ = writeln!(
        out,
        "- concepts: {} of {} ({} dropped without embedding)",
        bundle.concepts,
        bundle.norm_concepts,
        bundle.dropped.len()
    );
    let _ = writeln!(out, "- features: {}", bundle.features);
    if let Some(d) = bundle.input_dim {
        let _ = writeln!(out, "- embedding dimension: {d}");
    }
    let _ = writeln!(out, "- folds: {} (seed {})", bundle.fold_count, bundle.fold_seed);
    let _ = writeln!(out, "- ablation seed: {}", bundle.ablation_seed);
    let _ = writeln!(out, "- fingerprint: `{}`\n", bundle.fingerprint);
    out.push_str(&bundle_table(bundle).to_markdown());
    if !bundle.significance.is_empty() {
        let _ = writeln!(out, "\nPaired sign-flip permutation test on per-concept {}:\n", bundle.headline_metric);
        for (pair, p) in &bundle.significance {
            let _ = writeln!(out, "- {pair}: p = {p:.4}");
        }
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Writes `<name>.<ext>` per format. Fails without writing anything when
/// the bundle holds no reports.
pub fn emit_bundle(bundle: &ExperimentBundle, formats: &[ReportFormat], dir: &Path) -> Result<Vec<PathBuf>> {
    emit_bundles(std::slice::from_ref(bundle), formats, dir)
}

pub fn emit_bundles(bundles: &[ExperimentBundle], formats: &[ReportFormat], dir: &Path) -> Result<Vec<PathBuf>> {
    if bundles.is_empty() || bundles.iter().any(|b| b.reports.is_empty()) {
        return Err(Error::EmptyReport);
    }
    let mut rendered = Vec::new();
    for b in bundles {
        for &f in formats {
            let text = match f {
                ReportFormat::Json => to_json(b)?,
                ReportFormat::Markdown => bundle_markdown(b),
                ReportFormat::Csv => bundle_table(b).to_csv()?,
            };
            rendered.push((dir.join(format!("{}.{}", b.name, f.extension())), text));
        }
    }
    ensure_dir(dir)?;
    for (path, text) in &rendered {
        write_file(path, text)?;
    }
    Ok(rendered.into_iter().map(|(p, _)| p).collect())
}

pub fn sweep_table(sweep: &SweepReport) -> Table {
    let mut t = Table::new(
        format!("{} sweep ({} {}), selected k = {}", sweep.name, sweep.dataset, sweep.method, sweep.selected_k),
        vec![
            "train_mse".into(),
            "test_mse".into(),
            format!("train_{}", sweep.metric),
            format!("test_{}", sweep.metric),
            "test_na".into(),
        ],
    );
    for p in &sweep.points {
        t.push(
            format!("k={}", p.k),
            vec![Some(p.train_mse), Some(p.test_mse), p.train_metric, p.test_metric, Some(p.test_na)],
        );
    }
    t
}

/// Line chart of train and test MSE against k.
pub fn sweep_svg(sweep: &SweepReport) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let ks: Vec<f64> = sweep.points.iter().map(|p| p.k as f64).collect();
    let values: Vec<f64> = sweep
        .points
        .iter()
        .flat_map(|p| [p.train_mse, p.test_mse])
        .filter(|v| v.is_finite())
        .collect();
    let (kmin, kmax) = (ks.iter().cloned().fold(f64::INFINITY, f64::min), ks.iter().cloned().fold(0.0, f64::max));
    let vmax = values.iter().cloned().fold(0.0, f64::max).max(1e-12);
    let sx = |k: f64| if kmax > kmin { pad + (k - kmin) / (kmax - kmin) * (w - 2.0 * pad) } else { w / 2.0 };
    let sy = |v: f64| h - pad - v / vmax * (h - 2.0 * pad);
    let line = |f: &dyn Fn(&crate::experiment::SweepPoint) -> f64| {
        sweep
            .points
            .iter()
            .map(|p| format!("{:.1},{:.1}", sx(p.k as f64), sy(f(p))))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let _ = writeln!(out, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    let _ = writeln!(
        out,
        "<line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        h - pad,
        w - pad,
        h - pad
    );
    let _ = writeln!(out, "<line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{}\" stroke=\"black\"/>", h - pad);
    let _ = writeln!(out, "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"{}\"/>", line(&|p| p.train_mse));
    let _ = writeln!(out, "<polyline fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\" points=\"{}\"/>", line(&|p| p.test_mse));
    for &k in &ks {
        let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{k}</text>", sx(k), h - pad + 18.0);
    }
    let _ = writeln!(out, "<text x=\"{pad}\" y=\"{}\">{}</text>", pad - 10.0, round2(vmax));
    let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">k</text>", w / 2.0, h - 10.0);
    let sel = sx(sweep.selected_k as f64);
    let _ = writeln!(
        out,
        "<line x1=\"{sel:.1}\" y1=\"{pad}\" x2=\"{sel:.1}\" y2=\"{}\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>",
        h - pad
    );
    let _ = writeln!(out, "<text x=\"{}\" y=\"20\" fill=\"#1f77b4\">train MSE</text>", w - 200.0);
    let _ = writeln!(out, "<text x=\"{}\" y=\"20\" fill=\"#d62728\">test MSE</text>", w - 110.0);
    out.push_str("</svg>\n");
    out
}

/// Writes `<name>.sweep.{json,csv,md,svg}`.
pub fn emit_sweep(sweep: &SweepReport, formats: &[ReportFormat], dir: &Path) -> Result<Vec<PathBuf>> {
    if sweep.points.is_empty() {
        return Err(Error::EmptyReport);
    }
    let table = sweep_table(sweep);
    let mut rendered = Vec::new();
    for &f in formats {
        let text = match f {
            ReportFormat::Json => to_json(sweep)?,
            ReportFormat::Markdown => table.to_markdown(),
            ReportFormat::Csv => table.to_csv()?,
        };
        rendered.push((dir.join(format!("{}.sweep.{}", sweep.name, f.extension())), text));
    }
    rendered.push((dir.join(format!("{}.sweep.svg", sweep.name)), sweep_svg(sweep)));
    ensure_dir(dir)?;
    for (path, text) in &rendered {
        write_file(path, text)?;
    }
    Ok(rendered.into_iter().map(|(p, _)| p).collect())
}

fn dataset_label(dataset: DatasetId) -> &'static str {
    match dataset {
        DatasetId::McRae => "McRae",
        DatasetId::Buchanan => "Buchanan",
        DatasetId::Binder => "Binder",
        DatasetId::Synthetic => "Synthetic",
    }
}

fn row_label(dataset: DatasetId, metric: &str) -> String {
    let short = if metric == F1 { "F1" } else { "rho" };
    format!("{} ({short})", dataset_label(dataset))
}

/// Datasets in order of first appearance.
fn datasets(bundles: &[ExperimentBundle]) -> Vec<DatasetId> {
    let mut out = Vec::new();
    for b in bundles {
        if !out.contains(&b.dataset) {
            out.push(b.dataset);
        }
    }
    out
}

fn find<'a>(bundles: &'a [ExperimentBundle], dataset: DatasetId, method: &str) -> Option<&'a ExperimentBundle> {
    bundles.iter().find(|b| b.dataset == dataset && b.method == method)
}

fn metric_of(bundle: Option<&ExperimentBundle>, run: &str, metric: &str) -> Option<f64> {
    bundle?.reports.get(run)?.get(metric)
}

fn headline_table(title: &str, bundles: &[ExperimentBundle], method: &str, runs: &[(&str, &str)]) -> Table {
    let mut t = Table::new(title, runs.iter().map(|(c, _)| c.to_string()).collect());
    for d in datasets(bundles) {
        let b = find(bundles, d, method);
        let metric = b.map(|b| b.headline_metric.as_str()).unwrap_or(F1);
        t.push(row_label(d, metric), runs.iter().map(|(_, run)| metric_of(b, run, metric)).collect());
    }
    t
}

/// The comparison tables of one results table number, built from experiment
/// bundles (tables 1, 3, 4, 5) or sweeps (table 6).
pub fn results_tables(table: u32, bundles: &[ExperimentBundle], sweeps: &[SweepReport]) -> Result<Vec<Table>> {
    let tables = match table {
        1 => {
            let mut t = Table::new(
                "Mapping embeddings to feature norms",
                ["PLSR Sys", "PLSR Rand", "FFNN Sys", "FFNN Rand"].map(String::from).to_vec(),
            );
            for d in datasets(bundles) {
                let plsr = find(bundles, d, "plsr");
                let ffnn = find(bundles, d, "ffnn");
                let metric = plsr.or(ffnn).map(|b| b.headline_metric.clone()).unwrap_or_else(|| F1.to_string());
                t.push(
                    row_label(d, &metric),
                    vec![
                        metric_of(plsr, "sys", &metric),
                        metric_of(plsr, "rand", &metric),
                        metric_of(ffnn, "sys", &metric),
                        metric_of(ffnn, "rand", &metric),
                    ],
                );
            }
            vec![t]
        }
        3 => vec![headline_table(
            "Upper bounds for property inference with PLSR",
            bundles,
            "plsr",
            &[("Sys", "sys"), ("Upper", "upper"), ("Rand", "rand"), ("Rand-Upper", "rand-upper")],
        )],
        4 => vec![
            headline_table(
                "Results and upper bounds for shuffled features and random baseline",
                bundles,
                "plsr",
                &[
                    ("Sys", "sys"),
                    ("Upper", "upper"),
                    ("Shuffle", "shuffle"),
                    ("Shuf-Upper", "shuffle-upper"),
                    ("Rand", "rand"),
                ],
            ),
            headline_table(
                "Character-length difference targets",
                bundles,
                "plsr",
                &[("Sys", "sys"), ("CDiff", "cdiff"), ("Upper", "cdiff-upper")],
            ),
        ],
        5 => {
            let runs = [("Sys", "sys"), ("Rand", "rand"), ("Shuffle", "shuffle"), ("CDiff", "cdiff")];
            let columns = runs
                .iter()
                .flat_map(|(c, _)| [format!("{c} NA"), format!("{c} Up")])
                .collect();
            let mut t = Table::new("Neighbourhood accuracy (NA@10)", columns);
            for d in datasets(bundles) {
                let b = find(bundles, d, "plsr");
                let values = runs
                    .iter()
                    .flat_map(|(_, run)| {
                        let up = if *run == "sys" { "upper".to_string() } else { format!("{run}-upper") };
                        [metric_of(b, run, NA), metric_of(b, &up, NA)]
                    })
                    .collect();
                t.push(dataset_label(d), values);
            }
            vec![t]
        }
        6 => {
            let mut out = Vec::new();
            let mut seen = Vec::new();
            for s in sweeps {
                if seen.contains(&s.dataset) {
                    continue;
                }
                seen.push(s.dataset);
                let group: Vec<&SweepReport> = sweeps.iter().filter(|x| x.dataset == s.dataset).collect();
                let mut columns = Vec::new();
                let mut cols = Vec::new();
                for g in &group {
                    for p in &g.points {
                        columns.push(format!("{} {}", g.method.to_uppercase(), p.k));
                        cols.push(p);
                    }
                }
                let short = if s.metric == F1 { "F1" } else { "rho" };
                let mut t = Table::new(format!("Overfitting: {}", dataset_label(s.dataset)), columns);
                t.push(format!("Train {short}"), cols.iter().map(|p| p.train_metric).collect());
                t.push(format!("Test {short}"), cols.iter().map(|p| p.test_metric).collect());
                t.push("Train MSE", cols.iter().map(|p| Some(p.train_mse)).collect());
                t.push("Test MSE", cols.iter().map(|p| Some(p.test_mse)).collect());
                t.push("Test NA", cols.iter().map(|p| Some(p.test_na)).collect());
                out.push(t);
            }
            out
        }
        other => {
            return Err(Error::InvalidParameter(format!("no layout for table {other}")));
        }
    };
    if tables.iter().all(|t| t.rows.is_empty()) {
        return Err(Error::EmptyReport);
    }
    Ok(tables)
}

/// Writes `table<N>.{md,csv,json}`.
pub fn emit_tables(table: u32, tables: &[Table], formats: &[ReportFormat], dir: &Path) -> Result<Vec<PathBuf>> {
    if tables.is_empty() {
        return Err(Error::EmptyReport);
    }
    let mut rendered = Vec::new();
    for &f in formats {
        let text = match f {
            ReportFormat::Json => to_json(&tables)?,
            ReportFormat::Markdown => tables.iter().map(Table::to_markdown).collect::<Vec<_>>().join("\n"),
            ReportFormat::Csv => {
                let mut s = String::new();
                for t in tables {
                    s.push_str(&t.to_csv()?);
                }
                s
            }
        };
        rendered.push((dir.join(format!("table{table}.{}", f.extension())), text));
    }
    ensure_dir(dir)?;
    for (path, text) in &rendered {
        write_file(path, text)?;
    }
    Ok(rendered.into_iter().map(|(p, _)| p).collect())
}

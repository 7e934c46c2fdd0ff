//! CSV tables, run manifests and SVG figures.
//!
//! Reals go out as `{:.16e}` (17 significant digits) so every table parses
//! back to the exact values that were written.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::{Classification, MetricsSummary, Stat, TrialRecord};
use crate::error::{Error, Result};
use crate::experiments::{
    sort_records, AuditReport, ConditionResult, ExperimentConfig, ExperimentKind, GammaScore,
    LearningCurveReport,
};
use crate::learning::Rule;

pub const TRIAL_HEADER: [&str; 14] = [
    "master_seed",
    "n",
    "p",
    "load",
    "similarity",
    "rule",
    "gamma",
    "lambda",
    "pattern_idx",
    "trial_idx",
    "classification",
    "steps",
    "hamming_nearest",
    "nearest_idx",
];

pub const METRICS: [&str; 8] = [
    "target_recall_rate",
    "other_learned_rate",
    "spurious_fixed_point_rate",
    "spurious_cycle_rate",
    "cycle_rate",
    "not_converged_rate",
    "fixed_point_rate",
    "avg_steps_to_converge",
];

pub fn real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn metric<'a>(m: &'a MetricsSummary, name: &str) -> Option<&'a Stat> {
    Some(match name {
        "target_recall_rate" => &m.target_recall_rate,
        "other_learned_rate" => &m.other_learned_rate,
        "spurious_fixed_point_rate" => &m.spurious_fixed_point_rate,
        "spurious_cycle_rate" => &m.spurious_cycle_rate,
        "cycle_rate" => &m.cycle_rate,
        "not_converged_rate" => &m.not_converged_rate,
        "fixed_point_rate" => &m.fixed_point_rate,
        "avg_steps_to_converge" => &m.avg_steps_to_converge,
        _ => return None,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn make_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<csv::Writer<fs::File>> {
    make_parent(path)?;
    csv::Writer::from_path(path).map_err(csv_err(path))
}

/// One row of the trial CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialRow {
    pub master_seed: u64,
    pub n: usize,
    pub p: usize,
    pub load: f64,
    pub similarity: f64,
    pub rule: Rule,
    pub gamma: f64,
    pub lambda: f64,
    pub pattern_idx: usize,
    pub trial_idx: usize,
    pub classification: Classification,
    pub steps: usize,
    pub hamming_nearest: usize,
    pub nearest_idx: usize,
}

impl From<&TrialRecord> for TrialRow {
    fn from(r: &TrialRecord) -> Self {
        TrialRow {
            master_seed: r.master_seed,
            n: r.n,
            p: r.p,
            load: r.load,
            similarity: r.similarity,
            rule: r.rule,
            gamma: r.gamma,
            lambda: r.lambda,
            pattern_idx: r.pattern_idx,
            trial_idx: r.trial_idx,
            classification: r.classification,
            steps: r.steps,
            hamming_nearest: r.hamming_nearest,
            nearest_idx: r.nearest_idx,
        }
    }
}

impl TrialRow {
    fn fields(&self) -> [String; 14] {
        [
            self.master_seed.to_string(),
            self.n.to_string(),
            self.p.to_string(),
            real(self.load),
            real(self.similarity),
            self.rule.to_string(),
            real(self.gamma),
            real(self.lambda),
            self.pattern_idx.to_string(),
            self.trial_idx.to_string(),
            self.classification.to_string(),
            self.steps.to_string(),
            self.hamming_nearest.to_string(),
            self.nearest_idx.to_string(),
        ]
    }

    fn parse(rec: &csv::StringRecord, line: u64) -> Result<Self> {
        fn get<T: FromStr>(rec: &csv::StringRecord, i: usize, line: u64) -> Result<T> {
            let s = rec.get(i).unwrap_or("");
            s.parse()
                .map_err(|_| Error::invalid(format!("line {line}: bad {} `{s}`", TRIAL_HEADER[i])))
        }
        Ok(TrialRow {
            master_seed: get(rec, 0, line)?,
            n: get(rec, 1, line)?,
            p: get(rec, 2, line)?,
            load: get(rec, 3, line)?,
            similarity: get(rec, 4, line)?,
            rule: get(rec, 5, line)?,
            gamma: get(rec, 6, line)?,
            lambda: get(rec, 7, line)?,
            pattern_idx: get(rec, 8, line)?,
            trial_idx: get(rec, 9, line)?,
            classification: get(rec, 10, line)?,
            steps: get(rec, 11, line)?,
            hamming_nearest: get(rec, 12, line)?,
            nearest_idx: get(rec, 13, line)?,
        })
    }
}

/// Writes rows in the order given.
pub fn write_trial_rows<W: Write>(out: W, rows: &[TrialRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRIAL_HEADER)?;
    for row in rows {
        w.write_record(row.fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trial_rows<R: Read>(input: R) -> Result<Vec<TrialRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_err(Path::new("<input>")))?.clone();
    if header.iter().ne(TRIAL_HEADER) {
        return Err(Error::invalid("not a trial table: unexpected header"));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(Path::new("<input>")))?;
        rows.push(TrialRow::parse(&rec, i as u64 + 2)?);
    }
    Ok(rows)
}

/// Writes records in canonical order.
pub fn write_trial_csv(path: &Path, records: &[TrialRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::invalid("no trial records to write"));
    }
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let rows: Vec<TrialRow> = sorted.iter().map(TrialRow::from).collect();
    make_parent(path)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_trial_rows(std::io::BufWriter::new(file), &rows).map_err(csv_err(path))
}

pub fn read_trial_csv(path: &Path) -> Result<Vec<TrialRow>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_trial_rows(file).map_err(|e| match e {
        Error::InvalidArgument(m) => Error::invalid(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn condition_header() -> Vec<String> {
    let mut h: Vec<String> = [
        "n",
        "p",
        "load",
        "similarity",
        "rule",
        "c",
        "gamma",
        "lambda",
        "seeds",
        "trials",
    ]
    .map(String::from)
    .to_vec();
    for m in METRICS {
        h.push(format!("{m}_mean"));
        h.push(format!("{m}_ci"));
    }
    h.extend(
        [
            "train_seconds_mean",
            "train_seconds_sd",
            "dynamics_violations",
        ]
        .map(String::from),
    );
    h
}

/// One row per (model, similarity) condition.
pub fn write_condition_csv(path: &Path, conditions: &[ConditionResult]) -> Result<()> {
    let mut w = create(path)?;
    let err = csv_err(path);
    w.write_record(condition_header()).map_err(&err)?;
    for c in conditions {
        let s = &c.spec;
        let mut row = vec![
            s.n.to_string(),
            s.p.to_string(),
            real(s.load),
            real(c.similarity),
            s.rule.to_string(),
            real(s.c),
            real(s.gamma()),
            real(s.lambda),
            c.metrics.seeds.len().to_string(),
            c.metrics.trials_per_seed.iter().sum::<usize>().to_string(),
        ];
        for m in METRICS {
            let stat = metric(&c.metrics, m).expect("known metric");
            row.push(real(stat.mean));
            row.push(real(stat.half_width));
        }
        let (mean, sd) = c.train_seconds_stats();
        row.extend([real(mean), real(sd), c.dynamics_violations.to_string()]);
        w.write_record(&row).map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_learning_curve_csv(path: &Path, report: &LearningCurveReport) -> Result<()> {
    let mut w = create(path)?;
    let err = csv_err(path);
    w.write_record(["update", "loss"]).map_err(&err)?;
    for (t, loss) in report.curve.losses.iter().enumerate() {
        w.write_record([t.to_string(), real(*loss)]).map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_gamma_csv(path: &Path, scores: &[GammaScore]) -> Result<()> {
    let mut w = create(path)?;
    let err = csv_err(path);
    w.write_record(["n", "c", "mean_recall"]).map_err(&err)?;
    for s in scores {
        w.write_record([s.n.to_string(), real(s.c), real(s.mean_recall)])
            .map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_audit_csv(path: &Path, report: &AuditReport) -> Result<()> {
    let mut w = create(path)?;
    let err = csv_err(path);
    w.write_record([
        "n",
        "rule",
        "load",
        "trials",
        "cycles",
        "not_converged",
        "cycle_rate_mean",
        "cycle_rate_ci",
        "not_converged_rate_mean",
        "not_converged_rate_ci",
    ])
    .map_err(&err)?;
    for r in &report.rows {
        w.write_record([
            r.n.to_string(),
            r.rule.to_string(),
            real(r.load),
            r.trials.to_string(),
            r.cycles.to_string(),
            r.not_converged.to_string(),
            real(r.cycle_rate.mean),
            real(r.cycle_rate.half_width),
            real(r.not_converged_rate.mean),
            real(r.not_converged_rate.half_width),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub role: String,
    pub path: String,
}

/// Everything needed to rerun an experiment with the same binary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub kind: ExperimentKind,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<OutputFile>,
}

impl RunManifest {
    pub fn new(config: &ExperimentConfig, started: chrono::DateTime<chrono::Utc>) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            kind: config.kind,
            config: config.clone(),
            seeds: config.seeds.clone(),
            started: started.to_rfc3339(),
            finished: String::new(),
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: RunManifest = serde_json::from_str(&text)?;
        m.config.validate()?;
        Ok(m)
    }
}

/// A CSV file held as strings, addressed by column name.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn from_reader<R: Read>(input: R) -> csv::Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()))
            .collect::<csv::Result<_>>()?;
        Ok(Table { header, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Table::from_reader(file).map_err(csv_err(path))
    }

    pub fn has(&self, name: &str) -> bool {
        self.header.iter().any(|h| h == name)
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    fn cell<'a>(&self, row: &'a [String], col: usize) -> &'a str {
        row.get(col).map_or("", String::as_str)
    }

    fn number(&self, row: &[String], col: usize) -> Result<f64> {
        let s = self.cell(row, col);
        s.parse().map_err(|_| {
            Error::invalid(format!(
                "column `{}`: `{s}` is not a number",
                self.header[col]
            ))
        })
    }

    pub fn numbers(&self, name: &str) -> Result<Vec<f64>> {
        let col = self.column(name)?;
        self.rows.iter().map(|r| self.number(r, col)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<Point>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Left edges of equal-width bins.
    pub bin_width: usize,
    pub bins: Vec<usize>,
    pub groups: Vec<(String, Vec<usize>)>,
}

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 76.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 44.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{:.6}", v);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

/// Roughly five round-valued ticks covering [lo, hi].
pub fn linear_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = mag
        * if norm < 1.5 {
            1.0
        } else if norm < 3.0 {
            2.0
        } else if norm < 7.0 {
            5.0
        } else {
            10.0
        };
    let first = (lo / step).ceil() as i64;
    let last = (hi / step + 1e-9).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

/// Decade exponents spanning [lo, hi], at least two of them.
pub fn decade_ticks(lo: f64, hi: f64) -> Vec<i32> {
    let a = lo.log10().floor() as i32;
    let mut b = hi.log10().ceil() as i32;
    if b <= a {
        b = a + 1;
    }
    (a..=b).collect()
}

fn pad(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let m = 0.04 * (hi - lo);
        (lo - m, hi + m)
    } else {
        let m = if lo == 0.0 { 0.5 } else { 0.1 * lo.abs() };
        (lo - m, hi + m)
    }
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    log_y: bool,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }
    fn py(&self, y: f64) -> f64 {
        let (y, y0, y1) = if self.log_y {
            (y.log10(), self.y0.log10(), self.y1.log10())
        } else {
            (y, self.y0, self.y1)
        };
        HEIGHT - BOTTOM - (y - y0) / (y1 - y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn svg_open(out: &mut String, title: &str, x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        out,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        esc(title)
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        HEIGHT - 18.0,
        esc(x_label)
    );
    let cy = (TOP + HEIGHT - BOTTOM) / 2.0;
    let _ = writeln!(
        out,
        r#"<text x="18" y="{cy}" text-anchor="middle" transform="rotate(-90 18 {cy})">{}</text>"#,
        esc(y_label)
    );
    let _ = writeln!(
        out,
        r#"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        WIDTH - LEFT - RIGHT,
        HEIGHT - TOP - BOTTOM
    );
}

fn x_axis(out: &mut String, f: &Frame, ticks: &[(f64, String)]) {
    let base = HEIGHT - BOTTOM;
    for (x, label) in ticks {
        let px = f.px(*x);
        let _ = writeln!(
            out,
            r#"<line x1="{px:.2}" y1="{base}" x2="{px:.2}" y2="{}" stroke="black"/><text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#,
            base + 5.0,
            base + 19.0,
            esc(label)
        );
    }
}

fn legend(out: &mut String, labels: &[String]) {
    for (i, label) in labels.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let x = WIDTH - RIGHT + 14.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{}" width="14" height="10" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            y - 9.0,
            PALETTE[i % PALETTE.len()],
            x + 20.0,
            y,
            esc(label)
        );
    }
}

impl LineChart {
    pub fn to_svg(&self) -> String {
        let keep = |p: &Point| p.x.is_finite() && p.y.is_finite() && (!self.log_y || p.y > 0.0);
        let pts: Vec<Point> = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().copied())
            .filter(keep)
            .collect();
        let band = |p: &Point| {
            let lo = if p.lo.is_finite() && (!self.log_y || p.lo > 0.0) {
                p.lo.min(p.y)
            } else {
                p.y
            };
            let hi = if p.hi.is_finite() { p.hi.max(p.y) } else { p.y };
            (lo, hi)
        };
        let (mut x0, mut x1, mut y0, mut y1) = (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        );
        for p in &pts {
            let (lo, hi) = band(p);
            x0 = x0.min(p.x);
            x1 = x1.max(p.x);
            y0 = y0.min(lo);
            y1 = y1.max(hi);
        }
        if pts.is_empty() {
            (x0, x1, y0, y1) = (0.0, 1.0, if self.log_y { 0.1 } else { 0.0 }, 1.0);
        }
        let (x0, x1) = pad(x0, x1);
        let mut out = String::new();
        svg_open(&mut out, &self.title, &self.x_label, &self.y_label);
        let frame;
        if self.log_y {
            let decades = decade_ticks(y0, y1);
            frame = Frame {
                x0,
                x1,
                y0: 10f64.powi(decades[0]),
                y1: 10f64.powi(*decades.last().unwrap()),
                log_y: true,
            };
            for d in decades {
                let py = frame.py(10f64.powi(d));
                let _ = writeln!(
                    out,
                    r#"<line x1="{}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">1e{d}</text>"#,
                    LEFT - 5.0,
                    LEFT - 8.0,
                    py + 4.0
                );
            }
        } else {
            let (y0, y1) = pad(y0, y1);
            frame = Frame {
                x0,
                x1,
                y0,
                y1,
                log_y: false,
            };
            for t in linear_ticks(y0, y1) {
                let py = frame.py(t);
                let _ = writeln!(
                    out,
                    r#"<line x1="{}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
                    LEFT - 5.0,
                    LEFT - 8.0,
                    py + 4.0,
                    fmt_tick(t)
                );
            }
        }
        let xt: Vec<(f64, String)> = linear_ticks(x0, x1)
            .into_iter()
            .map(|t| (t, fmt_tick(t)))
            .collect();
        x_axis(&mut out, &frame, &xt);

        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let mut p: Vec<Point> = s.points.iter().copied().filter(keep).collect();
            p.sort_by(|a, b| a.x.total_cmp(&b.x));
            if p.len() > 1 {
                let mut poly = String::new();
                for q in &p {
                    let _ = write!(poly, "{:.2},{:.2} ", frame.px(q.x), frame.py(band(q).1));
                }
                for q in p.iter().rev() {
                    let _ = write!(poly, "{:.2},{:.2} ", frame.px(q.x), frame.py(band(q).0));
                }
                let _ = writeln!(
                    out,
                    r#"<polygon points="{}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#,
                    poly.trim_end()
                );
                let line: Vec<String> = p
                    .iter()
                    .map(|q| format!("{:.2},{:.2}", frame.px(q.x), frame.py(q.y)))
                    .collect();
                let _ = writeln!(
                    out,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"#,
                    line.join(" ")
                );
            }
            for q in &p {
                let (lo, hi) = band(q);
                let (px, py) = (frame.px(q.x), frame.py(q.y));
                if p.len() == 1 {
                    let _ = writeln!(
                        out,
                        r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="{color}"/>"#,
                        frame.py(lo),
                        frame.py(hi)
                    );
                }
                let _ = writeln!(
                    out,
                    r#"<circle cx="{px:.2}" cy="{py:.2}" r="2.6" fill="{color}"/>"#
                );
            }
        }
        let labels: Vec<String> = self.series.iter().map(|s| s.label.clone()).collect();
        legend(&mut out, &labels);
        out.push_str("</svg>\n");
        out
    }
}

impl Histogram {
    pub fn to_svg(&self) -> String {
        let nb = self.bins.len().max(1);
        let ymax = self
            .groups
            .iter()
            .flat_map(|g| g.1.iter().copied())
            .max()
            .unwrap_or(0)
            .max(1) as f64;
        let frame = Frame {
            x0: 0.0,
            x1: nb as f64,
            y0: 0.0,
            y1: ymax * 1.05,
            log_y: false,
        };
        let mut out = String::new();
        svg_open(&mut out, &self.title, &self.x_label, &self.y_label);
        for t in linear_ticks(0.0, ymax * 1.05) {
            let py = frame.py(t);
            let _ = writeln!(
                out,
                r#"<line x1="{}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
                LEFT - 5.0,
                LEFT - 8.0,
                py + 4.0,
                fmt_tick(t)
            );
        }
        let step = nb.div_ceil(12);
        let xt: Vec<(f64, String)> = self
            .bins
            .iter()
            .enumerate()
            .step_by(step)
            .map(|(i, &b)| (i as f64 + 0.5, b.to_string()))
            .collect();
        x_axis(&mut out, &frame, &xt);
        let k = self.groups.len().max(1) as f64;
        let slot = (frame.px(1.0) - frame.px(0.0)) * 0.85 / k;
        for (gi, (_, counts)) in self.groups.iter().enumerate() {
            let color = PALETTE[gi % PALETTE.len()];
            for (bi, &c) in counts.iter().enumerate().filter(|(_, &c)| c > 0) {
                let x = frame.px(bi as f64)
                    + (frame.px(1.0) - frame.px(0.0)) * 0.075
                    + slot * gi as f64;
                let y = frame.py(c as f64);
                let _ = writeln!(
                    out,
                    r#"<rect x="{x:.2}" y="{y:.2}" width="{slot:.2}" height="{:.2}" fill="{color}"/>"#,
                    frame.py(0.0) - y
                );
            }
        }
        let labels: Vec<String> = self.groups.iter().map(|g| g.0.clone()).collect();
        legend(&mut out, &labels);
        out.push_str("</svg>\n");
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Figure {
    /// Recall vs load per similarity.
    F1a,
    /// Error decomposition vs load.
    F1b,
    /// Recall vs similarity per load.
    F1c,
    /// Steps vs load per similarity.
    F1d,
    /// Recall vs load per rule.
    F2a,
    /// Training time vs load per rule, log scale.
    F2b,
    /// Recall vs load per network size.
    F3a,
    /// Steps vs load per network size.
    F3b,
    /// Recall vs c per (load, λ).
    F4,
    /// Learning curve, log scale.
    A,
    /// Hamming distance histogram of failed trials.
    B,
    /// Cycle and non-convergence rates vs load.
    C,
}

impl FromStr for Figure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "1a" => Figure::F1a,
            "1b" => Figure::F1b,
            "1c" => Figure::F1c,
            "1d" => Figure::F1d,
            "2a" => Figure::F2a,
            "2b" => Figure::F2b,
            "3a" => Figure::F3a,
            "3b" => Figure::F3b,
            "4" => Figure::F4,
            "a" => Figure::A,
            "b" => Figure::B,
            "c" => Figure::C,
            _ => return Err(Error::invalid(format!("unknown figure `{s}`"))),
        })
    }
}

/// Row filter `column = value`, compared numerically when both sides parse.
#[derive(Clone, Debug, PartialEq)]
pub struct Filter {
    pub column: String,
    pub value: String,
}

impl FromStr for Filter {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (column, value) = s
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("filter `{s}` is not column=value")))?;
        Ok(Filter {
            column: column.trim().into(),
            value: value.trim().into(),
        })
    }
}

fn same(a: &str, b: &str) -> bool {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}

fn short(value: &str) -> String {
    value
        .parse::<f64>()
        .map_or_else(|_| value.to_string(), |v| format!("{v}"))
}

struct SeriesSpec<'a> {
    x: &'a str,
    /// (mean column, band column, band is ± around the mean)
    ys: Vec<(&'a str, Option<&'a str>)>,
    group: Vec<&'a str>,
}

fn build_series(table: &Table, spec: &SeriesSpec, filters: &[Filter]) -> Result<Vec<Series>> {
    let fcols = filters
        .iter()
        .map(|f| table.column(&f.column).map(|c| (c, f.value.as_str())))
        .collect::<Result<Vec<_>>>()?;
    let xc = table.column(spec.x)?;
    let gcols = spec
        .group
        .iter()
        .map(|g| table.column(g))
        .collect::<Result<Vec<_>>>()?;
    let ycols = spec
        .ys
        .iter()
        .map(|(m, b)| {
            Ok((
                table.column(m)?,
                b.map(|b| table.column(b)).transpose()?,
                *m,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    // group key -> (sort key, points)
    let mut groups: BTreeMap<Vec<String>, (Vec<f64>, String, Vec<Point>)> = BTreeMap::new();
    for row in &table.rows {
        if !fcols.iter().all(|(c, v)| same(table.cell(row, *c), v)) {
            continue;
        }
        let x = table.number(row, xc)?;
        for (yc, bc, name) in &ycols {
            let gvals: Vec<String> = gcols
                .iter()
                .map(|&c| table.cell(row, c).to_string())
                .collect();
            let mut label: Vec<String> = spec
                .group
                .iter()
                .zip(&gvals)
                .map(|(g, v)| format!("{g}={}", short(v)))
                .collect();
            if ycols.len() > 1 {
                label.insert(0, name.trim_end_matches("_mean").to_string());
            }
            let mut key = vec![name.to_string()];
            key.extend(gvals.iter().cloned());
            let sort: Vec<f64> = gvals
                .iter()
                .map(|v| v.parse().unwrap_or(f64::NAN))
                .collect();
            let y = table.number(row, *yc)?;
            let w = match bc {
                Some(c) => table.number(row, *c)?,
                None => 0.0,
            };
            let entry = groups
                .entry(key)
                .or_insert_with(|| (sort, label.join(" "), Vec::new()));
            if entry.2.iter().any(|p| p.x == x) {
                return Err(Error::invalid(format!(
                    "several rows share {} = {x} in series `{}`; narrow the table with a filter",
                    spec.x, entry.1
                )));
            }
            entry.2.push(Point {
                x,
                y,
                lo: y - w,
                hi: y + w,
            });
        }
    }
    let mut out: Vec<(Vec<f64>, String, Vec<Point>)> = groups.into_values().collect();
    out.sort_by(|a, b| {
        a.0.iter()
            .zip(&b.0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(out
        .into_iter()
        .map(|(_, label, mut points)| {
            points.sort_by(|a, b| a.x.total_cmp(&b.x));
            Series { label, points }
        })
        .collect())
}

/// Picks one similarity for the error-decomposition figure when the table
/// holds several: the smallest at or above 0.6, else the largest.
fn default_similarity(table: &Table) -> Result<Option<String>> {
    let mut sims = table.numbers("similarity")?;
    sims.sort_by(f64::total_cmp);
    sims.dedup();
    if sims.len() < 2 {
        return Ok(None);
    }
    let pick = sims
        .iter()
        .copied()
        .find(|&s| s >= 0.6)
        .unwrap_or(*sims.last().unwrap());
    Ok(Some(format!("{pick}")))
}

pub fn hamming_histogram(rows: &[TrialRow]) -> Histogram {
    let failed: Vec<&TrialRow> = rows
        .iter()
        .filter(|r| r.classification != Classification::Target)
        .collect();
    let max = failed.iter().map(|r| r.hamming_nearest).max().unwrap_or(0);
    let bin_width = (max + 1).div_ceil(40).max(1);
    let nb = max / bin_width + 1;
    let groups = Classification::ALL
        .into_iter()
        .filter(|&c| c != Classification::Target)
        .filter_map(|c| {
            let mut counts = vec![0usize; nb];
            for r in failed.iter().filter(|r| r.classification == c) {
                counts[r.hamming_nearest / bin_width] += 1;
            }
            counts
                .iter()
                .any(|&n| n > 0)
                .then(|| (c.to_string(), counts))
        })
        .collect();
    Histogram {
        title: "Hamming distance of failed finals to the nearest stored pattern".into(),
        x_label: if bin_width == 1 {
            "hamming distance".into()
        } else {
            format!("hamming distance (bins of {bin_width})")
        },
        y_label: "trials".into(),
        bin_width,
        bins: (0..nb).map(|b| b * bin_width).collect(),
        groups,
    }
}

/// Renders one figure from a condition, trial, curve or audit table.
pub fn figure_svg(table: &Table, fig: Figure, filters: &[Filter]) -> Result<String> {
    let ci = |m: &'static str| -> (&'static str, Option<&'static str>) {
        match m {
            "target_recall_rate" => ("target_recall_rate_mean", Some("target_recall_rate_ci")),
            "avg_steps_to_converge" => (
                "avg_steps_to_converge_mean",
                Some("avg_steps_to_converge_ci"),
            ),
            "other_learned_rate" => ("other_learned_rate_mean", Some("other_learned_rate_ci")),
            "spurious_fixed_point_rate" => (
                "spurious_fixed_point_rate_mean",
                Some("spurious_fixed_point_rate_ci"),
            ),
            "spurious_cycle_rate" => ("spurious_cycle_rate_mean", Some("spurious_cycle_rate_ci")),
            "not_converged_rate" => ("not_converged_rate_mean", Some("not_converged_rate_ci")),
            "cycle_rate" => ("cycle_rate_mean", Some("cycle_rate_ci")),
            _ => unreachable!(),
        }
    };
    let chart = |title: &str,
                 x: &'static str,
                 x_label: &str,
                 ys: Vec<(&'static str, Option<&'static str>)>,
                 y_label: &str,
                 group: Vec<&'static str>,
                 log_y: bool,
                 filters: &[Filter]|
     -> Result<String> {
        let series = build_series(table, &SeriesSpec { x, ys, group }, filters)?;
        Ok(LineChart {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            log_y,
            series,
        }
        .to_svg())
    };
    let recall = vec![ci("target_recall_rate")];
    let steps = vec![ci("avg_steps_to_converge")];
    match fig {
        Figure::F1a => chart(
            "Capacity curve",
            "load",
            "storage load P/N",
            recall,
            "target_recall_rate",
            vec!["similarity"],
            false,
            filters,
        ),
        Figure::F1b => {
            let mut filters = filters.to_vec();
            let mut title = "Error decomposition".to_string();
            if !filters.iter().any(|f| f.column == "similarity") {
                if let Some(s) = default_similarity(table)? {
                    title = format!("Error decomposition at similarity {s}");
                    filters.push(Filter {
                        column: "similarity".into(),
                        value: s,
                    });
                }
            }
            let ys = [
                "other_learned_rate",
                "spurious_fixed_point_rate",
                "spurious_cycle_rate",
                "not_converged_rate",
            ]
            .map(ci)
            .to_vec();
            chart(
                &title,
                "load",
                "storage load P/N",
                ys,
                "rate",
                vec![],
                false,
                &filters,
            )
        }
        Figure::F1c => chart(
            "Noise robustness",
            "similarity",
            "initial similarity",
            recall,
            "target_recall_rate",
            vec!["load"],
            false,
            filters,
        ),
        Figure::F1d => chart(
            "Convergence speed",
            "load",
            "storage load P/N",
            steps,
            "avg_steps_to_converge",
            vec!["similarity"],
            false,
            filters,
        ),
        Figure::F2a => chart(
            "Recall by learning rule",
            "load",
            "storage load P/N",
            recall,
            "target_recall_rate",
            vec!["rule"],
            false,
            filters,
        ),
        Figure::F2b => chart(
            "Training time",
            "load",
            "storage load P/N",
            vec![("train_seconds_mean", Some("train_seconds_sd"))],
            "training time [s] (log scale)",
            vec!["rule"],
            true,
            filters,
        ),
        Figure::F3a => chart(
            "Recall by network size",
            "load",
            "storage load P/N",
            recall,
            "target_recall_rate",
            vec!["n"],
            false,
            filters,
        ),
        Figure::F3b => chart(
            "Convergence speed by network size",
            "load",
            "storage load P/N",
            steps,
            "avg_steps_to_converge",
            vec!["n"],
            false,
            filters,
        ),
        Figure::F4 => chart(
            "Kernel and regularization sensitivity",
            "c",
            "kernel scaling c (gamma = c/N)",
            recall,
            "target_recall_rate",
            vec!["load", "lambda"],
            false,
            filters,
        ),
        Figure::A => chart(
            "Learning curve",
            "update",
            "update",
            vec![("loss", None)],
            "total loss (log scale)",
            vec![],
            true,
            filters,
        ),
        Figure::B => {
            let mut buf = Vec::new();
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(&table.header)
                .map_err(csv_err(Path::new("<table>")))?;
            for r in &table.rows {
                w.write_record(r).map_err(csv_err(Path::new("<table>")))?;
            }
            drop(w);
            for col in TRIAL_HEADER {
                table.column(col)?;
            }
            let rows = read_trial_rows(buf.as_slice())?;
            let rows: Vec<TrialRow> = rows
                .into_iter()
                .filter(|r| {
                    filters.iter().all(|f| {
                        let i = TRIAL_HEADER.iter().position(|h| *h == f.column);
                        i.is_none_or(|i| same(&r.fields()[i], &f.value))
                    })
                })
                .collect();
            Ok(hamming_histogram(&rows).to_svg())
        }
        Figure::C => chart(
            "Cycle and non-convergence rates",
            "load",
            "storage load P/N",
            vec![ci("cycle_rate"), ci("not_converged_rate")],
            "rate",
            vec!["n"],
            false,
            filters,
        ),
    }
}

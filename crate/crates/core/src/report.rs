//! Metrics CSV and SVG line plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::training::StepRecord;

pub const METRICS_COLUMNS: [&str; 8] = [
    "step",
    "objective",
    "loss_sup",
    "loss_unsup",
    "avg_ratio",
    "coverage",
    "dev_denotation_acc",
    "skipped_frac",
];

/// One parsed metrics row. Empty cells are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub objective: String,
    pub loss_sup: f64,
    pub loss_unsup: Option<f64>,
    pub avg_ratio: Option<f64>,
    pub coverage: Option<f64>,
    pub dev_denotation_acc: Option<f64>,
    pub skipped_frac: Option<f64>,
}

impl From<&StepRecord> for MetricsRow {
    fn from(r: &StepRecord) -> Self {
        MetricsRow {
            step: r.step,
            objective: r.objective.clone(),
            loss_sup: r.loss_sup,
            loss_unsup: r.loss_unsup,
            avg_ratio: r.avg_ratio,
            coverage: r.coverage,
            dev_denotation_acc: r.dev_denotation_acc,
            skipped_frac: r.skipped_frac(),
        }
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            self.objective,
            self.loss_sup,
            cell(self.loss_unsup),
            cell(self.avg_ratio),
            cell(self.coverage),
            cell(self.dev_denotation_acc),
            cell(self.skipped_frac)
        )
    }
}

/// Header comment lines, the column line and one line per row.
pub fn metrics_csv<'a>(
    header: &[String],
    rows: impl IntoIterator<Item = &'a MetricsRow>,
) -> String {
    let mut out = String::new();
    for h in header {
        let _ = writeln!(out, "# {h}");
    }
    out.push_str(&METRICS_COLUMNS.join(","));
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

pub fn records_csv(header: &[String], records: &[StepRecord]) -> String {
    let rows: Vec<MetricsRow> = records.iter().map(MetricsRow::from).collect();
    metrics_csv(header, &rows)
}

/// Parses [`metrics_csv`] output into its header comments and rows.
pub fn parse_metrics_csv(text: &str) -> Result<(Vec<String>, Vec<MetricsRow>)> {
    let mut header = Vec::new();
    let mut rows = Vec::new();
    let mut seen_columns = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |message: String| Error::MetricsFormat { line, message };
        if let Some(h) = raw.strip_prefix('#') {
            header.push(h.trim_start().to_string());
            continue;
        }
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if !seen_columns {
            if fields != METRICS_COLUMNS {
                return Err(err(format!(
                    "expected columns {}",
                    METRICS_COLUMNS.join(",")
                )));
            }
            seen_columns = true;
            continue;
        }
        if fields.len() != METRICS_COLUMNS.len() {
            return Err(err(format!(
                "expected {} fields, found {}",
                METRICS_COLUMNS.len(),
                fields.len()
            )));
        }
        let num = |k: usize| -> Result<Option<f64>> {
            let f = fields[k].trim();
            if f.is_empty() {
                return Ok(None);
            }
            f.parse::<f64>()
                .map(Some)
                .map_err(|_| err(format!("bad number {f:?} in column {}", METRICS_COLUMNS[k])))
        };
        rows.push(MetricsRow {
            step: fields[0]
                .trim()
                .parse()
                .map_err(|_| err(format!("bad step {:?}", fields[0])))?,
            objective: fields[1].trim().to_string(),
            loss_sup: num(2)?.ok_or_else(|| err("empty loss_sup".into()))?,
            loss_unsup: num(3)?,
            avg_ratio: num(4)?,
            coverage: num(5)?,
            dev_denotation_acc: num(6)?,
            skipped_frac: num(7)?,
        });
    }
    if !seen_columns {
        return Err(Error::MetricsFormat {
            line: 0,
            message: "missing column line".into(),
        });
    }
    Ok((header, rows))
}

/// Named series of `(x, y)` points.
pub type Series = (String, Vec<(f64, f64)>);

/// Per-objective series of one column, skipping empty cells.
pub fn series_by_objective(
    rows: &[MetricsRow],
    column: impl Fn(&MetricsRow) -> Option<f64>,
) -> Vec<Series> {
    let mut by: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        if let Some(v) = column(r) {
            by.entry(r.objective.as_str())
                .or_default()
                .push((r.step as f64, v));
        }
    }
    by.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// A standalone SVG line chart. Output depends only on the arguments.
pub fn line_plot_svg(title: &str, y_label: &str, series: &[Series], comments: &[String]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (60.0, 150.0, 40.0, 50.0);
    let pts = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in pts {
        if x.is_finite() && y.is_finite() {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    for c in comments {
        let _ = writeln!(s, "<!-- {} -->", c.replace("--", "- -"));
    }
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        left + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let yv = y0 + f * (y1 - y0);
        let xv = x0 + f * (x1 - x0);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{py:.2}" x2="{xr}" y2="{py:.2}" stroke="#ddd"/><text x="{tx}" y="{ty:.2}" text-anchor="end">{yv:.3}</text>"##,
            py = sy(yv),
            xr = left + pw,
            tx = left - 5.0,
            ty = sy(yv) + 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{px:.2}" y="{ty}" text-anchor="middle">{xv:.0}</text>"#,
            px = sx(xv),
            ty = top + ph + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">step</text>"#,
        left + pw / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{c}" text-anchor="middle" transform="rotate(-90 16 {c})">{}</text>"#,
        escape(y_label),
        c = top + ph / 2.0
    );
    for (i, (name, points)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        );
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = left + pw + 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// `(file name, svg)` for the average-ratio and coverage series.
pub fn diagnostic_plots(header: &[String], rows: &[MetricsRow]) -> Vec<(&'static str, String)> {
    vec![
        (
            "avg_ratio.svg",
            line_plot_svg(
                "Average ratio",
                "avg_ratio",
                &series_by_objective(rows, |r| r.avg_ratio),
                header,
            ),
        ),
        (
            "coverage.svg",
            line_plot_svg(
                "Coverage",
                "coverage",
                &series_by_objective(rows, |r| r.coverage),
                header,
            ),
        ),
    ]
}

/// Last defined value of a column, per objective.
pub fn final_values(
    rows: &[MetricsRow],
    column: impl Fn(&MetricsRow) -> Option<f64>,
) -> BTreeMap<String, f64> {
    series_by_objective(rows, column)
        .into_iter()
        .filter_map(|(k, v)| v.last().map(|&(_, y)| (k, y)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: usize, obj: &str, cov: Option<f64>) -> MetricsRow {
        MetricsRow {
            step,
            objective: obj.into(),
            loss_sup: 1.25,
            loss_unsup: cov.map(|c| c * 2.0),
            avg_ratio: cov.map(|c| c + 1.0),
            coverage: cov,
            dev_denotation_acc: None,
            skipped_frac: Some(0.125),
        }
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            row(0, "st", None),
            row(1, "st", Some(0.1)),
            row(2, "gentle", Some(1.0 / 3.0)),
        ];
        let header = vec!["config objective=st seed=3".to_string()];
        let text = metrics_csv(&header, &rows);
        assert!(text.starts_with("# config objective=st seed=3\nstep,objective,loss_sup,"));
        let (h, back) = parse_metrics_csv(&text).unwrap();
        assert_eq!(h, header);
        assert_eq!(back, rows);
    }

    #[test]
    fn rejects_wrong_columns() {
        assert!(parse_metrics_csv("step,objective\n").is_err());
        assert!(parse_metrics_csv("# only comments\n").is_err());
        let bad = format!("{}\n0,st,x,,,,,\n", METRICS_COLUMNS.join(","));
        assert!(matches!(
            parse_metrics_csv(&bad),
            Err(Error::MetricsFormat { line: 2, .. })
        ));
    }

    #[test]
    fn series_group_and_skip_gaps() {
        let rows = vec![
            row(0, "st", None),
            row(1, "st", Some(0.5)),
            row(1, "topk", Some(0.25)),
        ];
        let s = series_by_objective(&rows, |r| r.coverage);
        assert_eq!(
            s,
            vec![
                ("st".into(), vec![(1.0, 0.5)]),
                ("topk".into(), vec![(1.0, 0.25)])
            ]
        );
        assert_eq!(final_values(&rows, |r| r.coverage)["st"], 0.5);
    }

    #[test]
    fn plots_are_deterministic_and_well_formed() {
        let rows = vec![
            row(1, "st", Some(0.5)),
            row(2, "st", Some(0.75)),
            row(2, "a<b", Some(0.1)),
        ];
        let a = diagnostic_plots(&["seed=1".into()], &rows);
        let b = diagnostic_plots(&["seed=1".into()], &rows);
        assert_eq!(a, b);
        let svg = &a[1].1;
        assert!(svg.contains("<!-- seed=1 -->"));
        assert!(svg.contains("a&lt;b"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.trim_end().ends_with("</svg>"));
        let empty = line_plot_svg("t", "y", &[], &[]);
        assert!(empty.contains("</svg>"));
    }
}

// SPDX-License-Identifier: Apache-2.0

//! Static SVG figures from metrics files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use igani_core::evaluation::{MetricsTable, MEAN_BASELINE};

use crate::{write_atomic, CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    MaeVsRate,
    GridHeatmap,
    PerSample,
}

impl std::str::FromStr for PlotKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mae_vs_rate" => Ok(PlotKind::MaeVsRate),
            "grid_heatmap" => Ok(PlotKind::GridHeatmap),
            "per_sample" => Ok(PlotKind::PerSample),
            _ => Err(format!("unknown plot kind {s:?}")),
        }
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Invalid(msg.into())
}

/// Linear map from data to pixel coordinates.
#[derive(Debug, Clone, Copy)]
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let span = if self.x1 > self.x0 { self.x1 - self.x0 } else { 1.0 };
        LEFT + (x - self.x0) / span * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        let span = if self.y1 > self.y0 { self.y1 - self.y0 } else { 1.0 };
        HEIGHT - BOTTOM - (y - self.y0) / span * (HEIGHT - TOP - BOTTOM)
    }

    fn open(&self, svg: &mut String, x_label: &str, y_label: &str) {
        let _ = write!(
            svg,
            r#"<g class="plot" data-x0="{}" data-x1="{}" data-y0="{}" data-y1="{}" data-left="{LEFT}" data-right="{}" data-top="{TOP}" data-bottom="{}">"#,
            self.x0,
            self.x1,
            self.y0,
            self.y1,
            WIDTH - RIGHT,
            HEIGHT - BOTTOM
        );
        let (l, r, t, b) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
        let _ = write!(
            svg,
            r#"<path d="M{l},{t} L{l},{b} L{r},{b}" fill="none" stroke="black"/>"#
        );
        for k in 0..=4 {
            let fx = self.x0 + (self.x1 - self.x0) * k as f64 / 4.0;
            let fy = self.y0 + (self.y1 - self.y0) * k as f64 / 4.0;
            let _ = write!(
                svg,
                r#"<text x="{:.2}" y="{}" font-size="11" text-anchor="middle">{fx:.2}</text>"#,
                self.px(fx),
                b + 16.0
            );
            let _ = write!(
                svg,
                r#"<text x="{}" y="{:.2}" font-size="11" text-anchor="end">{fy:.3}</text>"#,
                l - 6.0,
                self.py(fy) + 4.0
            );
        }
        let _ = write!(
            svg,
            r#"<text x="{:.1}" y="{}" font-size="13" text-anchor="middle">{x_label}</text>"#,
            (l + r) / 2.0,
            HEIGHT - 10.0
        );
        let _ = write!(
            svg,
            r#"<text x="16" y="{:.1}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {:.1})">{y_label}</text>"#,
            (t + b) / 2.0,
            (t + b) / 2.0
        );
    }
}

fn document(width: f64, height: f64, body: &str) -> String {
    format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}"><rect width="100%" height="100%" fill="white"/>{body}</svg>
"#
    )
}

fn legend(svg: &mut String, k: usize, label: &str, color: &str) {
    let y = TOP + 18.0 * k as f64;
    let x = WIDTH - RIGHT + 12.0;
    let _ = write!(
        svg,
        r#"<rect x="{x}" y="{}" width="12" height="12" fill="{color}"/><text x="{}" y="{}" font-size="12">{label}</text>"#,
        y,
        x + 18.0,
        y + 10.0
    );
}

fn star(cx: f64, cy: f64, r: f64) -> String {
    let pts: Vec<String> = (0..10)
        .map(|k| {
            let a = std::f64::consts::PI * (k as f64 / 5.0) - std::f64::consts::FRAC_PI_2;
            let rr = if k % 2 == 0 { r } else { r * 0.45 };
            format!("{:.2},{:.2}", cx + rr * a.cos(), cy + rr * a.sin())
        })
        .collect();
    pts.join(" ")
}

fn load_table(path: &Path) -> CliResult<MetricsTable> {
    let text = std::fs::read_to_string(path)?;
    if text.trim().is_empty() {
        return Err(invalid(format!("{} is empty", path.display())));
    }
    let table = MetricsTable::from_csv(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    if table.is_empty() {
        return Err(invalid(format!("{} has no records", path.display())));
    }
    Ok(table)
}

fn series_label(method: &str, variable: Option<&str>) -> String {
    match variable {
        Some(v) => format!("{method}/{v}"),
        None => method.to_string(),
    }
}

/// Mean MAE per method against the test missing rate, with ±3σ bands and
/// mean-imputation markers.
pub fn mae_vs_rate(table: &MetricsTable) -> CliResult<String> {
    let same_rate = table
        .records
        .iter()
        .any(|r| r.train_missing_rate != r.test_missing_rate);
    let filtered = MetricsTable::new(
        table
            .records
            .iter()
            .filter(|r| !same_rate || r.train_missing_rate == r.test_missing_rate)
            .cloned()
            .collect(),
    );
    let mut series: BTreeMap<String, Vec<(f64, f64, f64)>> = BTreeMap::new();
    for c in filtered.aggregate() {
        series
            .entry(series_label(&c.key.method, c.key.variable.as_deref()))
            .or_default()
            .push((c.key.test_missing_rate, c.mean, c.std));
    }
    if series.is_empty() {
        return Err(invalid("no records with matching train and test rates"));
    }
    for pts in series.values_mut() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let all = series.values().flatten();
    let (mut lo, mut hi) = (0.0f64, f64::NEG_INFINITY);
    let (mut xlo, mut xhi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, m, s) in all {
        lo = lo.min(m - 3.0 * s);
        hi = hi.max(m + 3.0 * s);
        xlo = xlo.min(x);
        xhi = xhi.max(x);
    }
    if hi <= lo {
        hi = lo + 1.0;
    }
    let frame = Frame {
        x0: if xhi > xlo { xlo } else { xlo - 0.1 },
        x1: if xhi > xlo { xhi } else { xhi + 0.1 },
        y0: lo,
        y1: hi + 0.05 * (hi - lo),
    };
    let mut svg = String::new();
    frame.open(&mut svg, "missing rate", "MAE (normalized)");
    let mut k = 0;
    for (label, pts) in &series {
        if label == MEAN_BASELINE {
            continue;
        }
        let color = PALETTE[k % PALETTE.len()];
        let upper: Vec<String> = pts
            .iter()
            .map(|&(x, m, s)| format!("{:.4},{:.4}", frame.px(x), frame.py(m + 3.0 * s)))
            .collect();
        let lower: Vec<String> = pts
            .iter()
            .rev()
            .map(|&(x, m, s)| format!("{:.4},{:.4}", frame.px(x), frame.py(m - 3.0 * s)))
            .collect();
        let _ = write!(
            svg,
            r#"<path class="band" data-series="{label}" d="M{} L{} Z" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            upper.join(" L"),
            lower.join(" L")
        );
        let line: Vec<String> = pts
            .iter()
            .map(|&(x, m, _)| format!("{:.4},{:.4}", frame.px(x), frame.py(m)))
            .collect();
        let _ = write!(
            svg,
            r#"<polyline class="mean" data-series="{label}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.join(" ")
        );
        for &(x, m, s) in pts {
            let _ = write!(
                svg,
                r#"<circle class="point" data-series="{label}" data-rate="{x}" data-mean="{m}" data-std="{s}" cx="{:.4}" cy="{:.4}" r="3" fill="{color}"/>"#,
                frame.px(x),
                frame.py(m)
            );
        }
        legend(&mut svg, k, label, color);
        k += 1;
    }
    if let Some(pts) = series.get(MEAN_BASELINE) {
        for &(x, m, s) in pts {
            let _ = write!(
                svg,
                r#"<polygon class="baseline" data-rate="{x}" data-mean="{m}" data-std="{s}" points="{}" fill="black"/>"#,
                star(frame.px(x), frame.py(m), 7.0)
            );
        }
        legend(&mut svg, k, "mean imputation", "black");
    }
    svg.push_str("</g>");
    Ok(document(WIDTH, HEIGHT, &svg))
}

fn shade(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(255.0, 8.0), lerp(245.0, 48.0), lerp(235.0, 107.0))
}

/// One train-rate × test-rate matrix of mean MAE per method.
pub fn grid_heatmap(table: &MetricsTable) -> CliResult<String> {
    let mut panels: BTreeMap<String, BTreeMap<(u64, u64), f64>> = BTreeMap::new();
    let mut train_rates = Vec::new();
    let mut test_rates = Vec::new();
    let key = |r: f64| (r * 1e6).round() as u64;
    for c in table.aggregate() {
        if c.key.method == MEAN_BASELINE {
            continue;
        }
        let (tr, te) = (c.key.train_missing_rate, c.key.test_missing_rate);
        if !train_rates.contains(&tr) {
            train_rates.push(tr);
        }
        if !test_rates.contains(&te) {
            test_rates.push(te);
        }
        panels
            .entry(series_label(&c.key.method, c.key.variable.as_deref()))
            .or_default()
            .insert((key(tr), key(te)), c.mean);
    }
    if panels.is_empty() {
        return Err(invalid("no method records to draw"));
    }
    train_rates.sort_by(f64::total_cmp);
    test_rates.sort_by(f64::total_cmp);
    let (lo, hi) = panels
        .values()
        .flat_map(|p| p.values())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let cell = 36.0;
    let panel_w = 80.0 + cell * test_rates.len() as f64;
    let panel_h = 70.0 + cell * train_rates.len() as f64;
    let mut svg = String::new();
    for (p, (label, values)) in panels.iter().enumerate() {
        let ox = p as f64 * (panel_w + 20.0);
        let _ = write!(
            svg,
            r#"<g class="panel" data-series="{label}"><text x="{:.1}" y="18" font-size="13" text-anchor="middle">{label}</text>"#,
            ox + 60.0 + cell * test_rates.len() as f64 / 2.0
        );
        for (i, &tr) in train_rates.iter().enumerate() {
            let y = 30.0 + cell * i as f64;
            let _ = write!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{tr:.1}</text>"#,
                ox + 55.0,
                y + cell / 2.0 + 3.0
            );
            for (j, &te) in test_rates.iter().enumerate() {
                let x = ox + 60.0 + cell * j as f64;
                if let Some(&v) = values.get(&(key(tr), key(te))) {
                    let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
                    let _ = write!(
                        svg,
                        r#"<rect class="cell" data-train="{tr}" data-test="{te}" data-mean="{v}" x="{x:.1}" y="{y:.1}" width="{cell}" height="{cell}" fill="{}"/><text x="{:.1}" y="{:.1}" font-size="8" text-anchor="middle" fill="{}">{v:.3}</text>"#,
                        shade(t),
                        x + cell / 2.0,
                        y + cell / 2.0 + 3.0,
                        if t > 0.6 { "white" } else { "black" }
                    );
                }
            }
        }
        for (j, &te) in test_rates.iter().enumerate() {
            let _ = write!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{te:.1}</text>"#,
                ox + 60.0 + cell * j as f64 + cell / 2.0,
                30.0 + cell * train_rates.len() as f64 + 14.0
            );
        }
        let _ = write!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">test missing rate</text><text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">train missing rate</text></g>"#,
            ox + 60.0 + cell * test_rates.len() as f64 / 2.0,
            panel_h - 10.0,
            ox + 14.0,
            30.0 + cell * train_rates.len() as f64 / 2.0,
            ox + 14.0,
            30.0 + cell * train_rates.len() as f64 / 2.0
        );
    }
    let width = panels.len() as f64 * (panel_w + 20.0);
    Ok(document(width, panel_h, &svg))
}

/// `method,row,index,error` rows.
#[derive(Debug, Clone, PartialEq, serde::Deserialize)]
struct SampleRow {
    method: String,
    row: usize,
    index: usize,
    error: f64,
}

/// Log-MAE at each missing index of one sample, with a histogram per method.
pub fn per_sample(text: &str) -> CliResult<String> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| invalid(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers != ["method", "row", "index", "error"] {
        return Err(invalid(format!("per-sample CSV needs columns method,row,index,error, found {headers:?}")));
    }
    let rows: Vec<SampleRow> = rdr
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| invalid(e.to_string()))?;
    if rows.is_empty() {
        return Err(invalid("per-sample CSV has no rows"));
    }
    let mut by_method: BTreeMap<&str, Vec<&SampleRow>> = BTreeMap::new();
    for r in &rows {
        by_method.entry(&r.method).or_default().push(r);
    }
    let floor = 1e-12;
    let logs: Vec<f64> = rows.iter().map(|r| r.error.max(floor).log10()).collect();
    let (lo, hi) = logs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let max_index = rows.iter().map(|r| r.index).max().unwrap_or(0) as f64;
    let frame = Frame {
        x0: 0.0,
        x1: max_index.max(1.0),
        y0: lo.floor(),
        y1: if hi.ceil() > lo.floor() { hi.ceil() } else { lo.floor() + 1.0 },
    };
    let panel_h = HEIGHT + 20.0;
    let mut svg = String::new();
    for (p, (method, pts)) in by_method.iter().enumerate() {
        let color = PALETTE[p % PALETTE.len()];
        let oy = p as f64 * panel_h;
        let _ = write!(svg, r#"<g class="panel" data-series="{method}" transform="translate(0 {oy})">"#);
        frame.open(&mut svg, "feature index", "log10 absolute error");
        for r in pts {
            let x = frame.px(r.index as f64);
            let _ = write!(
                svg,
                r#"<line class="missing" x1="{x:.2}" x2="{x:.2}" y1="{TOP}" y2="{}" stroke="gray" stroke-width="0.5"/>"#,
                HEIGHT - BOTTOM
            );
        }
        for r in pts {
            let _ = write!(
                svg,
                r#"<circle class="error" data-index="{}" data-error="{}" cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                r.index,
                r.error,
                frame.px(r.index as f64),
                frame.py(r.error.max(floor).log10())
            );
        }
        svg.push_str("</g></g>");
        let bins = 10;
        let mut counts = vec![0usize; bins];
        let (emin, emax) = pts
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.error), b.max(r.error)));
        for r in pts {
            let t = if emax > emin { (r.error - emin) / (emax - emin) } else { 0.0 };
            counts[((t * bins as f64) as usize).min(bins - 1)] += 1;
        }
        let top = *counts.iter().max().unwrap_or(&1) as f64;
        let hx = WIDTH + 20.0;
        let hw = 200.0;
        let _ = write!(
            svg,
            r#"<g class="histogram" data-series="{method}" transform="translate({hx} {oy})"><text x="{:.1}" y="{}" font-size="12" text-anchor="middle">{method}: error histogram</text>"#,
            hw / 2.0,
            TOP - 8.0
        );
        for (b, &c) in counts.iter().enumerate() {
            let h = c as f64 / top * (HEIGHT - TOP - BOTTOM);
            let _ = write!(
                svg,
                r#"<rect data-count="{c}" x="{:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="{color}"/>"#,
                b as f64 * hw / bins as f64,
                HEIGHT - BOTTOM - h,
                hw / bins as f64 - 2.0
            );
        }
        let _ = write!(
            svg,
            r#"<text x="0" y="{}" font-size="10">{emin:.3}</text><text x="{hw}" y="{}" font-size="10" text-anchor="end">{emax:.3}</text></g>"#,
            HEIGHT - BOTTOM + 14.0,
            HEIGHT - BOTTOM + 14.0
        );
    }
    Ok(document(WIDTH + 240.0, panel_h * by_method.len() as f64, &svg))
}

/// Renders `kind` from `input` into `out`; nothing is written on failure.
pub fn cmd_plot(input: &Path, kind: PlotKind, out: &Path) -> CliResult<()> {
    let svg = match kind {
        PlotKind::MaeVsRate => mae_vs_rate(&load_table(input)?)?,
        PlotKind::GridHeatmap => grid_heatmap(&load_table(input)?)?,
        PlotKind::PerSample => {
            let text = std::fs::read_to_string(input)?;
            if text.trim().is_empty() {
                return Err(invalid(format!("{} is empty", input.display())));
            }
            per_sample(&text)?
        }
    };
    write_atomic(out, svg.as_bytes())
}

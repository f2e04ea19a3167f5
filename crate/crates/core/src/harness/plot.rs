//! CSV plot data and static SVG renderings. Output bytes depend only on the
//! input values.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::aggregate::{csv_text, fmt_float, linearity_csv, LinearityRow, SaturationTable};
use crate::diagnostics::Histogram;
use crate::error::Result;
use crate::flow::FlowPoint;
use crate::matrix_file::write_atomic;

#[derive(Clone, Copy, Debug, Default)]
pub struct ExportInput<'a> {
    pub saturation: Option<&'a SaturationTable>,
    pub linearity: Option<&'a [LinearityRow]>,
    pub esd: Option<&'a Histogram>,
    pub flow: Option<&'a [FlowPoint]>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;

struct Axes {
    x: (f64, f64),
    y: (f64, f64),
}

impl Axes {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let widen = |(lo, hi): (f64, f64)| {
            if hi > lo {
                (lo, hi)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        };
        Axes { x: widen(x), y: widen(y) }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Linear blend from dark blue at `t = 0` to yellow at `t = 1`.
fn color(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(40.0, 250.0), lerp(40.0, 200.0), lerp(140.0, 30.0))
}

fn document(title: &str, xlabel: &str, ylabel: &str, axes: &Axes, body: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{title}</text>"#, WIDTH / 2.0);
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(s, r#"<path d="M{l:.2},{t:.2} L{l:.2},{b:.2} L{r:.2},{b:.2}" fill="none" stroke="black"/>"#);
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let xv = axes.x.0 + f * (axes.x.1 - axes.x.0);
        let yv = axes.y.0 + f * (axes.y.1 - axes.y.0);
        let (x, y) = (axes.px(xv), axes.py(yv));
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{b:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, b + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, b + 18.0, tick(xv));
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{l:.2}" y2="{y:.2}" stroke="black"/>"#, l - 5.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, l - 8.0, y + 4.0, tick(yv));
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{xlabel}</text>"#, WIDTH / 2.0, HEIGHT - 18.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{ylabel}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    s.push_str(body);
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e4).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

pub fn histogram_svg(title: &str, xlabel: &str, h: &Histogram) -> String {
    let top = h.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let axes = Axes::new((h.lo, h.hi), (0.0, top));
    let mut body = String::new();
    for (k, &c) in h.counts.iter().enumerate() {
        let (a, b) = h.bin_edges(k);
        let (x0, x1) = (axes.px(a), axes.px(b));
        let (y0, y1) = (axes.py(c as f64), axes.py(0.0));
        let _ = writeln!(
            body,
            r##"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="#4060a0" stroke="white"/>"##,
            (x1 - x0).max(0.0),
            (y1 - y0).max(0.0)
        );
    }
    document(title, xlabel, "count", &axes, &body)
}

/// Points `(x, y, half-height of error bar, color parameter)`.
pub fn scatter_svg(title: &str, xlabel: &str, ylabel: &str, points: &[(f64, f64, f64, f64)]) -> String {
    let axes = Axes::new(
        range(points.iter().map(|p| p.0)),
        range(points.iter().flat_map(|p| [p.1 - p.2, p.1 + p.2])),
    );
    let mut body = String::new();
    for &(x, y, e, t) in points {
        let (cx, cy) = (axes.px(x), axes.py(y));
        let c = color(t);
        if e > 0.0 {
            let _ = writeln!(
                body,
                r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="{c}"/>"#,
                axes.py(y - e),
                axes.py(y + e)
            );
        }
        let _ = writeln!(body, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="3" fill="{c}"/>"#);
    }
    document(title, xlabel, ylabel, &axes, &body)
}

pub fn lines_svg(title: &str, xlabel: &str, ylabel: &str, series: &[Vec<(f64, f64)>]) -> String {
    let axes = Axes::new(
        range(series.iter().flatten().map(|p| p.0)),
        range(series.iter().flatten().map(|p| p.1)),
    );
    let mut body = String::new();
    let k = series.len().max(2) - 1;
    for (j, s) in series.iter().enumerate() {
        let mut d = String::new();
        for (i, &(x, y)) in s.iter().enumerate() {
            let _ = write!(d, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, axes.px(x), axes.py(y));
        }
        let _ = writeln!(
            body,
            r#"<path d="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            d.trim_end(),
            color(j as f64 / k as f64)
        );
    }
    document(title, xlabel, ylabel, &axes, &body)
}

/// Histogram of `ΣD/rank` over `[lo, 1]`, with `lo` the minimum rounded down
/// to a hundredth.
pub fn saturation_histogram(table: &SaturationTable, bins: usize) -> Histogram {
    let ratios: Vec<f64> = table.rows.iter().filter_map(|r| r.per_rank).collect();
    let min = ratios.iter().copied().fold(1.0, f64::min);
    let mut lo = (min * 100.0).floor() / 100.0;
    if lo >= 1.0 {
        lo = 0.99;
    }
    let mut h = Histogram {
        lo,
        hi: 1.0,
        counts: vec![0; bins.max(1)],
    };
    for r in ratios {
        let k = h.bin_of(r);
        h.counts[k] += 1;
    }
    h
}

fn histogram_csv(h: &Histogram) -> String {
    csv_text(
        &["lo", "hi", "count"],
        (0..h.counts.len()).map(|k| {
            let (a, b) = h.bin_edges(k);
            vec![fmt_float(Some(a)), fmt_float(Some(b)), h.counts[k].to_string()]
        }),
    )
}

/// Eigenvalues with multiplicity, largest first, one series per rank.
fn flow_series(points: &[FlowPoint]) -> Vec<Vec<(f64, f64)>> {
    let mut series: Vec<Vec<(f64, f64)>> = Vec::new();
    for p in points {
        let mut lams: Vec<f64> = p
            .groups
            .iter()
            .flat_map(|&(l, d)| std::iter::repeat_n(l, d))
            .collect();
        lams.sort_by(|a, b| b.total_cmp(a));
        for (k, l) in lams.into_iter().enumerate() {
            if series.len() <= k {
                series.push(Vec::new());
            }
            series[k].push((p.t, l));
        }
    }
    series
}

fn flow_csv(points: &[FlowPoint]) -> String {
    csv_text(
        &["t", "rank_index", "lambda", "max_commutator"],
        points.iter().flat_map(|p| {
            let mut lams: Vec<f64> = p
                .groups
                .iter()
                .flat_map(|&(l, d)| std::iter::repeat_n(l, d))
                .collect();
            lams.sort_by(|a, b| b.total_cmp(a));
            let comm = p.commutators.iter().copied().fold(0.0f64, f64::max);
            lams.into_iter()
                .enumerate()
                .map(move |(k, l)| vec![fmt_float(Some(p.t)), k.to_string(), fmt_float(Some(l)), fmt_float(Some(comm))])
        }),
    )
}

/// Write CSV files, and SVG renderings when `svg` is set, for every present
/// input. Returns the written paths.
pub fn export_plot_data(input: &ExportInput, dir: &Path, svg: bool) -> Result<Vec<PathBuf>> {
    let mut files: Vec<(&str, String)> = Vec::new();
    if let Some(t) = input.saturation {
        files.push(("saturation.csv", t.to_csv()));
        let h = saturation_histogram(t, 20);
        files.push(("saturation_histogram.csv", histogram_csv(&h)));
        if svg {
            files.push(("saturation.svg", histogram_svg("Capacity saturation", "sum D / rank", &h)));
        }
    }
    if let Some(rows) = input.linearity {
        files.push(("linearity.csv", linearity_csv(rows)));
        if svg {
            let pts: Vec<_> = rows.iter().map(|r| (r.localization, r.r2, r.abs_error, r.mean_sparsity)).collect();
            files.push((
                "linearity.svg",
                scatter_svg("Projective linearity", "cluster localization", "R squared (bars: |k lambda - 1|)", &pts),
            ));
        }
    }
    if let Some(h) = input.esd {
        files.push(("esd.csv", histogram_csv(h)));
        if svg {
            files.push(("esd.svg", histogram_svg("Empirical spectral density", "eigenvalue", h)));
        }
    }
    if let Some(points) = input.flow {
        files.push(("flow.csv", flow_csv(points)));
        if svg {
            files.push(("flow.svg", lines_svg("Gram flow eigenvalues", "t", "eigenvalue", &flow_series(points))));
        }
    }
    let mut written = Vec::with_capacity(files.len());
    for (name, text) in files {
        let path = dir.join(name);
        write_atomic(&path, text.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

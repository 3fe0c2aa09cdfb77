//! CSV and standalone SVG output for record curves.

use std::fmt::Write as _;
use std::path::Path;

use super::record::{write_atomic, Curve, ResultRecord};
use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlotOutput {
    /// Written files, relative to the output directory.
    pub files: Vec<String>,
    pub note: Option<String>,
}

/// Maps data coordinates into the SVG plotting area.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AxisTransform {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
}

impl AxisTransform {
    pub fn for_curve(curve: &Curve) -> Self {
        if curve.unit_axes {
            return Self {
                x_range: (0.0, 1.0),
                y_range: (0.0, 1.0),
            };
        }
        let pts = curve.series.iter().flat_map(|s| s.points.iter());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts.filter(|(x, y)| x.is_finite() && y.is_finite()) {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        Self {
            x_range: padded(x0, x1),
            y_range: padded(y0, y1),
        }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let w = WIDTH - LEFT - RIGHT;
        let h = HEIGHT - TOP - BOTTOM;
        let px = LEFT + (x - self.x_range.0) / (self.x_range.1 - self.x_range.0) * w;
        let py = TOP + h - (y - self.y_range.0) / (self.y_range.1 - self.y_range.0) * h;
        (px, py)
    }
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !lo.is_finite() || !hi.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 * lo.abs().max(1.0) {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// `series,x,y` rows; values print in shortest round-trip form.
pub fn curve_csv(curve: &Curve) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record(["series", "x", "y"]).map_err(err)?;
    for s in &curve.series {
        for (x, y) in &s.points {
            w.write_record([s.label.clone(), x.to_string(), y.to_string()]).map_err(err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

/// Parses [`curve_csv`] output back into `(series, x, y)` triples.
pub fn parse_curve_csv(text: &str) -> Result<Vec<(String, f64, f64)>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let num = |i: usize| {
            rec.get(i)
                .unwrap_or("")
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("curve CSV: {e}")))
        };
        out.push((rec.get(0).unwrap_or("").to_string(), num(1)?, num(2)?));
    }
    Ok(out)
}

pub fn curve_svg(curve: &Curve) -> String {
    let t = AxisTransform::for_curve(curve);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{}</text>",
        LEFT + (WIDTH - LEFT - RIGHT) / 2.0,
        escape(&curve.title)
    );
    let (ax0, ay0) = t.apply(t.x_range.0, t.y_range.0);
    let (ax1, ay1) = t.apply(t.x_range.1, t.y_range.1);
    let _ = writeln!(
        s,
        "<g stroke=\"black\" stroke-width=\"1\"><line x1=\"{ax0}\" y1=\"{ay0}\" x2=\"{ax1}\" y2=\"{ay0}\"/><line x1=\"{ax0}\" y1=\"{ay0}\" x2=\"{ax0}\" y2=\"{ay1}\"/></g>"
    );
    let _ = writeln!(s, "<g font-family=\"sans-serif\" font-size=\"11\">");
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = t.x_range.0 + f * (t.x_range.1 - t.x_range.0);
        let yv = t.y_range.0 + f * (t.y_range.1 - t.y_range.0);
        let (px, _) = t.apply(xv, t.y_range.0);
        let (_, py) = t.apply(t.x_range.0, yv);
        let _ = writeln!(
            s,
            "<line x1=\"{px}\" y1=\"{ay0}\" x2=\"{px}\" y2=\"{}\" stroke=\"black\"/><text x=\"{px}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            ay0 + 4.0,
            ay0 + 17.0,
            tick(xv)
        );
        let _ = writeln!(
            s,
            "<line x1=\"{}\" y1=\"{py}\" x2=\"{ax0}\" y2=\"{py}\" stroke=\"black\"/><text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
            ax0 - 4.0,
            ax0 - 7.0,
            py + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{}</text>",
        (ax0 + ax1) / 2.0,
        HEIGHT - 12.0,
        escape(&curve.x_label)
    );
    let _ = writeln!(
        s,
        "<text x=\"18\" y=\"{0}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 18 {0})\">{1}</text>",
        (ay0 + ay1) / 2.0,
        escape(&curve.y_label)
    );
    for (i, series) in curve.series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = series
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| {
                let (px, py) = t.apply(x, y);
                format!("{px:.3},{py:.3}")
            })
            .collect();
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
            pts.join(" ")
        );
        let ly = TOP + 14.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            s,
            "<line x1=\"{lx}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/><text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&series.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e4).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{}", (v * 1000.0).round() / 1000.0)
    }
}

/// Writes `<name>.csv` and `<name>.svg` for every curve of `record` into `dir`.
pub fn emit_plots(record: &ResultRecord, dir: &Path) -> Result<PlotOutput> {
    let mut out = PlotOutput::default();
    let drawable: Vec<&Curve> = record
        .curves
        .iter()
        .filter(|c| c.series.iter().any(|s| !s.points.is_empty()))
        .collect();
    if drawable.is_empty() {
        out.note = Some("record has no curve data; no plots written".into());
        return Ok(out);
    }
    for curve in drawable {
        let csv_name = format!("{}.csv", curve.name);
        let svg_name = format!("{}.svg", curve.name);
        write_atomic(&dir.join(&csv_name), curve_csv(curve)?.as_bytes())?;
        write_atomic(&dir.join(&svg_name), curve_svg(curve).as_bytes())?;
        out.files.push(csv_name);
        out.files.push(svg_name);
    }
    Ok(out)
}

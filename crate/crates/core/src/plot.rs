//! Self-contained SVG charts: rank scatter, weight curve and per-case bars.

use std::fmt::Write as _;

use crate::report::{fmt6, TOOL_NAME, TOOL_VERSION};
use crate::weights::WeightModel;

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 320.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 32.0;
const MARGIN_B: f64 = 48.0;
const MUTED: &str = "#9aa5b1";
const ACCENT: &str = "#111111";
const LINE: &str = "#2b6cb0";
const AXIS: &str = "#444";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Linear map from data range to a panel's plotting area.
#[derive(Debug, Clone, Copy)]
struct Frame {
    x0: f64,
    y0: f64,
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn new(offset_x: f64, (x_min, x_max): (f64, f64), (y_min, y_max): (f64, f64)) -> Self {
        let pad = |lo: f64, hi: f64| if hi > lo { (lo, hi) } else { (lo - 1.0, hi + 1.0) };
        let (x_min, x_max) = pad(x_min, x_max);
        let (y_min, y_max) = pad(y_min, y_max);
        Self {
            x0: offset_x,
            y0: 0.0,
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }

    fn px(&self, x: f64) -> f64 {
        self.x0 + MARGIN_L + (x - self.x_min) / (self.x_max - self.x_min) * (PANEL_W - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        self.y0 + PANEL_H - MARGIN_B - (y - self.y_min) / (self.y_max - self.y_min) * (PANEL_H - MARGIN_T - MARGIN_B)
    }

    fn axes(&self, out: &mut String, title: &str, x_label: &str, y_label: &str) {
        let (l, r) = (self.px(self.x_min), self.px(self.x_max));
        let (b, t) = (self.py(self.y_min), self.py(self.y_max));
        let _ = writeln!(
            out,
            r#"<rect x="{l:.2}" y="{t:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="{AXIS}"/>"#,
            r - l,
            b - t
        );
        for k in 0..=4 {
            let fx = self.x_min + (self.x_max - self.x_min) * k as f64 / 4.0;
            let fy = self.y_min + (self.y_max - self.y_min) * k as f64 / 4.0;
            let (x, y) = (self.px(fx), self.py(fy));
            let _ = writeln!(
                out,
                r#"<line x1="{x:.2}" y1="{b:.2}" x2="{x:.2}" y2="{:.2}" stroke="{AXIS}"/><text x="{x:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"#,
                b + 4.0,
                b + 16.0,
                fmt6(fx)
            );
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{y:.2}" x2="{l:.2}" y2="{y:.2}" stroke="{AXIS}"/><text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"#,
                l - 4.0,
                l - 6.0,
                y + 3.0,
                fmt6(fy)
            );
        }
        let cx = (l + r) / 2.0;
        let _ = writeln!(
            out,
            r#"<text x="{cx:.2}" y="{:.2}" font-size="13" text-anchor="middle" font-weight="bold">{}</text>"#,
            self.y0 + 20.0,
            escape(title)
        );
        let _ = writeln!(
            out,
            r#"<text x="{cx:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
            b + 34.0,
            escape(x_label)
        );
        let cy = (t + b) / 2.0;
        let lx = self.x0 + 14.0;
        let _ = writeln!(
            out,
            r#"<text x="{lx:.2}" y="{cy:.2}" font-size="11" text-anchor="middle" transform="rotate(-90 {lx:.2} {cy:.2})">{}</text>"#,
            escape(y_label)
        );
    }
}

fn document(panels: usize, body: &str) -> String {
    let w = PANEL_W * panels as f64;
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{PANEL_H}\" viewBox=\"0 0 {w} {PANEL_H}\" font-family=\"sans-serif\">\n<!-- {TOOL_NAME} {TOOL_VERSION} -->\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Original rank (x) against leave-one-out rank (y) for every change;
/// `highlight` points are drawn on top in black.
pub fn rank_scatter_panel(out: &mut String, offset_x: f64, points: &[(usize, usize)], highlight: &[(usize, usize)], m: usize) {
    let y_max = points
        .iter()
        .chain(highlight)
        .map(|p| p.1)
        .max()
        .unwrap_or(m)
        .max(m) as f64;
    let frame = Frame::new(offset_x, (1.0, m as f64), (1.0, y_max));
    frame.axes(out, "Rank changes", "original rank", "leave-one-out rank");
    let _ = writeln!(
        out,
        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{MUTED}" stroke-dasharray="4 3"/>"#,
        frame.px(1.0),
        frame.py(1.0),
        frame.px(m as f64),
        frame.py(m as f64)
    );
    for (set, color, r) in [(points, MUTED, 1.6), (highlight, ACCENT, 2.4)] {
        for &(x, y) in set {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="{r}" fill="{color}"/>"#,
                frame.px(x as f64),
                frame.py(y as f64)
            );
        }
    }
}

/// Weight curve over `1..=m`, with the highlighted case's leave-one-out
/// weights drawn at their original ranks and joined to the curve.
pub fn weight_curve_panel(
    out: &mut String,
    offset_x: f64,
    model: &WeightModel,
    highlight: &[(usize, usize)],
    fixed: Option<(&str, &[f64])>,
) {
    let m = model.m();
    let curve = model.curve();
    let fixed_norm: Option<(&str, Vec<f64>)> = fixed.map(|(name, w)| {
        let total: f64 = w.iter().sum();
        (name, w.iter().map(|v| v / total).collect())
    });
    let (mut lo, mut hi) = range(
        curve
            .iter()
            .copied()
            .chain(highlight.iter().map(|&(_, y)| model.weight(y))),
    );
    if let Some((_, w)) = &fixed_norm {
        let (a, b) = range(w.iter().copied());
        lo = lo.min(a);
        hi = hi.max(b);
    }
    let frame = Frame::new(offset_x, (1.0, m as f64), (lo.min(0.0), hi));
    frame.axes(
        out,
        &format!("Weights (kappa = {})", fmt6(model.kappa())),
        "rank",
        "weight",
    );
    let path = |values: &[f64]| {
        values
            .iter()
            .enumerate()
            .map(|(k, &w)| format!("{:.2},{:.2}", frame.px((k + 1) as f64), frame.py(w)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{LINE}" stroke-width="1.5"/>"#,
        path(&curve)
    );
    if let Some((name, w)) = &fixed_norm {
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{MUTED}" stroke-dasharray="5 3"/><text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{} (normalized)</text>"#,
            path(w),
            frame.px(m as f64) - 4.0,
            frame.py(hi) + 12.0,
            escape(name)
        );
    }
    for &(x, y) in highlight {
        let (px, on_curve, off) = (frame.px(x as f64), frame.py(model.weight(x)), frame.py(model.weight(y)));
        let _ = writeln!(
            out,
            r#"<line x1="{px:.2}" y1="{on_curve:.2}" x2="{px:.2}" y2="{off:.2}" stroke="{ACCENT}"/><circle cx="{px:.2}" cy="{off:.2}" r="2.2" fill="{ACCENT}"/>"#
        );
    }
}

/// One bar per case; `highlight` is drawn in black.
pub fn bars_panel(out: &mut String, offset_x: f64, title: &str, values: &[f64], highlight: Option<usize>) {
    let n = values.len();
    let (_, hi) = range(values.iter().copied());
    let frame = Frame::new(offset_x, (0.5, n as f64 + 0.5), (0.0, hi.max(0.0)));
    frame.axes(out, title, "case", "standardized score");
    let width = (frame.px(1.5) - frame.px(0.5)) * 0.8;
    for (i, &v) in values.iter().enumerate() {
        let x = frame.px((i + 1) as f64) - width / 2.0;
        let (top, base) = (frame.py(v.max(0.0)), frame.py(0.0));
        let color = if Some(i) == highlight { ACCENT } else { MUTED };
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{top:.2}" width="{width:.2}" height="{:.2}" fill="{color}"/>"#,
            (base - top).max(0.0)
        );
    }
    if let Some(i) = highlight {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"#,
            frame.px((i + 1) as f64),
            frame.py(values[i].max(0.0)) - 4.0,
            i + 1
        );
    }
}

pub fn rank_scatter(points: &[(usize, usize)], highlight: &[(usize, usize)], m: usize) -> String {
    let mut body = String::new();
    rank_scatter_panel(&mut body, 0.0, points, highlight, m);
    document(1, &body)
}

pub fn weight_curve(model: &WeightModel, highlight: &[(usize, usize)], fixed: Option<(&str, &[f64])>) -> String {
    let mut body = String::new();
    weight_curve_panel(&mut body, 0.0, model, highlight, fixed);
    document(1, &body)
}

pub fn influence_bars(title: &str, values: &[f64], highlight: Option<usize>) -> String {
    let mut body = String::new();
    bars_panel(&mut body, 0.0, title, values, highlight);
    document(1, &body)
}

/// Side-by-side bar panels, one per `(title, values, highlight)`.
pub fn bar_panels(panels: &[(&str, &[f64], Option<usize>)]) -> String {
    let mut body = String::new();
    for (k, (title, values, highlight)) in panels.iter().enumerate() {
        bars_panel(&mut body, PANEL_W * k as f64, title, values, *highlight);
    }
    document(panels.len(), &body)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documents_are_well_formed() {
        let model = WeightModel::new(0.02, 50).unwrap();
        let rr: Vec<f64> = (1..=50).map(|r| 1.0 / r as f64).collect();
        for svg in [
            rank_scatter(&[(1, 2), (2, 1)], &[(3, 7)], 50),
            weight_curve(&model, &[(3, 7)], Some(("rr", &rr))),
            influence_bars("R", &[0.5, 3.0, 1.0], Some(1)),
            bar_panels(&[("a", &[1.0, 2.0], None), ("b", &[2.0, 1.0], Some(0))]),
        ] {
            assert!(svg.starts_with("<svg"));
            assert!(svg.trim_end().ends_with("</svg>"));
            assert!(!svg.contains("NaN"));
            assert_eq!(svg.matches("<svg").count(), 1);
        }
    }

    #[test]
    fn labels_are_escaped() {
        let svg = influence_bars("a<b & c", &[1.0, 2.0], None);
        assert!(svg.contains("a&lt;b &amp; c"));
    }

    #[test]
    fn flat_values_do_not_divide_by_zero() {
        let svg = influence_bars("flat", &[0.0, 0.0, 0.0], None);
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }
}

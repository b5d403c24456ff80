//! Standalone SVG rendering of score/accuracy scatter plots and GMM clusters.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::gmm::EllipseRecord;
use crate::report::{MeasureReport, Report};

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Linear map from data ranges onto the plotting area.
#[derive(Debug, Clone, Copy)]
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        Self {
            x: padded_range(xs),
            y: padded_range(ys),
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }

    fn scale_x(&self) -> f64 {
        (WIDTH - 2.0 * MARGIN) / (self.x.1 - self.x.0)
    }

    fn scale_y(&self) -> f64 {
        (HEIGHT - 2.0 * MARGIN) / (self.y.1 - self.y.0)
    }
}

fn padded_range(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
        (lo.min(x), hi.max(x))
    });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let span = hi - lo;
    if span <= 1e-12 * lo.abs().max(1.0) {
        let w = 0.5 * lo.abs().max(1.0);
        return (lo - w, hi + w);
    }
    (lo - 0.08 * span, hi + 0.08 * span)
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, "<title>{}</title>", escape(title));
    let _ = writeln!(
        out,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
}

fn axes(out: &mut String, frame: &Frame, xlabel: &str, ylabel: &str) {
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        out,
        r#"<path d="M{l:.3} {t:.3} L{l:.3} {b:.3} L{r:.3} {b:.3}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = frame.x.0 + f * (frame.x.1 - frame.x.0);
        let yv = frame.y.0 + f * (frame.y.1 - frame.y.0);
        let (xp, yp) = (frame.px(xv), frame.py(yv));
        let _ = writeln!(
            out,
            r#"<line x1="{xp:.3}" y1="{b:.3}" x2="{xp:.3}" y2="{:.3}" stroke="black"/><text x="{xp:.3}" y="{:.3}" text-anchor="middle">{}</text>"#,
            b + 4.0,
            b + 18.0,
            tick(xv)
        );
        let _ = writeln!(
            out,
            r#"<line x1="{:.3}" y1="{yp:.3}" x2="{l:.3}" y2="{yp:.3}" stroke="black"/><text x="{:.3}" y="{:.3}" text-anchor="end">{}</text>"#,
            l - 4.0,
            l - 6.0,
            yp + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.3}" y="{:.3}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0,
        escape(xlabel)
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.3}" text-anchor="middle" transform="rotate(-90 14 {:.3})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(ylabel)
    );
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e4).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// Scatter of aggregate score against test accuracy for one measure, with
/// the report's least-squares line when present.
pub fn measure_svg(m: &MeasureReport) -> String {
    let points: Vec<(&str, f64, f64)> = m
        .models
        .iter()
        .filter_map(|p| {
            p.test_accuracy
                .map(|a| (p.model_id.as_str(), p.aggregate, a))
        })
        .collect();
    let frame = Frame::fit(points.iter().map(|p| p.1), points.iter().map(|p| p.2));
    let mut out = String::new();
    header(&mut out, &format!("{} vs test accuracy", m.measure));
    axes(&mut out, &frame, &m.measure, "test accuracy");
    if let (Some(slope), Some(intercept)) = (m.slope, m.intercept) {
        let (x0, x1) = frame.x;
        let _ = writeln!(
            out,
            r##"<line class="fit" x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="#555555" stroke-dasharray="4 3"/>"##,
            frame.px(x0),
            frame.py(slope * x0 + intercept),
            frame.px(x1),
            frame.py(slope * x1 + intercept)
        );
    }
    let r2 = m
        .r_squared
        .map_or_else(|| "n/a".to_string(), |r| format!("{r:.3}"));
    let _ = writeln!(
        out,
        r#"<text x="{:.3}" y="{:.3}" text-anchor="end">R² = {r2}</text>"#,
        WIDTH - MARGIN,
        MARGIN - 12.0
    );
    for (id, x, y) in &points {
        let _ = writeln!(
            out,
            r##"<circle class="model" cx="{:.3}" cy="{:.3}" r="4" fill="#1f77b4"><title>{}</title></circle>"##,
            frame.px(*x),
            frame.py(*y),
            escape(id)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Writes `<measure>.svg` for every measure in the report.
pub fn write_report_plots(report: &Report, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    report
        .measures
        .iter()
        .map(|m| {
            let path = dir.join(format!("{}.svg", m.measure));
            fs::write(&path, measure_svg(m)).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

/// 2-D scatter of labelled points with one-sigma ellipses per component.
pub fn cluster_svg(
    title: &str,
    points: &[([f64; 2], usize)],
    ellipses: &[EllipseRecord],
) -> String {
    let xs = points.iter().map(|p| p.0[0]).chain(
        ellipses
            .iter()
            .flat_map(|e| [e.center[0] - e.semi_axes[0], e.center[0] + e.semi_axes[0]]),
    );
    let ys = points.iter().map(|p| p.0[1]).chain(
        ellipses
            .iter()
            .flat_map(|e| [e.center[1] - e.semi_axes[0], e.center[1] + e.semi_axes[0]]),
    );
    let frame = Frame::fit(
        xs.collect::<Vec<_>>().into_iter(),
        ys.collect::<Vec<_>>().into_iter(),
    );
    let colour = |c: usize| PALETTE[c % PALETTE.len()];
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &frame, "component 1", "component 2");
    for (p, c) in points {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.3}" cy="{:.3}" r="2" fill="{}" fill-opacity="0.6"/>"#,
            frame.px(p[0]),
            frame.py(p[1]),
            colour(*c)
        );
    }
    for e in ellipses {
        // svg y grows downward, so the rotation flips sign
        let _ = writeln!(
            out,
            r#"<ellipse cx="{:.3}" cy="{:.3}" rx="{:.3}" ry="{:.3}" transform="rotate({:.3} {:.3} {:.3})" fill="none" stroke="{}" stroke-width="{:.3}"/>"#,
            frame.px(e.center[0]),
            frame.py(e.center[1]),
            e.semi_axes[0] * frame.scale_x(),
            e.semi_axes[1] * frame.scale_y(),
            -e.angle.to_degrees(),
            frame.px(e.center[0]),
            frame.py(e.center[1]),
            colour(e.class_id),
            1.0 + 2.0 * e.weight
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::ModelReport;
    use serde_json::Map;

    fn attr(tag: &str, name: &str) -> f64 {
        let key = format!(" {name}=\"");
        let start = tag.find(&key).unwrap() + key.len();
        let end = start + tag[start..].find('"').unwrap();
        tag[start..end].parse().unwrap()
    }

    fn two_point() -> MeasureReport {
        let model = |id: &str, score: f64, acc: f64| ModelReport {
            model_id: id.into(),
            aggregate: score,
            per_layer: Map::new(),
            test_accuracy: Some(acc),
        };
        // exact fit through (2, 0.8) and (5, 0.4)
        let slope = -0.4 / 3.0;
        MeasureReport {
            measure: "sv_count".into(),
            r_squared: Some(1.0),
            slope: Some(slope),
            intercept: Some(0.8 - 2.0 * slope),
            models: vec![model("a<1>", 2.0, 0.8), model("b&2", 5.0, 0.4)],
        }
    }

    #[test]
    fn fit_line_passes_through_both_markers() {
        let svg = measure_svg(&two_point());
        let line = svg.lines().find(|l| l.contains("class=\"fit\"")).unwrap();
        let (x1, y1, x2, y2) = (
            attr(line, "x1"),
            attr(line, "y1"),
            attr(line, "x2"),
            attr(line, "y2"),
        );
        let markers: Vec<&str> = svg
            .lines()
            .filter(|l| l.contains("class=\"model\""))
            .collect();
        assert_eq!(markers.len(), 2);
        for m in markers {
            let (cx, cy) = (attr(m, "cx"), attr(m, "cy"));
            let on_line = y1 + (y2 - y1) * (cx - x1) / (x2 - x1);
            assert!((cy - on_line).abs() < 0.01, "{cy} vs {on_line}");
        }
        assert!(svg.contains("R² = 1.000"));
        assert!(svg.contains("a&lt;1&gt;") && svg.contains("b&amp;2"));
    }

    #[test]
    fn missing_fit_draws_no_line() {
        let mut m = two_point();
        m.slope = None;
        m.r_squared = None;
        let svg = measure_svg(&m);
        assert!(!svg.contains("class=\"fit\""));
        assert!(svg.contains("R² = n/a"));
    }

    #[test]
    fn constant_scores_still_render() {
        let mut m = two_point();
        for p in &mut m.models {
            p.aggregate = 3.0;
        }
        assert!(!measure_svg(&m).contains("NaN"));
    }
}

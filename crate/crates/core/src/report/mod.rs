//! Minimal native SVG plots. CSV outputs are the source of truth; these are
//! for eyeballing.

use std::fmt::Write;

const W: f64 = 720.0;
const H: f64 = 480.0;
const MARGIN: f64 = 64.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Debug, Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = (hi - lo) * 0.05;
        Self {
            lo: lo - pad,
            hi: hi + pad,
            log,
        }
    }

    fn unit(&self, v: f64) -> f64 {
        let v = if self.log { v.max(f64::MIN_POSITIVE).log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            (self.lo.ceil() as i32..=self.hi.floor() as i32)
                .map(|e| 10f64.powi(e))
                .collect()
        } else {
            (0..=4)
                .map(|i| self.lo + (self.hi - self.lo) * i as f64 / 4.0)
                .collect()
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.0e}")
    } else {
        format!("{v:.3}")
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    }
}

struct Frame {
    x: Axis,
    y: Axis,
    svg: String,
}

impl Frame {
    fn new(title: &str, x_label: &str, y_label: &str, x: Axis, y: Axis) -> Self {
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            W / 2.0,
            escape(title)
        );
        let _ = writeln!(
            svg,
            r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - 2.0 * MARGIN,
            H - 2.0 * MARGIN
        );
        let mut f = Frame { x, y, svg };
        for t in x.ticks() {
            let px = f.px(t);
            let _ = writeln!(
                f.svg,
                r##"<line x1="{px:.1}" y1="{}" x2="{px:.1}" y2="{MARGIN}" stroke="#ddd"/><text x="{px:.1}" y="{}" text-anchor="middle">{}</text>"##,
                H - MARGIN,
                H - MARGIN + 16.0,
                fmt_tick(t)
            );
        }
        for t in y.ticks() {
            let py = f.py(t);
            let _ = writeln!(
                f.svg,
                r##"<line x1="{MARGIN}" y1="{py:.1}" x2="{}" y2="{py:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{}</text>"##,
                W - MARGIN,
                MARGIN - 6.0,
                py + 4.0,
                fmt_tick(t)
            );
        }
        let _ = writeln!(
            f.svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            W / 2.0,
            H - 16.0,
            escape(x_label)
        );
        let _ = writeln!(
            f.svg,
            r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            escape(y_label)
        );
        f
    }

    fn px(&self, v: f64) -> f64 {
        MARGIN + self.x.unit(v) * (W - 2.0 * MARGIN)
    }

    fn py(&self, v: f64) -> f64 {
        H - MARGIN - self.y.unit(v) * (H - 2.0 * MARGIN)
    }

    fn finish(mut self) -> String {
        self.svg.push_str("</svg>\n");
        self.svg
    }
}

/// Named polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Line plot with a symlog-style x axis: non-positive x values (such as a
/// zero ridge point) are drawn at the left edge.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series], log_x: bool) -> String {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys = series.iter().flat_map(|s| s.points.iter().map(|p| p.1));
    let mut f = Frame::new(title, x_label, y_label, Axis::fit(xs, log_x), Axis::fit(ys, false));
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| {
                let px = if log_x && x <= 0.0 { MARGIN } else { f.px(x) };
                format!("{px:.1},{:.1}", f.py(y))
            })
            .collect();
        let _ = writeln!(
            f.svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            f.svg,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            W - MARGIN + 4.0,
            MARGIN + 14.0 * i as f64 + 10.0,
            escape(&s.name)
        );
    }
    f.finish()
}

/// Labelled point for [`scatter_plot`].
#[derive(Debug, Clone, PartialEq)]
pub struct Marker {
    pub label: String,
    pub x: f64,
    pub y: f64,
    pub highlight: bool,
}

/// Scatter plot; highlighted markers are filled and joined in x order.
pub fn scatter_plot(title: &str, x_label: &str, y_label: &str, markers: &[Marker], log_x: bool) -> String {
    let mut f = Frame::new(
        title,
        x_label,
        y_label,
        Axis::fit(markers.iter().map(|m| m.x), log_x),
        Axis::fit(markers.iter().map(|m| m.y), false),
    );
    let mut front: Vec<&Marker> = markers.iter().filter(|m| m.highlight).collect();
    front.sort_by(|a, b| a.x.total_cmp(&b.x));
    if front.len() > 1 {
        let pts: Vec<String> = front
            .iter()
            .map(|m| format!("{:.1},{:.1}", f.px(m.x), f.py(m.y)))
            .collect();
        let _ = writeln!(
            f.svg,
            r##"<polyline fill="none" stroke="#d62728" stroke-dasharray="4 3" points="{}"/>"##,
            pts.join(" ")
        );
    }
    for m in markers {
        let (cx, cy) = (f.px(m.x), f.py(m.y));
        let fill = if m.highlight { "#d62728" } else { "white" };
        let _ = writeln!(
            f.svg,
            r##"<circle cx="{cx:.1}" cy="{cy:.1}" r="4" fill="{fill}" stroke="#333"/><text x="{:.1}" y="{:.1}" font-size="10">{}</text>"##,
            cx + 6.0,
            cy - 4.0,
            escape(&m.label)
        );
    }
    f.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_plot_is_well_formed() {
        let s = Series {
            name: "a<b".into(),
            points: vec![(0.0, 1.0), (1.0, 2.0), (500.0, 3.0)],
        };
        let svg = line_plot("t", "x", "y", &[s], true);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a&lt;b"));
        assert_eq!(svg.matches("<polyline").count(), 1);
    }

    #[test]
    fn scatter_marks_front() {
        let m = vec![
            Marker {
                label: "x".into(),
                x: 1.0,
                y: 70.0,
                highlight: true,
            },
            Marker {
                label: "y".into(),
                x: 3.0,
                y: 75.0,
                highlight: true,
            },
            Marker {
                label: "z".into(),
                x: 4.0,
                y: 60.0,
                highlight: false,
            },
        ];
        let svg = scatter_plot("p", "ms", "top1", &m, true);
        assert_eq!(svg.matches("<circle").count(), 3);
        assert_eq!(svg.matches("stroke-dasharray").count(), 1);
    }
}

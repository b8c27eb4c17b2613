//! Minimal SVG line plots.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::trajectory::TrajectoryLog;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// What to draw: one polyline per entry of `series` against column `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub title: String,
    pub x: String,
    pub series: Vec<String>,
    pub log_x: bool,
    pub log_y: bool,
}

impl PlotSpec {
    pub fn new(title: &str, x: &str, series: &[&str]) -> Self {
        Self {
            title: title.into(),
            x: x.into(),
            series: series.iter().map(|s| s.to_string()).collect(),
            log_x: false,
            log_y: false,
        }
    }

    pub fn log_x(mut self) -> Self {
        self.log_x = true;
        self
    }

    pub fn log_y(mut self) -> Self {
        self.log_y = true;
        self
    }
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Option<Self> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            if let Some(u) = transform(v, log) {
                lo = lo.min(u);
                hi = hi.max(u);
            }
        }
        if !lo.is_finite() {
            return None;
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        Some(Self { lo, hi, log })
    }

    /// Position in `[0, 1]`.
    fn unit(&self, v: f64) -> Option<f64> {
        transform(v, self.log).map(|u| (u - self.lo) / (self.hi - self.lo))
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        (0..=4)
            .map(|i| {
                let u = self.lo + (self.hi - self.lo) * i as f64 / 4.0;
                let v = if self.log { 10f64.powf(u) } else { u };
                (i as f64 / 4.0, format!("{v:.3e}"))
            })
            .collect()
    }
}

fn transform(v: f64, log: bool) -> Option<f64> {
    if !v.is_finite() || (log && v <= 0.0) {
        None
    } else if log {
        Some(v.log10())
    } else {
        Some(v)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Render `log` as a standalone SVG document. Non-finite points, and
/// non-positive points on a log axis, are skipped.
pub fn emit_plot(log: &TrajectoryLog, spec: &PlotSpec) -> Result<String> {
    if log.is_empty() {
        return Err(Error::EmptyLog);
    }
    let xs = log.column(&spec.x)?;
    let ys = spec
        .series
        .iter()
        .map(|s| log.column(s))
        .collect::<Result<Vec<_>>>()?;
    let empty = || Error::InvalidArgument("nothing to plot".into());
    let xa = Axis::fit(xs.iter().copied(), spec.log_x).ok_or_else(empty)?;
    let ya = Axis::fit(ys.iter().flat_map(|c| c.iter().copied()), spec.log_y).ok_or_else(empty)?;
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |u: f64| LEFT + u * pw;
    let py = |u: f64| TOP + (1.0 - u) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        WIDTH / 2.0,
        escape(&spec.title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for (u, label) in xa.ticks() {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#,
            px(u),
            TOP + ph + 15.0
        );
    }
    for (u, label) in ya.ticks() {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"#,
            LEFT - 4.0,
            py(u) + 4.0
        );
    }
    let scale = |log: bool| if log { " (log)" } else { "" };
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 10.0,
        escape(&spec.x),
        scale(spec.log_x)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&spec.series.join(", ")),
        scale(spec.log_y)
    );
    for (k, col) in ys.iter().enumerate() {
        let pts: Vec<String> = xs
            .iter()
            .zip(col.iter())
            .filter_map(|(x, y)| Some((xa.unit(*x)?, ya.unit(*y)?)))
            .map(|(u, v)| format!("{:.2},{:.2}", px(u), py(v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            COLORS[k % COLORS.len()],
            pts.join(" ")
        );
    }
    if spec.series.len() > 1 {
        for (k, name) in spec.series.iter().enumerate() {
            let y = TOP + 14.0 + 16.0 * k as f64;
            let x = LEFT + pw - 150.0;
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="2"/><text x="{:.2}" y="{y:.2}">{}</text>"#,
                y - 4.0,
                x + 20.0,
                y - 4.0,
                COLORS[k % COLORS.len()],
                x + 26.0,
                escape(name)
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_series() {
        let mut log = TrajectoryLog::new(&["t", "loss"]);
        for i in 0..5 {
            log.push(&[i as f64, 1.0 / (1.0 + i as f64)]);
        }
        let svg = emit_plot(&log, &PlotSpec::new("demo", "t", &["loss"])).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains(">t</text>") && svg.contains(">loss</text>"));
        assert!(!svg.contains("<line"));
    }

    #[test]
    fn errors() {
        let log = TrajectoryLog::new(&["t", "loss"]);
        assert!(matches!(
            emit_plot(&log, &PlotSpec::new("", "t", &["loss"])),
            Err(Error::EmptyLog)
        ));
        let mut log = log;
        log.push(&[0.0, 1.0]);
        assert!(matches!(
            emit_plot(&log, &PlotSpec::new("", "t", &["kl"])),
            Err(Error::MissingColumn(_))
        ));
    }
}

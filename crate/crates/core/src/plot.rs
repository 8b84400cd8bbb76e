//! Minimal SVG charts of a fit report.

use std::fmt::Write as _;

use crate::summaries::FitReport;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 32.0;
const BOTTOM: f64 = 48.0;

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let widen = |(lo, hi): (f64, f64)| if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        Self { x: widen(x), y: widen(y) }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }
}

/// Roughly five round tick values covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut v = Vec::new();
    let mut t = (lo / step).ceil() * step;
    while t <= hi + 1e-9 * step {
        v.push(t);
        t += step;
    }
    v
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{:.4}", v);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace("--", "- -")
}

fn open(out: &mut String, provenance: &str, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, "<!-- {} -->", escape(provenance));
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, xlabel: &str, ylabel: &str) {
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    let _ = writeln!(
        out,
        r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" fill="none" stroke="black"/>"#
    );
    for t in ticks(f.x.0, f.x.1) {
        let x = f.px(t);
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{}" stroke="black"/><text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#,
            y0 + 4.0,
            y0 + 18.0,
            fmt_tick(t)
        );
    }
    for t in ticks(f.y.0, f.y.1) {
        let y = f.py(t);
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 4.0,
            x0 - 6.0,
            y + 4.0,
            fmt_tick(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        H - 10.0,
        escape(xlabel)
    );
    let _ = writeln!(
        out,
        r#"<text transform="translate(16,{}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
}

fn polyline(f: &Frame, pts: impl Iterator<Item = (f64, f64)>) -> String {
    pts.map(|(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Model-averaged rate with its 95% band, observed rates as dots.
pub fn trend_svg(report: &FitReport) -> String {
    let tr = &report.trend;
    let xs = tr.iter().map(|p| p.time);
    let x = (xs.clone().fold(f64::INFINITY, f64::min), xs.fold(f64::NEG_INFINITY, f64::max));
    let ys = tr
        .iter()
        .flat_map(|p| [p.lower, p.upper].into_iter().chain(p.observed_rate));
    let y = (
        ys.clone().fold(f64::INFINITY, f64::min).min(0.0),
        ys.fold(f64::NEG_INFINITY, f64::max) * 1.05,
    );
    let f = Frame::new(x, y);
    let mut out = String::new();
    open(&mut out, &report.provenance, "Model-averaged rate per 100,000");
    axes(&mut out, &f, "time", "rate per 100,000");
    let band: Vec<(f64, f64)> = tr
        .iter()
        .map(|p| (p.time, p.upper))
        .chain(tr.iter().rev().map(|p| (p.time, p.lower)))
        .collect();
    let _ = writeln!(
        out,
        r##"<polygon points="{}" fill="#9ecae1" fill-opacity="0.6"/>"##,
        polyline(&f, band.into_iter())
    );
    let _ = writeln!(
        out,
        r##"<polyline points="{}" fill="none" stroke="#08519c" stroke-width="2"/>"##,
        polyline(&f, tr.iter().map(|p| (p.time, p.mean)))
    );
    if let Some(first_fc) = tr.iter().find(|p| p.forecast) {
        let xf = f.px(first_fc.time - 0.5);
        let _ = writeln!(
            out,
            r##"<line x1="{xf:.2}" y1="{TOP}" x2="{xf:.2}" y2="{}" stroke="#888" stroke-dasharray="4 3"/>"##,
            H - BOTTOM
        );
    }
    for p in tr {
        if let Some(r) = p.observed_rate {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="black"/>"#,
                f.px(p.time),
                f.py(r)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Bar chart of the posterior joinpoint-count pmf.
pub fn pmf_svg(report: &FitReport) -> String {
    let pmf = &report.joinpoint_pmf;
    let ymax = pmf.iter().copied().fold(0.0, f64::max).max(0.1) * 1.1;
    let f = Frame::new((-0.5, pmf.len() as f64 - 0.5), (0.0, ymax.min(1.0)));
    let mut out = String::new();
    open(&mut out, &report.provenance, "Posterior number of joinpoints");
    axes(&mut out, &f, "joinpoints", "probability");
    for (k, &p) in pmf.iter().enumerate() {
        let (xl, xr) = (f.px(k as f64 - 0.35), f.px(k as f64 + 0.35));
        let (yt, yb) = (f.py(p), f.py(0.0));
        let _ = writeln!(
            out,
            r##"<rect x="{xl:.2}" y="{yt:.2}" width="{:.2}" height="{:.2}" fill="#3182bd"/>"##,
            xr - xl,
            yb - yt
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Step curve of the probability of a change before each time.
pub fn cumprob_svg(report: &FitReport) -> String {
    let c = &report.cumulative_change;
    let x = (
        c.first().map_or(0.0, |p| p.0),
        c.last().map_or(1.0, |p| p.0),
    );
    let f = Frame::new(x, (0.0, 1.0));
    let mut out = String::new();
    open(&mut out, &report.provenance, "Probability of a change before time t");
    axes(&mut out, &f, "time", "probability");
    let mut pts = Vec::with_capacity(2 * c.len());
    for (i, &(t, p)) in c.iter().enumerate() {
        if i > 0 {
            pts.push((t, c[i - 1].1));
        }
        pts.push((t, p));
    }
    let _ = writeln!(
        out,
        r##"<polyline points="{}" fill="none" stroke="#08519c" stroke-width="2"/>"##,
        polyline(&f, pts.into_iter())
    );
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round_and_cover() {
        assert_eq!(ticks(0.0, 1.0), vec![0.0, 0.2, 0.4, 0.6000000000000001, 0.8, 1.0]);
        let t = ticks(1980.0, 2012.0);
        assert_eq!(t.first(), Some(&1980.0));
        assert!(t.iter().all(|v| v % 10.0 == 0.0));
        assert_eq!(fmt_tick(0.6000000000000001), "0.6");
        assert_eq!(fmt_tick(-0.0), "0");
    }

    #[test]
    fn provenance_comment_is_well_formed() {
        assert_eq!(escape("a -- b <c>"), "a - - b &lt;c&gt;");
    }
}

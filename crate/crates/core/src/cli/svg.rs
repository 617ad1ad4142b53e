//! Minimal SVG scatter plots of boundary points in the `(p, q)` plane.

use std::fmt::Write as _;

use crate::formulations::FormulationKind;
use crate::sweep::{Boundary, Side};

const PANEL_W: f64 = 600.0;
const PANEL_H: f64 = 400.0;
const MARGIN: f64 = 56.0;
const TICKS: usize = 5;
const LEGEND_W: f64 = 120.0;

/// Bounding box `(p_min, p_max, q_min, q_max)` of the optimal points, padded.
fn extent<'a>(boundaries: impl Iterator<Item = &'a Boundary>) -> (f64, f64, f64, f64) {
    let (mut p0, mut p1, mut q0, mut q1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for b in boundaries {
        for pt in b.optimal() {
            p0 = p0.min(pt.p_se);
            p1 = p1.max(pt.p_se);
            q0 = q0.min(pt.q_se);
            q1 = q1.max(pt.q_se);
        }
    }
    if !p0.is_finite() {
        return (-1.0, 1.0, -1.0, 1.0);
    }
    let pad = |a: f64, b: f64| 0.05 * (b - a).max(1e-3);
    let (dp, dq) = (pad(p0, p1), pad(q0, q1));
    (p0 - dp, p1 + dp, q0 - dq, q1 + dq)
}

fn marker(s: &mut String, kind: FormulationKind, x: f64, y: f64) {
    let r = 3.0;
    match kind {
        FormulationKind::LinDistFlow => {
            let _ = write!(
                s,
                r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r}" fill="black"/>"#
            );
        }
        FormulationKind::DistFlowSocp => {
            let _ = write!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{}" height="{}" fill="none" stroke="blue"/>"#,
                x - r,
                y - r,
                2.0 * r,
                2.0 * r
            );
        }
        FormulationKind::AcOpf => {
            let _ = write!(
                s,
                r#"<path d="M{:.2},{:.2}L{:.2},{:.2}M{:.2},{:.2}L{:.2},{:.2}" stroke="red" stroke-width="1.2"/>"#,
                x - r,
                y - r,
                x + r,
                y + r,
                x - r,
                y + r,
                x + r,
                y - r
            );
        }
        FormulationKind::DistFlow => {
            let mut d = String::new();
            for k in 0..10 {
                let a = std::f64::consts::PI * (k as f64 / 5.0 - 0.5);
                let rr = if k % 2 == 0 {
                    r + 1.5
                } else {
                    0.45 * (r + 1.5)
                };
                let _ = write!(
                    d,
                    "{}{:.2},{:.2}",
                    if k == 0 { 'M' } else { 'L' },
                    x + rr * a.cos(),
                    y + rr * a.sin()
                );
            }
            let _ = write!(s, r#"<path d="{d}Z" fill="red"/>"#);
        }
    }
}

/// One panel at offset `(ox, oy)`.
fn panel(s: &mut String, title: &str, traces: &[(FormulationKind, &Boundary)], ox: f64, oy: f64) {
    let (p0, p1, q0, q1) = extent(traces.iter().map(|(_, b)| *b));
    let (w, h) = (PANEL_W - 2.0 * MARGIN - LEGEND_W, PANEL_H - 2.0 * MARGIN);
    let sx = |p: f64| ox + MARGIN + (p - p0) / (p1 - p0) * w;
    let sy = |q: f64| oy + MARGIN + (q1 - q) / (q1 - q0) * h;
    let _ = write!(
        s,
        r##"<rect x="{:.2}" y="{:.2}" width="{w}" height="{h}" fill="none" stroke="#444"/>"##,
        ox + MARGIN,
        oy + MARGIN
    );
    for k in 0..=TICKS {
        let t = k as f64 / TICKS as f64;
        let (p, q) = (p0 + t * (p1 - p0), q0 + t * (q1 - q0));
        let (x, y) = (sx(p), sy(q));
        let _ = write!(
            s,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/><text x="{x:.2}" y="{:.2}" font-size="10" text-anchor="middle">{p:.3}</text>"##,
            oy + MARGIN,
            oy + MARGIN + h,
            oy + MARGIN + h + 14.0
        );
        let _ = write!(
            s,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{q:.3}</text>"##,
            ox + MARGIN,
            ox + MARGIN + w,
            ox + MARGIN - 4.0,
            y + 3.0
        );
    }
    let _ = write!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">{}</text>"#,
        ox + MARGIN + w / 2.0,
        oy + MARGIN - 14.0,
        escape(title)
    );
    let _ = write!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">p at substation (pu)</text>"#,
        ox + MARGIN + w / 2.0,
        oy + PANEL_H - 16.0
    );
    let _ = write!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">q at substation (pu)</text>"#,
        ox + 14.0,
        oy + PANEL_H / 2.0,
        ox + 14.0,
        oy + PANEL_H / 2.0
    );
    for (kind, b) in traces {
        let _ = write!(
            s,
            r#"<polygon points="{}" fill="none" stroke="{}" stroke-width="0.8"{}/>"#,
            outline(b, &sx, &sy),
            colour(*kind),
            if *kind == FormulationKind::AcOpf {
                r#" stroke-dasharray="4 3""#
            } else {
                ""
            }
        );
        for pt in b.optimal() {
            marker(s, *kind, sx(pt.p_se), sy(pt.q_se));
        }
    }
    for (i, (kind, _)) in traces.iter().enumerate() {
        let (x, y) = (ox + MARGIN + w + 20.0, oy + MARGIN + 8.0 + 18.0 * i as f64);
        marker(s, *kind, x, y);
        let _ = write!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#,
            x + 10.0,
            y + 4.0,
            kind.label()
        );
    }
}

fn colour(kind: FormulationKind) -> &'static str {
    match kind {
        FormulationKind::LinDistFlow => "black",
        FormulationKind::DistFlowSocp => "blue",
        FormulationKind::AcOpf | FormulationKind::DistFlow => "red",
    }
}

/// Upper side by ascending `q`, then lower side by descending `q`.
fn outline(b: &Boundary, sx: &impl Fn(f64) -> f64, sy: &impl Fn(f64) -> f64) -> String {
    let mut upper: Vec<_> = b.optimal().filter(|p| p.side == Side::Upper).collect();
    let mut lower: Vec<_> = b.optimal().filter(|p| p.side == Side::Lower).collect();
    upper.sort_by(|a, b| a.q_se.total_cmp(&b.q_se));
    lower.sort_by(|a, b| b.q_se.total_cmp(&a.q_se));
    let mut out = String::new();
    for p in upper.iter().chain(&lower) {
        let _ = write!(out, "{:.2},{:.2} ", sx(p.p_se), sy(p.q_se));
    }
    out.trim_end().to_string()
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn document(width: f64, height: f64, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}\n</svg>\n"
    )
}

/// Overlay of the boundary points of several formulations.
pub fn render_region_svg(title: &str, traces: &[(FormulationKind, &Boundary)]) -> String {
    let mut body = String::new();
    panel(&mut body, title, traces, 0.0, 0.0);
    document(PANEL_W, PANEL_H, &body)
}

/// Grid of panels, three per row.
pub(crate) fn render_grid_svg(
    title: &str,
    panels: &[(String, Vec<(FormulationKind, &Boundary)>)],
) -> String {
    let cols = panels.len().clamp(1, 3);
    let rows = panels.len().div_ceil(cols).max(1);
    let top = 30.0;
    let mut body = format!(
        r#"<text x="{:.2}" y="20" font-size="15" text-anchor="middle">{}</text>"#,
        cols as f64 * PANEL_W / 2.0,
        escape(title)
    );
    for (i, (name, traces)) in panels.iter().enumerate() {
        panel(
            &mut body,
            name,
            traces,
            (i % cols) as f64 * PANEL_W,
            top + (i / cols) as f64 * PANEL_H,
        );
    }
    document(cols as f64 * PANEL_W, top + rows as f64 * PANEL_H, &body)
}

//! Self-contained SVG of the backbone projected on three orthographic views.

use std::fmt::Write;

use tactr_core::shooting::Solution;

const PANEL: f64 = 260.0;
const MARGIN: f64 = 30.0;
const COLORS: [&str; 4] = ["#1b6ca8", "#d1495b", "#3a7d44", "#7b4fa0"];

/// Views as (horizontal axis, vertical axis, label).
const VIEWS: [(usize, usize, &str); 3] = [(0, 2, "x-z"), (1, 2, "y-z"), (0, 1, "x-y")];

pub fn render(title: &str, solution: &Solution) -> String {
    // Millimetres, with the number of tubes present at each station.
    let points: Vec<([f64; 3], usize)> = solution
        .stations
        .iter()
        .map(|st| {
            let p = st.state.p * 1e3;
            ([p.x, p.y, p.z], st.tubes.len())
        })
        .collect();

    let mut ranges = Vec::new();
    let mut span: f64 = 1e-9;
    for &(a, b, _) in &VIEWS {
        let (lo_a, hi_a) = bounds(points.iter().map(|p| p.0[a]));
        let (lo_b, hi_b) = bounds(points.iter().map(|p| p.0[b]));
        span = span.max(hi_a - lo_a).max(hi_b - lo_b);
        ranges.push(((lo_a + hi_a) / 2.0, (lo_b + hi_b) / 2.0));
    }
    let scale = (PANEL - 2.0 * MARGIN) / span;

    let width = PANEL * VIEWS.len() as f64;
    let height = PANEL + 40.0;
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        out,
        r#"<text x="10" y="20" font-family="sans-serif" font-size="14">{}</text>"#,
        escape(title)
    )
    .unwrap();

    for (v, &(a, b, label)) in VIEWS.iter().enumerate() {
        let (ca, cb) = ranges[v];
        let ox = v as f64 * PANEL;
        let oy = 40.0;
        let map = |p: &[f64; 3]| {
            (
                ox + PANEL / 2.0 + (p[a] - ca) * scale,
                oy + PANEL / 2.0 - (p[b] - cb) * scale,
            )
        };
        writeln!(
            out,
            r##"<rect x="{:.3}" y="{oy:.3}" width="{:.3}" height="{:.3}" fill="none" stroke="#bbbbbb"/>"##,
            ox + 5.0,
            PANEL - 10.0,
            PANEL - 10.0
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{:.3}" y="{:.3}" font-family="sans-serif" font-size="12">{label} (mm)</text>"#,
            ox + 12.0,
            oy + 16.0
        )
        .unwrap();

        // One polyline per run of stations sharing the same tube count.
        let mut start = 0;
        while start + 1 < points.len() {
            let count = points[start + 1].1;
            let mut end = start + 1;
            while end + 1 < points.len() && points[end + 1].1 == count {
                end += 1;
            }
            let coords: Vec<String> = points[start..=end]
                .iter()
                .map(|p| {
                    let (x, y) = map(&p.0);
                    format!("{x:.3},{y:.3}")
                })
                .collect();
            writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="{:.1}"/>"#,
                coords.join(" "),
                COLORS[count.saturating_sub(1) % COLORS.len()],
                1.0 + count as f64
            )
            .unwrap();
            start = end;
        }
        if let Some(first) = points.first() {
            let (x, y) = map(&first.0);
            writeln!(out, r#"<circle cx="{x:.3}" cy="{y:.3}" r="3" fill="black"/>"#).unwrap();
        }
    }
    out.push_str("</svg>\n");
    out
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

//! Hand-written SVG charts. CSV stays the canonical output.

use std::fmt::Write;

use simwise_core::cascade::ProximityMatrix;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn open(title: &str) -> String {
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(title)).unwrap();
    s
}

/// Y axis from 0 to 1 with gridlines every 0.2.
fn accuracy_axis(s: &mut String) {
    let (x0, y0, y1) = (MARGIN, HEIGHT - MARGIN, MARGIN);
    for i in 0..=5 {
        let v = i as f64 * 0.2;
        let y = y0 - v * (y0 - y1);
        writeln!(s, r##"<line x1="{x0}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/>"##, WIDTH - MARGIN).unwrap();
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"#, x0 - 6.0, y + 4.0).unwrap();
    }
    writeln!(s, r##"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"##).unwrap();
    writeln!(s, r##"<line x1="{x0}" y1="{y0}" x2="{:.1}" y2="{y0}" stroke="black"/>"##, WIDTH - MARGIN).unwrap();
    writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">accuracy</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    )
    .unwrap();
}

fn y_of(v: f64) -> f64 {
    let (y0, y1) = (HEIGHT - MARGIN, MARGIN);
    y0 - v.clamp(0.0, 1.0) * (y0 - y1)
}

/// Grouped bars: one group per monitor, one bar per subject.
pub fn proximity_chart(m: &ProximityMatrix) -> String {
    let mut s = open("Activity accuracy by monitor and subject");
    accuracy_axis(&mut s);
    let groups = m.monitor_ids.len().max(1);
    let bars = m.subject_ids.len().max(1);
    let group_w = (WIDTH - 2.0 * MARGIN) / groups as f64;
    let bar_w = group_w * 0.8 / bars as f64;
    for (g, (mid, row)) in m.monitor_ids.iter().zip(&m.accuracy).enumerate() {
        let gx = MARGIN + g as f64 * group_w + group_w * 0.1;
        for (b, (sid, &v)) in m.subject_ids.iter().zip(row).enumerate() {
            let (x, y) = (gx + b as f64 * bar_w, y_of(v));
            writeln!(
                s,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="{}"><title>monitor {mid}, subject {sid}: {v:.3}</title></rect>"#,
                bar_w * 0.9,
                HEIGHT - MARGIN - y,
                PALETTE[b % PALETTE.len()]
            )
            .unwrap();
        }
        writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">monitor {mid}</text>"#,
            gx + group_w * 0.4,
            HEIGHT - MARGIN + 18.0
        )
        .unwrap();
    }
    for (b, sid) in m.subject_ids.iter().enumerate() {
        let x = WIDTH - MARGIN - 90.0;
        let y = MARGIN + 4.0 + b as f64 * 16.0;
        writeln!(s, r#"<rect x="{x:.1}" y="{y:.1}" width="10" height="10" fill="{}"/>"#, PALETTE[b % PALETTE.len()]).unwrap();
        writeln!(s, r#"<text x="{:.1}" y="{:.1}">subject {sid}</text>"#, x + 14.0, y + 9.0).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Accuracy against subcarrier count, points evenly spaced on the x axis.
pub fn ablation_chart(points: &[(usize, f64)]) -> String {
    let mut s = open("Accuracy by number of subcarriers");
    accuracy_axis(&mut s);
    let n = points.len().max(1);
    let step = (WIDTH - 2.0 * MARGIN) / n as f64;
    let xy: Vec<(f64, f64)> = points.iter().enumerate().map(|(i, &(_, v))| (MARGIN + step * (i as f64 + 0.5), y_of(v))).collect();
    let path: Vec<String> = xy.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
    writeln!(s, r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##, path.join(" ")).unwrap();
    for ((x, y), (k, v)) in xy.iter().zip(points) {
        writeln!(s, r##"<circle cx="{x:.1}" cy="{y:.1}" r="4" fill="#1f77b4"><title>k={k}: {v:.3}</title></circle>"##).unwrap();
        writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{k}</text>"#, HEIGHT - MARGIN + 18.0).unwrap();
    }
    writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">subcarriers</text>"#, WIDTH / 2.0, HEIGHT - 12.0).unwrap();
    s.push_str("</svg>\n");
    s
}

//! Budget versus mean suboptimality, one line and ±1 std band per series.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::experiment::SummaryRow;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn series_name(r: &SummaryRow) -> String {
    match r.c {
        Some(c) => format!("{} ({} {})", r.algo, r.model, c),
        None => format!("{} ({})", r.algo, r.model),
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" { "0".into() } else { s.into() }
}

/// Deterministic SVG: the same rows always give the same bytes.
pub fn render_svg(rows: &[SummaryRow]) -> String {
    let mut series: BTreeMap<String, Vec<&SummaryRow>> = BTreeMap::new();
    for r in rows {
        series.entry(series_name(r)).or_default().push(r);
    }
    for pts in series.values_mut() {
        pts.sort_by_key(|r| r.budget);
    }
    let budgets: Vec<u64> = {
        let mut b: Vec<u64> = rows.iter().map(|r| r.budget).collect();
        b.sort_unstable();
        b.dedup();
        b
    };
    let (x_min, x_max) = match (budgets.first(), budgets.last()) {
        (Some(&a), Some(&b)) if a < b => (a as f64, b as f64),
        (Some(&a), _) => (a as f64 - 1.0, a as f64 + 1.0),
        _ => (0.0, 1.0),
    };
    let y_top = rows
        .iter()
        .map(|r| r.mean_subopt + r.std_subopt)
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let y_max = if y_top > 0.0 { y_top * 1.05 } else { 1.0 };
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x_min) / (x_max - x_min) * plot_w;
    let sy = |y: f64| TOP + (1.0 - y.clamp(0.0, y_max) / y_max) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let v = y_max * i as f64 / 5.0;
        let y = sy(v);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT + plot_w,
            LEFT - 6.0,
            y + 4.0,
            tick_label(v)
        );
    }
    for &b in &budgets {
        let x = sx(b as f64);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{b}</text>"#,
            TOP + plot_h,
            TOP + plot_h + 5.0,
            TOP + plot_h + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">budget N (episodes)</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">suboptimality</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let upper: Vec<String> =
            pts.iter().map(|r| format!("{:.2},{:.2}", sx(r.budget as f64), sy(r.mean_subopt + r.std_subopt))).collect();
        let lower: Vec<String> = pts
            .iter()
            .rev()
            .map(|r| format!("{:.2},{:.2}", sx(r.budget as f64), sy(r.mean_subopt - r.std_subopt)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" ")
        );
        let line: Vec<String> =
            pts.iter().map(|r| format!("{:.2},{:.2}", sx(r.budget as f64), sy(r.mean_subopt))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, line.join(" "));
        for r in pts {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                sx(r.budget as f64),
                sy(r.mean_subopt)
            );
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = LEFT + plot_w + 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

//! Dependency-free SVG line charts of `gap_z` against iteration.

use std::fmt::Write as _;

use crate::trace::TraceFile;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders one polyline per trace with a log-scaled y axis.
///
/// Nonpositive gaps cannot be drawn on a log axis and are lifted to a
/// decade below the smallest positive value.
pub fn render_svg(traces: &[TraceFile]) -> String {
    let positive = traces.iter().flat_map(|t| t.rows.iter().map(|r| r.gap_z)).filter(|g| *g > 0.0 && g.is_finite());
    let (mut lo, mut hi) = positive.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), g| (a.min(g), b.max(g)));
    if !lo.is_finite() {
        (lo, hi) = (1e-16, 1.0);
    }
    let floor = lo / 10.0;
    let dec_lo = floor.log10().floor();
    let mut dec_hi = hi.log10().ceil();
    if dec_hi <= dec_lo {
        dec_hi = dec_lo + 1.0;
    }
    let iter_max = traces.iter().filter_map(|t| t.rows.last()).map(|r| r.iter).max().unwrap_or(1).max(1) as f64;

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let px = |iter: f64| LEFT + plot_w * iter / iter_max;
    let py = |g: f64| {
        let v = if g > 0.0 && g.is_finite() { g } else { floor };
        TOP + plot_h * (dec_hi - v.log10()) / (dec_hi - dec_lo)
    };

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<g id="y-axis" data-scale="log10"><line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="black"/>"#,
        TOP + plot_h
    )
    .unwrap();
    let mut dec = dec_lo;
    while dec <= dec_hi {
        let y = TOP + plot_h * (dec_hi - dec) / (dec_hi - dec_lo);
        writeln!(
            s,
            r##"<line x1="{}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#dddddd"/><text x="{}" y="{:.2}" text-anchor="end">1e{}</text>"##,
            LEFT,
            LEFT + plot_w,
            LEFT - 6.0,
            y + 4.0,
            dec as i64
        )
        .unwrap();
        dec += 1.0;
    }
    writeln!(
        s,
        r#"<text transform="translate(20,{:.2}) rotate(-90)" text-anchor="middle">gap_z (log scale)</text></g>"#,
        TOP + plot_h / 2.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<g id="x-axis"><line x1="{LEFT}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        TOP + plot_h,
        LEFT + plot_w
    )
    .unwrap();
    for i in 0..=4 {
        let it = iter_max * i as f64 / 4.0;
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            px(it),
            TOP + plot_h + 18.0,
            it.round() as u64
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">iteration</text></g>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 10.0
    )
    .unwrap();

    for (i, t) in traces.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = t.rows.iter().map(|r| format!("{:.2},{:.2}", px(r.iter as f64), py(r.gap_z))).collect();
        writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        )
        .unwrap();
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = LEFT + plot_w + 12.0;
        writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&t.label())
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

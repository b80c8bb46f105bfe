//! Minimal SVG charts, written by hand so runs stay dependency-light. One
//! line chart and one bar chart, 640×400, dark text on white.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 28.0;
const MARGIN_B: f64 = 44.0;

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"18\" font-size=\"14\" text-anchor=\"middle\" fill=\"#222\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    );
    s
}

/// Round a span outward to tick-friendly bounds.
fn nice_bounds(lo: f64, hi: f64) -> (f64, f64) {
    if !(hi > lo) {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        return (lo - pad, hi + pad);
    }
    let span = hi - lo;
    let pad = span * 0.05;
    (lo - pad, hi + pad)
}

fn format_tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && (a >= 10_000.0 || a < 0.01) {
        format!("{v:.1e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Plot `(x, y)` points joined by a line. Points must be non-empty and finite.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64)]) -> String {
    let mut s = header(title);
    if points.is_empty() {
        s.push_str("</svg>\n");
        return s;
    }
    let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        x_lo = x_lo.min(x);
        x_hi = x_hi.max(x);
        y_lo = y_lo.min(y);
        y_hi = y_hi.max(y);
    }
    let (x_lo, x_hi) = nice_bounds(x_lo, x_hi);
    let (y_lo, y_hi) = nice_bounds(y_lo, y_hi);
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| MARGIN_T + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h;

    // Axes and gridlines with value ticks.
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let gx = MARGIN_L + f * plot_w;
        let gy = MARGIN_T + f * plot_h;
        let xv = x_lo + f * (x_hi - x_lo);
        let yv = y_hi - f * (y_hi - y_lo);
        let _ = write!(
            s,
            "<line x1=\"{gx:.1}\" y1=\"{MARGIN_T}\" x2=\"{gx:.1}\" y2=\"{:.1}\" stroke=\"#eee\"/>\n\
             <line x1=\"{MARGIN_L}\" y1=\"{gy:.1}\" x2=\"{:.1}\" y2=\"{gy:.1}\" stroke=\"#eee\"/>\n\
             <text x=\"{gx:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"middle\" fill=\"#555\">{}</text>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"end\" fill=\"#555\">{}</text>\n",
            MARGIN_T + plot_h,
            MARGIN_L + plot_w,
            MARGIN_T + plot_h + 14.0,
            format_tick(xv),
            MARGIN_L - 6.0,
            gy + 3.0,
            format_tick(yv),
        );
    }
    let _ = write!(
        s,
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{plot_w}\" height=\"{plot_h}\" \
         fill=\"none\" stroke=\"#999\"/>\n"
    );

    let mut path = String::new();
    for (i, &(x, y)) in points.iter().enumerate() {
        let _ = write!(path, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, sx(x), sy(y));
    }
    let _ = write!(s, "<path d=\"{}\" fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"1.5\"/>\n", path.trim_end());

    let _ = write!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\" fill=\"#222\">{}</text>\n\
         <text x=\"14\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\" fill=\"#222\" \
         transform=\"rotate(-90 14 {:.1})\">{}</text>\n</svg>\n",
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 8.0,
        escape(x_label),
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0,
        escape(y_label),
    );
    s
}

/// Vertical bars with one label per bar. Bars may be negative; the baseline
/// sits at zero when the data spans it.
pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let mut s = header(title);
    if bars.is_empty() {
        s.push_str("</svg>\n");
        return s;
    }
    let mut y_lo = 0.0f64;
    let mut y_hi = 0.0f64;
    for &(_, v) in bars {
        y_lo = y_lo.min(v);
        y_hi = y_hi.max(v);
    }
    let (y_lo, y_hi) = nice_bounds(y_lo, y_hi);
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sy = |y: f64| MARGIN_T + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h;

    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let gy = MARGIN_T + f * plot_h;
        let yv = y_hi - f * (y_hi - y_lo);
        let _ = write!(
            s,
            "<line x1=\"{MARGIN_L}\" y1=\"{gy:.1}\" x2=\"{:.1}\" y2=\"{gy:.1}\" stroke=\"#eee\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"end\" fill=\"#555\">{}</text>\n",
            MARGIN_L + plot_w,
            MARGIN_L - 6.0,
            gy + 3.0,
            format_tick(yv),
        );
    }
    let _ = write!(
        s,
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{plot_w}\" height=\"{plot_h}\" \
         fill=\"none\" stroke=\"#999\"/>\n"
    );

    let n = bars.len() as f64;
    let slot = plot_w / n;
    let bar_w = (slot * 0.7).min(80.0);
    let base = sy(0.0f64.clamp(y_lo, y_hi));
    for (i, (label, v)) in bars.iter().enumerate() {
        let cx = MARGIN_L + (i as f64 + 0.5) * slot;
        let top = sy(*v);
        let (y, h) = if top <= base { (top, base - top) } else { (base, top - base) };
        let _ = write!(
            s,
            "<rect x=\"{:.1}\" y=\"{y:.1}\" width=\"{bar_w:.1}\" height=\"{h:.1}\" fill=\"#1f6fb2\"/>\n\
             <text x=\"{cx:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"middle\" fill=\"#555\">{}</text>\n",
            cx - bar_w / 2.0,
            MARGIN_T + plot_h + 14.0,
            escape(label),
        );
    }
    let _ = write!(
        s,
        "<text x=\"14\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\" fill=\"#222\" \
         transform=\"rotate(-90 14 {:.1})\">{}</text>\n</svg>\n",
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0,
        escape(y_label),
    );
    s
}

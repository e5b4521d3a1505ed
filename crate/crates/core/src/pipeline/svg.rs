//! Minimal hand-written SVG charts.

use std::fmt::Write;

const W: f64 = 480.0;
const H: f64 = 300.0;
const PAD: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn frame(title: &str, body: &str, y_lo: f64, y_hi: f64) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = write!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, esc(title));
    let _ = write!(
        s,
        r#"<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>"#,
        H - PAD,
        W - PAD / 2.0,
        H - PAD,
        H - PAD
    );
    for (v, y) in [(y_hi, PAD), (y_lo, H - PAD)] {
        let _ = write!(s, r#"<text x="{}" y="{}" text-anchor="end">{v:.2}</text>"#, PAD - 4.0, y + 4.0);
    }
    s.push_str(body);
    s.push_str("</svg>\n");
    s
}

fn y_of(v: f64, lo: f64, hi: f64) -> f64 {
    let span = if hi > lo { hi - lo } else { 1.0 };
    H - PAD - (v - lo) / span * (H - 2.0 * PAD)
}

/// One polyline per series over a shared x axis.
pub fn line_chart(title: &str, series: &[(String, Vec<(f64, f64)>)], y_lo: f64, y_hi: f64) -> String {
    let xs: Vec<f64> = series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)).collect();
    let (x_lo, x_hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let x_span = if x_hi > x_lo { x_hi - x_lo } else { 1.0 };
    let x_of = |x: f64| PAD + (x - x_lo) / x_span * (W - 1.5 * PAD);
    let mut body = String::new();
    for (k, (name, pts)) in series.iter().enumerate() {
        let c = COLORS[k % COLORS.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", x_of(x), y_of(y, y_lo, y_hi)))
            .collect();
        let _ = write!(body, r#"<polyline fill="none" stroke="{c}" stroke-width="2" points="{}"/>"#, path.join(" "));
        let _ = write!(body, r#"<text x="{}" y="{}" fill="{c}">{}</text>"#, PAD + 8.0, PAD + 14.0 * k as f64, esc(name));
    }
    if x_lo.is_finite() {
        for x in [x_lo, x_hi] {
            let _ = write!(body, r#"<text x="{:.1}" y="{}" text-anchor="middle">{x:.1}</text>"#, x_of(x), H - PAD + 14.0);
        }
    }
    frame(title, &body, y_lo, y_hi)
}

/// Grouped bars; every group lists `(bar name, value)` in the same order.
pub fn bar_chart(title: &str, groups: &[(String, Vec<(String, f64)>)]) -> String {
    let vals: Vec<f64> = groups.iter().flat_map(|(_, b)| b.iter().map(|v| v.1)).collect();
    let lo = vals.iter().fold(0.0f64, |a, &v| a.min(v));
    let hi = vals.iter().fold(0.0f64, |a, &v| a.max(v)).max(lo + 1e-9);
    let n_groups = groups.len().max(1) as f64;
    let group_w = (W - 1.5 * PAD) / n_groups;
    let mut body = String::new();
    let zero = y_of(0.0, lo, hi);
    for (g, (gname, bars)) in groups.iter().enumerate() {
        let bar_w = group_w * 0.8 / bars.len().max(1) as f64;
        let x0 = PAD + g as f64 * group_w + group_w * 0.1;
        for (b, (bname, v)) in bars.iter().enumerate() {
            let y = y_of(*v, lo, hi);
            let (top, h) = if y < zero { (y, zero - y) } else { (zero, y - zero) };
            let _ = write!(
                body,
                r#"<rect x="{:.1}" y="{top:.1}" width="{:.1}" height="{h:.1}" fill="{}"><title>{}: {v:.3}</title></rect>"#,
                x0 + b as f64 * bar_w,
                bar_w * 0.95,
                COLORS[b % COLORS.len()],
                esc(bname)
            );
            if g == 0 {
                let _ = write!(
                    body,
                    r#"<text x="{}" y="{}" fill="{}">{}</text>"#,
                    W - PAD * 2.5,
                    PAD + 14.0 * b as f64,
                    COLORS[b % COLORS.len()],
                    esc(bname)
                );
            }
        }
        let _ = write!(
            body,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            x0 + group_w * 0.4,
            H - PAD + 14.0,
            esc(gname)
        );
    }
    frame(title, &body, lo, hi)
}

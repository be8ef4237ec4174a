//! Static log-linear line plots.

use std::fmt::Write;

pub struct Series<'a> {
    pub label: &'a str,
    pub xs: &'a [f64],
    pub ys: &'a [f64],
    pub color: &'a str,
    pub dashed: bool,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

/// Plots every series with a log10 y axis. Non-positive values break the line.
pub fn log_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let positive = series.iter().flat_map(|s| s.ys.iter()).filter(|y| **y > 0.0 && y.is_finite());
    let y_min = positive.clone().cloned().fold(f64::INFINITY, f64::min);
    let y_max = positive.cloned().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if y_min.is_finite() {
        (y_min.log10().floor(), y_max.log10().ceil().max(y_min.log10().floor() + 1.0))
    } else {
        (-1.0, 0.0)
    };
    let x_max = series.iter().flat_map(|s| s.xs.iter()).cloned().fold(0.0, f64::max);
    let x_max = if x_max > 0.0 { x_max } else { 1.0 };
    let px = |x: f64| LEFT + (W - LEFT - RIGHT) * x / x_max;
    let py = |y: f64| TOP + (H - TOP - BOTTOM) * (hi - y.log10()) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(s, r#"<rect x="{x0}" y="{y0}" width="{}" height="{}" fill="none" stroke="black"/>"#, x1 - x0, y1 - y0);
    for d in lo as i32..=hi as i32 {
        let y = py(10f64.powi(d));
        let _ = writeln!(s, r##"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#ddd"/>"##);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">1e{d}</text>"#, x0 - 6.0, y + 4.0);
    }
    for i in 0..=5 {
        let x = x_max * i as f64 / 5.0;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, px(x), y1 + 18.0, tick(x));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 10.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );

    for (k, ser) in series.iter().enumerate() {
        let dash = if ser.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let mut pts = Vec::new();
        let flush = |pts: &mut Vec<String>, s: &mut String| {
            if pts.len() > 1 {
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{}" stroke-width="1.5"{dash} points="{}"/>"#,
                    ser.color,
                    pts.join(" ")
                );
            }
            pts.clear();
        };
        for (&x, &y) in ser.xs.iter().zip(ser.ys) {
            if y > 0.0 && y.is_finite() && y.log10() >= lo && y.log10() <= hi {
                pts.push(format!("{:.2},{:.2}", px(x), py(y)));
            } else {
                flush(&mut pts, &mut s);
            }
        }
        flush(&mut pts, &mut s);
        let ly = y0 + 16.0 + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="1.5"{dash}/>"#,
            x1 - 150.0,
            x1 - 126.0,
            ser.color
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, x1 - 120.0, ly + 4.0, escape(ser.label));
    }
    s.push_str("</svg>\n");
    s
}

fn tick(x: f64) -> String {
    let s = format!("{x:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plot_is_well_formed() {
        let xs = [0.0, 1.0, 2.0];
        let svg = log_plot(
            "a < b",
            "t",
            "p",
            &[Series {
                label: "tail",
                xs: &xs,
                ys: &[1.0, 0.1, 0.0],
                color: "black",
                dashed: false,
            }],
        );
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("a &lt; b"));
        assert_eq!(svg.matches("<polyline").count(), 1);
    }
}

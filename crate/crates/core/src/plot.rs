//! Minimal deterministic SVG line charts with a logarithmic y axis.

use std::fmt::Write;

use crate::error::{invalid, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 52.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn plottable(p: &(f64, f64)) -> bool {
    p.0.is_finite() && p.1.is_finite() && p.1 > 0.0
}

/// Tick label for `10^e`.
fn decade(e: i32) -> String {
    format!("1e{e}")
}

/// Plot area mapping `x -> pixel` and `log10 y -> pixel`.
struct Frame {
    x0: f64,
    x1: f64,
    e0: i32,
    e1: i32,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        let t = (y.log10() - self.e0 as f64) / (self.e1 - self.e0) as f64;
        HEIGHT - BOTTOM - t * (HEIGHT - TOP - BOTTOM)
    }
}

/// Render `chart`; points with nonpositive or non-finite `y` are skipped.
/// Fails when no series has a plottable point.
pub fn render_svg(chart: &Chart) -> Result<String> {
    let pts: Vec<&(f64, f64)> = chart
        .series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|p| plottable(p))
        .collect();
    if pts.is_empty() {
        return Err(invalid("chart", "no positive finite points to plot"));
    }
    let (mut x0, mut x1) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
            (a.min(p.0), b.max(p.0))
        });
    if x1 - x0 <= 0.0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    let (lo, hi) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
            (a.min(p.1), b.max(p.1))
        });
    let e0 = lo.log10().floor() as i32;
    let mut e1 = hi.log10().ceil() as i32;
    if e1 <= e0 {
        e1 = e0 + 1;
    }
    let f = Frame { x0, x1, e0, e1 };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        escape(&chart.title)
    );
    let (pl, pr, pt, pb) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(
        s,
        r#"<rect x="{pl:.2}" y="{pt:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        pr - pl,
        pb - pt
    );
    // decade grid on y
    let step = ((e1 - e0) as f64 / 10.0).ceil().max(1.0) as i32;
    let mut e = e0;
    while e <= e1 {
        let y = f.py(10f64.powi(e));
        let _ = writeln!(
            s,
            r##"<line x1="{pl:.2}" y1="{y:.2}" x2="{pr:.2}" y2="{y:.2}" stroke="#dddddd"/>"##
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            pl - 6.0,
            y + 4.0,
            decade(e)
        );
        e += step;
    }
    // five x ticks
    for i in 0..=4 {
        let xv = x0 + (x1 - x0) * i as f64 / 4.0;
        let x = f.px(xv);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{pb:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
            pb + 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            pb + 18.0,
            format_tick(xv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (pl + pr) / 2.0,
        HEIGHT - 12.0,
        escape(&chart.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        (pt + pb) / 2.0,
        (pt + pb) / 2.0,
        escape(&chart.y_label)
    );
    for (k, series) in chart.series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let coords: Vec<String> = series
            .points
            .iter()
            .filter(|p| plottable(p))
            .map(|p| format!("{:.2},{:.2}", f.px(p.0), f.py(p.1)))
            .collect();
        if coords.len() > 1 {
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                coords.join(" ")
            );
        }
        for c in &coords {
            let (cx, cy) = c.split_once(',').expect("formatted pair");
            let _ = writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="2.5" fill="{color}"/>"#);
        }
        let ly = pt + 14.0 + 18.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            pr + 12.0,
            pr + 32.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            pr + 38.0,
            ly + 4.0,
            escape(&series.label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn format_tick(v: f64) -> String {
    if v == v.round() && v.abs() < 1e6 {
        format!("{}", v as i64)
    } else {
        format!("{v:.3}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn polyline(svg: &str) -> Vec<(f64, f64)> {
        let start = svg.find("points=\"").unwrap() + 8;
        let end = start + svg[start..].find('"').unwrap();
        svg[start..end]
            .split(' ')
            .map(|p| {
                let (x, y) = p.split_once(',').unwrap();
                (x.parse().unwrap(), y.parse().unwrap())
            })
            .collect()
    }

    #[test]
    fn geometric_series_is_a_straight_line() {
        let chart = Chart {
            title: "geometric".into(),
            x_label: "n".into(),
            y_label: "du".into(),
            series: vec![Series {
                label: "du".into(),
                points: (1..=10).map(|n| (n as f64, 0.3f64.powi(n))).collect(),
            }],
        };
        let svg = render_svg(&chart).unwrap();
        let p = polyline(&svg);
        assert_eq!(p.len(), 10);
        let slope = (p[1].1 - p[0].1) / (p[1].0 - p[0].0);
        for w in p.windows(2) {
            let s = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
            assert!((s - slope).abs() < 0.05, "{s} vs {slope}");
        }
        assert_eq!(svg, render_svg(&chart).unwrap());
    }

    #[test]
    fn single_point_and_empty_charts() {
        let mut chart = Chart {
            title: "one".into(),
            x_label: "n".into(),
            y_label: "du".into(),
            series: vec![Series {
                label: "du".into(),
                points: vec![(1.0, 0.25)],
            }],
        };
        let svg = render_svg(&chart).unwrap();
        assert_eq!(svg.matches("<circle").count(), 1);
        assert!(!svg.contains("<polyline"));
        chart.series[0].points = vec![(1.0, 0.0)];
        assert!(render_svg(&chart).is_err());
    }
}

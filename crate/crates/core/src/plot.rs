//! Log-log SVG rendering of error curves, written directly as text.

use std::fmt::Write as _;

use crate::experiment::ErrorCurve;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

const COLORS: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

struct Axes {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Axes {
    fn px(&self, k: f64) -> f64 {
        LEFT + (k.log10() - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, e: f64) -> f64 {
        HEIGHT - BOTTOM - (e.log10() - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn usable(k: usize, e: f64) -> bool {
    k > 0 && e > 0.0 && e.is_finite()
}

/// One polyline per curve, a dashed `C/k` guide through the uppermost point,
/// decade grid lines and a legend keyed by `N`. Non-finite errors break the
/// polyline.
pub fn loglog_svg(title: &str, curves: &[&ErrorCurve]) -> String {
    let pts: Vec<(usize, f64)> = curves
        .iter()
        .flat_map(|c| c.points.iter().copied())
        .filter(|&(k, e)| usable(k, e))
        .collect();

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        (WIDTH - RIGHT + LEFT) / 2.0,
        escape(title)
    )
    .unwrap();

    if pts.is_empty() {
        writeln!(
            svg,
            r#"<text x="{LEFT}" y="{}">no finite data</text>"#,
            HEIGHT / 2.0
        )
        .unwrap();
        svg.push_str("</svg>\n");
        return svg;
    }

    let k_min = pts.iter().map(|p| p.0).min().unwrap() as f64;
    let k_max = pts.iter().map(|p| p.0).max().unwrap() as f64;
    let guide_c = pts.iter().map(|&(k, e)| k as f64 * e).fold(0.0, f64::max);
    let e_min = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let e_max = pts.iter().map(|p| p.1).fold(guide_c / k_min, f64::max);

    let mut axes = Axes {
        x0: k_min.log10().floor(),
        x1: k_max.log10().ceil(),
        y0: e_min.log10().floor(),
        y1: e_max.log10().ceil(),
    };
    if axes.x1 <= axes.x0 {
        axes.x1 = axes.x0 + 1.0;
    }
    if axes.y1 <= axes.y0 {
        axes.y1 = axes.y0 + 1.0;
    }

    // frame and decade grid
    let (plot_r, plot_b) = (WIDTH - RIGHT, HEIGHT - BOTTOM);
    writeln!(
        svg,
        r#"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        plot_r - LEFT,
        plot_b - TOP
    )
    .unwrap();
    for d in (axes.x0 as i32)..=(axes.x1 as i32) {
        let x = axes.px(10f64.powi(d));
        writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{plot_b}" stroke="#dddddd"/><text x="{x:.2}" y="{}" text-anchor="middle">1e{d}</text>"##,
            plot_b + 18.0
        )
        .unwrap();
    }
    for d in (axes.y0 as i32)..=(axes.y1 as i32) {
        let y = axes.py(10f64.powi(d));
        writeln!(
            svg,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{plot_r}" y2="{y:.2}" stroke="#dddddd"/><text x="{}" y="{:.2}" text-anchor="end">1e{d}</text>"##,
            LEFT - 6.0,
            y + 4.0
        )
        .unwrap();
    }
    writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">k</text>"#,
        (LEFT + plot_r) / 2.0,
        HEIGHT - 15.0
    )
    .unwrap();
    writeln!(
        svg,
        r#"<text x="20" y="{}" text-anchor="middle" transform="rotate(-90 20 {})">mean squared error</text>"#,
        (TOP + plot_b) / 2.0,
        (TOP + plot_b) / 2.0
    )
    .unwrap();

    for (i, curve) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut segment: Vec<String> = Vec::new();
        let flush = |segment: &mut Vec<String>, svg: &mut String| {
            if segment.len() > 1 {
                writeln!(
                    svg,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                    segment.join(" ")
                )
                .unwrap();
            }
            segment.clear();
        };
        for &(k, e) in &curve.points {
            if usable(k, e) {
                segment.push(format!("{:.2},{:.2}", axes.px(k as f64), axes.py(e)));
            } else {
                flush(&mut segment, &mut svg);
            }
        }
        flush(&mut segment, &mut svg);

        let ly = TOP + 16.0 + 18.0 * i as f64;
        writeln!(
            svg,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{} N={}</text>"#,
            plot_r + 10.0,
            plot_r + 30.0,
            plot_r + 36.0,
            ly + 4.0,
            curve.method,
            curve.resolution
        )
        .unwrap();
    }

    writeln!(
        svg,
        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-dasharray="6,4"/>"#,
        axes.px(k_min),
        axes.py(guide_c / k_min),
        axes.px(k_max),
        axes.py(guide_c / k_max)
    )
    .unwrap();
    let ly = TOP + 16.0 + 18.0 * curves.len() as f64;
    writeln!(
        svg,
        r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="black" stroke-dasharray="6,4"/><text x="{}" y="{}">C/k</text>"#,
        plot_r + 10.0,
        plot_r + 30.0,
        plot_r + 36.0,
        ly + 4.0
    )
    .unwrap();
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::Method;

    fn curve(n: usize, scale: f64) -> ErrorCurve {
        ErrorCurve {
            method: Method::Spi,
            resolution: n,
            initial_sq_error: 1.0,
            points: (1..=100)
                .map(|i| (100 * i, scale / (100 * i) as f64))
                .collect(),
        }
    }

    #[test]
    fn one_polyline_per_curve_plus_guide() {
        let (a, b) = (curve(200, 3.0), curve(400, 5.0));
        let svg = loglog_svg("SPI", &[&a, &b]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("stroke-dasharray").count(), 2);
        assert!(svg.contains("spi N=400"));
    }

    #[test]
    fn infinite_values_split_the_line() {
        let mut c = curve(800, 2.0);
        c.points[50].1 = f64::INFINITY;
        let svg = loglog_svg("SGD", &[&c]);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }

    #[test]
    fn empty_input_still_renders() {
        let svg = loglog_svg("x<y", &[]);
        assert!(svg.contains("no finite data"));
        assert!(svg.contains("x&lt;y"));
    }
}

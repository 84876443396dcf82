//! Static SVG line chart of return curves — per-seed traces plus their
//! mean — rendered directly, no plotting dependency.

use std::path::Path;

const W: f64 = 800.0;
const H: f64 = 480.0;
const MARGIN: f64 = 50.0;

fn polyline(points: &[(f64, f64)], color: &str, width: f64, opacity: f64) -> String {
    let pts: Vec<String> =
        points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    format!(
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"{width}\" \
stroke-opacity=\"{opacity}\" points=\"{}\"/>",
        pts.join(" ")
    )
}

pub fn render_return_curves(curves: &[Vec<f64>], mean: &[f64]) -> String {
    let all: Vec<f64> =
        curves.iter().flatten().chain(mean.iter()).copied().collect();
    let (mut lo, mut hi) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if !(lo.is_finite() && hi.is_finite()) || lo == hi {
        lo -= 1.0;
        hi += 1.0;
    }
    let n = mean.len().max(2) as f64;
    let sx = |i: usize| MARGIN + i as f64 / (n - 1.0) * (W - 2.0 * MARGIN);
    let sy = |v: f64| H - MARGIN - (v - lo) / (hi - lo) * (H - 2.0 * MARGIN);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
viewBox=\"0 0 {W} {H}\">\n<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    );
    // axes
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        r = W - MARGIN,
        t = MARGIN,
        b = H - MARGIN
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\">episode</text>\n\
<text x=\"8\" y=\"{}\" font-size=\"12\">{lo:.1}</text>\n\
<text x=\"8\" y=\"{}\" font-size=\"12\">{hi:.1}</text>\n",
        W / 2.0 - 20.0,
        H - 14.0,
        H - MARGIN,
        MARGIN + 4.0
    ));
    for curve in curves {
        let pts: Vec<(f64, f64)> =
            curve.iter().enumerate().map(|(i, &v)| (sx(i), sy(v))).collect();
        svg.push_str(&polyline(&pts, "#7799cc", 1.0, 0.5));
        svg.push('\n');
    }
    let pts: Vec<(f64, f64)> =
        mean.iter().enumerate().map(|(i, &v)| (sx(i), sy(v))).collect();
    svg.push_str(&polyline(&pts, "#cc3311", 2.0, 1.0));
    svg.push_str("\n</svg>\n");
    svg
}

pub fn write_return_curves_svg(
    path: &Path,
    curves: &[Vec<f64>],
    mean: &[f64],
) -> std::io::Result<()> {
    std::fs::write(path, render_return_curves(curves, mean))
}

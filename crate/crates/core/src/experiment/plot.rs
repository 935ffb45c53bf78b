//! SVG scatter of averaged gendered mass with fitted curves and 95% bands.

use std::fmt::Write as _;

use super::run::RunResult;
use super::ExperimentError;
use crate::scm::Gender;
use crate::stats::{fit, normalized_x, MAX_DEGREE, MIN_DEGREE};

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 520.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 150.0;
const CURVE_STEPS: usize = 120;

fn color(g: Gender) -> &'static str {
    match g {
        Gender::Female => "#d62728",
        Gender::Male => "#1f77b4",
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders the run's series. `degree_override` re-fits the stored series at
/// another degree without touching the scores.
pub fn render_plot(result: &RunResult, degree_override: Option<usize>) -> Result<String, ExperimentError> {
    let degree = degree_override.unwrap_or(result.manifest.config.fit_degree);
    if !(MIN_DEGREE..=MAX_DEGREE).contains(&degree) {
        return Err(ExperimentError::Config(format!(
            "degree {degree} outside [{MIN_DEGREE}, {MAX_DEGREE}]"
        )));
    }
    let series = &result.series;
    let fitted = fit(series, degree)?;
    let genders = &result.manifest.genders;
    let xs = normalized_x(series);

    let grid: Vec<f64> = (0..=CURVE_STEPS).map(|i| i as f64 / CURVE_STEPS as f64).collect();
    let mut y_max: f64 = 0.0;
    let mut y_min: f64 = 0.0;
    for &g in genders {
        let model = fitted.model(g).expect("fresh fit carries its models");
        for p in series {
            y_max = y_max.max(p.mean(g));
        }
        for &x in &grid {
            let (lo, hi) = model.band(x);
            y_max = y_max.max(hi);
            y_min = y_min.min(lo);
        }
    }
    let y_max = ((y_max * 10.0).ceil() / 10.0).max(0.1);
    let y_min = (y_min * 10.0).floor() / 10.0;

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + x * plot_w;
    let py = |y: f64| TOP + (y_max - y) / (y_max - y_min) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text class="title" x="{}" y="22" text-anchor="middle" font-size="14">Gendered mass vs {} ({}, degree {degree})</text>"#,
        LEFT + plot_w / 2.0,
        escape(&result.manifest.axis_category),
        escape(&result.manifest.scorer),
    );

    // Axes, y ticks and x labels.
    let _ = writeln!(
        svg,
        r#"<g class="axes" stroke="black" fill="none"><line x1="{l}" y1="{b}" x2="{r}" y2="{b}"/><line x1="{l}" y1="{t}" x2="{l}" y2="{b}"/></g>"#,
        l = LEFT,
        r = LEFT + plot_w,
        t = TOP,
        b = TOP + plot_h
    );
    let ticks = ((y_max - y_min) / 0.1).round() as usize;
    for i in 0..=ticks {
        let y = y_min + i as f64 * 0.1;
        let _ = writeln!(
            svg,
            r#"<g class="y-tick"><line x1="{}" y1="{yy:.2}" x2="{l}" y2="{yy:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{:.0}%</text></g>"#,
            LEFT - 5.0,
            LEFT - 8.0,
            py(y) + 4.0,
            y * 100.0,
            l = LEFT,
            yy = py(y),
        );
    }
    for (p, &x) in series.iter().zip(&xs) {
        let (tx, ty) = (px(x), TOP + plot_h + 12.0);
        let _ = writeln!(
            svg,
            r#"<text class="x-label" x="{tx:.2}" y="{ty:.2}" text-anchor="end" transform="rotate(-55 {tx:.2} {ty:.2})">{}</text>"#,
            escape(&p.w_value)
        );
    }

    for &g in genders {
        let model = fitted.model(g).expect("fresh fit carries its models");
        let c = color(g);
        let mut band = String::new();
        for (i, &x) in grid.iter().enumerate() {
            let _ = write!(band, "{}{:.2},{:.2} ", if i == 0 { 'M' } else { 'L' }, px(x), py(model.band(x).1));
        }
        for &x in grid.iter().rev() {
            let _ = write!(band, "L{:.2},{:.2} ", px(x), py(model.band(x).0));
        }
        let _ = writeln!(
            svg,
            r#"<path class="ci-band {g}" d="{}Z" fill="{c}" fill-opacity="0.18" stroke="none"/>"#,
            band
        );
        let mut curve = String::new();
        for (i, &x) in grid.iter().enumerate() {
            let _ = write!(curve, "{}{:.2},{:.2} ", if i == 0 { 'M' } else { 'L' }, px(x), py(model.eval(x)));
        }
        let _ = writeln!(
            svg,
            r#"<path class="fit-curve {g}" d="{}" fill="none" stroke="{c}" stroke-width="2"/>"#,
            curve.trim_end()
        );
        for (p, &x) in series.iter().zip(&xs) {
            let _ = writeln!(
                svg,
                r#"<circle class="marker {g}" cx="{:.2}" cy="{:.2}" r="4" fill="{c}"><title>{}: {:.4}</title></circle>"#,
                px(x),
                py(p.mean(g)),
                escape(&p.w_value),
                p.mean(g)
            );
        }
    }

    for (i, &g) in genders.iter().enumerate() {
        let y = TOP + 10.0 + i as f64 * 40.0;
        let r = fitted
            .pearson(g)
            .map_or_else(|| "r undefined".to_string(), |r| format!("r = {r:.3}"));
        let _ = writeln!(
            svg,
            r#"<g class="legend {g}"><rect x="{}" y="{}" width="12" height="12" fill="{}"/><text x="{}" y="{}">{g}</text><text x="{}" y="{}">slope {:.3}, {r}</text></g>"#,
            LEFT + plot_w + 15.0,
            y,
            color(g),
            LEFT + plot_w + 32.0,
            y + 10.0,
            LEFT + plot_w + 15.0,
            y + 26.0,
            fitted.slope(g),
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

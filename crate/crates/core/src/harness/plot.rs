//! Static SVG line charts. Output depends only on the input, so repeated runs
//! give identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub group: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlotOptions {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub width: u32,
    pub height: u32,
}

impl Default for PlotOptions {
    fn default() -> Self {
        Self {
            title: String::new(),
            x_label: "iteration".into(),
            y_label: "cost gap".into(),
            log_y: true,
            width: 720,
            height: 440,
        }
    }
}

const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 50.0;

pub fn render_svg(series: &[Series], opts: &PlotOptions) -> Result<String> {
    let ty = |y: f64| if opts.log_y { y.log10() } else { y };
    let usable: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite() && (!opts.log_y || *y > 0.0))
                .map(|&(x, y)| (x, ty(y)))
                .collect()
        })
        .collect();
    let all: Vec<&(f64, f64)> = usable.iter().flatten().collect();
    if all.is_empty() {
        return Err(Error::InvalidInput("nothing to plot".into()));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &&(x, y) in &all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let (w, h) = (opts.width as f64, opts.height as f64);
    let pw = w - MARGIN_LEFT - MARGIN_RIGHT;
    let ph = h - MARGIN_TOP - MARGIN_BOTTOM;
    let px = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| MARGIN_TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}" font-family="sans-serif" font-size="12">"#,
        opts.width, opts.height, opts.width, opts.height
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        MARGIN_LEFT + pw / 2.0,
        escape(&opts.title)
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN_LEFT:.2}" y="{MARGIN_TOP:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
    );
    for t in 0..=4 {
        let f = t as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let ylabel = if opts.log_y { format!("{:.2e}", 10f64.powf(yv)) } else { format!("{yv:.3e}") };
        let _ = writeln!(
            svg,
            r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="black"/><text x="{0:.2}" y="{3:.2}" text-anchor="middle">{4}</text>"#,
            px(xv),
            MARGIN_TOP + ph,
            MARGIN_TOP + ph + 5.0,
            MARGIN_TOP + ph + 18.0,
            format_tick(xv)
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{0:.2}" y1="{1:.2}" x2="{2:.2}" y2="{1:.2}" stroke="black"/><text x="{3:.2}" y="{4:.2}" text-anchor="end">{5}</text>"#,
            MARGIN_LEFT - 5.0,
            py(yv),
            MARGIN_LEFT,
            MARGIN_LEFT - 8.0,
            py(yv) + 4.0,
            ylabel
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + pw / 2.0,
        h - 10.0,
        escape(&opts.x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{0:.2}" text-anchor="middle" transform="rotate(-90 15 {0:.2})">{1}</text>"#,
        MARGIN_TOP + ph / 2.0,
        escape(&opts.y_label)
    );
    for (i, (s, pts)) in series.iter().zip(&usable).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if !pts.is_empty() {
            let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                coords.join(" ")
            );
        }
        let ly = MARGIN_TOP + 10.0 + 16.0 * i as f64;
        let lx = MARGIN_LEFT + pw + 10.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            lx + 25.0,
            ly + 4.0,
            escape(&s.group)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Writes the chart to `path`.
pub fn emit_plot(series: &[Series], path: &Path, opts: &PlotOptions) -> Result<()> {
    let svg = render_svg(series, opts)?;
    std::fs::write(path, svg)?;
    Ok(())
}

fn format_tick(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo() -> Vec<Series> {
        vec![
            Series { group: "task 0".into(), points: vec![(0.0, 10.0), (1.0, 1.0), (2.0, 0.1)] },
            Series { group: "task <1>".into(), points: vec![(0.0, 5.0), (1.0, 2.0), (2.0, 0.0)] },
        ]
    }

    #[test]
    fn deterministic_output() {
        let a = render_svg(&demo(), &PlotOptions::default()).unwrap();
        let b = render_svg(&demo(), &PlotOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.matches("<polyline").count(), 2);
        assert!(a.contains("task &lt;1&gt;"));
    }

    #[test]
    fn empty_series_rejected() {
        assert!(render_svg(&[], &PlotOptions::default()).is_err());
        let only_zero = [Series { group: "z".into(), points: vec![(0.0, 0.0)] }];
        assert!(render_svg(&only_zero, &PlotOptions::default()).is_err());
        let linear = PlotOptions { log_y: false, ..Default::default() };
        assert!(render_svg(&only_zero, &linear).is_ok());
    }
}

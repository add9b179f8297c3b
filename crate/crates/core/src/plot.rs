//! SVG line chart of post-transfer target accuracy per epoch.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::config::Mode;
use crate::pipeline::{read_metrics_csv, read_summary, Stage, SUMMARY_FILE};
use crate::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 200.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 50.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

/// One plotted line.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    /// `(epoch, accuracy)` pairs.
    pub points: Vec<(f64, f64)>,
}

/// Legend label for a metrics file: `mode, λ` from the sibling summary when
/// one exists, else the file stem.
fn label_for(path: &Path) -> String {
    let summary = path.parent().map(|d| d.join(SUMMARY_FILE));
    if let Some(s) = summary.filter(|p| p.is_file()).and_then(|p| read_summary(&p).ok()) {
        return match s.mode {
            Mode::StandardTransfer => format!("standard_transfer, λ={}", s.lambda),
            Mode::Lautum => format!("lautum, λ={}", s.lambda),
        };
    }
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Reads the post-transfer accuracy curve of each file.
pub fn load_series(paths: &[&Path]) -> Result<Vec<Series>> {
    if paths.is_empty() {
        return Err(Error::Config("plot needs at least one metrics file".into()));
    }
    paths
        .iter()
        .map(|p| {
            let points: Vec<(f64, f64)> = read_metrics_csv(p)?
                .iter()
                .filter(|r| r.stage == Stage::Post)
                .map(|r| (r.epoch as f64, r.target_test_acc))
                .collect();
            if points.is_empty() {
                return Err(Error::Config(format!(
                    "no data: {} has no post-transfer records",
                    p.display()
                )));
            }
            Ok(Series {
                label: label_for(p),
                points,
            })
        })
        .collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the chart. Output depends only on `series`.
pub fn render_svg(series: &[Series]) -> Result<String> {
    let all = series.iter().flat_map(|s| &s.points);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return Err(Error::Config("no data to plot".into()));
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    y0 = (y0 * 10.0).floor() / 10.0;
    y1 = (y1 * 10.0).ceil() / 10.0;
    if y1 <= y0 {
        y1 = y0 + 0.1;
    }
    let pw = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let ph = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN_TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let y = y0 + (y1 - y0) * i as f64 / 5.0;
        let py = sy(y);
        let _ = writeln!(
            s,
            r##"<line x1="{MARGIN_LEFT}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{y:.2}</text>"##,
            MARGIN_LEFT + pw,
            MARGIN_LEFT - 6.0,
            py + 4.0
        );
    }
    let ticks = ((x1 - x0).round() as usize).clamp(1, 10);
    for i in 0..=ticks {
        let x = x0 + (x1 - x0) * i as f64 / ticks as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            sx(x),
            MARGIN_TOP + ph + 16.0,
            (x * 100.0).round() / 100.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">post-transfer epoch</text>"#,
        MARGIN_LEFT + pw / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(16 {:.2}) rotate(-90)" text-anchor="middle">target test accuracy</text>"#,
        MARGIN_TOP + ph / 2.0
    );
    for (i, series) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = series
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = MARGIN_TOP + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - MARGIN_RIGHT + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&series.label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Reads `inputs` and writes the chart to `output`.
pub fn render_plot(inputs: &[&Path], output: &Path) -> Result<()> {
    let svg = render_svg(&load_series(inputs)?)?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(output, svg).map_err(|e| Error::io(output, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_series_has_one_polyline() {
        let s = Series {
            label: "a<b".into(),
            points: vec![(1.0, 0.25), (2.0, 0.5), (3.0, 0.75)],
        };
        let svg = render_svg(std::slice::from_ref(&s)).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("a&lt;b"));
        assert_eq!(svg, render_svg(&[s]).unwrap());
    }

    #[test]
    fn empty_series_is_an_error() {
        let s = Series {
            label: "x".into(),
            points: vec![],
        };
        assert!(render_svg(&[s]).is_err());
    }
}

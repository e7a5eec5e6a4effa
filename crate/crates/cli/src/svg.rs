//! Minimal static SVG line plots with linear axes and a legend.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Draw point markers instead of a connecting line.
    pub markers: bool,
}

impl Series {
    pub fn line(name: impl Into<String>, x: Vec<f64>, y: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            x,
            y,
            markers: false,
        }
    }

    pub fn points(name: impl Into<String>, x: Vec<f64>, y: Vec<f64>) -> Self {
        Self {
            markers: true,
            ..Self::line(name, x, y)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

#[derive(Debug, Clone, Copy)]
pub struct SvgOptions {
    pub width: f64,
    pub height: f64,
}

impl Default for SvgOptions {
    fn default() -> Self {
        Self {
            width: 720.0,
            height: 480.0,
        }
    }
}

impl PlotSeries {
    pub fn validate(&self) -> Result<()> {
        if self.series.is_empty() {
            bail!("plot has no series");
        }
        for s in &self.series {
            if s.x.len() != s.y.len() {
                bail!(
                    "series {} has {} x values and {} y values",
                    s.name,
                    s.x.len(),
                    s.y.len()
                );
            }
            if s.x.is_empty() {
                bail!("series {} is empty", s.name);
            }
            if s.x.iter().chain(&s.y).any(|v| !v.is_finite()) {
                bail!("series {} has non-finite values", s.name);
            }
        }
        Ok(())
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if hi - lo > 1e-12 * lo.abs().max(hi.abs()).max(1e-300) {
        let pad = 0.03 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        let d = 0.5 * lo.abs().max(1.0);
        (lo - d, hi + d)
    }
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e4).contains(&a) {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        if s == "-0" {
            "0".into()
        } else {
            s.into()
        }
    }
}

pub fn render(plot: &PlotSeries, opts: SvgOptions) -> Result<String> {
    plot.validate()?;
    let (w, h) = (opts.width, opts.height);
    let (left, right, top, bottom) = (70.0, 160.0, 40.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let (x0, x1) = span(plot.series.iter().flat_map(|s| s.x.iter().copied()));
    let (y0, y1) = span(plot.series.iter().flat_map(|s| s.y.iter().copied()));
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    )?;
    writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#)?;
    writeln!(
        out,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        left + pw / 2.0,
        escape(&plot.title)
    )?;
    writeln!(
        out,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    )?;
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let (px, py) = (sx(xv), sy(yv));
        writeln!(
            out,
            r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            top + ph,
            top + ph + 5.0,
            top + ph + 18.0,
            tick_label(xv)
        )?;
        writeln!(
            out,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{left:.2}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            left - 5.0,
            left - 8.0,
            py + 4.0,
            tick_label(yv)
        )?;
    }
    if y0 < 0.0 && y1 > 0.0 {
        writeln!(
            out,
            r##"<line x1="{left:.2}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}" stroke="#999" stroke-dasharray="4 3"/>"##,
            sy(0.0),
            left + pw
        )?;
    }
    writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 12.0,
        escape(&plot.x_label)
    )?;
    writeln!(
        out,
        r#"<text x="16" y="{0:.2}" text-anchor="middle" transform="rotate(-90 16 {0:.2})">{1}</text>"#,
        top + ph / 2.0,
        escape(&plot.y_label)
    )?;

    for (k, s) in plot.series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if s.markers || s.x.len() == 1 {
            for (&x, &y) in s.x.iter().zip(&s.y) {
                writeln!(
                    out,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                    sx(x),
                    sy(y)
                )?;
            }
        } else {
            let pts: Vec<String> =
                s.x.iter()
                    .zip(&s.y)
                    .map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                    .collect();
            writeln!(
                out,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            )?;
        }
        let ly = top + 10.0 + 18.0 * k as f64;
        let lx = left + pw + 12.0;
        writeln!(
            out,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="3"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&s.name)
        )?;
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn write(plot: &PlotSeries, path: &Path) -> Result<()> {
    let text = render(plot, SvgOptions::default())?;
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plot(series: Vec<Series>) -> PlotSeries {
        PlotSeries {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series,
        }
    }

    #[test]
    fn single_point_gets_a_marker() {
        let svg = render(
            &plot(vec![Series::line("p", vec![1.0], vec![2.0])]),
            SvgOptions::default(),
        )
        .unwrap();
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<circle").count(), 1);
        assert!(!svg.contains("<polyline"));
    }

    #[test]
    fn lines_and_legend() {
        let p = plot(vec![
            Series::line("a & b", vec![0.0, 1.0, 2.0], vec![-1.0, 0.0, 1.0]),
            Series::line("c", vec![0.0, 2.0], vec![0.5, 0.5]),
        ]);
        let svg = render(&p, SvgOptions::default()).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("a &amp; b"));
        assert_eq!(svg, render(&p, SvgOptions::default()).unwrap());
    }

    #[test]
    fn rejects_bad_series() {
        assert!(render(
            &plot(vec![Series::line("a", vec![0.0, 1.0], vec![1.0])]),
            SvgOptions::default()
        )
        .is_err());
        assert!(render(
            &plot(vec![Series::line("a", vec![f64::NAN], vec![1.0])]),
            SvgOptions::default()
        )
        .is_err());
        assert!(render(&plot(vec![Series::line("a", vec![], vec![])]), SvgOptions::default()).is_err());
        assert!(render(&plot(vec![]), SvgOptions::default()).is_err());
    }
}

//! Standalone SVG 1.1 plot of a surprise function with the tangential set
//! and its complement shaded and labeled with their posterior masses.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("surprise table needs at least 2 points of equal length, got {theta} and {surprise}")]
    EmptyTable { theta: usize, surprise: usize },
    #[error("cannot write plot {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const TANGENTIAL_FILL: &str = "#4a7fc1";
const COMPLEMENT_FILL: &str = "#c8c8c8";
/// Parts of the curve below this fraction of its peak are cropped.
const CROP_FRACTION: f64 = 1e-3;

pub struct SurprisePlot<'a> {
    pub theta: &'a [f64],
    pub surprise: &'a [f64],
    pub s_star: f64,
    pub theta0: f64,
    pub ev_against: f64,
    pub title: &'a str,
    pub x_label: &'a str,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Round tick positions covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = hi - lo;
    if span.is_nan() || span <= 0.0 {
        return vec![lo];
    }
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

/// Curve pieces split where the surprise crosses `threshold`; each piece is
/// flagged by whether it lies strictly above.
fn regions(xs: &[f64], ys: &[f64], threshold: f64) -> Vec<(bool, Vec<(f64, f64)>)> {
    let mut out: Vec<(bool, Vec<(f64, f64)>)> = Vec::new();
    let mut push = |above: bool, p: (f64, f64)| match out.last_mut() {
        Some((flag, pts)) if *flag == above => pts.push(p),
        _ => out.push((above, vec![p])),
    };
    for i in 0..xs.len() {
        let above = ys[i] > threshold;
        if i > 0 {
            let prev_above = ys[i - 1] > threshold;
            if prev_above != above {
                let frac = (ys[i - 1] - threshold) / (ys[i - 1] - ys[i]);
                let xc = xs[i - 1] + frac * (xs[i] - xs[i - 1]);
                push(prev_above, (xc, threshold));
                push(above, (xc, threshold));
            }
        }
        push(above, (xs[i], ys[i]));
    }
    out
}

pub fn render(plot: &SurprisePlot<'_>) -> Result<String, PlotError> {
    let (xs_all, ys_all) = (plot.theta, plot.surprise);
    if xs_all.len() < 2 || xs_all.len() != ys_all.len() {
        return Err(PlotError::EmptyTable {
            theta: xs_all.len(),
            surprise: ys_all.len(),
        });
    }
    let peak = ys_all.iter().cloned().fold(0.0, f64::max);
    let visible: Vec<usize> = (0..xs_all.len())
        .filter(|&i| ys_all[i] > CROP_FRACTION * peak)
        .collect();
    let (mut a, mut b) = match (visible.first(), visible.last()) {
        (Some(&f), Some(&l)) => (f.saturating_sub(1), (l + 1).min(xs_all.len() - 1)),
        _ => (0, xs_all.len() - 1),
    };
    if plot.theta0.is_finite() {
        while a > 0 && xs_all[a] > plot.theta0 {
            a -= 1;
        }
        while b + 1 < xs_all.len() && xs_all[b] < plot.theta0 {
            b += 1;
        }
    }
    if a == b {
        (a, b) = (0, xs_all.len() - 1);
    }
    let (xs, ys) = (&xs_all[a..=b], &ys_all[a..=b]);
    let (x_lo, x_hi) = (xs[0], xs[xs.len() - 1]);
    let y_hi = 1.08 * peak.max(plot.s_star).max(f64::MIN_POSITIVE);
    let px = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * (WIDTH - LEFT - RIGHT);
    let py = |y: f64| HEIGHT - BOTTOM - y / y_hi * (HEIGHT - TOP - BOTTOM);
    let base = py(0.0);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8" standalone="no"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, "  <title>{}</title>", escape(plot.title));
    let _ = writeln!(
        svg,
        r#"  <rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );

    for (above, pts) in regions(xs, ys, plot.s_star) {
        if pts.len() < 2 {
            continue;
        }
        let (fill, class) = if above {
            (TANGENTIAL_FILL, "tangential")
        } else {
            (COMPLEMENT_FILL, "complement")
        };
        let mut d = format!("{:.2},{:.2}", px(pts[0].0), base);
        for &(x, y) in &pts {
            let _ = write!(d, " {:.2},{:.2}", px(x), py(y));
        }
        let _ = write!(d, " {:.2},{:.2}", px(pts[pts.len() - 1].0), base);
        let _ = writeln!(
            svg,
            r#"  <polygon class="{class}" points="{d}" fill="{fill}" fill-opacity="0.75" stroke="none"/>"#
        );
    }

    let curve: Vec<String> = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y)))
        .collect();
    let _ = writeln!(
        svg,
        r#"  <polyline points="{}" fill="none" stroke="black" stroke-width="1.5"/>"#,
        curve.join(" ")
    );
    let _ = writeln!(
        svg,
        r##"  <line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#b22222" stroke-width="1.2" stroke-dasharray="6,4"/>"##,
        LEFT,
        py(plot.s_star),
        WIDTH - RIGHT,
        py(plot.s_star)
    );
    if plot.theta0 >= x_lo && plot.theta0 <= x_hi {
        let _ = writeln!(
            svg,
            r##"  <circle cx="{:.2}" cy="{:.2}" r="4.5" fill="#b22222" stroke="black" stroke-width="0.8"/>"##,
            px(plot.theta0),
            py(plot.s_star)
        );
    }

    // axes
    let _ = writeln!(
        svg,
        r#"  <path d="M {LEFT} {TOP} L {LEFT} {base:.2} L {:.2} {base:.2}" fill="none" stroke="black"/>"#,
        WIDTH - RIGHT
    );
    for t in ticks(x_lo, x_hi, 6) {
        let x = px(t);
        let _ = writeln!(
            svg,
            r#"  <line x1="{x:.2}" y1="{base:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
            base + 5.0
        );
        let _ = writeln!(
            svg,
            r#"  <text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            base + 18.0,
            fmt_tick(t)
        );
    }
    for t in ticks(0.0, y_hi, 5) {
        let y = py(t);
        let _ = writeln!(
            svg,
            r#"  <line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/>"#,
            LEFT - 5.0
        );
        let _ = writeln!(
            svg,
            r#"  <text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 8.0,
            y + 4.0,
            fmt_tick(t)
        );
    }
    let _ = writeln!(
        svg,
        r#"  <text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        HEIGHT - 18.0,
        escape(plot.x_label)
    );
    let _ = writeln!(
        svg,
        r#"  <text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">surprise s(θ)</text>"#,
        (TOP + base) / 2.0,
        (TOP + base) / 2.0
    );
    let _ = writeln!(
        svg,
        r#"  <text x="{LEFT}" y="24" font-size="14">{}</text>"#,
        escape(plot.title)
    );

    // legend with the two masses
    let lx = WIDTH - RIGHT - 250.0;
    let entries = [
        (
            TANGENTIAL_FILL,
            "tangential",
            format!("tangential set s &gt; s*: {:.3}", plot.ev_against),
        ),
        (
            COMPLEMENT_FILL,
            "complement",
            format!("complement s ≤ s*: {:.3}", 1.0 - plot.ev_against),
        ),
    ];
    for (i, (fill, class, label)) in entries.iter().enumerate() {
        let y = TOP + 8.0 + 20.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"  <rect x="{lx}" y="{y}" width="14" height="12" fill="{fill}" fill-opacity="0.75"/>"#
        );
        let _ = writeln!(
            svg,
            r#"  <text class="{class}-mass" x="{}" y="{}">{label}</text>"#,
            lx + 20.0,
            y + 10.0
        );
    }
    let _ = writeln!(
        svg,
        r##"  <text x="{lx}" y="{}" fill="#b22222">s* = {:.4}</text>"##,
        TOP + 58.0,
        plot.s_star
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn fmt_tick(t: f64) -> String {
    let s = format!("{t:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

pub fn write(plot: &SurprisePlot<'_>, path: &Path) -> Result<(), PlotError> {
    let svg = render(plot)?;
    std::fs::write(path, svg).map_err(|source| PlotError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regions_split_at_crossings() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        let ys = [0.0, 1.0, 3.0, 1.0, 0.0];
        let r = regions(&xs, &ys, 2.0);
        let flags: Vec<bool> = r.iter().map(|(f, _)| *f).collect();
        assert_eq!(flags, vec![false, true, false]);
        assert_eq!(r[1].1.first().unwrap().0, 1.5);
        assert_eq!(r[1].1.last().unwrap().0, 2.5);
    }

    #[test]
    fn tick_values() {
        assert_eq!(ticks(0.0, 1.0, 5), vec![0.0, 0.2, 0.4, 0.6000000000000001, 0.8, 1.0]);
        assert_eq!(fmt_tick(0.6000000000000001), "0.6");
        assert_eq!(fmt_tick(-0.0), "0");
    }

    #[test]
    fn uniform_curve_has_single_region() {
        let xs: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        let ys = vec![1.0; 11];
        let svg = render(&SurprisePlot {
            theta: &xs,
            surprise: &ys,
            s_star: 1.0,
            theta0: 0.5,
            ev_against: 0.0,
            title: "uniform",
            x_label: "θ",
        })
        .unwrap();
        assert_eq!(svg.matches("<polygon").count(), 1);
        assert!(svg.contains("class=\"complement\""));
        assert!(svg.contains("tangential set s &gt; s*: 0.000"));
    }

    #[test]
    fn empty_table_rejected() {
        let r = render(&SurprisePlot {
            theta: &[],
            surprise: &[],
            s_star: 0.0,
            theta0: 0.0,
            ev_against: 0.0,
            title: "",
            x_label: "",
        });
        assert!(matches!(r, Err(PlotError::EmptyTable { .. })));
    }
}

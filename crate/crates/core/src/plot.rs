//! Line chart of sweep results as self-contained SVG text.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{bail, Code, Error, Result};
use crate::experiment::{SweepRow, CSV_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Schedulable,
    Colors,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "schedulable" | "schedulable_pct" => Ok(Metric::Schedulable),
            "colors" | "avg_colors_used" => Ok(Metric::Colors),
            _ => bail!(
                Code::Malformed,
                "unknown metric {s:?}; valid metrics: schedulable, colors"
            ),
        }
    }
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f",
];

/// Parses a sweep CSV. The header must match and the body must hold at
/// least one row.
pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        Some(h) => bail!(Code::Malformed, "expected header {CSV_HEADER:?}, found {:?}", h.trim()),
        None => bail!(Code::Malformed, "empty CSV"),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 4 {
            bail!(
                Code::Malformed,
                "line {lineno}: expected 4 fields, found {}",
                fields.len()
            );
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => bail!(Code::Malformed, "line {lineno}: bad {what} {s:?}"),
            }
        };
        if fields[1].is_empty() {
            bail!(Code::Malformed, "line {lineno}: empty method");
        }
        rows.push(SweepRow {
            utilization: num(fields[0], "utilization")?,
            method: fields[1].to_string(),
            schedulable_pct: num(fields[2], "schedulable_pct")?,
            avg_colors_used: match fields[3] {
                "" => None,
                s => Some(num(s, "avg_colors_used")?),
            },
        });
    }
    if rows.is_empty() {
        bail!(Code::Malformed, "CSV has a header but no rows");
    }
    Ok(rows)
}

/// Renders one polyline per method, in order of first appearance. For
/// `Metric::Colors` the y-axis spans 0..=`colors` and values are capped
/// there.
pub fn render_svg(rows: &[SweepRow], metric: Metric, colors: u32) -> Result<String> {
    if rows.is_empty() {
        bail!(Code::Malformed, "nothing to plot");
    }
    let mut order: Vec<&str> = Vec::new();
    let mut series: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        if !series.contains_key(&*r.method) {
            order.push(&r.method);
        }
        let points = series.entry(&r.method).or_default();
        let y = match metric {
            Metric::Schedulable => Some(r.schedulable_pct.clamp(0.0, 100.0)),
            Metric::Colors => r.avg_colors_used.map(|c| c.clamp(0.0, f64::from(colors))),
        };
        if let Some(y) = y {
            points.push((r.utilization, y));
        }
    }
    let x_min = rows.iter().map(|r| r.utilization).fold(f64::INFINITY, f64::min);
    let mut x_max = rows.iter().map(|r| r.utilization).fold(f64::NEG_INFINITY, f64::max);
    if x_max <= x_min {
        x_max = x_min + 1.0;
    }
    let (y_max, y_label) = match metric {
        Metric::Schedulable => (100.0, "schedulable task sets (%)"),
        Metric::Colors => (f64::from(colors.max(1)), "average colors used"),
    };
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x_min) / (x_max - x_min) * plot_w;
    let sy = |y: f64| TOP + plot_h - y / y_max * plot_h;

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<g class="axes" stroke="black" fill="none"><line x1="{LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/><line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.2}"/></g>"#,
        TOP + plot_h,
        LEFT + plot_w,
        TOP + plot_h,
        TOP + plot_h
    )
    .unwrap();
    for i in 0..=4 {
        let x = x_min + (x_max - x_min) * f64::from(i) / 4.0;
        let y = y_max * f64::from(i) / 4.0;
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{x:.2}</text>"#,
            sx(x),
            TOP + plot_h + 18.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            sy(y) + 4.0,
            trim_number(y)
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">utilization</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 10.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text transform="translate(16 {:.2}) rotate(-90)" text-anchor="middle">{y_label}</text>"#,
        TOP + plot_h / 2.0
    )
    .unwrap();
    for (i, method) in order.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = series[method]
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let name = escape(method);
        writeln!(
            s,
            r#"<polyline data-method="{name}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        )
        .unwrap();
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = LEFT + plot_w + 16.0;
        writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text class="legend" x="{:.2}" y="{:.2}">{name}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Parses a sweep CSV and renders it.
pub fn plot_csv(text: &str, metric: Metric, colors: u32) -> Result<String> {
    render_svg(&parse_sweep_csv(text)?, metric, colors)
}

fn trim_number(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::METHODS;

    fn sample_csv() -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for u in ["0.90", "1.00", "1.10"] {
            for (i, m) in METHODS.iter().enumerate() {
                let avg = if *m == "infinite_cache" {
                    String::new()
                } else {
                    format!("{}.500", 8 + i * 4)
                };
                s.push_str(&format!("{u},{m},{}.00,{avg}\n", 100 - i * 10));
            }
        }
        s
    }

    #[test]
    fn five_methods_five_polylines() {
        let svg = plot_csv(&sample_csv(), Metric::Schedulable, 16).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 5);
        for m in METHODS {
            assert!(svg.contains(&format!(
                r#"class="legend" x="{:.2}" y="#,
                LEFT + WIDTH - LEFT - RIGHT + 42.0
            )));
            assert!(svg.contains(&format!(">{m}</text>")), "{m}");
        }
        assert!(!svg.contains("href"));
    }

    #[test]
    fn colors_axis_capped_at_k() {
        let svg = plot_csv(&sample_csv(), Metric::Colors, 16).unwrap();
        assert!(svg.contains(">16</text>"));
        assert!(!svg.contains(">100</text>"));
        // 24.5 exceeds K and must sit on the top edge, never above it.
        let ys: Vec<f64> = svg
            .lines()
            .filter(|l| l.starts_with("<polyline"))
            .flat_map(|l| {
                let pts = l
                    .split("points=\"")
                    .nth(1)
                    .unwrap()
                    .trim_end_matches("\"/>")
                    .to_string();
                pts.split_whitespace()
                    .map(|p| p.split(',').nth(1).unwrap().parse::<f64>().unwrap())
                    .collect::<Vec<_>>()
            })
            .collect();
        assert!(ys.iter().all(|&y| y >= TOP - 1e-9));
        assert!(ys.iter().any(|&y| (y - TOP).abs() < 1e-9));
    }

    #[test]
    fn empty_body_is_rejected() {
        let err = plot_csv(&format!("{CSV_HEADER}\n"), Metric::Schedulable, 16).unwrap_err();
        assert_eq!(err.code, Code::Malformed);
        assert!(plot_csv("", Metric::Schedulable, 16).is_err());
        assert!(plot_csv("a,b\n1,2\n", Metric::Schedulable, 16).is_err());
        let bad = format!("{CSV_HEADER}\n0.9,ilp_fair,abc,1\n");
        assert!(plot_csv(&bad, Metric::Schedulable, 16).is_err());
    }

    #[test]
    fn deterministic_output() {
        let a = plot_csv(&sample_csv(), Metric::Schedulable, 16).unwrap();
        let b = plot_csv(&sample_csv(), Metric::Schedulable, 16).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn metric_names() {
        assert_eq!("colors".parse::<Metric>().unwrap(), Metric::Colors);
        assert_eq!("schedulable".parse::<Metric>().unwrap(), Metric::Schedulable);
        assert!("pages".parse::<Metric>().is_err());
    }
}

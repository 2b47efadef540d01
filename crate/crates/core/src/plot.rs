//! Static SVG line charts of a run CSV: one line per (rule, eta) cell,
//! averaged over seeds at each epoch.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Read;

use crate::harness::{format_float, DIVERGED};
use crate::{Error, Result};

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 460.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 210.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

const PALETTE: [&str; 10] =
    ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

/// Mean metric per epoch for one legend entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Reads a run CSV and averages `metric` over all rows sharing a rule, eta
/// and epoch. Rows marked as diverged are skipped.
pub fn collect_series<R: Read>(input: R, metric: &str) -> Result<Vec<Series>> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers().map_err(|e| Error::Config(format!("unreadable CSV header: {e}")))?.clone();
    let column = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Config(format!(
                "column '{name}' not found; available columns: {}",
                headers.iter().collect::<Vec<_>>().join(", ")
            ))
        })
    };
    let (rule, eta, epoch, value) = (column("rule")?, column("eta")?, column("epoch")?, column(metric)?);

    // Cell label -> epoch -> (sum, count). BTreeMaps keep the output order
    // independent of row order.
    let mut cells: BTreeMap<(String, String), BTreeMap<u64, (f64, usize)>> = BTreeMap::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|e| Error::Config(format!("bad CSV row {}: {e}", line + 2)))?;
        let field = |i: usize| row.get(i).unwrap_or("");
        if field(value) == DIVERGED {
            continue;
        }
        let parse_err = |what: &str| Error::Config(format!("row {}: cannot parse {what}", line + 2));
        let e: u64 = field(epoch).parse().map_err(|_| parse_err("epoch"))?;
        let v: f64 = field(value).parse().map_err(|_| parse_err(metric))?;
        let slot =
            cells.entry((field(rule).to_string(), field(eta).to_string())).or_default().entry(e).or_insert((0.0, 0));
        slot.0 += v;
        slot.1 += 1;
    }
    Ok(cells
        .into_iter()
        .map(|((rule, eta), epochs)| Series {
            label: format!("{rule} eta={eta}"),
            points: epochs.into_iter().map(|(e, (sum, n))| (e as f64, sum / n as f64)).collect(),
        })
        .collect())
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) =
        values.fold(
            (f64::INFINITY, f64::NEG_INFINITY),
            |(lo, hi), v| {
                if v.is_finite() {
                    (lo.min(v), hi.max(v))
                } else {
                    (lo, hi)
                }
            },
        );
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Renders the series as an SVG document. Coordinates are printed with two
/// decimals so the bytes depend only on the data.
pub fn render_svg(series: &[Series], metric: &str) -> String {
    let all = || series.iter().flat_map(|s| s.points.iter());
    let (x_lo, x_hi) = {
        let lo = all().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let hi = all().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        if lo.is_finite() && hi > lo {
            (lo, hi)
        } else {
            padded_range(all().map(|p| p.0))
        }
    };
    let (y_lo, y_hi) = padded_range(all().map(|p| p.1));
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| TOP + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ =
        writeln!(svg, r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#);

    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = x_lo + t * (x_hi - x_lo);
        let yv = y_lo + t * (y_hi - y_lo);
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(
            svg,
            r##"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="#ccc"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
            TOP,
            TOP + plot_h,
            TOP + plot_h + 18.0,
            tick_label(xv)
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#ccc"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT + plot_w,
            LEFT - 6.0,
            py + 4.0,
            tick_label(yv)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">epoch</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0,
        escape(metric)
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> =
            s.points.iter().filter(|p| p.1.is_finite()).map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        if points.len() == 1 {
            let (x, y) = points[0].split_once(',').expect("formatted pair");
            let _ = writeln!(svg, r#"<circle cx="{x}" cy="{y}" r="3" fill="{color}"/>"#);
        } else {
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                points.join(" ")
            );
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 14.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn tick_label(v: f64) -> String {
    // Round to 4 significant digits before the usual formatting so ticks
    // stay short.
    let rounded: f64 = format!("{v:.3e}").parse().unwrap_or(v);
    format_float(rounded)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str =
        "run_id,rule,eta,steps,init,temperature,seed,epoch,train_loss,eval_loss,latent_exact,latent_f1,wall_ms\n\
        0,spigot,1,1,map_vertex,1,0,0,2,2,0.5,0.5,0\n\
        0,spigot,1,1,map_vertex,1,0,1,1,1,0.5,0.5,0\n\
        1,spigot,1,1,map_vertex,1,1,0,4,4,0.5,0.5,0\n\
        1,spigot,1,1,map_vertex,1,1,1,diverged,diverged,diverged,diverged,0\n\
        2,ste,1,1,map_vertex,1,0,0,3,3,0.5,0.5,0\n";

    #[test]
    fn averages_over_seeds_and_skips_divergence() {
        let series = collect_series(CSV.as_bytes(), "eval_loss").unwrap();
        assert_eq!(series.len(), 2);
        assert_eq!(series[0].label, "spigot eta=1");
        assert_eq!(series[0].points, vec![(0.0, 3.0), (1.0, 1.0)]);
        assert_eq!(series[1].points, vec![(0.0, 3.0)]);
    }

    #[test]
    fn missing_metric_lists_columns() {
        let err = collect_series(CSV.as_bytes(), "accuracy").unwrap_err().to_string();
        assert!(err.contains("accuracy") && err.contains("latent_f1"));
    }

    #[test]
    fn svg_has_one_line_per_cell_and_legend() {
        let series = collect_series(CSV.as_bytes(), "eval_loss").unwrap();
        let svg = render_svg(&series, "eval_loss");
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(svg.matches("<circle").count(), 1);
        assert!(svg.contains("spigot eta=1") && svg.contains("ste eta=1"));
        assert_eq!(svg, render_svg(&series, "eval_loss"));
    }
}

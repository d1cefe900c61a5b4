//! CSV and SVG emission.
//!
//! Trajectories are written as `t,x1,...,xn` with 17 significant digits
//! so doubles survive a write/read round trip bit-exactly. Plots are
//! written as self-contained SVG (lines, axes, legend) with solid
//! strokes for true variables and dashed strokes for approximations.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::Error;
use crate::integrate::Trajectory;
use crate::Result;

/// One double, full precision (17 significant digits).
fn fmt_double(v: f64) -> String {
    format!("{v:.16e}")
}

/// Render a trajectory as CSV text.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let n = traj.states.first().map_or(0, |s| s.len());
    let mut out = String::new();
    out.push('t');
    for i in 1..=n {
        let _ = write!(out, ",x{i}");
    }
    out.push('\n');
    for (t, state) in traj.times.iter().zip(&traj.states) {
        out.push_str(&fmt_double(*t));
        for v in state.iter() {
            out.push(',');
            out.push_str(&fmt_double(*v));
        }
        out.push('\n');
    }
    out
}

/// Write a trajectory CSV to `path`.
pub fn emit_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    std::fs::write(path, trajectory_csv(traj))?;
    Ok(())
}

/// Generic numeric table with an arbitrary header; used for comparison
/// exports where the columns are not a single state vector.
pub fn table_csv(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            out.push_str(&fmt_double(*v));
            first = false;
        }
        out.push('\n');
    }
    out
}

/// Matrix as CSV (one row per line), for dumping decomposition blocks.
pub fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for r in 0..m.nrows() {
        let mut first = true;
        for c in 0..m.ncols() {
            if !first {
                out.push(',');
            }
            out.push_str(&fmt_double(m[(r, c)]));
            first = false;
        }
        out.push('\n');
    }
    out
}

/// Parse CSV text written by [`trajectory_csv`] back into times and
/// state rows. Used as the round-trip oracle and by anyone re-importing
/// results.
pub fn parse_trajectory_csv(text: &str) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config("empty CSV".into()))?;
    if !header.starts_with('t') {
        return Err(Error::Config("CSV header must start with `t`".into()));
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let t: f64 = fields
            .next()
            .unwrap()
            .parse()
            .map_err(|e| Error::Config(format!("line {}: bad time: {e}", lineno + 2)))?;
        let row: std::result::Result<Vec<f64>, _> = fields.map(str::parse).collect();
        let row = row.map_err(|e| Error::Config(format!("line {}: bad value: {e}", lineno + 2)))?;
        times.push(t);
        states.push(row);
    }
    Ok((times, states))
}

/// One curve of a plot.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    /// Any SVG color string.
    pub color: String,
    /// Dashed strokes mark approximations.
    pub dashed: bool,
    pub points: Vec<(f64, f64)>,
}

/// A complete figure.
#[derive(Debug, Clone)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

const PLOT_W: f64 = 840.0;
const PLOT_H: f64 = 520.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 30.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;

impl Plot {
    /// Render to SVG markup. Errors when there is nothing to draw.
    pub fn to_svg(&self) -> Result<String> {
        if self.series.is_empty() || self.series.iter().all(|s| s.points.is_empty()) {
            return Err(Error::EmptyPlot);
        }
        let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for s in &self.series {
            for &(x, y) in &s.points {
                x_lo = x_lo.min(x);
                x_hi = x_hi.max(x);
                y_lo = y_lo.min(y);
                y_hi = y_hi.max(y);
            }
        }
        if x_hi == x_lo {
            x_hi = x_lo + 1.0;
        }
        if y_hi == y_lo {
            y_hi = y_lo + 1.0;
        }
        // A little headroom keeps curves off the frame.
        let pad = 0.05 * (y_hi - y_lo);
        y_lo -= pad;
        y_hi += pad;

        let plot_w = PLOT_W - MARGIN_L - MARGIN_R;
        let plot_h = PLOT_H - MARGIN_T - MARGIN_B;
        let sx = move |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * plot_w;
        let sy = move |y: f64| MARGIN_T + (y_hi - y) / (y_hi - y_lo) * plot_h;

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PLOT_W}" height="{PLOT_H}" viewBox="0 0 {PLOT_W} {PLOT_H}">"#
        );
        let _ = writeln!(
            svg,
            r#"<rect width="{PLOT_W}" height="{PLOT_H}" fill="white"/>"#
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
            PLOT_W / 2.0,
            xml_escape(&self.title)
        );

        // Frame.
        let _ = writeln!(
            svg,
            r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{plot_w:.1}" height="{plot_h:.1}" fill="none" stroke="black" stroke-width="1"/>"#
        );

        // Ticks and grid.
        for i in 0..=5 {
            let fx = x_lo + (x_hi - x_lo) * i as f64 / 5.0;
            let px = sx(fx);
            let _ = writeln!(
                svg,
                r#"<line x1="{px:.1}" y1="{:.1}" x2="{px:.1}" y2="{:.1}" stroke="black"/>"#,
                MARGIN_T + plot_h,
                MARGIN_T + plot_h + 5.0
            );
            let _ = writeln!(
                svg,
                r#"<text x="{px:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
                MARGIN_T + plot_h + 18.0,
                tick_label(fx)
            );
            let fy = y_lo + (y_hi - y_lo) * i as f64 / 5.0;
            let py = sy(fy);
            let _ = writeln!(
                svg,
                r#"<line x1="{:.1}" y1="{py:.1}" x2="{MARGIN_L}" y2="{py:.1}" stroke="black"/>"#,
                MARGIN_L - 5.0
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
                MARGIN_L - 8.0,
                py + 4.0,
                tick_label(fy)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
            MARGIN_L + plot_w / 2.0,
            PLOT_H - 14.0,
            xml_escape(&self.x_label)
        );
        let _ = writeln!(
            svg,
            r#"<text x="18" y="{:.1}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
            MARGIN_T + plot_h / 2.0,
            MARGIN_T + plot_h / 2.0,
            xml_escape(&self.y_label)
        );

        // Curves.
        for s in &self.series {
            if s.points.is_empty() {
                continue;
            }
            let mut d = String::new();
            for (i, &(x, y)) in s.points.iter().enumerate() {
                let _ = write!(
                    d,
                    "{}{:.2},{:.2} ",
                    if i == 0 { "M" } else { "L" },
                    sx(x),
                    sy(y)
                );
            }
            let dash = if s.dashed {
                r#" stroke-dasharray="7 5""#
            } else {
                ""
            };
            let _ = writeln!(
                svg,
                r#"<path d="{}" fill="none" stroke="{}" stroke-width="1.6"{dash}/>"#,
                d.trim_end(),
                xml_escape(&s.color)
            );
        }

        // Legend, top right inside the frame.
        let legend_x = MARGIN_L + plot_w - 190.0;
        let mut legend_y = MARGIN_T + 16.0;
        for s in &self.series {
            let dash = if s.dashed {
                r#" stroke-dasharray="7 5""#
            } else {
                ""
            };
            let _ = writeln!(
                svg,
                r#"<line x1="{legend_x:.1}" y1="{legend_y:.1}" x2="{:.1}" y2="{legend_y:.1}" stroke="{}" stroke-width="1.6"{dash}/>"#,
                legend_x + 28.0,
                xml_escape(&s.color)
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12">{}</text>"#,
                legend_x + 34.0,
                legend_y + 4.0,
                xml_escape(&s.label)
            );
            legend_y += 17.0;
        }

        svg.push_str("</svg>\n");
        Ok(svg)
    }
}

/// Write a plot to `path`.
pub fn emit_plot(plot: &Plot, path: &Path) -> Result<()> {
    std::fs::write(path, plot.to_svg()?)?;
    Ok(())
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1000.0 || v.abs() < 0.01 {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::{integrate, SolverOptions};
    use nalgebra::DVector;

    fn sample_trajectory() -> Trajectory {
        let l = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        integrate(
            move |_| -l.clone(),
            &DVector::from_vec(vec![1.0, 0.0]),
            0.0,
            0.5,
            SolverOptions {
                step: Some(0.05),
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let traj = sample_trajectory();
        let text = trajectory_csv(&traj);
        let (times, states) = parse_trajectory_csv(&text).unwrap();
        assert_eq!(times.len(), traj.times.len());
        for (a, b) in times.iter().zip(&traj.times) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (row, state) in states.iter().zip(&traj.states) {
            for (a, b) in row.iter().zip(state.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn csv_header_matches_width() {
        let traj = sample_trajectory();
        let text = trajectory_csv(&traj);
        assert!(text.starts_with("t,x1,x2\n"));
    }

    #[test]
    fn empty_plot_is_an_error() {
        let plot = Plot {
            title: "nothing".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![],
        };
        assert!(matches!(plot.to_svg(), Err(Error::EmptyPlot)));
    }

    #[test]
    fn two_series_plot_is_well_formed() {
        let plot = Plot {
            title: "pair".into(),
            x_label: "time".into(),
            y_label: "state".into(),
            series: vec![
                Series {
                    label: "true".into(),
                    color: "red".into(),
                    dashed: false,
                    points: (0..50)
                        .map(|i| (i as f64, (i as f64 * 0.1).sin()))
                        .collect(),
                },
                Series {
                    label: "approx".into(),
                    color: "blue".into(),
                    dashed: true,
                    points: (0..50)
                        .map(|i| (i as f64, (i as f64 * 0.1).cos()))
                        .collect(),
                },
            ],
        };
        let svg = plot.to_svg().unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("stroke-dasharray"));
        assert!(svg.contains("approx"));
        // Balanced tags for the simple subset we emit.
        assert_eq!(svg.matches("<svg").count(), 1);
        assert_eq!(svg.matches("</svg>").count(), 1);
    }

    #[test]
    fn matrix_csv_shape() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let text = matrix_csv(&m);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split(',').count(), 3);
        let first: f64 = lines[0].split(',').next().unwrap().parse().unwrap();
        assert_eq!(first, 1.0);
    }
}

//! Minimal SVG rendering of a sweep: mean stopping time against
//! `log(1/delta)` on log-log axes.

use std::fmt::Write as _;

use crate::engine::SweepAggregate;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 60.0;

/// A horizontal or per-delta reference curve drawn next to the main one.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtraSeries {
    pub label: String,
    /// One value per sweep row.
    pub values: Vec<f64>,
    pub color: &'static str,
}

struct Axis {
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_hi: f64,
}

impl Axis {
    fn from_values(values: impl Iterator<Item = f64>, px_lo: f64, px_hi: f64) -> Axis {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && *v > 0.0) {
            lo = lo.min(v.log10());
            hi = hi.max(v.log10());
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        Axis { lo: lo.floor(), hi: hi.ceil().max(lo.floor() + 1.0), px_lo, px_hi }
    }

    fn map(&self, v: f64) -> f64 {
        let f = (v.max(1e-300).log10() - self.lo) / (self.hi - self.lo);
        self.px_lo + f * (self.px_hi - self.px_lo)
    }
}

fn polyline(out: &mut String, pts: &[(f64, f64)], color: &str, dash: bool) {
    if pts.is_empty() {
        return;
    }
    let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let dash = if dash { " stroke-dasharray=\"6 4\"" } else { "" };
    let _ = writeln!(
        out,
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"{dash} points=\"{}\"/>",
        coords.join(" ")
    );
}

/// Renders the sweep as a standalone SVG document. The shaded band spans
/// mean +/- 2 std (clipped at 1).
pub fn sweep_svg(rows: &[SweepAggregate], extras: &[ExtraSeries], title: &str) -> String {
    let xs: Vec<f64> = rows.iter().map(|r| (1.0 / r.delta).ln()).collect();
    let x_axis = Axis::from_values(xs.iter().copied(), MARGIN_L, WIDTH - MARGIN_R);
    let y_values = rows
        .iter()
        .flat_map(|r| [r.mean_tau + 2.0 * r.std_tau, (r.mean_tau - 2.0 * r.std_tau).max(1.0), r.bound_4u_log])
        .chain(extras.iter().flat_map(|e| e.values.iter().copied()));
    let y_axis = Axis::from_values(y_values, HEIGHT - MARGIN_B, MARGIN_T);

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(out, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{}</text>",
        WIDTH / 2.0,
        escape(title)
    );

    // Axes with decade ticks.
    let (x0, y0) = (MARGIN_L, HEIGHT - MARGIN_B);
    let _ = writeln!(
        out,
        "<path d=\"M{x0},{MARGIN_T} L{x0},{y0} L{},{y0}\" stroke=\"black\" fill=\"none\"/>",
        WIDTH - MARGIN_R
    );
    for e in x_axis.lo as i32..=x_axis.hi as i32 {
        let x = x_axis.map(10f64.powi(e));
        let _ = writeln!(
            out,
            "<line x1=\"{x:.2}\" y1=\"{y0}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"black\"/><text x=\"{x:.2}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">1e{e}</text>",
            y0 + 5.0,
            y0 + 18.0
        );
    }
    for e in y_axis.lo as i32..=y_axis.hi as i32 {
        let y = y_axis.map(10f64.powi(e));
        let _ = writeln!(
            out,
            "<line x1=\"{}\" y1=\"{y:.2}\" x2=\"{x0}\" y2=\"{y:.2}\" stroke=\"black\"/><text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">1e{e}</text>",
            x0 - 5.0,
            x0 - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">log(1/delta)</text>",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        out,
        "<text x=\"18\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 18 {})\">samples</text>",
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );

    if !rows.is_empty() {
        let upper: Vec<(f64, f64)> =
            rows.iter().zip(&xs).map(|(r, &x)| (x_axis.map(x), y_axis.map(r.mean_tau + 2.0 * r.std_tau))).collect();
        let lower: Vec<(f64, f64)> = rows
            .iter()
            .zip(&xs)
            .rev()
            .map(|(r, &x)| (x_axis.map(x), y_axis.map((r.mean_tau - 2.0 * r.std_tau).max(1.0))))
            .collect();
        let band: Vec<String> = upper.iter().chain(&lower).map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            out,
            "<polygon fill=\"#1f77b4\" fill-opacity=\"0.2\" stroke=\"none\" points=\"{}\"/>",
            band.join(" ")
        );
        let mean: Vec<(f64, f64)> =
            rows.iter().zip(&xs).map(|(r, &x)| (x_axis.map(x), y_axis.map(r.mean_tau))).collect();
        polyline(&mut out, &mean, "#1f77b4", false);
        let bound: Vec<(f64, f64)> =
            rows.iter().zip(&xs).map(|(r, &x)| (x_axis.map(x), y_axis.map(r.bound_4u_log))).collect();
        polyline(&mut out, &bound, "#d62728", true);
    }
    for e in extras {
        let pts: Vec<(f64, f64)> = e.values.iter().zip(&xs).map(|(&v, &x)| (x_axis.map(x), y_axis.map(v))).collect();
        polyline(&mut out, &pts, e.color, false);
    }

    let mut legend = vec![("mean tau (+/- 2 std)".to_string(), "#1f77b4"), ("4U log(1/delta)".to_string(), "#d62728")];
    legend.extend(extras.iter().map(|e| (e.label.clone(), e.color)));
    for (i, (label, color)) in legend.iter().enumerate() {
        let y = MARGIN_T + 12.0 + 16.0 * i as f64;
        let _ = writeln!(
            out,
            "<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"4\" fill=\"{color}\"/><text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            MARGIN_L + 12.0,
            y - 4.0,
            MARGIN_L + 30.0,
            y,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_all_series() {
        let rows: Vec<SweepAggregate> = [0.1, 1e-3, 1e-6]
            .iter()
            .map(|&d| SweepAggregate {
                delta: d,
                runs: 3,
                mean_tau: 1e4 * (1.0 / d).ln(),
                std_tau: 100.0,
                errors: 0,
                budget_exhausted: 0,
                bound_4u_log: 3e4 * (1.0 / d).ln(),
            })
            .collect();
        let extra = ExtraSeries { label: "uniform <ref>".into(), values: vec![1e5, 2e5, 3e5], color: "#2ca02c" };
        let svg = sweep_svg(&rows, &[extra], "sweep");
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(svg.contains("uniform &lt;ref&gt;"));
        assert!(svg.contains("log(1/delta)"));
    }

    #[test]
    fn empty_sweep_is_still_valid() {
        let svg = sweep_svg(&[], &[], "empty");
        assert!(svg.contains("</svg>"));
        assert!(!svg.contains("<polyline"));
    }
}

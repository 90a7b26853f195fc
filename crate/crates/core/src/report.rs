//! CSV tables and self-contained SVG line plots.
//!
//! Plots are rendered from the CSV text they accompany, so re-rendering a
//! table always reproduces the same picture.

use std::fmt::Write as _;
use std::io::Write;

use crate::error::{Error, Result};
use crate::functionals::SizeEstimateReport;
use crate::harness::{ConvergenceTable, FitResult};

/// Writes the sweep table with [`SizeEstimateReport::CSV_HEADER`].
pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SizeEstimateReport]) -> std::io::Result<()> {
    writeln!(w, "{}", SizeEstimateReport::CSV_HEADER)?;
    for r in rows {
        writeln!(w, "{}", r.csv_row())?;
    }
    w.flush()
}

pub const WINDOW_CSV_HEADER: &str = "parameter,datum,nx,ny,window_start,window_end,discrepancy_h1,discrepancy_flux,grad_phi_h1,phi0_h1";

/// One line per (row, window) pair.
pub fn write_window_csv<W: Write>(mut w: W, rows: &[SizeEstimateReport]) -> std::io::Result<()> {
    writeln!(w, "{WINDOW_CSV_HEADER}")?;
    for r in rows {
        for m in &r.windows {
            writeln!(
                w,
                "{:.17e},{},{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                r.parameter, r.datum, r.nx, r.ny, m.window.start, m.window.end, m.discrepancy_h1,
                m.discrepancy_flux, m.grad_phi_h1, m.phi0_h1
            )?;
        }
    }
    w.flush()
}

pub const CONVERGENCE_CSV_HEADER: &str = "nx,ny,h,error_h1,error_flux,order_h1,order_flux,flagged";

pub fn write_convergence_csv<W: Write>(mut w: W, t: &ConvergenceTable) -> std::io::Result<()> {
    let o = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
    writeln!(w, "{CONVERGENCE_CSV_HEADER}")?;
    for r in &t.rows {
        writeln!(
            w,
            "{},{},{:.17e},{:.17e},{:.17e},{},{},{}",
            r.nx, r.ny, r.h, r.error_h1, r.error_flux, o(r.order_h1), o(r.order_flux), r.flagged
        )?;
    }
    w.flush()
}

pub const FIT_CSV_HEADER: &str = "datum,c_lower,c_upper,train,test,held_out_violations,zero_area_violations,error";

/// One line per datum; failed fits keep their message.
pub fn write_fit_csv<W: Write>(mut w: W, fits: &[(String, Result<FitResult>)]) -> std::io::Result<()> {
    writeln!(w, "{FIT_CSV_HEADER}")?;
    let join = |p: &[f64]| p.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(" ");
    for (datum, fit) in fits {
        match fit {
            Ok(f) => writeln!(
                w,
                "{datum},{:.17e},{:.17e},{},{},{},{},",
                f.c_lower,
                f.c_upper,
                join(&f.train_parameters),
                join(&f.test_parameters),
                f.held_out_violations(),
                f.zero_area_violations
            )?,
            Err(e) => writeln!(w, "{datum},,,,,,,{}", e.to_string().replace([',', '\n'], " "))?,
        }
    }
    w.flush()
}

/// A named polyline.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlotSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: [f64; 4] = [70.0, 20.0, 40.0, 50.0]; // left, right, top, bottom

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the series as an SVG document. Points that cannot be drawn
/// (non-finite, or nonpositive on a log axis) are skipped.
pub fn line_plot(spec: &PlotSpec, series: &[Series]) -> String {
    let tx = |v: f64| if spec.log_x { v.log10() } else { v };
    let ty = |v: f64| if spec.log_y { v.log10() } else { v };
    let ok = |x: f64, y: f64| x.is_finite() && y.is_finite() && (!spec.log_x || x > 0.0) && (!spec.log_y || y > 0.0);
    let pts: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| s.points.iter().filter(|p| ok(p.0, p.1)).map(|&(x, y)| (tx(x), ty(y))).collect())
        .collect();
    let all = pts.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 <= 0.0 {
        (x0, x1) = (x0 - 0.5, x1 + 0.5);
    }
    if y1 - y0 <= 0.0 {
        (y0, y1) = (y0 - 0.5, y1 + 0.5);
    }
    let (pw, ph) = (W - MARGIN[0] - MARGIN[1], H - MARGIN[2] - MARGIN[3]);
    let px = |x: f64| MARGIN[0] + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| MARGIN[2] + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(&spec.title));
    let _ = writeln!(
        s,
        r#"<rect x="{:.1}" y="{:.1}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="black"/>"#,
        MARGIN[0], MARGIN[2]
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (vx, vy) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let lx = if spec.log_x { format!("1e{vx:.2}") } else { format!("{vx:.3e}") };
        let ly = if spec.log_y { format!("1e{vy:.2}") } else { format!("{vy:.3e}") };
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{lx}</text>"#, px(vx), H - MARGIN[3] + 16.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{ly}</text>"#, MARGIN[0] - 4.0, py(vy) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, MARGIN[0] + pw / 2.0, H - 8.0, escape(&spec.x_label));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        MARGIN[2] + ph / 2.0,
        MARGIN[2] + ph / 2.0,
        escape(&spec.y_label)
    );
    for (k, (ser, p)) in series.iter().zip(&pts).enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if !p.is_empty() {
            let path: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
            for &(x, y) in p {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, px(x), py(y));
            }
        }
        let ly = MARGIN[2] + 14.0 + 16.0 * k as f64;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{ly:.1}" fill="{color}">{}</text>"#, MARGIN[0] + 8.0, escape(&ser.name));
    }
    s.push_str("</svg>\n");
    s
}

fn read_table(csv_text: &str) -> Result<(csv::StringRecord, Vec<csv::StringRecord>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(csv_text.as_bytes());
    let header = rdr.headers().map_err(|e| Error::config(format!("unreadable CSV header: {e}")))?.clone();
    let rows = rdr
        .records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::config(format!("unreadable CSV row: {e}")))?;
    Ok((header, rows))
}

fn column(header: &csv::StringRecord, name: &str) -> Result<usize> {
    header.iter().position(|h| h == name).ok_or_else(|| Error::config(format!("CSV has no column `{name}`")))
}

fn number(rec: &csv::StringRecord, i: usize) -> Option<f64> {
    rec.get(i).and_then(|s| s.trim().parse().ok())
}

/// `eta_lower` and `eta_upper` against `|D|`, one pair of curves per datum,
/// rendered from a sweep CSV.
pub fn eta_plot_from_csv(csv_text: &str) -> Result<String> {
    let (header, rows) = read_table(csv_text)?;
    let (ca, cd, cl, cu) = (
        column(&header, "area")?,
        column(&header, "datum")?,
        column(&header, "eta_lower")?,
        column(&header, "eta_upper")?,
    );
    let mut series: Vec<Series> = Vec::new();
    for rec in &rows {
        let datum = rec.get(cd).unwrap_or("");
        for (col, tag) in [(cl, "lower"), (cu, "upper")] {
            let name = format!("{datum} eta_{tag}");
            let (Some(a), Some(v)) = (number(rec, ca), number(rec, col)) else { continue };
            match series.iter_mut().find(|s| s.name == name) {
                Some(s) => s.points.push((a, v)),
                None => series.push(Series { name, points: vec![(a, v)] }),
            }
        }
    }
    for s in &mut series {
        s.points.sort_by(|p, q| p.0.total_cmp(&q.0));
    }
    let spec = PlotSpec {
        title: "size functionals against cavity area".into(),
        x_label: "|D|".into(),
        y_label: "eta".into(),
        log_x: false,
        log_y: true,
    };
    Ok(line_plot(&spec, &series))
}

/// Error curves against `h` on log-log axes, rendered from a convergence CSV.
pub fn convergence_plot_from_csv(csv_text: &str) -> Result<String> {
    let (header, rows) = read_table(csv_text)?;
    let ch = column(&header, "h")?;
    let mut series = Vec::new();
    for name in ["error_h1", "error_flux"] {
        let c = column(&header, name)?;
        let points = rows.iter().filter_map(|r| Some((number(r, ch)?, number(r, c)?))).collect();
        series.push(Series { name: name.into(), points });
    }
    let spec = PlotSpec {
        title: "convergence".into(),
        x_label: "h".into(),
        y_label: "error".into(),
        log_x: true,
        log_y: true,
    };
    Ok(line_plot(&spec, &series))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::CaseLabel;

    fn rows() -> Vec<SizeEstimateReport> {
        (1..=3)
            .map(|k| {
                let mut r = SizeEstimateReport::empty(CaseLabel::CaseI, 0.05 * k as f64, "mode1", 16, 8);
                r.area = 0.0125 * k as f64;
                r.eta_lower = Some(1e-4 * (k * k) as f64);
                r.eta_upper = Some(1e-3 * (k * k) as f64);
                r
            })
            .collect()
    }

    #[test]
    fn sweep_csv_has_header_and_one_line_per_row() {
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &rows()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        let ncols = SizeEstimateReport::CSV_HEADER.split(',').count();
        assert!(lines.iter().all(|l| l.split(',').count() == ncols));
    }

    #[test]
    fn plots_are_deterministic_functions_of_the_csv() {
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &rows()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let a = eta_plot_from_csv(&text).unwrap();
        let b = eta_plot_from_csv(&text).unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
        assert_eq!(a.matches("<polyline").count(), 2);
        assert_eq!(a.matches("<circle").count(), 6);
    }

    #[test]
    fn missing_columns_are_reported() {
        assert!(matches!(eta_plot_from_csv("a,b\n1,2\n"), Err(Error::Config(_))));
    }

    #[test]
    fn log_axes_skip_nonpositive_points() {
        let spec = PlotSpec { title: "t".into(), x_label: "x".into(), y_label: "y".into(), log_x: true, log_y: true };
        let s = line_plot(&spec, &[Series { name: "s<1>".into(), points: vec![(0.0, 1.0), (1.0, 1.0), (10.0, 0.1)] }]);
        assert_eq!(s.matches("<circle").count(), 2);
        assert!(s.contains("s&lt;1&gt;"));
    }
}

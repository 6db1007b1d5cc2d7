//! CSV traces and the SVG plot derived from them.

use std::fmt::Write as _;
use std::path::Path;

use game_sim::MetricsRow;
use plotters::prelude::*;

use crate::CliError;

/// 12 significant digits, positional unless the value is tiny.
pub fn format_sig12(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exponent = x.abs().log10().floor() as i32;
    if exponent < -6 {
        return format!("{x:.11e}");
    }
    let decimals = (11 - exponent).max(0) as usize;
    format!("{x:.decimals$}")
}

pub fn csv_header(n: usize) -> String {
    let mut h = String::from("t,avg_terr_m,avg_rerr_rad");
    for r in 1..=n {
        write!(h, ",terr_r{r}").unwrap();
    }
    h
}

pub fn to_csv(rows: &[MetricsRow]) -> String {
    let n = rows.first().map_or(0, |r| r.terr.len());
    let mut out = csv_header(n);
    out.push('\n');
    for row in rows {
        let fields: Vec<String> = [row.t, row.avg_terr, row.avg_rerr]
            .into_iter()
            .chain(row.terr.iter().copied())
            .map(format_sig12)
            .collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// `(t, avg_terr)` pairs read back from a trace.
pub fn read_trace(csv: &str) -> Result<Vec<(f64, f64)>, CliError> {
    let mut lines = csv.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Trace("empty file".into()))?;
    if !header.starts_with("t,avg_terr_m,") {
        return Err(CliError::Trace(format!("unexpected header `{header}`")));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(k, l)| {
            let mut fields = l.split(',').map(str::parse::<f64>);
            match (fields.next(), fields.next()) {
                (Some(Ok(t)), Some(Ok(e))) => Ok((t, e)),
                _ => Err(CliError::Trace(format!("line {}: malformed row", k + 2))),
            }
        })
        .collect()
}

/// Average translation error against time.
pub fn plot_svg(csv: &str, title: &str, path: &Path) -> Result<(), CliError> {
    let trace = read_trace(csv)?;
    let plot_err = |e: &dyn std::fmt::Display| CliError::Plot(e.to_string());
    let t_max = trace.iter().map(|p| p.0).fold(0.0, f64::max).max(1e-9);
    let e_max = trace.iter().map(|p| p.1).fold(0.0, f64::max).max(1e-9) * 1.05;

    let root = SVGBackend::new(path, (800, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0.0..t_max, 0.0..e_max)
        .map_err(|e| plot_err(&e))?;
    chart
        .configure_mesh()
        .x_desc("time [s]")
        .y_desc("average translation error [m]")
        .draw()
        .map_err(|e| plot_err(&e))?;
    chart
        .draw_series(LineSeries::new(trace, &BLUE))
        .map_err(|e| plot_err(&e))?;
    root.present().map_err(|e| plot_err(&e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(format_sig12(1.8), "1.80000000000");
        assert_eq!(format_sig12(0.0812345678912345), "0.0812345678912");
        assert_eq!(format_sig12(60.0), "60.0000000000");
        assert_eq!(format_sig12(0.0), "0");
        assert_eq!(format_sig12(2.5e-14), "2.50000000000e-14");
    }

    #[test]
    fn header_lists_every_robot() {
        assert_eq!(csv_header(2), "t,avg_terr_m,avg_rerr_rad,terr_r1,terr_r2");
    }

    #[test]
    fn trace_roundtrip() {
        let rows = vec![
            MetricsRow {
                t: 0.0,
                avg_terr: 1.8,
                avg_rerr: 0.1,
                terr: vec![1.8, 1.8],
                rerr: vec![0.1, 0.1],
            },
            MetricsRow {
                t: 0.1,
                avg_terr: 1.5,
                avg_rerr: 0.1,
                terr: vec![1.4, 1.6],
                rerr: vec![0.1, 0.1],
            },
        ];
        let csv = to_csv(&rows);
        assert_eq!(read_trace(&csv).unwrap(), vec![(0.0, 1.8), (0.1, 1.5)]);
        assert!(read_trace("x,y\n").is_err());
    }
}

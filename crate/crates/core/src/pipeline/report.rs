use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{phase_range, sinc};
use crate::io::{fmt_f64, write_text};

use super::sweep::{CellReport, SweepReport};

pub const SWEEP_CSV_HEADER: &str = "cell,translation_px,rotation_deg,trials,mean_d,std_d,mean_d_clean,tpr_at_fpr,\
detection_rate,bit_accuracy,corr,corr_ratio,corr_comp,corr_comp_ratio,phase_range_rad,coord_drift,\
predicted_attenuation,raw_psnr_db,aligned_psnr_db,align_shift_x,align_shift_y";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Csv,
    CsvAndSvg,
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn sweep_csv(report: &SweepReport) -> String {
    let mut s = String::from(SWEEP_CSV_HEADER);
    s.push('\n');
    for (i, c) in report.cells.iter().enumerate() {
        let cols = [
            i.to_string(),
            fmt_f64(c.transform.translation_x_px),
            fmt_f64(c.transform.rotation_deg),
            c.trials.to_string(),
            fmt_f64(c.mean_distance),
            fmt_f64(c.std_distance),
            fmt_f64(c.mean_clean_distance),
            fmt_f64(c.tpr),
            fmt_f64(c.detection_rate),
            fmt_f64(c.bit_accuracy),
            fmt_f64(c.correlation),
            opt(c.correlation_ratio),
            fmt_f64(c.compensated_correlation),
            opt(c.compensated_ratio),
            fmt_f64(c.prediction.phase_range_rad),
            fmt_f64(c.prediction.coord_drift),
            fmt_f64(c.prediction.attenuation),
            fmt_f64(c.raw_psnr_db),
            fmt_f64(c.aligned_psnr_db),
            c.align_shift.0.to_string(),
            c.align_shift.1.to_string(),
        ];
        s.push_str(&cols.join(","));
        s.push('\n');
    }
    s
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 400.0;
const PAD: f64 = 48.0;
const CURVE_SAMPLES: usize = 128;

/// Cells plotted against translation: those at the first rotation of the grid.
fn plotted(report: &SweepReport) -> Vec<&CellReport> {
    let Some(th) = report.config.rotations_deg.first() else {
        return Vec::new();
    };
    let mut cells: Vec<&CellReport> = report.cells.iter().filter(|c| c.transform.rotation_deg == *th).collect();
    cells.sort_by(|a, b| a.transform.translation_norm().total_cmp(&b.transform.translation_norm()));
    cells
}

fn polyline(out: &mut String, pts: &[(f64, f64)], x_max: f64, y_max: f64, color: &str, label: &str) {
    let sx = |x: f64| PAD + (SVG_W - 2.0 * PAD) * if x_max > 0.0 { x / x_max } else { 0.0 };
    let sy = |y: f64| SVG_H - PAD - (SVG_H - 2.0 * PAD) * (y / y_max).clamp(-0.1, 1.1);
    let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
    let _ = writeln!(
        out,
        r#"<polyline data-series="{label}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
        coords.join(" ")
    );
}

/// Line chart of mean distance, TPR and correlation ratio against `|delta|`,
/// with the predicted sinc decay drawn as a continuous curve.
pub fn sweep_svg(report: &SweepReport) -> String {
    let cells = plotted(report);
    let x_max = cells.iter().map(|c| c.transform.translation_norm()).fold(0.0, f64::max);
    let d_max = cells.iter().map(|c| c.mean_distance).fold(1.0, f64::max);
    let cfg = &report.config;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (x0, y0, x1, y1) = (PAD, SVG_H - PAD, SVG_W - PAD, PAD);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">translation (px), max {}</text>"#,
        SVG_W / 2.0,
        SVG_H - 12.0,
        fmt_f64(x_max)
    );

    let series: [(&str, &str, Vec<(f64, f64)>, f64); 3] = [
        (
            "mean_d",
            "#1f77b4",
            cells.iter().map(|c| (c.transform.translation_norm(), c.mean_distance)).collect(),
            d_max,
        ),
        ("tpr_at_fpr", "#d62728", cells.iter().map(|c| (c.transform.translation_norm(), c.tpr)).collect(), 1.0),
        (
            "corr_comp_ratio",
            "#2ca02c",
            cells
                .iter()
                .filter_map(|c| c.compensated_ratio.map(|r| (c.transform.translation_norm(), r)))
                .collect(),
            1.0,
        ),
    ];
    let predicted: Vec<(f64, f64)> = (0..=CURVE_SAMPLES)
        .map(|i| {
            let d = x_max * i as f64 / CURVE_SAMPLES as f64;
            let alpha = phase_range(cfg.r_max, d, cfg.surrogate.stride, cfg.latent_width) / 2.0;
            (d, sinc(alpha))
        })
        .collect();

    let mut legend_y = PAD;
    let entries = series
        .iter()
        .map(|(l, c, p, m)| (*l, *c, p.as_slice(), *m))
        .chain(std::iter::once(("predicted_sinc", "#7f7f7f", predicted.as_slice(), 1.0)));
    for (label, color, pts, y_max) in entries {
        polyline(&mut s, pts, x_max, y_max, color, label);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{legend_y}" font-size="12" fill="{color}">{label}</text>"#,
            SVG_W - PAD - 120.0
        );
        legend_y += 16.0;
    }
    s.push_str("</svg>\n");
    s
}

/// Write `sweep.csv` (and `sweep.svg`) into `dir`, returning the paths written.
pub fn emit_report(report: &SweepReport, format: ReportFormat, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let csv = dir.join("sweep.csv");
    write_text(&csv, &sweep_csv(report))?;
    let mut out = vec![csv];
    if format == ReportFormat::CsvAndSvg {
        let svg = dir.join("sweep.svg");
        write_text(&svg, &sweep_svg(report))?;
        out.push(svg);
    }
    Ok(out)
}

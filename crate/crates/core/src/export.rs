//! File formats: CSV tables, dataset ingestion, heatmap SVG and fit reports.
//!
//! Floats are written with Rust's shortest round-trip formatting, so output
//! is byte-identical for identical inputs.

use std::fmt::Write as _;
use std::io::Read;

use crate::charge::Band;
use crate::error::{KinemonError, Result};
use crate::fitting::{FitResult, LineTag, SpectralDataset, SpectralPoint};
use crate::lindblad::TwoToneMap;
use crate::spectrum::{levels, TransitionTable};
use std::f64::consts::PI;

pub const FLUX_SWEEP_HEADER: &str = "phi_e_over_pi,f01,f12,f02,f02_half,alpha";
pub const BAND_ENERGY_HEADER: &str = "n_g,level,energy_GHz";
pub const BAND_WIDTH_HEADER: &str = "level,width_GHz";
pub const RESONATOR_HEADER: &str = "phi_e_over_pi,f_r_GHz";
pub const MAP_HEADER: &str = "phi_e_over_pi,omega_d_GHz,cavity_amp,ground_depop";

fn table(header: &str, rows: impl Iterator<Item = String>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row);
        out.push('\n');
    }
    out
}

pub fn flux_sweep_csv(tables: &[TransitionTable]) -> String {
    table(
        FLUX_SWEEP_HEADER,
        tables.iter().map(|t| {
            format!(
                "{},{},{},{},{},{}",
                t.phi_e / PI,
                t.f01,
                t.f12,
                t.f02,
                t.f02_half,
                t.anharmonicity()
            )
        }),
    )
}

/// Rows of `(n_g, level, energy)` as produced by `charge::band_energies`.
pub fn band_energies_csv(rows: &[(f64, usize, f64)]) -> String {
    table(BAND_ENERGY_HEADER, rows.iter().map(|(ng, m, e)| format!("{ng},{m},{e}")))
}

pub fn band_widths_csv(bands: &[Band]) -> String {
    table(BAND_WIDTH_HEADER, bands.iter().map(|b| format!("{},{}", b.level, b.width())))
}

pub fn resonator_trace_csv(trace: &[(f64, f64)]) -> String {
    table(RESONATOR_HEADER, trace.iter().map(|(phi, f)| format!("{},{f}", phi / PI)))
}

/// Failed cells are written as `NaN` in both observable columns.
pub fn two_tone_csv(map: &TwoToneMap) -> String {
    table(
        MAP_HEADER,
        map.cells.iter().map(|c| {
            let (a, d) = c.value.map_or((f64::NAN, f64::NAN), |v| (v.cavity_amplitude, v.ground_depopulation));
            format!("{},{},{},{}", c.phi_e / PI, c.omega_d, a, d)
        }),
    )
}

/// Reads `bias,frequency_GHz[,weight][,tag]`. Columns are matched by header
/// name; errors carry the 1-based line number of the offending row.
pub fn read_dataset<R: Read>(reader: R) -> Result<SpectralDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| KinemonError::DatasetRow {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let (Some(bias_col), Some(freq_col)) = (column("bias"), column("frequency_GHz")) else {
        return Err(KinemonError::DatasetRow {
            line: 1,
            reason: format!("header must contain `bias` and `frequency_GHz`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    };
    if let Some(unknown) = headers.iter().find(|h| !matches!(*h, "bias" | "frequency_GHz" | "weight" | "tag")) {
        return Err(KinemonError::DatasetRow {
            line: 1,
            reason: format!("unknown column `{unknown}`"),
        });
    }
    let weight_col = column("weight");
    let tag_col = column("tag");

    let mut points = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| KinemonError::DatasetRow {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let fail = |reason: String| KinemonError::DatasetRow { line, reason };
        if record.len() != headers.len() {
            return Err(fail(format!("expected {} fields, found {}", headers.len(), record.len())));
        }
        let number = |col: usize, name: &str| -> Result<f64> {
            let raw = &record[col];
            let v: f64 = raw.parse().map_err(|_| fail(format!("`{name}` is not a number: `{raw}`")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(fail(format!("`{name}` is not finite")))
            }
        };
        let mut point = SpectralPoint::new(number(bias_col, "bias")?, number(freq_col, "frequency_GHz")?);
        if point.frequency <= 0.0 {
            return Err(fail("frequency_GHz must be positive".into()));
        }
        if let Some(col) = weight_col {
            if !record[col].is_empty() {
                point.weight = number(col, "weight")?;
                if point.weight < 0.0 {
                    return Err(fail("weight must be non-negative".into()));
                }
            }
        }
        if let Some(col) = tag_col {
            if !record[col].is_empty() {
                point.tag = Some(record[col].parse::<LineTag>().map_err(|e| fail(e.to_string()))?);
            }
        }
        points.push(point);
    }
    if points.is_empty() {
        return Err(KinemonError::InvalidDataset("no data rows".into()));
    }
    Ok(SpectralDataset::new(points))
}

pub fn dataset_csv(dataset: &SpectralDataset) -> String {
    table(
        "bias,frequency_GHz,weight,tag",
        dataset.points.iter().map(|p| {
            format!(
                "{},{},{},{}",
                p.bias,
                p.frequency,
                p.weight,
                p.tag.map_or("", |t| t.as_str())
            )
        }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapObservable {
    CavityAmplitude,
    GroundDepopulation,
}

const PALETTE: [(f64, f64, f64); 5] = [
    (68.0, 1.0, 84.0),
    (59.0, 82.0, 139.0),
    (33.0, 145.0, 140.0),
    (94.0, 201.0, 98.0),
    (253.0, 231.0, 37.0),
];

fn colour(t: f64) -> String {
    let t = t.clamp(0.0, 1.0) * (PALETTE.len() - 1) as f64;
    let i = (t.floor() as usize).min(PALETTE.len() - 2);
    let f = t - i as f64;
    let (a, b) = (PALETTE[i], PALETTE[i + 1]);
    let mix = |x: f64, y: f64| (x + (y - x) * f).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// Heatmap with flux on the horizontal axis and drive frequency increasing
/// upwards; failed cells are grey.
pub fn heatmap_svg(map: &TwoToneMap, observable: MapObservable) -> String {
    const CELL: f64 = 6.0;
    const MARGIN: f64 = 50.0;
    let (nx, ny) = (map.phi_e.len(), map.omega_d.len());
    let value = |i: usize, j: usize| {
        map.cell(i, j).value.map(|v| match observable {
            MapObservable::CavityAmplitude => v.cavity_amplitude,
            MapObservable::GroundDepopulation => v.ground_depopulation,
        })
    };
    let vmax = (0..nx)
        .flat_map(|i| (0..ny).map(move |j| (i, j)))
        .filter_map(|(i, j)| value(i, j))
        .fold(0.0_f64, f64::max);
    let width = nx as f64 * CELL + 2.0 * MARGIN;
    let height = ny as f64 * CELL + 2.0 * MARGIN;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    for i in 0..nx {
        for j in 0..ny {
            let fill = match value(i, j) {
                Some(v) if vmax > 0.0 => colour(v / vmax),
                Some(_) => colour(0.0),
                None => "#808080".to_string(),
            };
            let x = MARGIN + i as f64 * CELL;
            let y = MARGIN + (ny - 1 - j) as f64 * CELL;
            let _ = writeln!(svg, r#"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{fill}"/>"#);
        }
    }
    let label = match observable {
        MapObservable::CavityAmplitude => "|<a>|",
        MapObservable::GroundDepopulation => "1 - P(g)",
    };
    let (x0, x1) = (map.phi_e.first(), map.phi_e.last());
    let (y0, y1) = (map.omega_d.first(), map.omega_d.last());
    if let (Some(x0), Some(x1), Some(y0), Some(y1)) = (x0, x1, y0, y1) {
        let bottom = height - MARGIN + 16.0;
        let _ = writeln!(svg, r#"<text x="{MARGIN}" y="{bottom}" font-size="11">{:.3} pi</text>"#, x0 / PI);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{bottom}" font-size="11" text-anchor="end">{:.3} pi</text>"#,
            width - MARGIN,
            x1 / PI
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{y0:.3}</text>"#,
            MARGIN - 4.0,
            height - MARGIN
        );
        let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{y1:.3}</text>"#, MARGIN - 4.0, MARGIN + 10.0);
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" font-size="13" text-anchor="middle">{} (max {:.4e}), drive GHz vs flux</text>"#,
        width / 2.0,
        label.replace('<', "&lt;").replace('>', "&gt;"),
        vmax
    );
    svg.push_str("</svg>\n");
    svg
}

pub fn fit_result_json(result: &FitResult) -> Result<String> {
    serde_json::to_string_pretty(result)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| KinemonError::Io(e.to_string()))
}

/// Plain-text table of fitted energies and the quantities derived from them,
/// one row per quantity.
pub fn fit_summary(result: &FitResult) -> Result<String> {
    let p = &result.params;
    let top = levels(p, 0.0, &result.grid, 3)?;
    let bottom = levels(p, PI, &result.grid, 3)?;
    let alpha = |e: &[f64]| (e[2] - 2.0 * e[1] + e[0]) * 1e3;
    let mut rows: Vec<(String, String)> = vec![
        ("E_J/h, GHz".into(), format!("{:.3}", p.ej1)),
        ("E_C/h, GHz".into(), format!("{:.3}", p.ec)),
        ("E_L/h, GHz".into(), format!("{:.3}", p.el)),
    ];
    if !p.is_single_loop() {
        if (p.ej1 - p.ej2).abs() > 0.0 {
            rows.insert(1, ("E_J2/h, GHz".into(), format!("{:.3}", p.ej2)));
        }
        rows.push(("kappa".into(), format!("{:.3}", p.kappa)));
    }
    rows.push(("omega_01(t)/2pi, GHz".into(), format!("{:.3}", top[1] - top[0])));
    if let Some(c) = &result.cavity {
        rows.push(("omega_r/2pi, GHz".into(), format!("{:.3}", c.omega_r)));
        rows.push(("g/2pi, MHz".into(), format!("{:.0}", c.g * 1e3)));
    }
    rows.push(("alpha(t)/h, MHz".into(), format!("{:.0}", alpha(&top))));
    if p.is_single_loop() {
        rows.push(("alpha(b)/h, MHz".into(), format!("{:.0}", alpha(&bottom))));
    }
    rows.push(("rms residual, MHz".into(), format!("{:.3}", result.rms_residual * 1e3)));
    rows.push(("period, bias units".into(), format!("{:.6}", result.calibration.period)));
    rows.push(("offset, bias units".into(), format!("{:.6}", result.calibration.offset)));
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::new();
    for (k, v) in rows {
        let _ = writeln!(out, "{k:<width$}  {v:>10}");
    }
    Ok(out)
}

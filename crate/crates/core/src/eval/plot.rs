use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::write_atomic;
use crate::error::{Error, Result};
use crate::higrid::SrpdMap;
use crate::pipeline::post::{DoaEstimate, Histogram};

/// Mollweide projection with the map centre at azimuth pi on the equator:
/// longitude `phi - pi`, latitude `pi/2 - theta`. Returns `(x, y)` with
/// `|x| <= 2 sqrt 2` and `|y| <= sqrt 2`.
pub fn mollweide(theta: f64, phi: f64) -> (f64, f64) {
    let lon = phi - PI;
    let lat = FRAC_PI_2 - theta;
    let target = PI * lat.sin();
    let aux = if (FRAC_PI_2 - lat.abs()) < 1e-12 {
        lat.signum() * FRAC_PI_2
    } else {
        // Newton on 2t + sin 2t = pi sin(lat)
        let mut t = lat;
        for _ in 0..50 {
            let f = 2.0 * t + (2.0 * t).sin() - target;
            let df = 2.0 + 2.0 * (2.0 * t).cos();
            if df.abs() < 1e-15 {
                break;
            }
            let step = f / df;
            t -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        t
    };
    (2.0 * SQRT_2 / PI * lon * aux.cos(), SQRT_2 * aux.sin())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    /// HEALPix level for map rows.
    pub level: Option<u8>,
    pub theta: f64,
    pub phi: f64,
    pub value: f64,
    pub x: f64,
    pub y: f64,
}

impl PlotRow {
    pub fn new(level: Option<u8>, theta: f64, phi: f64, value: f64) -> Self {
        let (x, y) = mollweide(theta, phi);
        Self { level, theta, phi, value, x, y }
    }
}

/// One row per leaf at the leaf centre.
pub fn map_rows(map: &SrpdMap) -> Vec<PlotRow> {
    map.iter()
        .map(|(n, v)| {
            let c = n.center();
            PlotRow::new(Some(n.level), c.theta, c.phi, v)
        })
        .collect()
}

/// One row per non-empty histogram cell.
pub fn histogram_rows(h: &Histogram) -> Vec<PlotRow> {
    h.nonzero()
        .map(|(t, p, v)| {
            let c = Histogram::cell_center(t, p);
            PlotRow::new(None, c.theta, c.phi, v)
        })
        .collect()
}

/// One row per estimate, valued by its support.
pub fn doa_rows(doas: &[DoaEstimate]) -> Vec<PlotRow> {
    doas.iter().map(|d| PlotRow::new(None, d.theta, d.phi, d.support as f64)).collect()
}

pub fn rows_to_csv(rows: &[PlotRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Numerical(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Numerical(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

pub fn rows_from_csv(text: &str) -> Result<Vec<PlotRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .map(|r| r.map_err(|e| Error::Config(format!("csv: {e}"))))
        .collect()
}

/// Write rows as CSV or JSON depending on the file extension.
pub fn emit_plot_data(rows: &[PlotRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::to_string_pretty(rows)?,
        _ => rows_to_csv(rows)?,
    };
    write_atomic(path, text.as_bytes())
}

pub fn read_plot_data(path: impl AsRef<Path>) -> Result<Vec<PlotRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => Ok(serde_json::from_str(&text)?),
        _ => rows_from_csv(&text),
    }
}

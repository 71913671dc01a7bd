use std::io::Read;

use super::{AvlPoint, IngestError};
use crate::clock;

/// Column names of a raw AVL log, in order.
pub const AVL_HEADER: [&str; 6] = [
    "Vehicle No",
    "Date and Time",
    "Latitude",
    "Longitude",
    "Odometer",
    "Speed",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedRow {
    pub row: u64,
    pub vehicle_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParseOutput {
    pub points: Vec<AvlPoint>,
    pub rejected: Vec<RejectedRow>,
}

fn number(field: &str, name: &str) -> Result<f64, String> {
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("non-numeric {name}")),
    }
}

fn parse_row(rec: &csv::StringRecord) -> Result<AvlPoint, String> {
    if rec.len() != AVL_HEADER.len() {
        return Err(format!(
            "wrong field count (expected {}, found {})",
            AVL_HEADER.len(),
            rec.len()
        ));
    }
    let vehicle_id = rec[0].to_string();
    if vehicle_id.is_empty() {
        return Err("missing vehicle id".into());
    }
    let timestamp = clock::parse_avl(&rec[1]).ok_or_else(|| "unparseable timestamp".to_string())?;
    let latitude = number(&rec[2], "latitude")?;
    if !(-90.0..=90.0).contains(&latitude) {
        return Err("latitude out of range".into());
    }
    let longitude = number(&rec[3], "longitude")?;
    if !(-180.0..=180.0).contains(&longitude) {
        return Err("longitude out of range".into());
    }
    let odometer_km = number(&rec[4], "odometer")?;
    if odometer_km < 0.0 {
        return Err("negative odometer".into());
    }
    let speed_kmh = number(&rec[5], "speed")?;
    if speed_kmh < 0.0 {
        return Err("negative speed".into());
    }
    Ok(AvlPoint {
        vehicle_id,
        timestamp,
        latitude,
        longitude,
        odometer_km,
        speed_kmh,
        row: rec.position().map(|p| p.line()).unwrap_or(0),
    })
}

/// Parse a raw AVL log. Malformed rows are reported, never silently dropped.
pub fn parse_avl_csv<R: Read>(stream: R) -> Result<ParseOutput, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(stream);
    let header = reader.headers()?.clone();
    let mut out = ParseOutput::default();
    if header.is_empty() {
        return Ok(out);
    }
    if header.iter().ne(AVL_HEADER.iter().copied()) {
        return Err(IngestError::HeaderMismatch {
            expected: AVL_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    for rec in reader.records() {
        let rec = match rec {
            Ok(rec) => rec,
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(e) => {
                let row = e.position().map(|p| p.line()).unwrap_or(0);
                out.rejected.push(RejectedRow {
                    row,
                    vehicle_id: String::new(),
                    reason: format!("unreadable row: {e}"),
                });
                continue;
            }
        };
        match parse_row(&rec) {
            Ok(p) => out.points.push(p),
            Err(reason) => out.rejected.push(RejectedRow {
                row: rec.position().map(|p| p.line()).unwrap_or(0),
                vehicle_id: rec.get(0).unwrap_or("").to_string(),
                reason,
            }),
        }
    }
    Ok(out)
}

//! The traversal table: one CSV row per [`SectionTraversal`]. This file is
//! the interchange format between ingestion and everything downstream.
//!
//! Columns, in order:
//!
//! | column               | unit / format                         |
//! |----------------------|---------------------------------------|
//! | `trip_id`            | text                                  |
//! | `vehicle_id`         | text                                  |
//! | `section_id`         | 1-based integer                       |
//! | `section_start_time` | ISO-8601 local, millisecond precision |
//! | `travel_time_s`      | seconds                               |
//! | `dwell_time_s`       | seconds                               |
//! | `running_speed_mps`  | m/s                                   |
//! | `day_of_week`        | 0 = Monday .. 6 = Sunday              |
//! | `lup`                | CBD, IC, ISU or OSU                   |
//!
//! Floats are written in shortest round-trip form, so reading a table back
//! reproduces every value bit for bit.

use std::io::{Read, Write};

use super::{IngestError, SectionTraversal};
use crate::clock;

pub const TRAVERSAL_HEADER: [&str; 9] = [
    "trip_id",
    "vehicle_id",
    "section_id",
    "section_start_time",
    "travel_time_s",
    "dwell_time_s",
    "running_speed_mps",
    "day_of_week",
    "lup",
];

pub fn write_traversals_csv<W: Write>(traversals: &[SectionTraversal], writer: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRAVERSAL_HEADER)?;
    for t in traversals {
        w.write_record([
            t.trip_id.clone(),
            t.vehicle_id.clone(),
            t.section_id.to_string(),
            clock::format_iso(t.section_start_time),
            t.travel_time_s.to_string(),
            t.dwell_time_s.to_string(),
            t.running_speed_mps.to_string(),
            t.day_of_week.to_string(),
            t.lup.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, line: u64) -> Result<T, IngestError> {
    rec[idx].parse::<T>().map_err(|_| IngestError::BadTraversal {
        line,
        reason: format!("bad {} value {:?}", TRAVERSAL_HEADER[idx], &rec[idx]),
    })
}

pub fn read_traversals_csv<R: Read>(reader: R) -> Result<Vec<SectionTraversal>, IngestError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = r.headers()?.clone();
    if header.is_empty() {
        return Ok(Vec::new());
    }
    if header.iter().ne(TRAVERSAL_HEADER.iter().copied()) {
        return Err(IngestError::HeaderMismatch {
            expected: TRAVERSAL_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |reason: String| IngestError::BadTraversal { line, reason };
        let section_start_time =
            clock::parse_iso(&rec[3]).ok_or_else(|| bad(format!("bad timestamp {:?}", &rec[3])))?;
        let t = SectionTraversal {
            trip_id: rec[0].to_string(),
            vehicle_id: rec[1].to_string(),
            section_id: field(&rec, 2, line)?,
            section_start_time,
            travel_time_s: field(&rec, 4, line)?,
            dwell_time_s: field(&rec, 5, line)?,
            running_speed_mps: field(&rec, 6, line)?,
            day_of_week: field(&rec, 7, line)?,
            lup: field(&rec, 8, line)?,
        };
        if !(t.travel_time_s.is_finite() && t.travel_time_s > 0.0) {
            return Err(bad("travel_time_s must be positive".into()));
        }
        if !(t.dwell_time_s >= 0.0 && t.dwell_time_s <= t.travel_time_s) {
            return Err(bad("dwell_time_s must lie in [0, travel_time_s]".into()));
        }
        if !(t.running_speed_mps.is_finite() && t.running_speed_mps > 0.0) {
            return Err(bad("running_speed_mps must be positive".into()));
        }
        if t.section_id == 0 || t.day_of_week > 6 {
            return Err(bad("section_id or day_of_week out of range".into()));
        }
        out.push(t);
    }
    Ok(out)
}

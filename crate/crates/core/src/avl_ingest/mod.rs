//! Raw AVL log ingestion: parse, clean, cut into trips, detect stop
//! passages and aggregate into per-section traversal records.
//!
//! Stop passages are geofence crossings (a circle around each stop point).
//! The passage time of an intermediate stop or the terminus is the moment the
//! bus enters the fence; for the origin it is the moment the bus leaves it, so
//! layover time at the origin never lands in section 1. A section's travel
//! time runs from the passage at its start stop to the passage at its end
//! stop, which puts the dwell at the start stop inside the section.

mod clean;
mod fence;
mod parse;
mod passages;
mod segment;
mod traversal_io;

use std::collections::BTreeMap;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::route_model::{LandUsePattern, Route};

pub use clean::{clean, CleanOutput, CleanStats};
pub use parse::{parse_avl_csv, ParseOutput, RejectedRow, AVL_HEADER};
pub use passages::{infer_dwell, match_stop_passages, MatchOutput};
pub use segment::{segment_trips, SegmentOutput};
pub use traversal_io::{read_traversals_csv, write_traversals_csv, TRAVERSAL_HEADER};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("header mismatch: expected {expected:?}, found {found:?}")]
    HeaderMismatch { expected: String, found: String },
    #[error("traversal table line {line}: {reason}")]
    BadTraversal { line: u64, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AvlPoint {
    pub vehicle_id: String,
    pub timestamp: NaiveDateTime,
    pub latitude: f64,
    pub longitude: f64,
    pub odometer_km: f64,
    pub speed_kmh: f64,
    /// Line number in the source log, for diagnostics.
    pub row: u64,
}

impl AvlPoint {
    pub fn point(&self) -> crate::geo::GeoPoint {
        crate::geo::GeoPoint::new(self.latitude, self.longitude)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// Origin to terminus, the orientation of the route config.
    #[serde(rename = "up")]
    Up,
    #[serde(rename = "down")]
    Down,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripTrace {
    pub trip_id: String,
    pub vehicle_id: String,
    pub route_id: String,
    pub direction: Direction,
    pub points: Vec<AvlPoint>,
}

/// One bus crossing one section.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionTraversal {
    pub trip_id: String,
    pub vehicle_id: String,
    pub section_id: u32,
    pub section_start_time: NaiveDateTime,
    pub travel_time_s: f64,
    pub dwell_time_s: f64,
    pub running_speed_mps: f64,
    pub day_of_week: u8,
    pub lup: LandUsePattern,
}

impl SectionTraversal {
    pub fn end_time(&self) -> NaiveDateTime {
        crate::clock::add_seconds(self.section_start_time, self.travel_time_s)
    }
}

/// A non-fatal anomaly found while ingesting.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Diagnostic {
    pub vehicle_id: String,
    pub row: Option<u64>,
    pub trip_id: Option<String>,
    pub section_id: Option<u32>,
    pub message: String,
}

impl Diagnostic {
    pub fn vehicle(vehicle_id: &str, message: impl Into<String>) -> Self {
        Diagnostic {
            vehicle_id: vehicle_id.to_string(),
            row: None,
            trip_id: None,
            section_id: None,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanConfig {
    pub max_speed_kmh: f64,
    /// Points farther than this outside the route's stop bounding box are dropped.
    pub bbox_padding_m: f64,
}

impl Default for CleanConfig {
    fn default() -> Self {
        CleanConfig {
            max_speed_kmh: 100.0,
            bbox_padding_m: 500.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    #[serde(flatten)]
    pub clean: CleanConfig,
    pub geofence_radius_m: f64,
    /// Inter-point gaps longer than this split a stream, and crossings
    /// interpolated across such a gap are not trusted.
    pub max_gap_s: f64,
    /// Speeds below this count as stationary when inferring dwell.
    pub stationary_speed_kmh: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            clean: CleanConfig::default(),
            geofence_radius_m: 30.0,
            max_gap_s: 120.0,
            stationary_speed_kmh: 2.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestStats {
    pub rows_accepted: usize,
    pub rows_rejected: usize,
    pub clean: CleanStats,
    pub traces_up: usize,
    pub traces_down: usize,
    pub unassigned_points: usize,
    pub traversals: usize,
}

#[derive(Debug, Clone, Default)]
pub struct IngestOutput {
    pub traversals: Vec<SectionTraversal>,
    pub diagnostics: Vec<Diagnostic>,
    pub stats: IngestStats,
}

/// Full pipeline over one or more raw logs.
///
/// Traversals come out ordered by (section_start_time, trip_id, section_id);
/// diagnostics by (vehicle_id, row).
pub fn ingest<'a>(
    logs: impl IntoIterator<Item = &'a str>,
    route: &Route,
    config: &IngestConfig,
) -> Result<IngestOutput, IngestError> {
    let mut out = IngestOutput::default();
    let mut points = Vec::new();
    for log in logs {
        let parsed = parse_avl_csv(log.as_bytes())?;
        out.stats.rows_accepted += parsed.points.len();
        out.stats.rows_rejected += parsed.rejected.len();
        out.diagnostics.extend(parsed.rejected.into_iter().map(|r| Diagnostic {
            vehicle_id: r.vehicle_id,
            row: Some(r.row),
            trip_id: None,
            section_id: None,
            message: r.reason,
        }));
        points.extend(parsed.points);
    }

    let cleaned = clean(points, route, &config.clean);
    out.stats.clean = cleaned.stats;

    let segmented = segment_trips(&cleaned.points, route, config);
    out.stats.unassigned_points = segmented.unassigned_points;

    for trace in &segmented.traces {
        match trace.direction {
            Direction::Up => out.stats.traces_up += 1,
            Direction::Down => {
                out.stats.traces_down += 1;
                continue;
            }
        }
        let matched = match_stop_passages(trace, route, config);
        out.traversals.extend(matched.traversals);
        out.diagnostics.extend(matched.diagnostics);
    }

    sort_traversals(&mut out.traversals);
    out.stats.traversals = out.traversals.len();
    out.diagnostics
        .sort_by(|a, b| (&a.vehicle_id, a.row).cmp(&(&b.vehicle_id, b.row)));
    Ok(out)
}

/// Canonical traversal order: start time, then trip, then section.
pub fn sort_traversals(traversals: &mut [SectionTraversal]) {
    traversals.sort_by(|a, b| {
        (a.section_start_time, &a.trip_id, a.section_id).cmp(&(b.section_start_time, &b.trip_id, b.section_id))
    });
}

/// Per-section median of observed dwell.
pub fn median_dwell_by_section(traversals: &[SectionTraversal]) -> BTreeMap<u32, f64> {
    let mut by_section: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for t in traversals {
        by_section.entry(t.section_id).or_default().push(t.dwell_time_s);
    }
    by_section
        .into_iter()
        .map(|(id, mut v)| {
            v.sort_by(f64::total_cmp);
            let n = v.len();
            let median = if n % 2 == 1 {
                v[n / 2]
            } else {
                (v[n / 2 - 1] + v[n / 2]) / 2.0
            };
            (id, median)
        })
        .collect()
}

pub fn write_diagnostics_csv<W: std::io::Write>(diagnostics: &[Diagnostic], writer: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["vehicle_id", "row", "trip_id", "section_id", "message"])?;
    for d in diagnostics {
        w.write_record([
            d.vehicle_id.clone(),
            d.row.map(|r| r.to_string()).unwrap_or_default(),
            d.trip_id.clone().unwrap_or_default(),
            d.section_id.map(|s| s.to_string()).unwrap_or_default(),
            d.message.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

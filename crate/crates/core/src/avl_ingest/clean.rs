use super::{AvlPoint, CleanConfig};
use crate::route_model::Route;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CleanStats {
    pub input: usize,
    pub kept: usize,
    pub over_speed: usize,
    pub outside_route: usize,
    pub duplicate_timestamp: usize,
    pub time_regression: usize,
    pub odometer_regression: usize,
}

#[derive(Debug, Clone, Default)]
pub struct CleanOutput {
    pub points: Vec<AvlPoint>,
    pub stats: CleanStats,
}

/// Drop erroneous fixes. Output is grouped by vehicle (stable, by id) with
/// strictly increasing timestamps and non-decreasing odometer per vehicle.
///
/// Point filters (speed cap, padded route box) run before the ordering
/// filters, so a rejected fix never becomes the reference for the next one.
/// That makes the function idempotent.
pub fn clean(points: Vec<AvlPoint>, route: &Route, config: &CleanConfig) -> CleanOutput {
    let bbox = route.bounding_box().padded(config.bbox_padding_m);
    let mut stats = CleanStats {
        input: points.len(),
        ..CleanStats::default()
    };
    let mut points = points;
    points.sort_by(|a, b| a.vehicle_id.cmp(&b.vehicle_id));

    let mut kept: Vec<AvlPoint> = Vec::with_capacity(points.len());
    for p in points {
        if p.speed_kmh > config.max_speed_kmh {
            stats.over_speed += 1;
            continue;
        }
        if !bbox.contains(p.point()) {
            stats.outside_route += 1;
            continue;
        }
        if let Some(last) = kept.last().filter(|l| l.vehicle_id == p.vehicle_id) {
            if p.timestamp == last.timestamp {
                stats.duplicate_timestamp += 1;
                continue;
            }
            if p.timestamp < last.timestamp {
                stats.time_regression += 1;
                continue;
            }
            if p.odometer_km < last.odometer_km {
                stats.odometer_regression += 1;
                continue;
            }
        }
        kept.push(p);
    }
    stats.kept = kept.len();
    CleanOutput { points: kept, stats }
}

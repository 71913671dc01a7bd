use super::fence::{Crossing, Fence, FenceEvent};
use super::{AvlPoint, Direction, IngestConfig, TripTrace};
use crate::clock;
use crate::route_model::Route;

#[derive(Debug, Clone, Default)]
pub struct SegmentOutput {
    pub traces: Vec<TripTrace>,
    /// Points that belong to no origin-to-terminus run (depot, layover, detours).
    pub unassigned_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum End {
    Origin,
    Terminus,
}

/// Cut cleaned, per-vehicle point streams into one trace per end-to-end run.
///
/// A run starts when the bus leaves one end fence and finishes when it next
/// enters the other one. Returning to the fence it left cancels the run.
/// Streams are first split at gaps longer than `max_gap_s`.
pub fn segment_trips(points: &[AvlPoint], route: &Route, config: &IngestConfig) -> SegmentOutput {
    let mut out = SegmentOutput::default();
    let stops = route.stops();
    let (Some(first), Some(last)) = (stops.first(), stops.last()) else {
        return out;
    };
    let origin = Fence::new(first.point(), config.geofence_radius_m);
    let terminus = Fence::new(last.point(), config.geofence_radius_m);

    let mut start = 0;
    while start < points.len() {
        let vehicle = &points[start].vehicle_id;
        let end = points[start..]
            .iter()
            .position(|p| &p.vehicle_id != vehicle)
            .map_or(points.len(), |n| start + n);
        let stream = &points[start..end];
        let mut assigned = 0;
        let mut chunk_start = 0;
        for k in 1..=stream.len() {
            let split = k == stream.len()
                || clock::seconds_between(stream[k - 1].timestamp, stream[k].timestamp) > config.max_gap_s;
            if split {
                assigned += segment_chunk(&stream[chunk_start..k], route, &origin, &terminus, &mut out.traces);
                chunk_start = k;
            }
        }
        let unassigned = stream.len() - assigned;
        if unassigned > 0 {
            log::debug!("{vehicle}: {unassigned} points outside any origin-terminus run");
        }
        out.unassigned_points += unassigned;
        start = end;
    }
    out
}

fn segment_chunk(
    chunk: &[AvlPoint],
    route: &Route,
    origin: &Fence,
    terminus: &Fence,
    traces: &mut Vec<TripTrace>,
) -> usize {
    if chunk.len() < 2 {
        return 0;
    }
    let mut events: Vec<(End, FenceEvent)> = origin
        .events(chunk)
        .into_iter()
        .map(|e| (End::Origin, e))
        .chain(terminus.events(chunk).into_iter().map(|e| (End::Terminus, e)))
        .collect();
    events.sort_by(|a, b| {
        (a.1.segment, a.1.frac)
            .partial_cmp(&(b.1.segment, b.1.frac))
            .expect("finite crossing parameters")
    });

    let mut assigned = 0;
    let mut last_assigned_end = 0;
    let mut departure: Option<(End, FenceEvent)> = None;
    for (end, ev) in events {
        match ev.kind {
            Crossing::Exit => departure = Some((end, ev)),
            Crossing::Enter => {
                if let Some((from, dep)) = departure.take() {
                    if from != end {
                        let first = dep.segment;
                        let last = ev.segment + 1;
                        let direction = if from == End::Origin {
                            Direction::Up
                        } else {
                            Direction::Down
                        };
                        let pts = chunk[first..=last].to_vec();
                        let vehicle_id = pts[0].vehicle_id.clone();
                        let trip_id = format!(
                            "{}:{}:{}",
                            vehicle_id,
                            dep.time.format("%Y%m%dT%H%M%S"),
                            direction.as_str()
                        );
                        assigned += (last + 1).saturating_sub(first.max(last_assigned_end));
                        last_assigned_end = last + 1;
                        traces.push(TripTrace {
                            trip_id,
                            vehicle_id,
                            route_id: route.route_id.clone(),
                            direction,
                            points: pts,
                        });
                    }
                }
            }
        }
    }
    assigned
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::route_model::reference_route;
    use crate::synthetic::{TraceBuilder, TraceLeg};

    #[test]
    fn two_back_to_back_runs() {
        let route = reference_route();
        let mut first = TraceBuilder::new("bus-1", "2021-03-01T08:00:00", 10.0);
        first.park_at_stop(&route, 0, 60.0);
        first.drive_route(&route, TraceLeg::Up, 8.0, 0.0);
        first.park_at_stop(&route, 9, 30.0);
        // deadhead back with the unit switched off, then a second run
        let mut second = TraceBuilder::new("bus-1", "2021-03-01T09:00:00", 10.0).with_odometer(20.0);
        second.park_at_stop(&route, 0, 60.0);
        second.drive_route(&route, TraceLeg::Up, 8.0, 0.0);
        second.park_at_stop(&route, 9, 30.0);
        let mut pts = first.points();
        pts.extend(second.points());
        let out = segment_trips(&pts, &route, &IngestConfig::default());
        let dirs: Vec<Direction> = out.traces.iter().map(|t| t.direction).collect();
        assert_eq!(dirs, vec![Direction::Up, Direction::Up]);
        assert_ne!(out.traces[0].trip_id, out.traces[1].trip_id);
    }

    #[test]
    fn layover_then_return_run() {
        let route = reference_route();
        let mut b = TraceBuilder::new("bus-1", "2021-03-01T08:00:00", 10.0);
        b.park_at_stop(&route, 0, 60.0);
        b.drive_route(&route, TraceLeg::Up, 8.0, 10.0);
        b.park_at_stop(&route, 9, 600.0);
        b.drive_route(&route, TraceLeg::Down, 8.0, 10.0);
        b.park_at_stop(&route, 0, 60.0);
        let pts = b.points();
        let out = segment_trips(&pts, &route, &IngestConfig::default());
        let dirs: Vec<Direction> = out.traces.iter().map(|t| t.direction).collect();
        assert_eq!(dirs, vec![Direction::Up, Direction::Down]);
        // layover points are not part of any trace
        assert!(out.unassigned_points > 0);
        let total: usize = out.traces.iter().map(|t| t.points.len()).sum();
        assert_eq!(total + out.unassigned_points, pts.len());
    }

    #[test]
    fn never_entering_origin_gives_no_trace() {
        let route = reference_route();
        let mut b = TraceBuilder::new("bus-1", "2021-03-01T08:00:00", 10.0);
        b.drive_between_stops(&route, 2, 6, 8.0);
        let out = segment_trips(&b.points(), &route, &IngestConfig::default());
        assert!(out.traces.is_empty());
        assert_eq!(out.unassigned_points, b.points().len());
    }

    #[test]
    fn long_gap_breaks_run() {
        let route = reference_route();
        let mut b = TraceBuilder::new("bus-1", "2021-03-01T08:00:00", 10.0);
        b.park_at_stop(&route, 0, 60.0);
        b.drive_route(&route, TraceLeg::Up, 8.0, 0.0);
        let mut pts = b.points();
        // drop 5 minutes of fixes mid-route
        let t0 = pts[40].timestamp;
        pts.retain(|p| p.timestamp < t0 || clock::seconds_between(t0, p.timestamp) > 300.0);
        let out = segment_trips(&pts, &route, &IngestConfig::default());
        assert!(out.traces.is_empty());
    }
}

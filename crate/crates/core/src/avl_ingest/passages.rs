use chrono::NaiveDateTime;

use super::fence::{Crossing, Fence, FenceEvent};
use super::{AvlPoint, Diagnostic, Direction, IngestConfig, SectionTraversal, TripTrace};
use crate::clock;
use crate::geo::local_xy;
use crate::route_model::Route;

#[derive(Debug, Clone, Default)]
pub struct MatchOutput {
    pub traversals: Vec<SectionTraversal>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Total duration of maximal runs of consecutive fixes slower than
/// `stationary_kmh`. Each run lasts from its first to its last fix.
pub fn infer_dwell(points: &[AvlPoint], stationary_kmh: f64) -> f64 {
    let mut total = 0.0;
    let mut run_start: Option<NaiveDateTime> = None;
    let mut run_end: Option<NaiveDateTime> = None;
    for p in points {
        if p.speed_kmh < stationary_kmh {
            run_start.get_or_insert(p.timestamp);
            run_end = Some(p.timestamp);
        } else if let (Some(a), Some(b)) = (run_start.take(), run_end.take()) {
            total += clock::seconds_between(a, b);
        }
    }
    if let (Some(a), Some(b)) = (run_start, run_end) {
        total += clock::seconds_between(a, b);
    }
    total
}

/// Time span of the fix pair (after `cursor`) whose chord passes closest
/// to the fence center.
fn closest_pair_span(pts: &[AvlPoint], fence: &Fence, cursor: Option<NaiveDateTime>) -> Option<f64> {
    pts.windows(2)
        .filter(|w| cursor.is_none_or(|c| w[1].timestamp > c))
        .map(|w| {
            let a = local_xy(fence.center, w[0].point());
            let b = local_xy(fence.center, w[1].point());
            let (dx, dy) = (b.0 - a.0, b.1 - a.1);
            let len2 = dx * dx + dy * dy;
            let s = if len2 > 0.0 {
                (-(a.0 * dx + a.1 * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let d = (a.0 + s * dx).hypot(a.1 + s * dy);
            (d, clock::seconds_between(w[0].timestamp, w[1].timestamp))
        })
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .map(|(_, span)| span)
}

#[derive(Debug, Clone, Copy)]
struct Passage {
    time: NaiveDateTime,
    dwell_s: f64,
}

fn trip_diag(trace: &TripTrace, section_id: Option<u32>, message: String) -> Diagnostic {
    Diagnostic {
        vehicle_id: trace.vehicle_id.clone(),
        row: trace.points.first().map(|p| p.row),
        trip_id: Some(trace.trip_id.clone()),
        section_id,
        message,
    }
}

/// Turn one origin-to-terminus trace into section traversals.
///
/// Sections whose start or end stop has no trustworthy passage are left out
/// with a diagnostic; nothing is interpolated across a missing stop.
pub fn match_stop_passages(trace: &TripTrace, route: &Route, config: &IngestConfig) -> MatchOutput {
    let mut out = MatchOutput::default();
    if trace.direction != Direction::Up {
        out.diagnostics.push(trip_diag(
            trace,
            None,
            "trace runs against the route orientation".into(),
        ));
        return out;
    }
    let stops = route.stops();
    let pts = &trace.points;

    let mut passages: Vec<Option<Passage>> = Vec::with_capacity(stops.len());
    let mut cursor: Option<NaiveDateTime> = None;
    for (idx, stop) in stops.iter().enumerate() {
        let fence = Fence::new(stop.point(), config.geofence_radius_m);
        let events = fence.events(pts);
        let after = |e: &&FenceEvent| cursor.is_none_or(|c| e.time > c);
        let wanted = if idx == 0 { Crossing::Exit } else { Crossing::Enter };
        let found = events.iter().filter(after).find(|e| e.kind == wanted).copied();
        let passage = match found {
            Some(e) if e.span_s > config.max_gap_s => {
                out.diagnostics.push(trip_diag(
                    trace,
                    None,
                    format!(
                        "GPS gap of {:.0} s spanning stop {}; passage not trusted",
                        e.span_s, stop.stop_id
                    ),
                ));
                None
            }
            Some(e) if idx == 0 => Some(Passage {
                time: e.time,
                dwell_s: 0.0,
            }),
            Some(e) => {
                let exit = events
                    .iter()
                    .find(|x| x.kind == Crossing::Exit && x.time > e.time)
                    .map(|x| x.time);
                let inside: Vec<AvlPoint> = pts
                    .iter()
                    .filter(|p| p.timestamp >= e.time && exit.is_none_or(|x| p.timestamp <= x))
                    .cloned()
                    .collect();
                Some(Passage {
                    time: e.time,
                    dwell_s: infer_dwell(&inside, config.stationary_speed_kmh),
                })
            }
            None => {
                let message = match closest_pair_span(pts, &fence, cursor) {
                    Some(span) if span > config.max_gap_s => {
                        format!(
                            "GPS gap of {span:.0} s spanning stop {}; passage not trusted",
                            stop.stop_id
                        )
                    }
                    _ => format!("no passage detected at stop {}", stop.stop_id),
                };
                out.diagnostics.push(trip_diag(trace, None, message));
                None
            }
        };
        if let Some(p) = passage {
            cursor = Some(p.time);
        }
        passages.push(passage);
    }

    for (j, section) in route.sections().iter().enumerate() {
        let (Some(start), Some(end)) = (passages[j], passages[j + 1]) else {
            out.diagnostics.push(trip_diag(
                trace,
                Some(section.section_id),
                format!("section {} omitted: missing stop passage", section.section_id),
            ));
            continue;
        };
        let travel_ms = (end.time - start.time).num_milliseconds();
        let travel_time_s = travel_ms as f64 / 1000.0;
        let dwell_time_s = start.dwell_s.min(travel_time_s);
        let running_s = travel_time_s - dwell_time_s;
        if travel_ms <= 0 || running_s <= 0.0 {
            out.diagnostics.push(trip_diag(
                trace,
                Some(section.section_id),
                format!(
                    "section {} omitted: degenerate timing (travel {travel_time_s} s, dwell {dwell_time_s} s)",
                    section.section_id
                ),
            ));
            continue;
        }
        out.traversals.push(SectionTraversal {
            trip_id: trace.trip_id.clone(),
            vehicle_id: trace.vehicle_id.clone(),
            section_id: section.section_id,
            section_start_time: start.time,
            travel_time_s,
            dwell_time_s,
            running_speed_mps: section.length_m / running_s,
            day_of_week: clock::day_of_week(start.time),
            lup: section.lup,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::route_model::load_route;
    use crate::synthetic::TraceBuilder;

    fn at(iso: &str) -> NaiveDateTime {
        clock::parse_iso(iso).unwrap()
    }

    fn fix(t: &str, speed: f64) -> AvlPoint {
        AvlPoint {
            vehicle_id: "v".into(),
            timestamp: at(t),
            latitude: 0.0,
            longitude: 0.0,
            odometer_km: 0.0,
            speed_kmh: speed,
            row: 0,
        }
    }

    /// Three stops on a north-south line: 300 m, then 600 m.
    fn line_route() -> Route {
        let text = r#"format_version = 1
route_id = "line"

[[section]]
section_id = 1
length_m = 300.0
lup = "CBD"
signalized_intersection = false
start_stop = { stop_id = 1, name = "a", lat = 13.0, lon = 77.0 }
end_stop = { stop_id = 2, name = "b", lat = 13.00269796, lon = 77.0 }

[[section]]
section_id = 2
length_m = 600.0
lup = "IC"
signalized_intersection = true
intersection_delay_s = 20.0
start_stop = { stop_id = 2, name = "b", lat = 13.00269796, lon = 77.0 }
end_stop = { stop_id = 3, name = "c", lat = 13.00809388, lon = 77.0 }
"#;
        load_route(text).unwrap()
    }

    fn up_trace(points: Vec<AvlPoint>) -> TripTrace {
        TripTrace {
            trip_id: "trip".into(),
            vehicle_id: "v".into(),
            route_id: "line".into(),
            direction: Direction::Up,
            points,
        }
    }

    #[test]
    fn dwell_no_stationary_run() {
        let pts = [fix("2021-03-01T08:00:00", 20.0), fix("2021-03-01T08:00:10", 20.0)];
        assert_eq!(infer_dwell(&pts, 2.0), 0.0);
        assert_eq!(infer_dwell(&[], 2.0), 0.0);
    }

    #[test]
    fn dwell_single_run() {
        let pts = [
            fix("2021-03-01T08:00:00", 12.0),
            fix("2021-03-01T08:00:05", 0.0),
            fix("2021-03-01T08:00:20", 1.0),
            fix("2021-03-01T08:00:50", 0.0),
            fix("2021-03-01T08:00:55", 9.0),
        ];
        assert_eq!(infer_dwell(&pts, 2.0), 45.0);
    }

    #[test]
    fn dwell_two_runs_sum() {
        let pts = [
            fix("2021-03-01T08:00:00", 0.0),
            fix("2021-03-01T08:00:10", 0.0),
            fix("2021-03-01T08:00:15", 15.0),
            fix("2021-03-01T08:00:20", 0.0),
            fix("2021-03-01T08:00:40", 0.0),
        ];
        assert_eq!(infer_dwell(&pts, 2.0), 30.0);
    }

    #[test]
    fn constant_speed_section() {
        let route = line_route();
        let mut b = TraceBuilder::new("v", "2021-03-01T08:00:00", 1.0);
        b.drive_between_stops(&route, 0, 2, 10.0);
        let out = match_stop_passages(&up_trace(b.points()), &route, &IngestConfig::default());
        let s2 = out.traversals.iter().find(|t| t.section_id == 2).unwrap();
        assert!((s2.travel_time_s - 60.0).abs() <= 0.002, "{}", s2.travel_time_s);
        assert_eq!(s2.dwell_time_s, 0.0);
        assert!((s2.running_speed_mps - 10.0).abs() < 1e-3);
    }

    #[test]
    fn stationary_period_at_start_stop_is_dwell() {
        let route = line_route();
        let mut b = TraceBuilder::new("v", "2021-03-01T08:00:00", 1.0);
        b.drive_between_stops(&route, 0, 1, 10.0);
        b.park_at_stop(&route, 1, 30.0);
        b.drive_between_stops(&route, 1, 2, 10.0);
        let out = match_stop_passages(&up_trace(b.points()), &route, &IngestConfig::default());
        let s2 = out.traversals.iter().find(|t| t.section_id == 2).unwrap();
        // 3 s from fence edge to stop, 30 s parked, 57 s to the next fence edge
        assert!((s2.travel_time_s - 90.0).abs() <= 0.002, "{}", s2.travel_time_s);
        assert_eq!(s2.dwell_time_s, 30.0);
        assert!((s2.running_speed_mps - 10.0).abs() < 1e-3);
        let rel = s2.running_speed_mps * (s2.travel_time_s - s2.dwell_time_s) / 600.0 - 1.0;
        assert!(rel.abs() < 1e-9);
    }

    #[test]
    fn gap_spanning_stop_omits_adjacent_sections() {
        let route = crate::route_model::reference_route();
        let mut b = TraceBuilder::new("v", "2021-03-01T08:00:00", 10.0);
        b.park_at_stop(&route, 0, 30.0);
        b.drive_route(&route, crate::synthetic::TraceLeg::Up, 3.0, 0.0);
        let stop3 = route.stops()[2].point();
        // blank out fixes within 250 m of stop 3: a ~167 s hole
        let pts: Vec<AvlPoint> = b
            .points()
            .into_iter()
            .filter(|p| crate::geo::haversine_m(p.point(), stop3) > 250.0)
            .collect();
        let trace = up_trace(pts);
        let out = match_stop_passages(&trace, &route, &IngestConfig::default());
        let ids: Vec<u32> = out.traversals.iter().map(|t| t.section_id).collect();
        assert_eq!(ids, vec![1, 4, 5, 6, 7, 8, 9]);
        assert!(out.diagnostics.iter().any(|d| d.message.contains("spanning stop 3")));
        assert!(out
            .diagnostics
            .iter()
            .any(|d| d.section_id == Some(2) && d.message.contains("omitted")));
    }

    #[test]
    fn down_trace_is_not_matched() {
        let route = line_route();
        let mut trace = up_trace(vec![]);
        trace.direction = Direction::Down;
        let out = match_stop_passages(&trace, &route, &IngestConfig::default());
        assert!(out.traversals.is_empty());
        assert_eq!(out.diagnostics.len(), 1);
    }
}

use chrono::NaiveDateTime;

use super::AvlPoint;
use crate::clock;
use crate::geo::{local_xy, segment_circle_crossings, GeoPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Crossing {
    Enter,
    Exit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct FenceEvent {
    pub kind: Crossing,
    /// Index of the first point of the bracketing pair.
    pub segment: usize,
    pub frac: f64,
    pub time: NaiveDateTime,
    /// Duration of the bracketing pair in seconds.
    pub span_s: f64,
}

/// Circular geofence around a stop.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Fence {
    pub center: GeoPoint,
    pub radius_m: f64,
}

impl Fence {
    pub fn new(center: GeoPoint, radius_m: f64) -> Self {
        Fence { center, radius_m }
    }

    /// Every boundary crossing along the polyline, in time order. Positions
    /// are linearly interpolated between consecutive fixes.
    pub fn events(&self, points: &[AvlPoint]) -> Vec<FenceEvent> {
        let mut events = Vec::new();
        for (k, pair) in points.windows(2).enumerate() {
            let a = local_xy(self.center, pair[0].point());
            let b = local_xy(self.center, pair[1].point());
            let (entry, exit) = segment_circle_crossings(a, b, self.radius_m);
            let span_s = clock::seconds_between(pair[0].timestamp, pair[1].timestamp);
            for (kind, frac) in [(Crossing::Enter, entry), (Crossing::Exit, exit)] {
                if let Some(frac) = frac {
                    events.push(FenceEvent {
                        kind,
                        segment: k,
                        frac,
                        time: clock::interpolate_ms(pair[0].timestamp, pair[1].timestamp, frac),
                        span_s,
                    });
                }
            }
        }
        events
    }
}

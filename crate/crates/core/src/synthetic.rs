//! Synthetic AVL data: a kinematic trace builder and a seeded generator for
//! a month-style log of the study route.
//!
//! The generator drives a fleet up and down the route on a fixed headway.
//! Section running times follow a slowly varying congestion process shared
//! by consecutive buses, on top of a time-of-day profile the forecaster can
//! learn. Buses dwell at intermediate stops; at the start stop of a
//! signalized section they also queue at the signal, with a uniformly
//! distributed wait whose mean is the section's configured average delay.

use std::io::Write;

use chrono::{NaiveDate, NaiveDateTime, TimeDelta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::avl_ingest::{AvlPoint, AVL_HEADER};
use crate::clock;
use crate::geo::{haversine_m, local_xy, segment_circle_crossings, GeoPoint};
use crate::route_model::{LandUsePattern, Route};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceLeg {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryCrossing {
    Enter,
    Exit,
}

#[derive(Debug, Clone, Copy)]
struct Key {
    t: f64,
    pos: GeoPoint,
}

/// Piecewise-linear vehicle motion, sampled into AVL fixes.
///
/// Between keyframes the bus moves in a straight line at constant speed.
/// A fix reports the slowest speed of the motion segments touching its
/// instant, so a fix taken on the moment of arrival or departure reads 0.
#[derive(Debug, Clone)]
pub struct TraceBuilder {
    vehicle_id: String,
    start: NaiveDateTime,
    interval_s: f64,
    /// Fixes in the middle of long stationary spells are thinned to this spacing.
    parked_interval_s: f64,
    odometer_start_km: f64,
    keys: Vec<Key>,
}

impl TraceBuilder {
    pub fn new(vehicle_id: &str, start_iso: &str, interval_s: f64) -> Self {
        let start = clock::parse_iso(start_iso).expect("valid ISO start time");
        Self::starting_at(vehicle_id, start, interval_s)
    }

    pub fn starting_at(vehicle_id: &str, start: NaiveDateTime, interval_s: f64) -> Self {
        TraceBuilder {
            vehicle_id: vehicle_id.to_string(),
            start,
            interval_s,
            parked_interval_s: interval_s,
            odometer_start_km: 0.0,
            keys: Vec::new(),
        }
    }

    pub fn with_parked_interval(mut self, seconds: f64) -> Self {
        self.parked_interval_s = seconds;
        self
    }

    pub fn with_odometer(mut self, km: f64) -> Self {
        self.odometer_start_km = km;
        self
    }

    pub fn start_time(&self) -> NaiveDateTime {
        self.start
    }

    /// Seconds since the builder's start at the end of the motion so far.
    pub fn elapsed_s(&self) -> f64 {
        self.keys.last().map_or(0.0, |k| k.t)
    }

    pub fn position(&self) -> Option<GeoPoint> {
        self.keys.last().map(|k| k.pos)
    }

    pub fn distance_km(&self) -> f64 {
        self.keys
            .windows(2)
            .map(|w| haversine_m(w[0].pos, w[1].pos))
            .sum::<f64>()
            / 1000.0
    }

    fn ensure_at(&mut self, pos: GeoPoint) {
        if self.keys.is_empty() {
            self.keys.push(Key { t: 0.0, pos });
        }
    }

    pub fn park(&mut self, pos: GeoPoint, duration_s: f64) {
        self.ensure_at(pos);
        let t = self.elapsed_s() + duration_s;
        if duration_s > 0.0 {
            self.keys.push(Key { t, pos });
        }
    }

    /// Stay put until `seconds` after the builder's start.
    pub fn park_until(&mut self, seconds: f64) {
        if let Some(pos) = self.position() {
            let wait = seconds - self.elapsed_s();
            if wait > 0.0 {
                self.park(pos, wait);
            }
        }
    }

    pub fn park_at_stop(&mut self, route: &Route, stop_idx: usize, duration_s: f64) {
        let pos = route.stops()[stop_idx].point();
        self.park(pos, duration_s);
    }

    pub fn drive_to(&mut self, to: GeoPoint, speed_mps: f64) {
        let from = self.position().expect("drive_to needs a starting position");
        let d = haversine_m(from, to);
        if d > 0.0 {
            // keyframes sit on whole milliseconds
            let t = ((self.elapsed_s() + d / speed_mps) * 1000.0).round() / 1000.0;
            self.keys.push(Key { t, pos: to });
        }
    }

    pub fn drive_to_stop(&mut self, route: &Route, from: usize, to: usize, speed_mps: f64) {
        let stops = route.stops();
        self.ensure_at(stops[from].point());
        self.drive_to(stops[to].point(), speed_mps);
    }

    /// Drive along the route from stop `from` to stop `to` without stopping.
    pub fn drive_between_stops(&mut self, route: &Route, from: usize, to: usize, speed_mps: f64) {
        let stops = route.stops();
        self.ensure_at(stops[from].point());
        let order: Vec<usize> = if to >= from {
            (from + 1..=to).collect()
        } else {
            (to..from).rev().collect()
        };
        for k in order {
            self.drive_to(stops[k].point(), speed_mps);
        }
    }

    /// Full run with a fixed dwell at every intermediate stop.
    pub fn drive_route(&mut self, route: &Route, leg: TraceLeg, speed_mps: f64, dwell_s: f64) {
        let n = route.stops().len();
        let order: Vec<usize> = match leg {
            TraceLeg::Up => (0..n).collect(),
            TraceLeg::Down => (0..n).rev().collect(),
        };
        self.ensure_at(route.stops()[order[0]].point());
        for (i, &k) in order.iter().enumerate().skip(1) {
            self.drive_to(route.stops()[k].point(), speed_mps);
            if i + 1 < order.len() {
                self.park_at_stop(route, k, dwell_s);
            }
        }
    }

    fn segment_speed(&self, i: usize) -> f64 {
        let (a, b) = (self.keys[i], self.keys[i + 1]);
        haversine_m(a.pos, b.pos) / (b.t - a.t)
    }

    fn state_at(&self, t: f64) -> (GeoPoint, f64, f64) {
        // (position, speed m/s, odometer m)
        let mut odo = 0.0;
        for i in 0..self.keys.len().saturating_sub(1) {
            let (a, b) = (self.keys[i], self.keys[i + 1]);
            let seg_len = haversine_m(a.pos, b.pos);
            if t <= b.t {
                let f = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
                let pos = GeoPoint::new(
                    a.pos.lat + f * (b.pos.lat - a.pos.lat),
                    a.pos.lon + f * (b.pos.lon - a.pos.lon),
                );
                let mut speed = self.segment_speed(i);
                if t == b.t && i + 2 < self.keys.len() {
                    speed = speed.min(self.segment_speed(i + 1));
                }
                if t == a.t && i > 0 {
                    speed = speed.min(self.segment_speed(i - 1));
                }
                return (pos, speed, odo + f * seg_len);
            }
            odo += seg_len;
        }
        let last = self.keys.last().expect("non-empty trace");
        (last.pos, 0.0, odo)
    }

    fn parked_thinned(&self, t: f64) -> bool {
        if self.parked_interval_s <= self.interval_s {
            return false;
        }
        self.keys.windows(2).any(|w| {
            w[0].pos == w[1].pos
                && t - w[0].t > self.parked_interval_s / 2.0
                && w[1].t - t > self.parked_interval_s / 2.0
                && (t - w[0].t).rem_euclid(self.parked_interval_s) >= self.interval_s
        })
    }

    /// Sampled fixes with whole-second timestamps.
    pub fn points(&self) -> Vec<AvlPoint> {
        let mut out = Vec::new();
        if self.keys.is_empty() {
            return out;
        }
        let end = self.elapsed_s();
        let mut k = 0u64;
        loop {
            let t = (k as f64 * self.interval_s).round();
            if t > end {
                break;
            }
            k += 1;
            if self.parked_thinned(t) {
                continue;
            }
            let (pos, speed, odo_m) = self.state_at(t);
            out.push(AvlPoint {
                vehicle_id: self.vehicle_id.clone(),
                timestamp: self.start + TimeDelta::seconds(t as i64),
                latitude: pos.lat,
                longitude: pos.lon,
                odometer_km: self.odometer_start_km + odo_m / 1000.0,
                speed_kmh: speed * 3.6,
                row: 0,
            });
        }
        out
    }

    /// Exact boundary crossings of a circular fence along the continuous
    /// motion, in time order.
    pub fn boundary_crossings(&self, center: GeoPoint, radius_m: f64) -> Vec<(BoundaryCrossing, NaiveDateTime)> {
        let mut out = Vec::new();
        for w in self.keys.windows(2) {
            let a = local_xy(center, w[0].pos);
            let b = local_xy(center, w[1].pos);
            let (entry, exit) = segment_circle_crossings(a, b, radius_m);
            for (kind, s) in [(BoundaryCrossing::Enter, entry), (BoundaryCrossing::Exit, exit)] {
                if let Some(s) = s {
                    let t = w[0].t + s * (w[1].t - w[0].t);
                    out.push((kind, clock::add_seconds(self.start, t)));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub first_day: NaiveDate,
    pub days: u32,
    pub trips_per_day: u32,
    /// First up-trip departure, seconds after midnight.
    pub first_departure_s: f64,
    pub headway_s: f64,
    pub departure_jitter_s: f64,
    pub vehicles: u32,
    pub sample_interval_s: f64,
    pub parked_interval_s: f64,
    /// Free-flow speed per land-use code (CBD, IC, ISU, OSU), m/s.
    pub free_speed_mps: [f64; 4],
    /// Standard deviation of the log congestion process.
    pub congestion_sigma: f64,
    /// Correlation time of the congestion process, minutes.
    pub congestion_tau_min: f64,
    /// Per-trip, per-section log-normal running-time noise.
    pub section_noise_sigma: f64,
    pub dwell_mean_s: f64,
    pub dwell_sd_s: f64,
    pub layover_s: f64,
    pub down_speed_mps: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            first_day: NaiveDate::from_ymd_opt(2021, 3, 1).expect("valid date"),
            days: 10,
            trips_per_day: 60,
            first_departure_s: 6.0 * 3600.0,
            headway_s: 900.0,
            departure_jitter_s: 120.0,
            vehicles: 6,
            sample_interval_s: 10.0,
            parked_interval_s: 60.0,
            free_speed_mps: [7.0, 8.5, 10.0, 12.0],
            congestion_sigma: 0.22,
            congestion_tau_min: 45.0,
            section_noise_sigma: 0.08,
            dwell_mean_s: 14.0,
            dwell_sd_s: 5.0,
            layover_s: 300.0,
            down_speed_mps: 9.0,
            seed: 2021,
        }
    }
}

/// Ground truth for one generated up trip.
#[derive(Debug, Clone)]
pub struct PlannedTrip {
    pub vehicle_id: String,
    pub departure: NaiveDateTime,
    /// Origin fence exit, then fence entry at every later stop.
    pub true_passages: Vec<NaiveDateTime>,
}

#[derive(Debug, Clone)]
pub struct SyntheticLog {
    pub points: Vec<AvlPoint>,
    pub trips: Vec<PlannedTrip>,
}

impl SyntheticLog {
    /// Render as a raw AVL CSV in the log format (6-decimal coordinates,
    /// 2-decimal odometer, integer speed).
    pub fn write_csv<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(AVL_HEADER)?;
        for p in &self.points {
            w.write_record([
                p.vehicle_id.clone(),
                p.timestamp.format(clock::AVL_FORMAT).to_string(),
                format!("{:.6}", p.latitude),
                format!("{:.6}", p.longitude),
                format!("{:.2}", p.odometer_km),
                format!("{:.0}", p.speed_kmh),
            ])?;
        }
        w.flush()
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf-8 csv")
    }
}

/// Hour-of-day congestion profile (log multiplier): morning and evening peaks.
fn time_of_day_profile(seconds: f64) -> f64 {
    let h = seconds / 3600.0;
    0.35 * (-((h - 9.0) / 1.2).powi(2)).exp() + 0.45 * (-((h - 18.0) / 1.5).powi(2)).exp()
}

fn day_effect(day: NaiveDate) -> f64 {
    match clock::day_of_week(day.and_hms_opt(0, 0, 0).expect("midnight")) {
        5 => -0.10,
        6 => -0.20,
        _ => 0.0,
    }
}

struct DayProcess {
    minutes: Vec<f64>,
}

impl DayProcess {
    fn generate(rng: &mut ChaCha8Rng, sigma: f64, tau_min: f64) -> Self {
        let rho = (-1.0 / tau_min).exp();
        let innov = Normal::new(0.0, sigma * (1.0 - rho * rho).sqrt()).expect("valid sd");
        let first = Normal::new(0.0, sigma).expect("valid sd").sample(rng);
        let mut minutes = Vec::with_capacity(1441);
        minutes.push(first);
        for m in 1..=1440 {
            let prev = minutes[m - 1];
            minutes.push(rho * prev + innov.sample(rng));
        }
        DayProcess { minutes }
    }

    fn at(&self, seconds: f64) -> f64 {
        let m = (seconds / 60.0).clamp(0.0, 1439.999);
        let i = m.floor() as usize;
        let f = m - i as f64;
        self.minutes[i] * (1.0 - f) + self.minutes[i + 1] * f
    }
}

struct TripDraw {
    day: u32,
    departure_s: f64,
    /// Running-time noise per section.
    noise: Vec<f64>,
    /// Stationary time at each stop index (0 for origin and terminus).
    stationary: Vec<f64>,
}

/// Generate a full synthetic log for `route`.
pub fn generate_log(route: &Route, config: &SyntheticConfig) -> SyntheticLog {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let days: Vec<DayProcess> = (0..config.days)
        .map(|_| DayProcess::generate(&mut rng, config.congestion_sigma, config.congestion_tau_min))
        .collect();
    let n_sections = route.len();
    let noise = Normal::new(0.0, config.section_noise_sigma).expect("valid sd");
    let dwell = Normal::new(config.dwell_mean_s, config.dwell_sd_s).expect("valid sd");
    let jitter = Uniform::new_inclusive(0.0, config.departure_jitter_s).expect("valid range");

    let mut draws = Vec::new();
    for day in 0..config.days {
        for k in 0..config.trips_per_day {
            let departure_s =
                (config.first_departure_s + k as f64 * config.headway_s + jitter.sample(&mut rng)).round();
            let noise: Vec<f64> = (0..n_sections).map(|_| noise.sample(&mut rng)).collect();
            let mut stationary = vec![0.0; n_sections + 1];
            for (j, section) in route.sections().iter().enumerate().skip(1) {
                let mut s = dwell.sample(&mut rng).clamp(3.0, 45.0);
                if section.has_signalized_intersection {
                    s += rng.random_range(0.0..=2.0 * section.intersection_delay_s);
                }
                stationary[j] = s.round();
            }
            draws.push(TripDraw {
                day,
                departure_s,
                noise,
                stationary,
            });
        }
    }

    let stops: Vec<GeoPoint> = route.stops().iter().map(|s| s.point()).collect();
    let mut points = Vec::new();
    let mut trips = Vec::new();
    let mut odometers = vec![1000.0; config.vehicles as usize];
    for day in 0..config.days {
        let date = config.first_day + TimeDelta::days(day as i64);
        let midnight = date.and_hms_opt(0, 0, 0).expect("midnight");
        let day_shift = day_effect(date);
        for v in 0..config.vehicles {
            let vehicle_id = format!("KA-06-F-{:04}", 830 + v);
            let mine: Vec<&TripDraw> = draws
                .iter()
                .enumerate()
                .filter(|(i, d)| d.day == day && (*i as u32 % config.trips_per_day) % config.vehicles == v)
                .map(|(_, d)| d)
                .collect();
            let Some(first) = mine.first() else { continue };
            let builder_start = first.departure_s - 120.0;
            let mut b = TraceBuilder::starting_at(
                &vehicle_id,
                midnight + TimeDelta::seconds(builder_start as i64),
                config.sample_interval_s,
            )
            .with_parked_interval(config.parked_interval_s)
            .with_odometer(odometers[v as usize]);
            b.park(stops[0], 0.0);
            let mut windows = Vec::new();
            for draw in mine {
                b.park(stops[0], 0.0);
                b.park_until(draw.departure_s - builder_start);
                let departed = b.elapsed_s();
                for (j, section) in route.sections().iter().enumerate() {
                    if draw.stationary[j] > 0.0 {
                        b.park(stops[j], draw.stationary[j]);
                    }
                    let tod = builder_start + b.elapsed_s();
                    let log_mult = time_of_day_profile(tod) + day_shift + days[day as usize].at(tod) + draw.noise[j];
                    let free = config.free_speed_mps[section.lup.code() as usize];
                    let run_s = section.length_m / free * log_mult.exp();
                    let d = haversine_m(stops[j], stops[j + 1]);
                    b.drive_to(stops[j + 1], d / run_s);
                }
                let arrived = b.elapsed_s();
                windows.push((departed, arrived, draw.departure_s));
                b.park(stops[n_sections], config.layover_s);
                for j in (0..n_sections).rev() {
                    b.drive_to(stops[j], config.down_speed_mps);
                    if j > 0 {
                        b.park(stops[j], 10.0);
                    }
                }
                b.park(stops[0], 60.0);
            }
            b.park(stops[0], 120.0);

            for (departed, arrived, departure_s) in windows {
                let lo = clock::add_seconds(b.start_time(), departed - 1.0);
                let hi = clock::add_seconds(b.start_time(), arrived + 1.0);
                let mut passages = Vec::with_capacity(stops.len());
                let mut cursor = lo;
                for (idx, stop) in stops.iter().enumerate() {
                    let want = if idx == 0 {
                        BoundaryCrossing::Exit
                    } else {
                        BoundaryCrossing::Enter
                    };
                    let hit = b
                        .boundary_crossings(*stop, 30.0)
                        .into_iter()
                        .find(|(k, t)| *k == want && *t > cursor && *t <= hi)
                        .map(|(_, t)| t)
                        .expect("generated trip passes every stop");
                    cursor = hit;
                    passages.push(hit);
                }
                trips.push(PlannedTrip {
                    vehicle_id: vehicle_id.clone(),
                    departure: midnight + TimeDelta::milliseconds((departure_s * 1000.0) as i64),
                    true_passages: passages,
                });
            }
            odometers[v as usize] += b.distance_km() + 5.0;
            points.extend(b.points());
        }
    }
    points.sort_by(|a, b| (a.timestamp, &a.vehicle_id).cmp(&(b.timestamp, &b.vehicle_id)));
    trips.sort_by_key(|t| t.departure);
    SyntheticLog { points, trips }
}

/// Land-use code to free-flow speed, exposed for tests that build traversals directly.
pub fn free_speed(config: &SyntheticConfig, lup: LandUsePattern) -> f64 {
    config.free_speed_mps[lup.code() as usize]
}

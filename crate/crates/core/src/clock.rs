//! Wall-clock helpers. All times are local, timezone-naive.

use chrono::{Datelike, NaiveDateTime, TimeDelta, Timelike};

/// Timestamp format of raw AVL logs.
pub const AVL_FORMAT: &str = "%d-%m-%Y %H:%M:%S";
/// ISO-8601 local time with millisecond precision, used in every output file.
pub const ISO_MILLIS: &str = "%Y-%m-%dT%H:%M:%S%.3f";

pub fn parse_avl(s: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s.trim(), AVL_FORMAT).ok()
}

pub fn format_iso(t: NaiveDateTime) -> String {
    t.format(ISO_MILLIS).to_string()
}

/// Accepts ISO-8601 with or without fractional seconds, `T` or space separated.
pub fn parse_iso(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"]
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
}

/// Monday = 0 ... Sunday = 6.
pub fn day_of_week(t: NaiveDateTime) -> u8 {
    t.weekday().num_days_from_monday() as u8
}

/// Whole seconds since local midnight, 0..=86399.
pub fn seconds_since_midnight(t: NaiveDateTime) -> u32 {
    t.num_seconds_from_midnight()
}

/// `t + seconds`, rounded to the nearest nanosecond.
pub fn add_seconds(t: NaiveDateTime, seconds: f64) -> NaiveDateTime {
    t + TimeDelta::nanoseconds((seconds * 1e9).round() as i64)
}

/// `later - earlier` in seconds.
pub fn seconds_between(earlier: NaiveDateTime, later: NaiveDateTime) -> f64 {
    let d = later - earlier;
    match d.num_nanoseconds() {
        Some(ns) => ns as f64 / 1e9,
        None => d.num_milliseconds() as f64 / 1e3,
    }
}

/// Linear interpolation between two sample times, rounded to the millisecond.
pub fn interpolate_ms(a: NaiveDateTime, b: NaiveDateTime, frac: f64) -> NaiveDateTime {
    let span = (b - a).num_milliseconds() as f64;
    a + TimeDelta::milliseconds((span * frac).round() as i64)
}

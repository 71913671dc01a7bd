//! Fusion of the forest forecast with preceding-trip probe observations.
//!
//! For a section starting at `C_time` the forest gives FTT. The most recent
//! traversal of the same section that started within the window before the
//! clock time supplies a probe: its raw travel time (PTT) on normal sections,
//! or on signalized sections its running time plus the section's standard
//! dwell and average signal delay (DTT). The adjusted travel time is
//! `ATT = w1·FTT + w2·probe` and the arrival time is `BAT = C_time + ATT`.
//! Without a probe the estimate falls back to FTT and is flagged.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{NaiveDateTime, TimeDelta};
use serde::{Deserialize, Serialize};

use crate::avl_ingest::SectionTraversal;
use crate::boosted_trees::{BoostedForest, FeatureVector};
use crate::clock;
use crate::route_model::{Route, RouteSection, SpatialClass};

/// Probe window: 30 minutes.
pub const DEFAULT_WINDOW_S: f64 = 1800.0;

/// Forecasts at or below zero are raised to this many seconds.
pub const MIN_TRAVEL_TIME_S: f64 = 1.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum HybridError {
    #[error("degenerate probe: running speed {speed} m/s on section {section_id}")]
    DegenerateProbe { section_id: u32, speed: f64 },
    #[error("probe for section {found} used on section {expected}")]
    SectionMismatch { expected: u32, found: u32 },
    #[error("section {0} has no signalized intersection")]
    NotSignalized(u32),
    #[error("non-positive forecast travel time {0} s")]
    NonPositiveForecast(f64),
    #[error("unknown section {0}")]
    UnknownSection(u32),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
}

/// Traversals indexed by section, each list ordered by (start time, trip id).
#[derive(Debug, Clone)]
pub struct PrecedingTripStore {
    window: TimeDelta,
    by_section: BTreeMap<u32, Vec<SectionTraversal>>,
}

impl Default for PrecedingTripStore {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW_S)
    }
}

impl PrecedingTripStore {
    pub fn new(window_s: f64) -> Self {
        PrecedingTripStore {
            window: TimeDelta::milliseconds((window_s * 1000.0).round() as i64),
            by_section: BTreeMap::new(),
        }
    }

    pub fn from_traversals<'a>(window_s: f64, traversals: impl IntoIterator<Item = &'a SectionTraversal>) -> Self {
        let mut store = Self::new(window_s);
        for t in traversals {
            store.insert(t.clone());
        }
        store
    }

    pub fn window_s(&self) -> f64 {
        self.window.num_milliseconds() as f64 / 1000.0
    }

    /// Insert in order; arrival order of inserts does not matter.
    pub fn insert(&mut self, t: SectionTraversal) {
        let list = self.by_section.entry(t.section_id).or_default();
        let key = (t.section_start_time, t.trip_id.as_str());
        let pos = list.partition_point(|x| (x.section_start_time, x.trip_id.as_str()) <= key);
        list.insert(pos, t);
    }

    pub fn len(&self) -> usize {
        self.by_section.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The traversal of `section_id` whose start `i` satisfies
    /// `0 < t − i < window` with the smallest `t − i`; equal starts go to
    /// the smallest trip id.
    pub fn select_preceding(&self, section_id: u32, t: NaiveDateTime) -> Option<&SectionTraversal> {
        let list = self.by_section.get(&section_id)?;
        let end = list.partition_point(|x| x.section_start_time < t);
        let latest = list.get(end.checked_sub(1)?)?.section_start_time;
        if t - latest >= self.window {
            return None;
        }
        let first = list.partition_point(|x| x.section_start_time < latest);
        list.get(first)
    }
}

pub fn select_preceding(store: &PrecedingTripStore, section_id: u32, t: NaiveDateTime) -> Option<&SectionTraversal> {
    store.select_preceding(section_id, t)
}

/// Fusion weights for one spatial class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassWeights {
    pub x1: f64,
    pub x2: f64,
    pub w1: f64,
    pub w2: f64,
}

impl ClassWeights {
    pub fn forest_only() -> Self {
        ClassWeights {
            x1: 1.0,
            x2: 0.0,
            w1: 1.0,
            w2: 0.0,
        }
    }

    /// Weights from the forest's R² (`x1`) and the probe correlation (`x2`).
    ///
    /// `x2 ≤ 0` gives the forest all the weight and a warning. A negative
    /// `x1` is raised to 0.
    pub fn from_statistics(x1: f64, x2: f64) -> Result<(Self, Option<String>), HybridError> {
        if !(x1.is_finite() && x2.is_finite()) {
            return Err(HybridError::InvalidWeights(format!(
                "non-finite statistics x1={x1}, x2={x2}"
            )));
        }
        if x2 <= 0.0 {
            let w = ClassWeights {
                x1,
                x2,
                w1: 1.0,
                w2: 0.0,
            };
            return Ok((
                w,
                Some(format!(
                    "probe correlation {x2} is not positive; using the forecast alone"
                )),
            ));
        }
        let mut warning = None;
        let x1c = if x1 < 0.0 {
            warning = Some(format!("forest R² {x1} is negative; treated as 0"));
            0.0
        } else {
            x1
        };
        let w1 = x1c / (x1c + x2);
        Ok((
            ClassWeights {
                x1,
                x2,
                w1,
                w2: 1.0 - w1,
            },
            warning,
        ))
    }

    pub fn validate(&self) -> Result<(), HybridError> {
        let ok = (0.0..=1.0).contains(&self.w1)
            && (0.0..=1.0).contains(&self.w2)
            && (self.w1 + self.w2 - 1.0).abs() <= 1e-12;
        if ok {
            Ok(())
        } else {
            Err(HybridError::InvalidWeights(format!(
                "w1={}, w2={} must be non-negative and sum to 1",
                self.w1, self.w2
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HybridWeights {
    pub sis: ClassWeights,
    pub ns: ClassWeights,
}

impl HybridWeights {
    pub fn new(sis: ClassWeights, ns: ClassWeights) -> Result<Self, HybridError> {
        sis.validate()?;
        ns.validate()?;
        Ok(HybridWeights { sis, ns })
    }

    pub fn forest_only() -> Self {
        HybridWeights {
            sis: ClassWeights::forest_only(),
            ns: ClassWeights::forest_only(),
        }
    }

    pub fn for_class(&self, class: SpatialClass) -> &ClassWeights {
        match class {
            SpatialClass::Sis => &self.sis,
            SpatialClass::Ns => &self.ns,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionRecord {
    pub section_id: u32,
    pub c_time: NaiveDateTime,
    pub ftt_s: f64,
    /// PTT on normal sections, DTT on signalized ones.
    pub probe_s: Option<f64>,
    pub att_s: f64,
    pub bat: NaiveDateTime,
    pub used_fallback: bool,
    pub preceding_trip_id: Option<String>,
    pub preceding_start_time: Option<NaiveDateTime>,
    pub diagnostic: Option<String>,
}

/// PRT = length / running speed.
pub fn preceding_running_time(traversal: &SectionTraversal, section: &RouteSection) -> Result<f64, HybridError> {
    if traversal.section_id != section.section_id {
        return Err(HybridError::SectionMismatch {
            expected: section.section_id,
            found: traversal.section_id,
        });
    }
    let rs = traversal.running_speed_mps;
    if !(rs.is_finite() && rs > 0.0) {
        return Err(HybridError::DegenerateProbe {
            section_id: section.section_id,
            speed: rs,
        });
    }
    Ok(section.length_m / rs)
}

/// DTT = PRT + standard dwell + average intersection delay.
pub fn dynamic_travel_time(prt_s: f64, section: &RouteSection) -> Result<f64, HybridError> {
    if section.spatial_class() != SpatialClass::Sis {
        return Err(HybridError::NotSignalized(section.section_id));
    }
    Ok(prt_s + section.standard_dwell_s() + section.intersection_delay_s)
}

/// The probe value a preceding traversal contributes on `section`.
pub fn probe_travel_time(traversal: &SectionTraversal, section: &RouteSection) -> Result<f64, HybridError> {
    match section.spatial_class() {
        SpatialClass::Ns => {
            if traversal.section_id != section.section_id {
                return Err(HybridError::SectionMismatch {
                    expected: section.section_id,
                    found: traversal.section_id,
                });
            }
            Ok(traversal.travel_time_s)
        }
        SpatialClass::Sis => dynamic_travel_time(preceding_running_time(traversal, section)?, section),
    }
}

/// (ATT, used_fallback).
pub fn adjusted_travel_time(
    ftt_s: f64,
    probe_s: Option<f64>,
    section: &RouteSection,
    weights: &HybridWeights,
) -> Result<(f64, bool), HybridError> {
    if !(ftt_s.is_finite() && ftt_s > 0.0) {
        return Err(HybridError::NonPositiveForecast(ftt_s));
    }
    match probe_s {
        Some(p) => {
            let w = weights.for_class(section.spatial_class());
            Ok((w.w1 * ftt_s + w.w2 * p, false))
        }
        None => Ok((ftt_s, true)),
    }
}

/// BAT = C_time + ATT.
pub fn bus_arrival_time(c_time: NaiveDateTime, att_s: f64) -> NaiveDateTime {
    clock::add_seconds(c_time, att_s)
}

/// Read-only inputs shared by every estimate.
#[derive(Debug, Clone, Copy)]
pub struct Estimator<'a> {
    pub forest: &'a BoostedForest,
    pub weights: &'a HybridWeights,
    pub store: &'a PrecedingTripStore,
}

impl Estimator<'_> {
    /// Estimate one section starting at `c_time`, looking up probes that
    /// started strictly before `clock_time`.
    pub fn estimate_section(
        &self,
        section: &RouteSection,
        c_time: NaiveDateTime,
        clock_time: NaiveDateTime,
    ) -> PredictionRecord {
        let mut notes: Vec<String> = Vec::new();
        let raw_ftt = match self.forest.predict(&FeatureVector::at(c_time, section)) {
            Ok(v) => v,
            Err(e) => {
                notes.push(e.to_string());
                f64::NAN
            }
        };
        let ftt_s = if raw_ftt.is_finite() && raw_ftt > 0.0 {
            raw_ftt
        } else {
            notes.push(format!("forecast {raw_ftt} s raised to {MIN_TRAVEL_TIME_S} s"));
            MIN_TRAVEL_TIME_S
        };

        let preceding = self.store.select_preceding(section.section_id, clock_time);
        let probe_s = preceding.and_then(|p| match probe_travel_time(p, section) {
            Ok(v) if v.is_finite() && v > 0.0 => Some(v),
            Ok(v) => {
                notes.push(format!("probe from {} gave {v} s; ignored", p.trip_id));
                None
            }
            Err(e) => {
                notes.push(format!("probe from {} ignored: {e}", p.trip_id));
                None
            }
        });
        let (att_s, used_fallback) =
            adjusted_travel_time(ftt_s, probe_s, section, self.weights).expect("forecast is positive");
        let used = preceding.filter(|_| probe_s.is_some());
        PredictionRecord {
            section_id: section.section_id,
            c_time,
            ftt_s,
            probe_s,
            att_s,
            bat: bus_arrival_time(c_time, att_s),
            used_fallback,
            preceding_trip_id: used.map(|p| p.trip_id.clone()),
            preceding_start_time: used.map(|p| p.section_start_time),
            diagnostic: (!notes.is_empty()).then(|| notes.join("; ")),
        }
    }
}

/// Chain estimates from `start_section_id` to the terminus. Each section
/// starts at the previous arrival estimate; probes for every section come
/// from before the real clock time `c_time`.
pub fn predict_downstream(
    route: &Route,
    start_section_id: u32,
    c_time: NaiveDateTime,
    forest: &BoostedForest,
    weights: &HybridWeights,
    store: &PrecedingTripStore,
) -> Result<Vec<PredictionRecord>, HybridError> {
    if route.section(start_section_id).is_none() {
        return Err(HybridError::UnknownSection(start_section_id));
    }
    let est = Estimator { forest, weights, store };
    let mut out: Vec<PredictionRecord> = Vec::new();
    for section in &route.sections()[start_section_id as usize - 1..] {
        let start = out.last().map_or(c_time, |r| r.bat);
        out.push(est.estimate_section(section, start, c_time));
    }
    Ok(out)
}

pub const PREDICTION_HEADER: [&str; 10] = [
    "section_id",
    "c_time",
    "ftt_s",
    "probe_s",
    "att_s",
    "bat",
    "used_fallback",
    "preceding_trip_id",
    "preceding_start_time",
    "diagnostic",
];

pub fn write_predictions_csv<W: Write>(records: &[PredictionRecord], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PREDICTION_HEADER)?;
    for r in records {
        w.write_record([
            r.section_id.to_string(),
            clock::format_iso(r.c_time),
            r.ftt_s.to_string(),
            r.probe_s.map(|v| v.to_string()).unwrap_or_default(),
            r.att_s.to_string(),
            clock::format_iso(r.bat),
            r.used_fallback.to_string(),
            r.preceding_trip_id.clone().unwrap_or_default(),
            r.preceding_start_time.map(clock::format_iso).unwrap_or_default(),
            r.diagnostic.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

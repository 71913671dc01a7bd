//! Fusion weights from held-out data.
//!
//! Per spatial class, `x1` is the forest's coefficient of determination on
//! the calibration split and `x2` is the Pearson correlation between each
//! traversal's travel time and that of the nearest preceding traversal of
//! the same section within the probe window, pooled over the class's
//! sections. Weights are `w1 = x1/(x1+x2)` and `w2 = x2/(x1+x2)`.
//!
//! The report is JSON:
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "window_s": 1800.0,
//!   "splits": { "train": { "trips": 420, "rows": 3780, "first_start": "...", "last_start": "..." },
//!               "calibration": { "...": "..." }, "test": { "...": "..." } },
//!   "classes": [ { "class": "SIS", "x1": 0.42, "x2": 0.61, "w1": 0.41, "w2": 0.59,
//!                  "rows": 360, "probe_pairs": 352, "mean_actual_s": 140.2,
//!                  "mean_current_s": 140.5, "mean_preceding_s": 139.9 }, "..." ],
//!   "dwell_median_s": { "1": 0.0, "2": 50.0 },
//!   "standard_dwell_s": { "1": 0.0, "2": 3.0 },
//!   "diagnostics": []
//! }
//! ```

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::avl_ingest::{median_dwell_by_section, SectionTraversal};
use crate::boosted_trees::{BoostedForest, FeatureVector};
use crate::clock;
use crate::hybrid_estimator::{ClassWeights, HybridWeights, PrecedingTripStore};
use crate::route_model::{Route, SpatialClass};

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StatsError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {min} values, got {n}")]
    TooShort { n: usize, min: usize },
    #[error("non-finite value in series")]
    NonFinite,
    #[error("degenerate targets")]
    DegenerateTargets,
    #[error("degenerate series")]
    DegenerateSeries,
    #[error("weights undefined: x1 + x2 = 0")]
    ZeroWeightSum,
}

fn check_pair(a: &[f64], b: &[f64], min: usize) -> Result<(), StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < min {
        return Err(StatsError::TooShort { n: a.len(), min });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

fn constant(v: &[f64]) -> bool {
    v.iter().all(|x| *x == v[0])
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// 1 − Σ(p − f)² / Σ(p − μp)² with `p` the actuals.
pub fn r_squared(actual: &[f64], predicted: &[f64]) -> Result<f64, StatsError> {
    check_pair(actual, predicted, 1)?;
    if constant(actual) {
        return Err(StatsError::DegenerateTargets);
    }
    let mu = mean(actual);
    let ss_res: f64 = actual.iter().zip(predicted).map(|(p, f)| (p - f) * (p - f)).sum();
    let ss_tot: f64 = actual.iter().map(|p| (p - mu) * (p - mu)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Pearson product-moment correlation, computed in two passes.
pub fn pearson_correlation(current: &[f64], preceding: &[f64]) -> Result<f64, StatsError> {
    check_pair(current, preceding, 2)?;
    if constant(current) || constant(preceding) {
        return Err(StatsError::DegenerateSeries);
    }
    let (mc, mp) = (mean(current), mean(preceding));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (c, p) in current.iter().zip(preceding) {
        let (dc, dp) = (c - mc, p - mp);
        sxy += dc * dp;
        sxx += dc * dc;
        syy += dp * dp;
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// (w1, w2) = (x1, x2) / (x1 + x2).
pub fn compute_weights(x1: f64, x2: f64) -> Result<(f64, f64), StatsError> {
    if !(x1.is_finite() && x2.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let s = x1 + x2;
    if s == 0.0 {
        return Err(StatsError::ZeroWeightSum);
    }
    Ok((x1 / s, x2 / s))
}

/// Chronological split fractions by trip start time; the test split gets the rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub calibration: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train: 0.70,
            calibration: 0.15,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<(), String> {
        let ok = self.train > 0.0 && self.calibration >= 0.0 && self.train + self.calibration <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(format!(
                "split fractions train={} calibration={} must be positive and sum to at most 1",
                self.train, self.calibration
            ))
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<SectionTraversal>,
    pub calibration: Vec<SectionTraversal>,
    pub test: Vec<SectionTraversal>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRange {
    pub trips: usize,
    pub rows: usize,
    pub first_start: Option<String>,
    pub last_start: Option<String>,
}

impl SplitRange {
    pub fn of(rows: &[SectionTraversal]) -> Self {
        let trips: BTreeSet<&str> = rows.iter().map(|t| t.trip_id.as_str()).collect();
        SplitRange {
            trips: trips.len(),
            rows: rows.len(),
            first_start: rows.iter().map(|t| t.section_start_time).min().map(clock::format_iso),
            last_start: rows.iter().map(|t| t.section_start_time).max().map(clock::format_iso),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSummary {
    pub train: SplitRange,
    pub calibration: SplitRange,
    pub test: SplitRange,
}

impl Splits {
    pub fn summary(&self) -> SplitSummary {
        SplitSummary {
            train: SplitRange::of(&self.train),
            calibration: SplitRange::of(&self.calibration),
            test: SplitRange::of(&self.test),
        }
    }
}

/// Split whole trips chronologically by their first section start.
pub fn split_by_trip(traversals: &[SectionTraversal], config: &SplitConfig) -> Splits {
    let mut trip_start: BTreeMap<&str, chrono::NaiveDateTime> = BTreeMap::new();
    for t in traversals {
        trip_start
            .entry(t.trip_id.as_str())
            .and_modify(|s| *s = (*s).min(t.section_start_time))
            .or_insert(t.section_start_time);
    }
    let mut trips: Vec<(chrono::NaiveDateTime, &str)> = trip_start.iter().map(|(id, s)| (*s, *id)).collect();
    trips.sort();
    let n = trips.len() as f64;
    let n_train = (n * config.train).round() as usize;
    let n_cal = ((n * (config.train + config.calibration)).round() as usize).max(n_train) - n_train;
    let bucket: BTreeMap<&str, usize> = trips
        .iter()
        .enumerate()
        .map(|(k, (_, id))| {
            (
                *id,
                if k < n_train {
                    0
                } else if k < n_train + n_cal {
                    1
                } else {
                    2
                },
            )
        })
        .collect();
    let mut splits = Splits::default();
    for t in traversals {
        match bucket[t.trip_id.as_str()] {
            0 => splits.train.push(t.clone()),
            1 => splits.calibration.push(t.clone()),
            _ => splits.test.push(t.clone()),
        }
    }
    splits
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassCalibration {
    pub class: SpatialClass,
    pub x1: Option<f64>,
    pub x2: Option<f64>,
    pub w1: f64,
    pub w2: f64,
    pub rows: usize,
    pub probe_pairs: usize,
    pub mean_actual_s: Option<f64>,
    pub mean_current_s: Option<f64>,
    pub mean_preceding_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationReport {
    pub format_version: u32,
    pub window_s: f64,
    pub splits: SplitSummary,
    pub classes: Vec<ClassCalibration>,
    /// Median observed dwell per section on the training split.
    pub dwell_median_s: BTreeMap<u32, f64>,
    /// Standard dwell per section used for the dynamic travel time.
    pub standard_dwell_s: BTreeMap<u32, f64>,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("malformed calibration report: {0}")]
    Malformed(String),
    #[error("version mismatch: report format_version {found}, supported {expected}")]
    VersionMismatch { found: u64, expected: u32 },
}

impl CalibrationReport {
    pub fn class(&self, class: SpatialClass) -> Option<&ClassCalibration> {
        self.classes.iter().find(|c| c.class == class)
    }

    pub fn weights(&self) -> HybridWeights {
        let pick = |class| {
            self.class(class).map_or(ClassWeights::forest_only(), |c| ClassWeights {
                x1: c.x1.unwrap_or(0.0),
                x2: c.x2.unwrap_or(0.0),
                w1: c.w1,
                w2: c.w2,
            })
        };
        HybridWeights {
            sis: pick(SpatialClass::Sis),
            ns: pick(SpatialClass::Ns),
        }
    }

    /// `route` with the report's standard dwell filled in where unset.
    pub fn apply_to(&self, route: &Route) -> Route {
        route.with_calibrated_dwell(&self.standard_dwell_s)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        #[derive(Deserialize)]
        struct Probe {
            format_version: u64,
        }
        let probe: Probe = serde_json::from_str(text).map_err(|e| ReportError::Malformed(e.to_string()))?;
        if probe.format_version != REPORT_FORMAT_VERSION as u64 {
            return Err(ReportError::VersionMismatch {
                found: probe.format_version,
                expected: REPORT_FORMAT_VERSION,
            });
        }
        let report: Self = serde_json::from_str(text).map_err(|e| ReportError::Malformed(e.to_string()))?;
        HybridWeights::new(report.weights().sis, report.weights().ns)
            .map_err(|e| ReportError::Malformed(e.to_string()))?;
        Ok(report)
    }
}

/// Standard dwell per section from training traversals: the median observed
/// dwell, less the average signal delay on signalized sections (floored at
/// 0). Buses at a stop before a signal queue inside the stop's geofence, so
/// the observed stationary time already contains the signal wait that the
/// dynamic travel time adds separately.
pub fn standard_dwell(train: &[SectionTraversal], route: &Route) -> (BTreeMap<u32, f64>, BTreeMap<u32, f64>) {
    let medians = median_dwell_by_section(train);
    let standard = medians
        .iter()
        .filter_map(|(&id, &m)| {
            let section = route.section(id)?;
            let net = if section.has_signalized_intersection {
                (m - section.intersection_delay_s).max(0.0)
            } else {
                m
            };
            Some((id, net))
        })
        .collect();
    (medians, standard)
}

/// Per-class statistics and weights.
///
/// `calibration` rows are scored against `forest`; their probes come from
/// `probe_pool` (normally train plus calibration traversals).
pub fn calibrate(
    calibration: &[SectionTraversal],
    probe_pool: &[SectionTraversal],
    forest: &BoostedForest,
    route: &Route,
    window_s: f64,
) -> CalibrationReport {
    let store = PrecedingTripStore::from_traversals(window_s, probe_pool);
    let mut diagnostics = Vec::new();
    let mut classes = Vec::new();
    for class in SpatialClass::ALL {
        let mut actual = Vec::new();
        let mut predicted = Vec::new();
        let mut current = Vec::new();
        let mut preceding = Vec::new();
        for t in calibration {
            let Some(section) = route.section(t.section_id) else {
                continue;
            };
            if section.spatial_class() != class {
                continue;
            }
            match forest.predict(&FeatureVector::from_traversal(t)) {
                Ok(f) => {
                    actual.push(t.travel_time_s);
                    predicted.push(f);
                }
                Err(e) => diagnostics.push(format!("{} section {}: {e}", t.trip_id, t.section_id)),
            }
            if let Some(p) = store.select_preceding(t.section_id, t.section_start_time) {
                current.push(t.travel_time_s);
                preceding.push(p.travel_time_s);
            }
        }
        let x1 = match r_squared(&actual, &predicted) {
            Ok(v) => Some(v),
            Err(e) => {
                diagnostics.push(format!("{class}: x1 unavailable ({e})"));
                None
            }
        };
        let x2 = if current.len() < 2 {
            diagnostics.push(format!("{class}: fewer than 2 probe pairs; x2 unavailable"));
            None
        } else {
            match pearson_correlation(&current, &preceding) {
                Ok(v) => Some(v),
                Err(e) => {
                    diagnostics.push(format!("{class}: x2 unavailable ({e})"));
                    None
                }
            }
        };
        let weights = match (x1, x2) {
            (Some(a), Some(b)) => match ClassWeights::from_statistics(a, b) {
                Ok((w, warning)) => {
                    if let Some(m) = warning {
                        log::warn!("{class}: {m}");
                        diagnostics.push(format!("{class}: {m}"));
                    }
                    w
                }
                Err(e) => {
                    diagnostics.push(format!("{class}: {e}"));
                    ClassWeights::forest_only()
                }
            },
            _ => ClassWeights::forest_only(),
        };
        let avg = |v: &[f64]| (!v.is_empty()).then(|| mean(v));
        classes.push(ClassCalibration {
            class,
            x1,
            x2,
            w1: weights.w1,
            w2: weights.w2,
            rows: actual.len(),
            probe_pairs: current.len(),
            mean_actual_s: avg(&actual),
            mean_current_s: avg(&current),
            mean_preceding_s: avg(&preceding),
        });
    }
    CalibrationReport {
        format_version: REPORT_FORMAT_VERSION,
        window_s,
        splits: SplitSummary::default(),
        classes,
        dwell_median_s: BTreeMap::new(),
        standard_dwell_s: BTreeMap::new(),
        diagnostics,
    }
}

//! End-to-end stages over a full traversal table.
//!
//! Every stage re-derives the same chronological split from the table, so
//! train, calibrate and replay can run as separate processes on one file.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::avl_ingest::{IngestConfig, SectionTraversal};
use crate::boosted_trees::{fit_with_history, BoostError, BoostedForest, FeatureVector, FitOutcome, TrainConfig};
use crate::calibration::{calibrate, split_by_trip, standard_dwell, CalibrationReport, SplitConfig, Splits};
use crate::hybrid_estimator::DEFAULT_WINDOW_S;
use crate::replay_eval::{replay, ReplayResult};
use crate::route_model::Route;

/// Settings for every stage. All fields have defaults; a config file only
/// needs the values it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Route config; the bundled reference route when absent.
    pub route: Option<PathBuf>,
    /// Probe window in minutes.
    pub window_minutes: f64,
    pub split: SplitConfig,
    pub ingest: IngestConfig,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            route: None,
            window_minutes: DEFAULT_WINDOW_S / 60.0,
            split: SplitConfig::default(),
            ingest: IngestConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn window_s(&self) -> f64 {
        self.window_minutes * 60.0
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.window_minutes > 0.0 && self.window_minutes.is_finite()) {
            return Err(format!("window_minutes must be positive, got {}", self.window_minutes));
        }
        self.split.validate()?;
        self.train.validate().map_err(|e| e.to_string())
    }
}

pub fn training_rows(traversals: &[SectionTraversal]) -> Vec<(FeatureVector, f64)> {
    traversals
        .iter()
        .map(|t| (FeatureVector::from_traversal(t), t.travel_time_s))
        .collect()
}

pub fn split(traversals: &[SectionTraversal], config: &PipelineConfig) -> Splits {
    split_by_trip(traversals, &config.split)
}

/// Fit the forest on the training split.
pub fn train(traversals: &[SectionTraversal], config: &PipelineConfig) -> Result<FitOutcome, BoostError> {
    let splits = split(traversals, config);
    fit_with_history(&training_rows(&splits.train), &config.train)
}

/// Weights from the calibration split, standard dwell from the training split.
pub fn calibrate_all(
    traversals: &[SectionTraversal],
    forest: &BoostedForest,
    route: &Route,
    config: &PipelineConfig,
) -> CalibrationReport {
    let splits = split(traversals, config);
    let pool: Vec<SectionTraversal> = splits.train.iter().chain(&splits.calibration).cloned().collect();
    let mut report = calibrate(&splits.calibration, &pool, forest, route, config.window_s());
    let (medians, standard) = standard_dwell(&splits.train, route);
    report.dwell_median_s = medians;
    report.standard_dwell_s = standard;
    report.splits = splits.summary();
    report
}

/// Replay the test split with train and calibration traversals as history.
pub fn replay_test(
    traversals: &[SectionTraversal],
    forest: &BoostedForest,
    report: &CalibrationReport,
    route: &Route,
    config: &PipelineConfig,
) -> ReplayResult {
    let splits = split(traversals, config);
    let history: Vec<SectionTraversal> = splits.train.iter().chain(&splits.calibration).cloned().collect();
    let route = report.apply_to(route);
    replay(
        &splits.test,
        &history,
        forest,
        &report.weights(),
        &route,
        config.window_s(),
    )
}

//! Bus arrival time estimation from raw AVL logs.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! * [`route_model`]: stops, sections and per-section constants.
//! * [`avl_ingest`]: parsing, cleaning, trip segmentation and stop matching,
//!   producing section traversals.
//! * [`boosted_trees`]: the gradient-boosted travel-time forecaster.
//! * [`hybrid_estimator`]: fusion of the forecast with preceding-trip probes.
//! * [`calibration`]: fusion weights from a held-out split.
//! * [`replay_eval`]: leakage-free historical replay and reports.
//! * [`pipeline`]: splits and end-to-end orchestration used by the CLI.

pub mod avl_ingest;
pub mod boosted_trees;
pub mod calibration;
pub mod clock;
pub mod geo;
pub mod hybrid_estimator;
pub mod pipeline;
pub mod replay_eval;
pub mod route_model;
pub mod synthetic;

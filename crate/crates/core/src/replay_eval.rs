//! Time-ordered replay of held-out traversals.
//!
//! History and test traversals are merged into one event stream ordered by
//! (section start, trip id, section id). Each test traversal is predicted at
//! its own start time, using only probes that started strictly earlier, and
//! is then added to the probe store. History events only feed the store.
//!
//! Scores are kept per spatial class, per model (forest alone or hybrid) and
//! per stratum: `probe` rows had a preceding trip in the window, `fallback`
//! rows did not, `all` is both. The probe stratum is the headline.
//!
//! [`emit_report`] writes three CSV files:
//!
//! * `sections.csv`: `trip_id, section_id, class, section_start_time,
//!   actual_s, ftt_s, hybrid_att_s, used_fallback, probe_s,
//!   preceding_trip_id, preceding_start_time`
//! * `trips.csv`: `trip_id, sections, fallback_sections, actual_total_s,
//!   forest_total_s, hybrid_total_s, forest_mean_abs_error_s,
//!   hybrid_mean_abs_error_s`
//! * `summary.csv`: `class, model, stratum, n, r2, mae_s` (class `ALL`
//!   pools both classes; `r2` is empty when undefined)

use std::fmt;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDateTime;

use crate::avl_ingest::SectionTraversal;
use crate::boosted_trees::BoostedForest;
use crate::calibration::r_squared;
use crate::clock;
use crate::hybrid_estimator::{Estimator, HybridWeights, PrecedingTripStore};
use crate::route_model::{Route, SpatialClass};

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayRow {
    pub trip_id: String,
    pub section_id: u32,
    pub class: SpatialClass,
    pub section_start_time: NaiveDateTime,
    pub actual_s: f64,
    pub ftt_s: f64,
    pub hybrid_att_s: f64,
    pub used_fallback: bool,
    pub probe_s: Option<f64>,
    pub preceding_trip_id: Option<String>,
    pub preceding_start_time: Option<NaiveDateTime>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Model {
    Forest,
    Hybrid,
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Forest => "forest",
            Model::Hybrid => "hybrid",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stratum {
    Probe,
    Fallback,
    All,
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stratum::Probe => "probe",
            Stratum::Fallback => "fallback",
            Stratum::All => "all",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    /// `None` pools both classes.
    pub class: Option<SpatialClass>,
    pub model: Model,
    pub stratum: Stratum,
    pub n: usize,
    pub r2: Option<f64>,
    pub mae_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripTotals {
    pub trip_id: String,
    pub sections: usize,
    pub fallback_sections: usize,
    pub actual_total_s: f64,
    pub forest_total_s: f64,
    pub hybrid_total_s: f64,
    pub forest_mean_abs_error_s: f64,
    pub hybrid_mean_abs_error_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayResult {
    pub rows: Vec<ReplayRow>,
    pub summary: Vec<SummaryRow>,
    pub diagnostics: Vec<String>,
}

impl ReplayResult {
    pub fn summary_for(&self, class: Option<SpatialClass>, model: Model, stratum: Stratum) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|s| s.class == class && s.model == model && s.stratum == stratum)
    }
}

/// Replay `test` against a store primed by `history`.
pub fn replay(
    test: &[SectionTraversal],
    history: &[SectionTraversal],
    forest: &BoostedForest,
    weights: &HybridWeights,
    route: &Route,
    window_s: f64,
) -> ReplayResult {
    let mut events: Vec<(&SectionTraversal, bool)> = history
        .iter()
        .map(|t| (t, false))
        .chain(test.iter().map(|t| (t, true)))
        .collect();
    events.sort_by(|a, b| {
        (a.0.section_start_time, &a.0.trip_id, a.0.section_id, a.1).cmp(&(
            b.0.section_start_time,
            &b.0.trip_id,
            b.0.section_id,
            b.1,
        ))
    });

    let mut store = PrecedingTripStore::new(window_s);
    let mut result = ReplayResult::default();
    for (t, is_test) in events {
        if is_test {
            match route.section(t.section_id) {
                Some(section) => {
                    let est = Estimator {
                        forest,
                        weights,
                        store: &store,
                    };
                    let rec = est.estimate_section(section, t.section_start_time, t.section_start_time);
                    if let Some(d) = &rec.diagnostic {
                        result
                            .diagnostics
                            .push(format!("{} section {}: {d}", t.trip_id, t.section_id));
                    }
                    result.rows.push(ReplayRow {
                        trip_id: t.trip_id.clone(),
                        section_id: t.section_id,
                        class: section.spatial_class(),
                        section_start_time: t.section_start_time,
                        actual_s: t.travel_time_s,
                        ftt_s: rec.ftt_s,
                        hybrid_att_s: rec.att_s,
                        used_fallback: rec.used_fallback,
                        probe_s: rec.probe_s,
                        preceding_trip_id: rec.preceding_trip_id,
                        preceding_start_time: rec.preceding_start_time,
                    });
                }
                None => result.diagnostics.push(format!(
                    "{} section {}: not on route {}",
                    t.trip_id, t.section_id, route.route_id
                )),
            }
        }
        store.insert(t.clone());
    }
    result.summary = summarize(&result.rows);
    result
}

/// Scores for every (class, model, stratum) with at least one row.
pub fn summarize(rows: &[ReplayRow]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    let classes = [Some(SpatialClass::Sis), Some(SpatialClass::Ns), None];
    for class in classes {
        for model in [Model::Forest, Model::Hybrid] {
            for stratum in [Stratum::Probe, Stratum::Fallback, Stratum::All] {
                let chosen: Vec<&ReplayRow> = rows
                    .iter()
                    .filter(|r| class.is_none_or(|c| r.class == c))
                    .filter(|r| match stratum {
                        Stratum::Probe => !r.used_fallback,
                        Stratum::Fallback => r.used_fallback,
                        Stratum::All => true,
                    })
                    .collect();
                if chosen.is_empty() {
                    continue;
                }
                let actual: Vec<f64> = chosen.iter().map(|r| r.actual_s).collect();
                let predicted: Vec<f64> = chosen
                    .iter()
                    .map(|r| match model {
                        Model::Forest => r.ftt_s,
                        Model::Hybrid => r.hybrid_att_s,
                    })
                    .collect();
                let mae_s =
                    actual.iter().zip(&predicted).map(|(a, p)| (a - p).abs()).sum::<f64>() / actual.len() as f64;
                out.push(SummaryRow {
                    class,
                    model,
                    stratum,
                    n: chosen.len(),
                    r2: r_squared(&actual, &predicted).ok(),
                    mae_s,
                });
            }
        }
    }
    out
}

/// Section values summed per trip, trips ordered by first section start.
pub fn per_trip_totals(result: &ReplayResult) -> Vec<TripTotals> {
    let mut order: Vec<(NaiveDateTime, &str)> = Vec::new();
    let mut groups: std::collections::BTreeMap<&str, Vec<&ReplayRow>> = Default::default();
    for r in &result.rows {
        let g = groups.entry(r.trip_id.as_str()).or_default();
        if g.is_empty() {
            order.push((r.section_start_time, r.trip_id.as_str()));
        }
        g.push(r);
    }
    for (start, id) in order.iter_mut() {
        *start = groups[*id]
            .iter()
            .map(|r| r.section_start_time)
            .min()
            .expect("non-empty group");
    }
    order.sort();
    order
        .into_iter()
        .map(|(_, id)| {
            let mut rows = groups[id].clone();
            rows.sort_by_key(|r| r.section_id);
            let n = rows.len() as f64;
            TripTotals {
                trip_id: id.to_string(),
                sections: rows.len(),
                fallback_sections: rows.iter().filter(|r| r.used_fallback).count(),
                actual_total_s: rows.iter().map(|r| r.actual_s).sum(),
                forest_total_s: rows.iter().map(|r| r.ftt_s).sum(),
                hybrid_total_s: rows.iter().map(|r| r.hybrid_att_s).sum(),
                forest_mean_abs_error_s: rows.iter().map(|r| (r.actual_s - r.ftt_s).abs()).sum::<f64>() / n,
                hybrid_mean_abs_error_s: rows.iter().map(|r| (r.actual_s - r.hybrid_att_s).abs()).sum::<f64>() / n,
            }
        })
        .collect()
}

pub const SECTIONS_HEADER: [&str; 11] = [
    "trip_id",
    "section_id",
    "class",
    "section_start_time",
    "actual_s",
    "ftt_s",
    "hybrid_att_s",
    "used_fallback",
    "probe_s",
    "preceding_trip_id",
    "preceding_start_time",
];

pub const TRIPS_HEADER: [&str; 8] = [
    "trip_id",
    "sections",
    "fallback_sections",
    "actual_total_s",
    "forest_total_s",
    "hybrid_total_s",
    "forest_mean_abs_error_s",
    "hybrid_mean_abs_error_s",
];

pub const SUMMARY_HEADER: [&str; 6] = ["class", "model", "stratum", "n", "r2", "mae_s"];

pub fn write_sections_csv<W: Write>(result: &ReplayResult, writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SECTIONS_HEADER)?;
    for r in &result.rows {
        w.write_record([
            r.trip_id.clone(),
            r.section_id.to_string(),
            r.class.to_string(),
            clock::format_iso(r.section_start_time),
            r.actual_s.to_string(),
            r.ftt_s.to_string(),
            r.hybrid_att_s.to_string(),
            r.used_fallback.to_string(),
            r.probe_s.map(|v| v.to_string()).unwrap_or_default(),
            r.preceding_trip_id.clone().unwrap_or_default(),
            r.preceding_start_time.map(clock::format_iso).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trips_csv<W: Write>(trips: &[TripTotals], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRIPS_HEADER)?;
    for t in trips {
        w.write_record([
            t.trip_id.clone(),
            t.sections.to_string(),
            t.fallback_sections.to_string(),
            t.actual_total_s.to_string(),
            t.forest_total_s.to_string(),
            t.hybrid_total_s.to_string(),
            t.forest_mean_abs_error_s.to_string(),
            t.hybrid_mean_abs_error_s.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(summary: &[SummaryRow], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SUMMARY_HEADER)?;
    for s in summary {
        w.write_record([
            s.class.map_or("ALL".to_string(), |c| c.to_string()),
            s.model.to_string(),
            s.stratum.to_string(),
            s.n.to_string(),
            s.r2.map(|v| v.to_string()).unwrap_or_default(),
            s.mae_s.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Write `sections.csv`, `trips.csv` and `summary.csv` into `dir`.
pub fn emit_report(result: &ReplayResult, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let open = |name: &str| std::fs::File::create(dir.join(name)).map(std::io::BufWriter::new);
    write_sections_csv(result, open("sections.csv")?)?;
    write_trips_csv(&per_trip_totals(result), open("trips.csv")?)?;
    write_summary_csv(&result.summary, open("summary.csv")?)?;
    Ok(())
}

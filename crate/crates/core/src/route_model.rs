//! Static route topology: ordered stops, stop-to-stop sections and their
//! per-section constants, loaded from a TOML route config.
//!
//! The config is one `[[section]]` table per section, in travel order. Each
//! record carries the full section descriptor plus both stop points:
//!
//! ```toml
//! format_version = 1
//! route_id = "TBS-KY"
//! name = "Tumkur Bus Stand - Kyathasandra"
//!
//! [[section]]
//! section_id = 1
//! length_m = 600.0
//! lup = "CBD"                      # CBD | IC | ISU | OSU
//! signalized_intersection = false
//! intersection_delay_s = 0.0       # must be 0 unless signalized
//! # dwell_time_s = 12.0            # optional; calibrated from data when absent
//! start_stop = { stop_id = 1, name = "TBS", lat = 13.34286, lon = 77.09886 }
//! end_stop = { stop_id = 2, name = "CTC", lat = 13.34239, lon = 77.104385 }
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{BoundingBox, GeoPoint};

pub const ROUTE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum RouteError {
    #[error("malformed route config: {0}")]
    Malformed(String),
    #[error("unsupported route format_version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("route has no sections")]
    Empty,
    #[error("non-contiguous sections: expected section_id {expected}, found {found}")]
    NonContiguous { expected: u32, found: u32 },
    #[error("section {section}: start stop does not match the previous section's end stop")]
    Disconnected { section: u32 },
    #[error("section {section}: unknown LUP token {token:?}")]
    UnknownLup { section: u32, token: String },
    #[error("section {section}: intersection delay on a section without a signalized intersection")]
    DelayWithoutIntersection { section: u32 },
    #[error("section {section}: invalid {field}: {reason}")]
    InvalidValue {
        section: u32,
        field: &'static str,
        reason: String,
    },
    #[error("stop_id {0} appears more than once on the route")]
    DuplicateStop(u32),
    #[error("io error: {0}")]
    Io(String),
}

/// Land-use pattern of the area a section runs through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LandUsePattern {
    /// Central business district.
    #[serde(rename = "CBD")]
    Cbd,
    /// Inner city.
    #[serde(rename = "IC")]
    Ic,
    /// Inner suburban.
    #[serde(rename = "ISU")]
    Isu,
    /// Outer suburban.
    #[serde(rename = "OSU")]
    Osu,
}

impl LandUsePattern {
    pub const ALL: [LandUsePattern; 4] = [Self::Cbd, Self::Ic, Self::Isu, Self::Osu];

    /// Integer code used as a model feature (0..=3).
    pub fn code(self) -> u8 {
        match self {
            Self::Cbd => 0,
            Self::Ic => 1,
            Self::Isu => 2,
            Self::Osu => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Cbd => "CBD",
            Self::Ic => "IC",
            Self::Isu => "ISU",
            Self::Osu => "OSU",
        }
    }
}

impl fmt::Display for LandUsePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown land-use pattern {0:?}")]
pub struct UnknownLup(pub String);

impl FromStr for LandUsePattern {
    type Err = UnknownLup;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "CBD" => Ok(Self::Cbd),
            "IC" => Ok(Self::Ic),
            "ISU" => Ok(Self::Isu),
            "OSU" => Ok(Self::Osu),
            other => Err(UnknownLup(other.to_string())),
        }
    }
}

/// Spatial class of a section: with or without a signalized intersection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SpatialClass {
    #[serde(rename = "NS")]
    Ns,
    #[serde(rename = "SIS")]
    Sis,
}

impl SpatialClass {
    pub const ALL: [SpatialClass; 2] = [Self::Sis, Self::Ns];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ns => "NS",
            Self::Sis => "SIS",
        }
    }
}

impl fmt::Display for SpatialClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusStop {
    pub stop_id: u32,
    pub name: String,
    #[serde(rename = "lat")]
    pub latitude: f64,
    #[serde(rename = "lon")]
    pub longitude: f64,
}

impl BusStop {
    pub fn point(&self) -> GeoPoint {
        GeoPoint::new(self.latitude, self.longitude)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteSection {
    pub section_id: u32,
    pub start_stop: BusStop,
    pub end_stop: BusStop,
    pub length_m: f64,
    pub lup: LandUsePattern,
    pub has_signalized_intersection: bool,
    pub intersection_delay_s: f64,
    /// Standard dwell at the start stop. `None` until configured or calibrated.
    pub dwell_time_s: Option<f64>,
}

impl RouteSection {
    pub fn spatial_class(&self) -> SpatialClass {
        spatial_class(self)
    }

    /// Standard dwell, 0 when neither configured nor calibrated.
    pub fn standard_dwell_s(&self) -> f64 {
        self.dwell_time_s.unwrap_or(0.0)
    }
}

/// SIS iff the section has a signalized intersection.
pub fn spatial_class(section: &RouteSection) -> SpatialClass {
    if section.has_signalized_intersection {
        SpatialClass::Sis
    } else {
        SpatialClass::Ns
    }
}

/// An ordered, validated list of sections. Immutable once loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub route_id: String,
    pub name: String,
    sections: Vec<RouteSection>,
}

impl Route {
    pub fn sections(&self) -> &[RouteSection] {
        &self.sections
    }

    pub fn len(&self) -> usize {
        self.sections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }

    pub fn section(&self, section_id: u32) -> Option<&RouteSection> {
        let idx = (section_id as usize).checked_sub(1)?;
        self.sections.get(idx)
    }

    pub fn total_length_m(&self) -> f64 {
        self.sections.iter().map(|s| s.length_m).sum()
    }

    /// Stops in travel order: origin, every intermediate stop, terminus.
    pub fn stops(&self) -> Vec<&BusStop> {
        let mut stops: Vec<&BusStop> = self.sections.iter().map(|s| &s.start_stop).collect();
        if let Some(last) = self.sections.last() {
            stops.push(&last.end_stop);
        }
        stops
    }

    pub fn bounding_box(&self) -> BoundingBox {
        BoundingBox::around(self.stops().iter().map(|s| s.point()))
    }

    /// Fill in standard dwell for sections whose config left it unset.
    /// Configured values are never overwritten.
    pub fn with_calibrated_dwell(&self, dwell_by_section: &BTreeMap<u32, f64>) -> Route {
        let mut route = self.clone();
        for section in &mut route.sections {
            if section.dwell_time_s.is_none() {
                section.dwell_time_s = dwell_by_section.get(&section.section_id).copied();
            }
        }
        route
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Route, RouteError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| RouteError::Io(format!("{}: {e}", path.as_ref().display())))?;
        load_route(&text)
    }

    /// Serialize back to the config format accepted by [`load_route`].
    pub fn to_config_string(&self) -> String {
        let doc = RouteDocument {
            format_version: ROUTE_FORMAT_VERSION,
            route_id: self.route_id.clone(),
            name: self.name.clone(),
            section: self.sections.iter().map(SectionRecord::from).collect(),
        };
        toml::to_string(&doc).expect("route config serializes")
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RouteDocument {
    format_version: u32,
    route_id: String,
    #[serde(default)]
    name: String,
    #[serde(default)]
    section: Vec<SectionRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SectionRecord {
    section_id: u32,
    length_m: f64,
    lup: String,
    signalized_intersection: bool,
    #[serde(default)]
    intersection_delay_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dwell_time_s: Option<f64>,
    start_stop: BusStop,
    end_stop: BusStop,
}

impl From<&RouteSection> for SectionRecord {
    fn from(s: &RouteSection) -> Self {
        SectionRecord {
            section_id: s.section_id,
            length_m: s.length_m,
            lup: s.lup.as_str().to_string(),
            signalized_intersection: s.has_signalized_intersection,
            intersection_delay_s: s.intersection_delay_s,
            dwell_time_s: s.dwell_time_s,
            start_stop: s.start_stop.clone(),
            end_stop: s.end_stop.clone(),
        }
    }
}

fn check_stop(section: u32, stop: &BusStop) -> Result<(), RouteError> {
    if !(-90.0..=90.0).contains(&stop.latitude) {
        return Err(RouteError::InvalidValue {
            section,
            field: "lat",
            reason: format!("{} outside [-90, 90]", stop.latitude),
        });
    }
    if !(-180.0..=180.0).contains(&stop.longitude) {
        return Err(RouteError::InvalidValue {
            section,
            field: "lon",
            reason: format!("{} outside [-180, 180]", stop.longitude),
        });
    }
    Ok(())
}

/// Parse and validate a route config document.
pub fn load_route(config_text: &str) -> Result<Route, RouteError> {
    let doc: RouteDocument = toml::from_str(config_text).map_err(|e| RouteError::Malformed(e.to_string()))?;
    if doc.format_version != ROUTE_FORMAT_VERSION {
        return Err(RouteError::VersionMismatch {
            found: doc.format_version,
            expected: ROUTE_FORMAT_VERSION,
        });
    }
    if doc.section.is_empty() {
        return Err(RouteError::Empty);
    }

    let mut sections: Vec<RouteSection> = Vec::with_capacity(doc.section.len());
    for (idx, rec) in doc.section.into_iter().enumerate() {
        let expected = idx as u32 + 1;
        let id = rec.section_id;
        if id != expected {
            return Err(RouteError::NonContiguous { expected, found: id });
        }
        let lup = rec.lup.parse::<LandUsePattern>().map_err(|e| RouteError::UnknownLup {
            section: id,
            token: e.0,
        })?;
        if !(rec.length_m.is_finite() && rec.length_m > 0.0) {
            return Err(RouteError::InvalidValue {
                section: id,
                field: "length_m",
                reason: format!("{} is not a positive length", rec.length_m),
            });
        }
        if !(rec.intersection_delay_s.is_finite() && rec.intersection_delay_s >= 0.0) {
            return Err(RouteError::InvalidValue {
                section: id,
                field: "intersection_delay_s",
                reason: format!("{} is negative or not finite", rec.intersection_delay_s),
            });
        }
        if rec.intersection_delay_s > 0.0 && !rec.signalized_intersection {
            return Err(RouteError::DelayWithoutIntersection { section: id });
        }
        if let Some(dwell) = rec.dwell_time_s {
            if !(dwell.is_finite() && dwell >= 0.0) {
                return Err(RouteError::InvalidValue {
                    section: id,
                    field: "dwell_time_s",
                    reason: format!("{dwell} is negative or not finite"),
                });
            }
        }
        check_stop(id, &rec.start_stop)?;
        check_stop(id, &rec.end_stop)?;
        if let Some(prev) = sections.last() {
            if prev.end_stop != rec.start_stop {
                return Err(RouteError::Disconnected { section: id });
            }
        }
        sections.push(RouteSection {
            section_id: id,
            start_stop: rec.start_stop,
            end_stop: rec.end_stop,
            length_m: rec.length_m,
            lup,
            has_signalized_intersection: rec.signalized_intersection,
            intersection_delay_s: rec.intersection_delay_s,
            dwell_time_s: rec.dwell_time_s,
        });
    }

    let route = Route {
        route_id: doc.route_id,
        name: doc.name,
        sections,
    };
    let mut seen = HashSet::new();
    for stop in route.stops() {
        if !seen.insert(stop.stop_id) {
            return Err(RouteError::DuplicateStop(stop.stop_id));
        }
    }
    Ok(route)
}

/// The study route shipped with the repository (`crates/core/data/route_tbs_ky.toml`).
///
/// Section lengths, land use and signal delays are the published values;
/// stop coordinates are laid out so straight-line stop spacing matches the
/// section lengths. They are illustrative, not surveyed.
pub fn reference_route() -> Route {
    load_route(REFERENCE_ROUTE_TOML).expect("bundled route config is valid")
}

pub const REFERENCE_ROUTE_TOML: &str = include_str!("../data/route_tbs_ky.toml");

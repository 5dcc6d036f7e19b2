//! OpenStreetMap XML ingestion: settlement nodes and classified road ways.

mod parse;
mod store;

pub use parse::{parse_osm_file, parse_osm_files, parse_osm_xml, OsmExtract, ParseReport};
pub use store::{read_roads, write_roads, CorpusManifest};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaceClass {
    City,
    Town,
    Village,
}

impl PlaceClass {
    pub const ALL: [PlaceClass; 3] = [PlaceClass::City, PlaceClass::Town, PlaceClass::Village];

    pub fn as_str(self) -> &'static str {
        match self {
            PlaceClass::City => "city",
            PlaceClass::Town => "town",
            PlaceClass::Village => "village",
        }
    }
}

impl FromStr for PlaceClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "city" => Ok(PlaceClass::City),
            "town" => Ok(PlaceClass::Town),
            "village" => Ok(PlaceClass::Village),
            other => Err(Error::Argument(format!("unknown place class '{other}'"))),
        }
    }
}

impl fmt::Display for PlaceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A settlement node. Field order is the manifest's JSON key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceRecord {
    pub place_id: String,
    pub name: String,
    pub place_class: PlaceClass,
    pub lat: f64,
    pub lon: f64,
    /// Generator family for synthetic corpora; absent for real extracts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
}

impl PlaceRecord {
    pub fn new(
        place_id: impl Into<String>,
        name: impl Into<String>,
        place_class: PlaceClass,
        lat: f64,
        lon: f64,
    ) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::Argument(format!(
                "coordinates ({lat}, {lon}) out of range"
            )));
        }
        Ok(Self {
            place_id: place_id.into(),
            name: name.into(),
            place_class,
            lat,
            lon,
            family: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoadClass {
    Motorway,
    Primary,
    Secondary,
    Tertiary,
    Residential,
    Rail,
    Tunnel,
    Other,
}

impl RoadClass {
    pub const ALL: [RoadClass; 8] = [
        RoadClass::Motorway,
        RoadClass::Primary,
        RoadClass::Secondary,
        RoadClass::Tertiary,
        RoadClass::Residential,
        RoadClass::Rail,
        RoadClass::Tunnel,
        RoadClass::Other,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    /// Classification from a way's tags. `None` when the way carries neither
    /// a `highway` nor a `railway` tag.
    pub fn from_tags(highway: Option<&str>, railway: Option<&str>, tunnel: Option<&str>) -> Option<Self> {
        if highway.is_none() && railway.is_none() {
            return None;
        }
        if tunnel == Some("yes") {
            return Some(RoadClass::Tunnel);
        }
        Some(match (highway, railway) {
            (Some(h), _) => match h {
                "motorway" | "trunk" => RoadClass::Motorway,
                "primary" => RoadClass::Primary,
                "secondary" => RoadClass::Secondary,
                "tertiary" => RoadClass::Tertiary,
                "residential" | "unclassified" | "living_street" => RoadClass::Residential,
                _ => RoadClass::Other,
            },
            (None, Some(_)) => RoadClass::Rail,
            (None, None) => unreachable!(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadSegment {
    pub way_id: String,
    pub road_class: RoadClass,
    /// `(lat, lon)` vertices; at least two, no two consecutive equal.
    pub polyline: Vec<(f64, f64)>,
}

impl RoadSegment {
    pub fn new(way_id: impl Into<String>, road_class: RoadClass, polyline: Vec<(f64, f64)>) -> Result<Self> {
        if polyline.len() < 2 {
            return Err(Error::Argument("a road segment needs at least 2 vertices".into()));
        }
        if polyline.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Argument("consecutive vertices must differ".into()));
        }
        Ok(Self {
            way_id: way_id.into(),
            road_class,
            polyline,
        })
    }

    /// `(min_lat, min_lon, max_lat, max_lon)`
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        self.polyline.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), &(lat, lon)| (a.min(lat), b.min(lon), c.max(lat), d.max(lon)),
        )
    }
}

/// Keeps places whose class is in `classes`, preserving order.
pub fn filter_places(places: &[PlaceRecord], classes: &BTreeSet<PlaceClass>) -> Vec<PlaceRecord> {
    places
        .iter()
        .filter(|p| classes.contains(&p.place_class))
        .cloned()
        .collect()
}

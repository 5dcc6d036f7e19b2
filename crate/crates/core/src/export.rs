//! Presentation artifacts: geo colour maps, spectrum montages, histograms.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::osm::CorpusManifest;
use crate::raster::{encode_gray_png, PackedImages};
use crate::som::{color_hex, ClusterReport, SomModel, SomTopology};

/// Inclusive lon/lat box, written `min_lon,min_lat,max_lon,max_lat`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
}

impl BBox {
    pub const WORLD: BBox = BBox {
        min_lon: -180.0,
        min_lat: -90.0,
        max_lon: 180.0,
        max_lat: 90.0,
    };

    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.min_lat..=self.max_lat).contains(&lat) && (self.min_lon..=self.max_lon).contains(&lon)
    }
}

impl FromStr for BBox {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::Argument(format!("bbox '{s}': {why}"));
        let v: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("expected four numbers"))?;
        let [min_lon, min_lat, max_lon, max_lat] = v[..] else {
            return Err(bad("expected four numbers"));
        };
        if v.iter().any(|x| !x.is_finite()) || min_lon > max_lon || min_lat > max_lat {
            return Err(bad("minimum exceeds maximum"));
        }
        Ok(BBox {
            min_lon,
            min_lat,
            max_lon,
            max_lat,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoFeature {
    pub place_id: String,
    pub lat: f64,
    pub lon: f64,
    pub node: usize,
    pub color: String,
}

/// One coloured point per retained place, in place-id order. Places of a
/// dropped cluster are absent from the report and therefore from the map.
pub fn geomap_features(manifest: &CorpusManifest, report: &ClusterReport, colors: &[[u8; 3]]) -> Result<Vec<GeoFeature>> {
    let missing: Vec<String> = report
        .assignments
        .keys()
        .filter(|id| manifest.get(id).is_none())
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::UnknownPlaces(missing));
    }
    report
        .assignments
        .iter()
        .map(|(id, &node)| {
            let p = manifest.get(id).expect("checked above");
            let c = colors
                .get(node)
                .ok_or_else(|| Error::Argument(format!("no colour for node {node}")))?;
            Ok(GeoFeature {
                place_id: id.clone(),
                lat: p.lat,
                lon: p.lon,
                node,
                color: color_hex(*c),
            })
        })
        .collect()
}

/// RFC 7946 FeatureCollection of the features inside `bbox`.
pub fn geojson<'a>(features: impl IntoIterator<Item = &'a GeoFeature>, bbox: Option<&BBox>) -> serde_json::Value {
    let feats: Vec<serde_json::Value> = features
        .into_iter()
        .filter(|f| bbox.map_or(true, |b| b.contains(f.lat, f.lon)))
        .map(|f| {
            json!({
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [f.lon, f.lat]},
                "properties": {"place_id": f.place_id, "node": f.node, "color": f.color},
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": feats})
}

pub fn export_geomap(
    manifest: &CorpusManifest,
    report: &ClusterReport,
    colors: &[[u8; 3]],
    bbox: Option<&BBox>,
) -> Result<Vec<u8>> {
    let features = geomap_features(manifest, report, colors)?;
    let mut out = serde_json::to_vec(&geojson(&features, bbox))?;
    out.push(b'\n');
    Ok(out)
}

/// `node_index,count,dropped` for every node, including empty ones.
pub fn export_histogram(report: &ClusterReport) -> String {
    let mut s = String::from("node_index,count,dropped\n");
    for (i, c) in report.histogram.iter().enumerate() {
        let dropped = report.dropped_node == Some(i);
        let _ = writeln!(s, "{i},{c},{dropped}");
    }
    s
}

pub fn histogram_json(report: &ClusterReport) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(&json!({
        "schema_version": 1,
        "node_count": report.histogram.len(),
        "dropped_node": report.dropped_node,
        "dropped_count": report.dropped.len(),
        "histogram": report.histogram,
    }))?;
    out.push(b'\n');
    Ok(out)
}

/// `place_id,node_index,color_hex`; colours only for strip maps.
pub fn export_assignments(model: &SomModel, report: &ClusterReport) -> Result<String> {
    let colors = match model.topology() {
        SomTopology::Strip { .. } => Some(model.color_map()?),
        SomTopology::Grid { .. } => None,
    };
    let mut s = String::from("place_id,node_index,color_hex\n");
    for (id, &n) in &report.assignments {
        let c = colors.as_ref().map(|c| color_hex(c[n])).unwrap_or_default();
        let _ = writeln!(s, "{},{n},{c}", csv_field(id));
    }
    Ok(s)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub node: usize,
    pub row: usize,
    pub col: usize,
    /// Member closest to the cell prototype; `None` for empty cells.
    pub place_id: Option<String>,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridManifest {
    pub schema_version: u32,
    pub rows: usize,
    pub cols: usize,
    pub image_size: usize,
    pub cells: Vec<GridCell>,
}

/// For each node of a grid map, its member nearest the prototype (ties by
/// place id), from `vectors` keyed by place id.
pub fn grid_manifest(
    model: &SomModel,
    report: &ClusterReport,
    vectors: &BTreeMap<&str, &[f32]>,
    image_size: usize,
) -> Result<GridManifest> {
    let (rows, cols) = match model.topology() {
        SomTopology::Grid { rows, cols } => (rows, cols),
        SomTopology::Strip { .. } => {
            return Err(Error::Argument("spectrum montages need a grid SOM".into()));
        }
    };
    let mut best: Vec<Option<(f64, &str)>> = vec![None; model.node_count()];
    for (id, &node) in &report.assignments {
        let v = vectors
            .get(id.as_str())
            .ok_or_else(|| Error::UnknownPlaces(vec![id.clone()]))?;
        let d: f64 = v
            .iter()
            .zip(model.row(node))
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum();
        // assignments iterate in id order, so strict < keeps the smallest id
        if best[node].map_or(true, |(bd, _)| d < bd) {
            best[node] = Some((d, id.as_str()));
        }
    }
    let cells = (0..model.node_count())
        .map(|node| {
            let (row, col) = model.grid_coords(node);
            GridCell {
                node,
                row,
                col,
                place_id: best[node].map(|(_, id)| id.to_owned()),
                count: report.histogram[node],
            }
        })
        .collect();
    Ok(GridManifest {
        schema_version: 1,
        rows,
        cols,
        image_size,
        cells,
    })
}

/// Tiles each cell's representative image into one PNG, blank where empty.
pub fn render_montage(manifest: &GridManifest, images: &PackedImages) -> Result<Vec<u8>> {
    let s = images.size();
    if s != manifest.image_size {
        return Err(Error::Shape(format!(
            "images are {s}px, manifest expects {}px",
            manifest.image_size
        )));
    }
    let (w, h) = (manifest.cols * s, manifest.rows * s);
    let mut gray = vec![255u8; w * h];
    for cell in &manifest.cells {
        let Some(id) = &cell.place_id else { continue };
        let img = images
            .position(id)
            .map(|i| &images.images()[i])
            .ok_or_else(|| Error::UnknownPlaces(vec![id.clone()]))?;
        for y in 0..s {
            for x in 0..s {
                if img.get(x, y) {
                    gray[(cell.row * s + y) * w + cell.col * s + x] = 0;
                }
            }
        }
    }
    Ok(encode_gray_png(w as u32, h as u32, &gray))
}

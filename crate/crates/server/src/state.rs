use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use urbanform::artifact::sha256_hex;
use urbanform::export::{geomap_features, grid_manifest, GeoFeature};
use urbanform::index::VectorIndex;
use urbanform::osm::CorpusManifest;
use urbanform::pipeline::{paths, read_images, read_manifest, require_artifact, CORPUS_STAGE};
use urbanform::raster::PackedImages;
use urbanform::som::{cluster_members, ClusterReport, SomModel};
use urbanform::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    Strip,
    Grid,
}

pub struct GridState {
    pub model: SomModel,
    pub report: ClusterReport,
    /// Serialized grid manifest and its quoted digest.
    pub body: Vec<u8>,
    pub etag: String,
    pub members: Vec<Vec<(String, f64)>>,
}

/// Every artifact the API reads, loaded and cross-checked once.
pub struct ServiceState {
    pub manifest: CorpusManifest,
    pub images: PackedImages,
    pub index: VectorIndex,
    pub strip: SomModel,
    pub strip_report: ClusterReport,
    pub strip_colors: Vec<[u8; 3]>,
    pub strip_members: Vec<Vec<(String, f64)>>,
    pub features: Vec<GeoFeature>,
    pub grid: Option<GridState>,
}

fn read_report(path: &Path) -> Result<ClusterReport> {
    let bytes = std::fs::read(path).map_err(|e| Error::PathIo { path: path.to_path_buf(), source: e })?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn read_som(path: &Path) -> Result<SomModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::PathIo { path: path.to_path_buf(), source: e })?;
    SomModel::from_bytes(&bytes)
}

fn check_report(model: &SomModel, report: &ClusterReport, index: &VectorIndex, what: &str) -> Result<()> {
    if model.dim() != index.dim() {
        return Err(Error::Config(format!(
            "{what} map has dimension {} but the index has {}",
            model.dim(),
            index.dim()
        )));
    }
    if report.histogram.len() != model.node_count() {
        return Err(Error::Config(format!("{what} report does not match its map")));
    }
    let dangling: Vec<String> = report
        .assignments
        .keys()
        .filter(|id| index.vector(id).is_none())
        .cloned()
        .collect();
    if !dangling.is_empty() {
        return Err(Error::UnknownPlaces(dangling));
    }
    Ok(())
}

fn members_by_node(model: &SomModel, report: &ClusterReport, index: &VectorIndex) -> Result<Vec<Vec<(String, f64)>>> {
    let lookup: BTreeMap<&str, &[f32]> = report
        .assignments
        .keys()
        .map(|id| (id.as_str(), index.vector(id).expect("checked")))
        .collect();
    (0..model.node_count())
        .map(|n| {
            Ok(cluster_members(model, report, &lookup, n)?
                .into_iter()
                .map(|(id, d)| (id.to_owned(), d))
                .collect())
        })
        .collect()
}

impl ServiceState {
    /// Loads an artifact directory, failing on any place id that one store
    /// mentions and another lacks.
    pub fn load(dir: &Path) -> Result<Self> {
        let need = |rel, required| require_artifact(dir, rel, required, "serve");
        let manifest = read_manifest(&need(paths::CORPUS_PLACES, CORPUS_STAGE)?, &need(paths::CORPUS_META, CORPUS_STAGE)?)?;
        need(paths::CORPUS_IMAGES, CORPUS_STAGE)?;
        need(paths::CORPUS_INDEX, CORPUS_STAGE)?;
        let images = read_images(dir)?;
        let index_bytes = std::fs::read(need(paths::INDEX, "index")?)?;
        let index = VectorIndex::from_bytes(&index_bytes)?;

        let mut dangling: Vec<String> = index
            .ids()
            .iter()
            .filter(|id| manifest.get(id).is_none() || images.position(id).is_none())
            .cloned()
            .collect();
        dangling.extend(
            images
                .images()
                .iter()
                .filter(|img| manifest.get(&img.place_id).is_none())
                .map(|img| img.place_id.clone()),
        );
        if !dangling.is_empty() {
            dangling.sort();
            dangling.dedup();
            return Err(Error::UnknownPlaces(dangling));
        }

        let strip = read_som(&need(paths::STRIP_MODEL, "som")?)?;
        let strip_report = read_report(&need(paths::STRIP_REPORT, "som")?)?;
        check_report(&strip, &strip_report, &index, "strip")?;
        let strip_colors = strip.color_map()?;
        let features = geomap_features(&manifest, &strip_report, &strip_colors)?;
        let strip_members = members_by_node(&strip, &strip_report, &index)?;

        let grid_path = dir.join(paths::GRID_MODEL);
        let grid = if grid_path.is_file() {
            let model = read_som(&grid_path)?;
            let report = read_report(&need(paths::GRID_REPORT, "som")?)?;
            check_report(&model, &report, &index, "grid")?;
            let lookup: BTreeMap<&str, &[f32]> =
                index.ids().iter().map(|id| (id.as_str(), index.vector(id).expect("indexed"))).collect();
            let manifest = grid_manifest(&model, &report, &lookup, images.size())?;
            let body = serde_json::to_vec(&manifest)?;
            let etag = format!("\"{}\"", sha256_hex(&body));
            let members = members_by_node(&model, &report, &index)?;
            Some(GridState {
                model,
                report,
                body,
                etag,
                members,
            })
        } else {
            None
        };

        Ok(Self {
            manifest,
            images,
            index,
            strip,
            strip_report,
            strip_colors,
            strip_members,
            features,
            grid,
        })
    }

    /// Cluster pages address grid cells when a grid map exists, strip nodes
    /// otherwise.
    pub fn default_cluster_map(&self) -> MapKind {
        if self.grid.is_some() {
            MapKind::Grid
        } else {
            MapKind::Strip
        }
    }

    pub fn node_count(&self, kind: MapKind) -> usize {
        match kind {
            MapKind::Strip => self.strip.node_count(),
            MapKind::Grid => self.grid.as_ref().map_or(0, |g| g.model.node_count()),
        }
    }

    /// Members of every node, nearest the prototype first.
    pub fn members(&self, kind: MapKind) -> &[Vec<(String, f64)>] {
        match kind {
            MapKind::Strip => &self.strip_members,
            MapKind::Grid => self.grid.as_ref().map_or(&[], |g| &g.members),
        }
    }
}

//! Reproducible stages over one artifact directory.
//!
//! Each stage reads files written by earlier stages, writes its outputs
//! atomically, and records a report under `reports/` with the digests of its
//! inputs, outputs and settings. A stage whose settings and inputs are
//! unchanged and whose outputs are intact is skipped.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::artifact::{sha256_file, sha256_hex, write_atomic, DirLock};
use crate::cae::{build_model, extract_urban_vectors, CaeConfig, Checkpoint, TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::export::{self, BBox};
use crate::index::VectorIndex;
use crate::osm::{self, CorpusManifest, PlaceClass};
use crate::raster::{rasterize_places, PackedImages, RenderStyle, RoadIndex, DEFAULT_MIN_SET_FRACTION};
use crate::som::{self, ClusterReport, DropPolicy, SomConfig, SomModel};
use crate::synth::make_synthetic_corpus;
use crate::topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Rasterize,
    Synth,
    Train,
    Embed,
    Index,
    Som,
    Topology,
    Export,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Ingest,
        Stage::Rasterize,
        Stage::Synth,
        Stage::Train,
        Stage::Embed,
        Stage::Index,
        Stage::Som,
        Stage::Topology,
        Stage::Export,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Rasterize => "rasterize",
            Stage::Synth => "synth",
            Stage::Train => "train",
            Stage::Embed => "embed",
            Stage::Index => "index",
            Stage::Som => "som",
            Stage::Topology => "topology",
            Stage::Export => "export",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown stage '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RasterSettings {
    pub style: RenderStyle,
    pub image_size: usize,
    pub min_set_fraction: f64,
    /// Worker threads; 0 uses every available core. Output is identical
    /// for any value.
    pub threads: usize,
}

impl Default for RasterSettings {
    fn default() -> Self {
        Self {
            style: RenderStyle::default(),
            image_size: 256,
            min_set_fraction: DEFAULT_MIN_SET_FRACTION,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSettings {
    pub count: usize,
    pub image_size: usize,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            count: 200,
            image_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SomSettings {
    pub strip: SomConfig,
    pub grid: Option<SomConfig>,
    pub drop: DropPolicy,
}

impl Default for SomSettings {
    fn default() -> Self {
        Self {
            strip: SomConfig::strip(2000, 50, 0),
            grid: Some(SomConfig::grid(40, 40, 50, 0)),
            drop: DropPolicy::FirstNode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopologySettings {
    pub threshold: f64,
    /// `start:end:step`, inclusive.
    pub sweep: String,
}

impl Default for TopologySettings {
    fn default() -> Self {
        Self {
            threshold: 0.8,
            sweep: "0.5:0.95:0.05".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExportSettings {
    pub bbox: Option<BBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceSettings {
    pub port: u16,
    pub cors_origin: Option<String>,
}

impl Default for ServiceSettings {
    fn default() -> Self {
        Self {
            port: 8080,
            cors_origin: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Seeds model initialisation and the synthetic corpus.
    pub seed: u64,
    pub artifact_dir: PathBuf,
    pub osm_inputs: Vec<PathBuf>,
    pub place_classes: Vec<PlaceClass>,
    pub raster: RasterSettings,
    pub synth: SynthSettings,
    pub cae: CaeConfig,
    pub train: TrainConfig,
    pub som: SomSettings,
    pub topology: TopologySettings,
    pub export: ExportSettings,
    pub service: ServiceSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            artifact_dir: PathBuf::from("artifacts"),
            osm_inputs: Vec::new(),
            place_classes: PlaceClass::ALL.to_vec(),
            raster: RasterSettings::default(),
            synth: SynthSettings::default(),
            cae: CaeConfig::default(),
            train: TrainConfig::default(),
            som: SomSettings::default(),
            topology: TopologySettings::default(),
            export: ExportSettings::default(),
            service: ServiceSettings::default(),
        }
    }
}

/// JSON with object keys sorted at every level, so equal settings always
/// serialize, and therefore digest, identically.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    // serde_json's map is ordered by key, so a round-trip through Value sorts
    let v = serde_json::to_value(value)?;
    let mut out = serde_json::to_vec_pretty(&v)?;
    out.push(b'\n');
    Ok(out)
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::path_io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Canonical JSON without `artifact_dir`, so that the same settings
    /// written to different directories are byte-identical.
    pub fn canonical(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_value(self)?;
        if let Some(m) = v.as_object_mut() {
            m.remove("artifact_dir");
        }
        canonical_json(&v)
    }

    pub fn digest(&self) -> Result<String> {
        Ok(sha256_hex(&self.canonical()?))
    }

    /// Digest of the settings that influence `stage`'s outputs.
    pub fn stage_digest(&self, stage: Stage) -> Result<String> {
        let settings = match stage {
            Stage::Ingest => json!({"osm_inputs": self.osm_inputs, "place_classes": self.place_classes}),
            Stage::Rasterize => json!({
                "style": self.raster.style,
                "image_size": self.raster.image_size,
                "min_set_fraction": self.raster.min_set_fraction,
            }),
            Stage::Synth => json!({"synth": self.synth, "seed": self.seed}),
            Stage::Train => json!({"cae": self.cae, "train": self.train, "seed": self.seed}),
            Stage::Embed | Stage::Index => json!({}),
            Stage::Som => json!(self.som),
            Stage::Topology => json!(self.topology),
            Stage::Export => json!(self.export),
        };
        Ok(sha256_hex(&canonical_json(&json!({"stage": stage.as_str(), "settings": settings}))?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageStatus {
    Completed,
    UpToDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub status: StageStatus,
    pub config_digest: String,
    /// Input path (relative to the artifact directory, or as given for
    /// external files) to SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, Default)]
pub struct StageOptions {
    /// Run even when the previous report says the stage is up to date.
    pub force: bool,
    /// Continue training from this checkpoint.
    pub resume: Option<PathBuf>,
    /// Directory for periodic training checkpoints.
    pub checkpoint_dir: Option<PathBuf>,
}

pub mod paths {
    pub const REPORTS: &str = "reports";
    pub const PLACES: &str = "ingest/places.jsonl";
    pub const PLACES_META: &str = "ingest/places.meta.json";
    pub const ROADS: &str = "ingest/roads.msrd";
    pub const CORPUS_IMAGES: &str = "corpus/images.msim";
    pub const CORPUS_INDEX: &str = "corpus/images.index.json";
    pub const CORPUS_PLACES: &str = "corpus/places.jsonl";
    pub const CORPUS_META: &str = "corpus/places.meta.json";
    pub const MODEL: &str = "train/model.msck";
    pub const LOSS_CURVE: &str = "train/loss_curve.json";
    pub const VECTORS: &str = "embed/vectors.msvx";
    pub const INDEX: &str = "index/index.msvx";
    pub const STRIP_MODEL: &str = "som/strip.msom";
    pub const STRIP_REPORT: &str = "som/strip_report.json";
    pub const ASSIGNMENTS: &str = "som/assignments.csv";
    pub const HISTOGRAM_CSV: &str = "som/histogram.csv";
    pub const HISTOGRAM_JSON: &str = "som/histogram.json";
    pub const GRID_MODEL: &str = "som/grid.msom";
    pub const GRID_REPORT: &str = "som/grid_report.json";
    pub const GRAPH_JSON: &str = "topology/graph.json";
    pub const GRAPH_ML: &str = "topology/graph.graphml";
    pub const SWEEP: &str = "topology/sweep.json";
    pub const GEOMAP: &str = "export/geomap.geojson";
    pub const MONTAGE_PNG: &str = "export/montage.png";
    pub const MONTAGE_JSON: &str = "export/montage.json";
    pub const EXPORT_HISTOGRAM: &str = "export/histogram.csv";
}

struct Ctx<'a> {
    dir: &'a Path,
    stage: Stage,
}

impl Ctx<'_> {
    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    /// Fails with an actionable error when an upstream artifact is absent.
    fn require(&self, rel: &str, required: &'static str) -> Result<PathBuf> {
        require_artifact(self.dir, rel, required, self.stage.as_str())
    }

    fn read(&self, rel: &str) -> Result<Vec<u8>> {
        let p = self.path(rel);
        fs::read(&p).map_err(|e| Error::path_io(&p, e))
    }

    fn manifest(&self, jsonl: &str, meta: &str) -> Result<CorpusManifest> {
        read_manifest(&self.path(jsonl), &self.path(meta))
    }

    fn corpus(&self) -> Result<PackedImages> {
        read_images(self.dir)
    }
}

/// Path of an artifact, or an error naming the stage that writes it.
pub fn require_artifact(dir: &Path, rel: &str, required: &'static str, stage: &'static str) -> Result<PathBuf> {
    let p = dir.join(rel);
    if p.is_file() {
        Ok(p)
    } else {
        Err(Error::Prerequisite {
            stage,
            required,
            missing: rel.to_owned(),
        })
    }
}

pub fn read_manifest(jsonl: &Path, meta: &Path) -> Result<CorpusManifest> {
    let f = fs::File::open(jsonl).map_err(|e| Error::path_io(jsonl, e))?;
    let meta = fs::read(meta).map_err(|e| Error::path_io(meta, e))?;
    CorpusManifest::read(BufReader::new(f), &meta)
}

/// The packed image store under an artifact directory.
pub fn read_images(dir: &Path) -> Result<PackedImages> {
    let (body, index) = (dir.join(paths::CORPUS_IMAGES), dir.join(paths::CORPUS_INDEX));
    let bytes = fs::read(&body).map_err(|e| Error::path_io(&body, e))?;
    let index = fs::read(&index).map_err(|e| Error::path_io(&index, e))?;
    PackedImages::read(&mut &bytes[..], &index)
}

pub const CORPUS_STAGE: &str = "rasterize (or synth)";

/// Artifact-relative inputs of a stage and the stage that produces each.
fn stage_inputs(stage: Stage, config: &PipelineConfig) -> Vec<(&'static str, &'static str)> {
    use paths::*;
    let corpus = [(CORPUS_IMAGES, CORPUS_STAGE), (CORPUS_INDEX, CORPUS_STAGE)];
    match stage {
        Stage::Ingest | Stage::Synth => vec![],
        Stage::Rasterize => vec![(PLACES, "ingest"), (PLACES_META, "ingest"), (ROADS, "ingest")],
        Stage::Train => corpus.to_vec(),
        Stage::Embed => [vec![(MODEL, "train")], corpus.to_vec()].concat(),
        Stage::Index | Stage::Som => vec![(VECTORS, "embed")],
        Stage::Topology => vec![(STRIP_MODEL, "som"), (STRIP_REPORT, "som")],
        Stage::Export => {
            let mut v = vec![
                (CORPUS_PLACES, CORPUS_STAGE),
                (CORPUS_META, CORPUS_STAGE),
                (STRIP_MODEL, "som"),
                (STRIP_REPORT, "som"),
            ];
            if config.som.grid.is_some() {
                v.extend([(GRID_MODEL, "som"), (GRID_REPORT, "som"), (VECTORS, "embed")]);
                v.extend(corpus);
            }
            v
        }
    }
}

fn report_path(dir: &Path, stage: Stage) -> PathBuf {
    dir.join(paths::REPORTS).join(format!("{stage}.json"))
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(v)?;
    out.push(b'\n');
    Ok(out)
}

/// Runs one stage under the directory lock.
pub fn run_stage(stage: Stage, config: &PipelineConfig, opts: &StageOptions) -> Result<StageReport> {
    let dir = config.artifact_dir.as_path();
    let _lock = DirLock::acquire(dir)?;
    let started = Instant::now();
    let ctx = Ctx { dir, stage };

    let mut inputs = BTreeMap::new();
    for (rel, required) in stage_inputs(stage, config) {
        let p = ctx.require(rel, required)?;
        inputs.insert(rel.to_owned(), sha256_file(&p)?);
    }
    if stage == Stage::Ingest {
        if config.osm_inputs.is_empty() {
            return Err(Error::Config("ingest needs at least one OSM input file".into()));
        }
        for p in &config.osm_inputs {
            inputs.insert(p.display().to_string(), sha256_file(p)?);
        }
    }
    if let Some(r) = &opts.resume {
        inputs.insert(r.display().to_string(), sha256_file(r)?);
    }
    let config_digest = config.stage_digest(stage)?;

    let rp = report_path(dir, stage);
    if !opts.force {
        if let Some(prev) = fs::read(&rp).ok().and_then(|b| serde_json::from_slice::<StageReport>(&b).ok()) {
            let intact = prev
                .outputs
                .iter()
                .all(|(rel, d)| sha256_file(&dir.join(rel)).map(|x| &x == d).unwrap_or(false));
            if prev.config_digest == config_digest && prev.inputs == inputs && intact {
                log::info!("{stage}: up-to-date");
                return Ok(StageReport {
                    status: StageStatus::UpToDate,
                    wall_time_ms: started.elapsed().as_millis() as u64,
                    ..prev
                });
            }
        }
    }

    log::info!("{stage}: running");
    let produced = match stage {
        Stage::Ingest => ingest(config)?,
        Stage::Rasterize => rasterize(&ctx, config)?,
        Stage::Synth => synth(config)?,
        Stage::Train => train(&ctx, config, opts)?,
        Stage::Embed => embed(&ctx)?,
        Stage::Index => index(&ctx)?,
        Stage::Som => som_stage(&ctx, config)?,
        Stage::Topology => topology_stage(&ctx, config)?,
        Stage::Export => export_stage(&ctx, config)?,
    };

    let mut outputs = BTreeMap::new();
    let out_dirs: std::collections::BTreeSet<String> =
        produced.iter().filter_map(|(rel, _)| rel.split('/').next().map(str::to_owned)).collect();
    let canonical = config.canonical()?;
    let mut all: Vec<(String, Vec<u8>)> = produced;
    for d in out_dirs {
        all.push((format!("{d}/config.json"), canonical.clone()));
    }
    for (rel, bytes) in &all {
        write_atomic(&dir.join(rel), bytes)?;
        outputs.insert(rel.clone(), sha256_hex(bytes));
    }
    let report = StageReport {
        stage: stage.as_str().to_owned(),
        status: StageStatus::Completed,
        config_digest,
        inputs,
        outputs,
        wall_time_ms: started.elapsed().as_millis() as u64,
    };
    write_atomic(&rp, &json_bytes(&report)?)?;
    log::info!("{stage}: done in {} ms", report.wall_time_ms);
    Ok(report)
}

/// The stages that build every artifact: synthetic data when no OSM inputs
/// are configured, OSM ingestion otherwise.
pub fn full_pipeline(config: &PipelineConfig) -> Vec<Stage> {
    let mut v = if config.osm_inputs.is_empty() {
        vec![Stage::Synth]
    } else {
        vec![Stage::Ingest, Stage::Rasterize]
    };
    v.extend([Stage::Train, Stage::Embed, Stage::Index, Stage::Som, Stage::Topology, Stage::Export]);
    v
}

pub fn run_all(config: &PipelineConfig, opts: &StageOptions) -> Result<Vec<StageReport>> {
    full_pipeline(config).into_iter().map(|s| run_stage(s, config, opts)).collect()
}

type Outputs = Vec<(String, Vec<u8>)>;

fn manifest_files(m: &CorpusManifest, jsonl: &str, meta: &str) -> Result<Outputs> {
    let mut body = Vec::new();
    m.write_jsonl(&mut body)?;
    Ok(vec![(jsonl.into(), body), (meta.into(), m.meta_json()?)])
}

fn corpus_files(m: &CorpusManifest, images: &PackedImages) -> Result<Outputs> {
    let mut out = manifest_files(m, paths::CORPUS_PLACES, paths::CORPUS_META)?;
    let mut body = Vec::new();
    images.write_body(&mut body)?;
    out.push((paths::CORPUS_IMAGES.into(), body));
    out.push((paths::CORPUS_INDEX.into(), images.index_json()?));
    Ok(out)
}

/// `SOURCE_DATE_EPOCH` when set, else the newest input modification time.
fn extraction_timestamp(inputs: &[PathBuf]) -> Result<u64> {
    if let Some(v) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse().ok()) {
        return Ok(v);
    }
    let mut newest = 0;
    for p in inputs {
        let m = fs::metadata(p).and_then(|m| m.modified()).map_err(|e| Error::path_io(p, e))?;
        newest = newest.max(m.duration_since(UNIX_EPOCH).unwrap_or_default().as_secs());
    }
    Ok(newest)
}

fn ingest(config: &PipelineConfig) -> Result<Outputs> {
    let extract = osm::parse_osm_files(&config.osm_inputs)?;
    log::info!("parsed {:?}", extract.report);
    let classes = config.place_classes.iter().copied().collect();
    let places = osm::filter_places(&extract.places, &classes);
    let mut digests = Vec::new();
    for p in &config.osm_inputs {
        digests.push(sha256_file(p)?);
    }
    let manifest = CorpusManifest::new(
        places,
        sha256_hex(digests.join("\n").as_bytes()),
        extraction_timestamp(&config.osm_inputs)?,
    )?;
    let mut out = manifest_files(&manifest, paths::PLACES, paths::PLACES_META)?;
    let mut roads = Vec::new();
    osm::write_roads(&mut roads, &extract.roads)?;
    out.push((paths::ROADS.into(), roads));
    Ok(out)
}

fn rasterize(ctx: &Ctx, config: &PipelineConfig) -> Result<Outputs> {
    let manifest = ctx.manifest(paths::PLACES, paths::PLACES_META)?;
    let roads = osm::read_roads(&mut &ctx.read(paths::ROADS)?[..])?;
    let index = RoadIndex::new(roads, 0.05);
    let threads = match config.raster.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    };
    let s = &config.raster;
    let outcome = rasterize_places(manifest.places(), &index, &s.style, s.image_size, s.min_set_fraction, threads)?;
    log::info!(
        "rendered {} images, dropped {} empty",
        outcome.images.len(),
        outcome.dropped_empty.len()
    );
    let kept: std::collections::HashSet<&str> = outcome.images.iter().map(|i| i.place_id.as_str()).collect();
    let places = manifest
        .places()
        .iter()
        .filter(|p| kept.contains(p.place_id.as_str()))
        .cloned()
        .collect();
    let filtered = CorpusManifest::new(places, manifest.source_digest.clone(), manifest.extraction_timestamp)?;
    let images = PackedImages::new(s.image_size, outcome.images)?;
    corpus_files(&filtered, &images)
}

fn synth(config: &PipelineConfig) -> Result<Outputs> {
    let c = make_synthetic_corpus(config.synth.count, config.synth.image_size, config.seed)?;
    corpus_files(&c.manifest, &c.images)
}

fn train(ctx: &Ctx, config: &PipelineConfig, opts: &StageOptions) -> Result<Outputs> {
    let corpus = ctx.corpus()?;
    if corpus.size() != config.cae.input_size {
        return Err(Error::Config(format!(
            "corpus images are {}px but cae.input_size is {}",
            corpus.size(),
            config.cae.input_size
        )));
    }
    let trainer = match &opts.resume {
        Some(path) => {
            let bytes = fs::read(path).map_err(|e| Error::path_io(path, e))?;
            let ckpt = Checkpoint::from_bytes(&bytes)?;
            if ckpt.model.config != config.cae {
                return Err(Error::Config("checkpoint architecture differs from the configured one".into()));
            }
            Trainer::resume(ckpt, Some(config.train.epochs))?
        }
        None => Trainer::new(build_model(config.cae.clone(), config.seed)?, config.train.clone())?,
    };
    let trainer = match &opts.checkpoint_dir {
        Some(d) => trainer.with_checkpoint_dir(d),
        None => trainer,
    };
    let mut trainer = trainer;
    while trainer.epochs_done() < config.train.epochs {
        trainer.run_epoch(corpus.images())?;
    }
    let ckpt = trainer.checkpoint();
    Ok(vec![
        (paths::MODEL.into(), ckpt.to_bytes()?),
        (paths::LOSS_CURVE.into(), json_bytes(&json!({"schema_version": 1, "loss_curve": trainer.loss_curve()}))?),
    ])
}

fn embed(ctx: &Ctx) -> Result<Outputs> {
    let model = Checkpoint::from_bytes(&ctx.read(paths::MODEL)?)?.model;
    let vectors = extract_urban_vectors(&model, &ctx.corpus()?)?;
    Ok(vec![(paths::VECTORS.into(), VectorIndex::build(vectors)?.to_bytes()?)])
}

fn index(ctx: &Ctx) -> Result<Outputs> {
    let idx = VectorIndex::from_bytes(&ctx.read(paths::VECTORS)?)?;
    Ok(vec![(paths::INDEX.into(), idx.to_bytes()?)])
}

fn som_stage(ctx: &Ctx, config: &PipelineConfig) -> Result<Outputs> {
    let vectors = VectorIndex::from_bytes(&ctx.read(paths::VECTORS)?)?.to_vectors();
    let strip = som::train_som(&vectors, &config.som.strip)?;
    let report = som::cluster_report(&strip, &vectors, config.som.drop)?;
    let mut out = vec![
        (paths::STRIP_MODEL.into(), strip.to_bytes()?),
        (paths::STRIP_REPORT.into(), json_bytes(&report)?),
        (paths::ASSIGNMENTS.into(), export::export_assignments(&strip, &report)?.into_bytes()),
        (paths::HISTOGRAM_CSV.into(), export::export_histogram(&report).into_bytes()),
        (paths::HISTOGRAM_JSON.into(), export::histogram_json(&report)?),
    ];
    if let Some(gc) = &config.som.grid {
        let grid = som::train_som(&vectors, gc)?;
        let grid_report = som::cluster_report(&grid, &vectors, DropPolicy::Keep)?;
        out.push((paths::GRID_MODEL.into(), grid.to_bytes()?));
        out.push((paths::GRID_REPORT.into(), json_bytes(&grid_report)?));
    }
    Ok(out)
}

fn read_report(ctx: &Ctx, rel: &str) -> Result<ClusterReport> {
    Ok(serde_json::from_slice(&ctx.read(rel)?)?)
}

fn topology_stage(ctx: &Ctx, config: &PipelineConfig) -> Result<Outputs> {
    let model = SomModel::from_bytes(&ctx.read(paths::STRIP_MODEL)?)?;
    let report = read_report(ctx, paths::STRIP_REPORT)?;
    let graph = topology::build_graph(&model, &report, config.topology.threshold)?;
    let thresholds = topology::parse_threshold_range(&config.topology.sweep)?;
    let sweep = topology::sweep(&model, &thresholds)?;
    Ok(vec![
        (paths::GRAPH_JSON.into(), graph.to_json()?),
        (paths::GRAPH_ML.into(), graph.to_graphml().into_bytes()),
        (paths::SWEEP.into(), json_bytes(&json!({"schema_version": 1, "sweep": sweep}))?),
    ])
}

fn export_stage(ctx: &Ctx, config: &PipelineConfig) -> Result<Outputs> {
    let manifest = ctx.manifest(paths::CORPUS_PLACES, paths::CORPUS_META)?;
    let strip = SomModel::from_bytes(&ctx.read(paths::STRIP_MODEL)?)?;
    let report = read_report(ctx, paths::STRIP_REPORT)?;
    let colors = strip.color_map()?;
    let mut out = vec![
        (
            paths::GEOMAP.into(),
            export::export_geomap(&manifest, &report, &colors, config.export.bbox.as_ref())?,
        ),
        (paths::EXPORT_HISTOGRAM.into(), export::export_histogram(&report).into_bytes()),
    ];
    if config.som.grid.is_some() {
        let grid = SomModel::from_bytes(&ctx.read(paths::GRID_MODEL)?)?;
        let grid_report = read_report(ctx, paths::GRID_REPORT)?;
        let idx = VectorIndex::from_bytes(&ctx.read(paths::VECTORS)?)?;
        let lookup: BTreeMap<&str, &[f32]> = idx.ids().iter().map(|id| (id.as_str(), idx.vector(id).expect("indexed"))).collect();
        let images = ctx.corpus()?;
        let man = export::grid_manifest(&grid, &grid_report, &lookup, images.size())?;
        out.push((paths::MONTAGE_PNG.into(), export::render_montage(&man, &images)?));
        out.push((paths::MONTAGE_JSON.into(), json_bytes(&man)?));
    }
    Ok(out)
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use urbanform::cae::OptimizerKind;
use urbanform::export::BBox;
use urbanform::index::VectorIndex;
use urbanform::osm::PlaceClass;
use urbanform::pipeline::{paths, require_artifact, run_all, run_stage, PipelineConfig, Stage, StageOptions, StageReport};
use urbanform::som::SomTopology;
use urbanform::Error;
use urbanform_server::ServiceConfig;

/// Street-network images, autoencoder embeddings and self-organizing maps
/// for comparing urban form.
#[derive(Parser)]
#[command(name = "urbanform", version)]
struct Cli {
    /// Pipeline configuration (JSON); defaults apply to omitted fields.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured artifact directory.
    #[arg(long, global = true, env = "MS_ARTIFACT_DIR")]
    artifact_dir: Option<PathBuf>,
    /// Overrides the global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Rerun even when the stage is up to date.
    #[arg(long, global = true)]
    force: bool,
    /// More log output (repeatable).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse OSM XML into a place manifest and road store.
    Ingest {
        /// OSM XML files, optionally gzip-compressed.
        #[arg(long = "osm", required = true, num_args = 1..)]
        osm: Vec<PathBuf>,
        /// Place classes to keep.
        #[arg(long, value_delimiter = ',')]
        classes: Option<Vec<PlaceClass>>,
    },
    /// Render one binary image per place.
    Rasterize {
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Generate a labelled synthetic corpus instead of ingesting OSM data.
    Synth {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Train the autoencoder.
    Train(TrainArgs),
    /// Encode every image into an urban vector.
    Embed,
    /// Build the nearest-neighbour index.
    Index,
    /// Print the nearest neighbours of a place.
    Query {
        #[arg(long)]
        place_id: String,
        #[arg(long, short, default_value_t = 6)]
        k: usize,
        /// Print the result as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Train the strip (and grid) maps and write cluster reports.
    Som {
        /// Nodes in the strip map.
        #[arg(long)]
        nodes: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Similarity graph and threshold sweep over the strip map.
    Topology {
        #[arg(long)]
        threshold: Option<f64>,
        /// `start:end:step`
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Geomap, histogram and montage exports.
    Export {
        /// `min_lon,min_lat,max_lon,max_lat`
        #[arg(long)]
        bbox: Option<BBox>,
    },
    /// Every stage in order.
    Run,
    /// Print the effective configuration.
    Config,
    /// Serve the read-only HTTP API.
    Serve {
        #[arg(long, env = "MS_PORT")]
        port: Option<u16>,
        #[arg(long, env = "MS_CORS_ORIGIN")]
        cors_origin: Option<String>,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f32>,
    #[arg(long, value_parser = parse_optimizer)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Continue from a checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Write a checkpoint here every `train.checkpoint_every` epochs.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, String> {
    match s {
        "sgd" | "sgd_momentum" => Ok(OptimizerKind::SgdMomentum),
        "adam" => Ok(OptimizerKind::Adam),
        _ => Err(format!("unknown optimizer '{s}' (sgd or adam)")),
    }
}

/// Usage and configuration problems exit with 2, everything else with 1.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Argument(_) | Error::Config(_) | Error::Prerequisite { .. } => 2,
        _ => 1,
    }
}

fn print_report(r: &StageReport) {
    let status = serde_json::to_value(r.status).unwrap();
    println!(
        "{}: {} ({} outputs, {} ms)",
        r.stage,
        status.as_str().unwrap_or_default(),
        r.outputs.len(),
        r.wall_time_ms
    );
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> urbanform::Result<()> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(d) = cli.artifact_dir {
        config.artifact_dir = d;
    }
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    let mut opts = StageOptions {
        force: cli.force,
        ..Default::default()
    };

    let stage = match cli.command {
        Command::Ingest { osm, classes } => {
            config.osm_inputs = osm;
            if let Some(c) = classes {
                config.place_classes = c;
            }
            Stage::Ingest
        }
        Command::Rasterize { size, threads } => {
            if let Some(s) = size {
                config.raster.image_size = s;
            }
            if let Some(t) = threads {
                config.raster.threads = t;
            }
            Stage::Rasterize
        }
        Command::Synth { count, size } => {
            if let Some(c) = count {
                config.synth.count = c;
            }
            if let Some(s) = size {
                config.synth.image_size = s;
            }
            Stage::Synth
        }
        Command::Train(a) => {
            let t = &mut config.train;
            t.epochs = a.epochs.unwrap_or(t.epochs);
            t.learning_rate = a.learning_rate.unwrap_or(t.learning_rate);
            t.optimizer = a.optimizer.unwrap_or(t.optimizer);
            t.batch_size = a.batch_size.unwrap_or(t.batch_size);
            opts.resume = a.resume;
            opts.checkpoint_dir = a.checkpoint_dir;
            Stage::Train
        }
        Command::Embed => Stage::Embed,
        Command::Index => Stage::Index,
        Command::Som { nodes, epochs } => {
            if let Some(n) = nodes {
                config.som.strip.topology = SomTopology::Strip { nodes: n };
            }
            if let Some(e) = epochs {
                config.som.strip.epochs = e;
                if let Some(g) = config.som.grid.as_mut() {
                    g.epochs = e;
                }
            }
            Stage::Som
        }
        Command::Topology { threshold, sweep } => {
            if let Some(t) = threshold {
                config.topology.threshold = t;
            }
            if let Some(s) = sweep {
                config.topology.sweep = s;
            }
            Stage::Topology
        }
        Command::Export { bbox } => {
            if bbox.is_some() {
                config.export.bbox = bbox;
            }
            Stage::Export
        }
        Command::Run => {
            for r in run_all(&config, &opts)? {
                print_report(&r);
            }
            return Ok(());
        }
        Command::Config => {
            print!("{}", String::from_utf8_lossy(&urbanform::pipeline::canonical_json(&config)?));
            return Ok(());
        }
        Command::Query { place_id, k, json } => return query(&config, &place_id, k, json),
        Command::Serve { port, cors_origin } => {
            let service = ServiceConfig {
                port: port.unwrap_or(config.service.port),
                artifact_dir: config.artifact_dir.clone(),
                cors_origin: cors_origin.or(config.service.cors_origin.clone()),
            };
            return serve(&service);
        }
    };
    print_report(&run_stage(stage, &config, &opts)?);
    Ok(())
}

fn query(config: &PipelineConfig, place_id: &str, k: usize, json: bool) -> urbanform::Result<()> {
    let path = require_artifact(&config.artifact_dir, paths::INDEX, "index", "query")?;
    let bytes = std::fs::read(&path).map_err(|e| Error::PathIo { path, source: e })?;
    let index = VectorIndex::from_bytes(&bytes)?;
    let result = index.knn_by_id(place_id, k, true)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&result)?);
    } else {
        for (i, n) in result.neighbors.iter().enumerate() {
            println!("{}\t{}\t{:.6}", i + 1, n.place_id, n.distance);
        }
    }
    Ok(())
}

fn serve(service: &ServiceConfig) -> urbanform::Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(urbanform_server::run(service))
        .map_err(|e| match e.downcast::<Error>() {
            Ok(e) => *e,
            Err(e) => Error::Io(std::io::Error::other(e.to_string())),
        })
}

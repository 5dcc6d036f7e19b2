pub mod artifact;
pub mod cae;
mod codec;
pub mod error;
pub mod export;
pub mod index;
pub mod osm;
pub mod pipeline;
pub mod raster;
pub mod som;
pub mod synth;
pub mod tensor;
pub mod topology;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/ingest.md")]
    mod ingest {}
    #[doc = include_str!("../../../book/src/rasterize.md")]
    mod rasterize {}
    #[doc = include_str!("../../../book/src/autoencoder.md")]
    mod autoencoder {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/embeddings.md")]
    mod embeddings {}
    #[doc = include_str!("../../../book/src/som.md")]
    mod som {}
    #[doc = include_str!("../../../book/src/topology.md")]
    mod topology {}
    #[doc = include_str!("../../../book/src/exports.md")]
    mod exports {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/service.md")]
    mod service {}
}

//! Fixed-scale binary street rasters.
//!
//! A place is rendered from a square window of Web-Mercator world pixels
//! centred on its projected coordinate. Roads are stroked as capsules on a
//! supersampled grid, box-filtered down to the output size and binarized at
//! half coverage.

mod image;
mod mercator;
mod render;
mod store;

pub use image::RasterImage;
pub(crate) use image::encode_gray_png;
pub use mercator::{mercator_project, mercator_unproject, MAX_MERCATOR_LAT};
pub use render::{
    is_effectively_empty, rasterize_places, render_place, stroke_polylines, viewport_bounds,
    RasterizeOutcome, RenderStyle, RoadIndex, DEFAULT_MIN_SET_FRACTION,
};
pub use store::PackedImages;

//! Tied-weight convolutional autoencoder.
//!
//! The encoder is a chain of strided "same" convolutions, each followed by a
//! ReLU. Decoder layer `i` is the transposed convolution of encoder layer
//! `L - 1 - i` with the very same kernel (in/out channel roles swapped), its
//! own bias, and a ReLU, so only the encoder owns weights. The bottleneck
//! activations, flattened row-major over `[h, w, channels]`, are the place's
//! embedding.

mod checkpoint;
mod model;
mod train;

pub use checkpoint::Checkpoint;
pub use model::{build_model, CaeConfig, CaeModel, ForwardPass, Gradients};
pub use train::{train, OptimizerKind, TrainConfig, TrainOutcome, Trainer};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::PackedImages;
use crate::tensor::Tensor;

/// Bottleneck embedding of one place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrbanVector {
    pub place_id: String,
    pub values: Vec<f32>,
}

/// Encodes every image of the corpus, in corpus order, `batch` images at a
/// time.
pub fn extract_urban_vectors(model: &CaeModel, corpus: &PackedImages) -> Result<Vec<UrbanVector>> {
    if corpus.size() != model.config.input_size || model.config.input_channels != 1 {
        return Err(Error::Config(format!(
            "corpus images are {}px but the model expects {}px x {} channel(s)",
            corpus.size(),
            model.config.input_size,
            model.config.input_channels
        )));
    }
    let code_len = model.config.code_len()?;
    let mut out = Vec::with_capacity(corpus.len());
    for chunk in corpus.images().chunks(64) {
        let batch = Tensor::stack(&chunk.iter().map(|i| i.to_tensor()).collect::<Vec<_>>())?;
        let code = model.encode(&batch)?;
        for (img, values) in chunk.iter().zip(code.data().chunks_exact(code_len)) {
            out.push(UrbanVector {
                place_id: img.place_id.clone(),
                values: values.to_vec(),
            });
        }
    }
    Ok(out)
}

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::model::{CaeConfig, CaeModel};
use super::train::{OptimizerKind, TrainConfig};
use crate::codec;
use crate::error::{Error, Result};
use crate::tensor::{ConvKernel, Tensor};

const MAGIC: &[u8; 4] = b"MSCK";
const VERSION: u16 = 1;
const FORMAT: &str = "checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct OptimizerState {
    pub kind: OptimizerKind,
    pub step: u64,
    /// Momentum (SGD) or first moment (Adam), per parameter slot.
    pub first: Vec<Vec<f32>>,
    /// Second moment (Adam only).
    pub second: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct TrainState {
    pub config: TrainConfig,
    pub epochs_done: usize,
    pub loss_curve: Vec<f64>,
    pub optimizer: OptimizerState,
}

/// A model, optionally with everything needed to resume training
/// deterministically. The sample order of an epoch is a function of the
/// shuffle seed and the epoch number, so no generator state is stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: CaeModel,
    pub(crate) train: Option<TrainState>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: CaeConfig,
    rng_seed: u64,
    train: Option<TrainHeader>,
    tensors: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct TrainHeader {
    config: TrainConfig,
    epochs_done: usize,
    loss_curve: Vec<f64>,
    optimizer: OptimizerKind,
    step: u64,
}

impl Checkpoint {
    pub fn bare(model: CaeModel) -> Self {
        Self { model, train: None }
    }

    pub fn epochs_done(&self) -> Option<usize> {
        self.train.as_ref().map(|t| t.epochs_done)
    }

    pub fn loss_curve(&self) -> Option<&[f64]> {
        self.train.as_ref().map(|t| t.loss_curve.as_slice())
    }

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let m = &self.model;
        let mut out = Vec::new();
        for (l, k) in m.encoder.iter().enumerate() {
            out.push((format!("encoder.{l}.weights"), k.weights.clone()));
            out.push((format!("encoder.{l}.bias"), vector(&k.bias)));
        }
        for (i, b) in m.decoder_biases.iter().enumerate() {
            if let Some(ws) = &m.decoder_weights {
                out.push((format!("decoder.{i}.weights"), ws[i].clone()));
            }
            out.push((format!("decoder.{i}.bias"), vector(b)));
        }
        if let Some(t) = &self.train {
            for (s, v) in t.optimizer.first.iter().enumerate() {
                out.push((format!("optimizer.first.{s}"), vector(v)));
            }
            for (s, v) in t.optimizer.second.iter().enumerate() {
                out.push((format!("optimizer.second.{s}"), vector(v)));
            }
        }
        out
    }

    /// `MSCK`: magic, version, length-prefixed JSON header (configs, training
    /// progress, tensor names), then the named tensors in header order.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let tensors = self.named_tensors();
        let header = Header {
            config: self.model.config.clone(),
            rng_seed: self.model.rng_seed,
            train: self.train.as_ref().map(|t| TrainHeader {
                config: t.config.clone(),
                epochs_done: t.epochs_done,
                loss_curve: t.loss_curve.clone(),
                optimizer: t.optimizer.kind,
                step: t.optimizer.step,
            }),
            tensors: tensors.iter().map(|(n, _)| n.clone()).collect(),
        };
        codec::write_magic(w, MAGIC, VERSION)?;
        codec::write_json_block(w, &header)?;
        for (_, t) in &tensors {
            t.write_to(w)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut &bytes[..])
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        codec::read_magic(r, MAGIC, FORMAT, VERSION)?;
        let header: Header = codec::read_json_block(r, FORMAT)?;
        header.config.validate()?;
        let mut tensors = std::collections::HashMap::new();
        for name in &header.tensors {
            tensors.insert(name.clone(), Tensor::read_from(r)?);
        }
        codec::expect_eof(r, FORMAT)?;
        let mut take = |name: String| {
            tensors
                .remove(&name)
                .ok_or_else(|| Error::format(FORMAT, format!("missing tensor {name}")))
        };

        let config = header.config;
        let layers = config.layers();
        let channels = config.channel_chain();
        let k = config.kernel_size;
        let mut encoder = Vec::with_capacity(layers);
        for l in 0..layers {
            let w = take(format!("encoder.{l}.weights"))?;
            if w.shape() != [k, k, channels[l], channels[l + 1]] {
                return Err(Error::format(FORMAT, format!("encoder {l} has shape {:?}", w.shape())));
            }
            let b = take(format!("encoder.{l}.bias"))?.into_data();
            encoder.push(ConvKernel::new(w, b).map_err(|e| Error::format(FORMAT, e.to_string()))?);
        }
        let mut decoder_biases = Vec::with_capacity(layers);
        let mut decoder_weights = Vec::new();
        for i in 0..layers {
            let j = layers - 1 - i;
            if !config.tied_weights {
                let w = take(format!("decoder.{i}.weights"))?;
                if w.shape() != [k, k, channels[j], channels[j + 1]] {
                    return Err(Error::format(FORMAT, format!("decoder {i} has shape {:?}", w.shape())));
                }
                decoder_weights.push(w);
            }
            let b = take(format!("decoder.{i}.bias"))?.into_data();
            if b.len() != channels[j] {
                return Err(Error::format(FORMAT, format!("decoder {i} bias has {} entries", b.len())));
            }
            decoder_biases.push(b);
        }
        let model = CaeModel {
            decoder_weights: (!config.tied_weights).then_some(decoder_weights),
            config,
            encoder,
            decoder_biases,
            rng_seed: header.rng_seed,
        };
        let slots = model.parameters().len();
        let train = match header.train {
            None => None,
            Some(t) => {
                let first = (0..slots)
                    .map(|s| take(format!("optimizer.first.{s}")).map(Tensor::into_data))
                    .collect::<Result<Vec<_>>>()?;
                let second = match t.optimizer {
                    OptimizerKind::SgdMomentum => Vec::new(),
                    OptimizerKind::Adam => (0..slots)
                        .map(|s| take(format!("optimizer.second.{s}")).map(Tensor::into_data))
                        .collect::<Result<Vec<_>>>()?,
                };
                Some(TrainState {
                    config: t.config,
                    epochs_done: t.epochs_done,
                    loss_curve: t.loss_curve,
                    optimizer: OptimizerState {
                        kind: t.optimizer,
                        step: t.step,
                        first,
                        second,
                    },
                })
            }
        };
        Ok(Self { model, train })
    }
}

fn vector(v: &[f32]) -> Tensor {
    // zero-length vectors cannot occur: every layer has at least one channel
    Tensor::from_parts(vec![v.len()], v.to_vec()).expect("non-empty vector")
}

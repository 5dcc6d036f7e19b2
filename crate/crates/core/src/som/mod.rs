//! Kohonen self-organizing maps over urban vectors.
//!
//! A strip orders clusters along one axis so that neighbouring indices hold
//! similar prototypes; a grid lays them out as a 2D spectrum.

mod ramp;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cae::UrbanVector;
use crate::codec;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MSOM";
const VERSION: u16 = 1;
const FORMAT: &str = "som model";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SomTopology {
    Strip { nodes: usize },
    Grid { rows: usize, cols: usize },
}

impl SomTopology {
    pub fn node_count(self) -> usize {
        match self {
            SomTopology::Strip { nodes } => nodes,
            SomTopology::Grid { rows, cols } => rows * cols,
        }
    }

    /// `(row, col)` of a node; strips are a single row.
    pub fn coords(self, node: usize) -> (usize, usize) {
        match self {
            SomTopology::Strip { .. } => (0, node),
            SomTopology::Grid { cols, .. } => (node / cols, node % cols),
        }
    }

    fn longest_side(self) -> usize {
        match self {
            SomTopology::Strip { nodes } => nodes,
            SomTopology::Grid { rows, cols } => rows.max(cols),
        }
    }

    fn grid_dist2(self, a: usize, b: usize) -> f64 {
        let (ra, ca) = self.coords(a);
        let (rb, cb) = self.coords(b);
        let dr = ra as f64 - rb as f64;
        let dc = ca as f64 - cb as f64;
        dr * dr + dc * dc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SomMode {
    /// One update per sample, in a seeded shuffled order.
    Online,
    /// One neighbourhood-weighted mean per epoch.
    Batch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SomConfig {
    pub topology: SomTopology,
    pub epochs: usize,
    /// Neighbourhood width at the start; half the longest side when absent.
    #[serde(default)]
    pub initial_radius: Option<f32>,
    #[serde(default = "default_final_radius")]
    pub final_radius: f32,
    #[serde(default = "default_initial_lr")]
    pub initial_lr: f32,
    #[serde(default = "default_final_lr")]
    pub final_lr: f32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: SomMode,
}

fn default_final_radius() -> f32 {
    1.0
}
fn default_initial_lr() -> f32 {
    0.5
}
fn default_final_lr() -> f32 {
    0.01
}
fn default_mode() -> SomMode {
    SomMode::Online
}

impl SomConfig {
    pub fn strip(nodes: usize, epochs: usize, seed: u64) -> Self {
        Self::with_topology(SomTopology::Strip { nodes }, epochs, seed)
    }

    pub fn grid(rows: usize, cols: usize, epochs: usize, seed: u64) -> Self {
        Self::with_topology(SomTopology::Grid { rows, cols }, epochs, seed)
    }

    fn with_topology(topology: SomTopology, epochs: usize, seed: u64) -> Self {
        Self {
            topology,
            epochs,
            initial_radius: None,
            final_radius: default_final_radius(),
            initial_lr: default_initial_lr(),
            final_lr: default_final_lr(),
            seed,
            mode: default_mode(),
        }
    }

    pub fn effective_initial_radius(&self) -> f32 {
        self.initial_radius
            .unwrap_or((self.topology.longest_side() as f32 / 2.0).max(self.final_radius))
    }

    /// Checks the settings for training, which needs at least two nodes.
    pub fn validate(&self) -> Result<()> {
        if self.topology.node_count() < 2 {
            return Err(Error::Config("a SOM needs at least 2 nodes".into()));
        }
        self.validate_schedule()
    }

    fn validate_schedule(&self) -> Result<()> {
        if self.topology.node_count() == 0 {
            return Err(Error::Config("a SOM needs at least one node".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("SOM epochs must be at least 1".into()));
        }
        let r0 = self.effective_initial_radius();
        let ok = |a: f32, b: f32| a.is_finite() && b > 0.0 && a >= b;
        if !ok(r0, self.final_radius) {
            return Err(Error::Config(format!(
                "radii must be positive with initial >= final, got {r0} and {}",
                self.final_radius
            )));
        }
        if !ok(self.initial_lr, self.final_lr) {
            return Err(Error::Config(format!(
                "learning rates must be positive with initial >= final, got {} and {}",
                self.initial_lr, self.final_lr
            )));
        }
        Ok(())
    }

    /// Value of an exponential schedule from `start` to `end` at `frac` in [0, 1].
    fn decay(start: f32, end: f32, frac: f64) -> f64 {
        let (s, e) = (start as f64, end as f64);
        s * (e / s).powf(frac)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SomModel {
    pub config: SomConfig,
    dim: usize,
    codebook: Vec<f32>,
}

fn dist2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

fn check_dims(vectors: &[UrbanVector], dim: usize) -> Result<()> {
    match vectors.iter().find(|v| v.values.len() != dim) {
        Some(v) => Err(Error::Shape(format!(
            "vector '{}' has length {}, expected {dim}",
            v.place_id,
            v.values.len()
        ))),
        None => Ok(()),
    }
}

/// Trains a map; see [`train_som_traced`] for the per-epoch error curve.
pub fn train_som(vectors: &[UrbanVector], config: &SomConfig) -> Result<SomModel> {
    train_som_traced(vectors, config).map(|(m, _)| m)
}

/// Trains a map and returns the quantization error after every epoch.
pub fn train_som_traced(vectors: &[UrbanVector], config: &SomConfig) -> Result<(SomModel, Vec<f64>)> {
    config.validate()?;
    let dim = vectors
        .first()
        .map(|v| v.values.len())
        .ok_or_else(|| Error::Argument("cannot train a SOM on no vectors".into()))?;
    check_dims(vectors, dim)?;
    let nodes = config.topology.node_count();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let rows: Vec<usize> = if nodes <= vectors.len() {
        index::sample(&mut rng, vectors.len(), nodes).into_vec()
    } else {
        (0..nodes).map(|_| rng.gen_range(0..vectors.len())).collect()
    };
    let mut codebook = Vec::with_capacity(nodes * dim);
    for r in rows {
        codebook.extend_from_slice(&vectors[r].values);
    }
    let mut model = SomModel {
        config: config.clone(),
        dim,
        codebook,
    };

    let r0 = config.effective_initial_radius();
    let epochs = config.epochs;
    let mut qe = Vec::with_capacity(epochs);
    match config.mode {
        SomMode::Online => {
            let total = (epochs * vectors.len()).max(2) - 1;
            let mut step = 0usize;
            let mut order: Vec<usize> = (0..vectors.len()).collect();
            for epoch in 0..epochs {
                let mut erng = ChaCha8Rng::seed_from_u64(config.seed);
                erng.set_stream(epoch as u64 + 1);
                order.shuffle(&mut erng);
                for &i in &order {
                    let frac = step as f64 / total as f64;
                    let sigma = SomConfig::decay(r0, config.final_radius, frac);
                    let lr = SomConfig::decay(config.initial_lr, config.final_lr, frac);
                    model.online_update(&vectors[i].values, sigma, lr);
                    step += 1;
                }
                qe.push(model.quantization_error(vectors)?);
            }
        }
        SomMode::Batch => {
            for epoch in 0..epochs {
                let frac = epoch as f64 / (epochs.max(2) - 1) as f64;
                let sigma = SomConfig::decay(r0, config.final_radius, frac);
                model.batch_update(vectors, sigma);
                qe.push(model.quantization_error(vectors)?);
            }
        }
    }
    Ok((model, qe))
}

impl SomModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node_count(&self) -> usize {
        self.config.topology.node_count()
    }

    pub fn topology(&self) -> SomTopology {
        self.config.topology
    }

    pub fn codebook(&self) -> &[f32] {
        &self.codebook
    }

    pub fn row(&self, node: usize) -> &[f32] {
        &self.codebook[node * self.dim..(node + 1) * self.dim]
    }

    pub fn grid_coords(&self, node: usize) -> (usize, usize) {
        self.config.topology.coords(node)
    }

    /// Builds a model from an explicit codebook (row-major, one row per
    /// node). Unlike training, a single node is allowed here.
    pub fn from_codebook(config: SomConfig, dim: usize, codebook: Vec<f32>) -> Result<Self> {
        config.validate_schedule()?;
        if dim == 0 || codebook.len() != config.topology.node_count() * dim {
            return Err(Error::Shape(format!(
                "codebook of {} values does not hold {} rows of {dim}",
                codebook.len(),
                config.topology.node_count()
            )));
        }
        Ok(Self { config, dim, codebook })
    }

    fn bmu(&self, v: &[f32]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for n in 0..self.node_count() {
            let d = dist2(v, self.row(n));
            if d < best.1 {
                best = (n, d);
            }
        }
        best
    }

    /// Best-matching node; ties go to the lowest index.
    pub fn assign(&self, v: &[f32]) -> Result<usize> {
        if v.len() != self.dim {
            return Err(Error::Shape(format!(
                "vector has length {}, SOM dimension is {}",
                v.len(),
                self.dim
            )));
        }
        Ok(self.bmu(v).0)
    }

    /// Mean Euclidean distance from each vector to its best-matching node.
    pub fn quantization_error(&self, vectors: &[UrbanVector]) -> Result<f64> {
        check_dims(vectors, self.dim)?;
        if vectors.is_empty() {
            return Ok(0.0);
        }
        let sum: f64 = vectors.iter().map(|v| self.bmu(&v.values).1.sqrt()).sum();
        Ok(sum / vectors.len() as f64)
    }

    fn online_update(&mut self, x: &[f32], sigma: f64, lr: f64) {
        let (bmu, _) = self.bmu(x);
        let topo = self.config.topology;
        let denom = 2.0 * sigma * sigma;
        for n in 0..self.node_count() {
            let h = (-topo.grid_dist2(n, bmu) / denom).exp() * lr;
            if h < 1e-12 {
                continue;
            }
            let row = &mut self.codebook[n * self.dim..(n + 1) * self.dim];
            for (w, &xv) in row.iter_mut().zip(x) {
                *w = (*w as f64 + h * (xv as f64 - *w as f64)) as f32;
            }
        }
    }

    fn batch_update(&mut self, vectors: &[UrbanVector], sigma: f64) {
        let nodes = self.node_count();
        let topo = self.config.topology;
        // accumulate member sums per BMU, then smear them over the grid
        let mut sums = vec![0f64; nodes * self.dim];
        let mut counts = vec![0f64; nodes];
        for v in vectors {
            let b = self.bmu(&v.values).0;
            counts[b] += 1.0;
            for (s, &x) in sums[b * self.dim..(b + 1) * self.dim].iter_mut().zip(&v.values) {
                *s += x as f64;
            }
        }
        let denom = 2.0 * sigma * sigma;
        for n in 0..nodes {
            let mut num = vec![0f64; self.dim];
            let mut weight = 0.0;
            for b in (0..nodes).filter(|&b| counts[b] > 0.0) {
                let h = (-topo.grid_dist2(n, b) / denom).exp();
                weight += h * counts[b];
                for (a, &s) in num.iter_mut().zip(&sums[b * self.dim..(b + 1) * self.dim]) {
                    *a += h * s;
                }
            }
            if weight > 0.0 {
                for (w, a) in self.codebook[n * self.dim..(n + 1) * self.dim].iter_mut().zip(num) {
                    *w = (a / weight) as f32;
                }
            }
        }
    }

    /// Colour of a strip node: node 0 is the blue end, the last node the red end.
    pub fn color(&self, node: usize) -> Result<[u8; 3]> {
        let n = match self.config.topology {
            SomTopology::Strip { nodes } if nodes >= 2 => nodes,
            SomTopology::Strip { .. } => return Ok(ramp_color(0.0)),
            SomTopology::Grid { .. } => {
                return Err(Error::Argument("colour maps are defined for strip SOMs only".into()))
            }
        };
        if node >= n {
            return Err(Error::Argument(format!("node {node} out of range 0..{n}")));
        }
        Ok(ramp_color(node as f64 / (n - 1) as f64))
    }

    pub fn color_map(&self) -> Result<Vec<[u8; 3]>> {
        (0..self.node_count()).map(|n| self.color(n)).collect()
    }

    /// `MSOM`: magic, version, JSON block `{config, dim}`, codebook f32s.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        codec::write_magic(w, MAGIC, VERSION)?;
        codec::write_json_block(
            w,
            &Header {
                config: self.config.clone(),
                dim: self.dim,
            },
        )?;
        codec::write_f32_slice(w, &self.codebook)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        codec::read_magic(r, MAGIC, FORMAT, VERSION)?;
        let h: Header = codec::read_json_block(r, FORMAT)?;
        let len = h.config.topology.node_count().saturating_mul(h.dim);
        let codebook = codec::read_f32_vec(r, len, FORMAT)?;
        codec::expect_eof(r, FORMAT)?;
        Self::from_codebook(h.config, h.dim, codebook).map_err(|e| Error::format(FORMAT, e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut &bytes[..])
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: SomConfig,
    dim: usize,
}

/// Ramp lookup at `t` in [0, 1], rounded to the nearest of 256 entries.
pub fn ramp_color(t: f64) -> [u8; 3] {
    ramp::RAMP[(t.clamp(0.0, 1.0) * 255.0).round() as usize]
}

pub fn color_hex(c: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Which cluster, if any, to set aside as "no spatial information".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DropPolicy {
    #[default]
    Keep,
    /// Node 0.
    FirstNode,
    /// The node whose prototype has the smallest norm.
    EmptiestNode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    /// Every retained place and its node.
    pub assignments: BTreeMap<String, usize>,
    /// Retained members per node; the dropped node counts zero.
    pub histogram: Vec<u64>,
    pub dropped_first_cluster: bool,
    pub dropped_node: Option<usize>,
    /// Places assigned to the dropped node, sorted.
    pub dropped: Vec<String>,
}

impl ClusterReport {
    pub fn total(&self) -> usize {
        self.assignments.len() + self.dropped.len()
    }

    pub fn node_of(&self, place_id: &str) -> Option<usize> {
        self.assignments.get(place_id).copied()
    }
}

pub fn cluster_report(model: &SomModel, vectors: &[UrbanVector], drop: DropPolicy) -> Result<ClusterReport> {
    check_dims(vectors, model.dim)?;
    let dropped_node = match drop {
        DropPolicy::Keep => None,
        DropPolicy::FirstNode => Some(0),
        DropPolicy::EmptiestNode => (0..model.node_count()).min_by(|&a, &b| {
            let na: f64 = model.row(a).iter().map(|&x| x as f64 * x as f64).sum();
            let nb: f64 = model.row(b).iter().map(|&x| x as f64 * x as f64).sum();
            na.total_cmp(&nb).then(a.cmp(&b))
        }),
    };
    let mut assignments = BTreeMap::new();
    let mut histogram = vec![0u64; model.node_count()];
    let mut dropped = Vec::new();
    for v in vectors {
        let node = model.bmu(&v.values).0;
        if Some(node) == dropped_node {
            dropped.push(v.place_id.clone());
        } else {
            histogram[node] += 1;
            if assignments.insert(v.place_id.clone(), node).is_some() {
                return Err(Error::Argument(format!("duplicate place id '{}'", v.place_id)));
            }
        }
    }
    dropped.sort();
    if dropped.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Argument("duplicate place id among dropped places".into()));
    }
    Ok(ClusterReport {
        assignments,
        histogram,
        dropped_first_cluster: dropped_node.is_some(),
        dropped_node,
        dropped,
    })
}

/// Members of `node` with their distance to its prototype, nearest first
/// (ties by place id).
pub fn cluster_members<'a>(
    model: &SomModel,
    report: &'a ClusterReport,
    vectors: &BTreeMap<&str, &[f32]>,
    node: usize,
) -> Result<Vec<(&'a str, f64)>> {
    if node >= model.node_count() {
        return Err(Error::Argument(format!("node {node} out of range 0..{}", model.node_count())));
    }
    let mut out = Vec::new();
    for (id, &n) in &report.assignments {
        if n != node {
            continue;
        }
        let v = vectors
            .get(id.as_str())
            .ok_or_else(|| Error::UnknownPlaces(vec![id.clone()]))?;
        out.push((id.as_str(), dist2(v, model.row(node)).sqrt()));
    }
    out.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    Ok(out)
}

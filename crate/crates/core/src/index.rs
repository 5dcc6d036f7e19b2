//! Exact Euclidean nearest-neighbour search over urban vectors.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::cae::UrbanVector;
use crate::codec;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MSVX";
const VERSION: u16 = 1;
const FORMAT: &str = "vector index";
/// Rows scanned per block; keeps the candidate block resident in cache.
const BLOCK_ROWS: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub place_id: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborResult {
    pub query_id: Option<String>,
    /// Ascending by distance, ties by place id.
    pub neighbors: Vec<Neighbor>,
}

/// Immutable brute-force index. Queries borrow it shared, so any number can
/// run concurrently.
#[derive(Debug, Clone)]
pub struct VectorIndex {
    dim: usize,
    ids: Vec<String>,
    matrix: Vec<f32>,
    norms: Vec<f64>,
    lookup: HashMap<String, usize>,
}

impl PartialEq for VectorIndex {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.ids == other.ids && self.matrix == other.matrix
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

impl VectorIndex {
    pub fn build(vectors: Vec<UrbanVector>) -> Result<Self> {
        let dim = vectors
            .first()
            .map(|v| v.values.len())
            .ok_or_else(|| Error::Argument("cannot index an empty vector set".into()))?;
        let mut ids = Vec::with_capacity(vectors.len());
        let mut matrix = Vec::with_capacity(vectors.len() * dim);
        for v in vectors {
            if v.values.len() != dim {
                return Err(Error::Shape(format!(
                    "vector '{}' has length {}, expected {dim}",
                    v.place_id,
                    v.values.len()
                )));
            }
            ids.push(v.place_id);
            matrix.extend_from_slice(&v.values);
        }
        Self::from_parts(dim, ids, matrix)
    }

    fn from_parts(dim: usize, ids: Vec<String>, matrix: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("vectors must have at least one component".into()));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("vectors contain non-finite values".into()));
        }
        let mut lookup = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if lookup.insert(id.clone(), i).is_some() {
                return Err(Error::Argument(format!("duplicate place id '{id}'")));
            }
        }
        let norms = matrix.chunks_exact(dim).map(|r| dot(r, r)).collect();
        Ok(Self {
            dim,
            ids,
            matrix,
            norms,
            lookup,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, place_id: &str) -> Option<&[f32]> {
        self.lookup.get(place_id).map(|&i| self.row(i))
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    /// The `k` entries closest to `query`. With `exclude` set, the entry of
    /// that id (if indexed) is skipped.
    pub fn knn(&self, query: &[f32], k: usize, exclude: Option<&str>) -> Result<NeighborResult> {
        if query.len() != self.dim {
            return Err(Error::Shape(format!(
                "query has length {}, index dimension is {}",
                query.len(),
                self.dim
            )));
        }
        let skip = exclude.and_then(|id| self.lookup.get(id).copied());
        let available = self.len() - usize::from(skip.is_some());
        if k == 0 || k > available {
            return Err(Error::Argument(format!("k must lie in 1..={available}, got {k}")));
        }
        let qn = dot(query, query);
        // best holds (squared distance, row) sorted ascending, at most k long
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        let before = |a: &(f64, usize), b: &(f64, usize)| {
            a.0.total_cmp(&b.0).then_with(|| self.ids[a.1].cmp(&self.ids[b.1]))
        };
        for start in (0..self.len()).step_by(BLOCK_ROWS) {
            let end = (start + BLOCK_ROWS).min(self.len());
            for i in start..end {
                if Some(i) == skip {
                    continue;
                }
                let d2 = (qn + self.norms[i] - 2.0 * dot(query, self.row(i))).max(0.0);
                let cand = (d2, i);
                if best.len() == k && before(&cand, &best[k - 1]).is_ge() {
                    continue;
                }
                let pos = best.partition_point(|b| before(b, &cand).is_lt());
                best.insert(pos, cand);
                best.truncate(k);
            }
        }
        Ok(NeighborResult {
            query_id: exclude.map(str::to_owned),
            neighbors: best
                .into_iter()
                .map(|(d2, i)| Neighbor {
                    place_id: self.ids[i].clone(),
                    distance: d2.sqrt(),
                })
                .collect(),
        })
    }

    /// Neighbours of an indexed place, optionally excluding the place itself.
    pub fn knn_by_id(&self, place_id: &str, k: usize, exclude_self: bool) -> Result<NeighborResult> {
        let query = self
            .vector(place_id)
            .ok_or_else(|| Error::UnknownPlaces(vec![place_id.to_owned()]))?;
        let mut res = self.knn(query, k, exclude_self.then_some(place_id))?;
        res.query_id = Some(place_id.to_owned());
        Ok(res)
    }

    pub fn to_vectors(&self) -> Vec<UrbanVector> {
        (0..self.len())
            .map(|i| UrbanVector {
                place_id: self.ids[i].clone(),
                values: self.row(i).to_vec(),
            })
            .collect()
    }

    /// `MSVX`: magic, version, dim u32, count u64, length-prefixed ids, then
    /// the row-major f32 matrix.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        codec::write_magic(w, MAGIC, VERSION)?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for id in &self.ids {
            codec::write_str(w, id)?;
        }
        codec::write_f32_slice(w, &self.matrix)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        codec::read_magic(r, MAGIC, FORMAT, VERSION)?;
        let dim = codec::read_u32(r, FORMAT)? as usize;
        let count = codec::read_u64(r, FORMAT)? as usize;
        let ids = (0..count)
            .map(|_| codec::read_str(r, FORMAT))
            .collect::<Result<Vec<_>>>()?;
        let len = count
            .checked_mul(dim)
            .ok_or_else(|| Error::format(FORMAT, "matrix size overflows"))?;
        let matrix = codec::read_f32_vec(r, len, FORMAT)?;
        codec::expect_eof(r, FORMAT)?;
        if count == 0 {
            return Err(Error::format(FORMAT, "index holds no vectors"));
        }
        Self::from_parts(dim, ids, matrix).map_err(|e| Error::format(FORMAT, e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut &bytes[..])
    }
}

//! Similarity-threshold graphs over SOM prototypes and their filtration.

use std::fmt::Write as _;

use quick_xml::events::Event;
use quick_xml::Reader;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::som::{color_hex, ClusterReport, SomModel, SomTopology};

/// Pairwise similarities `1 - d(i, j) / d_max`, with `d_max` the largest
/// pairwise Euclidean distance.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Edges `(i, j, sim)` with `i < j` and `sim > threshold`, in row order.
    pub fn edges_above(&self, threshold: f64) -> Vec<Edge> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                let s = self.get(i, j);
                if s > threshold {
                    out.push(Edge {
                        source: i,
                        target: j,
                        similarity: s,
                    });
                }
            }
        }
        out
    }
}

pub fn normalized_similarity(rows: &[&[f32]]) -> Result<SimilarityMatrix> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::Degenerate("similarity needs at least 2 rows".into()));
    }
    let dim = rows[0].len();
    if let Some(r) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::Shape(format!("row of length {} among rows of {dim}", r.len())));
    }
    let mut dist = vec![0f64; n * n];
    let mut dmax = 0f64;
    for i in 0..n {
        for j in i + 1..n {
            let d = rows[i]
                .iter()
                .zip(rows[j])
                .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            dist[i * n + j] = d;
            dist[j * n + i] = d;
            dmax = dmax.max(d);
        }
    }
    if dmax == 0.0 {
        return Err(Error::Degenerate("all rows are identical".into()));
    }
    let values = dist.into_iter().map(|d| 1.0 - d / dmax).collect();
    Ok(SimilarityMatrix { n, values })
}

pub fn codebook_similarity(model: &SomModel) -> Result<SimilarityMatrix> {
    let rows: Vec<&[f32]> = (0..model.node_count()).map(|i| model.row(i)).collect();
    normalized_similarity(&rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityGraph {
    pub node_count: usize,
    pub node_sizes: Vec<u64>,
    /// `#rrggbb` per node for strip maps; absent for grids.
    pub node_colors: Option<Vec<String>>,
    pub edges: Vec<Edge>,
    pub threshold: f64,
}

fn check_threshold(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::Argument(format!("threshold {t} outside [0, 1]")))
    }
}

/// Graph whose edges join prototypes more similar than `threshold`
/// (strictly). Node sizes come from the report's histogram.
pub fn build_graph(model: &SomModel, report: &ClusterReport, threshold: f64) -> Result<SimilarityGraph> {
    check_threshold(threshold)?;
    if report.histogram.len() != model.node_count() {
        return Err(Error::Shape(format!(
            "report has {} nodes, model has {}",
            report.histogram.len(),
            model.node_count()
        )));
    }
    let sim = codebook_similarity(model)?;
    let node_colors = match model.topology() {
        SomTopology::Strip { .. } => Some(model.color_map()?.into_iter().map(color_hex).collect()),
        SomTopology::Grid { .. } => None,
    };
    Ok(SimilarityGraph {
        node_count: model.node_count(),
        node_sizes: report.histogram.clone(),
        node_colors,
        edges: sim.edges_above(threshold),
        threshold,
    })
}

struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return false;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub threshold: f64,
    pub edge_count: usize,
    pub component_count: usize,
    pub largest_component: usize,
    /// Independent cycles: edges - nodes + components.
    pub cycle_rank: usize,
}

pub fn graph_stats(node_count: usize, edges: &[Edge], threshold: f64) -> GraphStats {
    let mut uf = UnionFind::new(node_count);
    let mut components = node_count;
    for e in edges {
        if uf.union(e.source, e.target) {
            components -= 1;
        }
    }
    let largest = (0..node_count)
        .map(|i| {
            let r = uf.find(i);
            uf.size[r]
        })
        .max()
        .unwrap_or(0);
    GraphStats {
        threshold,
        edge_count: edges.len(),
        component_count: components,
        largest_component: largest,
        cycle_rank: edges.len() + components - node_count,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistenceSweep {
    pub node_count: usize,
    pub levels: Vec<GraphStats>,
}

/// Graph statistics at each of the ascending `thresholds`.
pub fn sweep_similarity(sim: &SimilarityMatrix, thresholds: &[f64]) -> Result<PersistenceSweep> {
    for &t in thresholds {
        check_threshold(t)?;
    }
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Argument("thresholds must be sorted ascending".into()));
    }
    let levels = thresholds
        .iter()
        .map(|&t| graph_stats(sim.len(), &sim.edges_above(t), t))
        .collect();
    Ok(PersistenceSweep {
        node_count: sim.len(),
        levels,
    })
}

pub fn sweep(model: &SomModel, thresholds: &[f64]) -> Result<PersistenceSweep> {
    sweep_similarity(&codebook_similarity(model)?, thresholds)
}

/// Parses `start:end:step` into the inclusive list of thresholds.
pub fn parse_threshold_range(range: &str) -> Result<Vec<f64>> {
    let bad = || Error::Argument(format!("threshold range '{range}' is not start:end:step"));
    let parts: Vec<f64> = range
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let [start, end, step] = parts[..] else {
        return Err(bad());
    };
    if step.is_nan() || step <= 0.0 || end < start {
        return Err(bad());
    }
    let count = ((end - start) / step + 1e-9).floor() as usize + 1;
    // rounding keeps 0.5 + 3 * 0.05 at 0.65 rather than 0.6500000000000001
    let out: Vec<f64> = (0..count)
        .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
        .collect();
    for &t in &out {
        check_threshold(t)?;
    }
    Ok(out)
}

impl SimilarityGraph {
    pub fn stats(&self) -> GraphStats {
        graph_stats(self.node_count, &self.edges, self.threshold)
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        #[derive(Serialize)]
        struct Doc<'a> {
            schema_version: u32,
            #[serde(flatten)]
            graph: &'a SimilarityGraph,
        }
        let mut out = serde_json::to_vec_pretty(&Doc {
            schema_version: 1,
            graph: self,
        })?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(bytes)?)
    }

    pub fn to_graphml(&self) -> String {
        let mut s = String::new();
        s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
        s.push_str("<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n");
        s.push_str("  <key id=\"size\" for=\"node\" attr.name=\"size\" attr.type=\"long\"/>\n");
        s.push_str("  <key id=\"color\" for=\"node\" attr.name=\"color\" attr.type=\"string\"/>\n");
        s.push_str("  <key id=\"similarity\" for=\"edge\" attr.name=\"similarity\" attr.type=\"double\"/>\n");
        let _ = writeln!(s, "  <graph id=\"G\" edgedefault=\"undirected\" threshold=\"{}\">", self.threshold);
        for i in 0..self.node_count {
            let _ = write!(s, "    <node id=\"n{i}\"><data key=\"size\">{}</data>", self.node_sizes[i]);
            if let Some(c) = &self.node_colors {
                let _ = write!(s, "<data key=\"color\">{}</data>", c[i]);
            }
            s.push_str("</node>\n");
        }
        for e in &self.edges {
            let _ = writeln!(
                s,
                "    <edge source=\"n{}\" target=\"n{}\"><data key=\"similarity\">{}</data></edge>",
                e.source, e.target, e.similarity
            );
        }
        s.push_str("  </graph>\n</graphml>\n");
        s
    }

    /// Reads back what [`Self::to_graphml`] writes.
    pub fn from_graphml(text: &str) -> Result<Self> {
        let mut reader = Reader::from_str(text);
        let xml_err = |r: &Reader<&[u8]>, m: String| Error::Xml {
            offset: r.buffer_position(),
            message: m,
        };
        let mut threshold = None;
        let mut sizes = Vec::new();
        let mut colors = Vec::new();
        let mut edges: Vec<Edge> = Vec::new();
        let mut key: Option<String> = None;
        let mut in_edge = false;
        let node_index = |v: &str| v.strip_prefix('n').and_then(|n| n.parse::<usize>().ok());
        loop {
            let ev = reader.read_event().map_err(|e| xml_err(&reader, e.to_string()))?;
            match ev {
                Event::Start(e) | Event::Empty(e) => {
                    let attr = |name: &str| -> Option<String> {
                        e.attributes()
                            .flatten()
                            .find(|a| a.key.as_ref() == name.as_bytes())
                            .and_then(|a| a.unescape_value().ok().map(|v| v.into_owned()))
                    };
                    match e.name().as_ref() {
                        b"graph" => {
                            threshold = attr("threshold").and_then(|t| t.parse::<f64>().ok());
                        }
                        b"node" => {
                            let id = attr("id").and_then(|v| node_index(&v));
                            if id != Some(sizes.len()) {
                                return Err(xml_err(&reader, "nodes must be n0, n1, ... in order".into()));
                            }
                            sizes.push(0);
                            in_edge = false;
                        }
                        b"edge" => {
                            let (s, t) = (attr("source"), attr("target"));
                            match (s.as_deref().and_then(node_index), t.as_deref().and_then(node_index)) {
                                (Some(source), Some(target)) => edges.push(Edge {
                                    source,
                                    target,
                                    similarity: f64::NAN,
                                }),
                                _ => return Err(xml_err(&reader, "edge with bad endpoints".into())),
                            }
                            in_edge = true;
                        }
                        b"data" => key = attr("key"),
                        _ => {}
                    }
                }
                Event::Text(t) => {
                    let Some(k) = key.as_deref() else { continue };
                    let v = t.unescape().map_err(|e| xml_err(&reader, e.to_string()))?;
                    let bad = |r: &Reader<&[u8]>| xml_err(r, format!("bad {k} value '{v}'"));
                    match (k, in_edge) {
                        ("size", false) => *sizes.last_mut().ok_or_else(|| bad(&reader))? = v.parse().map_err(|_| bad(&reader))?,
                        ("color", false) => colors.push(v.into_owned()),
                        ("similarity", true) => {
                            edges.last_mut().ok_or_else(|| bad(&reader))?.similarity =
                                v.parse().map_err(|_| bad(&reader))?
                        }
                        _ => {}
                    }
                }
                Event::End(e) if e.name().as_ref() == b"data" => key = None,
                Event::Eof => break,
                _ => {}
            }
        }
        let threshold = threshold.ok_or_else(|| Error::Xml {
            offset: 0,
            message: "graph lacks a threshold attribute".into(),
        })?;
        let node_colors = match colors.len() {
            0 => None,
            n if n == sizes.len() => Some(colors),
            _ => return Err(Error::Xml { offset: 0, message: "some nodes lack colours".into() }),
        };
        if edges.iter().any(|e| e.similarity.is_nan() || e.target >= sizes.len()) {
            return Err(Error::Xml { offset: 0, message: "incomplete edge".into() });
        }
        Ok(Self {
            node_count: sizes.len(),
            node_sizes: sizes,
            node_colors,
            edges,
            threshold,
        })
    }
}

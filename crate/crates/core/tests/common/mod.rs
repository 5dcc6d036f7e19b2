//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

pub mod cae_ref;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use urbanform::cae::UrbanVector;
use urbanform::som::SomModel;

pub fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<UrbanVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| UrbanVector {
            place_id: format!("p{i:05}"),
            values: (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
        })
        .collect()
}

pub fn euclid(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>().sqrt()
}

/// Full sort by (distance, id); the reference for nearest-neighbour queries.
pub fn brute_knn(data: &[UrbanVector], q: &[f32], k: usize, exclude: Option<&str>) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = data
        .iter()
        .filter(|v| Some(v.place_id.as_str()) != exclude)
        .map(|v| (v.place_id.clone(), euclid(q, &v.values)))
        .collect();
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Points along a smooth curve in `dim` dimensions parameterised by
/// `t ∈ [0, 1]`, with small isotropic noise. Returns `(vectors, t)`.
pub fn curve_data(n: usize, dim: usize, seed: u64) -> (Vec<UrbanVector>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs: Vec<Vec<f64>> = (0..3).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let mut ts = Vec::new();
    let vs = (0..n)
        .map(|i| {
            let t: f64 = rng.gen();
            ts.push(t);
            let values = (0..dim)
                .map(|j| {
                    let base = 4.0 * t * dirs[0][j] + (3.0 * t).sin() * dirs[1][j] + t * t * dirs[2][j];
                    (base + rng.gen_range(-0.02..0.02)) as f32
                })
                .collect();
            UrbanVector { place_id: format!("c{i:04}"), values }
        })
        .collect();
    (vs, ts)
}

/// Position of each strip node along the data's curve: the mean parameter
/// of the training points assigned to it (nodes without points are skipped).
pub fn node_positions(model: &SomModel, data: &[UrbanVector], ts: &[f64]) -> Vec<f64> {
    let mut sum = vec![0.0; model.node_count()];
    let mut cnt = vec![0usize; model.node_count()];
    for (v, &t) in data.iter().zip(ts) {
        let n = model.assign(&v.values).unwrap();
        sum[n] += t;
        cnt[n] += 1;
    }
    (0..sum.len()).filter(|&i| cnt[i] > 0).map(|i| sum[i] / cnt[i] as f64).collect()
}

/// Fraction of adjacent pairs that step against the dominant direction.
pub fn inversion_fraction(seq: &[f64]) -> f64 {
    let steps = seq.len().saturating_sub(1);
    if steps == 0 {
        return 0.0;
    }
    let up = seq.windows(2).filter(|w| w[1] > w[0]).count();
    let down = seq.windows(2).filter(|w| w[1] < w[0]).count();
    up.min(down) as f64 / steps as f64
}

/// Mean distance between strip-adjacent prototypes and over all pairs.
pub fn adjacent_and_random_distance(model: &SomModel) -> (f64, f64) {
    let n = model.node_count();
    let adj = (0..n - 1).map(|i| euclid(model.row(i), model.row(i + 1))).sum::<f64>() / (n - 1) as f64;
    let mut all = 0.0;
    let mut pairs = 0;
    for i in 0..n {
        for j in i + 1..n {
            all += euclid(model.row(i), model.row(j));
            pairs += 1;
        }
    }
    (adj, all / pairs as f64)
}

/// Largest share of `hist` mass inside any window of `width` consecutive bins.
pub fn best_window_fraction(hist: &[u64], width: usize) -> f64 {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let best = (0..=hist.len() - width).map(|s| hist[s..s + width].iter().sum::<u64>()).max().unwrap();
    best as f64 / total as f64
}

/// Edge count, component count and cycle rank of the graph joining rows
/// whose similarity `1 - d / d_max` exceeds `t`, by explicit adjacency
/// matrix and depth-first search.
pub fn graph_oracle(rows: &[Vec<f32>], t: f64) -> (usize, usize, usize) {
    let n = rows.len();
    let mut d = vec![vec![0.0; n]; n];
    let mut dmax = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            d[i][j] = euclid(&rows[i], &rows[j]);
            dmax = dmax.max(d[i][j]);
        }
    }
    let adj: Vec<Vec<bool>> = (0..n).map(|i| (0..n).map(|j| i != j && 1.0 - d[i][j] / dmax > t).collect()).collect();
    let edges = (0..n).map(|i| (i + 1..n).filter(|&j| adj[i][j]).count()).sum::<usize>();
    let mut seen = vec![false; n];
    let mut comps = 0;
    for s in 0..n {
        if seen[s] {
            continue;
        }
        comps += 1;
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                if adj[u][v] && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
    }
    (edges, comps, edges + comps - n)
}

/// `n` prototypes evenly spaced on a unit circle.
pub fn ring(n: usize) -> Vec<Vec<f32>> {
    (0..n)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            vec![a.cos() as f32, a.sin() as f32]
        })
        .collect()
}

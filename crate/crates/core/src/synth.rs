//! Small synthetic graph generators for tests and benchmarks. All arcs are
//! created with weight 0; apply [`crate::graph::assign_weights`] afterwards.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{VertexId, WeightedGraph};

fn build(n: usize, arcs: Vec<(VertexId, VertexId)>) -> WeightedGraph {
    let arcs: Vec<_> = arcs.into_iter().map(|(u, v)| (u, v, 0.0)).collect();
    WeightedGraph::from_arcs(n, &arcs).expect("generated arcs are in range")
}

/// Star with center 0 and arcs `0 -> v` for every leaf.
pub fn star(n: usize) -> WeightedGraph {
    build(n, (1..n as VertexId).map(|v| (0, v)).collect())
}

/// Directed path `0 -> 1 -> ... -> n-1`.
pub fn path(n: usize) -> WeightedGraph {
    build(n, (1..n as VertexId).map(|v| (v - 1, v)).collect())
}

/// `m` distinct random arcs without self-loops (fewer if the graph is too
/// small to hold `m`).
pub fn gnm(n: usize, m: usize, seed: u64) -> WeightedGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cap = n.saturating_mul(n.saturating_sub(1));
    let target = m.min(cap);
    let mut seen = std::collections::HashSet::with_capacity(target);
    let mut arcs = Vec::with_capacity(target);
    while arcs.len() < target {
        let u = rng.gen_range(0..n) as VertexId;
        let v = rng.gen_range(0..n) as VertexId;
        if u != v && seen.insert((u, v)) {
            arcs.push((u, v));
        }
    }
    build(n, arcs)
}

/// Undirected preferential attachment expanded to both arcs: each new vertex
/// attaches to `links` distinct earlier vertices chosen proportionally to
/// degree. Produces a skewed degree distribution.
pub fn preferential_attachment(n: usize, links: usize, seed: u64) -> WeightedGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let core = (links + 1).min(n);
    let mut ends: Vec<VertexId> = Vec::with_capacity(2 * n * links);
    let mut arcs = Vec::with_capacity(2 * n * links);
    for u in 0..core as VertexId {
        for v in 0..u {
            arcs.push((u, v));
            arcs.push((v, u));
            ends.extend([u, v]);
        }
    }
    let mut picks = Vec::with_capacity(links);
    for u in core as VertexId..n as VertexId {
        picks.clear();
        while picks.len() < links.min(u as usize) {
            let v = ends[rng.gen_range(0..ends.len())];
            if !picks.contains(&v) {
                picks.push(v);
            }
        }
        for &v in &picks {
            arcs.push((u, v));
            arcs.push((v, u));
            ends.extend([u, v]);
        }
    }
    build(n, arcs)
}

/// Random DAG: arc `u -> v` for `u < v` with probability `p`.
pub fn random_dag(n: usize, p: f64, seed: u64) -> WeightedGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut arcs = Vec::new();
    for u in 0..n as VertexId {
        for v in u + 1..n as VertexId {
            if rng.gen_bool(p) {
                arcs.push((u, v));
            }
        }
    }
    build(n, arcs)
}

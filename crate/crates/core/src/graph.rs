//! Edge-list ingestion, parallel-edge merging, CSR construction and edge
//! weighting.
//!
//! Edge probabilities are stored as 31-bit fixed point (`w * 2^31`, rounded),
//! so the sampling test `(X_r ^ h) < W_e` is a plain integer compare.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::sampling::{edge_hash, EdgeHash};

/// Dense vertex index inside a [`WeightedGraph`].
pub type VertexId = u32;

/// Fixed-point representation of probability 1.0.
pub const FIXED_ONE: u32 = 1 << 31;

const CACHE_MAGIC: &[u8; 8] = b"IMSKCSR1";

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("edge list is empty")]
    Empty,
    #[error("probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("invalid weight setting `{0}`")]
    WeightSpec(String),
    #[error("vertex count {0} does not fit 32-bit vertex ids")]
    TooManyVertices(usize),
    #[error("bad graph cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Converts a probability to 31-bit fixed point. Values are clamped to `[0, 1]`.
pub fn to_fixed(w: f64) -> u32 {
    let w = if w.is_nan() { 0.0 } else { w.clamp(0.0, 1.0) };
    (w * FIXED_ONE as f64).round() as u32
}

pub fn from_fixed(w: u32) -> f64 {
    w as f64 / FIXED_ONE as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RawEdge {
    pub src: u64,
    pub dst: u64,
    pub prob: Option<f64>,
}

impl RawEdge {
    pub fn new(src: u64, dst: u64) -> Self {
        Self { src, dst, prob: None }
    }

    pub fn weighted(src: u64, dst: u64, prob: f64) -> Self {
        Self { src, dst, prob: Some(prob) }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawEdgeList {
    pub edges: Vec<RawEdge>,
    pub directed: bool,
}

/// Parses a SNAP-style edge list: whitespace-separated `src dst [prob]`
/// per line, `#` starts a comment line. Undirected inputs are expanded to
/// both arcs.
pub fn parse_edge_list<R: BufRead>(reader: R, directed: bool) -> Result<RawEdgeList, GraphError> {
    let mut edges = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with('%') {
            continue;
        }
        let mut toks = trimmed.split_whitespace();
        let mut vertex = |name: &str| -> Result<u64, GraphError> {
            let tok = toks.next().ok_or_else(|| GraphError::Parse {
                line: lineno,
                msg: format!("missing {name} vertex"),
            })?;
            tok.parse::<u64>().map_err(|_| GraphError::Parse {
                line: lineno,
                msg: format!("invalid {name} vertex `{tok}`"),
            })
        };
        let src = vertex("source")?;
        let dst = vertex("target")?;
        let prob = match toks.next() {
            None => None,
            Some(tok) => {
                let p: f64 = tok.parse().map_err(|_| GraphError::Parse {
                    line: lineno,
                    msg: format!("invalid probability `{tok}`"),
                })?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(GraphError::Parse {
                        line: lineno,
                        msg: format!("probability {p} outside [0, 1]"),
                    });
                }
                Some(p)
            }
        };
        if let Some(tok) = toks.next() {
            return Err(GraphError::Parse {
                line: lineno,
                msg: format!("unexpected token `{tok}`"),
            });
        }
        edges.push(RawEdge { src, dst, prob });
        if !directed {
            edges.push(RawEdge { src: dst, dst: src, prob });
        }
    }
    if edges.is_empty() {
        return Err(GraphError::Empty);
    }
    Ok(RawEdgeList { edges, directed })
}

/// Collapses duplicate `(u, v)` arcs into one with compound probability
/// `1 - prod(1 - w_i)`.
///
/// Arcs without a probability are deduplicated structurally; in a mixed
/// group only the explicit probabilities are compounded. Output is sorted by
/// `(src, dst)` and does not depend on the input order.
pub fn merge_parallel_edges(raw: &RawEdgeList) -> RawEdgeList {
    let mut groups: BTreeMap<(u64, u64), Vec<f64>> = BTreeMap::new();
    for e in &raw.edges {
        let slot = groups.entry((e.src, e.dst)).or_default();
        if let Some(p) = e.prob {
            slot.push(p);
        }
    }
    let edges = groups
        .into_iter()
        .map(|((src, dst), mut probs)| {
            let prob = if probs.len() <= 1 {
                probs.first().copied()
            } else {
                // fixed multiplication order keeps the result permutation-invariant
                probs.sort_by(f64::total_cmp);
                let miss: f64 = probs.iter().map(|p| 1.0 - p).product();
                Some(1.0 - miss)
            };
            RawEdge { src, dst, prob }
        })
        .collect();
    RawEdgeList { edges, directed: raw.directed }
}

/// How edge probabilities are assigned before a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightSetting {
    Constant { w: f64 },
    WeightedCascade,
    Normal { mean: f64, stddev: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl fmt::Display for WeightSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightSetting::Constant { w } => write!(f, "const:{w}"),
            WeightSetting::WeightedCascade => write!(f, "wc"),
            WeightSetting::Normal { mean, stddev } => write!(f, "normal:{mean},{stddev}"),
            WeightSetting::Uniform { lo, hi } => write!(f, "uniform:{lo},{hi}"),
        }
    }
}

impl FromStr for WeightSetting {
    type Err = GraphError;

    /// Accepts `const:w`, `wc`, `normal:mean,stddev` and `uniform:lo,hi`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GraphError::WeightSpec(s.to_string());
        let (kind, args) = s.split_once(':').unwrap_or((s, ""));
        let nums: Vec<f64> = if args.is_empty() {
            Vec::new()
        } else {
            args.split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|_| bad()))
                .collect::<Result<_, _>>()?
        };
        if nums.iter().any(|x| !x.is_finite()) {
            return Err(bad());
        }
        let setting = match (kind.trim().to_ascii_lowercase().as_str(), nums.as_slice()) {
            ("const" | "constant", [w]) if (0.0..=1.0).contains(w) => {
                WeightSetting::Constant { w: *w }
            }
            ("wc", []) => WeightSetting::WeightedCascade,
            ("normal", [mean, stddev]) if *stddev >= 0.0 => WeightSetting::Normal {
                mean: *mean,
                stddev: *stddev,
            },
            ("uniform", [lo, hi]) if lo <= hi => WeightSetting::Uniform { lo: *lo, hi: *hi },
            _ => return Err(bad()),
        };
        Ok(setting)
    }
}

/// Immutable CSR graph over outgoing neighborhoods with fixed-point edge
/// probabilities. Vertex ids are dense; the original ids are kept for
/// reporting.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedGraph {
    offsets: Vec<usize>,
    targets: Vec<VertexId>,
    weights: Vec<u32>,
    hashes: Vec<EdgeHash>,
    in_degree: Vec<u32>,
    original_ids: Vec<u64>,
}

impl WeightedGraph {
    /// Builds a graph from a raw edge list: ids are compacted in increasing
    /// order of the original id, parallel arcs are merged, and arcs without
    /// a probability get weight 0.
    pub fn from_raw(raw: &RawEdgeList) -> Result<Self, GraphError> {
        if raw.edges.is_empty() {
            return Err(GraphError::Empty);
        }
        let merged = merge_parallel_edges(raw);
        let mut ids: Vec<u64> = merged.edges.iter().flat_map(|e| [e.src, e.dst]).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() > u32::MAX as usize {
            return Err(GraphError::TooManyVertices(ids.len()));
        }
        let dense = |id: u64| ids.binary_search(&id).expect("id collected above") as VertexId;
        let arcs: Vec<(VertexId, VertexId, u32)> = merged
            .edges
            .iter()
            .map(|e| (dense(e.src), dense(e.dst), to_fixed(e.prob.unwrap_or(0.0))))
            .collect();
        Self::from_fixed_arcs(ids, arcs)
    }

    /// Builds a graph over dense ids `0..n` from `(u, v, w)` arcs. Parallel
    /// arcs are merged with compound probability.
    pub fn from_arcs(n: usize, arcs: &[(VertexId, VertexId, f64)]) -> Result<Self, GraphError> {
        if n > u32::MAX as usize {
            return Err(GraphError::TooManyVertices(n));
        }
        let mut sorted: Vec<(VertexId, VertexId, f64)> = Vec::with_capacity(arcs.len());
        for &(u, v, w) in arcs {
            if !(0.0..=1.0).contains(&w) {
                return Err(GraphError::Probability(w));
            }
            if u as usize >= n || v as usize >= n {
                return Err(GraphError::Parse {
                    line: 0,
                    msg: format!("arc ({u}, {v}) outside vertex range {n}"),
                });
            }
            sorted.push((u, v, w));
        }
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then(a.2.total_cmp(&b.2)));
        let mut fixed: Vec<(VertexId, VertexId, u32)> = Vec::with_capacity(sorted.len());
        let mut i = 0;
        while i < sorted.len() {
            let (u, v, _) = sorted[i];
            let mut miss = 1.0;
            while i < sorted.len() && sorted[i].0 == u && sorted[i].1 == v {
                miss *= 1.0 - sorted[i].2;
                i += 1;
            }
            fixed.push((u, v, to_fixed(1.0 - miss)));
        }
        Self::from_fixed_arcs((0..n as u64).collect(), fixed)
    }

    /// `arcs` must be sorted by `(u, v)` without duplicates.
    fn from_fixed_arcs(
        original_ids: Vec<u64>,
        arcs: Vec<(VertexId, VertexId, u32)>,
    ) -> Result<Self, GraphError> {
        let n = original_ids.len();
        let mut offsets = vec![0usize; n + 1];
        let mut in_degree = vec![0u32; n];
        for &(u, v, _) in &arcs {
            offsets[u as usize + 1] += 1;
            in_degree[v as usize] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let targets: Vec<VertexId> = arcs.iter().map(|a| a.1).collect();
        let weights: Vec<u32> = arcs.iter().map(|a| a.2).collect();
        let hashes = arcs.iter().map(|&(u, v, _)| edge_hash(u as u64, v as u64)).collect();
        Ok(Self { offsets, targets, weights, hashes, in_degree, original_ids })
    }

    pub fn num_vertices(&self) -> usize {
        self.original_ids.len()
    }

    pub fn num_edges(&self) -> usize {
        self.targets.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn targets(&self) -> &[VertexId] {
        &self.targets
    }

    pub fn weights(&self) -> &[u32] {
        &self.weights
    }

    pub fn hashes(&self) -> &[EdgeHash] {
        &self.hashes
    }

    pub fn in_degree(&self, v: VertexId) -> u32 {
        self.in_degree[v as usize]
    }

    pub fn original_id(&self, v: VertexId) -> u64 {
        self.original_ids[v as usize]
    }

    pub fn original_ids(&self) -> &[u64] {
        &self.original_ids
    }

    /// Dense id of an original vertex id, if present.
    pub fn dense_id(&self, original: u64) -> Option<VertexId> {
        // ids are sorted for graphs built from raw lists and identity otherwise
        self.original_ids.binary_search(&original).ok().map(|i| i as VertexId)
    }

    /// Range of edge indices leaving `u`.
    pub fn edge_range(&self, u: VertexId) -> std::ops::Range<usize> {
        self.offsets[u as usize]..self.offsets[u as usize + 1]
    }

    pub fn out_neighbors(&self, u: VertexId) -> &[VertexId] {
        &self.targets[self.edge_range(u)]
    }

    pub fn out_degree(&self, u: VertexId) -> usize {
        self.edge_range(u).len()
    }

    /// All arcs as `(u, v, fixed_weight)` in CSR order.
    pub fn arcs(&self) -> impl Iterator<Item = (VertexId, VertexId, u32)> + '_ {
        (0..self.num_vertices() as VertexId).flat_map(move |u| {
            self.edge_range(u).map(move |e| (u, self.targets[e], self.weights[e]))
        })
    }

    /// Source vertex of every edge index, in CSR order.
    pub fn edge_sources(&self) -> Vec<VertexId> {
        let mut src = Vec::with_capacity(self.num_edges());
        for u in 0..self.num_vertices() {
            src.extend(std::iter::repeat_n(u as VertexId, self.offsets[u + 1] - self.offsets[u]));
        }
        src
    }

    /// Index of arc `(u, v)`, if present.
    pub fn find_edge(&self, u: VertexId, v: VertexId) -> Option<usize> {
        let range = self.edge_range(u);
        let start = range.start;
        self.targets[range].binary_search(&v).ok().map(|i| start + i)
    }

    /// Returns a copy with new fixed-point weights, one per edge in CSR order.
    pub fn with_fixed_weights(&self, weights: Vec<u32>) -> Self {
        assert_eq!(weights.len(), self.num_edges(), "one weight per edge");
        assert!(weights.iter().all(|&w| w <= FIXED_ONE), "weight above 2^31");
        Self { weights, ..self.clone() }
    }

    /// Writes the binary cache: magic, `n`, `m`, offsets, targets, weights
    /// (all little-endian), followed by the original-id block.
    pub fn write_cache<W: Write>(&self, mut out: W) -> Result<(), GraphError> {
        out.write_all(CACHE_MAGIC)?;
        out.write_all(&(self.num_vertices() as u64).to_le_bytes())?;
        out.write_all(&(self.num_edges() as u64).to_le_bytes())?;
        for &o in &self.offsets {
            out.write_all(&(o as u64).to_le_bytes())?;
        }
        for &t in &self.targets {
            out.write_all(&t.to_le_bytes())?;
        }
        for &w in &self.weights {
            out.write_all(&w.to_le_bytes())?;
        }
        for &id in &self.original_ids {
            out.write_all(&id.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_cache<R: Read>(mut input: R) -> Result<Self, GraphError> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let mut cur = CacheCursor { bytes: &bytes, pos: 0 };
        if cur.take(8)? != CACHE_MAGIC {
            return Err(GraphError::Cache("wrong magic".into()));
        }
        let n = cur.u64()? as usize;
        let m = cur.u64()? as usize;
        if n > u32::MAX as usize {
            return Err(GraphError::TooManyVertices(n));
        }
        let offsets = (0..=n).map(|_| cur.u64().map(|x| x as usize)).collect::<Result<Vec<_>, _>>()?;
        let targets = (0..m).map(|_| cur.u32()).collect::<Result<Vec<_>, _>>()?;
        let weights = (0..m).map(|_| cur.u32()).collect::<Result<Vec<_>, _>>()?;
        let original_ids = if cur.remaining() == 0 {
            (0..n as u64).collect()
        } else {
            (0..n).map(|_| cur.u64()).collect::<Result<Vec<_>, _>>()?
        };
        if cur.remaining() != 0 {
            return Err(GraphError::Cache("trailing bytes".into()));
        }
        if offsets[0] != 0 || offsets[n] != m || offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(GraphError::Cache("offsets not monotone".into()));
        }
        if targets.iter().any(|&t| t as usize >= n) || weights.iter().any(|&w| w > FIXED_ONE) {
            return Err(GraphError::Cache("arc out of range".into()));
        }
        let arcs = (0..n)
            .flat_map(|u| (offsets[u]..offsets[u + 1]).map(move |e| (u as VertexId, e)))
            .map(|(u, e)| (u, targets[e], weights[e]))
            .collect();
        Self::from_fixed_arcs(original_ids, arcs)
    }
}

struct CacheCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> CacheCursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8], GraphError> {
        let end = self.pos + len;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| GraphError::Cache("truncated".into()))?;
        self.pos = end;
        Ok(slice)
    }

    fn u64(&mut self) -> Result<u64, GraphError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, GraphError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

/// Returns a copy of `g` weighted under `setting`. Random settings draw one
/// value per edge in CSR order from a generator keyed by `seed`.
pub fn assign_weights(g: &WeightedGraph, setting: WeightSetting, seed: u64) -> WeightedGraph {
    let m = g.num_edges();
    let weights: Vec<u32> = match setting {
        WeightSetting::Constant { w } => vec![to_fixed(w); m],
        WeightSetting::WeightedCascade => g
            .targets()
            .iter()
            .map(|&v| to_fixed(1.0 / g.in_degree(v) as f64))
            .collect(),
        WeightSetting::Normal { mean, stddev } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dist = Normal::new(mean, stddev).expect("stddev validated non-negative");
            (0..m).map(|_| to_fixed(dist.sample(&mut rng))).collect()
        }
        WeightSetting::Uniform { lo, hi } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dist = Uniform::new_inclusive(lo, hi);
            (0..m).map(|_| to_fixed(dist.sample(&mut rng))).collect()
        }
    };
    g.with_fixed_weights(weights)
}

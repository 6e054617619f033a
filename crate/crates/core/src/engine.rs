//! Per-device kernels: pull-based sketch propagation along sampled edges and
//! the unified-frontier cascade that marks realized influence as visited.

use rayon::prelude::*;

use crate::graph::{VertexId, WeightedGraph};
use crate::sampling::{is_sampled, EdgeHash};
use crate::sketch::{SketchMatrix, ROW_CHUNK, VISITED};

/// Lanes per batch, mirroring a 32-wide warp.
pub const LANE_BATCH: usize = 32;

/// Iteration cap for [`simulate_to_convergence`].
pub const DEFAULT_MAX_ITERATIONS: usize = 256;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("sketches did not converge within {0} iterations")]
    NotConverged(usize),
    #[error("sketch matrix is {rows} x {width}, device graph needs {n} x {lanes}")]
    Shape { rows: usize, width: usize, n: usize, lanes: usize },
}

/// CSR over the edges a device keeps, together with the random values of
/// the simulations it owns.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviceGraph {
    device: usize,
    register_offset: u64,
    lanes: Vec<u32>,
    origins: Vec<u32>,
    offsets: Vec<usize>,
    targets: Vec<VertexId>,
    thresholds: Vec<u32>,
    hashes: Vec<EdgeHash>,
    base_edges: Vec<usize>,
}

impl DeviceGraph {
    /// Keeps every edge of `base` sampled by at least one of `lanes`.
    ///
    /// `origins[i]` is the original simulation index of lane `i` and
    /// `register_offset` the global register index of lane 0.
    pub fn from_lanes(
        base: &WeightedGraph,
        device: usize,
        lanes: Vec<u32>,
        origins: Vec<u32>,
        register_offset: u64,
    ) -> Self {
        assert_eq!(lanes.len(), origins.len());
        assert!(!lanes.is_empty(), "a device needs at least one simulation");
        let n = base.num_vertices();
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        let mut targets = Vec::new();
        let mut thresholds = Vec::new();
        let mut hashes = Vec::new();
        let mut base_edges = Vec::new();
        let (bt, bw, bh) = (base.targets(), base.weights(), base.hashes());
        for u in 0..n as VertexId {
            for e in base.edge_range(u) {
                if lanes.iter().any(|&x| is_sampled(x, bh[e], bw[e])) {
                    targets.push(bt[e]);
                    thresholds.push(bw[e]);
                    hashes.push(bh[e]);
                    base_edges.push(e);
                }
            }
            offsets.push(targets.len());
        }
        Self {
            device,
            register_offset,
            lanes,
            origins,
            offsets,
            targets,
            thresholds,
            hashes,
            base_edges,
        }
    }

    /// Single-device graph owning every simulation of `values`.
    pub fn single(base: &WeightedGraph, values: &[u32]) -> Self {
        let origins = (0..values.len() as u32).collect();
        Self::from_lanes(base, 0, values.to_vec(), origins, 0)
    }

    pub fn device(&self) -> usize {
        self.device
    }

    pub fn num_vertices(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.targets.len()
    }

    pub fn lanes(&self) -> &[u32] {
        &self.lanes
    }

    pub fn num_lanes(&self) -> usize {
        self.lanes.len()
    }

    pub fn origins(&self) -> &[u32] {
        &self.origins
    }

    pub fn register_offset(&self) -> u64 {
        self.register_offset
    }

    /// Indices into the base graph's edge arrays, in local CSR order.
    pub fn base_edges(&self) -> &[usize] {
        &self.base_edges
    }

    pub fn edge_range(&self, u: VertexId) -> std::ops::Range<usize> {
        self.offsets[u as usize]..self.offsets[u as usize + 1]
    }

    pub fn out_neighbors(&self, u: VertexId) -> &[VertexId] {
        &self.targets[self.edge_range(u)]
    }

    /// Whether local edge `e` is live in lane `lane`.
    pub fn is_sampled(&self, e: usize, lane: usize) -> bool {
        is_sampled(self.lanes[lane], self.hashes[e], self.thresholds[e])
    }

    /// Bitmask of live lanes of edge `e` within the batch starting at `first`.
    #[inline]
    fn batch_mask(&self, e: usize, first: usize) -> u32 {
        let (h, w) = (self.hashes[e], self.thresholds[e]);
        let end = (first + LANE_BATCH).min(self.lanes.len());
        let mut mask = 0u32;
        for (bit, &x) in self.lanes[first..end].iter().enumerate() {
            mask |= (is_sampled(x, h, w) as u32) << bit;
        }
        mask
    }

    fn check_shape(&self, m: &SketchMatrix) -> Result<(), EngineError> {
        if m.rows() != self.num_vertices() || m.width() != self.num_lanes() {
            return Err(EngineError::Shape {
                rows: m.rows(),
                width: m.width(),
                n: self.num_vertices(),
                lanes: self.num_lanes(),
            });
        }
        Ok(())
    }
}

/// One pull step: for every vertex `u`, non-visited register `j` and live
/// out-edge `(u, v)` in lane `j`, `M_u[j] = max(M_u[j], M_v[j])`, reading
/// neighbor rows from the pre-iteration snapshot. Returns the number of
/// registers that increased.
pub fn simulate_iteration(g: &DeviceGraph, m: &mut SketchMatrix) -> Result<usize, EngineError> {
    g.check_shape(m)?;
    let snapshot = m.as_slice().to_vec();
    Ok(pull_step(g, m, &snapshot))
}

fn pull_step(g: &DeviceGraph, m: &mut SketchMatrix, snapshot: &[i8]) -> usize {
    let width = m.width();
    m.as_mut_slice()
        .par_chunks_mut(ROW_CHUNK * width)
        .enumerate()
        .map(|(chunk, block)| {
            let mut changed = 0;
            for (i, row) in block.chunks_exact_mut(width).enumerate() {
                let u = (chunk * ROW_CHUNK + i) as VertexId;
                for e in g.edge_range(u) {
                    let v = g.targets[e] as usize;
                    let src = &snapshot[v * width..(v + 1) * width];
                    for first in (0..width).step_by(LANE_BATCH) {
                        let mut mask = g.batch_mask(e, first);
                        while mask != 0 {
                            let j = first + mask.trailing_zeros() as usize;
                            mask &= mask - 1;
                            let cur = row[j];
                            if cur != VISITED && src[j] > cur {
                                row[j] = src[j];
                            }
                        }
                    }
                }
                let old = &snapshot[u as usize * width..(u as usize + 1) * width];
                changed += row.iter().zip(old).filter(|(a, b)| a != b).count();
            }
            changed
        })
        .sum()
}

/// Repeats [`simulate_iteration`] until no register changes. Returns the
/// number of iterations run, including the final unchanged one.
pub fn simulate_to_convergence(
    g: &DeviceGraph,
    m: &mut SketchMatrix,
    max_iterations: usize,
) -> Result<usize, EngineError> {
    g.check_shape(m)?;
    let mut snapshot = m.as_slice().to_vec();
    for iteration in 1..=max_iterations {
        let changed = pull_step(g, m, &snapshot);
        log::trace!("device={} iteration={iteration} changed={changed}", g.device);
        if changed == 0 {
            return Ok(iteration);
        }
        snapshot.copy_from_slice(m.as_slice());
    }
    Err(EngineError::NotConverged(max_iterations))
}

/// Deduplicating frontier: dense traversal order plus one-hot membership.
#[derive(Clone, Debug)]
pub struct FrontierQueue {
    dense: Vec<VertexId>,
    member: Vec<bool>,
}

impl FrontierQueue {
    pub fn new(n: usize) -> Self {
        Self { dense: Vec::new(), member: vec![false; n] }
    }

    /// Inserts `v` unless already present; returns whether it was inserted.
    pub fn push(&mut self, v: VertexId) -> bool {
        let slot = &mut self.member[v as usize];
        if *slot {
            return false;
        }
        *slot = true;
        self.dense.push(v);
        true
    }

    pub fn contains(&self, v: VertexId) -> bool {
        self.member[v as usize]
    }

    pub fn as_slice(&self) -> &[VertexId] {
        &self.dense
    }

    pub fn len(&self) -> usize {
        self.dense.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dense.is_empty()
    }

    pub fn clear(&mut self) {
        for &v in &self.dense {
            self.member[v as usize] = false;
        }
        self.dense.clear();
    }

    /// Membership and dense array agree and hold no duplicates.
    pub fn is_consistent(&self) -> bool {
        let marked = self.member.iter().filter(|&&b| b).count();
        marked == self.dense.len() && self.dense.iter().all(|&v| self.member[v as usize])
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CascadeStats {
    pub levels: usize,
    pub newly_visited: u64,
    pub max_frontier: usize,
}

/// Marks everything reachable from `seed` in each lane's realized subgraph
/// as visited, traversing all lanes with one shared frontier per level.
/// Lanes in which the seed is already visited are skipped.
pub fn cascade(
    g: &DeviceGraph,
    m: &mut SketchMatrix,
    seed: VertexId,
    queue: &mut FrontierQueue,
    next: &mut FrontierQueue,
) -> Result<CascadeStats, EngineError> {
    g.check_shape(m)?;
    let width = m.width();
    let mut stats = CascadeStats::default();
    queue.clear();
    next.clear();
    let mut seeded = false;
    for reg in m.row_mut(seed as usize) {
        if *reg != VISITED {
            *reg = VISITED;
            seeded = true;
            stats.newly_visited += 1;
        }
    }
    if seeded {
        queue.push(seed);
    }
    let regs = m.as_mut_slice();
    while !queue.is_empty() {
        debug_assert!(queue.is_consistent());
        stats.levels += 1;
        stats.max_frontier = stats.max_frontier.max(queue.len());
        for &u in queue.as_slice() {
            let ubase = u as usize * width;
            for e in g.edge_range(u) {
                let v = g.targets[e];
                let vbase = v as usize * width;
                let mut activated = false;
                for first in (0..width).step_by(LANE_BATCH) {
                    let mut mask = g.batch_mask(e, first);
                    while mask != 0 {
                        let j = first + mask.trailing_zeros() as usize;
                        mask &= mask - 1;
                        if regs[ubase + j] == VISITED && regs[vbase + j] != VISITED {
                            regs[vbase + j] = VISITED;
                            activated = true;
                            stats.newly_visited += 1;
                        }
                    }
                }
                // one enqueue per vertex per level, however many lanes fired
                if activated {
                    next.push(v);
                }
            }
        }
        log::trace!("device={} level={} frontier={}", g.device, stats.levels, queue.len());
        std::mem::swap(queue, next);
        next.clear();
    }
    Ok(stats)
}

/// Number of `(vertex, lane)` pairs reached by the committed seed set.
pub fn count_visited(m: &SketchMatrix) -> u64 {
    m.count_visited()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::WeightedGraph;
    use crate::sampling::RandomVector;
    use crate::sketch::{fill_sketches, merge, RegisterHashFamily};

    fn setup(n: usize, arcs: &[(u32, u32, f64)], lanes: usize) -> (DeviceGraph, SketchMatrix) {
        let g = WeightedGraph::from_arcs(n, arcs).unwrap();
        let x = RandomVector::generate(lanes, 17).unwrap();
        let dg = DeviceGraph::single(&g, x.values());
        let mut m = SketchMatrix::zeroed(n, lanes);
        fill_sketches(&mut m, &RegisterHashFamily::default(), 0);
        (dg, m)
    }

    #[test]
    fn no_edges_no_change() {
        let (dg, mut m) = setup(4, &[], 32);
        let before = m.clone();
        assert_eq!(simulate_iteration(&dg, &mut m).unwrap(), 0);
        assert_eq!(m, before);
    }

    #[test]
    fn chain_propagates_one_hop_per_iteration() {
        let (dg, mut m) = setup(3, &[(0, 1, 1.0), (1, 2, 1.0)], 64);
        let init = m.clone();
        simulate_iteration(&dg, &mut m).unwrap();
        assert_eq!(m.row(0), merge(init.row(0), init.row(1)).unwrap().as_slice());
        assert_eq!(m.row(1), merge(init.row(1), init.row(2)).unwrap().as_slice());
        simulate_iteration(&dg, &mut m).unwrap();
        let all = merge(&merge(init.row(0), init.row(1)).unwrap(), init.row(2)).unwrap();
        assert_eq!(m.row(0), all.as_slice());
        assert_eq!(simulate_iteration(&dg, &mut m).unwrap(), 0);
    }

    #[test]
    fn visited_registers_are_never_updated() {
        let (dg, mut m) = setup(2, &[(0, 1, 1.0)], 32);
        m.row_mut(1).fill(64);
        m.row_mut(0)[5] = VISITED;
        simulate_to_convergence(&dg, &mut m, DEFAULT_MAX_ITERATIONS).unwrap();
        assert_eq!(m.row(0)[5], VISITED);
        assert_eq!(m.row(0)[4], 64);
    }

    #[test]
    fn zero_weight_converges_immediately() {
        let arcs: Vec<_> = (0..9).map(|u| (u, u + 1, 0.0)).collect();
        let (dg, mut m) = setup(10, &arcs, 32);
        assert_eq!(dg.num_edges(), 0);
        assert_eq!(simulate_to_convergence(&dg, &mut m, 8).unwrap(), 1);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let (dg, _) = setup(3, &[(0, 1, 1.0)], 32);
        let mut wrong = SketchMatrix::zeroed(3, 16);
        assert!(matches!(simulate_iteration(&dg, &mut wrong), Err(EngineError::Shape { .. })));
    }

    #[test]
    fn isolated_seed_marks_only_itself() {
        let (dg, mut m) = setup(3, &[(1, 2, 1.0)], 32);
        let (mut q, mut nq) = (FrontierQueue::new(3), FrontierQueue::new(3));
        let stats = cascade(&dg, &mut m, 0, &mut q, &mut nq).unwrap();
        assert_eq!(stats.newly_visited, 32);
        assert!(m.row(0).iter().all(|&r| r == VISITED));
        assert_eq!(count_visited(&m), 32);
        // second cascade from the same seed is a no-op
        let again = cascade(&dg, &mut m, 0, &mut q, &mut nq).unwrap();
        assert_eq!(again.newly_visited, 0);
    }

    #[test]
    fn certain_edges_visit_component() {
        let arcs = [(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0), (3, 4, 1.0)];
        let (dg, mut m) = setup(5, &arcs, 64);
        let before = count_visited(&m);
        let (mut q, mut nq) = (FrontierQueue::new(5), FrontierQueue::new(5));
        cascade(&dg, &mut m, 1, &mut q, &mut nq).unwrap();
        assert_eq!(before, 0);
        assert_eq!(count_visited(&m), 3 * 64);
        cascade(&dg, &mut m, 3, &mut q, &mut nq).unwrap();
        assert_eq!(count_visited(&m), 5 * 64);
    }

    #[test]
    fn frontier_deduplicates() {
        let mut q = FrontierQueue::new(6);
        assert!(q.push(3));
        assert!(!q.push(3));
        assert!(q.push(1));
        assert_eq!(q.as_slice(), &[3, 1]);
        assert!(q.is_consistent());
        q.clear();
        assert!(q.is_empty() && !q.contains(3) && q.is_consistent());
    }
}
